//! Raw forward/backward kernels shared by the tape operators.

use crate::error::{dim_err, Result};
use crate::real::Real;

/// Lowers `x[B, Cin, T]` to columns `[Cin·K, B·To]` for a strided
/// cross-correlation with `pad` zeros on the left.
pub(crate) fn im2col<T: Real>(
    x: &[T],
    (b, cin, t): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<T> {
    let cols_n = b * t_out;
    let mut cols = vec![T::zero(); cin * k * cols_n];
    for ci in 0..cin {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * cols_n..(ci * k + kk + 1) * cols_n];
            for bi in 0..b {
                let src = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                for to in 0..t_out {
                    let idx = (to * stride + kk) as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < t {
                        row[bi * t_out + to] = src[idx as usize];
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Real>(
    cols: &[T],
    (b, cin, t): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<T> {
    let cols_n = b * t_out;
    let mut x = vec![T::zero(); b * cin * t];
    for ci in 0..cin {
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * cols_n..(ci * k + kk + 1) * cols_n];
            for bi in 0..b {
                let dst = &mut x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                for to in 0..t_out {
                    let idx = (to * stride + kk) as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < t {
                        dst[idx as usize] = dst[idx as usize] + row[bi * t_out + to];
                    }
                }
            }
        }
    }
    x
}

/// `[C, B·L]` (channel-major columns) → `[B, C, L]`.
pub(crate) fn cols_to_bct<T: Real>(y: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * c * l];
    for ci in 0..c {
        for bi in 0..b {
            out[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                .copy_from_slice(&y[ci * b * l + bi * l..ci * b * l + (bi + 1) * l]);
        }
    }
    out
}

/// `[B, C, L]` → `[C, B·L]`.
pub(crate) fn bct_to_cols<T: Real>(x: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * c * l];
    for ci in 0..c {
        for bi in 0..b {
            out[ci * b * l + bi * l..ci * b * l + (bi + 1) * l]
                .copy_from_slice(&x[(bi * c + ci) * l..(bi * c + ci + 1) * l]);
        }
    }
    out
}

/// Strided cross-correlation `y[b,co,t] = bias[co] + Σ w[co,ci,k]·x[b,ci,t·s+k−pad]`
/// producing `t_out` frames.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Real>(
    x: &[T],
    (b, cin, t): (usize, usize, usize),
    w: &[T],
    (cout, k): (usize, usize),
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<T> {
    let cols = im2col(x, (b, cin, t), k, stride, pad, t_out);
    let mut y = vec![T::zero(); cout * b * t_out];
    T::gemm(cout, cin * k, b * t_out, w, false, &cols, false, &mut y, false);
    if let Some(bias) = bias {
        for (co, row) in y.chunks_mut(b * t_out).enumerate() {
            row.iter_mut().for_each(|v| *v = *v + bias[co]);
        }
    }
    cols_to_bct(&y, b, cout, t_out)
}

/// Transposed convolution `y[b,co,i·s+k] += w[ci,co,k]·x[b,ci,i]`, keeping the
/// first `out_len` samples. `out_len = (T−1)·s + K` is the untrimmed result;
/// `out_len = T·s` is the causal trim.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_full<T: Real>(
    x: &[T],
    (b, cin, t): (usize, usize, usize),
    w: &[T],
    (cout, k): (usize, usize),
    bias: Option<&[T]>,
    stride: usize,
    out_len: usize,
) -> Vec<T> {
    let xc = bct_to_cols(x, b, cin, t);
    // z[(co,k), (b,i)] = Σ_ci w[ci, (co,k)] · x[ci, (b,i)]
    let mut z = vec![T::zero(); cout * k * b * t];
    T::gemm(cout * k, cin, b * t, w, true, &xc, false, &mut z, false);
    let mut y = vec![T::zero(); b * cout * out_len];
    for co in 0..cout {
        for kk in 0..k {
            let zrow = &z[(co * k + kk) * b * t..(co * k + kk + 1) * b * t];
            for bi in 0..b {
                let dst = &mut y[(bi * cout + co) * out_len..(bi * cout + co + 1) * out_len];
                for i in 0..t {
                    let n = i * stride + kk;
                    if n < out_len {
                        dst[n] = dst[n] + zrow[bi * t + i];
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        for bi in 0..b {
            for co in 0..cout {
                y[(bi * cout + co) * out_len..(bi * cout + co + 1) * out_len]
                    .iter_mut()
                    .for_each(|v| *v = *v + bias[co]);
            }
        }
    }
    y
}

/// Gathers `dy[b,co,i·s+k]` into `[(co,k), (b,i)]`, the adjoint of the
/// scatter in [`conv_transpose1d_full`].
pub(crate) fn convt_gather<T: Real>(
    dy: &[T],
    (b, cout, out_len): (usize, usize, usize),
    k: usize,
    stride: usize,
    t: usize,
) -> Vec<T> {
    let mut dz = vec![T::zero(); cout * k * b * t];
    for co in 0..cout {
        for kk in 0..k {
            let zrow = &mut dz[(co * k + kk) * b * t..(co * k + kk + 1) * b * t];
            for bi in 0..b {
                let src = &dy[(bi * cout + co) * out_len..(bi * cout + co + 1) * out_len];
                for i in 0..t {
                    let n = i * stride + kk;
                    if n < out_len {
                        zrow[bi * t + i] = src[n];
                    }
                }
            }
        }
    }
    dz
}

/// Cosine/sine basis turning a length-`n` real frame into its `n/2+1`
/// complex DFT coefficients with a single matmul. Scaled by `1/√n`.
#[derive(Clone, Debug)]
pub struct DftBasis<T> {
    n: usize,
    bins: usize,
    matrix: Vec<T>,
}

impl<T: Real> DftBasis<T> {
    pub fn new(n: usize) -> Self {
        let bins = n / 2 + 1;
        let scale = 1.0 / (n as f64).sqrt();
        let mut matrix = vec![T::zero(); n * 2 * bins];
        for t in 0..n {
            for f in 0..bins {
                // reduce the phase index first so large n stays accurate
                let ph = std::f64::consts::TAU * ((t * f) % n) as f64 / n as f64;
                matrix[t * 2 * bins + f] = T::of(ph.cos() * scale);
                matrix[t * 2 * bins + bins + f] = T::of(-ph.sin() * scale);
            }
        }
        Self { n, bins, matrix }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `[n, 2·bins]`: real parts then imaginary parts.
    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }
}

/// Precomputed cos/sin of rotary angles, one row per token, `head_dim/2`
/// pairs per row. Pair `j` rotates dims `j` and `j + head_dim/2`.
#[derive(Clone, Debug)]
pub struct RopeTable<T> {
    pub(crate) half: usize,
    pub(crate) cos: Vec<T>,
    pub(crate) sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    /// Multi-axis rotary angles: pairs are split contiguously into
    /// `sections.len()` groups; group `a` is driven by `positions[i][a]` with
    /// frequencies `theta^(−l/len_a)`, `l = 0..len_a`.
    pub fn multi_axis<const A: usize>(
        positions: &[[f64; A]],
        sections: [usize; A],
        theta: f64,
    ) -> Result<Self> {
        if sections.iter().any(|&s| s == 0) {
            return dim_err(format!("rotary sections must be ≥ 1, got {sections:?}"));
        }
        let half: usize = sections.iter().sum();
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for pos in positions {
            for (axis, &len) in sections.iter().enumerate() {
                for l in 0..len {
                    let inv = theta.powf(-(l as f64) / len as f64);
                    let ang = pos[axis] * inv;
                    cos.push(T::of(ang.cos()));
                    sin.push(T::of(ang.sin()));
                }
            }
        }
        Ok(Self { half, cos, sin })
    }

    pub fn rows(&self) -> usize {
        self.cos.len() / self.half.max(1)
    }

    pub fn half(&self) -> usize {
        self.half
    }
}

/// Rotates `x[H, T, 2·half]` in place; `inverse` rotates by the negated angles.
pub(crate) fn rope_rotate<T: Real>(x: &mut [T], heads: usize, table: &RopeTable<T>, inverse: bool) {
    let half = table.half;
    let rows = table.rows();
    let d = 2 * half;
    for h in 0..heads {
        for t in 0..rows {
            let base = (h * rows + t) * d;
            for j in 0..half {
                let c = table.cos[t * half + j];
                let s = if inverse {
                    -table.sin[t * half + j]
                } else {
                    table.sin[t * half + j]
                };
                let x1 = x[base + j];
                let x2 = x[base + half + j];
                x[base + j] = x1 * c - x2 * s;
                x[base + half + j] = x2 * c + x1 * s;
            }
        }
    }
}

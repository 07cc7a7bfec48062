//! The computation tape: every operator appends one node holding its output
//! value and whatever it needs for the backward pass.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{dim_err, DiffError, Result};
use crate::kernels::{self, DftBasis, RopeTable};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvT1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Silu(Var),
    Abs(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<T>,
    },
    Softmax(Var),
    Embedding {
        tables: Vec<Var>,
        ids: Vec<usize>,
        which: Vec<usize>,
    },
    TiedLogits {
        h: Var,
        tables: Vec<Var>,
        which: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Pearson(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    ComplexAbs(Var),
    ComplexAngle(Var),
    WrappedAbsDiff(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
    },
    Rope(Var, Arc<RopeTable<T>>),
    Permute3(Var, [usize; 3]),
    Reshape(Var),
    StraightThrough(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | Pearson(a, b)
            | WrappedAbsDiff(a, b) => vec![*a, *b],
            Conv1d { x, w, bias, .. } | ConvT1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            Scale(x, _) | Elu(x) | Silu(x) | Abs(x) | Exp(x) | Clamp(x, ..) | Softmax(x)
            | Sum(x) | Mean(x) | ComplexAbs(x) | ComplexAngle(x) | Rope(x, _)
            | Permute3(x, _) | Reshape(x) | StraightThrough(x) => vec![*x],
            RmsNorm { x, gain, .. } => vec![*x, *gain],
            Embedding { tables, .. } => tables.clone(),
            TiedLogits { h, tables, .. } => {
                let mut v = vec![*h];
                v.extend(tables.iter().copied());
                v
            }
            CrossEntropy { logits, .. } => vec![*logits],
            Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operator applications in topological order. Leaf gradients
/// accumulate across [`Tape::backward`] calls until [`Tape::zero_grad`].
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return dim_err(format!("{what}: shapes {a:?} and {b:?} differ"));
    }
    Ok(())
}

fn wrap_pi(d: f64) -> f64 {
    // into (−π, π]
    let mut w = d % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that keeps values only; nothing on it requires grad.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad =
            self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape(), g.clone()).expect("grad shape")
        })
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ---------------------------------------------------------------- ops

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul {sa:?} · {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Causal strided 1-D cross-correlation over `x[B, Cin, T]` with
    /// `w[Cout, Cin, K]`. The input is left-padded with `K − stride` zeros, so
    /// output frame `t` sees exactly the samples `≤ (t+1)·stride − 1`; for
    /// stride 1 this is the usual `K − 1` causal pad.
    pub fn conv1d_causal(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return dim_err(format!("conv1d x {sx:?} w {sw:?}"));
        }
        let (b, cin, t) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if stride == 0 || k < stride {
            return dim_err(format!("conv1d kernel {k} shorter than stride {stride}"));
        }
        if t % stride != 0 {
            return Err(DiffError::Length(format!(
                "length {t} not divisible by stride {stride}"
            )));
        }
        if let Some(bv) = bias {
            same_shape(self.shape(bv), &[cout], "conv1d bias")?;
        }
        let t_out = t / stride;
        let pad = k - stride;
        let out = kernels::conv1d_forward(
            self.data(x),
            (b, cin, t),
            self.data(w),
            (cout, k),
            bias.map(|bv| self.data(bv)),
            stride,
            pad,
            t_out,
        );
        let v = Tensor::new(&[b, cout, t_out], out)?;
        Ok(self.push(
            v,
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// Causal transposed convolution `x[B, Cin, T]`, `w[Cin, Cout, K]` →
    /// `[B, Cout, T·stride]`; output sample `n` depends on inputs `≤ ⌊n/stride⌋`.
    pub fn conv_transpose1d_causal(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[0] || stride == 0 {
            return dim_err(format!("conv_transpose1d x {sx:?} w {sw:?} stride {stride}"));
        }
        let (b, cin, t) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[1], sw[2]);
        if let Some(bv) = bias {
            same_shape(self.shape(bv), &[cout], "conv_transpose1d bias")?;
        }
        let out_len = t * stride;
        let out = kernels::conv_transpose1d_full(
            self.data(x),
            (b, cin, t),
            self.data(w),
            (cout, k),
            bias.map(|bv| self.data(bv)),
            stride,
            out_len,
        );
        let v = Tensor::new(&[b, cout, out_len], out)?;
        Ok(self.push(v, Op::ConvT1d { x, w, bias, stride }))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), what)?;
        let data: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[..., n] + b[n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        same_shape(self.shape(b), &[n], "add_bias")?;
        let bias = self.data(b).to_vec();
        let data: Vec<T> = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bias).map(|(&v, &c)| v + c))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        Ok(self.push(t, Op::AddBias(x, b)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(t, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = T::of(c);
        self.unary(x, |v| v * cc, Op::Scale(x, c))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v.exp() - T::one() },
            Op::Elu(x),
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::of(v.as_f64() * sigmoid(v.as_f64())), Op::Silu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, |v| v.max(l).min(h), Op::Clamp(x, lo, hi))
    }

    /// RMS normalisation over the last axis with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        same_shape(self.shape(gain), &[d], "rms_norm gain")?;
        let g = self.data(gain).to_vec();
        let mut inv_rms = Vec::new();
        let mut out = Vec::with_capacity(self.data(x).len());
        for row in self.data(x).chunks(d) {
            let ms = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / d as f64;
            let r = T::of(1.0 / (ms + eps).sqrt());
            inv_rms.push(r);
            out.extend(row.iter().zip(&g).map(|(&v, &gg)| v * r * gg));
        }
        let t = Tensor::new(self.shape(x), out)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if d == 0 {
            return dim_err("softmax over empty axis");
        }
        let mut out = Vec::with_capacity(self.data(x).len());
        for row in self.data(x).chunks(d) {
            softmax_row(row, &mut out);
        }
        let t = Tensor::new(self.shape(x), out)?;
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Row `r` of the output is `tables[which[r]][ids[r]]`. With one table
    /// this is a plain embedding lookup.
    pub fn embedding(&mut self, tables: &[Var], ids: &[usize], which: &[usize]) -> Result<Var> {
        if ids.len() != which.len() || ids.is_empty() {
            return dim_err("embedding ids/which length mismatch");
        }
        let d = self.table_dims(tables)?.1;
        let mut out = Vec::with_capacity(ids.len() * d);
        for (&id, &w) in ids.iter().zip(which) {
            let tb = *tables
                .get(w)
                .ok_or_else(|| DiffError::Dimension(format!("table index {w} out of range")))?;
            let k = self.shape(tb)[0];
            if id >= k {
                return dim_err(format!("token id {id} ≥ vocabulary {k}"));
            }
            out.extend_from_slice(&self.data(tb)[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                tables: tables.to_vec(),
                ids: ids.to_vec(),
                which: which.to_vec(),
            },
        ))
    }

    fn table_dims(&self, tables: &[Var]) -> Result<(usize, usize)> {
        let first = tables
            .first()
            .ok_or_else(|| DiffError::Dimension("no embedding tables".into()))?;
        let s = self.shape(*first).to_vec();
        if s.len() != 2 {
            return dim_err(format!("embedding table must be 2-D, got {s:?}"));
        }
        for t in tables {
            same_shape(self.shape(*t), &s, "embedding tables")?;
        }
        Ok((s[0], s[1]))
    }

    /// Logits `h[r] · tables[which[r]]ᵀ`: an output head that reuses an
    /// embedding table chosen per row.
    pub fn tied_logits(&mut self, h: Var, tables: &[Var], which: &[usize]) -> Result<Var> {
        let (k, d) = self.table_dims(tables)?;
        let sh = self.shape(h).to_vec();
        if sh.len() != 2 || sh[1] != d || sh[0] != which.len() {
            return dim_err(format!("tied_logits h {sh:?} vs d {d}, rows {}", which.len()));
        }
        if which.iter().any(|&w| w >= tables.len()) {
            return dim_err("tied_logits table index out of range");
        }
        let n = sh[0];
        let mut out = vec![T::zero(); n * k];
        for (ti, &tb) in tables.iter().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&r| which[r] == ti).collect();
            if rows.is_empty() {
                continue;
            }
            let hs = gather_rows(self.data(h), d, &rows);
            let mut l = vec![T::zero(); rows.len() * k];
            T::gemm(rows.len(), d, k, &hs, false, self.data(tb), true, &mut l, false);
            scatter_rows(&mut out, k, &rows, &l);
        }
        let t = Tensor::new(&[n, k], out)?;
        Ok(self.push(
            t,
            Op::TiedLogits {
                h,
                tables: tables.to_vec(),
                which: which.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len();
        let s = self.data(x).iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        self.push(Tensor::scalar(T::of(s)), Op::Mean(x))
    }

    /// Row-wise Pearson correlation of `a[R, T]` and `b[R, T]` → `[R]`.
    /// Rows where either side has (near) zero variance yield 0 with zero
    /// gradient; see [`Tape::degenerate_pearson_rows`].
    pub fn pearson_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), "pearson")?;
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return dim_err("pearson_rows expects 2-D inputs");
        }
        let t = s[1];
        let out: Vec<T> = self
            .data(a)
            .chunks(t)
            .zip(self.data(b).chunks(t))
            .map(|(ra, rb)| T::of(pearson_parts(ra, rb).r))
            .collect();
        let v = Tensor::new(&[s[0]], out)?;
        Ok(self.push(v, Op::Pearson(a, b)))
    }

    /// Rows that `pearson_rows` treated as zero-variance.
    pub fn degenerate_pearson_rows(&self, a: Var, b: Var) -> Vec<usize> {
        let t = self.shape(a)[1];
        self.data(a)
            .chunks(t)
            .zip(self.data(b).chunks(t))
            .enumerate()
            .filter(|(_, (ra, rb))| pearson_parts(ra, rb).degenerate)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mean cross-entropy of `logits[n, K]` against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return dim_err(format!("cross_entropy logits {s:?} targets {}", targets.len()));
        }
        let k = s[1];
        if targets.iter().any(|&t| t >= k) {
            return dim_err("cross_entropy target out of range");
        }
        let mut probs = Vec::with_capacity(s[0] * k);
        let mut total = 0.0;
        for (row, &tg) in self.data(logits).chunks(k).zip(targets) {
            let start = probs.len();
            softmax_row(row, &mut probs);
            total -= probs[start + tg].as_f64().max(f64::MIN_POSITIVE).ln();
        }
        let loss = T::of(total / targets.len() as f64);
        let keep = if self.grad_enabled { probs } else { Vec::new() };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: keep,
            },
        ))
    }

    /// Matmul against a fixed DFT basis: `x[R, N]` → `[R, 2·(N/2+1)]`
    /// (real parts, then imaginary parts).
    pub fn real_dft(&mut self, x: Var, basis: &DftBasis<T>) -> Result<Var> {
        let n = basis.len();
        let b = self.constant(Tensor::new(&[n, 2 * basis.bins()], basis.matrix().to_vec())?);
        self.matmul(x, b)
    }

    /// `[R, 2F]` packed complex → `[R, F]` magnitudes.
    pub fn complex_abs(&mut self, z: Var) -> Result<Var> {
        self.complex_map(z, |re, im| (re * re + im * im).sqrt(), true)
    }

    /// `[R, 2F]` packed complex → `[R, F]` phases in `(−π, π]`.
    pub fn complex_angle(&mut self, z: Var) -> Result<Var> {
        self.complex_map(z, |re, im| im.atan2(re), false)
    }

    fn complex_map(&mut self, z: Var, f: impl Fn(f64, f64) -> f64, abs: bool) -> Result<Var> {
        let s = self.shape(z).to_vec();
        if s.len() != 2 || s[1] % 2 != 0 {
            return dim_err(format!("complex input must be [R, 2F], got {s:?}"));
        }
        let f_bins = s[1] / 2;
        let out: Vec<T> = self
            .data(z)
            .chunks(2 * f_bins)
            .flat_map(|row| {
                (0..f_bins)
                    .map(|j| T::of(f(row[j].as_f64(), row[f_bins + j].as_f64())))
                    .collect::<Vec<_>>()
            })
            .collect();
        let t = Tensor::new(&[s[0], f_bins], out)?;
        let op = if abs {
            Op::ComplexAbs(z)
        } else {
            Op::ComplexAngle(z)
        };
        Ok(self.push(t, op))
    }

    /// `|wrap(a − b)|` with the difference wrapped into `(−π, π]`.
    pub fn wrapped_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            "wrapped_abs_diff",
            |x, y| T::of(wrap_pi(x.as_f64() - y.as_f64()).abs()),
            Op::WrappedAbsDiff(a, b),
        )
    }

    /// Scaled dot-product attention with a causal mask and grouped KV heads.
    /// `q[H, T, D]`, `k, v[Hkv, S, D]`; query row `i` sits at absolute
    /// position `offset + i` and attends to keys `0..=offset + i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, offset: usize) -> Result<Var> {
        let (sq, sk) = (self.shape(q).to_vec(), self.shape(k).to_vec());
        same_shape(&sk, self.shape(v), "attention k/v")?;
        if sq.len() != 3 || sk.len() != 3 || sq[2] != sk[2] {
            return dim_err(format!("attention q {sq:?} k {sk:?}"));
        }
        let (heads, t, d) = (sq[0], sq[1], sq[2]);
        let (kv_heads, s) = (sk[0], sk[1]);
        if kv_heads == 0 || heads % kv_heads != 0 {
            return dim_err(format!("{heads} heads not divisible by {kv_heads} kv heads"));
        }
        if offset + t > s {
            return dim_err(format!("queries reach position {} but only {s} keys", offset + t));
        }
        let group = heads / kv_heads;
        let scale = T::of(1.0 / (d as f64).sqrt());
        let mut probs = vec![T::zero(); heads * t * s];
        let mut out = vec![T::zero(); heads * t * d];
        for h in 0..heads {
            let kvh = h / group;
            let qh = &self.data(q)[h * t * d..(h + 1) * t * d];
            let kh = &self.data(k)[kvh * s * d..(kvh + 1) * s * d];
            let vh = &self.data(v)[kvh * s * d..(kvh + 1) * s * d];
            let p = &mut probs[h * t * s..(h + 1) * t * s];
            T::gemm(t, d, s, qh, false, kh, true, p, false);
            for i in 0..t {
                let row = &mut p[i * s..(i + 1) * s];
                let lim = offset + i + 1;
                let mx = row[..lim]
                    .iter()
                    .fold(T::neg_infinity(), |m, &v| m.max(v * scale));
                let mut z = T::zero();
                for v in row[..lim].iter_mut() {
                    *v = (*v * scale - mx).exp();
                    z = z + *v;
                }
                row[..lim].iter_mut().for_each(|v| *v = *v / z);
                row[lim..].iter_mut().for_each(|v| *v = T::zero());
            }
            T::gemm(t, s, d, p, false, vh, false, &mut out[h * t * d..(h + 1) * t * d], false);
        }
        let o = Tensor::new(&[heads, t, d], out)?;
        let keep = if self.grad_enabled { probs } else { Vec::new() };
        Ok(self.push(
            o,
            Op::Attention {
                q,
                k,
                v,
                probs: keep,
            },
        ))
    }

    /// Rotary embedding of `x[H, T, D]` using one table row per token.
    pub fn rope(&mut self, x: Var, table: Arc<RopeTable<T>>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != table.rows() || s[2] != 2 * table.half() {
            return dim_err(format!(
                "rope x {s:?} vs table rows {} half {}",
                table.rows(),
                table.half()
            ));
        }
        let mut data = self.data(x).to_vec();
        kernels::rope_rotate(&mut data, s[0], &table, false);
        let t = Tensor::new(&s, data)?;
        Ok(self.push(t, Op::Rope(x, table)))
    }

    /// Axis permutation of a rank-3 tensor: output axis `i` is input axis `perm[i]`.
    pub fn permute3(&mut self, x: Var, perm: [usize; 3]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut sorted = perm;
        sorted.sort_unstable();
        if s.len() != 3 || sorted != [0, 1, 2] {
            return dim_err(format!("permute3 shape {s:?} perm {perm:?}"));
        }
        let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
        let data = permute3_data(self.data(x), &s, perm);
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::Permute3(x, perm)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Forward value `target`, backward passes the incoming gradient to `z`
    /// unchanged.
    pub fn straight_through(&mut self, z: Var, target: Tensor<T>) -> Result<Var> {
        same_shape(self.shape(z), target.shape(), "straight_through")?;
        Ok(self.push(target, Op::StraightThrough(z)))
    }

    // ----------------------------------------------------------- backward

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                add_into(&mut self.leaf_grads[i], &g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, contrib: Vec<T>| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], &contrib);
            }
        };
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, self.data(*b), true, &mut da, false);
                    acc(*a, da);
                }
                if wants(b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.data(*a), true, g, false, &mut db, false);
                    acc(*b, db);
                }
            }
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
            } => {
                let sx = self.shape(*x);
                let (b, cin, t) = (sx[0], sx[1], sx[2]);
                let sw = self.shape(*w);
                let (cout, k) = (sw[0], sw[2]);
                let t_out = t / stride;
                let gy = kernels::bct_to_cols(g, b, cout, t_out); // [Cout, B·To]
                if let Some(bv) = bias {
                    let db = gy
                        .chunks(b * t_out)
                        .map(|r| r.iter().copied().sum())
                        .collect();
                    acc(*bv, db);
                }
                if wants(w) {
                    let cols = kernels::im2col(self.data(*x), (b, cin, t), k, *stride, *pad, t_out);
                    let mut dw = vec![T::zero(); cout * cin * k];
                    T::gemm(cout, b * t_out, cin * k, &gy, false, &cols, true, &mut dw, false);
                    acc(*w, dw);
                }
                if wants(x) {
                    let mut dcols = vec![T::zero(); cin * k * b * t_out];
                    T::gemm(cin * k, cout, b * t_out, self.data(*w), true, &gy, false, &mut dcols, false);
                    acc(*x, kernels::col2im(&dcols, (b, cin, t), k, *stride, *pad, t_out));
                }
            }
            Op::ConvT1d { x, w, bias, stride } => {
                let sx = self.shape(*x);
                let (b, cin, t) = (sx[0], sx[1], sx[2]);
                let sw = self.shape(*w);
                let (cout, k) = (sw[1], sw[2]);
                let out_len = t * stride;
                if let Some(bv) = bias {
                    let mut db = vec![T::zero(); cout];
                    for (r, row) in g.chunks(out_len).enumerate() {
                        db[r % cout] = db[r % cout] + row.iter().copied().sum();
                    }
                    acc(*bv, db);
                }
                let dz = kernels::convt_gather(g, (b, cout, out_len), k, *stride, t);
                if wants(x) {
                    let mut dxc = vec![T::zero(); cin * b * t];
                    T::gemm(cin, cout * k, b * t, self.data(*w), false, &dz, false, &mut dxc, false);
                    acc(*x, kernels::cols_to_bct(&dxc, b, cin, t));
                }
                if wants(w) {
                    let xc = kernels::bct_to_cols(self.data(*x), b, cin, t);
                    let mut dw = vec![T::zero(); cin * cout * k];
                    T::gemm(cin, b * t, cout * k, &xc, false, &dz, true, &mut dw, false);
                    acc(*w, dw);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if wants(a) {
                    acc(*a, g.iter().zip(db).map(|(&gg, &v)| gg * v).collect());
                }
                if wants(b) {
                    acc(*b, g.iter().zip(da).map(|(&gg, &v)| gg * v).collect());
                }
            }
            Op::AddBias(x, b) => {
                let n = self.shape(*b)[0];
                let mut db = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                acc(*x, g.to_vec());
                acc(*b, db);
            }
            Op::Scale(x, c) => {
                let cc = T::of(*c);
                acc(*x, g.iter().map(|&v| v * cc).collect());
            }
            Op::Elu(x) => {
                let xd = self.data(*x);
                acc(
                    *x,
                    g.iter()
                        .zip(xd.iter().zip(y))
                        .map(|(&gg, (&xv, &yv))| if xv > T::zero() { gg } else { gg * (yv + T::one()) })
                        .collect(),
                );
            }
            Op::Silu(x) => {
                let xd = self.data(*x);
                acc(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(&gg, &xv)| {
                            let s = sigmoid(xv.as_f64());
                            gg * T::of(s * (1.0 + xv.as_f64() * (1.0 - s)))
                        })
                        .collect(),
                );
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                acc(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(&gg, &xv)| {
                            if xv > T::zero() {
                                gg
                            } else if xv < T::zero() {
                                -gg
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                );
            }
            Op::Exp(x) => acc(*x, g.iter().zip(y).map(|(&gg, &yv)| gg * yv).collect()),
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::of(*lo), T::of(*hi));
                let xd = self.data(*x);
                acc(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(&gg, &xv)| if xv > l && xv < h { gg } else { T::zero() })
                        .collect(),
                );
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let d = self.shape(*gain)[0];
                let gn = self.data(*gain);
                let xd = self.data(*x);
                let mut dx = vec![T::zero(); xd.len()];
                let mut dg = vec![T::zero(); d];
                for (r, (xrow, grow)) in xd.chunks(d).zip(g.chunks(d)).enumerate() {
                    let ir = inv_rms[r];
                    let mut dot = T::zero();
                    for j in 0..d {
                        let u = xrow[j] * ir;
                        dg[j] = dg[j] + grow[j] * u;
                        dot = dot + grow[j] * gn[j] * u;
                    }
                    let mean_dot = dot / T::of(d as f64);
                    for j in 0..d {
                        let u = xrow[j] * ir;
                        dx[r * d + j] = ir * (grow[j] * gn[j] - u * mean_dot);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
            }
            Op::Softmax(x) => {
                let d = *self.shape(*x).last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(d).zip(g.chunks(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                acc(*x, dx);
            }
            Op::Embedding { tables, ids, which } => {
                let d = self.shape(tables[0])[1];
                for (ti, &tb) in tables.iter().enumerate() {
                    if !wants(&tb) {
                        continue;
                    }
                    let mut dt = vec![T::zero(); self.value(tb).numel()];
                    for (r, (&id, &w)) in ids.iter().zip(which).enumerate() {
                        if w == ti {
                            for j in 0..d {
                                dt[id * d + j] = dt[id * d + j] + g[r * d + j];
                            }
                        }
                    }
                    acc(tb, dt);
                }
            }
            Op::TiedLogits { h, tables, which } => {
                let (k, d) = (self.shape(tables[0])[0], self.shape(tables[0])[1]);
                let n = which.len();
                let mut dh = vec![T::zero(); n * d];
                for (ti, &tb) in tables.iter().enumerate() {
                    let rows: Vec<usize> = (0..n).filter(|&r| which[r] == ti).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let gl = gather_rows(g, k, &rows);
                    if wants(h) {
                        let mut dhs = vec![T::zero(); rows.len() * d];
                        T::gemm(rows.len(), k, d, &gl, false, self.data(tb), false, &mut dhs, false);
                        scatter_rows(&mut dh, d, &rows, &dhs);
                    }
                    if wants(&tb) {
                        let hs = gather_rows(self.data(*h), d, &rows);
                        let mut dt = vec![T::zero(); k * d];
                        T::gemm(k, rows.len(), d, &gl, true, &hs, false, &mut dt, false);
                        acc(tb, dt);
                    }
                }
                acc(*h, dh);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Pearson(a, b) => {
                let t = self.shape(*a)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                let mut da = vec![T::zero(); ad.len()];
                let mut db = vec![T::zero(); bd.len()];
                for (r, (ra, rb)) in ad.chunks(t).zip(bd.chunks(t)).enumerate() {
                    let p = pearson_parts(ra, rb);
                    if p.degenerate {
                        continue;
                    }
                    let denom = (p.saa * p.sbb).sqrt();
                    let gr = g[r].as_f64();
                    for j in 0..t {
                        let ac = ra[j].as_f64() - p.ma;
                        let bc = rb[j].as_f64() - p.mb;
                        da[r * t + j] = T::of(gr * (bc / denom - p.r * ac / p.saa));
                        db[r * t + j] = T::of(gr * (ac / denom - p.r * bc / p.sbb));
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = g[0] / T::of(targets.len() as f64);
                let mut dl = probs.clone();
                for (r, &tg) in targets.iter().enumerate() {
                    dl[r * k + tg] = dl[r * k + tg] - T::one();
                }
                dl.iter_mut().for_each(|v| *v = *v * scale);
                acc(*logits, dl);
            }
            Op::ComplexAbs(z) | Op::ComplexAngle(z) => {
                let is_abs = matches!(node.op, Op::ComplexAbs(_));
                let f_bins = self.shape(*z)[1] / 2;
                let zd = self.data(*z);
                let mut dz = vec![T::zero(); zd.len()];
                for (r, row) in zd.chunks(2 * f_bins).enumerate() {
                    for j in 0..f_bins {
                        let (re, im) = (row[j].as_f64(), row[f_bins + j].as_f64());
                        let m2 = re * re + im * im;
                        if m2 == 0.0 {
                            continue;
                        }
                        let gg = g[r * f_bins + j].as_f64();
                        let (dre, dim) = if is_abs {
                            let m = m2.sqrt();
                            (re / m, im / m)
                        } else {
                            (-im / m2, re / m2)
                        };
                        dz[r * 2 * f_bins + j] = T::of(gg * dre);
                        dz[r * 2 * f_bins + f_bins + j] = T::of(gg * dim);
                    }
                }
                acc(*z, dz);
            }
            Op::WrappedAbsDiff(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let s: Vec<T> = ad
                    .iter()
                    .zip(bd)
                    .zip(g)
                    .map(|((&x, &yv), &gg)| {
                        let w = wrap_pi(x.as_f64() - yv.as_f64());
                        if w > 0.0 {
                            gg
                        } else if w < 0.0 {
                            -gg
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*b, s.iter().map(|&v| -v).collect());
                acc(*a, s);
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
            } => {
                let sq = self.shape(*q);
                let (heads, t, d) = (sq[0], sq[1], sq[2]);
                let sk = self.shape(*k);
                let (kv_heads, s) = (sk[0], sk[1]);
                let group = heads / kv_heads;
                let scale = T::of(1.0 / (d as f64).sqrt());
                let mut dq = vec![T::zero(); heads * t * d];
                let mut dk = vec![T::zero(); kv_heads * s * d];
                let mut dv = vec![T::zero(); kv_heads * s * d];
                for h in 0..heads {
                    let kvh = h / group;
                    let qh = &self.data(*q)[h * t * d..(h + 1) * t * d];
                    let kh = &self.data(*k)[kvh * s * d..(kvh + 1) * s * d];
                    let vh = &self.data(*v)[kvh * s * d..(kvh + 1) * s * d];
                    let p = &probs[h * t * s..(h + 1) * t * s];
                    let go = &g[h * t * d..(h + 1) * t * d];
                    // dV += Pᵀ·dO
                    T::gemm(s, t, d, p, true, go, false, &mut dv[kvh * s * d..(kvh + 1) * s * d], true);
                    // dP = dO·Vᵀ, then softmax backward
                    let mut dp = vec![T::zero(); t * s];
                    T::gemm(t, d, s, go, false, vh, true, &mut dp, false);
                    for i in 0..t {
                        let pr = &p[i * s..(i + 1) * s];
                        let dr = &mut dp[i * s..(i + 1) * s];
                        let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                        for (dv_, &pv) in dr.iter_mut().zip(pr) {
                            *dv_ = pv * (*dv_ - dot) * scale;
                        }
                    }
                    T::gemm(t, s, d, &dp, false, kh, false, &mut dq[h * t * d..(h + 1) * t * d], false);
                    T::gemm(s, t, d, &dp, true, qh, false, &mut dk[kvh * s * d..(kvh + 1) * s * d], true);
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Rope(x, table) => {
                let mut dx = g.to_vec();
                kernels::rope_rotate(&mut dx, self.shape(*x)[0], table, true);
                acc(*x, dx);
            }
            Op::Permute3(x, perm) => {
                let out_shape = node.value.shape().to_vec();
                let mut inv = [0usize; 3];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                acc(*x, permute3_data(g, &out_shape, inv));
            }
            Op::Reshape(x) | Op::StraightThrough(x) => acc(*x, g.to_vec()),
        }
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
        None => *slot = Some(g.to_vec()),
    }
}

fn softmax_row<T: Real>(row: &[T], out: &mut Vec<T>) {
    let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let start = out.len();
    let mut z = T::zero();
    for &v in row {
        let e = (v - mx).exp();
        z = z + e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|v| *v = *v / z);
}

fn gather_rows<T: Real>(data: &[T], width: usize, rows: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    out
}

fn scatter_rows<T: Real>(dst: &mut [T], width: usize, rows: &[usize], src: &[T]) {
    for (i, &r) in rows.iter().enumerate() {
        dst[r * width..(r + 1) * width].copy_from_slice(&src[i * width..(i + 1) * width]);
    }
}

fn permute3_data<T: Real>(x: &[T], s: &[usize], perm: [usize; 3]) -> Vec<T> {
    let os = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let in_strides = [s[1] * s[2], s[2], 1];
    let st = [in_strides[perm[0]], in_strides[perm[1]], in_strides[perm[2]]];
    let mut out = Vec::with_capacity(x.len());
    for i in 0..os[0] {
        for j in 0..os[1] {
            let base = i * st[0] + j * st[1];
            for k in 0..os[2] {
                out.push(x[base + k * st[2]]);
            }
        }
    }
    out
}

struct PearsonParts {
    ma: f64,
    mb: f64,
    saa: f64,
    sbb: f64,
    r: f64,
    degenerate: bool,
}

const PEARSON_MIN_VAR: f64 = 1e-12;

fn pearson_parts<T: Real>(a: &[T], b: &[T]) -> PearsonParts {
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (ac, bc) = (x.as_f64() - ma, y.as_f64() - mb);
        saa += ac * ac;
        sbb += bc * bc;
        sab += ac * bc;
    }
    let degenerate = saa / n < PEARSON_MIN_VAR || sbb / n < PEARSON_MIN_VAR;
    let r = if degenerate {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    };
    PearsonParts {
        ma,
        mb,
        saa,
        sbb,
        r,
        degenerate,
    }
}

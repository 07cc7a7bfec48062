use diffcore::{SeededRng, Tensor};

use crate::error::{Result, TokError};

/// One RVQ level: `K × d` code vectors with their EMA statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub codes: Vec<f32>,
    pub ema_count: Vec<f32>,
    pub ema_sum: Vec<f32>,
}

/// `Q` codebooks shared by every latent stream, plus code usage counted
/// since the last reseed pass. Code 0 of every level is pinned to the zero
/// vector, so the nearest code is never farther than the origin and each
/// level can only shrink a residual.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookSet {
    pub k: usize,
    pub d: usize,
    pub levels: Vec<Codebook>,
    pub usage: Vec<Vec<u64>>,
    pub initialized: bool,
}

/// Output of [`CodebookSet::quantize`] for `n` vectors.
#[derive(Clone, Debug)]
pub struct Quantized {
    /// `n × Q`, level fastest.
    pub codes: Vec<u32>,
    /// `n × d`, sum of the selected code vectors.
    pub zq: Vec<f32>,
    /// Input of each level, `Q × (n × d)`; level 0 is `z` itself.
    pub residuals: Vec<Vec<f32>>,
    /// Squared norm of the final residual per vector.
    pub final_err: Vec<f64>,
}

const LAPLACE_EPS: f64 = 1e-5;

/// Index of the pinned zero code.
pub const NULL_CODE: usize = 0;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

impl CodebookSet {
    /// Codebooks with Gaussian codes; training replaces them with latent
    /// samples on its first batch.
    pub fn new(levels: usize, k: usize, d: usize, rng: &mut SeededRng) -> Self {
        let n_levels = levels;
        let levels = (0..n_levels)
            .map(|_| {
                let mut codes: Vec<f32> = (0..k * d).map(|_| rng.normal() as f32 * 0.1).collect();
                codes[NULL_CODE * d..(NULL_CODE + 1) * d].fill(0.0);
                Codebook {
                    ema_sum: codes.clone(),
                    ema_count: vec![1.0; k],
                    codes,
                }
            })
            .collect();
        Self {
            k,
            d,
            usage: vec![vec![0; k]; n_levels],
            levels,
            initialized: false,
        }
    }

    pub fn code(&self, level: usize, idx: usize) -> &[f32] {
        &self.levels[level].codes[idx * self.d..(idx + 1) * self.d]
    }

    /// Lowest-index nearest code under squared Euclidean distance.
    pub fn nearest(&self, level: usize, v: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.k {
            let d = sq_dist(v, self.code(level, k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Greedy residual quantization of `z` (`n × d`).
    pub fn quantize(&self, z: &[f32]) -> Result<Quantized> {
        if z.len() % self.d != 0 {
            return Err(TokError::Shape(format!(
                "latent length {} not a multiple of code dim {}",
                z.len(),
                self.d
            )));
        }
        let n = z.len() / self.d;
        let q_levels = self.levels.len();
        let mut codes = vec![0u32; n * q_levels];
        let mut zq = vec![0.0f32; z.len()];
        let mut residual = z.to_vec();
        let mut residuals = Vec::with_capacity(q_levels);
        for q in 0..q_levels {
            residuals.push(residual.clone());
            for i in 0..n {
                let r = &mut residual[i * self.d..(i + 1) * self.d];
                let k = self.nearest(q, r);
                codes[i * q_levels + q] = k as u32;
                let e = self.code(q, k);
                for j in 0..self.d {
                    r[j] -= e[j];
                    zq[i * self.d + j] += e[j];
                }
            }
        }
        let final_err = residual.chunks(self.d).map(|r| sq_dist(r, &vec![0.0; self.d])).collect();
        Ok(Quantized {
            codes,
            zq,
            residuals,
            final_err,
        })
    }

    /// Sum of the code vectors named by `codes` (`n × Q`, level fastest).
    pub fn lookup(&self, codes: &[u32]) -> Result<Vec<f32>> {
        let q_levels = self.levels.len();
        let mut out = vec![0.0f32; codes.len() / q_levels * self.d];
        for (i, row) in codes.chunks(q_levels).enumerate() {
            for (q, &c) in row.iter().enumerate() {
                if c as usize >= self.k {
                    return Err(TokError::Shape(format!("code {c} ≥ K = {}", self.k)));
                }
                let e = self.code(q, c as usize);
                for j in 0..self.d {
                    out[i * self.d + j] += e[j];
                }
            }
        }
        Ok(out)
    }

    /// Replaces every code except the null code with distinct random
    /// vectors from the residuals each level sees, level by level.
    pub fn init_from(&mut self, z: &[f32], rng: &mut SeededRng) {
        let n = z.len() / self.d;
        let mut residual = z.to_vec();
        for q in 0..self.levels.len() {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            for k in (0..self.k).filter(|&k| k != NULL_CODE) {
                let src = idx[k % n];
                let v = residual[src * self.d..(src + 1) * self.d].to_vec();
                let book = &mut self.levels[q];
                book.codes[k * self.d..(k + 1) * self.d].copy_from_slice(&v);
                book.ema_sum[k * self.d..(k + 1) * self.d].copy_from_slice(&v);
                book.ema_count[k] = 1.0;
            }
            for i in 0..n {
                let k = self.nearest(q, &residual[i * self.d..(i + 1) * self.d]);
                let e = self.code(q, k).to_vec();
                residual[i * self.d..(i + 1) * self.d]
                    .iter_mut()
                    .zip(&e)
                    .for_each(|(r, c)| *r -= c);
            }
        }
        self.initialized = true;
    }

    /// Exponential-moving-average code update from one batch's assignments,
    /// with Laplace-smoothed counts.
    pub fn ema_update(&mut self, qz: &Quantized, decay: f64) {
        let q_levels = self.levels.len();
        let (k_n, d) = (self.k, self.d);
        for q in 0..q_levels {
            let mut counts = vec![0.0f64; k_n];
            let mut sums = vec![0.0f64; k_n * d];
            for (i, r) in qz.residuals[q].chunks(d).enumerate() {
                let k = qz.codes[i * q_levels + q] as usize;
                counts[k] += 1.0;
                self.usage[q][k] += 1;
                for j in 0..d {
                    sums[k * d + j] += r[j] as f64;
                }
            }
            let book = &mut self.levels[q];
            for k in 0..k_n {
                book.ema_count[k] = (decay * book.ema_count[k] as f64 + (1.0 - decay) * counts[k]) as f32;
                for j in 0..d {
                    let s = &mut book.ema_sum[k * d + j];
                    *s = (decay * *s as f64 + (1.0 - decay) * sums[k * d + j]) as f32;
                }
            }
            let total: f64 = book.ema_count.iter().map(|&c| c as f64).sum();
            for k in (0..k_n).filter(|&k| k != NULL_CODE) {
                let smoothed = (book.ema_count[k] as f64 + LAPLACE_EPS) / (total + k_n as f64 * LAPLACE_EPS) * total;
                for j in 0..d {
                    book.codes[k * d + j] = (book.ema_sum[k * d + j] as f64 / smoothed) as f32;
                }
            }
        }
    }

    /// Re-initialises every code used less than once since the last call to
    /// a random residual vector from `qz`, then clears usage. Returns the
    /// number of codes reseeded per level.
    pub fn reseed_dead(&mut self, qz: &Quantized, rng: &mut SeededRng) -> Vec<usize> {
        let d = self.d;
        let mut counts = Vec::new();
        for q in 0..self.levels.len() {
            let pool = &qz.residuals[q];
            let n = pool.len() / d;
            let mut reseeded = 0;
            for k in (0..self.k).filter(|&k| k != NULL_CODE) {
                if self.usage[q][k] == 0 && n > 0 {
                    let src = rng.below(n);
                    let v = pool[src * d..(src + 1) * d].to_vec();
                    let book = &mut self.levels[q];
                    book.codes[k * d..(k + 1) * d].copy_from_slice(&v);
                    book.ema_sum[k * d..(k + 1) * d].copy_from_slice(&v);
                    book.ema_count[k] = 1.0;
                    reseeded += 1;
                }
            }
            counts.push(reseeded);
            self.usage[q].iter_mut().for_each(|u| *u = 0);
        }
        counts
    }

    /// Checkpoint entries `rvq.<q>.{codes,ema_count,ema_sum}`.
    pub fn entries(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for (q, b) in self.levels.iter().enumerate() {
            out.push((format!("rvq.{q}.codes"), Tensor::new(&[self.k, self.d], b.codes.clone()).unwrap()));
            out.push((format!("rvq.{q}.ema_count"), Tensor::new(&[self.k], b.ema_count.clone()).unwrap()));
            out.push((format!("rvq.{q}.ema_sum"), Tensor::new(&[self.k, self.d], b.ema_sum.clone()).unwrap()));
        }
        out
    }

    pub fn from_entries(entries: &[(String, Tensor<f32>)], levels: usize, k: usize, d: usize) -> Result<Self> {
        let find = |name: String, len: usize| -> Result<Vec<f32>> {
            let t = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| TokError::Shape(format!("checkpoint lacks `{name}`")))?;
            if t.1.numel() != len {
                return Err(TokError::Shape(format!("`{name}` has {} values, want {len}", t.1.numel())));
            }
            Ok(t.1.data().to_vec())
        };
        let mut books = Vec::new();
        for q in 0..levels {
            books.push(Codebook {
                codes: find(format!("rvq.{q}.codes"), k * d)?,
                ema_count: find(format!("rvq.{q}.ema_count"), k)?,
                ema_sum: find(format!("rvq.{q}.ema_sum"), k * d)?,
            });
        }
        Ok(Self {
            k,
            d,
            usage: vec![vec![0; k]; levels],
            levels: books,
            initialized: true,
        })
    }
}

/// `exp(−Σ p ln p)` of a usage histogram; `K` for uniform use, 1 for a
/// single code, 0 when nothing was counted.
pub fn perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

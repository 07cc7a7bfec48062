use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffcore::{checkpoint, AdamW, AdamWConfig, Bindings, ParamStore, Real, RopeTable, SeededRng, Tape, Tensor, Var};

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::flatten::triple0;

pub(crate) const NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Decoder-only transformer whose input embedding and output head are
/// chosen per token by RVQ level: token `j` is embedded with table
/// `E[j mod Q]` and its next-token logits use `E[(j + 1) mod Q]`.
#[derive(Clone, Debug)]
pub struct Lm {
    pub config: LmConfig,
    pub params: ParamStore,
}

pub(crate) fn emb_name(q: usize) -> String {
    format!("emb.{q}")
}

pub(crate) fn layer_name(l: usize, part: &str) -> String {
    format!("layer{l}.{part}")
}

/// Level of the token at 0-based offset `j` and the level its successor has.
pub fn input_level(j: usize, levels: usize) -> usize {
    j % levels
}

pub fn head_level(j: usize, levels: usize) -> usize {
    (j + 1) % levels
}

impl Lm {
    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::named(seed, "flatgpt/init");
        let mut p = ParamStore::new();
        let d = config.d_model;
        let attn = config.n_heads * config.head_dim;
        let kv = config.n_kv_heads * config.head_dim;
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        for q in 0..config.levels {
            p.randn(&emb_name(q), &[config.vocab, d], INIT_STD, &mut rng);
        }
        for l in 0..config.n_layers {
            p.insert(layer_name(l, "attn_norm"), Tensor::full(&[d], 1.0));
            p.randn(&layer_name(l, "wq"), &[d, attn], INIT_STD, &mut rng);
            p.randn(&layer_name(l, "wk"), &[d, kv], INIT_STD, &mut rng);
            p.randn(&layer_name(l, "wv"), &[d, kv], INIT_STD, &mut rng);
            p.randn(&layer_name(l, "wo"), &[attn, d], resid_std, &mut rng);
            p.insert(layer_name(l, "mlp_norm"), Tensor::full(&[d], 1.0));
            p.randn(&layer_name(l, "w_gate"), &[d, config.mlp_width], INIT_STD, &mut rng);
            p.randn(&layer_name(l, "w_up"), &[d, config.mlp_width], INIT_STD, &mut rng);
            p.randn(&layer_name(l, "w_down"), &[config.mlp_width, d], resid_std, &mut rng);
        }
        p.insert("final_norm", Tensor::full(&[d], 1.0));
        Ok(Self { config, params: p })
    }

    /// Rotary table for offsets `start..start + len` of a stream whose
    /// first token sits at triple `(0, 0, 0)`.
    pub fn rope_table(&self, start: usize, len: usize) -> Result<Arc<RopeTable<f32>>> {
        let c = &self.config;
        let pos: Vec<[f64; 3]> = (start..start + len)
            .map(|j| triple0(j, c.streams, c.levels).map(|v| v as f64))
            .collect();
        Ok(Arc::new(RopeTable::multi_axis(&pos, c.mrope_split, c.rope_theta)?))
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LmError::Context("empty prefix".into()));
        }
        if tokens.len() > self.config.max_context {
            return Err(LmError::Context(format!(
                "{} tokens exceed the context of {}",
                tokens.len(),
                self.config.max_context
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(LmError::Context(format!("token {t} ≥ vocabulary {}", self.config.vocab)));
        }
        Ok(())
    }

    /// Full causal forward over `tokens` (offset 0 = triple `(0,0,0)`):
    /// next-token logits `[T, K]`.
    pub fn forward_var(&self, tape: &mut Tape<f32>, b: &Bindings, tokens: &[u32]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let t = tokens.len();
        let (hd, nh, nkv) = (c.head_dim, c.n_heads, c.n_kv_heads);
        let tables: Vec<Var> = (0..c.levels).map(|q| b.var(&emb_name(q))).collect::<std::result::Result<_, _>>()?;
        let ids: Vec<usize> = tokens.iter().map(|&v| v as usize).collect();
        let which_in: Vec<usize> = (0..t).map(|j| input_level(j, c.levels)).collect();
        let which_out: Vec<usize> = (0..t).map(|j| head_level(j, c.levels)).collect();
        let rope = self.rope_table(0, t)?;
        let mut x = tape.embedding(&tables, &ids, &which_in)?;
        for l in 0..c.n_layers {
            let v = |n: &str| b.var(&layer_name(l, n));
            let h = tape.rms_norm(x, v("attn_norm")?, NORM_EPS)?;
            let heads = |tape: &mut Tape<f32>, w: Var, n: usize| -> Result<Var> {
                let p = tape.matmul(h, w)?;
                let p = tape.reshape(p, &[t, n, hd])?;
                Ok(tape.permute3(p, [1, 0, 2])?)
            };
            let q = heads(tape, v("wq")?, nh)?;
            let k = heads(tape, v("wk")?, nkv)?;
            let vv = heads(tape, v("wv")?, nkv)?;
            let q = tape.rope(q, rope.clone())?;
            let k = tape.rope(k, rope.clone())?;
            let a = tape.attention(q, k, vv, 0)?;
            let a = tape.permute3(a, [1, 0, 2])?;
            let a = tape.reshape(a, &[t, nh * hd])?;
            let o = tape.matmul(a, v("wo")?)?;
            x = tape.add(x, o)?;

            let h = tape.rms_norm(x, v("mlp_norm")?, NORM_EPS)?;
            let g = tape.matmul(h, v("w_gate")?)?;
            let g = tape.silu(g);
            let u = tape.matmul(h, v("w_up")?)?;
            let m = tape.mul(g, u)?;
            let o = tape.matmul(m, v("w_down")?)?;
            x = tape.add(x, o)?;
        }
        let h = tape.rms_norm(x, b.var("final_norm")?, NORM_EPS)?;
        Ok(tape.tied_logits(h, &tables, &which_out)?)
    }

    /// Logits `[T·K]` of a fresh full forward, no gradients.
    pub fn logits(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let mut tape = Tape::inference();
        let b = self.params.bind(&mut tape);
        let l = self.forward_var(&mut tape, &b, tokens)?;
        Ok(tape.value(l).data().to_vec())
    }

    /// Parameter count; output heads reuse embeddings, so none are stored.
    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Writes `path` (`BTCK`) and the config as `path.json`.
    pub fn save(&self, path: &Path, opt: Option<&AdamW>) -> Result<()> {
        checkpoint::write(path, &checkpoint::bundle(&self.params, opt))?;
        std::fs::write(config_path(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: LmConfig = serde_json::from_str(&std::fs::read_to_string(config_path(path))?)?;
        let (params, _) = checkpoint::unbundle(checkpoint::read(path)?, AdamWConfig::default())?;
        let fresh = Lm::init(config.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            if params.get(name)?.shape() != t.shape() {
                return Err(LmError::Config(format!("`{name}` shape does not match the config")));
            }
        }
        Ok(Self { config, params })
    }
}

fn config_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Keys and values of every layer for the tokens fed so far, with the
/// 0-based position triple of each cached entry.
#[derive(Clone, Debug)]
pub struct KvCache {
    capacity: usize,
    head_dim: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    pub positions: Vec<[usize; 3]>,
}

impl KvCache {
    fn new(c: &LmConfig) -> Self {
        let per_layer = c.n_kv_heads * c.max_context * c.head_dim;
        Self {
            capacity: c.max_context,
            head_dim: c.head_dim,
            keys: vec![vec![0.0; per_layer]; c.n_layers],
            values: vec![vec![0.0; per_layer]; c.n_layers],
            positions: Vec::with_capacity(c.max_context),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn slot(&self, head: usize, pos: usize) -> usize {
        (head * self.capacity + pos) * self.head_dim
    }
}

/// Incremental decoder: feeds tokens one chunk at a time, reusing cached
/// keys and values instead of recomputing the prefix.
pub struct Decoder<'a> {
    lm: &'a Lm,
    pub cache: KvCache,
}

fn linear(x: &[f32], rows: usize, w: &Tensor<f32>) -> Vec<f32> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0f32; rows * n];
    f32::gemm(rows, m, n, x, false, w.data(), false, &mut y, false);
    y
}

fn rms_norm_rows(x: &[f32], g: &[f32]) -> Vec<f32> {
    let d = g.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let ms = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / d as f64;
        let r = (1.0 / (ms + NORM_EPS).sqrt()) as f32;
        out.extend(row.iter().zip(g).map(|(&v, &gg)| v * r * gg));
    }
    out
}

/// Rotates `x[T, heads, 2·half]` rows in place, pairing `j` with `half + j`.
fn rotate(x: &mut [f32], heads: usize, head_dim: usize, triples: &[[usize; 3]], split: [usize; 3], theta: f64) {
    let half = head_dim / 2;
    let mut cs = Vec::with_capacity(half);
    for (t, tri) in triples.iter().enumerate() {
        cs.clear();
        for (axis, &len) in split.iter().enumerate() {
            for l in 0..len {
                let ang = tri[axis] as f64 * theta.powf(-(l as f64) / len as f64);
                cs.push((ang.cos() as f32, ang.sin() as f32));
            }
        }
        for h in 0..heads {
            let base = (t * heads + h) * head_dim;
            for (j, &(c, s)) in cs.iter().enumerate() {
                let x1 = x[base + j];
                let x2 = x[base + half + j];
                x[base + j] = x1 * c - x2 * s;
                x[base + half + j] = x2 * c + x1 * s;
            }
        }
    }
}

impl<'a> Decoder<'a> {
    pub fn new(lm: &'a Lm) -> Self {
        Self {
            lm,
            cache: KvCache::new(&lm.config),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// Empties the cache; the next token fed sits at triple `(0, 0, 0)`.
    pub fn reset(&mut self) {
        self.cache.positions.clear();
    }

    /// Appends `tokens` after the cached ones and returns their next-token
    /// logits `[T·K]`.
    pub fn feed(&mut self, tokens: &[u32]) -> Result<Vec<f32>> {
        let lm = self.lm;
        let c = &lm.config;
        let p = &lm.params;
        let start = self.cache.len();
        let t = tokens.len();
        if t == 0 {
            return Err(LmError::Context("nothing to feed".into()));
        }
        if start + t > c.max_context {
            return Err(LmError::Context(format!(
                "cache holds {start} of {} tokens, cannot add {t}",
                c.max_context
            )));
        }
        if let Some(v) = tokens.iter().find(|&&v| v as usize >= c.vocab) {
            return Err(LmError::Context(format!("token {v} ≥ vocabulary {}", c.vocab)));
        }
        let (d, hd, nh, nkv) = (c.d_model, c.head_dim, c.n_heads, c.n_kv_heads);
        let triples: Vec<[usize; 3]> = (start..start + t).map(|j| triple0(j, c.streams, c.levels)).collect();

        let mut x = Vec::with_capacity(t * d);
        for (j, &tok) in tokens.iter().enumerate() {
            let e = p.get(&emb_name(input_level(start + j, c.levels)))?;
            x.extend_from_slice(&e.data()[tok as usize * d..(tok as usize + 1) * d]);
        }
        let group = nh / nkv;
        let scale = 1.0 / (hd as f32).sqrt();
        for l in 0..c.n_layers {
            let w = |n: &str| p.get(&layer_name(l, n));
            let h = rms_norm_rows(&x, w("attn_norm")?.data());
            let mut q = linear(&h, t, w("wq")?);
            let mut k = linear(&h, t, w("wk")?);
            let v = linear(&h, t, w("wv")?);
            rotate(&mut q, nh, hd, &triples, c.mrope_split, c.rope_theta);
            rotate(&mut k, nkv, hd, &triples, c.mrope_split, c.rope_theta);
            for j in 0..t {
                for g in 0..nkv {
                    let dst = self.cache.slot(g, start + j);
                    let src = (j * nkv + g) * hd;
                    self.cache.keys[l][dst..dst + hd].copy_from_slice(&k[src..src + hd]);
                    self.cache.values[l][dst..dst + hd].copy_from_slice(&v[src..src + hd]);
                }
            }
            let mut att = vec![0.0f32; t * nh * hd];
            let mut scores = vec![0.0f32; start + t];
            for hh in 0..nh {
                let g = hh / group;
                let kb = &self.cache.keys[l][self.cache.slot(g, 0)..];
                let vb = &self.cache.values[l][self.cache.slot(g, 0)..];
                for j in 0..t {
                    let lim = start + j + 1;
                    let qr = &q[(j * nh + hh) * hd..(j * nh + hh + 1) * hd];
                    let mut mx = f32::NEG_INFINITY;
                    for (s, sc) in scores[..lim].iter_mut().enumerate() {
                        let kr = &kb[s * hd..(s + 1) * hd];
                        *sc = qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f32>() * scale;
                        mx = mx.max(*sc);
                    }
                    let mut z = 0.0f32;
                    for sc in scores[..lim].iter_mut() {
                        *sc = (*sc - mx).exp();
                        z += *sc;
                    }
                    let out = &mut att[(j * nh + hh) * hd..(j * nh + hh + 1) * hd];
                    for (s, &pr) in scores[..lim].iter().enumerate() {
                        let wgt = pr / z;
                        for (o, &vv) in out.iter_mut().zip(&vb[s * hd..(s + 1) * hd]) {
                            *o += wgt * vv;
                        }
                    }
                }
            }
            let o = linear(&att, t, w("wo")?);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            let h = rms_norm_rows(&x, w("mlp_norm")?.data());
            let gt = linear(&h, t, w("w_gate")?);
            let up = linear(&h, t, w("w_up")?);
            let m: Vec<f32> = gt
                .iter()
                .zip(&up)
                .map(|(&g, &u)| g / (1.0 + (-g).exp()) * u)
                .collect();
            let o = linear(&m, t, w("w_down")?);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        }
        self.cache.positions.extend_from_slice(&triples);
        let h = rms_norm_rows(&x, p.get("final_norm")?.data());
        let k_n = c.vocab;
        let mut logits = vec![0.0f32; t * k_n];
        for j in 0..t {
            let e = p.get(&emb_name(head_level(start + j, c.levels)))?;
            f32::gemm(1, d, k_n, &h[j * d..(j + 1) * d], false, e.data(), true, &mut logits[j * k_n..(j + 1) * k_n], false);
        }
        Ok(logits)
    }

    /// Logits of the last token after feeding `tokens`.
    pub fn feed_last(&mut self, tokens: &[u32]) -> Result<Vec<f32>> {
        let all = self.feed(tokens)?;
        let k = self.lm.config.vocab;
        Ok(all[all.len() - k..].to_vec())
    }
}

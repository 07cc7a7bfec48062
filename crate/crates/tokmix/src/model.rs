use diffcore::{Bindings, ParamStore, SeededRng, Tape, Tensor, Var};

use crate::config::TokenizerConfig;
use crate::error::{Result, TokError};
use crate::rvq::CodebookSet;

const ENC_IN_K: usize = 7;
const ENC_OUT_K: usize = 3;
const DEC_IN_K: usize = 7;
const DEC_OUT_K: usize = 7;
const RES_K: usize = 3;

/// Encoder output for one window: `T_w × H × d` latents, their quantized
/// version and the residual each RVQ level saw.
#[derive(Clone, Debug)]
pub struct LatentBlock {
    pub rows: usize,
    pub streams: usize,
    pub dim: usize,
    pub z: Vec<f32>,
    pub zq: Vec<f32>,
    pub residuals: Vec<Vec<f32>>,
    /// `T_w·H × Q` code indices, level fastest.
    pub codes: Vec<u32>,
}

/// Encoder, decoder and codebooks of one tokenizer.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub config: TokenizerConfig,
    pub params: ParamStore,
    pub books: CodebookSet,
}

/// Weight `w[Cout, Cin, K]` and bias `b[Cout]` drawn from `U(±1/√fan_in)`.
fn conv_param(p: &mut ParamStore, name: &str, shape: [usize; 3], fan_in: usize, rng: &mut SeededRng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    p.uniform(&format!("{name}.w"), &shape, bound, rng);
    p.uniform(&format!("{name}.b"), &[shape[0]], bound, rng);
}

/// Transposed-conv weight `w[Cin, Cout, K]` and bias `b[Cout]`.
fn conv_t_param(p: &mut ParamStore, name: &str, shape: [usize; 3], fan_in: usize, rng: &mut SeededRng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    p.uniform(&format!("{name}.w"), &shape, bound, rng);
    p.uniform(&format!("{name}.b"), &[shape[1]], bound, rng);
}

/// Channel width at the input of each down-sampling stage, then the width
/// after the last stage.
fn widths(cfg: &TokenizerConfig) -> Vec<usize> {
    let mut w = vec![cfg.n_filters];
    for _ in &cfg.ratios {
        w.push(w.last().unwrap() * 2);
    }
    w
}

impl Tokenizer {
    pub fn init(config: TokenizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::named(seed, "tokmix/init");
        let mut p = ParamStore::new();
        let c = config.channels;
        let w = widths(&config);
        let top = *w.last().unwrap();

        conv_param(&mut p, "enc.in", [w[0], c, ENC_IN_K], c * ENC_IN_K, &mut rng);
        for (i, &r) in config.ratios.iter().enumerate() {
            let ch = w[i];
            for j in 0..config.n_res_layers {
                res_params(&mut p, &format!("enc.s{i}.res{j}"), ch, &mut rng);
            }
            conv_param(&mut p, &format!("enc.s{i}.down"), [ch * 2, ch, 2 * r], ch * 2 * r, &mut rng);
        }
        conv_param(&mut p, "enc.out", [config.n_dim, top, ENC_OUT_K], top * ENC_OUT_K, &mut rng);

        conv_param(&mut p, "dec.in", [top, config.n_dim, DEC_IN_K], config.n_dim * DEC_IN_K, &mut rng);
        for (i, &r) in config.ratios.iter().enumerate().rev() {
            let ch = w[i + 1];
            conv_t_param(&mut p, &format!("dec.s{i}.up"), [ch, ch / 2, 2 * r], ch * 2, &mut rng);
            for j in 0..config.n_res_layers {
                res_params(&mut p, &format!("dec.s{i}.res{j}"), ch / 2, &mut rng);
            }
        }
        conv_param(&mut p, "dec.out", [c, w[0], DEC_OUT_K], w[0] * DEC_OUT_K, &mut rng);

        let books = CodebookSet::new(config.levels, config.codebook_size, config.code_dim(), &mut rng);
        Ok(Self {
            config,
            params: p,
            books,
        })
    }

    /// `x[B, C, L_w]` → latent vectors `[B·T_w·H, d]`, rows ordered
    /// `(b, t, h)`.
    pub fn encode_var(&self, tape: &mut Tape<f32>, b: &Bindings, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] != cfg.channels || s[2] != cfg.window {
            return Err(TokError::Shape(format!(
                "encoder input {s:?}, want [B, {}, {}]",
                cfg.channels, cfg.window
            )));
        }
        let batch = s[0];
        let mut h = conv(tape, b, "enc.in", x, 1)?;
        for (i, &r) in cfg.ratios.iter().enumerate() {
            for j in 0..cfg.n_res_layers {
                h = res_unit(tape, b, &format!("enc.s{i}.res{j}"), h)?;
            }
            h = tape.elu(h);
            h = conv(tape, b, &format!("enc.s{i}.down"), h, r)?;
        }
        h = tape.elu(h);
        h = conv(tape, b, "enc.out", h, 1)?;
        let h = tape.permute3(h, [0, 2, 1])?;
        let rows = batch * cfg.latent_len() * cfg.n_neuro;
        Ok(tape.reshape(h, &[rows, cfg.code_dim()])?)
    }

    /// Inverse layout of [`Tokenizer::encode_var`]: `[B·T_w·H, d]` →
    /// `x̂[B, C, L_w]`.
    pub fn decode_var(&self, tape: &mut Tape<f32>, b: &Bindings, zq: Var, batch: usize) -> Result<Var> {
        let cfg = &self.config;
        let t_w = cfg.latent_len();
        let want = [batch * t_w * cfg.n_neuro, cfg.code_dim()];
        if tape.shape(zq) != want {
            return Err(TokError::Shape(format!(
                "decoder input {:?}, want {want:?}",
                tape.shape(zq)
            )));
        }
        let h = tape.reshape(zq, &[batch, t_w, cfg.n_dim])?;
        let mut h = tape.permute3(h, [0, 2, 1])?;
        h = conv(tape, b, "dec.in", h, 1)?;
        for (i, &r) in cfg.ratios.iter().enumerate().rev() {
            h = tape.elu(h);
            let w = b.var(&format!("dec.s{i}.up.w"))?;
            let bias = b.var(&format!("dec.s{i}.up.b"))?;
            h = tape.conv_transpose1d_causal(h, w, Some(bias), r)?;
            for j in 0..cfg.n_res_layers {
                h = res_unit(tape, b, &format!("dec.s{i}.res{j}"), h)?;
            }
        }
        h = tape.elu(h);
        Ok(conv(tape, b, "dec.out", h, 1)?)
    }

    fn check_window(&self, window: &[f32]) -> Result<()> {
        let want = self.config.channels * self.config.window;
        if window.len() != want {
            return Err(TokError::Shape(format!(
                "window has {} samples, want C·L_w = {want}",
                window.len()
            )));
        }
        Ok(())
    }

    /// Encodes and quantizes one channel-major `C × L_w` window.
    pub fn encode(&self, window: &[f32]) -> Result<LatentBlock> {
        self.check_window(window)?;
        let cfg = &self.config;
        let mut tape = Tape::inference();
        let b = self.params.bind(&mut tape);
        let x = tape.constant(Tensor::new(&[1, cfg.channels, cfg.window], window.to_vec())?);
        let z = self.encode_var(&mut tape, &b, x)?;
        let z = tape.value(z).data().to_vec();
        let q = self.books.quantize(&z)?;
        Ok(LatentBlock {
            rows: cfg.latent_len(),
            streams: cfg.n_neuro,
            dim: cfg.code_dim(),
            z,
            zq: q.zq,
            residuals: q.residuals,
            codes: q.codes,
        })
    }

    /// Reconstructs `C × L_w` from quantized latents `[T_w·H, d]`.
    pub fn decode_latent(&self, zq: &[f32]) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let mut tape = Tape::inference();
        let b = self.params.bind(&mut tape);
        let rows = cfg.latent_len() * cfg.n_neuro;
        let z = tape.constant(Tensor::new(&[rows, cfg.code_dim()], zq.to_vec()).map_err(|_| {
            TokError::Shape(format!("latent has {} values, want {}", zq.len(), rows * cfg.code_dim()))
        })?);
        let x = self.decode_var(&mut tape, &b, z, 1)?;
        Ok(tape.value(x).data().to_vec())
    }

    /// Reconstructs one window from its `T_w·H·Q` codes (flatten order).
    pub fn decode_codes(&self, codes: &[u32]) -> Result<Vec<f32>> {
        if codes.len() != self.config.tokens_per_window() {
            return Err(TokError::Shape(format!(
                "{} codes, want {} per window",
                codes.len(),
                self.config.tokens_per_window()
            )));
        }
        let zq = self.books.lookup(codes)?;
        self.decode_latent(&zq)
    }

    /// Encode, quantize and decode one window.
    pub fn reconstruct(&self, window: &[f32]) -> Result<Vec<f32>> {
        let lat = self.encode(window)?;
        self.decode_latent(&lat.zq)
    }
}

fn res_params(p: &mut ParamStore, name: &str, ch: usize, rng: &mut SeededRng) {
    conv_param(p, &format!("{name}.a"), [ch / 2, ch, RES_K], ch * RES_K, rng);
    conv_param(p, &format!("{name}.b"), [ch, ch / 2, 1], ch / 2, rng);
}

fn conv(tape: &mut Tape<f32>, b: &Bindings, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = b.var(&format!("{name}.w"))?;
    let bias = b.var(&format!("{name}.b"))?;
    Ok(tape.conv1d_causal(x, w, Some(bias), stride)?)
}

/// `x + conv1(elu(conv3(elu(x))))`.
fn res_unit(tape: &mut Tape<f32>, b: &Bindings, name: &str, x: Var) -> Result<Var> {
    let h = tape.elu(x);
    let h = conv(tape, b, &format!("{name}.a"), h, 1)?;
    let h = tape.elu(h);
    let h = conv(tape, b, &format!("{name}.b"), h, 1)?;
    Ok(tape.add(x, h)?)
}

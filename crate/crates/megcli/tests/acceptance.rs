//! Acceptance suite: one pass/fail line per criterion. Criteria 7 to 9
//! train the full desk pipeline twice from the same master seed.
//!
//! `ACCEPTANCE_RUN_DIR` keeps the two run directories under that path.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use diffcore::gradcheck::check;
use diffcore::{DftBasis, RopeTable, SeededRng, Tape, Tensor, Var};
use flatgpt::{flat_index, flatten, head_level, position_of, unflatten, Decoder, Lm, LmConfig};
use megcli::{ContextCurve, Pipeline, RunConfig, RunManifest, Stage};
use megsynth::{synth_session, BandGains, CleanConfig, Recording, SessionSpec, TaskType};
use neurometrics::{coherence_matrix, dfa_exponent, one_over_f_exponent, psd_jsd, PsdEstimate, WelchConfig};
use rollgen::{BatchManifest, RolloutConfig};
use stresslab::{
    bootstrap_ci, prefix_divergence, stability_curves, wilcoxon_signed_rank, DivMetric, EvalReport, Pairing,
    PartnerMap, WindowGrid,
};
use tokmix::{commit_loss, CodebookSet, EpochLog, TokenGrid, Tokenizer, TokenizerConfig};

/// Master seed of both end-to-end runs.
const SEED: u64 = 2024;

// ---- criterion 1 -------------------------------------------------------

const GRAD_H: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-3;
const INSTANCES: u64 = 5;

type Make = Box<dyn Fn(&mut SeededRng) -> Vec<Tensor<f64>>>;
type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> diffcore::Result<Var>>;

fn randn(shape: &[usize], r: &mut SeededRng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

fn away_from_zero(shape: &[usize], gap: f64, r: &mut SeededRng) -> Tensor<f64> {
    let mut t = randn(shape, r);
    t.data_mut().iter_mut().for_each(|v| *v += gap * v.signum());
    t
}

fn shapes(s: &'static [&'static [usize]]) -> Make {
    Box::new(move |r| s.iter().map(|sh| randn(sh, r)).collect())
}

fn gradient_cases() -> Vec<(&'static str, Make, Build)> {
    let basis = Arc::new(DftBasis::<f64>::new(8));
    let pos: Vec<[f64; 3]> = (0..4).map(|i| [i as f64, (i % 2) as f64, 1.0]).collect();
    let rope = Arc::new(RopeTable::<f64>::multi_axis(&pos, [2, 1, 1], 100.0).unwrap());
    vec![
        ("matmul", shapes(&[&[3, 4], &[4, 2]]), Box::new(|t, v| t.matmul(v[0], v[1]))),
        (
            "conv1d",
            shapes(&[&[2, 3, 8], &[4, 3, 3], &[4]]),
            Box::new(|t, v| t.conv1d_causal(v[0], v[1], Some(v[2]), 2)),
        ),
        (
            "conv_transpose1d",
            shapes(&[&[2, 3, 4], &[3, 2, 4], &[2]]),
            Box::new(|t, v| t.conv_transpose1d_causal(v[0], v[1], Some(v[2]), 2)),
        ),
        (
            "add/sub/mul",
            shapes(&[&[3, 4], &[3, 4], &[3, 4]]),
            Box::new(|t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[2])?;
                t.mul(d, v[1])
            }),
        ),
        (
            "add_bias/scale",
            shapes(&[&[2, 3, 4], &[4]]),
            Box::new(|t, v| {
                let y = t.add_bias(v[0], v[1])?;
                Ok(t.scale(y, -1.7))
            }),
        ),
        ("elu", Box::new(|r| vec![away_from_zero(&[3, 5], 0.05, r)]), Box::new(|t, v| Ok(t.elu(v[0])))),
        ("silu", shapes(&[&[3, 5]]), Box::new(|t, v| Ok(t.silu(v[0])))),
        ("abs", Box::new(|r| vec![away_from_zero(&[3, 5], 0.05, r)]), Box::new(|t, v| Ok(t.abs(v[0])))),
        ("exp", shapes(&[&[3, 5]]), Box::new(|t, v| Ok(t.exp(v[0])))),
        (
            "clamp",
            Box::new(|r| {
                let mut x = randn(&[4, 5], r);
                x.data_mut().iter_mut().for_each(|v| {
                    if (v.abs() - 0.5).abs() < 0.05 {
                        *v += 0.2;
                    }
                });
                vec![x]
            }),
            Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        ),
        ("rms_norm", shapes(&[&[3, 6], &[6]]), Box::new(|t, v| t.rms_norm(v[0], v[1], 1e-6))),
        ("softmax", shapes(&[&[3, 5]]), Box::new(|t, v| t.softmax(v[0]))),
        (
            "embedding",
            shapes(&[&[5, 3], &[5, 3]]),
            Box::new(|t, v| t.embedding(&[v[0], v[1]], &[0, 4, 4, 2, 0], &[0, 1, 0, 1, 0])),
        ),
        (
            "tied_logits",
            shapes(&[&[4, 3], &[6, 3], &[6, 3]]),
            Box::new(|t, v| t.tied_logits(v[0], &[v[1], v[2]], &[1, 0, 1, 1])),
        ),
        (
            "sum/mean",
            shapes(&[&[3, 4]]),
            Box::new(|t, v| {
                let m = t.mean(v[0]);
                let e = t.exp(v[0]);
                let s = t.sum(e);
                t.add(m, s)
            }),
        ),
        ("pearson_rows", shapes(&[&[3, 10], &[3, 10]]), Box::new(|t, v| t.pearson_rows(v[0], v[1]))),
        ("cross_entropy", shapes(&[&[4, 6]]), Box::new(|t, v| t.cross_entropy(v[0], &[0, 5, 2, 2]))),
        (
            "real_dft",
            shapes(&[&[3, 8]]),
            Box::new(move |t, v| {
                let z = t.real_dft(v[0], &basis)?;
                let z2 = t.mul(z, z)?;
                Ok(t.sum(z2))
            }),
        ),
        (
            "complex_abs",
            Box::new(|r| vec![away_from_zero(&[3, 8], 0.1, r)]),
            Box::new(|t, v| t.complex_abs(v[0])),
        ),
        (
            "complex_angle",
            Box::new(|r| {
                let mut z = randn(&[3, 8], r);
                for row in z.data_mut().chunks_mut(8) {
                    row[4..].iter_mut().for_each(|v| *v += 0.3 * v.signum());
                }
                vec![z]
            }),
            Box::new(|t, v| t.complex_angle(v[0])),
        ),
        (
            "wrapped_abs_diff",
            Box::new(|r| {
                let a = Tensor::from_fn(&[2, 6], |_| r.uniform(-3.0, 3.0));
                let b = Tensor::from_fn(&[2, 6], |i| {
                    let d = r.uniform(0.3, 2.8) * if r.below(2) == 0 { 1.0 } else { -1.0 };
                    a.data()[i] - d + if i % 3 == 0 { std::f64::consts::TAU } else { 0.0 }
                });
                vec![a, b]
            }),
            Box::new(|t, v| t.wrapped_abs_diff(v[0], v[1])),
        ),
        (
            "attention",
            shapes(&[&[4, 3, 4], &[2, 5, 4], &[2, 5, 4]]),
            Box::new(|t, v| t.attention(v[0], v[1], v[2], 2)),
        ),
        ("rope", shapes(&[&[2, 4, 8]]), Box::new(move |t, v| t.rope(v[0], rope.clone()))),
        (
            "permute3/reshape",
            shapes(&[&[2, 3, 4], &[4, 6]]),
            Box::new(|t, v| {
                let p = t.permute3(v[0], [2, 0, 1])?;
                let q = t.reshape(p, &[4, 6])?;
                t.mul(q, v[1])
            }),
        ),
    ]
}

fn criterion_1() -> Result<String> {
    let cases = gradient_cases();
    let mut worst = (0.0f64, "");
    for (name, make, f) in &cases {
        for i in 0..INSTANCES {
            let mut rng = SeededRng::named(i, name);
            let inputs = make(&mut rng);
            let rep = check(&inputs, GRAD_H, f)?;
            ensure!(rep.rel_err < GRAD_TOL, "{name} instance {i}: relative error {:.2e}", rep.rel_err);
            if rep.rel_err > worst.0 {
                worst = (rep.rel_err, name);
            }
        }
    }
    // straight-through: identity gradient into the source
    let mut tape = Tape::<f64>::new();
    let z = tape.param(Tensor::new(&[3], vec![0.2, -0.4, 1.0])?);
    let q = tape.straight_through(z, Tensor::new(&[3], vec![0.0, 0.0, 1.0])?)?;
    let w = tape.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0])?);
    let y = tape.mul(q, w)?;
    let l = tape.sum(y);
    tape.backward(l)?;
    ensure!(tape.grad(z).unwrap().data() == [1.0, 2.0, 3.0], "straight-through gradient is not the identity");
    Ok(format!(
        "{} ops × {INSTANCES} instances + straight-through, worst {:.1e} ({}) < {GRAD_TOL:.0e}",
        cases.len(),
        worst.0,
        worst.1
    ))
}

// ---- criterion 2 -------------------------------------------------------

fn flatten_bijection() -> Result<()> {
    let mut rng = SeededRng::named(SEED, "acceptance/flatten");
    for _ in 0..100 {
        let (t, h, q, k) = (1 + rng.below(40), 1 + rng.below(6), 1 + rng.below(6), 2 + rng.below(64));
        let codes: Vec<u32> = (0..t * h * q).map(|_| rng.below(k) as u32).collect();
        let g = TokenGrid::new(t, h, q, k, 1, codes)?;
        ensure!(unflatten(&flatten(&g), k, 1)? == g, "({t}, {h}, {q}) does not round-trip");
        for i in 1..=t * h * q {
            let (a, b, c) = position_of(i, h, q);
            ensure!(flat_index(a, b, c, h, q) == i, "index {i} of ({t}, {h}, {q})");
        }
    }
    Ok(())
}

fn rvq_monotone() -> Result<()> {
    for seed in 0..50 {
        let mut rng = SeededRng::named(seed, "acceptance/rvq");
        let (levels, k, d, n) = (4, 16, 3, 20);
        let mut books = CodebookSet::new(levels, k, d, &mut rng);
        for lvl in books.levels.iter_mut() {
            for (i, c) in lvl.codes.iter_mut().enumerate() {
                // code 0 stays at the origin
                *c = if i < d { 0.0 } else { (rng.normal() * (1.0 + seed as f64 / 10.0)) as f32 };
            }
        }
        let z: Vec<f32> = (0..n * d).map(|_| rng.normal() as f32).collect();
        let qz = books.quantize(&z)?;
        for i in 0..n {
            let mut prev = f64::INFINITY;
            for lvl in 0..levels {
                let e: f64 = qz.residuals[lvl][i * d..(i + 1) * d].iter().map(|&v| (v as f64).powi(2)).sum();
                ensure!(e <= prev, "seed {seed} vector {i}: residual grew at level {lvl}");
                prev = e;
            }
            ensure!(qz.final_err[i] <= prev, "seed {seed} vector {i}: final residual grew");
        }
    }
    Ok(())
}

fn downstream(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Var {
    let wv = tape.constant(w.clone());
    let h = tape.matmul(y, wv).unwrap();
    let e = tape.exp(h);
    tape.mean(e)
}

/// Gradient of `f(st(z)) + commit(z, st(z))` equals finite differences
/// of `f` at the quantized point plus those of the commitment in `z`.
fn straight_through_composite() -> Result<f64> {
    let (n, d, m) = (5, 3, 4);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = SeededRng::named(seed, "acceptance/st");
        let z = Tensor::<f64>::randn(&[n, d], 1.0, &mut rng);
        let zq = Tensor::<f64>::randn(&[n, d], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[d, m], 0.5, &mut rng);
        let mut tape = Tape::<f64>::new();
        let zv = tape.param(z.clone());
        let st = tape.straight_through(zv, zq.clone())?;
        let f = downstream(&mut tape, st, &w);
        let c = commit_loss(&mut tape, zv, st)?;
        let l = tape.add(f, c)?;
        tape.backward(l)?;
        let got = tape.grad(zv).unwrap();
        let h = 1e-6;
        let eval_f = |y: &Tensor<f64>| {
            let mut t = Tape::<f64>::inference();
            let yv = t.constant(y.clone());
            let o = downstream(&mut t, yv, &w);
            t.value(o).item()
        };
        let eval_c =
            |zz: &Tensor<f64>| zz.data().iter().zip(zq.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (n * d) as f64;
        for i in 0..n * d {
            let bump = |t: &Tensor<f64>, s: f64| {
                let mut u = t.clone();
                u.data_mut()[i] += s;
                u
            };
            let df = (eval_f(&bump(&zq, h)) - eval_f(&bump(&zq, -h))) / (2.0 * h);
            let dc = (eval_c(&bump(&z, h)) - eval_c(&bump(&z, -h))) / (2.0 * h);
            let err = (got.data()[i] - (df + dc)).abs();
            ensure!(err < 1e-7, "seed {seed} element {i}: error {err:.2e}");
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn test_tokenizer(seed: u64) -> Result<Tokenizer> {
    let mut tok = Tokenizer::init(TokenizerConfig::desk(4), seed)?;
    let cfg = tok.config.clone();
    let mut z = Vec::new();
    for i in 0..3 {
        z.extend(tok.encode(&noise_window(&cfg, 100 + i))?.z);
    }
    tok.books.init_from(&z, &mut SeededRng::new(seed, 1));
    Ok(tok)
}

fn noise_window(cfg: &TokenizerConfig, seed: u64) -> Vec<f32> {
    let mut r = SeededRng::new(seed, 7);
    (0..cfg.channels * cfg.window).map(|_| r.normal() as f32).collect()
}

/// Future samples never move earlier latents, and future codes never move
/// earlier decoded samples: exact equality, not a tolerance.
fn tokenizer_causality() -> Result<()> {
    let tok = test_tokenizer(3)?;
    let cfg = &tok.config;
    let row = cfg.n_neuro * cfg.code_dim();
    let t_w = cfg.latent_len();
    for cut in [cfg.hop() * 5, cfg.hop() * 31, cfg.window - 1] {
        let x = noise_window(cfg, 5);
        let mut y = x.clone();
        for c in 0..cfg.channels {
            for s in cut..cfg.window {
                y[c * cfg.window + s] += 3.0;
            }
        }
        let (a, b) = (tok.encode(&x)?, tok.encode(&y)?);
        let keep = cut / cfg.hop();
        ensure!(a.z[..keep * row] == b.z[..keep * row], "sample {cut} moved an earlier latent row");
        ensure!(a.z[..] != b.z[..], "edit at sample {cut} changed nothing");
        ensure!(keep < t_w);
    }
    let lat = tok.encode(&noise_window(cfg, 6))?;
    let base = tok.decode_codes(&lat.codes)?;
    let per_row = cfg.n_neuro * cfg.levels;
    for t in [0usize, 10, 40, t_w - 1] {
        let mut codes = lat.codes.clone();
        for c in &mut codes[t * per_row..(t + 1) * per_row] {
            *c = (*c + 5) % cfg.codebook_size as u32;
        }
        let out = tok.decode_codes(&codes)?;
        let cut = t * cfg.hop();
        for c in 0..cfg.channels {
            ensure!(
                base[c * cfg.window..c * cfg.window + cut] == out[c * cfg.window..c * cfg.window + cut],
                "codes of row {t} reached sample {cut} of channel {c}"
            );
        }
    }
    Ok(())
}

fn tiny_lm_config() -> LmConfig {
    LmConfig {
        window_rows: 4,
        max_context: 64,
        vocab: 12,
        ..LmConfig::desk()
    }
}

fn perturbed_lm(seed: u64, cfg: LmConfig) -> Result<Lm> {
    let mut lm = Lm::init(cfg, seed)?;
    let mut r = SeededRng::new(seed, 99);
    for (_, t) in lm.params.iter_mut() {
        for v in t.data_mut() {
            *v += (r.normal() * 0.3) as f32;
        }
    }
    Ok(lm)
}

fn random_tokens(n: usize, k: usize, seed: u64) -> Vec<u32> {
    let mut r = SeededRng::new(seed, 1);
    (0..n).map(|_| r.below(k) as u32).collect()
}

/// The head after a level-`q` token is table `(q + 1) mod Q`: swapping two
/// rows of table 1 swaps exactly those logits at positions whose next
/// token is level 1 and leaves every other row bit-identical.
fn tied_head_shift() -> Result<()> {
    let c = tiny_lm_config();
    for j in 0..64 {
        ensure!(head_level(j, c.levels) == (j + 1) % c.levels, "head of position {j}");
    }
    let lm = perturbed_lm(4, c.clone())?;
    let mut toks = random_tokens(16, 12, 4);
    for (j, t) in toks.iter_mut().enumerate() {
        if j % 2 == 1 {
            *t %= 4;
        }
    }
    let base = lm.logits(&toks)?;
    let mut perm = lm.clone();
    let t1 = perm.params.get_mut("emb.1")?;
    let (a, b) = (5usize, 9usize);
    for j in 0..c.d_model {
        t1.data_mut().swap(a * c.d_model + j, b * c.d_model + j);
    }
    let got = perm.logits(&toks)?;
    for (j, (r0, r1)) in base.chunks(c.vocab).zip(got.chunks(c.vocab)).enumerate() {
        if head_level(j, c.levels) == 1 {
            let mut want = r0.to_vec();
            want.swap(a, b);
            ensure!(r1 == &want[..], "row {j} is not the swapped head");
        } else {
            ensure!(r1 == r0, "row {j} reads table 1");
        }
    }
    Ok(())
}

fn criterion_2() -> Result<String> {
    flatten_bijection().context("flatten bijection")?;
    rvq_monotone().context("RVQ monotonicity")?;
    let st = straight_through_composite().context("straight-through composite")?;
    tokenizer_causality().context("tokenizer causality")?;
    tied_head_shift().context("tied-head shift")?;
    Ok(format!(
        "bijection on 100 extents, RVQ monotone on 50 seeds, straight-through error {st:.1e}, causality exact, tied heads shift cyclically"
    ))
}

// ---- criterion 3 -------------------------------------------------------

const CACHE_TOL: f64 = 1e-4;

fn max_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn criterion_3() -> Result<String> {
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let c = tiny_lm_config();
        let lm = perturbed_lm(seed, c.clone())?;
        let toks = random_tokens(c.max_context, 12, seed);
        let full = lm.logits(&toks)?;
        let mut dec = Decoder::new(&lm);
        let mut inc = Vec::new();
        for &t in &toks {
            inc.extend(dec.feed(&[t])?);
        }
        ensure!(inc.len() == full.len());
        let d = max_diff(&full, &inc);
        ensure!(d < CACHE_TOL, "seed {seed}: incremental differs by {d:.2e}");
        worst = worst.max(d);

        let lm = perturbed_lm(10 + seed, c.clone())?;
        let w = c.window_tokens();
        let toks = random_tokens(c.max_context + 3, 12, 20 + seed);
        let mut dec = Decoder::new(&lm);
        dec.feed(&toks[..c.max_context])?;
        dec.reset();
        let mut ctx = toks[w..c.max_context].to_vec();
        let got = dec.feed_last(&ctx)?;
        let fresh = lm.logits(&ctx)?;
        let d = max_diff(&got, &fresh[fresh.len() - c.vocab..]);
        ensure!(d < CACHE_TOL, "seed {seed}: post-slide logits differ by {d:.2e}");
        worst = worst.max(d);
        for &t in &toks[c.max_context..] {
            ctx.push(t);
            let got = dec.feed_last(&[t])?;
            let fresh = lm.logits(&ctx)?;
            let d = max_diff(&got, &fresh[fresh.len() - c.vocab..]);
            ensure!(d < CACHE_TOL, "seed {seed}: step after the slide differs by {d:.2e}");
            worst = worst.max(d);
        }
    }
    Ok(format!("3 seeds, max |Δlogit| {worst:.1e} < {CACHE_TOL:.0e}"))
}

// ---- criterion 4 -------------------------------------------------------

fn criterion_4() -> Result<String> {
    let desk = TokenizerConfig::desk(8).token_rate(100.0);
    let full = TokenizerConfig::paper(68).token_rate(100.0);
    ensure!(desk == 100.0, "desk rate {desk}");
    ensure!(full == 400.0, "full-scale rate {full}");
    let plan = RolloutConfig::paper(0).plan(&TokenizerConfig::paper(68), 100.0)?;
    ensure!(plan.context_tokens() == 24_576, "61.44 s context holds {} tokens", plan.context_tokens());
    Ok(format!("desk {desk} tok/s, full scale {full} tok/s, 61.44 s = {} tokens", plan.context_tokens()))
}

// ---- criterion 5 -------------------------------------------------------

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut r = SeededRng::named(seed, "acceptance/white");
    (0..n).map(|_| r.normal()).collect()
}

fn criterion_5() -> Result<String> {
    let fs = 100.0;
    let freqs: Vec<f64> = (0..101).map(|k| k as f64 * 0.5).collect();
    let psd: Vec<f64> = freqs.iter().map(|f| if *f > 0.0 { f.powi(-2) } else { 0.0 }).collect();
    let e = one_over_f_exponent(&freqs, &psd, 3.0, 40.0)?;
    ensure!((e - 2.0).abs() <= 1e-6, "1/f exponent {e}");

    let dfa_mean = |walk: bool| -> Result<f64> {
        let mut s = 0.0;
        for seed in 0..50 {
            let mut x = white(6000, seed + if walk { 1000 } else { 0 });
            if walk {
                x = x.iter().scan(0.0, |a, v| { *a += v; Some(*a) }).collect();
            }
            s += dfa_exponent(&x, fs)?;
        }
        Ok(s / 50.0)
    };
    let (dw, dr) = (dfa_mean(false)?, dfa_mean(true)?);
    ensure!((dw - 0.5).abs() <= 0.1, "DFA of white noise {dw}");
    ensure!((dr - 1.5).abs() <= 0.15, "DFA of a random walk {dr}");

    let spectrum = |seed: u64| {
        let mut r = SeededRng::named(seed, "acceptance/spectrum");
        PsdEstimate {
            freqs: freqs.clone(),
            power: vec![freqs.iter().map(|_| r.uniform(0.0, 1.0)).collect()],
            fs,
            config: WelchConfig::default(),
        }
    };
    let mut jsd_max = 0.0f64;
    for seed in 0..100 {
        let (a, b) = (spectrum(seed), spectrum(seed + 500));
        let (ab, ba) = (psd_jsd(&a, &b)?, psd_jsd(&b, &a)?);
        ensure!((ab - ba).abs() < 1e-12, "JSD is not symmetric: {ab} vs {ba}");
        ensure!((0.0..=1.0).contains(&ab), "JSD {ab} outside [0, 1]");
        ensure!(psd_jsd(&a, &a)?.abs() < 1e-12, "JSD of a spectrum with itself");
        jsd_max = jsd_max.max(ab);
    }
    let mut disjoint = spectrum(0);
    let mut other = spectrum(0);
    for (k, (p, q)) in disjoint.power[0].iter_mut().zip(other.power[0].iter_mut()).enumerate() {
        if k % 2 == 0 {
            *p = 0.0;
        } else {
            *q = 0.0;
        }
    }
    let dj = psd_jsd(&disjoint, &other)?;
    ensure!((dj - 1.0).abs() < 1e-9, "disjoint spectra give JSD {dj}");

    let rows = vec![white(3000, 7), white(3000, 8)];
    let dup = vec![rows[0].clone(), rows[1].clone(), rows[0].clone()];
    let coh = coherence_matrix(&dup, fs, &WelchConfig::default(), (1.0, 45.0))?;
    ensure!((coh[(0, 2)] - 1.0).abs() <= 1e-6, "duplicated channel coherence {}", coh[(0, 2)]);

    let w = wilcoxon_signed_rank(&[0.3, 1.2, 0.7, 2.0, 0.1, 0.9])?;
    ensure!(w.exact && (w.p - 0.03125).abs() < 1e-15, "exact p {}", w.p);

    let true_median = 1.3;
    let mut covered = 0;
    for trial in 0..200u64 {
        let mut r = SeededRng::named(1000 + trial, "acceptance/coverage");
        let d: Vec<f64> = (0..25).map(|_| r.normal() + true_median).collect();
        let ci = bootstrap_ci(&d, 2000, trial)?;
        if ci.lo <= true_median && true_median <= ci.hi {
            covered += 1;
        }
    }
    ensure!(covered >= 180, "bootstrap covered {covered} of 200");
    Ok(format!(
        "1/f {e:.7}, DFA white {dw:.3} walk {dr:.3}, JSD ≤ {jsd_max:.3} symmetric, coherence {:.7}, p {}, coverage {covered}/200",
        coh[(0, 2)],
        w.p
    ))
}

// ---- criterion 6 -------------------------------------------------------

fn rest_session(i: usize, seconds: f64, seed: u64) -> Recording {
    let clean = CleanConfig {
        min_segment_s: 1.0,
        ..CleanConfig::default()
    };
    let spec = SessionSpec {
        session_id: format!("s{i:02}"),
        subject_id: format!("sub{i:02}"),
        task: TaskType::Rest,
        channels: 8,
        fs: 100.0,
        duration_s: seconds,
        seed: seed.wrapping_add(i as u64 * 7919),
        alpha_peak: 8.0 + 0.2 * i as f64,
        pink_slope: 1.0,
        band_gains: BandGains::for_task(TaskType::Rest),
        mixing_seed: 5,
    };
    synth_session(&spec, &clean).expect("synthetic session")
}

fn criterion_6() -> Result<String> {
    let welch = WelchConfig::default();
    // 20 runs put exactly the two extremes outside a 5–95 % band
    let real: Vec<Recording> = (0..20).map(|i| rest_session(i, 41.0, SEED)).collect();
    let grid = WindowGrid::new(41.0, 4.0, 1.0)?;
    let s = stability_curves(&real, &real, &grid, &welch)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &s.curves {
        for &o in &c.oer {
            ensure!((o - 0.10).abs() <= 0.07, "{} OER {o}", c.metric.name());
            lo = lo.min(o);
            hi = hi.max(o);
        }
    }

    let ctx: Vec<Recording> = (0..6).map(|i| rest_session(i, 20.48, SEED + 1)).collect();
    let tasks = vec![TaskType::Rest; ctx.len()];
    let p = PartnerMap::within_tasks(&tasks, SEED)?;
    let d = prefix_divergence(&ctx, &ctx, &p, &tasks, &[5.0, 10.0, 20.48], &welch)?;
    for mc in &d.metrics {
        for i in 0..ctx.len() {
            ensure!(mc.correct[i].iter().all(|&v| v == 0.0), "{} correct ≠ 0", mc.metric.name());
            ensure!(mc.target_swap[i] == mc.real_real[i], "{} target-swap ≠ real-real", mc.metric.name());
        }
    }
    Ok(format!(
        "OER ∈ [{lo:.3}, {hi:.3}] over {} windows × 10 metrics; D_correct ≡ 0 and D_target-swap ≡ D_real-real for 3 metrics",
        grid.len()
    ))
}

// ---- criteria 7 to 9 ---------------------------------------------------

struct Run {
    dir: std::path::PathBuf,
    stage_s: Vec<(Stage, f64)>,
}

impl Run {
    fn seconds(&self, s: Stage) -> f64 {
        self.stage_s.iter().find(|(t, _)| *t == s).map_or(0.0, |(_, v)| *v)
    }
}

fn run_pipeline(dir: &Path) -> Result<Run> {
    let mut p = Pipeline::new(RunConfig::desk(SEED, dir.to_path_buf()));
    p.force = true;
    let mut stage_s = Vec::new();
    for s in Stage::ALL {
        let t0 = Instant::now();
        p.run(s).with_context(|| format!("stage {}", s.name()))?;
        let secs = t0.elapsed().as_secs_f64();
        println!("  [{}] {} in {secs:.0} s", dir.display(), s.name());
        stage_s.push((s, secs));
    }
    Ok(Run {
        dir: dir.to_path_buf(),
        stage_s,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn criterion_7(run: &Run) -> Result<String> {
    let log: Vec<EpochLog> = read_json(&run.dir.join("tokenizer/log.json"))?;
    let cfg = RunConfig::desk(SEED, run.dir.clone());
    let k = cfg.tokenizer.model.codebook_size as f64;
    ensure!(log.len() <= 20, "{} epochs", log.len());
    let first = log.first().and_then(|l| l.eval.as_ref()).context("no held-out diagnostics")?;
    let last = log.last().and_then(|l| l.eval.as_ref()).context("no held-out diagnostics")?;
    ensure!(last.pcc >= 0.5, "held-out PCC {:.3}", last.pcc);
    ensure!(last.mae <= 0.6, "held-out MAE {:.3}", last.mae);
    ensure!(
        last.loss.total < first.loss.total,
        "held-out loss {:.4} after epoch 1, {:.4} at the end",
        first.loss.total,
        last.loss.total
    );
    let min_ppl = last.perplexity.iter().copied().fold(f64::INFINITY, f64::min);
    ensure!(min_ppl >= 0.5 * k, "codebook perplexity {:?} below {}", last.perplexity, 0.5 * k);
    let secs = run.seconds(Stage::TrainTokenizer);
    ensure!(secs <= 1800.0, "tokenizer training took {secs:.0} s");
    Ok(format!(
        "{} epochs in {secs:.0} s: PCC {:.3}, MAE {:.3}, loss {:.3} → {:.3}, perplexity {:?} of K = {k}",
        log.len(),
        last.pcc,
        last.mae,
        first.loss.total,
        last.loss.total,
        last.perplexity.iter().map(|p| (p * 10.0).round() / 10.0).collect::<Vec<_>>()
    ))
}

fn criterion_8(run: &Run) -> Result<String> {
    let secs = run.seconds(Stage::TrainLm);
    ensure!(secs <= 5400.0, "language model training took {secs:.0} s");
    let roll = run.dir.join("rollouts");
    let batch = BatchManifest::load(&roll)?;
    let rest = batch.pairs.iter().filter(|p| p.task == TaskType::Rest).count();
    ensure!(rest >= 8, "{rest} rest rollouts");
    for p in &batch.pairs {
        ensure!(p.context_s == 20.48, "context {} s", p.context_s);
        ensure!(((p.total_s - p.context_s) - 40.96).abs() < 1e-9, "horizon {} s", p.total_s - p.context_s);
    }
    let report = EvalReport::from_json(&std::fs::read_to_string(run.dir.join("eval/report.json"))?)?;
    let rows = &report.task(TaskType::Rest).context("no rest report")?.summary;
    let row = |m: DivMetric| {
        rows.iter()
            .find(|r| r.metric == m && r.control == Pairing::PromptSwap)
            .with_context(|| format!("no prompt-swap row for {}", m.name()))
    };
    let jsd = row(DivMetric::PsdJsd)?;
    let cov = row(DivMetric::Covariance)?;
    let curve: ContextCurve = read_json(&run.dir.join("lm/context_curve.json"))?;
    let detail = format!(
        "{rest} rest rollouts, τ = {} s: PSD-JSD Δ {:.4} (p {:?}), covariance Δ {:.4}; context curve {:.3} → {:.3} bits; LM {secs:.0} s",
        jsd.tau_s, jsd.delta, jsd.p, cov.delta, curve.first_decile, curve.last_decile
    );
    ensure!(jsd.delta > 0.0 && jsd.p.is_some_and(|p| p < 0.05), "PSD-JSD not separated: {detail}");
    ensure!(cov.delta > 0.0, "covariance not separated: {detail}");
    ensure!(curve.first_decile > curve.last_decile, "context does not help: {detail}");
    Ok(detail)
}

fn criterion_9(a: &Run, b: &Run) -> Result<String> {
    let (ma, mb) = (RunManifest::load(&a.dir)?, RunManifest::load(&b.dir)?);
    let mut n = 0;
    for s in [Stage::TrainTokenizer, Stage::TrainLm, Stage::Rollout, Stage::Evaluate] {
        let (ra, rb) = (&ma.stages[s.name()], &mb.stages[s.name()]);
        ensure!(ra.outputs.keys().eq(rb.outputs.keys()), "{}: different file sets", s.name());
        for (k, h) in &ra.outputs {
            ensure!(&rb.outputs[k] == h, "{k} differs between runs");
            n += 1;
        }
    }
    for f in ["tokenizer/tokenizer.btck", "lm/lm.btck", "eval/report.json"] {
        ensure!(std::fs::read(a.dir.join(f))? == std::fs::read(b.dir.join(f))?, "{f} differs");
    }
    Ok(format!("{n} checkpoint, rollout and report files bit-identical"))
}

// ---- driver ------------------------------------------------------------

struct Line {
    id: usize,
    title: &'static str,
    result: Result<String>,
    seconds: f64,
    budget_s: Option<f64>,
}

fn timed(id: usize, title: &'static str, budget_s: Option<f64>, f: impl FnOnce() -> Result<String>) -> Line {
    let t0 = Instant::now();
    let result = f();
    let line = Line {
        id,
        title,
        result,
        seconds: t0.elapsed().as_secs_f64(),
        budget_s,
    };
    print_line(&line);
    line
}

fn passed(l: &Line) -> bool {
    l.result.is_ok() && l.budget_s.map_or(true, |b| l.seconds <= b)
}

fn print_line(l: &Line) {
    let verdict = if passed(l) { "PASS" } else { "FAIL" };
    let detail = match &l.result {
        Ok(s) => s.clone(),
        Err(e) => format!("{e:#}"),
    };
    let budget = l.budget_s.map_or(String::new(), |b| format!(" (budget {b:.0} s)"));
    println!("criterion {} {verdict} {}: {detail} [{:.1} s{budget}]", l.id, l.title, l.seconds);
}

fn main() -> ExitCode {
    let mut lines = vec![
        timed(1, "gradient suite", Some(120.0), criterion_1),
        timed(2, "structural invariants", Some(120.0), criterion_2),
        timed(3, "cache equivalence", Some(120.0), criterion_3),
        timed(4, "token-rate law", None, criterion_4),
        timed(5, "metric oracles", Some(300.0), criterion_5),
        timed(6, "protocol self-tests", Some(180.0), criterion_6),
    ];

    let keep = std::env::var_os("ACCEPTANCE_RUN_DIR").map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let a = run_pipeline(&root.join("run-a"));
    match &a {
        Ok(run) => {
            lines.push(timed(7, "tokenizer training", None, || criterion_7(run)));
            lines.push(timed(8, "conditional specificity", None, || criterion_8(run)));
        }
        Err(e) => {
            for (id, title) in [(7, "tokenizer training"), (8, "conditional specificity")] {
                lines.push(timed(id, title, None, || Err(anyhow::anyhow!("pipeline failed: {e:#}"))));
            }
        }
    }
    let b = a.as_ref().ok().map(|_| run_pipeline(&root.join("run-b")));
    lines.push(timed(9, "determinism", None, || match (&a, b) {
        (Ok(a), Some(Ok(b))) => criterion_9(a, &b),
        (_, Some(Err(e))) => Err(e.context("second run failed")),
        _ => Err(anyhow::anyhow!("first run failed")),
    }));

    println!("---- acceptance summary ----");
    for l in &lines {
        print_line(l);
    }
    let failed = lines.iter().filter(|l| !passed(l)).count();
    println!("{} of {} criteria pass", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

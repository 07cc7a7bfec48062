use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use diffcore::gradcheck::check;
use diffcore::{checkpoint, DftBasis, SeededRng, Tape, Tensor, Var};
use flatgpt::{flat_index, flatten, position_of, unflatten};
use neurometrics::{coherence_matrix, dfa_exponent, one_over_f_exponent, psd_jsd, welch_psd, WelchConfig};
use stresslab::wilcoxon_signed_rank;
use tokmix::{CodebookSet, TokenGrid, TokenizerConfig};

use crate::manifest::{stale_files, RunManifest};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<String>;

const GRAD_TOL: f64 = 1e-3;

fn grad_suite() -> Result<String> {
    type Build = fn(&mut Tape<f64>, &[Var]) -> diffcore::Result<Var>;
    let basis = DftBasis::<f64>::new(8);
    let dft = |t: &mut Tape<f64>, v: &[Var], b: &DftBasis<f64>| -> diffcore::Result<Var> {
        let f = t.real_dft(v[0], b)?;
        t.complex_abs(f)
    };
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("conv1d", vec![vec![2, 3, 8], vec![4, 3, 3]], |t, v| t.conv1d_causal(v[0], v[1], None, 2)),
        ("conv_transpose1d", vec![vec![2, 3, 4], vec![3, 2, 4]], |t, v| {
            t.conv_transpose1d_causal(v[0], v[1], None, 2)
        }),
        ("softmax", vec![vec![3, 5]], |t, v| t.softmax(v[0])),
        ("rms_norm", vec![vec![3, 5], vec![5]], |t, v| t.rms_norm(v[0], v[1], 1e-6)),
        ("pearson_rows", vec![vec![3, 7], vec![3, 7]], |t, v| t.pearson_rows(v[0], v[1])),
        ("cross_entropy", vec![vec![4, 6]], |t, v| t.cross_entropy(v[0], &[0, 5, 2, 3])),
        ("elu_silu", vec![vec![2, 6]], |t, v| {
            let e = t.elu(v[0]);
            Ok(t.silu(e))
        }),
    ];
    let mut worst = 0.0f64;
    for (name, shapes, f) in &cases {
        for i in 0..5 {
            let mut rng = SeededRng::named(i, name);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
            let rep = check(&inputs, 1e-3, f)?;
            ensure!(rep.rel_err < GRAD_TOL, "{name} instance {i}: relative error {:.2e}", rep.rel_err);
            worst = worst.max(rep.rel_err);
        }
    }
    for i in 0..5 {
        let mut rng = SeededRng::named(i, "dft");
        let x = Tensor::randn(&[2, 8], 1.0, &mut rng);
        let rep = check(&[x], 1e-3, |t, v| dft(t, v, &basis))?;
        ensure!(rep.rel_err < GRAD_TOL, "real_dft instance {i}: relative error {:.2e}", rep.rel_err);
        worst = worst.max(rep.rel_err);
    }
    Ok(format!("{} ops × 5 instances, worst {worst:.1e}", cases.len() + 1))
}

fn flatten_bijection() -> Result<String> {
    let mut rng = SeededRng::named(0, "selfcheck/flatten");
    for _ in 0..100 {
        let (t, h, q, k) = (1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(4), 2 + rng.below(30));
        let codes: Vec<u32> = (0..t * h * q).map(|_| rng.below(k) as u32).collect();
        let g = TokenGrid::new(t, h, q, k, 7, codes)?;
        ensure!(unflatten(&flatten(&g), k, 7)? == g, "round trip failed for extents ({t}, {h}, {q})");
        for i in 1..=t * h * q {
            let (a, b, c) = position_of(i, h, q);
            ensure!(flat_index(a, b, c, h, q) == i, "index {i} does not round-trip");
        }
    }
    Ok("100 random extents".into())
}

fn rvq_monotone() -> Result<String> {
    let mut rng = SeededRng::named(0, "selfcheck/rvq");
    let (levels, k, d, n) = (4, 16, 3, 64);
    let mut books = CodebookSet::new(levels, k, d, &mut rng);
    for lvl in books.levels.iter_mut() {
        for (i, c) in lvl.codes.iter_mut().enumerate() {
            // code 0 stays at the origin so no level can add error
            *c = if i < d { 0.0 } else { rng.normal() as f32 };
        }
    }
    let z: Vec<f32> = (0..n * d).map(|_| rng.normal() as f32).collect();
    let qz = books.quantize(&z)?;
    for i in 0..n {
        let mut prev = f64::INFINITY;
        for lvl in 0..levels {
            let e: f64 = qz.residuals[lvl][i * d..(i + 1) * d].iter().map(|&v| (v as f64).powi(2)).sum();
            ensure!(e <= prev, "vector {i}: residual grew at level {lvl}");
            prev = e;
        }
        ensure!(qz.final_err[i] <= prev, "vector {i}: final residual grew");
    }
    Ok(format!("{n} vectors × {levels} levels"))
}

fn metric_oracles() -> Result<String> {
    let freqs: Vec<f64> = (0..101).map(|k| k as f64 * 0.5).collect();
    let psd: Vec<f64> = freqs.iter().map(|f| if *f > 0.0 { f.powi(-2) } else { 0.0 }).collect();
    let e = one_over_f_exponent(&freqs, &psd, 3.0, 40.0)?;
    ensure!((e - 2.0).abs() < 1e-6, "1/f exponent of an inverse-square spectrum is {e}");

    let fs = 100.0;
    let mut rng = SeededRng::named(0, "selfcheck/metrics");
    let mut white = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal()).collect() };
    let rows = vec![white(3000), white(3000)];
    let dup = vec![rows[0].clone(), rows[1].clone(), rows[0].clone()];
    let coh = coherence_matrix(&dup, fs, &WelchConfig::default(), (1.0, 45.0))?;
    ensure!((coh[(0, 2)] - 1.0).abs() < 1e-6, "duplicated channel coherence {}", coh[(0, 2)]);

    let a = welch_psd(&rows[..1], fs, &WelchConfig::default())?;
    let b = welch_psd(&[rows[0].iter().scan(0.0, |s, v| { *s += v; Some(*s) }).collect()], fs, &WelchConfig::default())?;
    let (ab, ba) = (psd_jsd(&a, &b)?, psd_jsd(&b, &a)?);
    ensure!(ab == ba, "JSD is not symmetric: {ab} vs {ba}");
    ensure!((0.0..=std::f64::consts::LN_2).contains(&ab), "JSD {ab} outside [0, ln 2]");
    ensure!(psd_jsd(&a, &a)?.abs() < 1e-12, "JSD of a spectrum with itself is not 0");

    let mean = (0..10).map(|_| dfa_exponent(&white(6000), fs)).sum::<neurometrics::Result<f64>>()? / 10.0;
    ensure!((mean - 0.5).abs() < 0.1, "DFA exponent of white noise {mean}");
    Ok(format!("1/f {e:.6}, coherence {:.6}, JSD {ab:.4}, DFA {mean:.3}", coh[(0, 2)]))
}

fn wilcoxon_enumeration() -> Result<String> {
    let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
    ensure!(w.exact, "n = 6 did not use exact enumeration");
    ensure!((w.p - 0.03125).abs() < 1e-12, "p = {} for six positive differences", w.p);
    Ok(format!("p = {}", w.p))
}

fn token_rate() -> Result<String> {
    let desk = TokenizerConfig::desk(8).token_rate(100.0);
    let full = TokenizerConfig::paper(68).token_rate(100.0);
    ensure!(desk == 100.0 && full == 400.0, "token rates {desk} and {full} per second");
    let ctx = (61.44 * full).round() as usize;
    ensure!(ctx == 24_576, "61.44 s holds {ctx} tokens");
    Ok(format!("desk {desk}/s, full scale {full}/s, 61.44 s = {ctx} tokens"))
}

/// Every artifact recorded in the run manifest still has its hash and
/// decodes with its reader.
fn run_dir_integrity(dir: &Path) -> Result<String> {
    let m = RunManifest::load(dir)?;
    if m.stages.is_empty() {
        bail!("no run manifest under {}", dir.display());
    }
    let mut n = 0;
    for (stage, rec) in &m.stages {
        let stale = stale_files(dir, &rec.outputs);
        ensure!(stale.is_empty(), "{stage}: hash mismatch in {}", stale.join(", "));
        for rel in rec.outputs.keys() {
            let p = dir.join(rel);
            let bad = |e: String| anyhow::anyhow!("{stage}: {rel} does not decode: {e}");
            match p.extension().and_then(|e| e.to_str()) {
                Some("btck") => drop(checkpoint::read(&p).map_err(|e| bad(e.to_string()))?),
                Some("megt") => drop(TokenGrid::read(&p).map_err(|e| bad(e.to_string()))?),
                Some("megr") => drop(megsynth::read_recording(&p).map_err(|e| bad(e.to_string()))?),
                _ => {}
            }
            n += 1;
        }
    }
    Ok(format!("{n} artifacts in {} stages", m.stages.len()))
}

/// Runs the fast invariant checks, plus artifact integrity of `run_dir`
/// when given.
pub fn selfcheck(run_dir: Option<&Path>) -> Vec<CheckRow> {
    let checks: [(&str, CheckFn); 6] = [
        ("gradients", grad_suite),
        ("flatten bijection", flatten_bijection),
        ("rvq monotonicity", rvq_monotone),
        ("metric oracles", metric_oracles),
        ("wilcoxon enumeration", wilcoxon_enumeration),
        ("token rate", token_rate),
    ];
    let row = |name: &str, f: &dyn Fn() -> Result<String>| {
        let t0 = Instant::now();
        let r = f();
        CheckRow {
            name: name.to_string(),
            passed: r.is_ok(),
            detail: r.unwrap_or_else(|e| format!("{e:#}")),
            seconds: t0.elapsed().as_secs_f64(),
        }
    };
    let mut rows: Vec<CheckRow> = checks.iter().map(|(n, f)| row(n, f)).collect();
    if let Some(dir) = run_dir {
        rows.push(row("run artifacts", &|| run_dir_integrity(dir)));
    }
    rows
}

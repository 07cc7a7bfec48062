//! Central finite-difference checks of tape gradients in `f64`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`check`]: the worst input's norm-wise relative error
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)`.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub rel_err: f64,
    pub worst_input: usize,
}

/// Builds the graph with `f` on fresh tapes, reducing its output to a scalar
/// with a fixed random projection, and compares the analytic gradient of
/// every input with central differences of step `h`.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut probe_tape = Tape::<f64>::inference();
    let probe_vars: Vec<Var> = inputs.iter().map(|t| probe_tape.constant(t.clone())).collect();
    let out = f(&mut probe_tape, &probe_vars)?;
    let out_shape = probe_tape.shape(out).to_vec();
    // deterministic, non-symmetric projection weights
    let proj = Tensor::from_fn(&out_shape, |i| ((i as f64 * 0.7548776662).fract() - 0.5) * 2.0 + 0.1);

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::inference();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars)?;
        Ok(tape
            .value(y)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let p = tape.constant(proj.clone());
    let prod = tape.mul(y, p)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let mut report = GradReport {
        rel_err: 0.0,
        worst_input: 0,
    };
    for (idx, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; inputs[idx].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[idx].numel() {
            let orig = inputs[idx].data()[j];
            xs[idx].data_mut()[j] = orig + h;
            let fp = eval(&xs)?;
            xs[idx].data_mut()[j] = orig - h;
            let fm = eval(&xs)?;
            xs[idx].data_mut()[j] = orig;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let denom = norm(&analytic).max(norm(&numeric)).max(1e-6);
        let rel = norm(&diff) / denom;
        if rel > report.rel_err {
            report = GradReport {
                rel_err: rel,
                worst_input: idx,
            };
        }
    }
    Ok(report)
}

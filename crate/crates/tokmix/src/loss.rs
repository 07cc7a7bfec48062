use diffcore::{DftBasis, Real, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TokError};

/// Values of each term of the reconstruction objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub l1: f64,
    /// Mean per-channel Pearson correlation (the objective uses `exp(−pcc)`).
    pub pcc: f64,
    pub commit: f64,
    pub amp: f64,
    pub phase: f64,
    /// Channel rows whose correlation was undefined and counted as 0.
    pub degenerate_rows: usize,
}

/// The objective on the tape plus its breakdown.
pub struct LossVars {
    pub total: Var,
    pub parts: LossParts,
}

/// `mean|x − x̂| + exp(−pcc) + commit + amp + ½·phase` for `x, x̂[B, C, L]`.
/// `amp` and `phase` compare per-channel DFT magnitudes and wrapped phase
/// differences.
pub fn tokenizer_loss<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    x_hat: Var,
    commit: Var,
    basis: &DftBasis<T>,
) -> Result<LossVars> {
    let s = tape.shape(x).to_vec();
    if s != tape.shape(x_hat) || s.len() != 3 {
        return Err(TokError::Shape(format!(
            "loss inputs {s:?} and {:?}",
            tape.shape(x_hat)
        )));
    }
    if basis.len() != s[2] {
        return Err(TokError::Shape(format!("DFT basis of length {} for windows of {}", basis.len(), s[2])));
    }
    let rows = [s[0] * s[1], s[2]];
    let xr = tape.reshape(x, &rows)?;
    let yr = tape.reshape(x_hat, &rows)?;

    let diff = tape.sub(xr, yr)?;
    let ad = tape.abs(diff);
    let l1 = tape.mean(ad);

    let r = tape.pearson_rows(xr, yr)?;
    let degenerate_rows = tape.degenerate_pearson_rows(xr, yr).len();
    let pcc = tape.mean(r);
    let neg = tape.scale(pcc, -1.0);
    let pcc_term = tape.exp(neg);

    let fx = tape.real_dft(xr, basis)?;
    let fy = tape.real_dft(yr, basis)?;
    let mx = tape.complex_abs(fx)?;
    let my = tape.complex_abs(fy)?;
    let dm = tape.sub(mx, my)?;
    let dm = tape.abs(dm);
    let amp = tape.mean(dm);
    let px = tape.complex_angle(fx)?;
    let py = tape.complex_angle(fy)?;
    let dp = tape.wrapped_abs_diff(px, py)?;
    let phase = tape.mean(dp);
    let half_phase = tape.scale(phase, 0.5);

    let mut total = tape.add(l1, pcc_term)?;
    total = tape.add(total, commit)?;
    total = tape.add(total, amp)?;
    total = tape.add(total, half_phase)?;

    let val = |t: &Tape<T>, v: Var| t.value(v).item().as_f64();
    let parts = LossParts {
        total: val(tape, total),
        l1: val(tape, l1),
        pcc: val(tape, pcc),
        commit: val(tape, commit),
        amp: val(tape, amp),
        phase: val(tape, phase),
        degenerate_rows,
    };
    Ok(LossVars { total, parts })
}

/// Commitment term `mean((z − stopgrad(z̃))²)` over every latent element.
pub fn commit_loss<T: Real>(tape: &mut Tape<T>, z: Var, zq: Var) -> Result<Var> {
    let target = tape.value(zq).clone();
    let c = tape.constant(target);
    let d = tape.sub(z, c)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

use diffcore::{DftBasis, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TokError};
use crate::loss::{commit_loss, tokenizer_loss, LossParts};
use crate::model::Tokenizer;
use crate::rvq::perplexity;

/// Held-out reconstruction quality of a frozen tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub windows: usize,
    /// Window-weighted mean of the objective and its terms.
    pub loss: LossParts,
    pub mae: f64,
    pub pcc: f64,
    pub amp_err: f64,
    pub phase_err: f64,
    pub commit: f64,
    /// Code-usage perplexity per RVQ level over all evaluated windows.
    pub perplexity: Vec<f64>,
}

/// Runs encode → quantize → decode over `windows` (each channel-major
/// `C × L_w`) in batches of `batch` and averages the loss terms.
pub fn tokenizer_diagnostics(tok: &Tokenizer, windows: &[Vec<f32>], batch: usize) -> Result<Diagnostics> {
    if windows.is_empty() || batch == 0 {
        return Err(TokError::Length("no windows to evaluate".into()));
    }
    let cfg = &tok.config;
    let basis = DftBasis::<f32>::new(cfg.window);
    let mut usage = vec![vec![0u64; cfg.codebook_size]; cfg.levels];
    let mut acc = LossParts::default();
    for chunk in windows.chunks(batch) {
        let n = chunk.len();
        let mut tape = Tape::inference();
        let b = tok.params.bind(&mut tape);
        let data: Vec<f32> = chunk.iter().flat_map(|w| w.iter().copied()).collect();
        let x = tape.constant(Tensor::new(&[n, cfg.channels, cfg.window], data)?);
        let z = tok.encode_var(&mut tape, &b, x)?;
        let qz = tok.books.quantize(tape.value(z).data())?;
        for row in qz.codes.chunks(cfg.levels) {
            for (q, &c) in row.iter().enumerate() {
                usage[q][c as usize] += 1;
            }
        }
        let zq = tape.straight_through(z, Tensor::new(tape.shape(z), qz.zq)?)?;
        let commit = commit_loss(&mut tape, z, zq)?;
        let x_hat = tok.decode_var(&mut tape, &b, zq, n)?;
        let p = tokenizer_loss(&mut tape, x, x_hat, commit, &basis)?.parts;
        let w = n as f64;
        acc.total += p.total * w;
        acc.l1 += p.l1 * w;
        acc.pcc += p.pcc * w;
        acc.commit += p.commit * w;
        acc.amp += p.amp * w;
        acc.phase += p.phase * w;
        acc.degenerate_rows += p.degenerate_rows;
    }
    let n = windows.len() as f64;
    let loss = LossParts {
        total: acc.total / n,
        l1: acc.l1 / n,
        pcc: acc.pcc / n,
        commit: acc.commit / n,
        amp: acc.amp / n,
        phase: acc.phase / n,
        degenerate_rows: acc.degenerate_rows,
    };
    Ok(Diagnostics {
        windows: windows.len(),
        mae: loss.l1,
        pcc: loss.pcc,
        amp_err: loss.amp,
        phase_err: loss.phase,
        commit: loss.commit,
        perplexity: usage.iter().map(|u| perplexity(u)).collect(),
        loss,
    })
}

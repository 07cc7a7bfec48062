//! Plain-text tables and plot data derived from an [`EvalReport`]. Output
//! depends only on the report, so re-rendering is byte-identical.

use std::fmt::Write;

use crate::divergence::Pairing;
use crate::report::EvalReport;
use crate::stats::quantile;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `(file name, contents)` for every table and plot-data file.
pub fn render_csvs(report: &EvalReport) -> Vec<(String, String)> {
    let mut files = Vec::new();

    let mut summary = String::from("task,metric,control,tau_s,n,delta,ci_lo,ci_hi,p,note\n");
    for t in &report.tasks {
        for r in &t.summary {
            writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{}",
                r.task.name(),
                r.metric.name(),
                r.control.name(),
                r.tau_s,
                r.n,
                r.delta,
                opt(r.ci_lo),
                opt(r.ci_hi),
                opt(r.p),
                csv_field(&r.note)
            )
            .unwrap();
        }
    }
    files.push(("summary.csv".to_string(), summary));

    let mut stab = String::from("task,metric,window_start_s,p5,p25,median,p75,p95,oer,iqr_ratio\n");
    let mut mean_oer = String::from("task,window_start_s,mean_oer\n");
    let mut feats = String::from("task,session,window_index,metric,value\n");
    for t in &report.tasks {
        let Some(s) = &t.stability else { continue };
        for c in &s.curves {
            for (w, start) in s.grid.starts_s.iter().enumerate() {
                writeln!(
                    stab,
                    "{},{},{},{},{},{},{},{},{},{}",
                    t.task.name(),
                    c.metric.name(),
                    start,
                    c.p5[w],
                    c.p25[w],
                    c.median[w],
                    c.p75[w],
                    c.p95[w],
                    c.oer[w],
                    opt(c.iqr_ratio[w])
                )
                .unwrap();
                for (run, v) in c.generated[w].iter().enumerate() {
                    writeln!(feats, "{},{},{w},{},{}", t.task.name(), t.sessions[run], c.metric.name(), opt(*v)).unwrap();
                }
            }
        }
        for (w, start) in s.grid.starts_s.iter().enumerate() {
            writeln!(mean_oer, "{},{},{}", t.task.name(), start, s.mean_oer[w]).unwrap();
        }
        for c in &s.curves {
            let mut plot = String::from("x,y,band_lo,band_hi,real_median\n");
            for (w, start) in s.grid.starts_s.iter().enumerate() {
                let g: Vec<f64> = c.generated[w].iter().flatten().copied().collect();
                let y = if g.is_empty() { None } else { Some(quantile(&g, 0.5)) };
                writeln!(
                    plot,
                    "{},{},{},{},{}",
                    start + s.grid.window_s / 2.0,
                    opt(y),
                    c.p5[w],
                    c.p95[w],
                    c.median[w]
                )
                .unwrap();
            }
            files.push((format!("plot_stability_{}_{}.csv", t.task.name(), c.metric.name()), plot));
        }
        let mut plot = String::from("x,y\n");
        for (w, start) in s.grid.starts_s.iter().enumerate() {
            writeln!(plot, "{},{}", start + s.grid.window_s / 2.0, s.mean_oer[w]).unwrap();
        }
        files.push((format!("plot_stability_{}_mean_oer.csv", t.task.name()), plot));
    }
    files.push(("stability.csv".to_string(), stab));
    files.push(("stability_mean_oer.csv".to_string(), mean_oer));
    files.push(("generated_features.csv".to_string(), feats));

    let mut div = String::from("task,metric,pairing,session,tau_s,value\n");
    for t in &report.tasks {
        let d = &t.divergence;
        for mc in &d.metrics {
            for p in Pairing::ALL {
                for (i, row) in mc.get(p).iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        writeln!(
                            div,
                            "{},{},{},{},{},{}",
                            t.task.name(),
                            mc.metric.name(),
                            p.name(),
                            d.sessions[i],
                            d.taus[k],
                            v
                        )
                        .unwrap();
                    }
                }
            }
            let mut plot = String::from("x,pairing,y,band_lo,band_hi\n");
            for p in Pairing::ALL {
                for (k, tau) in d.taus.iter().enumerate() {
                    let col: Vec<f64> = mc.get(p).iter().map(|r| r[k]).collect();
                    writeln!(
                        plot,
                        "{},{},{},{},{}",
                        tau,
                        p.name(),
                        quantile(&col, 0.5),
                        quantile(&col, 0.25),
                        quantile(&col, 0.75)
                    )
                    .unwrap();
                }
            }
            files.push((format!("plot_divergence_{}_{}.csv", t.task.name(), mc.metric.name()), plot));
        }
    }
    files.push(("divergence.csv".to_string(), div));

    if let Some(q) = &report.qualitative {
        let mut ts = String::from("t,real,generated\n");
        for (i, (r, g)) in q.real.iter().zip(&q.generated).enumerate() {
            writeln!(ts, "{},{},{}", i as f64 / q.fs, r, g).unwrap();
        }
        files.push(("plot_timeseries.csv".to_string(), ts));
        for (name, frames) in [("real", &q.stft_real), ("generated", &q.stft_generated)] {
            let mut s = String::from("t,f,magnitude\n");
            for (k, frame) in frames.iter().enumerate() {
                let t = k as f64 * q.stft_hop_s + q.stft_win_s / 2.0;
                for (b, m) in frame.iter().enumerate() {
                    writeln!(s, "{},{},{}", t, b as f64 / q.stft_win_s, m).unwrap();
                }
            }
            files.push((format!("plot_stft_{name}.csv"), s));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}


mod common;

use common::{permute_channels, rest_runs, session};
use megsynth::{Recording, TaskType};
use neurometrics::{MetricKind, WelchConfig};
use stresslab::{
    evaluate, prefix_divergence, render_csvs, specificity_summary, stability_curves, tau_grid, Continuation,
    DivMetric, EvalConfig, EvalError, EvalReport, Pairing, PartnerMap, WindowGrid,
};

fn welch() -> WelchConfig {
    WelchConfig::default()
}

#[test]
fn window_grid_fits_inside_the_horizon() {
    let g = WindowGrid::new(40.96, 10.0, 2.5).unwrap();
    assert_eq!(g.len(), 13);
    assert_eq!(*g.starts_s.last().unwrap(), 30.0);
    assert_eq!(WindowGrid::new(40.96, 30.0, 5.0).unwrap().len(), 3);
    assert_eq!(WindowGrid::new(296.96 - 61.44, 30.0, 5.0).unwrap().len(), 42);
    assert!(matches!(WindowGrid::new(35.0, 30.0, 5.0), Err(EvalError::Protocol(_))));
    assert_eq!(g.samples(2, 100.0), (500, 1000));
}

#[test]
fn generated_equal_to_real_sits_at_the_nominal_rate() {
    // With 20 runs the 5–95 % band has exactly the two extremes outside.
    let real = rest_runs(20, 41.0, 1);
    let grid = WindowGrid::new(41.0, 4.0, 1.0).unwrap();
    assert!(grid.len() >= 30);
    let s = stability_curves(&real, &real, &grid, &welch()).unwrap();
    for c in &s.curves {
        for (w, &oer) in c.oer.iter().enumerate() {
            assert!((oer - 0.10).abs() <= 0.07, "{} window {w}: {oer}", c.metric.name());
            assert_eq!(c.iqr_ratio[w], Some(1.0));
            assert!(c.p5[w] <= c.p25[w] && c.p25[w] <= c.p75[w] && c.p75[w] <= c.p95[w]);
        }
    }
    for &m in &s.mean_oer {
        assert!((m - 0.10).abs() <= 0.07);
    }
}

#[test]
fn independent_real_runs_fall_outside_near_the_nominal_rate() {
    let real = rest_runs(20, 41.0, 2);
    let other = rest_runs(20, 41.0, 3);
    let grid = WindowGrid::new(41.0, 4.0, 1.0).unwrap();
    let s = stability_curves(&real, &other, &grid, &welch()).unwrap();
    let mean = s.mean_oer.iter().sum::<f64>() / s.mean_oer.len() as f64;
    assert!((mean - 0.10).abs() <= 0.07, "mean OER {mean}");
}

#[test]
fn runaway_generation_is_always_outside() {
    let real = rest_runs(6, 21.0, 4);
    let flat: Vec<Recording> = real
        .iter()
        .map(|r| Recording {
            data: vec![1e6; r.data.len()],
            ..r.meta_only()
        })
        .collect();
    let grid = WindowGrid::new(21.0, 5.0, 2.5).unwrap();
    let s = stability_curves(&real, &flat, &grid, &welch()).unwrap();
    for c in &s.curves {
        assert!(c.oer.iter().all(|&o| o == 1.0), "{}: {:?}", c.metric.name(), c.oer);
    }
    assert!(s.mean_oer.iter().all(|&o| o == 1.0));
}

#[test]
fn envelopes_need_four_real_runs() {
    let real = rest_runs(3, 21.0, 5);
    let grid = WindowGrid::new(21.0, 5.0, 2.5).unwrap();
    assert!(matches!(
        stability_curves(&real, &real, &grid, &welch()),
        Err(EvalError::Protocol(_))
    ));
}

#[test]
fn partners_form_a_seeded_within_task_derangement() {
    let tasks: Vec<TaskType> = (0..11).map(|i| TaskType::ALL[i % 3]).collect();
    let p = PartnerMap::within_tasks(&tasks, 9).unwrap();
    p.validate(&tasks).unwrap();
    for (i, &j) in p.partner.iter().enumerate() {
        assert_ne!(i, j);
        assert_eq!(tasks[i], tasks[j]);
    }
    assert_eq!(p, PartnerMap::within_tasks(&tasks, 9).unwrap());

    let identity = PartnerMap {
        partner: (0..11).collect(),
        seed: 0,
    };
    assert!(matches!(identity.validate(&tasks), Err(EvalError::Protocol(_))));
    let mut cross = p.clone();
    let (a, b) = (0, 1);
    let (pa, pb) = (cross.partner.iter().position(|&x| x == a).unwrap(), cross.partner.iter().position(|&x| x == b).unwrap());
    cross.partner.swap(pa, pb);
    assert!(cross.validate(&tasks).is_err());
    assert!(PartnerMap::within_tasks(&[TaskType::Rest, TaskType::Visual, TaskType::Visual], 1).is_err());
}

#[test]
fn tau_grid_is_clipped_and_ends_at_the_horizon() {
    let (g, c) = tau_grid(&[5.0, 10.0, 15.0, 20.0, 30.0, 40.96, 60.0], 40.96);
    assert_eq!(g, vec![5.0, 10.0, 15.0, 20.0, 30.0, 40.96]);
    assert_eq!(c, vec![60.0]);
    let (g, _) = tau_grid(&[20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 200.0, 250.0], 235.52);
    assert_eq!(g, vec![20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 200.0, 235.52]);
}

#[test]
fn real_as_generated_zeroes_the_correct_pairing() {
    let real = rest_runs(5, 20.0, 6);
    let tasks = vec![TaskType::Rest; 5];
    let p = PartnerMap::within_tasks(&tasks, 2).unwrap();
    let d = prefix_divergence(&real, &real, &p, &tasks, &[5.0, 10.0, 15.0], &welch()).unwrap();
    assert_eq!(d.taus, vec![5.0, 10.0, 15.0, 20.0]);
    for mc in &d.metrics {
        for i in 0..5 {
            assert!(mc.correct[i].iter().all(|&v| v == 0.0), "{}", mc.metric.name());
            assert_eq!(mc.target_swap[i], mc.real_real[i]);
        }
    }
}

#[test]
fn swapped_prompts_separate_sessions_with_distinct_rhythms() {
    let peaks = [8.5, 9.5, 10.5, 11.5, 9.0, 11.0];
    let real: Vec<Recording> = peaks
        .iter()
        .enumerate()
        .map(|(i, &a)| session(i, 20.48, a, TaskType::Rest, 40))
        .collect();
    let tasks = vec![TaskType::Rest; real.len()];
    let p = PartnerMap::within_tasks(&tasks, 3).unwrap();
    let d = prefix_divergence(&real, &real, &p, &tasks, &[5.0, 10.0, 15.0], &welch()).unwrap();
    let jsd = d.metric(DivMetric::PsdJsd).unwrap();
    for i in 0..real.len() {
        for (t, tau) in d.taus.iter().enumerate() {
            assert_eq!(jsd.correct[i][t], 0.0);
            assert!(jsd.prompt_swap[i][t] > 0.0, "context {i} at {tau} s");
        }
    }
}

#[test]
fn channel_permutation_leaves_every_curve_unchanged() {
    let real = rest_runs(4, 20.0, 7);
    let generated = rest_runs(4, 20.0, 8);
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let pr: Vec<Recording> = real.iter().map(|r| permute_channels(r, &perm)).collect();
    let pg: Vec<Recording> = generated.iter().map(|r| permute_channels(r, &perm)).collect();
    let tasks = vec![TaskType::Rest; 4];
    let p = PartnerMap::within_tasks(&tasks, 1).unwrap();
    let a = prefix_divergence(&real, &generated, &p, &tasks, &[5.0, 10.0], &welch()).unwrap();
    let b = prefix_divergence(&pr, &pg, &p, &tasks, &[5.0, 10.0], &welch()).unwrap();
    for (ma, mb) in a.metrics.iter().zip(&b.metrics) {
        for pairing in Pairing::ALL {
            for (ra, rb) in ma.get(pairing).iter().zip(mb.get(pairing)) {
                for (x, y) in ra.iter().zip(rb) {
                    assert!((x - y).abs() < 1e-9, "{} {}: {x} vs {y}", ma.metric.name(), pairing.name());
                }
            }
        }
    }
    let grid = WindowGrid::new(20.0, 5.0, 2.5).unwrap();
    let sa = stability_curves(&real, &generated, &grid, &welch()).unwrap();
    let sb = stability_curves(&pr, &pg, &grid, &welch()).unwrap();
    for (ca, cb) in sa.curves.iter().zip(&sb.curves) {
        for (x, y) in ca.median.iter().zip(&cb.median) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{}", ca.metric.name());
        }
        assert_eq!(ca.oer, cb.oer);
    }
}

#[test]
fn identical_controls_report_no_separation() {
    let real = rest_runs(5, 20.0, 9);
    let tasks = vec![TaskType::Rest; 5];
    let p = PartnerMap::within_tasks(&tasks, 2).unwrap();
    let mut d = prefix_divergence(&real, &real, &p, &tasks, &[10.0], &welch()).unwrap();
    for mc in &mut d.metrics {
        mc.prompt_swap = mc.correct.clone();
    }
    let rows = specificity_summary(TaskType::Rest, &d, d.taus.len() - 1, 500, 1).unwrap();
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r.control == Pairing::PromptSwap) {
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.p, None);
        assert!(r.note.contains("no separation"));
        assert_eq!((r.ci_lo, r.ci_hi), (Some(0.0), Some(0.0)));
    }
    for r in rows.iter().filter(|r| r.control == Pairing::RealReal) {
        assert!(r.delta > 0.0);
        assert!(r.ci_lo.unwrap() <= r.delta && r.delta <= r.ci_hi.unwrap());
    }
}

fn continuations() -> Vec<Continuation> {
    let mut out = Vec::new();
    for (i, task) in [TaskType::Rest, TaskType::Visual].into_iter().enumerate() {
        for k in 0..5 {
            let idx = i * 10 + k;
            out.push(Continuation {
                session: format!("s{idx:02}"),
                task,
                real: session(idx, 21.0, 9.0 + 0.4 * k as f64, task, 11),
                generated: session(idx + 50, 21.0, 9.0 + 0.4 * k as f64, task, 12),
            });
        }
    }
    out
}

fn small_config() -> EvalConfig {
    EvalConfig {
        window_s: 5.0,
        stride_s: 2.5,
        taus: vec![5.0, 10.0, 30.0],
        n_boot: 500,
        qualitative_s: 4.0,
        ..EvalConfig::desk(3)
    }
}

#[test]
fn evaluation_reports_each_task_and_renders_deterministically() {
    let runs = continuations();
    let report = evaluate(&runs, &small_config()).unwrap();
    assert_eq!(report.tasks.len(), 2);
    let rest = report.task(TaskType::Rest).unwrap();
    assert_eq!(rest.sessions.len(), 5);
    assert_eq!(rest.divergence.taus, vec![5.0, 10.0, 21.0]);
    assert_eq!(rest.divergence.clipped, vec![30.0]);
    assert!(rest.notes.iter().any(|n| n.contains("30 s")));
    assert_eq!(rest.summary.len(), 9);
    let st = rest.stability.as_ref().unwrap();
    assert_eq!(st.curve(MetricKind::AlphaRatio).unwrap().oer.len(), st.grid.len());

    let json = report.to_json().unwrap();
    let back = EvalReport::from_json(&json).unwrap();
    assert_eq!(render_csvs(&back), render_csvs(&report));
    assert_eq!(report, evaluate(&runs, &small_config()).unwrap());

    let files = render_csvs(&report);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for want in [
        "summary.csv",
        "stability.csv",
        "divergence.csv",
        "plot_timeseries.csv",
        "plot_stft_real.csv",
        "plot_divergence_rest_psd_jsd.csv",
        "plot_stability_visual_mean_oer.csv",
    ] {
        assert!(names.contains(&want), "missing {want}");
    }
    let summary = &files.iter().find(|(n, _)| n == "summary.csv").unwrap().1;
    assert_eq!(summary.lines().count(), 1 + 18);
}

#[test]
fn a_single_context_task_cannot_be_evaluated() {
    let mut runs = continuations();
    runs.truncate(1);
    assert!(matches!(evaluate(&runs, &small_config()), Err(EvalError::Protocol(_))));
}

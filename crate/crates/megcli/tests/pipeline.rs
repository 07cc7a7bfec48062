use std::path::Path;

use megcli::{selfcheck, stage_seed, Pipeline, Preset, RunConfig, RunManifest, Stage, StageStatus, UsageError};
use megsynth::TaskType;

/// A run small enough for a unit test: four rest contexts, one tokenizer
/// epoch, a one-layer model trained for a few steps.
fn tiny(dir: &Path, seed: u64) -> RunConfig {
    let mut v = serde_json::to_value(RunConfig::desk(seed, dir.to_path_buf())).unwrap();
    for o in [
        "corpus.n_train=3",
        "corpus.n_eval=12",
        "corpus.duration_s=70",
        "tokenizer.train.epochs=1",
        "lm.n_layers=1",
        "lm.train.steps=3",
        "lm.train.batch_size=1",
        "lm.train.seq_tokens=256",
        "lm.train.log_every=2",
        "lm.curve_tokens=512",
        "eval.n_boot=200",
    ] {
        megcli::apply_override(&mut v, o).unwrap();
    }
    RunConfig::from_value(v, &[], None).unwrap()
}

fn usage<T: std::fmt::Debug>(r: anyhow::Result<T>) -> String {
    let e = r.unwrap_err();
    assert!(e.downcast_ref::<UsageError>().is_some(), "not a usage error: {e:#}");
    e.to_string()
}

#[test]
fn tiny_pipeline_runs_then_skips_then_guards_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), 5);
    let p = Pipeline {
        quiet: true,
        ..Pipeline::new(cfg.clone())
    };
    let first = p.run_all().unwrap();
    assert!(first.iter().all(|(_, s)| *s == StageStatus::Ran));
    for f in [
        "corpus/manifest.json",
        "tokenizer/tokenizer.btck",
        "tokens/index.json",
        "lm/lm.btck",
        "lm/context_curve.json",
        "rollouts/rollouts.json",
        "eval/report.json",
        "report/summary.csv",
        "run_manifest.json",
    ] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let report = stresslab::EvalReport::from_json(&std::fs::read_to_string(tmp.path().join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.task(TaskType::Rest).unwrap().sessions.len(), 4);

    // unchanged config and inputs: every stage is skipped
    let again = p.run_all().unwrap();
    assert!(again.iter().all(|(_, s)| *s == StageStatus::Skipped), "{again:?}");

    // a changed stage config is refused without --force
    let mut changed = cfg.clone();
    changed.lm.train.steps = 4;
    let mut q = Pipeline {
        quiet: true,
        ..Pipeline::new(changed)
    };
    let msg = usage(q.run(Stage::TrainLm));
    assert!(msg.contains("--force"), "{msg}");
    q.force = true;
    assert_eq!(q.run(Stage::TrainLm).unwrap(), StageStatus::Ran);
    // upstream stages stay skipped; downstream stages see new inputs
    assert_eq!(q.run(Stage::Tokenize).unwrap(), StageStatus::Skipped);
    assert_eq!(q.run(Stage::Rollout).unwrap(), StageStatus::Ran);

    // every recorded artifact passes the integrity check
    let rows = selfcheck(Some(tmp.path()));
    assert!(rows.iter().all(|r| r.passed), "{rows:?}");
}

#[test]
fn missing_predecessor_names_the_command_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline {
        quiet: true,
        ..Pipeline::new(tiny(tmp.path(), 1))
    };
    let msg = usage(p.run(Stage::TrainLm));
    assert!(msg.contains("megcli train-tokenizer"), "{msg}");
    let msg = usage(p.run(Stage::Evaluate));
    assert!(msg.contains("megcli rollout"), "{msg}");
}

#[test]
fn corrupted_artifact_is_named_and_blocks_later_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline {
        quiet: true,
        ..Pipeline::new(tiny(tmp.path(), 2))
    };
    p.run(Stage::GenData).unwrap();
    let m = RunManifest::load(tmp.path()).unwrap();
    let victim = m.stages["gen-data"].outputs.keys().find(|k| k.ends_with(".megr")).unwrap().clone();
    let path = tmp.path().join(&victim);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[40] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();

    let rows = selfcheck(Some(tmp.path()));
    let bad = rows.iter().find(|r| r.name == "run artifacts").unwrap();
    assert!(!bad.passed);
    assert!(bad.detail.contains(&victim), "{}", bad.detail);
    let msg = usage(p.run(Stage::TrainTokenizer));
    assert!(msg.contains(&victim) && msg.contains("megcli gen-data"), "{msg}");
    // regenerating restores the recorded content exactly
    std::fs::remove_file(&path).unwrap();
    let mut p = p;
    p.force = true;
    assert_eq!(p.run(Stage::GenData).unwrap(), StageStatus::Ran);
    assert!(selfcheck(Some(tmp.path())).iter().all(|r| r.passed));
}

#[test]
fn corrupted_checkpoint_fails_selfcheck() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline {
        quiet: true,
        ..Pipeline::new(tiny(tmp.path(), 3))
    };
    p.run(Stage::GenData).unwrap();
    p.run(Stage::TrainTokenizer).unwrap();
    let ck = tmp.path().join("tokenizer/tokenizer.btck");
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&ck, bytes).unwrap();
    let rows = selfcheck(Some(tmp.path()));
    let bad = rows.iter().find(|r| r.name == "run artifacts").unwrap();
    assert!(!bad.passed && bad.detail.contains("tokenizer/tokenizer.btck"), "{}", bad.detail);
    assert!(rows.iter().filter(|r| r.name != "run artifacts").all(|r| r.passed));
}

#[test]
fn paper_doc_preset_never_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(RunConfig::paper_doc(0, tmp.path().to_path_buf()));
    for s in Stage::ALL {
        let msg = usage(p.run(s));
        assert!(msg.contains("paper-doc"), "{msg}");
    }
    assert!(std::fs::read_dir(tmp.path()).unwrap().next().is_none(), "nothing is written");
}

#[test]
fn paper_doc_carries_the_full_scale_settings() {
    let c = RunConfig::paper_doc(0, "run".into());
    assert_eq!(c.preset, Preset::PaperDoc);
    assert_eq!(c.corpus.n_train, 2684 + 1719);
    assert_eq!(c.corpus.n_eval, 198);
    assert_eq!(c.corpus.config.channels, 68);
    assert_eq!(c.tokenizer.model.token_rate(c.corpus.config.fs), 400.0);
    assert_eq!(c.tokenizer.train.epochs, 20);
    assert_eq!(c.lm.model.max_context, 24_576);
    assert_eq!(c.lm.train.batch_size * c.lm.train.seq_tokens, 196_608);
    assert_eq!(c.rollout.config.context_s, 61.44);
    assert_eq!(c.rollout.config.total_s, 296.96);
    assert_eq!(c.eval.window_s, 30.0);
    c.validate().unwrap();
}

#[test]
fn desk_preset_is_consistent() {
    let c = RunConfig::desk(0, "run".into());
    c.validate().unwrap();
    let plan = c.rollout.config.plan(&c.tokenizer.model, c.corpus.config.fs).unwrap();
    assert_eq!(plan.context_tokens(), 2048);
    assert!((c.rollout.config.horizon_s() - 40.96).abs() < 1e-9);
}

#[test]
fn stage_seeds_flow_from_the_master_seed() {
    let a = RunConfig::desk(1, "run".into());
    let b = RunConfig::desk(2, "run".into());
    assert_eq!(a.lm.train.seed, stage_seed(1, "train-lm"));
    assert_eq!(a, RunConfig::desk(1, "run".into()));
    assert_ne!(a.tokenizer.train.seed, b.tokenizer.train.seed);
    assert_ne!(a.corpus_seed(), b.corpus_seed());
    let seeds = [a.corpus_seed(), a.tokenizer.train.seed, a.lm.train.seed, a.rollout.config.seed, a.eval.seed];
    for i in 0..seeds.len() {
        for j in 0..i {
            assert_ne!(seeds[i], seeds[j]);
        }
    }
}

#[test]
fn overrides_and_seed_environment() {
    let base = serde_json::to_value(RunConfig::desk(0, "run".into())).unwrap();
    let c = RunConfig::from_value(base.clone(), &["lm.n_layers=3".into(), "out_dir=elsewhere".into()], Some("17")).unwrap();
    assert_eq!(c.lm.model.n_layers, 3);
    assert_eq!(c.out_dir, Path::new("elsewhere"));
    assert_eq!(c.seed, 17);
    assert_eq!(c.lm.train.seed, stage_seed(17, "train-lm"));
    usage(RunConfig::from_value(base.clone(), &["lm.layers=3".into()], None));
    usage(RunConfig::from_value(base.clone(), &["lm.n_layers".into()], None));
    usage(RunConfig::from_value(base.clone(), &[], Some("abc")));
    usage(RunConfig::from_value(base.clone(), &["lm.vocab=32".into()], None));
    usage(RunConfig::from_value(base, &["lm.n_layers=\"two\"".into()], None));
}

#[test]
fn config_round_trips_through_json() {
    let c = RunConfig::desk(9, "run".into());
    let back = RunConfig::from_value(serde_json::from_str(&c.to_json()).unwrap(), &[], None).unwrap();
    assert_eq!(back, c);
}

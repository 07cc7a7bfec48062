use std::collections::BTreeSet;

use megsynth::{
    build_corpus, decode_recording, encode_recording, read_recording, write_recording, CorpusConfig,
    CorpusManifest, Recording, Split, SynthError, TaskType,
};

fn small() -> Recording {
    Recording {
        data: (0..12).map(|i| i as f32 * 0.25 - 1.0).collect(),
        channels: 3,
        fs: 100.0,
        session_id: "ses-1".into(),
        subject_id: "sub-α".into(),
        task: TaskType::Auditory,
    }
}

#[test]
fn write_then_read_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.megr");
    write_recording(&small(), &p).unwrap();
    assert_eq!(read_recording(&p).unwrap(), small());
}

#[test]
fn truncated_payload_is_a_format_error() {
    let b = encode_recording(&small());
    match decode_recording(&b[..b.len() - 2]) {
        Err(SynthError::Format { offset, reason }) => {
            assert!(reason.contains("samples"));
            assert!(offset < b.len());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn foreign_magic_is_a_format_error() {
    let mut b = encode_recording(&small());
    b[..4].copy_from_slice(b"RIFF");
    assert!(matches!(decode_recording(&b), Err(SynthError::Format { offset: 0, .. })));
    let mut v = encode_recording(&small());
    v[4] = 2;
    assert!(matches!(decode_recording(&v), Err(SynthError::Format { offset: 4, .. })));
}

fn tiny_cfg() -> CorpusConfig {
    let mut cfg = CorpusConfig {
        duration_s: 20.0,
        ..CorpusConfig::default()
    };
    cfg.clean.min_segment_s = 10.0;
    cfg
}

#[test]
fn corpus_is_reproducible_and_balanced() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = build_corpus(d1.path(), 5, 7, &tiny_cfg(), 9).unwrap();
    let m2 = build_corpus(d2.path(), 5, 7, &tiny_cfg(), 9).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(CorpusManifest::load(d1.path()).unwrap(), m1);
    for e in &m1.entries {
        let a = std::fs::read(d1.path().join(&e.path)).unwrap();
        let b = std::fs::read(d2.path().join(&e.path)).unwrap();
        assert_eq!(a, b, "{}", e.path);
    }

    let subjects = |s| m1.split(s).map(|e| e.subject.clone()).collect::<BTreeSet<_>>();
    assert!(subjects(Split::Train).is_disjoint(&subjects(Split::Eval)));

    let counts: Vec<usize> = TaskType::ALL
        .iter()
        .map(|t| m1.split(Split::Eval).filter(|e| e.task == *t).count())
        .collect();
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    assert_eq!(counts.iter().sum::<usize>(), 7);
}

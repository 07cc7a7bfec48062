#![allow(dead_code)]

use megsynth::{synth_session, BandGains, CleanConfig, Recording, SessionSpec, TaskType};

/// A seeded synthetic session of `seconds` at 100 Hz with 8 channels.
pub fn session(i: usize, seconds: f64, alpha_peak: f64, task: TaskType, seed: u64) -> Recording {
    let clean = CleanConfig {
        min_segment_s: 1.0,
        ..CleanConfig::default()
    };
    let spec = SessionSpec {
        session_id: format!("s{i:02}"),
        subject_id: format!("sub{i:02}"),
        task,
        channels: 8,
        fs: 100.0,
        duration_s: seconds,
        seed: seed.wrapping_add(i as u64 * 7919),
        alpha_peak,
        pink_slope: 1.0,
        band_gains: BandGains::for_task(task),
        mixing_seed: 5,
    };
    synth_session(&spec, &clean).unwrap()
}

pub fn rest_runs(n: usize, seconds: f64, seed: u64) -> Vec<Recording> {
    (0..n).map(|i| session(i, seconds, 10.0, TaskType::Rest, seed)).collect()
}

pub fn permute_channels(r: &Recording, perm: &[usize]) -> Recording {
    let data = perm.iter().flat_map(|&c| r.channel(c).to_vec()).collect();
    Recording { data, ..r.meta_only() }
}

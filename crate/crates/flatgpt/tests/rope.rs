use std::sync::Arc;

use diffcore::{RopeTable, SeededRng, Tape, Tensor};

const SPLIT: [usize; 3] = [4, 2, 2];

fn rotate(x: &[f64], pos: [f64; 3]) -> Vec<f64> {
    let table = Arc::new(RopeTable::multi_axis(&[pos], SPLIT, 1e4).unwrap());
    let mut tape = Tape::<f64>::inference();
    let v = tape.constant(Tensor::new(&[1, 1, 16], x.to_vec()).unwrap());
    let r = tape.rope(v, table).unwrap();
    tape.value(r).data().to_vec()
}

fn vec16(seed: u64) -> Vec<f64> {
    let mut r = SeededRng::new(seed, 0);
    (0..16).map(|_| r.normal()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn zero_triple_is_identity() {
    let x = vec16(1);
    assert_eq!(rotate(&x, [0.0; 3]), x);
}

#[test]
fn rotation_preserves_norm() {
    for s in 0..10 {
        let x = vec16(s);
        let pos = [s as f64 * 3.0, (s % 2) as f64, (s % 4) as f64];
        let y = rotate(&x, pos);
        assert!((dot(&x, &x).sqrt() - dot(&y, &y).sqrt()).abs() < 1e-6);
    }
}

#[test]
fn scores_depend_only_on_offset_along_each_axis() {
    let (q, k) = (vec16(3), vec16(4));
    for axis in 0..3 {
        for delta in [0.0, 1.0, 3.0, 7.0] {
            let mut base = None;
            for start in [0.0, 2.0, 5.0, 11.0] {
                let mut p1 = [1.0, 1.0, 1.0];
                let mut p2 = p1;
                p1[axis] = start + delta;
                p2[axis] = start;
                let s = dot(&rotate(&q, p1), &rotate(&k, p2));
                match base {
                    None => base = Some(s),
                    Some(b) => assert!((s - b).abs() < 1e-9, "axis {axis} delta {delta}"),
                }
            }
        }
    }
}

#[test]
fn each_axis_drives_only_its_own_pairs() {
    let x = vec16(5);
    let y = rotate(&x, [0.0, 3.0, 0.0]);
    // pairs (j, 8 + j): time owns j < 4, stream 4..6, level 6..8
    for j in (0..4).chain(6..8) {
        assert_eq!(y[j], x[j]);
        assert_eq!(y[8 + j], x[8 + j]);
    }
    assert_ne!(y[4], x[4]);
}

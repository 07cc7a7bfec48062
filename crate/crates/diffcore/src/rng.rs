/// Counter-based 64-bit generator: output `i` of stream `s` under seed `k`
/// is a pure function of `(k, s, i)`, so streams can be split and replayed
/// on any platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    key: u64,
    stream: u64,
    counter: u64,
    spare: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn stage names into stream ids.
pub fn hash_name(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed ^ mix64(stream.wrapping_add(GOLDEN)));
        Self {
            key,
            stream,
            counter: 0,
            spare: None,
        }
    }

    pub fn named(seed: u64, name: &str) -> Self {
        Self::new(seed, hash_name(name))
    }

    /// Independent child stream; does not advance `self`.
    pub fn split(&self, stream: u64) -> Self {
        Self::new(self.key, mix64(self.stream ^ mix64(stream)))
    }

    pub fn split_named(&self, name: &str) -> Self {
        self.split(hash_name(name))
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.key ^ self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (multiply-shift, negligible bias for small n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = std::f64::consts::TAU * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 4);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn known_first_output_is_stable() {
        // pins the generator so a silent change breaks reproducibility
        let mut r = SeededRng::new(0, 0);
        let first = r.next_u64();
        let mut again = SeededRng::new(0, 0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, FIRST_OUTPUT_SEED0_STREAM0);
    }

    // recomputed outside Rust from the mixing constants
    const FIRST_OUTPUT_SEED0_STREAM0: u64 = 0x16ad_76c1_5ca7_c8f0;

    #[test]
    fn normal_moments() {
        let mut r = SeededRng::new(11, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn below_in_range_and_covers() {
        let mut r = SeededRng::new(1, 1);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let v = r.below(5);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}

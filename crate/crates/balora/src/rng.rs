//! Deterministic random streams.
//!
//! All randomness in the crate flows from a single 64-bit master seed through
//! named streams, so that e.g. changing `steps_per_task` cannot perturb task
//! generation. Streams are derived by hashing the stream name into the master
//! seed and expanding with SplitMix64 into a xoshiro256++ state. The generator
//! is self-contained so results are bit-identical on every target.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// xoshiro256++ generator seeded from a (master seed, stream name) pair.
#[derive(Debug, Clone)]
pub struct StreamRng {
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl StreamRng {
    /// Derives the stream `name` from `master`. The same pair always yields
    /// the same sequence; distinct names yield statistically independent ones.
    pub fn from_stream(master: u64, name: &str) -> Self {
        let mut seed = master ^ fnv1a(name.as_bytes());
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut seed);
        }
        // An all-zero state would be a fixed point; splitmix output of any
        // seed is never all zeros across four draws, but guard regardless.
        if s == [0, 0, 0, 0] {
            s[0] = GOLDEN;
        }
        StreamRng {
            s,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal deviate via Box-Muller; the paired value is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 must be strictly positive for the logarithm.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / ((1u64 << 53) as f64 + 1.0));
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

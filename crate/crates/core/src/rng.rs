//! SplitMix64: a counter-based 64-bit generator.
//!
//! State is a single `u64` counter advanced by the golden-ratio increment
//! `0x9E3779B97F4A7C15`; each output is the counter passed through the
//! SplitMix64 finalizer (xor-shift 30/27/31 with multipliers
//! `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`). Derived quantities:
//!
//! * uniform `f64` in `[0, 1)`: top 53 bits times `2^-53`
//! * standard normal: Box-Muller, two uniforms per draw, cosine branch only
//! * integer below `n`: rejection sampling on the top bits
//!
//! Streams are reproducible in any language with 64-bit wrapping arithmetic.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    counter: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { counter: seed }
    }

    /// Independent child stream; `tag` separates purposes drawn from one seed.
    pub fn fork(&mut self, tag: u64) -> Self {
        let base = self.next_u64();
        Self::new(base ^ mix(tag.wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN_GAMMA);
        mix(self.counter)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

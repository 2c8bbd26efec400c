//! Deterministic pseudo-random streams.
//!
//! Every random decision in this crate flows from an explicit `u64` seed
//! through [`DetRng`]. Independent substreams are derived by hashing the
//! parent seed together with integer tags (trial index, stratum id, ...),
//! so parallel consumers draw from streams whose content does not depend
//! on scheduling or evaluation order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TAG_MULT: u64 = 0xD134_2543_DE82_EF95;

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a seed and a tag list into a single well-mixed value.
///
/// Pure function of its arguments; used for counter-based draws such as
/// random-projection matrix entries, where no sequential stream exists.
pub fn mix_tags(seed: u64, tags: &[u64]) -> u64 {
    let mut state = mix64(seed ^ GOLDEN);
    for &tag in tags {
        state = mix64(state ^ tag.wrapping_mul(TAG_MULT).wrapping_add(GOLDEN));
    }
    state
}

/// A splitmix64 generator with tag-derived substreams.
#[derive(Clone, Debug)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            state: mix64(seed ^ GOLDEN),
        }
    }

    /// Derive an independent stream from `(seed, tags)`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        DetRng {
            state: mix_tags(seed, tags),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased via rejection.
    pub fn gen_range(&mut self, n: usize) -> usize {
        assert!(n > 0, "gen_range needs a non-empty range");
        let n = n as u64;
        // 2^64 mod n; rejecting below it leaves a multiple of n outcomes.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    ///
    /// Consumes exactly two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `k` distinct indices from `0..population`, by partial Fisher-Yates.
    pub fn sample_indices(&mut self, population: usize, k: usize) -> Vec<usize> {
        assert!(k <= population, "cannot sample {k} of {population}");
        let mut idx: Vec<usize> = (0..population).collect();
        for i in 0..k {
            let j = i + self.gen_range(population - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

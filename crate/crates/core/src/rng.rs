//! Counter-based random streams keyed by `(seed, path, substream)`.
//!
//! Each path owns an independent stream derived purely from its key, so a
//! simulation sliced across any number of threads reproduces the serial run
//! bit for bit. The generator is a keyed splitmix64 walk; not cryptographic,
//! purely for simulation.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0xD6E8_FEB8_6659_FD93;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, path: u64, substream: u64) -> Self {
        let s0 = mix64(seed);
        let s1 = mix64(s0 ^ path.wrapping_mul(GOLDEN).wrapping_add(1));
        let key = mix64(s1 ^ substream.wrapping_mul(STREAM_SALT));
        Self { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential variate with the given rate, by inverse CDF.
    pub fn next_exp(&mut self, rate: f64) -> f64 {
        let u = self.next_f64();
        let clamped = if u == 0.0 { f64::MIN_POSITIVE } else { u };
        -clamped.ln() / rate
    }
}

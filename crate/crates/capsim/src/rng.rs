//! Counter-based deterministic value generation.
//!
//! Every random quantity in the crate is a pure function of a key tuple, so
//! eager runs, replays, and re-runs on other thread counts all observe the
//! same values. No generator state is ever shared between consumers.

/// Domain tags keep independent consumers of the same seed decorrelated.
pub const TAG_TENSOR: u64 = 1;
pub const TAG_SCALAR: u64 = 2;
pub const TAG_KERNEL_RNG: u64 = 3;
pub const TAG_ADDR: u64 = 4;
pub const TAG_GEN: u64 = 5;

/// SplitMix64 finalizer. Bijective on u64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a (seed, tag, a, b, c) key tuple.
pub fn key(seed: u64, tag: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ a.wrapping_mul(0xd6e8_feb8_6659_fd93));
    h = mix64(h ^ b.wrapping_mul(0xa076_1d64_78bd_642f));
    mix64(h ^ c.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

/// Map 64 random bits to [0, 1).
#[inline]
pub fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Map 64 random bits to [-1, 1).
#[inline]
pub fn symmetric(bits: u64) -> f64 {
    unit(bits) * 2.0 - 1.0
}

/// Tensor element value for (seed, tensor, iteration, lane).
pub fn tensor_value(seed: u64, tensor: u64, iteration: u64, lane: u64) -> f64 {
    symmetric(key(seed, TAG_TENSOR, tensor, iteration, lane))
}

/// Scalar input value for (seed, input id, iteration).
pub fn scalar_value(seed: u64, input: u64, iteration: u64) -> f64 {
    symmetric(key(seed, TAG_SCALAR, input, iteration, 0))
}

/// Per-lane noise drawn by an RNG-using kernel. Keyed by (seed, node,
/// iteration) so eager execution and graph replay observe identical draws.
pub fn kernel_noise(seed: u64, node: u64, iteration: u64, lane: u64) -> f64 {
    unit(key(seed, TAG_KERNEL_RNG, node, iteration, lane))
}

/// Synthetic device address for a tensor id: the stand-in recorded inside
/// captured parameter buffers. Bijective, so distinct tensors never alias.
pub fn synth_addr(tensor: u64) -> u64 {
    let a = mix64(tensor ^ 0xa5a5_5a5a_c3c3_3c3c);
    if a == 0 {
        0xa5a5_5a5a_c3c3_3c3c
    } else {
        a
    }
}

/// Sequential stream for construction-time choices (fixture generators).
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64, lane: u64) -> Self {
        Stream {
            state: key(seed, TAG_GEN, lane, 0, 0),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    pub fn next_unit(&mut self) -> f64 {
        unit(self.next_u64())
    }

    /// Uniform draw in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Uniform draw in [lo, hi] inclusive.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_unit() < p
    }
}

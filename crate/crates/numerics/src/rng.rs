//! Counter-based randomness: every draw is a pure function of its key, so
//! dropout masks do not depend on evaluation order.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) keyed by `(seed, step, layer, index)`.
pub fn counter_uniform(seed: u64, step: u64, layer: u64, index: u64) -> f32 {
    stream_uniform(stream_key(seed, step, layer), index)
}

/// The part of a `counter_uniform` key shared by one dropout call.
pub(crate) fn stream_key(seed: u64, step: u64, layer: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ step) ^ layer)
}

pub(crate) fn stream_uniform(key: u64, index: u64) -> f32 {
    ((mix64(key ^ index) >> 40) as f32) / ((1u64 << 24) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_in_range_and_keyed() {
        let mut sum = 0.0f64;
        for i in 0..10_000 {
            let u = counter_uniform(1, 2, 3, i);
            assert!((0.0..1.0).contains(&u));
            sum += u as f64;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
        assert_eq!(counter_uniform(1, 2, 3, 4), counter_uniform(1, 2, 3, 4));
        assert_ne!(counter_uniform(1, 2, 3, 4), counter_uniform(1, 2, 4, 4));
    }
}

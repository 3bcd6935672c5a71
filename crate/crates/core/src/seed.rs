//! Expansion of one master seed into independent per-component seeds.
//!
//! `derive_seed(master, label) = splitmix64(master XOR fnv1a64(label))`, where
//! `splitmix64` is the finalizer of Steele et al.'s SplitMix64 generator and
//! `fnv1a64` is the 64-bit FNV-1a hash of the UTF-8 label. Labels are
//! slash-separated paths such as `"train/shuffle"` or `"synthetic/cube/17"`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a64(label.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_value() {
        // first output of SplitMix64 seeded with 0
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
    }

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(42, "train/shuffle"), derive_seed(42, "train/dropout"));
        assert_ne!(derive_seed(42, "x"), derive_seed(43, "x"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}

//! Hierarchical seeding: every random stream in a run is derived from one
//! experiment seed and a path of labels.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `label` under `parent`.
pub fn derive(parent: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix64(parent), |h, b| splitmix64(h ^ u64::from(b)))
}

/// Child seed for an indexed label, e.g. `("class", 4)`.
pub fn derive_indexed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(parent, label) ^ splitmix64(index))
}

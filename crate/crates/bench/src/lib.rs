//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treg_core::{AttentionParams, FeatureMap, PointwiseLinear, StackedTemplates};

pub fn random_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_attention(seed: u64, c: usize, d: usize) -> AttentionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = |o: usize, i: usize| {
        let weights = (0..o * i).map(|_| rng.gen_range(-0.5..0.5)).collect();
        PointwiseLinear::new(o, i, weights, None).unwrap()
    };
    let q = enc(d, c);
    let k = enc(d, c);
    let v = enc(d, c);
    let w = enc(c, d);
    AttentionParams::new(q, k, v, w).unwrap()
}

pub fn random_templates(seed: u64, t: usize, c: usize, hw: usize) -> StackedTemplates {
    StackedTemplates::new((0..t).map(|i| random_map(seed + i as u64, c, hw, hw)).collect())
        .unwrap()
}

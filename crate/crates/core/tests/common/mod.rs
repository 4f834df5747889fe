#![allow(dead_code)]

use modcomb::{DataSet, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian inputs with arbitrary (not in-span) Gaussian targets.
pub fn gaussian_data(seed: u64, n: usize, d: usize, k: usize) -> DataSet<f64> {
    let mut r = rng(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect())
        .collect();
    let y: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| r.sample(StandardNormal)).collect())
        .collect();
    DataSet::new(&x, &y).unwrap()
}

/// [x, x², sin x] per component: 3d features.
pub fn mixed_features(d: usize) -> FeatureMap<f64> {
    FeatureMap::new("mixed", d, 3 * d, move |x: &[f64], out: &mut [f64]| {
        for i in 0..d {
            out[i] = x[i];
            out[d + i] = x[i] * x[i];
            out[2 * d + i] = x[i].sin();
        }
    })
}

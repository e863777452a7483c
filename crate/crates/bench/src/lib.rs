//! Synthetic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raft_core::{FeatureSet, Target};

/// `rows × cols` standard-normal features with `y = (f1 + f2)^2 + noise`.
pub fn regression_fixture(rows: usize, cols: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let data: Vec<Vec<f64>> = (0..cols).map(|_| (0..rows).map(|_| gauss()).collect()).collect();
    let y: Vec<f64> = (0..rows)
        .map(|r| {
            let s = data[0][r] + data.get(1).map_or(0.0, |c| c[r]);
            s * s + 0.1 * gauss()
        })
        .collect();
    let names: Vec<String> = (1..=cols).map(|i| format!("f{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    FeatureSet::from_columns(&names, data, Target::regression("y", y)).expect("valid fixture")
}

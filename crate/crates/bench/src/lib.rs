//! Inputs shared by the kernel benchmarks.

use diffusion_forge::catalogue::{example2_skew, svc_subspace};
use diffusion_forge::{ExtensionInput, SkewProductSpec};

/// Thinned planar skew product and its base.
pub fn thinned_pair() -> (SkewProductSpec, SkewProductSpec) {
    svc_subspace(2, 0.5, 1.0, 2.0).expect("catalogued")
}

pub fn extension_inputs() -> Vec<(&'static str, ExtensionInput)> {
    vec![
        ("example2", ExtensionInput::from_skew(&example2_skew(1.0).expect("catalogued")).expect("valid input")),
        ("thinned-bessel2", ExtensionInput::from_skew(&thinned_pair().0).expect("valid input")),
    ]
}

/// Geometric sample points on `[lo, hi]`.
pub fn points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

//! One-dimensional diffusions in natural scale, regular subspaces obtained by
//! selector thinning, skew products with spherical motion and the extension
//! of regular subspaces back to full diffusions.

pub mod catalogue;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod ext;
pub mod extension;
pub mod montecarlo;
pub mod quad;
pub mod scale;
pub mod selector;
pub mod sim;
pub mod skew;
pub mod sphere;
pub mod verify;

pub use density::Density;
pub use error::{Error, Result};
pub use ext::{ExtReal, Interval};
pub use scale::{eval_scale, invert_scale, thin_scale, ScaleFunction, ThinnedScale};
pub use selector::{full_selector, selector_report, svc_selector, SubspaceSelector, SvcBlock};
pub use diffusion::{
    classify_endpoint, classify_global, hitting_probability, BoundaryReport, DiffusionSpec, Endpoint,
    GlobalProperties, SpeedMeasure,
};
pub use montecarlo::{McConfig, McSummary};
pub use sim::{
    estimate_hitting, pushforward_speed, simulate_path, simulate_pcaf, ExitFlag, NaturalScaleModel, PathSample,
    TimeHorizon, WalkConfig,
};
pub use sphere::{simulate_sphere, SphereConfig};
pub use skew::{
    check_subspace_criterion, classify_skew, energy_tensor, radial_spec_from_density, AngularTest, CriterionReport,
    RadialTest, RotInvariantDensity, SkewProductSpec, TensorTestFunction,
};
pub use extension::{build_extension, build_qhat, classify_extension_case, decompose_qtilde, Extension, ExtensionCase, ExtensionInput, ExtensionReport};
pub use catalogue::{catalogue_lookup, parse_fixture, Fixture};
pub use verify::{run_verify, Check, VerifyConfig, VerifyReport};

//! Gaussian mixture reduction and Gaussian-sum state estimation.
//!
//! The crate provides:
//!
//! * core mixture types with moment-preserving pairwise merging
//!   ([`gaussmix`]),
//! * closed-form pairwise merge-cost criteria, centrally a Pearson
//!   chi-square divergence of a pair against its merge, plus weighted-KL,
//!   log-det bound, within-variance trace, ISD and numeric-KL comparisons
//!   ([`criteria`]),
//! * a greedy sequential reducer with deterministic tie-breaking and a
//!   global KL fitter ([`reduce`]),
//! * reference quadrature used both as a validation oracle and for the
//!   numeric-KL criterion ([`quad`]),
//! * Gaussian-sum filtering and two-filter smoothing for linear
//!   state-space models with Gaussian-mixture noises, capped by the
//!   reducer ([`ssm`]),
//! * built-in benchmark fixtures ([`fixtures`]) and a small CLI ([`cli`]).
//!
//! The `examples/` directory is the quickest tour; each example is a
//! runnable walkthrough of one capability:
//!
//! ```text
//! cargo run --release --example reduce_mixture      # greedy reduction + trace
//! cargo run --release --example compare_criteria    # KL-to-truth table
//! cargo run --release --example pearson_vs_quadrature
//! cargo run --release --example density_grid        # full vs reduced density
//! cargo run --release --example global_fit          # greedy vs fitted KL
//! cargo run --release --example trend_filter        # Gaussian-sum filter
//! cargo run --release --example trend_smoother      # two-filter smoother
//! ```
//!
//! The `gaussum` binary exposes the same machinery as subcommands
//! (`fixtures`, `reduce`, `compare`, `eval-grid`, `filter`, `smooth`).

pub mod cli;
pub mod criteria;
pub mod error;
pub mod fixtures;
pub mod gaussmix;
pub mod quad;
pub mod reduce;
pub mod ssm;
pub mod util;

pub use criteria::{
    kitagawa_wkl, pearson_chi2, ratio_integral_cross, ratio_integral_self, runnalls_bound,
    salmond_trace, score_pair, williams_isd, CriterionKind, PairScore,
};
pub use error::{Error, Result};
pub use gaussmix::{
    merge_geometry, moment_preserving_merge, GaussianComponent, GaussianMixture, MergeGeometry,
};
pub use quad::{default_box, integrate, kl_numeric, QuadSpec};
pub use reduce::{
    global_kl_fit, reduce_step, reduce_to, GlobalFitConfig, GlobalFitResult, ReductionStep,
    ReductionTrace,
};
pub use ssm::{
    default_prior, filter_step, predict_step, run_filter, run_filter_with, run_smoother,
    trend_model, FilterConfig, FilterRun, LinearStateSpaceModel,
};

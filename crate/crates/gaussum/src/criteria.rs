//! Pairwise merge-cost criteria.
//!
//! The central piece is the closed-form Pearson chi-square divergence of a
//! two-component sub-mixture against its moment-preserving merge, assembled
//! from two Gaussian density-ratio integrals:
//!
//! * the cross integral ∫ fa·fb / p dx, and
//! * the self integral ∫ fa² / p dx,
//!
//! where p is the merged Gaussian. Both have explicit expressions in the
//! [`MergeGeometry`] quantities; when the residual ratio precision is not
//! positive definite the ratio is unbounded, the integral diverges, and the
//! pair is excluded from merging ([`Error::UnboundedRatio`]).
//!
//! Alongside it live the comparison criteria: the weighted pairwise KL
//! form, the log-determinant upper bound on the KL increase of a merge, the
//! within-variance trace increase, the integrated squared difference of two
//! mixtures, and a numeric-KL score for a candidate merge.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{
    merge_geometry, moment_preserving_merge, symmetrize, GaussianComponent, GaussianMixture,
    MergeGeometry,
};
use crate::quad::{kl_numeric, QuadSpec};

/// Scores at or above this magnitude of negative are numeric failures; less
/// negative values are clamped to zero.
const NEG_CLAMP: f64 = -1e-10;

/// Selector for the pairwise scoring operation used by the reducer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    /// Closed-form Pearson chi-square divergence of the pair against its
    /// merge (renormalized pair weights).
    #[serde(rename = "pearson")]
    PearsonChi2,
    /// Weighted symmetric KL-style score from precision-weighted traces.
    #[serde(rename = "kitagawa")]
    KitagawaWkl,
    /// Log-determinant upper bound on the KL increase caused by the merge.
    #[serde(rename = "runnalls")]
    RunnallsBound,
    /// Increase of within-component variance relative to the full mixture
    /// covariance.
    #[serde(rename = "salmond")]
    SalmondTrace,
    /// Integrated squared difference between the pair and its merge.
    #[serde(rename = "isd")]
    WilliamsIsd,
    /// Numerically integrated KL divergence of the current mixture against
    /// the mixture with the pair pooled.
    #[serde(rename = "numkl")]
    NumericKl,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 6] = [
        CriterionKind::PearsonChi2,
        CriterionKind::KitagawaWkl,
        CriterionKind::RunnallsBound,
        CriterionKind::SalmondTrace,
        CriterionKind::WilliamsIsd,
        CriterionKind::NumericKl,
    ];

    pub fn flag(&self) -> &'static str {
        match self {
            CriterionKind::PearsonChi2 => "pearson",
            CriterionKind::KitagawaWkl => "kitagawa",
            CriterionKind::RunnallsBound => "runnalls",
            CriterionKind::SalmondTrace => "salmond",
            CriterionKind::WilliamsIsd => "isd",
            CriterionKind::NumericKl => "numkl",
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CriterionKind::PearsonChi2),
            "kitagawa" => Ok(CriterionKind::KitagawaWkl),
            "runnalls" => Ok(CriterionKind::RunnallsBound),
            "salmond" => Ok(CriterionKind::SalmondTrace),
            "isd" => Ok(CriterionKind::WilliamsIsd),
            "numkl" => Ok(CriterionKind::NumericKl),
            other => Err(Error::Argument(format!(
                "unknown criterion `{other}` (expected pearson|kitagawa|runnalls|salmond|isd|numkl)"
            ))),
        }
    }
}

/// Outcome of scoring one candidate pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairScore {
    Finite(f64),
    /// The pair cannot be merged under this criterion (unbounded ratio);
    /// the reducer treats it as +inf.
    Excluded,
}

fn chol_or_unbounded(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::UnboundedRatio)
}

fn log_det(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// ∫ fa(x) fb(x) / p(x) dx for unit-mass Gaussians fa, fb and their
/// moment-preserving merge p; weights do not enter. Requires the geometry
/// built from the same pair with a PD residual precision.
pub fn ratio_integral_cross(
    a: &GaussianComponent,
    b: &GaussianComponent,
    geom: &MergeGeometry,
) -> Result<f64> {
    if !geom.excess_precision_pd {
        return Err(Error::UnboundedRatio);
    }
    let chol_w = chol_or_unbounded(&geom.excess_precision)?;
    let chol_v = Cholesky::new(geom.merged_cov.clone())
        .ok_or_else(|| Error::Numeric("merged covariance is not positive definite".into()))?;

    // Quadratic in (ζ − ξ) with matrix (V − Σab)⁻¹; PD exactly when the
    // residual precision is.
    let gap = symmetrize(&(&geom.merged_cov - &geom.harmonic_cov));
    let chol_gap = chol_or_unbounded(&gap)?;
    let dzeta = &geom.precision_weighted_mean - &geom.merged_mean;
    let q_center = dzeta.dot(&chol_gap.solve(&dzeta));

    // Quadratic in (μa − μb) with matrix (Σa + Σb)⁻¹.
    let sum_cov = symmetrize(&(a.cov() + b.cov()));
    let chol_sum = Cholesky::new(sum_cov)
        .ok_or_else(|| Error::Numeric("sum of pair covariances is not positive definite".into()))?;
    let dmean = a.mean() - b.mean();
    let q_sep = dmean.dot(&chol_sum.solve(&dmean));

    let log_val = -0.5 * a.log_det_cov() - 0.5 * b.log_det_cov() + 0.5 * log_det(&chol_v)
        - 0.5 * log_det(&chol_w)
        + 0.5 * q_center
        - 0.5 * q_sep;
    Ok(log_val.exp())
}

/// ∫ fa(x)² / p(x) dx for a unit-mass Gaussian fa against the merged
/// Gaussian p of the pair the geometry was built from. Unbounded (error)
/// unless 2Σa⁻¹ − V⁻¹ is positive definite.
pub fn ratio_integral_self(a: &GaussianComponent, geom: &MergeGeometry) -> Result<f64> {
    let self_excess = symmetrize(&(2.0 * a.precision() - merged_precision(geom)?));
    let chol_wbar = chol_or_unbounded(&self_excess)?;

    // (V − Σa/2)⁻¹ is PD exactly when the self residual precision is.
    let gap = symmetrize(&(&geom.merged_cov - 0.5 * a.cov()));
    let chol_gap = chol_or_unbounded(&gap)?;
    let dmean = a.mean() - &geom.merged_mean;
    let q_center = dmean.dot(&chol_gap.solve(&dmean));

    let chol_v = Cholesky::new(geom.merged_cov.clone())
        .ok_or_else(|| Error::Numeric("merged covariance is not positive definite".into()))?;
    let log_val =
        -a.log_det_cov() + 0.5 * log_det(&chol_v) - 0.5 * log_det(&chol_wbar) + 0.5 * q_center;
    Ok(log_val.exp())
}

fn merged_precision(geom: &MergeGeometry) -> Result<DMatrix<f64>> {
    let chol_v = Cholesky::new(geom.merged_cov.clone())
        .ok_or_else(|| Error::Numeric("merged covariance is not positive definite".into()))?;
    Ok(symmetrize(&chol_v.inverse()))
}

/// Closed-form Pearson chi-square divergence of the two-component
/// sub-mixture (weights renormalized to sum to one) against its
/// moment-preserving merge:
///
/// ᾱa²·∫fa²/p + ᾱb²·∫fb²/p + 2ᾱaᾱb·∫fafb/p − 1.
///
/// Nonnegative by construction; tiny negative float noise (≥ −1e-10) is
/// clamped to zero and anything more negative is a numeric failure.
/// Propagates [`Error::UnboundedRatio`] when any ratio integral diverges.
pub fn pearson_chi2(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let geom = merge_geometry(a, b)?;
    let total = a.weight() + b.weight();
    let wa = a.weight() / total;
    let wb = b.weight() / total;
    let self_a = ratio_integral_self(a, &geom)?;
    let self_b = ratio_integral_self(b, &geom)?;
    let cross = ratio_integral_cross(a, b, &geom)?;
    let d = wa * wa * self_a + wb * wb * self_b + 2.0 * wa * wb * cross - 1.0;
    if d < NEG_CLAMP {
        return Err(Error::Numeric(format!(
            "Pearson chi-square came out negative ({d:.3e}); merge geometry is broken"
        )));
    }
    Ok(d.max(0.0))
}

/// Weighted pairwise KL-style score:
/// αa·αb·(tr(Σb⁻¹Σa) + tr(Σa⁻¹Σb) + (μa−μb)ᵀ(Σa⁻¹+Σb⁻¹)(μa−μb)).
pub fn kitagawa_wkl(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    check_same_dim(a, b)?;
    let tr_ab = b.solve_cov_mat(a.cov()).trace();
    let tr_ba = a.solve_cov_mat(b.cov()).trace();
    let dmean = a.mean() - b.mean();
    let quad = dmean.dot(&a.solve_cov(&dmean)) + dmean.dot(&b.solve_cov(&dmean));
    Ok(a.weight() * b.weight() * (tr_ab + tr_ba + quad))
}

/// Upper bound on the KL increase caused by merging the pair:
/// ½((αa+αb)·log det V − αa·log det Σa − αb·log det Σb)
/// with V the moment-preserving merged covariance.
pub fn runnalls_bound(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let merged = moment_preserving_merge(a, b)?;
    Ok(0.5
        * ((a.weight() + b.weight()) * merged.log_det_cov()
            - a.weight() * a.log_det_cov()
            - b.weight() * b.log_det_cov()))
}

/// Increase of within-component variance caused by merging the pair,
/// measured against the covariance of the full current mixture:
/// tr(mixCov⁻¹ · ΔW), ΔW = αaαb/(αa+αb)·(μa−μb)(μa−μb)ᵀ.
pub fn salmond_trace(
    a: &GaussianComponent,
    b: &GaussianComponent,
    mix_cov: &DMatrix<f64>,
) -> Result<f64> {
    check_same_dim(a, b)?;
    let chol = Cholesky::new(symmetrize(mix_cov))
        .ok_or_else(|| Error::Numeric("mixture covariance is not positive definite".into()))?;
    let dmean = a.mean() - b.mean();
    let c = a.weight() * b.weight() / (a.weight() + b.weight());
    Ok(c * dmean.dot(&chol.solve(&dmean)))
}

/// Integrated squared difference ∫ (g(x) − f(x))² dx of two mixtures, in
/// closed form through the Gaussian product identity
/// ∫ φ(x|μa,Σa)·φ(x|μb,Σb) dx = φ(μa | μb, Σa+Σb).
pub fn williams_isd(g: &GaussianMixture, f: &GaussianMixture) -> Result<f64> {
    if g.dim() != f.dim() {
        return Err(Error::Argument(format!(
            "mixtures have dimensions {} and {}",
            g.dim(),
            f.dim()
        )));
    }
    Ok(cross_mass(g, g)? + cross_mass(f, f)? - 2.0 * cross_mass(g, f)?)
}

fn cross_mass(g: &GaussianMixture, f: &GaussianMixture) -> Result<f64> {
    let mut acc = 0.0;
    for a in g.components() {
        for b in f.components() {
            acc += a.weight() * b.weight() * gaussian_overlap(a, b)?;
        }
    }
    Ok(acc)
}

/// φ(μa | μb, Σa + Σb).
fn gaussian_overlap(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let d = a.dim() as f64;
    let sum_cov = symmetrize(&(a.cov() + b.cov()));
    let chol = Cholesky::new(sum_cov)
        .ok_or_else(|| Error::Numeric("sum of covariances is not positive definite".into()))?;
    let dmean = a.mean() - b.mean();
    let quad = dmean.dot(&chol.solve(&dmean));
    Ok((-0.5 * (d * crate::gaussmix::LOG_2PI + log_det(&chol) + quad)).exp())
}

pub(crate) struct ScoreContext<'a> {
    /// Covariance of the full current mixture; required by
    /// [`CriterionKind::SalmondTrace`].
    pub mix_cov: Option<&'a DMatrix<f64>>,
    /// Integration domain for [`CriterionKind::NumericKl`].
    pub quad: Option<&'a QuadSpec>,
    /// Reference model the numeric-KL score is measured against. Inside a
    /// reduction run this is the run's original full-order mixture, so the
    /// score of a candidate pooling is its divergence from the truth the
    /// run started from; standalone scoring uses the scored mixture itself.
    pub reference: Option<&'a GaussianMixture>,
}

/// Score the candidate pair (j, k), j < k, of `m` under `kind`. An
/// unbounded ratio maps to [`PairScore::Excluded`]; other failures are
/// errors.
pub fn score_pair(
    kind: CriterionKind,
    m: &GaussianMixture,
    j: usize,
    k: usize,
) -> Result<PairScore> {
    let ctx = ScoreContext { mix_cov: None, quad: None, reference: None };
    score_pair_with(kind, m.components(), j, k, &ctx)
}

pub(crate) fn score_pair_with(
    kind: CriterionKind,
    comps: &[GaussianComponent],
    j: usize,
    k: usize,
    ctx: &ScoreContext<'_>,
) -> Result<PairScore> {
    if !(j < k && k < comps.len()) {
        return Err(Error::Argument(format!(
            "pair indices ({j}, {k}) out of range for order {}",
            comps.len()
        )));
    }
    let a = &comps[j];
    let b = &comps[k];
    let raw = match kind {
        CriterionKind::PearsonChi2 => pearson_chi2(a, b),
        CriterionKind::KitagawaWkl => kitagawa_wkl(a, b),
        CriterionKind::RunnallsBound => runnalls_bound(a, b),
        CriterionKind::SalmondTrace => match ctx.mix_cov {
            Some(cov) => salmond_trace(a, b, cov),
            None => {
                let m = GaussianMixture::new(comps.to_vec())?;
                salmond_trace(a, b, &m.mixture_moments().1)
            }
        },
        CriterionKind::WilliamsIsd => pairwise_isd(a, b),
        CriterionKind::NumericKl => {
            let current = GaussianMixture::new(comps.to_vec())?;
            let owned;
            let spec = match ctx.quad {
                Some(q) => q,
                None => {
                    owned = QuadSpec::for_mixture(&current, 10.0)?;
                    &owned
                }
            };
            numeric_kl_score(ctx.reference.unwrap_or(&current), &current, j, k, spec)
        }
    };
    match raw {
        Ok(v) => Ok(PairScore::Finite(v)),
        Err(Error::UnboundedRatio) => Ok(PairScore::Excluded),
        Err(e) => Err(e),
    }
}

/// ISD between the raw-weight pair sub-mixture and its merge; local to the
/// pair, so it is usable as a greedy criterion.
fn pairwise_isd(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let sub = GaussianMixture::new(vec![a.clone(), b.clone()])?;
    let merged = GaussianMixture::new(vec![moment_preserving_merge(a, b)?])?;
    williams_isd(&sub, &merged)
}

/// KL divergence of `reference` against `m` with the pair (j, k) pooled,
/// by numerical integration over `spec`.
fn numeric_kl_score(
    reference: &GaussianMixture,
    m: &GaussianMixture,
    j: usize,
    k: usize,
    spec: &QuadSpec,
) -> Result<f64> {
    let merged = moment_preserving_merge(m.component(j), m.component(k))?;
    let mut comps = m.components().to_vec();
    comps[j] = merged;
    comps.remove(k);
    let pooled = GaussianMixture::new(comps)?;
    kl_numeric(reference, &pooled, spec)
}

fn check_same_dim(a: &GaussianComponent, b: &GaussianComponent) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "components have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

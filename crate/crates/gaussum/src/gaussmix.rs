//! Core Gaussian mixture types.
//!
//! A [`GaussianMixture`] is an ordered list of weighted [`GaussianComponent`]s
//! over a fixed dimension. This module provides density evaluation through
//! cached Cholesky factors, pooled first/second moments, weight
//! normalization, the moment-preserving pairwise merge, and the
//! [`MergeGeometry`] quantities derived from a candidate merge that the
//! closed-form criteria are built on.
//!
//! All types are immutable values after construction and every operation is
//! a pure function, so everything here can be shared freely across threads.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::CompensatedSum;

pub(crate) const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Largest dimension solved on a stack buffer in the density hot path.
const STACK_DIM: usize = 8;

/// Relative asymmetry accepted by the component constructor.
const SYM_TOL_CONSTRUCT: f64 = 1e-12;

/// Relative asymmetry accepted by the JSON parser before re-symmetrizing.
const SYM_TOL_PARSE: f64 = 1e-9;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// One weighted Gaussian term of a mixture: weight, mean and a symmetric
/// positive-definite covariance. The Cholesky factor and log-determinant of
/// the covariance are computed once at construction and reused by every
/// density evaluation and solve.
#[derive(Clone)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det_cov: f64,
}

impl fmt::Debug for GaussianComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianComponent")
            .field("weight", &self.weight)
            .field("mean", &self.mean.as_slice())
            .field("cov", &self.cov)
            .finish()
    }
}

impl GaussianComponent {
    /// Validates that the weight is positive and finite and that the
    /// covariance is symmetric (relative tolerance 1e-12) and admits a
    /// Cholesky factorization; the covariance is stored as `(A + Aᵀ)/2`.
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::Argument(format!(
                "component weight must be positive and finite, got {weight}"
            )));
        }
        let d = mean.len();
        if d == 0 {
            return Err(Error::Argument("component dimension must be at least 1".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Argument(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !cov.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("component parameters must be finite".into()));
        }
        let scale = max_abs(&cov).max(1.0);
        if asymmetry(&cov) > SYM_TOL_CONSTRUCT * scale {
            return Err(Error::Argument(
                "covariance is not symmetric within relative tolerance 1e-12".into(),
            ));
        }
        let cov = symmetrize(&cov);
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::Numeric("covariance admits no Cholesky factorization (not PD)".into())
        })?;
        let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { weight, mean, cov, chol, log_det_cov })
    }

    /// Convenience constructor for scalar components.
    pub fn new_1d(weight: f64, mean: f64, var: f64) -> Result<Self> {
        Self::new(
            weight,
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Same Gaussian with a different weight; the factorization is reused.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::Argument(format!(
                "component weight must be positive and finite, got {weight}"
            )));
        }
        let mut c = self.clone();
        c.weight = weight;
        Ok(c)
    }

    pub(crate) fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    /// Σ⁻¹ b through the cached factorization.
    pub(crate) fn solve_cov(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub(crate) fn solve_cov_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Σ⁻¹ as an explicit symmetric matrix.
    pub(crate) fn precision(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    /// log φ(x | μ, Σ), evaluated through the Cholesky factor; never forms
    /// an explicit inverse.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let l = self.chol.l_dirty();
        let mut stack = [0.0_f64; STACK_DIM];
        let mut heap: Vec<f64>;
        let z: &mut [f64] = if d <= STACK_DIM {
            &mut stack[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i) {
                s -= l[(i, j)] * zj;
            }
            let zi = s / l[(i, i)];
            z[i] = zi;
            quad += zi * zi;
        }
        -0.5 * (d as f64 * LOG_2PI + self.log_det_cov + quad)
    }

    /// φ(x | μ, Σ); underflows to 0 far in the tails.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// An ordered Gaussian mixture over a fixed dimension. The component count
/// is called the *order* of the mixture.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    /// A mixture needs at least one component and all components must share
    /// one dimension. Weights are not required to sum to one here; use
    /// [`GaussianMixture::normalize`] to rescale them.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let dim = components
            .first()
            .ok_or_else(|| Error::Argument("mixture needs at least one component".into()))?
            .dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::Argument(format!(
                "component dimension {} does not match mixture dimension {dim}",
                bad.dim()
            )));
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components.
    pub fn order(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &GaussianComponent {
        &self.components[i]
    }

    /// Compensated sum of the component weights.
    pub fn weight_sum(&self) -> f64 {
        let mut s = CompensatedSum::default();
        for c in &self.components {
            s.add(c.weight());
        }
        s.total()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.weight_sum() - 1.0).abs() <= tol
    }

    /// Rescales all weights by the compensated total so they sum to one;
    /// component order is preserved.
    pub fn normalize(&self) -> Result<GaussianMixture> {
        let total = self.weight_sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Argument(format!(
                "total mixture weight must be positive and finite, got {total}"
            )));
        }
        let components = self
            .components
            .iter()
            .map(|c| c.with_weight(c.weight() / total))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { dim: self.dim, components })
    }

    /// Mixture density Σᵢ αᵢ φ(x | μᵢ, Σᵢ).
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "point has dimension {}, mixture has dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.density_unchecked(x))
    }

    /// Log of the mixture density, computed by log-sum-exp over component
    /// log densities so that far-tail evaluations stay finite.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "point has dimension {}, mixture has dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.log_density_unchecked(x))
    }

    /// Like [`GaussianMixture::density`] without the dimension check; the
    /// caller must pass a point of the mixture dimension.
    #[inline]
    pub fn density_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight() * c.density(x);
        }
        acc
    }

    /// Like [`GaussianMixture::log_density`] without the dimension check.
    #[inline]
    pub fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut m = f64::NEG_INFINITY;
        let mut terms = [0.0_f64; 8];
        let mut heap: Vec<f64>;
        let n = self.components.len();
        let buf: &mut [f64] = if n <= 8 {
            &mut terms[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for (t, c) in buf.iter_mut().zip(&self.components) {
            *t = c.weight().ln() + c.log_density(x);
            if *t > m {
                m = *t;
            }
        }
        if !m.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut s = 0.0;
        for t in buf.iter() {
            s += (*t - m).exp();
        }
        m + s.ln()
    }

    /// Pooled mean and covariance of the mixture:
    /// mean = Σ αᵢ μᵢ, cov = Σ αᵢ (Σᵢ + (μᵢ−mean)(μᵢ−mean)ᵀ).
    pub fn mixture_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut mean = DVector::zeros(d);
        for c in &self.components {
            mean += c.weight() * c.mean();
        }
        let mut cov = DMatrix::zeros(d, d);
        for c in &self.components {
            let delta = c.mean() - &mean;
            cov += c.weight() * (c.cov() + &delta * delta.transpose());
        }
        (mean, symmetrize(&cov))
    }

    /// Single Gaussian matching the pooled moments; its weight is the total
    /// mixture weight.
    pub fn moment_matched(&self) -> Result<GaussianComponent> {
        let (mean, cov) = self.mixture_moments();
        GaussianComponent::new(self.weight_sum(), mean, cov)
    }
}

/// Replace two components by the single Gaussian that preserves the pooled
/// weight, mean and covariance of the pair.
pub fn moment_preserving_merge(
    a: &GaussianComponent,
    b: &GaussianComponent,
) -> Result<GaussianComponent> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "cannot merge components of dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let total = a.weight() + b.weight();
    let ta = a.weight() / total;
    let tb = b.weight() / total;
    let mean = ta * a.mean() + tb * b.mean();
    let da = a.mean() - &mean;
    let db = b.mean() - &mean;
    let cov = ta * (a.cov() + &da * da.transpose()) + tb * (b.cov() + &db * db.transpose());
    GaussianComponent::new(total, mean, symmetrize(&cov))
}

/// Quantities derived from a candidate pair merge that the closed-form
/// ratio integrals are expressed in. With pair covariances Σa, Σb and the
/// moment-preserving merge (mean ξ, covariance V):
///
/// * `merged_mean` ξ and `merged_cov` V,
/// * `precision_weighted_mean` ζ = (Σa⁻¹+Σb⁻¹)⁻¹ (Σa⁻¹ μa + Σb⁻¹ μb),
/// * `harmonic_cov` (Σa⁻¹+Σb⁻¹)⁻¹,
/// * `excess_precision` Σa⁻¹ + Σb⁻¹ − V⁻¹, the precision left over when
///   the merged density is divided out of the component product,
/// * `ratio_center`, the mode of that residual Gaussian factor (present
///   only when `excess_precision` is positive definite),
/// * `excess_precision_pd`, whether `excess_precision` admits a Cholesky
///   factorization. When it does not, the pair/merge density ratio is not
///   integrable and the pair must be excluded from merging.
#[derive(Clone, Debug)]
pub struct MergeGeometry {
    pub merged_mean: DVector<f64>,
    pub merged_cov: DMatrix<f64>,
    pub precision_weighted_mean: DVector<f64>,
    pub harmonic_cov: DMatrix<f64>,
    pub excess_precision: DMatrix<f64>,
    pub ratio_center: Option<DVector<f64>>,
    pub excess_precision_pd: bool,
}

/// Builds the [`MergeGeometry`] of a candidate pair. Inverses are realized
/// as Cholesky solves; `excess_precision` is formed explicitly and then
/// Cholesky-tested because its definiteness is itself an output.
pub fn merge_geometry(a: &GaussianComponent, b: &GaussianComponent) -> Result<MergeGeometry> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "cannot build merge geometry for dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let merged = moment_preserving_merge(a, b)?;
    let merged_mean = merged.mean().clone();
    let merged_cov = merged.cov().clone();

    let sum_prec = symmetrize(&(a.precision() + b.precision()));
    let chol_sum = Cholesky::new(sum_prec.clone()).ok_or_else(|| {
        Error::Numeric("sum of pair precisions is not positive definite".into())
    })?;
    let harmonic_cov = symmetrize(&chol_sum.inverse());
    // Σa⁻¹ μa + Σb⁻¹ μb, reused for both ζ and the ratio center.
    let prec_mean = a.solve_cov(a.mean()) + b.solve_cov(b.mean());
    let precision_weighted_mean = chol_sum.solve(&prec_mean);

    let merged_prec = merged.precision();
    let excess_precision = symmetrize(&(&sum_prec - &merged_prec));
    let chol_excess = Cholesky::new(excess_precision.clone());
    let excess_precision_pd = chol_excess.is_some();
    let ratio_center = chol_excess
        .as_ref()
        .map(|ch| ch.solve(&(&prec_mean - &merged_prec * &merged_mean)));

    Ok(MergeGeometry {
        merged_mean,
        merged_cov,
        precision_weighted_mean,
        harmonic_cov,
        excess_precision,
        ratio_center,
        excess_precision_pd,
    })
}

// --- JSON format -----------------------------------------------------------
//
// `{"dim": d, "components": [{"weight": w, "mean": [..], "cov": [[..], ..]}]}`
// with the covariance in row-major nested arrays. The parser checks
// symmetry to 1e-9 relative and re-symmetrizes as (A + Aᵀ)/2.

#[derive(Serialize, Deserialize)]
pub(crate) struct ComponentJson {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MixtureJson {
    pub dim: usize,
    pub components: Vec<ComponentJson>,
}

impl MixtureJson {
    pub(crate) fn from_mixture(m: &GaussianMixture) -> Self {
        MixtureJson {
            dim: m.dim(),
            components: m
                .components()
                .iter()
                .map(|c| ComponentJson {
                    weight: c.weight(),
                    mean: c.mean().iter().cloned().collect(),
                    cov: (0..c.dim())
                        .map(|i| (0..c.dim()).map(|j| c.cov()[(i, j)]).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub(crate) fn into_mixture(self) -> Result<GaussianMixture> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::Argument("mixture dimension must be at least 1".into()));
        }
        let mut components = Vec::with_capacity(self.components.len());
        for (idx, c) in self.components.into_iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::Argument(format!(
                    "component {idx}: mean has length {}, expected {d}",
                    c.mean.len()
                )));
            }
            if c.cov.len() != d || c.cov.iter().any(|row| row.len() != d) {
                return Err(Error::Argument(format!(
                    "component {idx}: covariance must be {d}x{d}"
                )));
            }
            let cov = DMatrix::from_fn(d, d, |i, j| c.cov[i][j]);
            let scale = max_abs(&cov).max(1.0);
            if asymmetry(&cov) > SYM_TOL_PARSE * scale {
                return Err(Error::Argument(format!(
                    "component {idx}: covariance is not symmetric within relative tolerance 1e-9"
                )));
            }
            components.push(GaussianComponent::new(
                c.weight,
                DVector::from_vec(c.mean),
                symmetrize(&cov),
            )?);
        }
        GaussianMixture::new(components)
    }
}

impl GaussianMixture {
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MixtureJson = serde_json::from_str(s)?;
        raw.into_mixture()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MixtureJson::from_mixture(self))
            .expect("mixture serialization cannot fail")
    }
}

/// Parse a mixture file. Weights are stored as written; callers that need a
/// distribution should [`GaussianMixture::normalize`] afterwards.
pub fn read_mixture(path: &Path) -> Result<GaussianMixture> {
    GaussianMixture::from_json(&fs::read_to_string(path)?)
}

pub fn write_mixture(path: &Path, m: &GaussianMixture) -> Result<()> {
    fs::write(path, m.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn comp_1d(w: f64, mu: f64, var: f64) -> GaussianComponent {
        GaussianComponent::new_1d(w, mu, var).unwrap()
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let m = GaussianMixture::new(vec![comp_1d(1.0, 0.0, 1.0)]).unwrap();
        // (2π)^(-1/2)
        assert_relative_eq!(m.density(&[0.0]).unwrap(), 0.3989422804, max_relative = 1e-9);
    }

    #[test]
    fn benchmark_density_matches_independent_summation() {
        // Straight scalar-arithmetic sum of the sixteen terms, written
        // without the mixture machinery.
        let m = crate::fixtures::benchmark_mixture_1d();
        let x = 0.0_f64;
        let mut expect = 0.0;
        for c in m.components() {
            let var = c.cov()[(0, 0)];
            let z = (x - c.mean()[0]) / var.sqrt();
            expect += c.weight() / (var * 2.0 * std::f64::consts::PI).sqrt()
                * (-0.5 * z * z).exp();
        }
        assert_relative_eq!(m.density(&[x]).unwrap(), expect, max_relative = 1e-13);
    }

    #[test]
    fn benchmark_moments_match_full_collapse() {
        let m = crate::fixtures::benchmark_mixture_1d().normalize().unwrap();
        let (mean, cov) = m.mixture_moments();
        let collapsed = crate::reduce::reduce_to(&m, 1, crate::criteria::CriterionKind::KitagawaWkl, false)
            .unwrap()
            .final_mixture;
        assert_relative_eq!(collapsed.component(0).mean()[0], mean[0], max_relative = 1e-10);
        assert_relative_eq!(
            collapsed.component(0).cov()[(0, 0)],
            cov[(0, 0)],
            max_relative = 1e-10
        );
    }

    #[test]
    fn density_rejects_dimension_mismatch() {
        let m = GaussianMixture::new(vec![comp_1d(1.0, 0.0, 1.0)]).unwrap();
        assert!(matches!(m.density(&[0.0, 1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn far_tail_underflows_to_zero_without_nan() {
        let m = GaussianMixture::new(vec![
            comp_1d(0.5, 0.0, 1.0),
            comp_1d(0.5, 3.0, 0.5),
        ])
        .unwrap();
        let v = m.density(&[1.0e6]).unwrap();
        assert_eq!(v, 0.0);
        let lv = m.log_density(&[1.0e6]).unwrap();
        assert!(lv < -1.0e10 && !lv.is_nan());
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(GaussianComponent::new_1d(0.0, 0.0, 1.0).is_err());
        assert!(GaussianComponent::new_1d(-0.1, 0.0, 1.0).is_err());
        assert!(GaussianComponent::new_1d(1.0, 0.0, -1.0).is_err());
        let asym = dmatrix![1.0, 0.5; 0.2, 1.0];
        assert!(GaussianComponent::new(1.0, dvector![0.0, 0.0], asym).is_err());
    }

    #[test]
    fn single_component_moments_are_identity() {
        let c = GaussianComponent::new(1.0, dvector![1.0, -2.0], dmatrix![2.0, 0.3; 0.3, 1.0])
            .unwrap();
        let m = GaussianMixture::new(vec![c.clone()]).unwrap();
        let (mean, cov) = m.mixture_moments();
        assert_relative_eq!(mean, *c.mean(), max_relative = 1e-15);
        assert_relative_eq!(cov, *c.cov(), max_relative = 1e-15);
    }

    #[test]
    fn symmetric_two_component_moments() {
        let m = GaussianMixture::new(vec![
            comp_1d(0.5, 1.0, 1.0),
            comp_1d(0.5, -1.0, 1.0),
        ])
        .unwrap();
        let (mean, cov) = m.mixture_moments();
        assert_relative_eq!(mean[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 0)], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn merge_of_identical_components_is_identity() {
        let c = GaussianComponent::new(0.3, dvector![1.0, 2.0], dmatrix![1.5, 0.2; 0.2, 0.8])
            .unwrap();
        let merged = moment_preserving_merge(&c, &c).unwrap();
        assert_relative_eq!(merged.weight(), 0.6, max_relative = 1e-15);
        assert_relative_eq!(merged.mean(), c.mean(), max_relative = 1e-14);
        assert_relative_eq!(merged.cov(), c.cov(), max_relative = 1e-14);
    }

    #[test]
    fn merge_symmetric_1d_pair() {
        let a = comp_1d(0.5, 1.0, 1.0);
        let b = comp_1d(0.5, -1.0, 1.0);
        let merged = moment_preserving_merge(&a, &b).unwrap();
        assert_relative_eq!(merged.weight(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(merged.mean()[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(merged.cov()[(0, 0)], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn merge_is_symmetric_in_its_arguments() {
        let a = GaussianComponent::new(0.3, dvector![0.0, 1.0], dmatrix![2.0, 0.4; 0.4, 1.0])
            .unwrap();
        let b = GaussianComponent::new(0.6, dvector![3.0, -1.0], dmatrix![1.0, -0.2; -0.2, 3.0])
            .unwrap();
        let ab = moment_preserving_merge(&a, &b).unwrap();
        let ba = moment_preserving_merge(&b, &a).unwrap();
        assert_relative_eq!(ab.weight(), ba.weight(), epsilon = 1e-12);
        assert_relative_eq!(ab.mean(), ba.mean(), epsilon = 1e-12);
        assert_relative_eq!(ab.cov(), ba.cov(), epsilon = 1e-12);
    }

    #[test]
    fn merge_matches_pooled_moments_of_pair_submixture() {
        let a = comp_1d(0.2, -1.0, 0.5);
        let b = comp_1d(0.6, 2.0, 1.5);
        let sub = GaussianMixture::new(vec![a.clone(), b.clone()])
            .unwrap()
            .normalize()
            .unwrap();
        let (mean, cov) = sub.mixture_moments();
        let merged = moment_preserving_merge(&a, &b).unwrap();
        assert_relative_eq!(merged.mean(), &mean, max_relative = 1e-12);
        assert_relative_eq!(merged.cov(), &cov, max_relative = 1e-12);
    }

    #[test]
    fn geometry_of_identical_components_degenerates() {
        let c = GaussianComponent::new(0.5, dvector![1.0, -1.0], dmatrix![2.0, 0.5; 0.5, 1.0])
            .unwrap();
        let g = merge_geometry(&c, &c).unwrap();
        assert!(g.excess_precision_pd);
        assert_relative_eq!(&g.merged_mean, c.mean(), max_relative = 1e-12);
        assert_relative_eq!(&g.precision_weighted_mean, c.mean(), max_relative = 1e-12);
        assert_relative_eq!(g.ratio_center.as_ref().unwrap(), c.mean(), max_relative = 1e-10);
        assert_relative_eq!(&g.merged_cov, c.cov(), max_relative = 1e-12);
        assert_relative_eq!(g.harmonic_cov, 0.5 * c.cov(), max_relative = 1e-12);
        assert_relative_eq!(g.excess_precision, c.precision(), max_relative = 1e-10);
    }

    #[test]
    fn geometry_of_separated_1d_pair_matches_hand_arithmetic() {
        let a = comp_1d(0.5, 0.0, 1.0);
        let b = comp_1d(0.5, 5.0, 1.0);
        let g = merge_geometry(&a, &b).unwrap();
        assert_relative_eq!(g.merged_mean[0], 2.5, max_relative = 1e-14);
        assert_relative_eq!(g.merged_cov[(0, 0)], 7.25, max_relative = 1e-14);
        assert_relative_eq!(g.precision_weighted_mean[0], 2.5, max_relative = 1e-14);
        assert_relative_eq!(g.harmonic_cov[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(g.excess_precision[(0, 0)], 2.0 - 1.0 / 7.25, max_relative = 1e-13);
        assert!(g.excess_precision_pd);
        assert_relative_eq!(g.ratio_center.as_ref().unwrap()[0], 2.5, max_relative = 1e-12);
    }

    #[test]
    fn tiny_variance_separated_pair_has_pd_excess_precision() {
        let a = comp_1d(0.5, -10.0, 1e-4);
        let b = comp_1d(0.5, 10.0, 1e-4);
        let g = merge_geometry(&a, &b).unwrap();
        assert!(g.excess_precision_pd);
    }

    #[test]
    fn normalize_rescales_and_preserves_order() {
        let m = GaussianMixture::new(vec![
            comp_1d(0.2, 0.0, 1.0),
            comp_1d(0.2, 3.0, 2.0),
        ])
        .unwrap();
        let n = m.normalize().unwrap();
        assert_eq!(n.component(0).mean()[0], 0.0);
        assert_relative_eq!(n.component(0).weight(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(n.component(1).weight(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn normalize_of_normalized_mixture_is_identity() {
        let m = GaussianMixture::new(vec![
            comp_1d(0.25, 0.0, 1.0),
            comp_1d(0.75, 3.0, 2.0),
        ])
        .unwrap();
        let n = m.normalize().unwrap();
        assert_eq!(n.component(0).weight(), 0.25);
        assert_eq!(n.component(1).weight(), 0.75);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = GaussianMixture::new(vec![
            GaussianComponent::new(0.3, dvector![0.1, -0.2], dmatrix![1.0, 0.25; 0.25, 2.0])
                .unwrap(),
            GaussianComponent::new(0.7, dvector![2.0, 1.0], dmatrix![0.5, 0.0; 0.0, 0.75])
                .unwrap(),
        ])
        .unwrap();
        let s1 = m.to_json();
        let p1 = GaussianMixture::from_json(&s1).unwrap();
        let s2 = p1.to_json();
        assert_eq!(s1, s2);
        for (a, b) in m.components().iter().zip(p1.components()) {
            assert_eq!(a.weight(), b.weight());
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
        }
    }

    #[test]
    fn json_parser_rejects_asymmetric_covariance() {
        let s = r#"{"dim": 2, "components": [
            {"weight": 1.0, "mean": [0.0, 0.0], "cov": [[1.0, 0.5], [0.3, 1.0]]}
        ]}"#;
        assert!(GaussianMixture::from_json(s).is_err());
    }

    #[test]
    fn json_parser_resymmetrizes_small_asymmetry() {
        let s = r#"{"dim": 2, "components": [
            {"weight": 1.0, "mean": [0.0, 0.0], "cov": [[1.0, 0.5000000001], [0.5, 1.0]]}
        ]}"#;
        let m = GaussianMixture::from_json(s).unwrap();
        let c = m.component(0).cov();
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn normalize_makes_weights_sum_to_one(
                raw in proptest::collection::vec(1e-8_f64..1e3, 1..12),
            ) {
                let comps: Vec<_> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, w)| GaussianComponent::new_1d(*w, i as f64, 1.0).unwrap())
                    .collect();
                let m = GaussianMixture::new(comps).unwrap().normalize().unwrap();
                prop_assert!((m.weight_sum() - 1.0).abs() <= 1e-9);
            }

            #[test]
            fn merging_any_pair_preserves_mixture_moments(
                seed in 0u64..1000,
            ) {
                let mut rng = crate::util::SplitMix64::new(seed);
                let n = 3 + (rng.next_u64() % 4) as usize;
                let comps: Vec<_> = (0..n)
                    .map(|_| {
                        GaussianComponent::new_1d(
                            rng.next_range(0.05, 1.0),
                            rng.next_range(-5.0, 5.0),
                            rng.next_range(0.2, 4.0),
                        )
                        .unwrap()
                    })
                    .collect();
                let m = GaussianMixture::new(comps).unwrap().normalize().unwrap();
                let (mean0, cov0) = m.mixture_moments();
                let j = (rng.next_u64() % (n as u64 - 1)) as usize;
                let k = j + 1 + (rng.next_u64() % (n as u64 - 1 - j as u64)) as usize;
                let merged = moment_preserving_merge(m.component(j), m.component(k)).unwrap();
                let mut comps2: Vec<_> = m.components().to_vec();
                comps2[j] = merged;
                comps2.remove(k);
                let m2 = GaussianMixture::new(comps2).unwrap();
                let (mean1, cov1) = m2.mixture_moments();
                let scale = cov0[(0, 0)].abs().max(1.0);
                prop_assert!((mean0[0] - mean1[0]).abs() <= 1e-10 * scale.sqrt());
                prop_assert!((cov0[(0, 0)] - cov1[(0, 0)]).abs() <= 1e-10 * scale);
            }
        }
    }
}

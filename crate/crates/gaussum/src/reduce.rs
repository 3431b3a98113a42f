//! Sequential (greedy) mixture reduction and global KL fitting.
//!
//! [`reduce_step`] scores every pair under a pluggable criterion, merges
//! the minimizer (lexicographic tie-break, so traces are deterministic
//! across platforms and thread counts) and renormalizes. [`reduce_to`]
//! iterates this until a target order is reached, optionally tracking the
//! numeric KL divergence to the original mixture along the way.
//!
//! Pair scores that depend only on the pair itself are cached across steps:
//! after a merge, only pairs involving the new component are rescored.
//! Criteria whose score depends on the whole mixture (the within-variance
//! trace and the numeric KL) force a full rescore every step.
//!
//! [`global_kl_fit`] locally minimizes the numeric KL divergence over all
//! parameters of a fixed-order mixture with a quasi-Newton method, weights
//! living on the simplex through normalized exponentials and covariances
//! through lower-triangular square roots with positive diagonal.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{score_pair_with, CriterionKind, PairScore, ScoreContext};
use crate::error::{Error, Result};
use crate::gaussmix::{
    moment_preserving_merge, symmetrize, GaussianComponent, GaussianMixture,
};
use crate::quad::{kl_numeric, QuadSpec};
use crate::util::SplitMix64;

/// Rescoring batches at least this large run on the rayon pool.
const PAR_SCORE_THRESHOLD: usize = 32;

/// One merge of a reduction run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReductionStep {
    /// Mixture order before this merge.
    pub order_before: usize,
    /// Indices (j, k), j < k, of the merged pair, valid for `order_before`.
    pub chosen_pair: (usize, usize),
    /// Criterion score of the chosen pair.
    pub score: f64,
    /// KL divergence of the original mixture against the mixture after this
    /// merge; present when tracking was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_to_true: Option<f64>,
}

/// Full record of a greedy reduction.
#[derive(Clone, Debug)]
pub struct ReductionTrace {
    pub steps: Vec<ReductionStep>,
    pub final_mixture: GaussianMixture,
}

/// Score all pairs of `m` under `kind`, merge the minimizer and return the
/// normalized result together with the chosen pair and its score.
pub fn reduce_step(
    m: &GaussianMixture,
    kind: CriterionKind,
) -> Result<(GaussianMixture, (usize, usize), f64)> {
    if m.order() < 2 {
        return Err(Error::Argument("cannot reduce a mixture of order 1".into()));
    }
    let mut engine = Engine::new(m.normalize()?, kind, None)?;
    let (pair, score) = engine.step()?;
    Ok((engine.into_mixture()?, pair, score))
}

/// Apply [`reduce_step`] until `target_order` is reached. With `track_kl`,
/// each step records the numeric KL of the original mixture against the
/// current one, integrated over the default box of the original mixture so
/// every order is measured on the same domain.
pub fn reduce_to(
    m: &GaussianMixture,
    target_order: usize,
    kind: CriterionKind,
    track_kl: bool,
) -> Result<ReductionTrace> {
    reduce_to_with(m, target_order, kind, track_kl, None)
}

/// [`reduce_to`] with an explicit quadrature spec for KL tracking and the
/// numeric-KL criterion.
pub fn reduce_to_with(
    m: &GaussianMixture,
    target_order: usize,
    kind: CriterionKind,
    track_kl: bool,
    quad: Option<&QuadSpec>,
) -> Result<ReductionTrace> {
    let original = m.normalize()?;
    if target_order < 1 || target_order > original.order() {
        return Err(Error::Argument(format!(
            "target order {target_order} out of range 1..={}",
            original.order()
        )));
    }
    let spec_owned;
    let spec = match quad {
        Some(q) => q,
        None => {
            spec_owned = QuadSpec::for_mixture(&original, 10.0)?;
            &spec_owned
        }
    };

    let mut engine = Engine::new(original.clone(), kind, Some(spec))?;
    let mut steps = Vec::with_capacity(original.order() - target_order);
    while engine.order() > target_order {
        let order_before = engine.order();
        let (chosen_pair, score) = match engine.step() {
            Ok(v) => v,
            Err(Error::ReductionStuck { criterion, .. }) => {
                return Err(Error::ReductionStuck {
                    criterion,
                    partial: Some(Box::new(ReductionTrace {
                        steps,
                        final_mixture: engine.into_mixture()?,
                    })),
                });
            }
            Err(e) => return Err(e),
        };
        let kl_to_true = if track_kl {
            Some(kl_numeric(&original, &engine.mixture()?, spec)?)
        } else {
            None
        };
        steps.push(ReductionStep { order_before, chosen_pair, score, kl_to_true });
    }
    Ok(ReductionTrace { steps, final_mixture: engine.into_mixture()? })
}

struct Engine<'a> {
    comps: Vec<GaussianComponent>,
    kind: CriterionKind,
    quad: Option<&'a QuadSpec>,
    /// Full-order mixture the run started from; the numeric-KL criterion
    /// scores candidate poolings against it.
    original: GaussianMixture,
    /// Upper-triangle pair scores, row-major; empty until first scored.
    scores: Vec<PairScore>,
    scored: bool,
}

fn tri_index(j: usize, k: usize, order: usize) -> usize {
    debug_assert!(j < k && k < order);
    j * (2 * order - j - 1) / 2 + (k - j - 1)
}

impl<'a> Engine<'a> {
    fn new(m: GaussianMixture, kind: CriterionKind, quad: Option<&'a QuadSpec>) -> Result<Self> {
        Ok(Self {
            comps: m.components().to_vec(),
            kind,
            quad,
            original: m,
            scores: Vec::new(),
            scored: false,
        })
    }

    fn order(&self) -> usize {
        self.comps.len()
    }

    fn mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.comps.clone())
    }

    fn into_mixture(self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.comps)
    }

    /// Whether scores survive merges that do not touch their pair.
    fn cacheable(&self) -> bool {
        !matches!(self.kind, CriterionKind::SalmondTrace | CriterionKind::NumericKl)
    }

    fn score_batch(&self, pairs: &[(usize, usize)]) -> Result<Vec<PairScore>> {
        let mix_cov = matches!(self.kind, CriterionKind::SalmondTrace)
            .then(|| GaussianMixture::new(self.comps.clone()).map(|m| m.mixture_moments().1))
            .transpose()?;
        let ctx = ScoreContext {
            mix_cov: mix_cov.as_ref(),
            quad: self.quad,
            reference: Some(&self.original),
        };
        let results: Vec<Result<PairScore>> = if pairs.len() >= PAR_SCORE_THRESHOLD {
            pairs
                .par_iter()
                .map(|&(j, k)| score_pair_with(self.kind, &self.comps, j, k, &ctx))
                .collect()
        } else {
            pairs
                .iter()
                .map(|&(j, k)| score_pair_with(self.kind, &self.comps, j, k, &ctx))
                .collect()
        };
        // Errors surface in pair order so failures are deterministic.
        results.into_iter().collect()
    }

    fn rescore_full(&mut self) -> Result<()> {
        let n = self.order();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for j in 0..n {
            for k in (j + 1)..n {
                pairs.push((j, k));
            }
        }
        self.scores = self.score_batch(&pairs)?;
        self.scored = true;
        Ok(())
    }

    /// Merge happened at (j, k) of the previous order: keep scores of
    /// untouched pairs, rescore pairs involving the merged component at j.
    fn rescore_after_merge(&mut self, j: usize, k: usize, old_order: usize) -> Result<()> {
        let n = self.order();
        debug_assert_eq!(n, old_order - 1);
        let mut fresh_pairs = Vec::with_capacity(n - 1);
        for q in 0..n {
            if q != j {
                fresh_pairs.push((q.min(j), q.max(j)));
            }
        }
        fresh_pairs.sort_unstable();
        fresh_pairs.dedup();
        let fresh = self.score_batch(&fresh_pairs)?;

        let mut scores = vec![PairScore::Excluded; n * (n - 1) / 2];
        for p in 0..n {
            for q in (p + 1)..n {
                if p == j || q == j {
                    continue;
                }
                // Map back to the indices before the merge removed k.
                let old_p = if p < k { p } else { p + 1 };
                let old_q = if q < k { q } else { q + 1 };
                scores[tri_index(p, q, n)] =
                    self.scores[tri_index(old_p, old_q, old_order)];
            }
        }
        for (&(p, q), s) in fresh_pairs.iter().zip(&fresh) {
            scores[tri_index(p, q, n)] = *s;
        }
        self.scores = scores;
        Ok(())
    }

    fn select(&self) -> Result<(usize, usize, f64)> {
        let n = self.order();
        let mut best: Option<(f64, (usize, usize))> = None;
        for j in 0..n {
            for k in (j + 1)..n {
                if let PairScore::Finite(s) = self.scores[tri_index(j, k, n)] {
                    let better = match best {
                        None => true,
                        Some((bs, _)) => s < bs,
                    };
                    if better {
                        best = Some((s, (j, k)));
                    }
                }
            }
        }
        best.map(|(s, (j, k))| (j, k, s)).ok_or_else(|| Error::ReductionStuck {
            criterion: self.kind.to_string(),
            partial: None,
        })
    }

    fn step(&mut self) -> Result<((usize, usize), f64)> {
        if self.order() < 2 {
            return Err(Error::Argument("cannot reduce a mixture of order 1".into()));
        }
        if !self.scored || !self.cacheable() {
            self.rescore_full()?;
        }
        let (j, k, score) = self.select()?;
        let old_order = self.order();
        let merged = moment_preserving_merge(&self.comps[j], &self.comps[k])?;
        self.comps[j] = merged;
        self.comps.remove(k);
        let normalized = GaussianMixture::new(std::mem::take(&mut self.comps))?.normalize()?;
        self.comps = normalized.components().to_vec();
        if self.cacheable() && self.order() >= 2 {
            self.rescore_after_merge(j, k, old_order)?;
        }
        Ok(((j, k), score))
    }
}

// --- Global KL fit -----------------------------------------------------------

/// Knobs of [`global_kl_fit`].
#[derive(Clone, Debug)]
pub struct GlobalFitConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub restarts: usize,
    /// Integration domain; derived from the target mixture when absent.
    pub quad: Option<QuadSpec>,
}

impl Default for GlobalFitConfig {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-7, restarts: 3, quad: None }
    }
}

/// Outcome of a global fit.
#[derive(Clone, Debug)]
pub struct GlobalFitResult {
    pub mixture: GaussianMixture,
    /// Numeric KL divergence of the target against the returned mixture.
    pub kl: f64,
    /// True when the optimizer converged and the fit is at least as good as
    /// its initializer under the reference quadrature.
    pub converged: bool,
}

/// Locally minimize the numeric KL divergence of `g` against a mixture of
/// `target_order` components. Starts from `init` (defaulting to the greedy
/// Pearson reduction of `g`), runs `restarts` seeded perturbed restarts and
/// keeps the best, and never returns a mixture with a higher reference KL
/// than the initializer.
pub fn global_kl_fit(
    g: &GaussianMixture,
    target_order: usize,
    cfg: &GlobalFitConfig,
    init: Option<&GaussianMixture>,
) -> Result<GlobalFitResult> {
    let g = g.normalize()?;
    if g.dim() > 2 {
        return Err(Error::Argument(
            "global KL fit is supported for dimensions 1 and 2".into(),
        ));
    }
    if target_order < 1 || target_order > g.order() {
        return Err(Error::Argument(format!(
            "target order {target_order} out of range 1..={}",
            g.order()
        )));
    }
    let init_mix = match init {
        Some(m) => {
            if m.order() != target_order {
                return Err(Error::Argument(format!(
                    "initializer has order {}, expected {target_order}",
                    m.order()
                )));
            }
            m.normalize()?
        }
        None => reduce_to(&g, target_order, CriterionKind::PearsonChi2, false)?.final_mixture,
    };
    let spec_owned;
    let spec = match &cfg.quad {
        Some(q) => q,
        None => {
            spec_owned = QuadSpec::for_mixture(&g, 10.0)?;
            &spec_owned
        }
    };

    let grid = ObjectiveGrid::build(&g, spec);
    let dim = g.dim();
    let x0 = pack(&init_mix);
    let objective = |x: &[f64]| match unpack(x, dim, target_order) {
        Ok(mix) => grid.kl(&mix),
        Err(_) => f64::INFINITY,
    };

    // Scale of mean perturbations, from the spread of the target.
    let (_, gcov) = g.mixture_moments();
    let spread = (0..dim).map(|i| gcov[(i, i)]).fold(0.0_f64, f64::max).sqrt();

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut rng = SplitMix64::new(0x6d69_7866_6974_2173);
    for restart in 0..cfg.restarts.max(1) {
        let start = if restart == 0 {
            x0.clone()
        } else {
            perturb(&x0, dim, target_order, spread, &mut rng)
        };
        let (x, fx, converged) = bfgs(&objective, start, cfg.max_iter, cfg.grad_tol);
        let better = match &best {
            None => true,
            Some((_, bf, _)) => fx < *bf,
        };
        if better {
            best = Some((x, fx, converged));
        }
    }
    let (x_best, _, optimizer_converged) = best.expect("at least one restart runs");
    let fitted = unpack(&x_best, dim, target_order)?.normalize()?;

    let kl_fit = kl_numeric(&g, &fitted, spec)?;
    let kl_init = kl_numeric(&g, &init_mix, spec)?;
    if kl_fit <= kl_init {
        Ok(GlobalFitResult { mixture: fitted, kl: kl_fit, converged: optimizer_converged })
    } else {
        Ok(GlobalFitResult { mixture: init_mix, kl: kl_init, converged: false })
    }
}

/// Fixed-node quadrature of the KL objective: deterministic and smooth in
/// the fit parameters, which the quasi-Newton steps rely on. The reported
/// KL of the final fit is re-evaluated with the reference rules.
struct ObjectiveGrid {
    /// Row-major points, `dim` entries each.
    points: Vec<f64>,
    dim: usize,
    /// Quadrature weight times g at the point.
    wg: Vec<f64>,
    /// log g at the point.
    log_g: Vec<f64>,
}

impl ObjectiveGrid {
    fn build(g: &GaussianMixture, spec: &QuadSpec) -> Self {
        let dim = g.dim();
        let (mut points, mut weights) = (Vec::new(), Vec::new());
        match dim {
            1 => {
                let panels = (8 * g.order()).clamp(64, 512);
                let (t, w) = crate::quad::gauss_legendre(10);
                let (lo, hi) = (spec.lo[0], spec.hi[0]);
                let h = (hi - lo) / panels as f64;
                for p in 0..panels {
                    let c = lo + (p as f64 + 0.5) * h;
                    for (ti, wi) in t.iter().zip(&w) {
                        points.push(c + 0.5 * h * ti);
                        weights.push(0.5 * h * wi);
                    }
                }
            }
            _ => {
                let n = 140;
                let (t, w) = crate::quad::gauss_legendre(n);
                let cx = 0.5 * (spec.lo[0] + spec.hi[0]);
                let hx = 0.5 * (spec.hi[0] - spec.lo[0]);
                let cy = 0.5 * (spec.lo[1] + spec.hi[1]);
                let hy = 0.5 * (spec.hi[1] - spec.lo[1]);
                for i in 0..n {
                    for j in 0..n {
                        points.push(cx + hx * t[i]);
                        points.push(cy + hy * t[j]);
                        weights.push(hx * hy * w[i] * w[j]);
                    }
                }
            }
        }
        let mut keep_points = Vec::new();
        let mut wg = Vec::new();
        let mut log_g = Vec::new();
        for (idx, w) in weights.iter().enumerate() {
            let x = &points[idx * dim..(idx + 1) * dim];
            let lg = g.log_density_unchecked(x);
            if lg > -690.0 {
                keep_points.extend_from_slice(x);
                wg.push(w * lg.exp());
                log_g.push(lg);
            }
        }
        Self { points: keep_points, dim, wg, log_g }
    }

    fn kl(&self, f: &GaussianMixture) -> f64 {
        let mut acc = 0.0;
        for (i, (wg, lg)) in self.wg.iter().zip(&self.log_g).enumerate() {
            let x = &self.points[i * self.dim..(i + 1) * self.dim];
            let lf = f.log_density_unchecked(x).max(-690.0);
            acc += wg * (lg - lf);
        }
        acc
    }
}

/// Parameter layout: `order` weight logits, then `order*dim` means, then
/// `order` packed lower-triangular factors (diagonal stored as logs).
fn n_params(dim: usize, order: usize) -> usize {
    order + order * dim + order * dim * (dim + 1) / 2
}

fn pack(m: &GaussianMixture) -> Vec<f64> {
    let dim = m.dim();
    let order = m.order();
    let mut x = Vec::with_capacity(n_params(dim, order));
    for c in m.components() {
        x.push(c.weight().ln());
    }
    for c in m.components() {
        for i in 0..dim {
            x.push(c.mean()[i]);
        }
    }
    for c in m.components() {
        let chol = nalgebra::Cholesky::new(c.cov().clone()).expect("component covariance is PD");
        let l = chol.l();
        for i in 0..dim {
            for j in 0..=i {
                if i == j {
                    x.push(l[(i, i)].ln());
                } else {
                    x.push(l[(i, j)]);
                }
            }
        }
    }
    x
}

fn unpack(x: &[f64], dim: usize, order: usize) -> Result<GaussianMixture> {
    debug_assert_eq!(x.len(), n_params(dim, order));
    let max_logit = x[..order].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = x[..order].iter().map(|l| (l - max_logit).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mean_base = order;
    let chol_base = order + order * dim;
    let tri = dim * (dim + 1) / 2;
    let mut comps = Vec::with_capacity(order);
    for c in 0..order {
        let mean = DVector::from_fn(dim, |i, _| x[mean_base + c * dim + i]);
        let mut l = DMatrix::zeros(dim, dim);
        let mut idx = chol_base + c * tri;
        for i in 0..dim {
            for j in 0..=i {
                l[(i, j)] = if i == j { x[idx].exp() } else { x[idx] };
                idx += 1;
            }
        }
        let cov = symmetrize(&(&l * l.transpose()));
        comps.push(GaussianComponent::new(weights[c].max(1e-300), mean, cov)?);
    }
    GaussianMixture::new(comps)
}

fn perturb(
    x0: &[f64],
    dim: usize,
    order: usize,
    spread: f64,
    rng: &mut SplitMix64,
) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mean_base = order;
    let chol_base = order + order * dim;
    for v in x.iter_mut().take(order) {
        *v += 0.25 * rng.next_normal();
    }
    for v in x.iter_mut().take(chol_base).skip(mean_base) {
        *v += 0.1 * spread * rng.next_normal();
    }
    let tri = dim * (dim + 1) / 2;
    for c in 0..order {
        let mut idx = chol_base + c * tri;
        for i in 0..dim {
            for j in 0..=i {
                if i == j {
                    x[idx] += 0.15 * rng.next_normal();
                } else {
                    x[idx] += 0.05 * spread * rng.next_normal();
                }
                idx += 1;
            }
        }
    }
    x
}

fn num_grad<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 5e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp).min(1e300);
        xp[i] = x[i] - h;
        let fm = f(&xp).min(1e300);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// BFGS with backtracking Armijo line search and numerical gradients.
fn bfgs<F: Fn(&[f64]) -> f64>(
    f: &F,
    mut x: Vec<f64>,
    max_iter: usize,
    grad_tol: f64,
) -> (Vec<f64>, f64, bool) {
    let n = x.len();
    let mut fx = f(&x);
    let mut g = num_grad(f, &x);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        let g_inf = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if g_inf < grad_tol {
            return (x, fx, true);
        }
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&h * &gv);
        if p.dot(&gv) >= 0.0 {
            // Curvature lost; restart from steepest descent.
            h = DMatrix::identity(n, n);
            p = -gv.clone();
        }
        let slope = p.dot(&gv);
        let mut t = 1.0;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut ok = false;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + t * p[i];
            }
            f_new = f(&x_new);
            if f_new <= fx + 1e-4 * t * slope {
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if !ok {
            // No admissible step: accept the point as a (possibly flat)
            // local solution when the gradient is already small.
            return (x, fx, g_inf < 1e-3);
        }
        let g_new = num_grad(f, &x_new);
        let s = DVector::from_fn(n, |i, _| x_new[i] - x[i]);
        let y = DVector::from_fn(n, |i, _| g_new[i] - g[i]);
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // BFGS inverse update.
            h = &h - rho * (&hy * s.transpose() + &s * hy.transpose())
                + rho * rho * yhy * (&s * s.transpose())
                + rho * (&s * s.transpose());
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    (x, fx, false)
}

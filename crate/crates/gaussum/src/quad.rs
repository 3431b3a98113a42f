//! Reference numerical integration.
//!
//! One-dimensional integrals use adaptive Simpson with Richardson
//! acceptance; two-dimensional integrals use a tensor Gauss-Legendre rule.
//! Node sums are compensated and combined in a fixed order, so results are
//! bit-stable regardless of how many rayon threads evaluate them.
//!
//! These routines double as the oracles the closed-form criteria are
//! validated against and as the engine of the numeric-KL criterion.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussmix::GaussianMixture;
use crate::util::CompensatedSum;

/// Densities below this are treated as zero inside the KL integrand;
/// ln(1e-300).
const LN_TINY: f64 = -690.775_527_898_213_7;

/// Absolute floor under the relative Simpson acceptance. Integrands here
/// are built from densities of order one, whose evaluation noise makes
/// tolerances below this level meaningless.
const ABS_NOISE_FLOOR: f64 = 1e-14;

/// Integration domain and accuracy knobs.
///
/// `rel_tol`/`max_depth` drive the 1-D adaptive rule, `nodes_per_axis` the
/// 2-D tensor rule.
#[derive(Clone, Debug)]
pub struct QuadSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rel_tol: f64,
    pub max_depth: u32,
    pub nodes_per_axis: usize,
}

impl QuadSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Argument("box bounds have different lengths".into()));
        }
        if lo.is_empty() || lo.len() > 2 {
            return Err(Error::Argument(format!(
                "quadrature supports dimensions 1 and 2, got {}",
                lo.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a.partial_cmp(b) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Argument("box must satisfy lo < hi componentwise".into()));
        }
        Ok(Self { lo, hi, rel_tol: 1e-9, max_depth: 40, nodes_per_axis: 400 })
    }

    /// Box covering every component mean ± `box_k` standard deviations.
    pub fn for_mixture(m: &GaussianMixture, box_k: f64) -> Result<Self> {
        let (lo, hi) = default_box(m, box_k)?;
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_nodes_per_axis(mut self, nodes: usize) -> Self {
        self.nodes_per_axis = nodes;
        self
    }

    pub fn with_max_depth(mut self, depth: u32) -> Self {
        self.max_depth = depth;
        self
    }
}

/// Componentwise min/max over components of μᵢ ± k·√diag(Σᵢ).
pub fn default_box(m: &GaussianMixture, k: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Argument(format!("box multiplier must be positive, got {k}")));
    }
    let d = m.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in m.components() {
        for j in 0..d {
            let s = c.cov()[(j, j)].sqrt();
            lo[j] = lo[j].min(c.mean()[j] - k * s);
            hi[j] = hi[j].max(c.mean()[j] + k * s);
        }
    }
    Ok((lo, hi))
}

/// Integrate `f` over the box in `spec`: adaptive Simpson in 1-D (to
/// `rel_tol`, erroring with the best estimate if `max_depth` is exhausted),
/// tensor Gauss-Legendre with `nodes_per_axis` nodes per axis in 2-D.
pub fn integrate<F>(f: F, spec: &QuadSpec) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    match spec.dim() {
        1 => adaptive_simpson(
            &|x| f(&[x]),
            spec.lo[0],
            spec.hi[0],
            spec.rel_tol,
            spec.max_depth,
        ),
        2 => Ok(tensor_2d(&f, spec)),
        d => Err(Error::Argument(format!("unsupported quadrature dimension {d}"))),
    }
}

/// Kullback-Leibler divergence ∫ g(x) log(g(x)/f(x)) dx over the box in
/// `spec`. Where g underflows the contribution is zero; where f underflows
/// under positive g, f is floored so the integrand stays finite.
pub fn kl_numeric(g: &GaussianMixture, f: &GaussianMixture, spec: &QuadSpec) -> Result<f64> {
    if g.dim() != f.dim() {
        return Err(Error::Argument(format!(
            "mixtures have dimensions {} and {}",
            g.dim(),
            f.dim()
        )));
    }
    if g.dim() != spec.dim() {
        return Err(Error::Argument(format!(
            "box dimension {} does not match mixture dimension {}",
            spec.dim(),
            g.dim()
        )));
    }
    let integrand = |x: &[f64]| {
        let lg = g.log_density_unchecked(x);
        if lg < LN_TINY {
            return 0.0;
        }
        let lf = f.log_density_unchecked(x).max(LN_TINY);
        lg.exp() * (lg - lf)
    };
    integrate(integrand, spec)
}

fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = CompensatedSum::default();
    s.add(f(a));
    s.add(f(b));
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s.add(w * f(a + i as f64 * h));
    }
    s.total() * h / 3.0
}

fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_depth: u32,
) -> Result<f64> {
    // Coarse pass to set the absolute acceptance scale.
    let coarse = composite_simpson(f, a, b, 128);
    let tol = (rel_tol * coarse.abs()).max(ABS_NOISE_FLOOR);

    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut converged = true;
    let v = simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth, &mut converged);
    if converged {
        Ok(v)
    } else {
        Err(Error::QuadNoConvergence { best: v })
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let s2 = left + right;
    let diff = s2 - whole;
    if diff.abs() <= 15.0 * tol {
        return s2 + diff / 15.0;
    }
    if depth == 0 {
        *converged = false;
        return s2 + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, converged)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, converged)
}

fn tensor_2d<F: Fn(&[f64]) -> f64 + Sync>(f: &F, spec: &QuadSpec) -> f64 {
    let n = spec.nodes_per_axis.max(2);
    let (t, w) = gauss_legendre(n);
    let cx = 0.5 * (spec.lo[0] + spec.hi[0]);
    let hx = 0.5 * (spec.hi[0] - spec.lo[0]);
    let cy = 0.5 * (spec.lo[1] + spec.hi[1]);
    let hy = 0.5 * (spec.hi[1] - spec.lo[1]);
    // One compensated sum per outer node; rows combine in index order, so
    // the result does not depend on the thread count.
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = cx + hx * t[i];
            let mut s = CompensatedSum::default();
            for j in 0..n {
                let y = cy + hy * t[j];
                s.add(w[j] * f(&[x, y]));
            }
            s.total()
        })
        .collect();
    let mut s = CompensatedSum::default();
    for i in 0..n {
        s.add(w[i] * rows[i]);
    }
    s.total() * hx * hy
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

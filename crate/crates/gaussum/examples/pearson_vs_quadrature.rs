//! The closed-form Pearson chi-square divergence against brute-force
//! numerical integration.
//!
//! The divergence of a two-component sub-mixture q against its
//! moment-preserving merge p is ∫ q²/p dx − 1. The closed form assembles
//! it from two Gaussian ratio integrals; this example checks it against
//! adaptive quadrature of the definition, and shows the safe-guard case
//! where the ratio has no finite integral and the pair must be excluded.
//!
//! ```text
//! cargo run --release --example pearson_vs_quadrature
//! ```

use gaussum::gaussmix::{moment_preserving_merge, GaussianComponent, GaussianMixture};
use gaussum::{integrate, pearson_chi2, Error, QuadSpec};

fn main() -> gaussum::Result<()> {
    let a = GaussianComponent::new_1d(0.5, 0.0, 1.0)?;
    let b = GaussianComponent::new_1d(0.5, 5.0, 1.0)?;

    let closed = pearson_chi2(&a, &b)?;

    // Quadrature of the definition, with renormalized pair weights.
    let total = a.weight() + b.weight();
    let q = GaussianMixture::new(vec![
        a.with_weight(a.weight() / total)?,
        b.with_weight(b.weight() / total)?,
    ])?;
    let p = moment_preserving_merge(&a, &b)?.with_weight(1.0)?;
    let spec = QuadSpec::new(vec![-60.0], vec![65.0])?.with_rel_tol(1e-11);
    let quad = integrate(
        |x| {
            let qx = q.density_unchecked(x);
            qx * qx / p.density(x)
        },
        &spec,
    )? - 1.0;

    println!("pair: N(0,1) and N(5,1), equal weights");
    println!("closed form      : {closed:.12}");
    println!("quadrature       : {quad:.12}");
    println!("relative gap     : {:.3e}", (closed - quad).abs() / quad);

    // A wide, lightly weighted component against a narrow heavy one: the
    // merge is narrower than half the wide covariance, q²/p diverges, and
    // the criterion reports the pair as unmergeable.
    let wide = GaussianComponent::new_1d(0.01, 0.0, 10.0)?;
    let narrow = GaussianComponent::new_1d(0.99, 0.0, 1.0)?;
    match pearson_chi2(&wide, &narrow) {
        Err(Error::UnboundedRatio) => {
            println!("\nwide/narrow pair: ratio integral unbounded, pair excluded")
        }
        other => println!("\nunexpected outcome for the wide/narrow pair: {other:?}"),
    }
    Ok(())
}

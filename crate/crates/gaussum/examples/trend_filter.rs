//! Gaussian-sum filtering of a level-shifting series.
//!
//! The random-walk trend model with a two-component system noise (tiny
//! variance most of the time, a wide outlier component now and then) can
//! follow abrupt level shifts that a plain Kalman filter smears out. The
//! posterior order doubles every step, so it is capped by the greedy
//! reducer; the log-likelihood converges quickly in the cap.
//!
//! ```text
//! cargo run --release --example trend_filter
//! ```

use gaussum::{default_prior, fixtures, run_filter, trend_model, CriterionKind};
use nalgebra::{dvector, DVector};

fn main() -> gaussum::Result<()> {
    let model = trend_model(0.000254, 1.189, 0.989, 1.027)?;
    let ys: Vec<DVector<f64>> = fixtures::level_shift_series(fixtures::LEVEL_SHIFT_SEED)
        .into_iter()
        .map(|y| dvector![y])
        .collect();
    let prior = default_prior(1);

    println!("level-shift series: {} points, shifts at t=150 and t=300", ys.len());
    println!("{:>4} {:>14} {:>10}", "cap", "log-lik", "seconds");
    for cap in [1usize, 2, 4, 8, 16] {
        let start = std::time::Instant::now();
        let run = run_filter(&model, &ys, &prior, cap, CriterionKind::PearsonChi2)?;
        println!(
            "{cap:>4} {:>14.4} {:>10.3}",
            run.log_likelihood,
            start.elapsed().as_secs_f64()
        );
    }

    let run = run_filter(&model, &ys, &prior, 8, CriterionKind::PearsonChi2)?;
    println!("\nfiltered mean around the first shift (cap 8):");
    for t in [146usize, 148, 150, 152, 154, 158, 165] {
        let (mean, _) = run.filtered[t].mixture_moments();
        println!("  t={t:<3} observed {:+6.2}  filtered {:+6.3}", ys[t][0], mean[0]);
    }
    Ok(())
}

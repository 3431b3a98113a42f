//! Greedy reduction of the 16-component benchmark mixture.
//!
//! Scores every pair with the closed-form Pearson chi-square criterion,
//! merges the cheapest pair, and repeats down to 8 components, printing
//! the chosen pair and the numeric KL divergence to the original mixture
//! after every merge.
//!
//! ```text
//! cargo run --release --example reduce_mixture
//! ```

use gaussum::reduce::reduce_to_with;
use gaussum::{fixtures, CriterionKind, QuadSpec};

fn main() -> gaussum::Result<()> {
    let mixture = fixtures::benchmark_mixture_1d().normalize()?;
    println!(
        "benchmark mixture: {} components over {} dimension(s)",
        mixture.order(),
        mixture.dim()
    );

    let quad = QuadSpec::for_mixture(&mixture, 10.0)?;
    let trace = reduce_to_with(&mixture, 8, CriterionKind::PearsonChi2, true, Some(&quad))?;

    println!("{:>6} {:>10} {:>14} {:>14}", "order", "merged", "score", "kl to truth");
    for step in &trace.steps {
        println!(
            "{:>3} -> {:<2} ({:>2},{:>2}) {:>14.6e} {:>14.6e}",
            step.order_before,
            step.order_before - 1,
            step.chosen_pair.0,
            step.chosen_pair.1,
            step.score,
            step.kl_to_true.unwrap()
        );
    }

    println!("\nreduced mixture:");
    for (i, c) in trace.final_mixture.components().iter().enumerate() {
        println!(
            "  [{i}] weight {:.5}  mean {:+.4}  var {:.4}",
            c.weight(),
            c.mean()[0],
            c.cov()[(0, 0)]
        );
    }
    Ok(())
}

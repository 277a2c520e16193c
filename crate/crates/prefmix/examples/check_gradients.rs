//! Verify the hand-derived gradients against central finite differences.
//!
//!     cargo run --example check_gradients

use prefmix::model::{init_model, FeatureVector, PreferenceExample};
use prefmix::rng::DetRng;
use prefmix::trainer::grad_check;

fn main() -> prefmix::Result<()> {
    let mut rng = DetRng::new(42);
    let model = init_model(3, 8, 6, 32, &mut rng);
    let batch: Vec<PreferenceExample> = (0..12)
        .map(|_| {
            let mut draw =
                |d: usize| FeatureVector::new((0..d).map(|_| rng.normal()).collect()).unwrap();
            let ctx = draw(6);
            let winner = draw(8);
            let loser = draw(8);
            PreferenceExample::new(ctx, winner, loser).unwrap()
        })
        .collect();

    for step in [1e-5, 1e-1] {
        let report = grad_check(&model, &batch, 0.5, step, 1e-4, 7)?;
        println!(
            "step {step:.0e}: checked {} coordinates, max relative error {:.3e}, passed: {}",
            report.coordinates_checked, report.max_rel_error, report.passed
        );
        if let Some(warning) = &report.warning {
            println!("  warning: {warning}");
        }
        for failure in report.failures.iter().take(5) {
            println!(
                "  {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
                failure.coord, failure.analytic, failure.numeric, failure.rel_error
            );
        }
    }
    Ok(())
}

//! Pairwise interaction terms: magnitude across scales, the closed-form
//! derivatives, and the asymptotic decay exponent.

use shadowflow::bubbles::{interaction, interaction_da, interaction_dlam, ln_interaction};
use shadowflow::geometry::TorusPoint;

fn main() -> shadowflow::Result<()> {
    let n = 6;
    println!("coincident equal-scale pair: {}", interaction(0.0, 0.0, 0.0, n)?);

    println!("\nseparation d = 0.5, equal scales:");
    println!("{:>10} {:>14} {:>14}", "lambda", "eps", "dlog-scale eps");
    for k in 0..6 {
        let lambda = 10f64.powi(k + 1);
        let l = lambda.ln();
        let eps = interaction(l, l, 0.25, n)?;
        let dl = interaction_dlam(l, l, 0.25, n)?;
        println!("{lambda:>10.0} {eps:>14.3e} {dl:>14.3e}");
    }

    // decay exponent in the scale product: ln eps / ln(l_i l_j) -> (2-n)/2
    let mut prev: Option<(f64, f64)> = None;
    let mut last_slope = 0.0;
    for k in 0..40 {
        let l = 3.0 + 0.2 * k as f64;
        let le = ln_interaction(l, l, 0.25, n)?;
        if let Some((l0, le0)) = prev {
            last_slope = (le - le0) / (2.0 * l - 2.0 * l0);
        }
        prev = Some((l, le));
    }
    println!(
        "\nlocal decay exponent at high concentration: {last_slope:.4} (expected {})",
        (2.0 - n as f64) / 2.0
    );

    let ai = TorusPoint::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6])?;
    let aj = TorusPoint::new(vec![0.3, 0.2, 0.3, 0.4, 0.5, 0.6])?;
    let da = interaction_da(1000f64.ln(), 1000f64.ln(), &ai, &aj, n, 1.0)?;
    println!("\ncenter derivative at d = 0.2, lambda = 1000: {:?}", da.comps());
    Ok(())
}

//! Build the ladder cosine field, catalog its critical points and check the
//! non-degeneracy condition.

use shadowflow::config::Preset;
use shadowflow::geometry::{check_nondegeneracy, find_critical_points, MorseField, ND_TOL};

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::standard_field(6);
    let field = MorseField::with_kernel_scale(6, cfg.expr, cfg.kernel_scale)?;
    let crits = find_critical_points(&field, 4)?;

    println!(
        "{} critical points; field minimum bound {:.3}",
        crits.len(),
        field.min_value()
    );
    println!("{:<6} {:>5} {:>12} {:>12}  location", "idx", "m(K)", "laplacian", "residual");
    for (i, c) in crits.iter().enumerate().take(12) {
        println!(
            "c{i:<5} {:>5} {:>12.4} {:>12.2e}  {:?}",
            c.morse_index,
            c.laplacian,
            c.gradient_residual,
            c.location.coords()
        );
    }
    println!("... ({} more)", crits.len().saturating_sub(12));

    let negative = crits.iter().filter(|c| c.laplacian < 0.0).count();
    println!("\n{negative} points carry a negative Laplacian (admissible concentration targets)");

    let nd = check_nondegeneracy(&field, &crits, ND_TOL);
    println!("non-degeneracy: {}", if nd.ok { "ok" } else { "violated" });
    for v in nd.violations {
        println!("  {v}");
    }
    Ok(())
}

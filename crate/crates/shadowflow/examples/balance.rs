//! Balanced amplitudes: the unique scaling equilibrium and its round trip
//! through the balance diagnostics, plus both limiting-energy readings.

use shadowflow::bubbles::BubbleState;
use shadowflow::config::Preset;
use shadowflow::energy::{balance, balanced_amplitudes, limit_energy_readings};
use shadowflow::geometry::{MorseField, TorusPoint};

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::standard_field(6);
    let field = MorseField::with_kernel_scale(6, cfg.expr, cfg.kernel_scale)?;

    let centers = vec![
        TorusPoint::new(vec![0.0; 6])?,
        TorusPoint::new(vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0])?,
        TorusPoint::new(vec![0.0, 0.5, 0.0, 0.0, 0.0, 0.0])?,
    ];
    let kv: Vec<f64> = centers.iter().map(|c| field.value(c)).collect();
    println!("field values at the three anchors: {kv:?}");

    let alpha = balanced_amplitudes(&kv, 6, 1.0, 1.0)?;
    println!("balanced amplitudes (unit norm): {alpha:?}");

    let s = BubbleState::new(alpha, centers, vec![1e4, 1e4, 1e4], 0.0)?;
    let bal = balance(&s, &field)?;
    println!("balance round trip B_j: {:?}", bal.b);
    println!("max defect: {:.3e}", bal.max_defect());

    let (per_term, outer) = limit_energy_readings(&kv, 6);
    println!("\nlimiting-energy readings:");
    println!("  per-summand power : {per_term:.6}");
    println!("  whole-sum power   : {outer:.6}");
    Ok(())
}

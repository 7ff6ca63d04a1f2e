//! Full trajectory of the existence scenario: two bubbles at distinct maxima
//! concentrate forever, with exponential rates and the index at infinity.

use shadowflow::config::Preset;
use shadowflow::diagnostics::classify_end;
use shadowflow::integrator::{simulate, FlowContext};

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::Existence.run_config(6).expect("bubble preset");
    let resolved = cfg.resolve()?;
    let ctx = FlowContext {
        field: &resolved.field,
        constants: &cfg.constants,
        flow: &resolved.flow,
        perturbation: &cfg.perturbation,
        crits: &resolved.crits,
        integ: &cfg.integrator,
    };
    let traj = simulate(&resolved.state, &ctx)?;

    println!("{:>6} {:>12} {:>12} {:>12} {:>10}", "t", "min lambda", "energy", "vnorm", "defect");
    for s in traj.samples.iter().step_by(4) {
        let defect: f64 = s.balance.iter().map(|b| (1.0 - b).abs()).fold(0.0, f64::max);
        println!(
            "{:>6.2} {:>12.4e} {:>12.8} {:>12.3e} {:>10.2e}",
            s.t,
            s.state.min_log_lambda().exp(),
            s.energy,
            s.state.vnorm(),
            defect
        );
    }
    let event = traj.terminal_event();
    println!("\nterminal event: {} at t = {:.3} ({})", event.kind, event.t, event.detail);

    let end = classify_end(&traj, &resolved.crits, &resolved.field)?;
    println!("limit points: {:?} (distinct: {})", end.limit_points, end.distinct_limits);
    println!("index at infinity: {:?}", end.index_at_infinity);
    if let Some(rates) = &end.rates {
        println!("decay rates on the trailing half:");
        for (j, f) in rates.inv_lambda.iter().enumerate() {
            println!("  1/lambda_{j}: slope {:.3} (r2 {:.4})", f.slope, f.r2);
        }
        println!(
            "  vnorm: slope {:.3} (r2 {:.4}, collapsed {})",
            rates.vnorm.slope, rates.vnorm.r2, rates.vnorm.collapsed
        );
    }
    if let Some((a, b)) = end.limit_energy_readings {
        println!("limiting-energy readings: {a:.6} / {b:.6}");
    }
    Ok(())
}

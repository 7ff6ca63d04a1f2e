//! Two bubbles launched at the same maximum: the tower weights drive both
//! scales down until the configuration leaves the neighborhood.

use shadowflow::config::Preset;
use shadowflow::diagnostics::detect_tower;
use shadowflow::integrator::{simulate, FlowContext};

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::Tower.run_config(6).expect("bubble preset");
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

    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12}",
        "t", "lambda", "eps total", "tower gate", "dlog lambda"
    );
    for s in &traj.samples {
        println!(
            "{:>6.2} {:>12.2} {:>12.4e} {:>12.3} {:>12.4}",
            s.t,
            s.state.min_log_lambda().exp(),
            s.eps_total,
            s.etas.eta_lam_ge[0],
            s.dlog_lambda[0]
        );
    }
    let event = traj.terminal_event();
    println!("\nterminal event: {} at t = {:.3}", event.kind, event.t);
    println!("  {}", event.detail);

    let (attempt, floor) = detect_tower(&traj)?;
    println!("tower attempt detected: {attempt}");
    println!("pair floor inf_t sqrt(l_i l_j) d(a_i, a_j) = {floor:.3} (stays positive)");
    Ok(())
}

//! A bubble displaced from a maximum: the center gate opens, the scale channel
//! throttles, and the center ascends the field gradient.

use shadowflow::config::Preset;
use shadowflow::integrator::{simulate, FlowContext};

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::OffCritical.run_config(6).expect("bubble preset");
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
        "{:>6} {:>10} {:>12} {:>12} {:>12} {:>12}",
        "t", "a_1[0]", "K(a_1)", "lambda", "center gate", "dlog lambda"
    );
    let mut prev_k = f64::NEG_INFINITY;
    let mut ascent_ok = true;
    for s in traj.samples.iter().step_by(20) {
        let k = resolved.field.value(&s.state.centers()[0]);
        if k < prev_k - 1e-12 {
            ascent_ok = false;
        }
        prev_k = k;
        println!(
            "{:>6.1} {:>10.6} {:>12.8} {:>12.4e} {:>12.4} {:>12.4}",
            s.t,
            s.state.centers()[0].coords()[0],
            k,
            s.state.min_log_lambda().exp(),
            s.etas.eta_a[0],
            s.dlog_lambda[0]
        );
    }
    println!(
        "\nK(a_1) non-decreasing along the path: {ascent_ok}\nterminal event: {} at t = {:.2}",
        traj.terminal_event().kind,
        traj.terminal_event().t
    );
    Ok(())
}

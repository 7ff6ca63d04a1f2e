//! Gate values and velocities in three regimes: pure concentration, a tower
//! configuration, and an unbalanced amplitude vector.

use shadowflow::bubbles::BubbleState;
use shadowflow::config::Preset;
use shadowflow::energy::balanced_amplitudes;
use shadowflow::flow::{cutoffs, velocity, FlowConstants};
use shadowflow::geometry::{MorseField, TorusPoint};

fn show(tag: &str, s: &BubbleState, field: &MorseField, fc: &FlowConstants) -> shadowflow::Result<()> {
    let cr = cutoffs(s, field, fc)?;
    let v = velocity(s, field, fc, &cr, 1.0)?;
    println!("-- {tag}");
    println!(
        "   eta_alpha {:.3}  eta_v {:.3}  eta_a {:?}",
        cr.eta_alpha, cr.eta_v, cr.eta_a
    );
    println!(
        "   eta_lam_le {:?}  eta_lam_ge {:?}  m_tower {:?}",
        cr.eta_lam_le, cr.eta_lam_ge, cr.m_tower
    );
    println!(
        "   dlog_alpha {:?}\n   dlog_lambda {:?}  dvnorm {:.3e}",
        v.dlog_alpha, v.dlog_lambda, v.dvnorm
    );
    Ok(())
}

fn main() -> shadowflow::Result<()> {
    let cfg = Preset::two_maxima_field(6);
    let field = MorseField::with_kernel_scale(6, cfg.expr, cfg.kernel_scale)?;
    let fc = FlowConstants::defaults_for(2);

    let c1 = TorusPoint::new(vec![0.0; 6])?;
    let c2 = TorusPoint::new(vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let kv = [field.value(&c1), field.value(&c2)];
    let alpha = balanced_amplitudes(&kv, 6, 1.0, 1.0)?;

    // separated maxima, balanced, concentrated: every gate rests
    let pure = BubbleState::new(alpha.clone(), vec![c1.clone(), c2], vec![1e4, 1e4], 0.0)?;
    show("pure regime (distinct maxima)", &pure, &field, &fc)?;

    // both bubbles crowded at one maximum: the tower weights push scales down
    let near = TorusPoint::new(vec![0.0025, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let mirrored = TorusPoint::new(vec![0.9975, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let kv = [field.value(&near), field.value(&mirrored)];
    let alpha_t = balanced_amplitudes(&kv, 6, 1.0, 1.0)?;
    let tower = BubbleState::new(alpha_t, vec![near, mirrored], vec![1e3, 1e3], 0.0)?;
    show("tower regime (same maximum)", &tower, &field, &fc)?;

    // unbalanced amplitudes: the amplitude gate wakes up and the correction
    // keeps the weighted rate sum at zero
    let mut unb = alpha;
    unb[0] *= 1.01;
    let skew = BubbleState::new(
        unb,
        pure.centers().to_vec(),
        vec![1e4, 1e4],
        0.0,
    )?;
    show("amplitude push (B != 1)", &skew, &field, &fc)?;
    Ok(())
}

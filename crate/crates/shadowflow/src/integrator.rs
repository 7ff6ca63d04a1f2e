//! Adaptive trajectory integration in logarithmic coordinates.
//!
//! The integration variables are `ln alpha_i`, the raw center coordinates,
//! `ln lambda_i` and `ln vnorm` (the latter only when `vnorm > 0`; zero is an
//! invariant manifold and stays frozen exactly). An embedded Dormand-Prince
//! 5(4) pair supplies the error estimate; steps are capped so that samples land
//! exactly on multiples of the recording period.

use serde::{Deserialize, Serialize};

use crate::bubbles::{interaction_sums, BubbleState};
use crate::energy::{balance, reduced_energy, ExpansionConstants, PerturbationField};
use crate::flow::{cutoffs, region_check, velocity, CutoffReport, FlowConstants, FlowVelocity};
use crate::geometry::{torus_distance, CriticalPoint, MorseField, TorusPoint};
use crate::{Result, ShadowError};

/// Step-size and sampling control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub t_max: f64,
    pub record_every: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: 1e-3,
            h_max: 0.25,
            t_max: 200.0,
            record_every: 0.1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("h_init", self.h_init),
            ("h_max", self.h_max),
            ("t_max", self.t_max),
            ("record_every", self.record_every),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ShadowError::Config(format!(
                    "integrator {name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.rtol >= 1.0 {
            return Err(ShadowError::Config("rtol must be < 1".into()));
        }
        Ok(())
    }
}

/// Radius around a catalog critical point for convergence and end classification.
pub const CONV_RADIUS: f64 = 1e-3;
/// Balance-defect and remainder threshold for convergence detection.
pub const CONV_TOL: f64 = 1e-6;
/// Number of trailing samples that must satisfy the convergence conditions.
pub const CONV_WINDOW: usize = 20;
/// Minimum admissible step size before the run aborts.
pub const H_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ExitedRegion,
    Converged,
    TMaxReached,
    NdViolation,
    StepUnderflow,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventKind::ExitedRegion => "exited_region",
            EventKind::Converged => "converged",
            EventKind::TMaxReached => "t_max_reached",
            EventKind::NdViolation => "nd_violation",
            EventKind::StepUnderflow => "step_underflow",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
    pub detail: String,
}

/// Gate values recorded per sample (full pair matrices live behind the
/// cutoff-dump option of the runner).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaSummary {
    pub eta_alpha: f64,
    pub eta_v: f64,
    pub eta_a: Vec<f64>,
    pub eta_lam_ge: Vec<f64>,
    pub eta_lam_le: Vec<f64>,
}

impl EtaSummary {
    fn from_report(cr: &CutoffReport) -> Self {
        Self {
            eta_alpha: cr.eta_alpha,
            eta_v: cr.eta_v,
            eta_a: cr.eta_a.clone(),
            eta_lam_ge: cr.eta_lam_ge.clone(),
            eta_lam_le: cr.eta_lam_le.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub state: BubbleState,
    pub energy: f64,
    pub balance: Vec<f64>,
    pub eps_total: f64,
    pub etas: EtaSummary,
    pub dlog_lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn terminal_event(&self) -> &Event {
        self.events
            .last()
            .expect("trajectory carries its terminal event")
    }

    pub fn q(&self) -> usize {
        self.samples[0].state.q()
    }
}

/// Everything a trajectory integration needs besides the initial state.
pub struct FlowContext<'a> {
    pub field: &'a MorseField,
    pub constants: &'a ExpansionConstants,
    pub flow: &'a FlowConstants,
    pub perturbation: &'a PerturbationField,
    pub crits: &'a [CriticalPoint],
    pub integ: &'a IntegratorConfig,
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One embedded Runge-Kutta 5(4) step of an autonomous system.
///
/// Returns the fifth-order solution and the componentwise difference between
/// the fifth- and fourth-order solutions (the local error estimate).
pub fn rk_step<E, F>(f: &F, y: &[f64], h: f64) -> std::result::Result<(Vec<f64>, Vec<f64>), E>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, E>,
{
    let n = y.len();
    let stage = |coeffs: &[f64], ks: &[&Vec<f64>]| -> Vec<f64> {
        let mut out = y.to_vec();
        for (c, k) in coeffs.iter().zip(ks) {
            for i in 0..n {
                out[i] += h * c * k[i];
            }
        }
        out
    };
    let k1 = f(y)?;
    let k2 = f(&stage(&A2, &[&k1]))?;
    let k3 = f(&stage(&A3, &[&k1, &k2]))?;
    let k4 = f(&stage(&A4, &[&k1, &k2, &k3]))?;
    let k5 = f(&stage(&A5, &[&k1, &k2, &k3, &k4]))?;
    let k6 = f(&stage(&A6, &[&k1, &k2, &k3, &k4, &k5]))?;
    let ks = [&k1, &k2, &k3, &k4, &k5, &k6];
    let mut y5 = y.to_vec();
    for (c, k) in B5.iter().zip(ks) {
        for i in 0..n {
            y5[i] += h * c * k[i];
        }
    }
    let k7 = f(&y5)?;
    let mut err = vec![0.0; n];
    for i in 0..n {
        let mut y4i = y[i];
        for (c, k) in B4.iter().zip(ks.iter().copied().chain(std::iter::once(&k7))) {
            y4i += h * c * k[i];
        }
        err[i] = y5[i] - y4i;
    }
    Ok((y5, err))
}

fn pack(s: &BubbleState, track_v: bool) -> Vec<f64> {
    let mut y = Vec::with_capacity(s.q() * (2 + s.dim()) + 1);
    y.extend(s.alpha().iter().map(|a| a.ln()));
    for c in s.centers() {
        y.extend_from_slice(c.coords());
    }
    y.extend_from_slice(s.log_lambda());
    if track_v {
        y.push(s.vnorm().ln());
    }
    y
}

fn unpack(y: &[f64], q: usize, dim: usize, track_v: bool) -> Result<BubbleState> {
    let alpha: Vec<f64> = y[..q].iter().map(|l| l.exp()).collect();
    let mut centers = Vec::with_capacity(q);
    for i in 0..q {
        let start = q + i * dim;
        centers.push(TorusPoint::new(y[start..start + dim].to_vec())?);
    }
    let log_lambda = y[q + q * dim..q + q * dim + q].to_vec();
    let vnorm = if track_v { y[q + q * dim + q].exp() } else { 0.0 };
    BubbleState::from_log_lambda(alpha, centers, log_lambda, vnorm)
}

/// Evaluate cutoffs and velocity at a state.
pub fn field_at(s: &BubbleState, ctx: &FlowContext<'_>) -> Result<(CutoffReport, FlowVelocity)> {
    let cr = cutoffs(s, ctx.field, ctx.flow)?;
    let v = velocity(s, ctx.field, ctx.flow, &cr, ctx.constants.bubble_norm)?;
    Ok((cr, v))
}

fn rhs(y: &[f64], q: usize, dim: usize, track_v: bool, ctx: &FlowContext<'_>) -> Result<Vec<f64>> {
    let s = unpack(y, q, dim, track_v)?;
    let (_, v) = field_at(&s, ctx)?;
    let mut dy = Vec::with_capacity(y.len());
    dy.extend_from_slice(&v.dlog_alpha);
    for d in &v.da {
        dy.extend_from_slice(d.comps());
    }
    dy.extend_from_slice(&v.dlog_lambda);
    if track_v {
        // d/dt ln v = dvnorm / v
        dy.push(v.dvnorm / s.vnorm());
    }
    if dy.iter().any(|x| !x.is_finite()) {
        return Err(ShadowError::Numeric("non-finite velocity component".into()));
    }
    Ok(dy)
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / err.len() as f64).sqrt()
}

struct ConvFlags {
    crit_assignment: Option<Vec<usize>>,
    balanced: bool,
    small_v: bool,
    scales_growing: bool,
}

fn conv_flags(sample: &Sample, ctx: &FlowContext<'_>) -> ConvFlags {
    let s = &sample.state;
    let mut assignment = Vec::with_capacity(s.q());
    let mut ok = true;
    for c in s.centers() {
        let mut best: Option<(usize, f64)> = None;
        for (k, crit) in ctx.crits.iter().enumerate() {
            let d = torus_distance(c, &crit.location).expect("catalog dims");
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if d < CONV_RADIUS && ctx.crits[k].laplacian < 0.0 => assignment.push(k),
            _ => {
                ok = false;
                break;
            }
        }
    }
    ConvFlags {
        crit_assignment: if ok { Some(assignment) } else { None },
        balanced: sample.balance.iter().all(|b| (1.0 - b).abs() < CONV_TOL),
        small_v: s.vnorm() < CONV_TOL,
        scales_growing: sample.dlog_lambda.iter().all(|d| *d >= 0.5),
    }
}

fn converged(flags: &[ConvFlags]) -> bool {
    if flags.len() < CONV_WINDOW {
        return false;
    }
    let tail = &flags[flags.len() - CONV_WINDOW..];
    let first = match &tail[0].crit_assignment {
        Some(a) => a,
        None => return false,
    };
    tail.iter().all(|f| {
        f.balanced && f.small_v && f.scales_growing && f.crit_assignment.as_ref() == Some(first)
    })
}

fn make_sample(t: f64, s: &BubbleState, ctx: &FlowContext<'_>) -> Result<Sample> {
    let (cr, v) = field_at(s, ctx)?;
    let energy = reduced_energy(s, ctx.field, ctx.constants, ctx.perturbation)?;
    let bal = balance(s, ctx.field)?;
    let sums = interaction_sums(s, ctx.field.kernel_scale())?;
    Ok(Sample {
        t,
        state: s.clone(),
        energy,
        balance: bal.b,
        eps_total: sums.total,
        etas: EtaSummary::from_report(&cr),
        dlog_lambda: v.dlog_lambda,
    })
}

/// Integrate a trajectory from `s0` until a terminal event.
pub fn simulate(s0: &BubbleState, ctx: &FlowContext<'_>) -> Result<Trajectory> {
    ctx.integ.validate()?;
    let region = region_check(s0, ctx.field, ctx.flow.eps_region)?;
    if !region.inside {
        return Err(ShadowError::Config(format!(
            "initial state outside the concentration neighborhood: {}",
            region.violations.join("; ")
        )));
    }

    let q = s0.q();
    let dim = s0.dim();
    let track_v = s0.vnorm() > 0.0;
    let f = |y: &[f64]| rhs(y, q, dim, track_v, ctx);

    let mut t = 0.0;
    let mut y = pack(s0, track_v);
    let mut h = ctx.integ.h_init.min(ctx.integ.h_max);
    let mut err_prev: f64 = 1.0;

    let mut samples = Vec::new();
    let mut flags = Vec::new();
    let first = make_sample(0.0, s0, ctx)?;
    flags.push(conv_flags(&first, ctx));
    samples.push(first);

    let mut next_record = ctx.integ.record_every;
    let mut events = Vec::new();

    loop {
        let remaining = ctx.integ.t_max - t;
        if remaining <= 1e-14 {
            events.push(Event {
                kind: EventKind::TMaxReached,
                t,
                detail: format!("reached t_max = {}", ctx.integ.t_max),
            });
            break;
        }
        let h_cap = h
            .min(ctx.integ.h_max)
            .min(remaining)
            .min((next_record - t).max(1e-14));
        let step_result = rk_step(&f, &y, h_cap);
        let (y_new, err) = match step_result {
            Ok(v) => v,
            Err(ShadowError::NdViolation(msg)) => {
                events.push(Event {
                    kind: EventKind::NdViolation,
                    t,
                    detail: msg,
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let en = error_norm(&err, &y, &y_new, ctx.integ.rtol, ctx.integ.atol);
        if en <= 1.0 {
            let t_new = t + h_cap;
            let s_new = unpack(&y_new, q, dim, track_v)?;
            let region = region_check(&s_new, ctx.field, ctx.flow.eps_region)?;
            if !region.inside {
                let (t_exit, y_exit) = bisect_exit(&f, &y, t, h_cap, q, dim, track_v, ctx)?;
                let s_exit = unpack(&y_exit, q, dim, track_v)?;
                if let Ok(sample) = make_sample(t_exit, &s_exit, ctx) {
                    samples.push(sample);
                }
                let check = region_check(&s_exit, ctx.field, ctx.flow.eps_region)?;
                events.push(Event {
                    kind: EventKind::ExitedRegion,
                    t: t_exit,
                    detail: check.violations.join("; "),
                });
                break;
            }
            t = t_new;
            y = y_new;
            if (t - next_record).abs() <= 1e-12 || t >= next_record {
                let sample = make_sample(t, &unpack(&y, q, dim, track_v)?, ctx)?;
                flags.push(conv_flags(&sample, ctx));
                samples.push(sample);
                next_record += ctx.integ.record_every;
                if converged(&flags) {
                    events.push(Event {
                        kind: EventKind::Converged,
                        t,
                        detail: format!(
                            "trailing {CONV_WINDOW} samples within conv_radius = {CONV_RADIUS}, conv_tol = {CONV_TOL}"
                        ),
                    });
                    break;
                }
            }
            // PI step control; artificial caps (record alignment, t_max) must
            // not feed back into the accuracy-driven step size
            let e_clamped = en.max(1e-10);
            let fac = 0.9 * e_clamped.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            let h_acc = h_cap * fac.clamp(0.2, 5.0);
            h = if h_cap < h { h.max(h_acc) } else { h_acc };
            err_prev = e_clamped;
        } else {
            h = h_cap * (0.9 * en.powf(-1.0 / 5.0)).clamp(0.2, 1.0);
            if h < H_MIN {
                events.push(Event {
                    kind: EventKind::StepUnderflow,
                    t,
                    detail: format!("step size {h:.3e} below {H_MIN:.0e}"),
                });
                break;
            }
        }
    }

    Ok(Trajectory { samples, events })
}

/// Bisect the exit time over the last step down to 1e-9 in t.
#[allow(clippy::too_many_arguments)]
fn bisect_exit<F>(
    f: &F,
    y_in: &[f64],
    t_in: f64,
    h: f64,
    q: usize,
    dim: usize,
    track_v: bool,
    ctx: &FlowContext<'_>,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut lo = 0.0f64;
    let mut hi = h;
    let mut y_hi = {
        let (y, _) = rk_step(f, y_in, h)?;
        y
    };
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (y_mid, _) = rk_step(f, y_in, mid)?;
        let s_mid = unpack(&y_mid, q, dim, track_v)?;
        if region_check(&s_mid, ctx.field, ctx.flow.eps_region)?.inside {
            lo = mid;
        } else {
            hi = mid;
            y_hi = y_mid;
        }
    }
    Ok((t_in + hi, y_hi))
}

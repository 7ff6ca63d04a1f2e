//! The gated, norm-preserving velocity field on the reduced phase space.
//!
//! Each movement channel (amplitude, center, scale, remainder) is switched by
//! a smooth gate that compares a diagnostic quantity against thresholds
//! `sqrt(kappa)` and `kappa`; gates are exactly 0 below the lower threshold and
//! exactly 1 above the upper one, interpolating in log scale between them.
//! Taller bubbles in near-coincident groups receive exponentially larger
//! downward scale weights, which is what repels tower configurations.

use serde::{Deserialize, Serialize};

use crate::bubbles::{interaction_sums, BubbleState};
use crate::energy::{balance, BalanceVector};
use crate::geometry::{MorseField, TangentVector};
use crate::{Result, ShadowError};

/// Unit-gradient guard: below this the center direction is left at zero.
pub const GRAD_FLOOR: f64 = 1e-14;

/// Gate thresholds and couplings of the velocity field.
///
/// The constructor enforces the hierarchy `kappa >= 4`,
/// `kappa_lambda >= kappa^(2 q^2 + 1)`, `kappa_a >= kappa_lambda^3`,
/// `kappa_alpha >= 100`, `kappa_v >= 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConstants {
    pub kappa: f64,
    pub kappa_lambda: f64,
    pub kappa_a: f64,
    pub kappa_alpha: f64,
    pub kappa_v: f64,
    /// Remainder damping rate.
    pub c_v: f64,
    /// Coupling of the remainder source to the scale/center speeds.
    pub c_b: f64,
    /// The epsilon of the concentration neighborhood.
    pub eps_region: f64,
}

impl Default for FlowConstants {
    fn default() -> Self {
        Self::defaults_for(2)
    }
}

impl FlowConstants {
    /// Smallest constants satisfying the hierarchy for a given bubble count.
    pub fn defaults_for(q: usize) -> Self {
        let kappa = 4.0f64;
        let kappa_lambda = kappa.powi(2 * (q * q) as i32 + 1);
        let kappa_a = kappa_lambda.powi(3);
        Self {
            kappa,
            kappa_lambda,
            kappa_a,
            kappa_alpha: 100.0,
            kappa_v: 100.0,
            c_v: 10.0,
            c_b: 1.0,
            eps_region: 0.01,
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.kappa >= 4.0) {
            problems.push(format!("kappa = {} must be >= 4", self.kappa));
        }
        let lam_min = self.kappa.powi(2 * (q * q) as i32 + 1);
        if !(self.kappa_lambda >= lam_min) {
            problems.push(format!(
                "kappa_lambda = {} must be >= kappa^(2q^2+1) = {lam_min} for q = {q}",
                self.kappa_lambda
            ));
        }
        let a_min = self.kappa_lambda.powi(3);
        if !(self.kappa_a >= a_min) {
            problems.push(format!(
                "kappa_a = {} must be >= kappa_lambda^3 = {a_min}",
                self.kappa_a
            ));
        }
        if !(self.kappa_alpha >= 100.0) {
            problems.push(format!("kappa_alpha = {} must be >= 100", self.kappa_alpha));
        }
        if !(self.kappa_v >= 100.0) {
            problems.push(format!("kappa_v = {} must be >= 100", self.kappa_v));
        }
        if !(self.c_v > 0.0) {
            problems.push(format!("c_v = {} must be > 0", self.c_v));
        }
        if !(self.c_b >= 0.0) {
            problems.push(format!("c_b = {} must be >= 0", self.c_b));
        }
        if !(self.eps_region > 0.0 && self.eps_region < 1.0) {
            problems.push(format!(
                "eps_region = {} must lie in (0, 1)",
                self.eps_region
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ShadowError::Config(problems.join("; ")))
        }
    }
}

/// Cubic step: 0 for `s <= 1/2`, 1 for `s >= 1`, monotone in between.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.5 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let u = 2.0 * s - 1.0;
        u * u * (3.0 - 2.0 * u)
    }
}

/// Log-scale gate: 0 for `x <= lo`, 1 for `x >= hi`.
pub fn gate(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && lo < hi) {
        return Err(ShadowError::Config(format!(
            "gate thresholds need 0 < lo < hi, got lo = {lo}, hi = {hi}"
        )));
    }
    Ok(gate_inner(x, lo, hi))
}

fn gate_inner(x: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo > 0.0 && lo < hi);
    if x <= lo {
        0.0
    } else if x >= hi {
        1.0
    } else {
        smoothstep((x.ln() - lo.ln()) / (2.0 * (hi.ln() - lo.ln())) + 0.5)
    }
}

/// All gate values and tower weights at a state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub eta_v: f64,
    pub eta_alpha: f64,
    pub eta_a: Vec<f64>,
    pub eta_lam_ge: Vec<f64>,
    pub eta_lam_le: Vec<f64>,
    /// `m_pair[j][i] = smoothstep(lambda_j / lambda_i)`; diagonal is 1.
    pub m_pair: Vec<Vec<f64>>,
    /// `m_tower[j] = kappa^(sum_{i != j} m_pair[j][i])`
    pub m_tower: Vec<f64>,
}

pub fn cutoffs(s: &BubbleState, field: &MorseField, fc: &FlowConstants) -> Result<CutoffReport> {
    fc.validate(s.q())?;
    let q = s.q();
    let sums = interaction_sums(s, field.kernel_scale())?;
    let bal = balance(s, field)?;

    // shared denominator: per-bubble terms plus the fractional interaction sum
    let mut denom_base = 0.0;
    for r in 0..q {
        let inv_l = (-s.log_lambda()[r]).exp();
        denom_base += field.gradient(&s.centers()[r]).norm() * inv_l + inv_l * inv_l;
    }
    denom_base += sums.pow_frac;

    let eta_alpha = gate_inner(
        bal.total_defect() / denom_base,
        fc.kappa_alpha.sqrt(),
        fc.kappa_alpha,
    );
    let eta_v = gate_inner(
        s.vnorm() / (denom_base + bal.total_defect()),
        fc.kappa_v.sqrt(),
        fc.kappa_v,
    );

    let mut eta_a = Vec::with_capacity(q);
    let mut eta_lam_ge = Vec::with_capacity(q);
    let mut eta_lam_le = Vec::with_capacity(q);
    for j in 0..q {
        let l_j = s.log_lambda()[j].exp();
        let grad_norm = field.gradient(&s.centers()[j]).norm();
        eta_a.push(gate_inner(l_j * grad_norm, fc.kappa_a.sqrt(), fc.kappa_a));
        let scaled = l_j * l_j * sums.total;
        eta_lam_ge.push(gate_inner(scaled, fc.kappa_lambda.sqrt(), fc.kappa_lambda));
        eta_lam_le.push(
            1.0 - gate_inner(
                scaled,
                1.0 / fc.kappa_lambda,
                1.0 / fc.kappa_lambda.sqrt(),
            ),
        );
    }

    let mut m_pair = vec![vec![1.0; q]; q];
    for j in 0..q {
        for i in 0..q {
            if i != j {
                let dl = s.log_lambda()[j] - s.log_lambda()[i];
                let ratio = if dl >= 0.0 { 1.0 } else { dl.exp() };
                m_pair[j][i] = smoothstep(ratio);
            }
        }
    }
    let m_tower = (0..q)
        .map(|j| {
            let sum: f64 = (0..q).filter(|i| *i != j).map(|i| m_pair[j][i]).sum();
            fc.kappa.powf(sum)
        })
        .collect();

    Ok(CutoffReport {
        eta_v,
        eta_alpha,
        eta_a,
        eta_lam_ge,
        eta_lam_le,
        m_pair,
        m_tower,
    })
}

/// Norm-preserving amplitude correction:
/// `-(sum_i beta_i alpha_i^2 cbar0^2) / (sum_i alpha_i^2 cbar0^2)`.
pub fn norm_correction(beta_alpha: &[f64], s: &BubbleState, cbar0: f64) -> f64 {
    let c2 = cbar0 * cbar0;
    let num: f64 = beta_alpha
        .iter()
        .zip(s.alpha())
        .map(|(b, a)| b * a * a * c2)
        .sum();
    let den: f64 = s.alpha().iter().map(|a| a * a * c2).sum();
    -num / den
}

/// Velocity of the reduced flow at a state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowVelocity {
    /// `d/dt ln alpha_j` (gated balance push plus the norm correction).
    pub dlog_alpha: Vec<f64>,
    /// `d/dt a_j`; the norm is capped by `1 / lambda_j`.
    pub da: Vec<TangentVector>,
    /// `d/dt ln lambda_j`.
    pub dlog_lambda: Vec<f64>,
    /// `d/dt vnorm`.
    pub dvnorm: f64,
}

pub fn velocity(
    s: &BubbleState,
    field: &MorseField,
    fc: &FlowConstants,
    cr: &CutoffReport,
    cbar0: f64,
) -> Result<FlowVelocity> {
    let q = s.q();
    let bal: BalanceVector = balance(s, field)?;
    let pref = (1.0 - cr.eta_alpha) * (1.0 - cr.eta_v);

    let beta: Vec<f64> = (0..q)
        .map(|j| -cr.eta_alpha * (1.0 - cr.eta_v) / (cbar0 * cbar0) * (1.0 - bal.b[j]))
        .collect();
    let b_alpha = norm_correction(&beta, s, cbar0);
    let dlog_alpha: Vec<f64> = beta.iter().map(|b| b + b_alpha).collect();

    let mut da = Vec::with_capacity(q);
    for j in 0..q {
        let g = field.gradient(&s.centers()[j]);
        let gn = g.norm();
        if cr.eta_a[j] > 0.0 && gn >= GRAD_FLOOR {
            let scale = pref * cr.eta_a[j] / (gn * s.log_lambda()[j].exp());
            da.push(g.scale(scale));
        } else {
            da.push(TangentVector::zeros(s.dim()));
        }
    }

    let mut dlog_lambda = Vec::with_capacity(q);
    for j in 0..q {
        let mut shrink = 1.0;
        for i in 0..q {
            shrink *= (1.0 - cr.eta_a[i]).powf(cr.m_pair[j][i]);
        }
        let le_factor = cr.eta_lam_le[j] * shrink;
        let lap = field.laplacian(&s.centers()[j]);
        let le_term = if le_factor > 0.0 {
            if lap == 0.0 {
                return Err(ShadowError::NdViolation(format!(
                    "Laplacian vanishes at bubble {j} while its scale channel is active"
                )));
            }
            le_factor * lap.signum()
        } else {
            0.0
        };
        dlog_lambda.push(-pref * (le_term + cr.eta_lam_ge[j] * cr.m_tower[j]));
    }

    let mut drive = 0.0;
    for j in 0..q {
        drive += dlog_lambda[j].abs() + s.log_lambda()[j].exp() * da[j].norm();
    }
    let dvnorm = (-fc.c_v + fc.c_b * drive) * s.vnorm();

    Ok(FlowVelocity {
        dlog_alpha,
        da,
        dlog_lambda,
        dvnorm,
    })
}

/// Membership in the concentration neighborhood, with the violated clauses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCheck {
    pub inside: bool,
    pub violations: Vec<String>,
}

pub fn region_check(s: &BubbleState, field: &MorseField, eps: f64) -> Result<RegionCheck> {
    let mut violations = Vec::new();
    for i in 0..s.q() {
        let inv_l = (-s.log_lambda()[i]).exp();
        if !(inv_l < eps) {
            violations.push(format!("1/lambda_{i} = {inv_l:.3e} >= {eps}"));
        }
    }
    let m = crate::bubbles::InteractionMatrix::compute(s, field.kernel_scale())?;
    for i in 0..s.q() {
        for j in (i + 1)..s.q() {
            if !(m.eps[i][j] < eps) {
                violations.push(format!(
                    "interaction({i},{j}) = {:.3e} >= {eps}",
                    m.eps[i][j]
                ));
            }
        }
    }
    let bal = balance(s, field)?;
    for (i, b) in bal.b.iter().enumerate() {
        let defect = (1.0 - b).abs();
        if !(defect < eps) {
            violations.push(format!("|1 - B_{i}| = {defect:.3e} >= {eps}"));
        }
    }
    if !(s.vnorm() < eps) {
        violations.push(format!("vnorm = {:.3e} >= {eps}", s.vnorm()));
    }
    Ok(RegionCheck {
        inside: violations.is_empty(),
        violations,
    })
}

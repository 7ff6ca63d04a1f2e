//! Trajectory post-processing: exponential rates, end-state classification,
//! the index at infinity, tower detection and a closed-form toy landscape.

use serde::Serialize;

use crate::geometry::{torus_distance, CriticalPoint};
use crate::integrator::{EventKind, Trajectory, CONV_RADIUS};
use crate::{Result, ShadowError};

/// Pairs closer than this while concentrated count as a tower attempt.
pub const TOWER_RADIUS: f64 = 0.05;
/// Permitted relative energy increase between consecutive samples.
pub const MONO_TOL: f64 = 1e-8;
/// A series entirely below this floor is reported as already at its limit.
pub const COLLAPSE_FLOOR: f64 = 1e-13;

/// Least-squares exponential fit `y ~ exp(intercept + slope * t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: (f64, f64),
    /// The series sat below `COLLAPSE_FLOOR` everywhere: the limit is already
    /// attained and slope/intercept are reported as negative infinity.
    pub collapsed: bool,
}

impl RateFit {
    fn collapsed(window: (f64, f64)) -> Self {
        Self {
            slope: f64::NEG_INFINITY,
            intercept: f64::NEG_INFINITY,
            r2: 1.0,
            window,
            collapsed: true,
        }
    }
}

/// Linear regression of `ln y` against `t` over the window.
pub fn fit_exponential(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if pts.len() < 10 {
        return Err(ShadowError::InsufficientData(format!(
            "exponential fit needs >= 10 samples in window, got {}",
            pts.len()
        )));
    }
    if let Some((t, y)) = pts.iter().find(|(_, y)| !(*y > 0.0)) {
        return Err(ShadowError::Domain(format!(
            "exponential fit requires y > 0; y({t}) = {y}"
        )));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(ShadowError::InsufficientData(
            "degenerate time axis in fit window".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if ss_tot <= 1e-30 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        window,
        collapsed: false,
    })
}

/// Fit a series, treating an identically-tiny series as collapsed-at-limit.
fn fit_or_collapsed(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let in_window: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if !in_window.is_empty() && in_window.iter().all(|(_, y)| y.abs() < COLLAPSE_FLOOR) {
        return Ok(RateFit::collapsed(window));
    }
    fit_exponential(series, window)
}

/// Decay fits for the four concentration diagnostics, per bubble where
/// applicable. A center-distance entry is absent when the bubble has no
/// limit point to measure against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub inv_lambda: Vec<RateFit>,
    pub balance_defect: Vec<RateFit>,
    pub vnorm: RateFit,
    pub center_dist: Vec<Option<RateFit>>,
}

/// Classification of a finished flow line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndReport {
    pub outcome: EventKind,
    pub t_end: f64,
    /// Catalog index of the nearest critical point per bubble, when within
    /// `CONV_RADIUS` of one.
    pub limit_points: Vec<Option<usize>>,
    pub distinct_limits: bool,
    pub rates: Option<RateTable>,
    pub index_at_infinity: Option<usize>,
    /// Limiting-energy readings (per-summand power, whole-sum power).
    pub limit_energy_readings: Option<(f64, f64)>,
}

/// Index at infinity of a set of limiting critical points:
/// `(q - 1) + sum_i (n - morse_index_i)`.
pub fn index_at_infinity(crits: &[&CriticalPoint], dim: usize) -> usize {
    let q = crits.len();
    (q - 1) + crits.iter().map(|c| dim - c.morse_index).sum::<usize>()
}

/// Classify a finished trajectory against a critical-point catalog.
pub fn classify_end(
    traj: &Trajectory,
    crits: &[CriticalPoint],
    field: &crate::geometry::MorseField,
) -> Result<EndReport> {
    let dim = field.dim();
    let last = traj
        .samples
        .last()
        .ok_or_else(|| ShadowError::InsufficientData("empty trajectory".into()))?;
    let terminal = traj.terminal_event().clone();
    let q = traj.q();

    let mut limit_points: Vec<Option<usize>> = Vec::with_capacity(q);
    for c in last.state.centers() {
        let mut best: Option<(usize, f64)> = None;
        for (k, crit) in crits.iter().enumerate() {
            let d = torus_distance(c, &crit.location)?;
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((k, d));
            }
        }
        limit_points.push(match best {
            Some((k, d)) if d < CONV_RADIUS && crits[k].laplacian < 0.0 => Some(k),
            _ => None,
        });
    }
    let all_mapped = limit_points.iter().all(|p| p.is_some());
    let distinct_limits = all_mapped && {
        let mut seen: Vec<usize> = limit_points.iter().map(|p| p.unwrap()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len() == q
    };

    // rate fits on the trailing half
    let t_end = last.t;
    let window = (t_end / 2.0, t_end);
    let enough = traj
        .samples
        .iter()
        .filter(|s| s.t >= window.0 && s.t <= window.1)
        .count()
        >= 10;
    let rates = if enough {
        let mut inv_lambda = Vec::with_capacity(q);
        let mut balance_defect = Vec::with_capacity(q);
        let mut center_dist = Vec::with_capacity(q);
        for j in 0..q {
            let inv: Vec<(f64, f64)> = traj
                .samples
                .iter()
                .map(|s| (s.t, (-s.state.log_lambda()[j]).exp()))
                .collect();
            inv_lambda.push(fit_or_collapsed(&inv, window)?);
            let bd: Vec<(f64, f64)> = traj
                .samples
                .iter()
                .map(|s| (s.t, (1.0 - s.balance[j]).abs()))
                .collect();
            balance_defect.push(fit_or_collapsed(&bd, window)?);
            center_dist.push(match limit_points[j] {
                Some(k) => {
                    let cd: Vec<(f64, f64)> = traj
                        .samples
                        .iter()
                        .map(|s| {
                            let d = torus_distance(&s.state.centers()[j], &crits[k].location)
                                .expect("catalog dims");
                            (s.t, d)
                        })
                        .collect();
                    Some(fit_or_collapsed(&cd, window)?)
                }
                None => None,
            });
        }
        let vs: Vec<(f64, f64)> = traj
            .samples
            .iter()
            .map(|s| (s.t, s.state.vnorm()))
            .collect();
        let vnorm = fit_or_collapsed(&vs, window)?;
        Some(RateTable {
            inv_lambda,
            balance_defect,
            vnorm,
            center_dist,
        })
    } else {
        None
    };

    let index = if terminal.kind == EventKind::Converged && distinct_limits {
        let picked: Vec<&CriticalPoint> = limit_points
            .iter()
            .map(|p| &crits[p.unwrap()])
            .collect();
        Some(index_at_infinity(&picked, dim))
    } else {
        None
    };

    let limit_energy_readings = if all_mapped {
        let kv: Vec<f64> = limit_points
            .iter()
            .map(|p| field.value(&crits[p.unwrap()].location))
            .collect();
        Some(crate::energy::limit_energy_readings(&kv, dim))
    } else {
        None
    };

    Ok(EndReport {
        outcome: terminal.kind,
        t_end,
        limit_points,
        distinct_limits,
        rates,
        index_at_infinity: index,
        limit_energy_readings,
    })
}

/// Tower-attempt detection over a trajectory.
///
/// Returns whether any pair of bubbles came within `TOWER_RADIUS` while both
/// scales were at least 10, together with the infimum over time of
/// `sqrt(lambda_i lambda_j) * d(a_i, a_j)` for the closest pair.
pub fn detect_tower(traj: &Trajectory) -> Result<(bool, f64)> {
    let q = traj.q();
    if q < 2 {
        return Err(ShadowError::Domain(
            "tower detection needs at least two bubbles".into(),
        ));
    }
    let mut attempt = false;
    let mut floor = f64::INFINITY;
    for s in &traj.samples {
        let st = &s.state;
        let mut closest: Option<(usize, usize, f64)> = None;
        for i in 0..q {
            for j in (i + 1)..q {
                let d = torus_distance(&st.centers()[i], &st.centers()[j])?;
                if closest.map(|(_, _, bd)| d < bd).unwrap_or(true) {
                    closest = Some((i, j, d));
                }
                if d < TOWER_RADIUS && st.lambda(i) >= 10.0 && st.lambda(j) >= 10.0 {
                    attempt = true;
                }
            }
        }
        if let Some((i, j, d)) = closest {
            let v = (0.5 * (st.log_lambda()[i] + st.log_lambda()[j])).exp() * d;
            floor = floor.min(v);
        }
    }
    Ok((attempt, floor))
}

/// Scan for energy increases beyond `MONO_TOL * (1 + |J|)`.
pub fn verify_energy_monotone(traj: &Trajectory) -> Result<(bool, f64)> {
    if traj.samples.len() < 2 {
        return Err(ShadowError::InsufficientData(
            "monotonicity scan needs >= 2 samples".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for w in traj.samples.windows(2) {
        let increase = w[1].energy - w[0].energy;
        if increase > 0.0 {
            worst = worst.max(increase);
            if increase > MONO_TOL * (1.0 + w[0].energy.abs()) {
                ok = false;
            }
        }
    }
    Ok((ok, worst))
}

/// Sampled path of the toy landscape `J(x) = 1 + 1/x_n + sum_i b_i x_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyPath {
    pub samples: Vec<(f64, Vec<f64>)>,
    pub energies: Vec<f64>,
    /// Cell dimension attached by the escape: the number of negative `b_i`.
    pub index_at_infinity: usize,
}

pub fn toy_energy(x: &[f64], signs: &[i8]) -> f64 {
    let n = x.len();
    let mut j = 1.0 + 1.0 / x[n - 1];
    for (xi, b) in x[..n - 1].iter().zip(signs) {
        j += f64::from(*b) * xi * xi;
    }
    j
}

/// Negative gradient of the toy landscape.
pub fn toy_rhs(x: &[f64], signs: &[i8]) -> Vec<f64> {
    let n = x.len();
    let mut dx = Vec::with_capacity(n);
    for (xi, b) in x[..n - 1].iter().zip(signs) {
        dx.push(-2.0 * f64::from(*b) * xi);
    }
    dx.push(1.0 / (x[n - 1] * x[n - 1]));
    dx
}

/// Closed-form descent solution: `x_i(t) = x_i(0) e^(-2 b_i t)` and
/// `x_n(t) = (x_n(0)^3 + 3 t)^(1/3)`.
pub fn toy_closed_form(x0: &[f64], signs: &[i8], t: f64) -> Vec<f64> {
    let n = x0.len();
    let mut x = Vec::with_capacity(n);
    for (xi, b) in x0[..n - 1].iter().zip(signs) {
        x.push(xi * (-2.0 * f64::from(*b) * t).exp());
    }
    x.push((x0[n - 1].powi(3) + 3.0 * t).cbrt());
    x
}

/// Integrate the toy descent path via the closed form, sampling uniformly.
pub fn toy_flow(x0: &[f64], signs: &[i8], t_end: f64) -> Result<ToyPath> {
    let n = x0.len();
    if n < 2 {
        return Err(ShadowError::Domain(
            "toy landscape needs at least two coordinates".into(),
        ));
    }
    if signs.len() != n - 1 {
        return Err(ShadowError::DimensionMismatch(format!(
            "need {} signs for {} coordinates, got {}",
            n - 1,
            n,
            signs.len()
        )));
    }
    if signs.iter().any(|b| *b != 1 && *b != -1) {
        return Err(ShadowError::Domain("signs must be +1 or -1".into()));
    }
    if !(x0[n - 1] > 0.0) {
        return Err(ShadowError::Domain(
            "the escape coordinate must start > 0".into(),
        ));
    }
    if !(t_end > 0.0) {
        return Err(ShadowError::Domain("t_end must be > 0".into()));
    }
    let steps = 200usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t_end * k as f64 / steps as f64;
        let x = toy_closed_form(x0, signs, t);
        energies.push(toy_energy(&x, signs));
        samples.push((t, x));
    }
    Ok(ToyPath {
        samples,
        energies,
        index_at_infinity: signs.iter().filter(|b| **b < 0).count(),
    })
}

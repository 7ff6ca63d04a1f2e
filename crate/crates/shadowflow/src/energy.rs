//! Reduced energy of a bubble configuration and its principal gradients.
//!
//! Everything here evaluates the principal parts of the expansion only; the
//! expansion constants are configurable and default to 1. The
//! [`ExpansionConstants::consistent`] set makes the three gradient testings the
//! exact partial derivatives of [`reduced_energy`], which is what the
//! finite-difference consistency tests use.

use serde::{Deserialize, Serialize};

use crate::bubbles::{BubbleState, InteractionMatrix};
use crate::geometry::{FieldExpr, MorseField, TangentVector};
use crate::{Result, ShadowError};

/// Below this concentration the expansion is declared invalid.
pub const LAMBDA_FLOOR: f64 = 10.0;

/// Positive weights of the energy expansion and of the three gradient testings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConstants {
    /// Leading factor of the energy.
    pub energy_lead: f64,
    /// Laplacian-deficit weight in the energy.
    pub energy_lap: f64,
    /// Pair-interaction weight in the energy.
    pub energy_pair: f64,
    /// Regular-part weight in the energy.
    pub energy_reg: f64,
    /// Balance-defect weight in the amplitude testing.
    pub alpha_bal: f64,
    /// Laplacian-difference weight in the amplitude testing.
    pub alpha_lap: f64,
    /// Interaction-difference weight in the amplitude testing.
    pub alpha_pair: f64,
    /// Regular-part difference weight in the amplitude testing.
    pub alpha_reg: f64,
    /// Laplacian weight in the scale testing.
    pub lambda_lap: f64,
    /// Interaction weight in the scale testing.
    pub lambda_pair: f64,
    /// Regular-part weight in the scale testing.
    pub lambda_reg: f64,
    /// Gradient weight in the center testing.
    pub center_grad: f64,
    /// Laplacian-gradient weight in the center testing.
    pub center_lap: f64,
    /// Interaction weight in the center testing.
    pub center_pair: f64,
    /// Bubble norm `cbar0`.
    pub bubble_norm: f64,
}

impl Default for ExpansionConstants {
    fn default() -> Self {
        Self {
            energy_lead: 1.0,
            energy_lap: 1.0,
            energy_pair: 1.0,
            energy_reg: 1.0,
            alpha_bal: 1.0,
            alpha_lap: 1.0,
            alpha_pair: 1.0,
            alpha_reg: 1.0,
            lambda_lap: 1.0,
            lambda_pair: 1.0,
            lambda_reg: 1.0,
            center_grad: 1.0,
            center_lap: 1.0,
            center_pair: 1.0,
            bubble_norm: 1.0,
        }
    }
}

impl ExpansionConstants {
    /// Constants for which the testing expressions are the exact partial
    /// derivatives of the implemented energy (up to remainder-order terms).
    pub fn consistent(dim: usize) -> Self {
        let n = dim as f64;
        Self {
            alpha_bal: 2.0,
            alpha_lap: 2.0,
            alpha_pair: 2.0,
            alpha_reg: 2.0,
            lambda_lap: 2.0,
            lambda_pair: 2.0,
            lambda_reg: match dim {
                5 => 3.0,
                6 => 4.0,
                _ => 1.0,
            },
            center_grad: (n - 2.0) / n,
            center_lap: 1.0,
            center_pair: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("energy_lead", self.energy_lead),
            ("energy_lap", self.energy_lap),
            ("energy_pair", self.energy_pair),
            ("energy_reg", self.energy_reg),
            ("alpha_bal", self.alpha_bal),
            ("alpha_lap", self.alpha_lap),
            ("alpha_pair", self.alpha_pair),
            ("alpha_reg", self.alpha_reg),
            ("lambda_lap", self.lambda_lap),
            ("lambda_pair", self.lambda_pair),
            ("lambda_reg", self.lambda_reg),
            ("center_grad", self.center_grad),
            ("center_lap", self.center_lap),
            ("center_pair", self.center_pair),
            ("bubble_norm", self.bubble_norm),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ShadowError::Config(format!(
                    "expansion constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Optional regular-part perturbation entering the expansions for n = 5 or 6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PerturbationField {
    #[default]
    None,
    N5 {
        field: FieldExpr,
    },
    N6 {
        field: FieldExpr,
    },
}

impl PerturbationField {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PerturbationField::None => Ok(()),
            PerturbationField::N5 { field } => {
                if dim != 5 {
                    return Err(ShadowError::Config(
                        "perturbation mode n5 requires dimension 5".into(),
                    ));
                }
                check_field_dim(field, dim)
            }
            PerturbationField::N6 { field } => {
                if dim != 6 {
                    return Err(ShadowError::Config(
                        "perturbation mode n6 requires dimension 6".into(),
                    ));
                }
                check_field_dim(field, dim)
            }
        }
    }

    /// Dimension-dependent term for bubble `i`: `H_i / l_i^3` (n=5),
    /// `W_i ln(l_i) / l_i^4` (n=6), `0` otherwise.
    fn term(&self, s: &BubbleState, i: usize) -> f64 {
        match self {
            PerturbationField::None => 0.0,
            PerturbationField::N5 { field } => {
                let h = field.value(s.centers()[i].coords());
                h * (-3.0 * s.log_lambda()[i]).exp()
            }
            PerturbationField::N6 { field } => {
                let w = field.value(s.centers()[i].coords());
                w * s.log_lambda()[i] * (-4.0 * s.log_lambda()[i]).exp()
            }
        }
    }
}

fn check_field_dim(field: &FieldExpr, dim: usize) -> Result<()> {
    if field.dim() != dim {
        return Err(ShadowError::DimensionMismatch(format!(
            "perturbation field dimension {} != {dim}",
            field.dim()
        )));
    }
    Ok(())
}

/// Balance data of a configuration: `B_j = (alpha^2 / alpha_K) K_j alpha_j^(4/(n-2))`
/// with `alpha^2 = sum alpha_i^2` and `alpha_K = sum K_i alpha_i^(2n/(n-2))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceVector {
    pub alpha_sq: f64,
    /// `sum_i K_i alpha_i^(2n/(n-2))`
    pub alpha_k_pow: f64,
    pub b: Vec<f64>,
}

impl BalanceVector {
    pub fn max_defect(&self) -> f64 {
        self.b.iter().map(|b| (1.0 - b).abs()).fold(0.0, f64::max)
    }

    pub fn total_defect(&self) -> f64 {
        self.b.iter().map(|b| (1.0 - b).abs()).sum()
    }
}

pub fn balance(s: &BubbleState, field: &MorseField) -> Result<BalanceVector> {
    let n = s.dim() as f64;
    let p = 2.0 * n / (n - 2.0);
    let alpha_sq: f64 = s.alpha().iter().map(|a| a * a).sum();
    let mut alpha_k_pow = 0.0;
    let mut kv = Vec::with_capacity(s.q());
    for i in 0..s.q() {
        let k = field.value(&s.centers()[i]);
        if !(k > 0.0) {
            return Err(ShadowError::Domain("field value must be > 0".into()));
        }
        kv.push(k);
        alpha_k_pow += k * s.alpha()[i].powf(p);
    }
    let b = (0..s.q())
        .map(|j| alpha_sq / alpha_k_pow * kv[j] * s.alpha()[j].powf(4.0 / (n - 2.0)))
        .collect();
    Ok(BalanceVector {
        alpha_sq,
        alpha_k_pow,
        b,
    })
}

/// Unique positive amplitudes with `B_j = 1` for all `j` and
/// `sum_i alpha_i^2 cbar0^2 = norm_target`: `alpha_i = t K_i^((2-n)/4)`.
pub fn balanced_amplitudes(
    kvals: &[f64],
    dim: usize,
    norm_target: f64,
    cbar0: f64,
) -> Result<Vec<f64>> {
    if !(norm_target > 0.0) {
        return Err(ShadowError::Domain("norm_target must be > 0".into()));
    }
    if !(cbar0 > 0.0) {
        return Err(ShadowError::Domain("bubble norm must be > 0".into()));
    }
    if kvals.iter().any(|k| !(*k > 0.0)) {
        return Err(ShadowError::Domain("field values must be > 0".into()));
    }
    let n = dim as f64;
    let shape: Vec<f64> = kvals.iter().map(|k| k.powf((2.0 - n) / 4.0)).collect();
    let ssq: f64 = shape.iter().map(|s| s * s).sum();
    let t = (norm_target / (cbar0 * cbar0 * ssq)).sqrt();
    Ok(shape.iter().map(|s| t * s).collect())
}

struct Expansion {
    /// `alpha_k_pow^((n-2)/n)`
    denom_pow: f64,
    bal: BalanceVector,
    /// `g_i = DeltaK_i / (K_i l_i^2)`
    lap_terms: Vec<f64>,
    /// `w_i = alpha_i^2 / alpha^2`
    weights: Vec<f64>,
    /// regular-part terms per bubble
    sd: Vec<f64>,
    kv: Vec<f64>,
    inter: InteractionMatrix,
}

fn expansion(
    s: &BubbleState,
    field: &MorseField,
    p: &PerturbationField,
) -> Result<Expansion> {
    if s.dim() != field.dim() {
        return Err(ShadowError::DimensionMismatch(format!(
            "state dimension {} != field dimension {}",
            s.dim(),
            field.dim()
        )));
    }
    if s.min_log_lambda() < LAMBDA_FLOOR.ln() {
        return Err(ShadowError::Domain(format!(
            "concentration below lambda_floor = {LAMBDA_FLOOR}: expansion invalid"
        )));
    }
    p.validate(s.dim())?;
    let n = s.dim() as f64;
    let bal = balance(s, field)?;
    let denom_pow = bal.alpha_k_pow.powf((n - 2.0) / n);
    let kv: Vec<f64> = s.centers().iter().map(|c| field.value(c)).collect();
    let lap_terms: Vec<f64> = (0..s.q())
        .map(|i| {
            field.laplacian(&s.centers()[i]) / kv[i] * (-2.0 * s.log_lambda()[i]).exp()
        })
        .collect();
    let weights: Vec<f64> = s.alpha().iter().map(|a| a * a / bal.alpha_sq).collect();
    let sd: Vec<f64> = (0..s.q()).map(|i| p.term(s, i)).collect();
    let inter = InteractionMatrix::compute(s, field.kernel_scale())?;
    Ok(Expansion {
        denom_pow,
        bal,
        lap_terms,
        weights,
        sd,
        kv,
        inter,
    })
}

/// Reduced energy of the configuration (principal part).
pub fn reduced_energy(
    s: &BubbleState,
    field: &MorseField,
    c: &ExpansionConstants,
    p: &PerturbationField,
) -> Result<f64> {
    let e = expansion(s, field, p)?;
    let q = s.q();
    let mut lap_sum = 0.0;
    let mut reg_sum = 0.0;
    for i in 0..q {
        lap_sum += e.lap_terms[i] * e.weights[i];
        reg_sum += e.sd[i] * e.weights[i];
    }
    let mut pair_sum = 0.0;
    for i in 0..q {
        for j in 0..q {
            if i != j {
                pair_sum += s.alpha()[i] * s.alpha()[j] / e.bal.alpha_sq * e.inter.eps[i][j];
            }
        }
    }
    Ok(c.energy_lead * e.bal.alpha_sq / e.denom_pow
        * (1.0 - c.energy_lap * lap_sum - c.energy_pair * pair_sum - c.energy_reg * reg_sum))
}

/// Principal amplitude testing, one component per bubble.
pub fn grad_alpha(
    s: &BubbleState,
    field: &MorseField,
    c: &ExpansionConstants,
    p: &PerturbationField,
) -> Result<Vec<f64>> {
    let e = expansion(s, field, p)?;
    let q = s.q();
    let lap_mean: f64 = (0..q).map(|i| e.lap_terms[i] * e.weights[i]).sum();
    let sd_mean: f64 = (0..q).map(|i| e.sd[i] * e.weights[i]).sum();
    let mut pair_all = 0.0;
    for k in 0..q {
        for l in 0..q {
            if k != l {
                pair_all += s.alpha()[k] * s.alpha()[l] / e.bal.alpha_sq * e.inter.eps[k][l];
            }
        }
    }
    let mut out = Vec::with_capacity(q);
    for j in 0..q {
        let mut pair_j = 0.0;
        for i in 0..q {
            if i != j {
                pair_j += s.alpha()[i] / s.alpha()[j] * e.inter.eps[i][j];
            }
        }
        let bracket = c.alpha_bal * (1.0 - e.bal.b[j])
            - c.alpha_lap * (e.lap_terms[j] - lap_mean)
            + c.alpha_pair * (pair_all - pair_j)
            - c.alpha_reg * (e.sd[j] - sd_mean);
        out.push(s.alpha()[j] / e.denom_pow * bracket);
    }
    Ok(out)
}

/// Principal scale testing: derivative of the energy in `ln lambda_j`.
pub fn grad_lambda(
    s: &BubbleState,
    field: &MorseField,
    c: &ExpansionConstants,
    p: &PerturbationField,
) -> Result<Vec<f64>> {
    let e = expansion(s, field, p)?;
    let q = s.q();
    let mut out = Vec::with_capacity(q);
    for j in 0..q {
        let mut pair_j = 0.0;
        for i in 0..q {
            if i != j {
                pair_j += s.alpha()[i] / s.alpha()[j] * e.inter.dlam[i][j];
            }
        }
        let bracket =
            c.lambda_lap * e.lap_terms[j] - c.lambda_pair * pair_j + c.lambda_reg * e.sd[j];
        out.push(s.alpha()[j] * s.alpha()[j] / e.denom_pow * bracket);
    }
    Ok(out)
}

/// Principal center testing: `(1/l_j) grad_{a_j}` of the energy.
pub fn grad_center(
    s: &BubbleState,
    field: &MorseField,
    c: &ExpansionConstants,
) -> Result<Vec<TangentVector>> {
    let e = expansion(s, field, &PerturbationField::None)?;
    let q = s.q();
    let n = s.dim();
    let mut out = Vec::with_capacity(q);
    for j in 0..q {
        let gk = field.gradient(&s.centers()[j]);
        let glap = field.grad_laplacian(&s.centers()[j]);
        let inv_l = (-s.log_lambda()[j]).exp();
        let inv_l3 = (-3.0 * s.log_lambda()[j]).exp();
        let mut comps = vec![0.0; n];
        for k in 0..n {
            comps[k] = c.center_grad * gk.comps()[k] / e.kv[j] * inv_l
                + c.center_lap * glap.comps()[k] / e.kv[j] * inv_l3;
        }
        for i in 0..q {
            if i != j {
                let da = &e.inter.da[i][j];
                let w = c.center_pair * s.alpha()[i] / s.alpha()[j];
                for k in 0..n {
                    comps[k] += w * da.comps()[k];
                }
            }
        }
        let pref = -s.alpha()[j] * s.alpha()[j] / e.denom_pow;
        out.push(TangentVector::new(
            comps.into_iter().map(|v| pref * v).collect(),
        ));
    }
    Ok(out)
}

/// Structural lower/upper envelopes for the gradient magnitude on the
/// concentration neighborhood (constants folded to 1).
pub fn gradient_magnitude_bounds(s: &BubbleState, field: &MorseField) -> Result<(f64, f64)> {
    let bal = balance(s, field)?;
    let sums = crate::bubbles::interaction_sums(s, field.kernel_scale())?;
    let mut base = 0.0;
    for r in 0..s.q() {
        let inv_l = (-s.log_lambda()[r]).exp();
        base += field.gradient(&s.centers()[r]).norm() * inv_l;
        base += inv_l * inv_l;
        base += (1.0 - bal.b[r]).abs();
    }
    let lower = base + sums.total;
    let upper = base + sums.pow_frac + s.vnorm();
    Ok((lower, upper))
}

/// Both readings of the limiting energy over a critical-point set: the power
/// applied per summand vs. applied to the whole sum.
pub fn limit_energy_readings(kvals: &[f64], dim: usize) -> (f64, f64) {
    let n = dim as f64;
    let per_term: f64 = kvals.iter().map(|k| k.powf((2.0 - n) / n)).sum();
    let outer: f64 = kvals
        .iter()
        .map(|k| k.powf((2.0 - n) / 2.0))
        .sum::<f64>()
        .powf(2.0 / n);
    (per_term, outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(coords: &[f64]) -> TorusPoint {
        TorusPoint::new(coords.to_vec()).unwrap()
    }

    fn flat_ish_field() -> MorseField {
        // two-mode coordinate 1 gives two distinct maxima at x1 in {0, 1/2}
        MorseField::cosine(
            6,
            2.0,
            vec![
                vec![0.0, 0.16],
                vec![0.32],
                vec![0.16],
                vec![0.08],
                vec![0.04],
                vec![0.02],
            ],
        )
        .unwrap()
    }

    fn std_field() -> MorseField {
        MorseField::cosine(
            6,
            2.0,
            vec![
                vec![0.64],
                vec![0.32],
                vec![0.16],
                vec![0.08],
                vec![0.04],
                vec![0.02],
            ],
        )
        .unwrap()
    }

    #[test]
    fn balance_symmetric_pair() {
        let field = flat_ish_field();
        let s = BubbleState::new(
            vec![1.0, 1.0],
            vec![pt(&[0.0; 6]), pt(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0])],
            vec![1000.0, 1000.0],
            0.0,
        )
        .unwrap();
        let bal = balance(&s, &field).unwrap();
        assert!((bal.b[0] - 1.0).abs() < 1e-12);
        assert!((bal.b[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balance_hand_computed_example() {
        // n=6, K=(1,16), alpha=(1,1/16): alpha^2 = 1 + 1/256 = sum K_i alpha_i^3,
        // B_1 = 1*1 * 1 = 1, B_2 = 16 * 1/16 = 1 (arithmetic identity)
        let alpha = [1.0f64, 1.0 / 16.0];
        let kvals = [1.0f64, 16.0];
        let alpha_sq: f64 = alpha.iter().map(|x| x * x).sum();
        let akp: f64 = kvals
            .iter()
            .zip(&alpha)
            .map(|(k, a)| k * a.powi(3))
            .sum();
        assert!((alpha_sq - (1.0 + 1.0 / 256.0)).abs() < 1e-15);
        assert!((akp - alpha_sq).abs() < 1e-15);
        for (k, a) in kvals.iter().zip(&alpha) {
            let b = alpha_sq / akp * k * a;
            assert!((b - 1.0).abs() < 1e-14);
        }
        // the same identity through balance() on a (non-constant) builtin field
        let field = std_field();
        let c1 = pt(&[0.0; 6]);
        let c2 = pt(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let kv = [field.value(&c1), field.value(&c2)];
        let a = balanced_amplitudes(&kv, 6, 1.0, 1.0).unwrap();
        let s = BubbleState::new(a, vec![c1, c2], vec![1000.0, 1000.0], 0.0).unwrap();
        let bal = balance(&s, &field).unwrap();
        assert!((bal.b[0] - 1.0).abs() < 1e-12);
        assert!((bal.b[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_bubble_always_balanced() {
        let field = std_field();
        for a in [0.3, 1.0, 2.7] {
            let s = BubbleState::new(vec![a], vec![pt(&[0.1; 6])], vec![500.0], 0.0).unwrap();
            let bal = balance(&s, &field).unwrap();
            assert!((bal.b[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_amplitudes_examples_and_roundtrip() {
        // all K equal, norm_target = q cbar0^2 -> all alpha = 1
        let a = balanced_amplitudes(&[2.0, 2.0, 2.0], 6, 3.0 * 4.0, 2.0).unwrap();
        for x in &a {
            assert!((x - 1.0).abs() < 1e-14);
        }
        // n=6, K=(1,16) -> alpha2/alpha1 = 1/16
        let a = balanced_amplitudes(&[1.0, 16.0], 6, 1.0, 1.0).unwrap();
        assert!((a[1] / a[0] - 1.0 / 16.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let dim = rng.gen_range(5..=9usize);
            let q = rng.gen_range(1..=4usize);
            let kvals: Vec<f64> = (0..q).map(|_| rng.gen_range(0.2..8.0)).collect();
            let alpha = balanced_amplitudes(&kvals, dim, 1.0, 1.0).unwrap();
            // verify B = 1 via the raw formula (independent of MorseField)
            let n = dim as f64;
            let p = 2.0 * n / (n - 2.0);
            let alpha_sq: f64 = alpha.iter().map(|a| a * a).sum();
            let akp: f64 = kvals
                .iter()
                .zip(&alpha)
                .map(|(k, a)| k * a.powf(p))
                .sum();
            for (k, a) in kvals.iter().zip(&alpha) {
                let b = alpha_sq / akp * k * a.powf(4.0 / (n - 2.0));
                assert!((b - 1.0).abs() < 1e-12, "B = {b}");
            }
            let norm: f64 = alpha.iter().map(|a| a * a).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_target_must_be_positive() {
        assert!(balanced_amplitudes(&[1.0], 6, 0.0, 1.0).is_err());
        assert!(balanced_amplitudes(&[1.0], 6, -1.0, 1.0).is_err());
    }

    fn existence_like_state(field: &MorseField, lambda: f64) -> BubbleState {
        let c1 = pt(&[0.0; 6]);
        let c2 = pt(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let kv = [field.value(&c1), field.value(&c2)];
        let alpha = balanced_amplitudes(&kv, 6, 1.0, 1.0).unwrap();
        BubbleState::new(alpha, vec![c1, c2], vec![lambda, lambda], 0.0).unwrap()
    }

    #[test]
    fn energy_scaling_invariance() {
        let field = flat_ish_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        let s = existence_like_state(&field, 1000.0);
        let e0 = reduced_energy(&s, &field, &c, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(0.1..10.0);
            let s2 = BubbleState::new(
                s.alpha().iter().map(|a| a * t).collect(),
                s.centers().to_vec(),
                s.lambdas(),
                0.0,
            )
            .unwrap();
            let e = reduced_energy(&s2, &field, &c, &p).unwrap();
            assert!((e - e0).abs() <= 1e-12 * e0.abs(), "J({t}a) = {e} vs {e0}");
        }
    }

    #[test]
    fn energy_single_bubble_sign_and_limit() {
        let field = std_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        // single bubble at the maximum: DeltaK < 0 so J exceeds its leading term
        let center = pt(&[0.0; 6]);
        let kv = field.value(&center);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let s = BubbleState::new(alpha.clone(), vec![center.clone()], vec![1000.0], 0.0).unwrap();
        let e = reduced_energy(&s, &field, &c, &p).unwrap();
        let lead = c.energy_lead * s.alpha()[0].powi(2)
            / (kv * s.alpha()[0].powi(3)).powf(4.0 / 6.0);
        assert!(e > lead, "DeltaK < 0 must raise the energy above the lead");

        // lambda -> infinity limit approaches the outer-power reading
        let (_, outer) = limit_energy_readings(&[kv], 6);
        let s_hi = BubbleState::new(alpha, vec![center], vec![1e9], 0.0).unwrap();
        let e_hi = reduced_energy(&s_hi, &field, &c, &p).unwrap();
        assert!((e_hi - outer).abs() / outer < 1e-9, "{e_hi} vs {outer}");
    }

    #[test]
    fn energy_rejects_low_concentration() {
        let field = std_field();
        let s = BubbleState::new(vec![1.0], vec![pt(&[0.0; 6])], vec![5.0], 0.0).unwrap();
        assert!(reduced_energy(
            &s,
            &field,
            &ExpansionConstants::default(),
            &PerturbationField::None
        )
        .is_err());
    }

    #[test]
    fn grad_alpha_symmetry_and_balanced_zero() {
        let field = flat_ish_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        let s = existence_like_state(&field, 1000.0);
        let g = grad_alpha(&s, &field, &c, &p).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15, "symmetric components {g:?}");

        // q = 1 balanced: every bracket vanishes identically
        let center = pt(&[0.25, 0.1, 0.9, 0.3, 0.7, 0.6]);
        let kv = field.value(&center);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let s1 = BubbleState::new(alpha, vec![center], vec![2000.0], 0.0).unwrap();
        let g1 = grad_alpha(&s1, &field, &c, &p).unwrap();
        assert!(g1[0].abs() < 1e-14, "q=1 balanced gradient {g1:?}");
    }

    #[test]
    fn grad_alpha_balance_defect_response() {
        let field = flat_ish_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        let s = existence_like_state(&field, 10000.0);
        let g0 = grad_alpha(&s, &field, &c, &p).unwrap();
        let bal0 = balance(&s, &field).unwrap();

        let delta = 1e-6;
        let mut alpha = s.alpha().to_vec();
        alpha[0] *= 1.0 + delta / 2.0; // raises B_0 by ~delta at a symmetric pair
        let s2 = BubbleState::new(alpha, s.centers().to_vec(), s.lambdas(), 0.0).unwrap();
        let bal2 = balance(&s2, &field).unwrap();
        let db = bal2.b[0] - bal0.b[0];
        let g2 = grad_alpha(&s2, &field, &c, &p).unwrap();
        let n = 6.0f64;
        let pref = s2.alpha()[0] / bal2.alpha_k_pow.powf((n - 2.0) / n);
        let predicted = g0[0] - c.alpha_bal * pref * db;
        assert!(
            (g2[0] - predicted).abs() < 5.0 * delta * db.abs().max(delta),
            "first-order response: got {}, predicted {predicted}",
            g2[0]
        );
    }

    #[test]
    fn grad_lambda_single_bubble_sign_and_slope() {
        let field = std_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        let center = pt(&[0.0; 6]);
        let kv = field.value(&center);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();

        let mut pts = Vec::new();
        for k in 0..30 {
            let lambda = 1e3 * 10f64.powf(k as f64 / 10.0);
            let s =
                BubbleState::new(alpha.clone(), vec![center.clone()], vec![lambda], 0.0).unwrap();
            let g = grad_lambda(&s, &field, &c, &p).unwrap();
            assert!(g[0] < 0.0, "DeltaK < 0 forces a negative component");
            pts.push((lambda.ln(), g[0].abs().ln()));
        }
        let slope = fit_slope(&pts);
        assert!((slope + 2.0).abs() < 0.1, "log-log slope {slope} vs -2");
    }

    #[test]
    fn grad_lambda_coincident_equal_scales() {
        let field = std_field();
        let c = ExpansionConstants::default();
        let p = PerturbationField::None;
        let center = pt(&[0.0; 6]);
        let kv = field.value(&center);
        let a = balanced_amplitudes(&[kv, kv], 6, 1.0, 1.0).unwrap();
        let s = BubbleState::new(
            a,
            vec![center.clone(), center.clone()],
            vec![1000.0, 1000.0],
            0.0,
        )
        .unwrap();
        let g = grad_lambda(&s, &field, &c, &p).unwrap();
        // dlam vanishes at equal scales and zero separation: only the Laplacian term
        let bal = balance(&s, &field).unwrap();
        let n = 6.0f64;
        let lap = field.laplacian(&center) / kv / 1e6;
        let expect = s.alpha()[0].powi(2) / bal.alpha_k_pow.powf((n - 2.0) / n) * lap;
        assert!((g[0] - expect).abs() < 1e-18 + 1e-12 * expect.abs());
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn grad_center_properties() {
        let field = std_field();
        let c = ExpansionConstants::default();

        // at a critical point the gradient term dies; norm bounded by the lap-grad term
        let crit = pt(&[0.0; 6]);
        let kv = field.value(&crit);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let s = BubbleState::new(alpha.clone(), vec![crit.clone()], vec![1000.0], 0.0).unwrap();
        let g = grad_center(&s, &field, &c).unwrap();
        let bound = c.center_lap * field.grad_laplacian(&crit).norm() / kv / 1e9;
        let bal = balance(&s, &field).unwrap();
        let pref = s.alpha()[0].powi(2) / bal.alpha_k_pow.powf(4.0 / 6.0);
        assert!(g[0].norm() <= pref * bound * (1.0 + 1e-12) + 1e-18);

        // off-critical: log-log slope -1 and direction antiparallel to grad K
        let off = pt(&[0.1, 0.2, 0.05, 0.15, 0.3, 0.45]);
        let kv = field.value(&off);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let mut pts = Vec::new();
        for k in 0..30 {
            let lambda = 1e3 * 10f64.powf(k as f64 / 10.0);
            let s = BubbleState::new(alpha.clone(), vec![off.clone()], vec![lambda], 0.0).unwrap();
            let g = grad_center(&s, &field, &c).unwrap();
            pts.push((lambda.ln(), g[0].norm().ln()));
            let gk = field.gradient(&off);
            let cosine = g[0].dot(&gk) / (g[0].norm() * gk.norm());
            if lambda >= 1e4 {
                assert!(cosine <= -0.99, "cosine {cosine} at lambda {lambda}");
            }
        }
        let slope = fit_slope(&pts);
        assert!((slope + 1.0).abs() < 0.05, "log-log slope {slope} vs -1");
    }

    fn fit_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn magnitude_bounds() {
        let field = std_field();
        // single balanced bubble at a critical point, vnorm = 0
        let crit = pt(&[0.0; 6]);
        let kv = field.value(&crit);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let s = BubbleState::new(alpha, vec![crit], vec![1000.0], 0.0).unwrap();
        let (lo, hi) = gradient_magnitude_bounds(&s, &field).unwrap();
        assert!((lo - 1e-6).abs() < 1e-16);
        assert!((hi - 1e-6).abs() < 1e-16);

        // two bubbles far apart at high concentration: both bounds tiny
        let s2 = existence_like_state(&flat_ish_field(), 1e8);
        let (lo2, hi2) = gradient_magnitude_bounds(&s2, &flat_ish_field()).unwrap();
        assert!(lo2 <= hi2);
        assert!(hi2 < 1e-12);
    }

    #[test]
    fn bounds_ordering_random() {
        let field = std_field();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..200 {
            let q = rng.gen_range(1..=3usize);
            let alpha: Vec<f64> = (0..q).map(|_| rng.gen_range(0.5..2.0)).collect();
            let centers: Vec<TorusPoint> = (0..q)
                .map(|_| pt(&(0..6).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()))
                .collect();
            let lambda: Vec<f64> = (0..q).map(|_| rng.gen_range(100.0..1e6)).collect();
            let s = BubbleState::new(alpha, centers, lambda, rng.gen_range(0.0..0.01)).unwrap();
            let (lo, hi) = gradient_magnitude_bounds(&s, &field).unwrap();
            // eps <= eps^((n+2)/2n) holds for eps <= 1, and vnorm >= 0
            assert!(lo <= hi + 1e-18, "lo {lo} > hi {hi}");
        }
    }

    #[test]
    fn fd_consistency_with_consistent_constants() {
        let field = std_field();
        let consts = ExpansionConstants::consistent(6);
        let p = PerturbationField::None;
        let crits = crate::geometry::find_critical_points(&field, 4).unwrap();
        let negative: Vec<_> = crits.iter().filter(|c| c.laplacian < 0.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut worst_ratio = 0.0f64;
        for _ in 0..500 {
            let q = rng.gen_range(1..=3usize);
            let mut picks = Vec::new();
            while picks.len() < q {
                let i = rng.gen_range(0..negative.len());
                if !picks.contains(&i) {
                    picks.push(i);
                }
            }
            let centers: Vec<TorusPoint> = picks
                .iter()
                .map(|i| {
                    let mut c = negative[*i].location.coords().to_vec();
                    for x in c.iter_mut() {
                        *x += rng.gen_range(-1e-3..1e-3);
                    }
                    pt(&c)
                })
                .collect();
            let kv: Vec<f64> = centers.iter().map(|c| field.value(c)).collect();
            let mut alpha = balanced_amplitudes(&kv, 6, 1.0, 1.0).unwrap();
            for a in alpha.iter_mut() {
                *a *= 1.0 + rng.gen_range(-1e-3..1e-3);
            }
            let lambda: Vec<f64> = (0..q).map(|_| rng.gen_range(1e3..3e4)).collect();
            let s = BubbleState::new(alpha, centers, lambda, 0.0).unwrap();

            let remainder = remainder_order(&s, &field);
            let h: f64 = 1e-5;
            // measurement error of a central difference at this step size
            let fd_floor = f64::EPSILON * 2.0 / h + h * h * 2.0;
            let budget = remainder + fd_floor;

            let ga = grad_alpha(&s, &field, &consts, &p).unwrap();
            for j in 0..q {
                let mut up = s.alpha().to_vec();
                let mut dn = s.alpha().to_vec();
                up[j] *= (h).exp();
                dn[j] *= (-h).exp();
                let e_up = reduced_energy(
                    &BubbleState::new(up, s.centers().to_vec(), s.lambdas(), 0.0).unwrap(),
                    &field,
                    &consts,
                    &p,
                )
                .unwrap();
                let e_dn = reduced_energy(
                    &BubbleState::new(dn, s.centers().to_vec(), s.lambdas(), 0.0).unwrap(),
                    &field,
                    &consts,
                    &p,
                )
                .unwrap();
                let fd = (e_up - e_dn) / (2.0 * h);
                // testing component is d/d alpha_j; fd above is d/d ln alpha_j
                let mismatch = (fd - ga[j] * s.alpha()[j]).abs();
                worst_ratio = worst_ratio.max(mismatch / budget);
            }

            let gl = grad_lambda(&s, &field, &consts, &p).unwrap();
            for j in 0..q {
                let mut up = s.log_lambda().to_vec();
                let mut dn = s.log_lambda().to_vec();
                up[j] += h;
                dn[j] -= h;
                let e_up = reduced_energy(
                    &BubbleState::from_log_lambda(
                        s.alpha().to_vec(),
                        s.centers().to_vec(),
                        up,
                        0.0,
                    )
                    .unwrap(),
                    &field,
                    &consts,
                    &p,
                )
                .unwrap();
                let e_dn = reduced_energy(
                    &BubbleState::from_log_lambda(
                        s.alpha().to_vec(),
                        s.centers().to_vec(),
                        dn,
                        0.0,
                    )
                    .unwrap(),
                    &field,
                    &consts,
                    &p,
                )
                .unwrap();
                let fd = (e_up - e_dn) / (2.0 * h);
                let mismatch = (fd - gl[j]).abs();
                worst_ratio = worst_ratio.max(mismatch / budget);
                if gl[j].abs() > 100.0 * budget {
                    assert_eq!(fd.signum(), gl[j].signum(), "scale-testing sign");
                }
            }

            let gc = grad_center(&s, &field, &consts).unwrap();
            for j in 0..q {
                for k in 0..6 {
                    let mut up = s.centers().to_vec();
                    let mut dn = s.centers().to_vec();
                    let mut cu = up[j].coords().to_vec();
                    let mut cd = dn[j].coords().to_vec();
                    let hh = h;
                    cu[k] += hh;
                    cd[k] -= hh;
                    up[j] = pt(&cu);
                    dn[j] = pt(&cd);
                    let e_up = reduced_energy(
                        &BubbleState::new(s.alpha().to_vec(), up, s.lambdas(), 0.0).unwrap(),
                        &field,
                        &consts,
                        &p,
                    )
                    .unwrap();
                    let e_dn = reduced_energy(
                        &BubbleState::new(s.alpha().to_vec(), dn, s.lambdas(), 0.0).unwrap(),
                        &field,
                        &consts,
                        &p,
                    )
                    .unwrap();
                    // (1/l_j) d/d a_j: divide the plain derivative by lambda_j
                    let fd = (e_up - e_dn) / (2.0 * hh) / s.lambda(j);
                    let mismatch = (fd - gc[j].comps()[k]).abs();
                    worst_ratio = worst_ratio.max(mismatch / (budget / s.lambda(j) + remainder));
                }
            }
        }
        println!("fd-consistency fitted C = {worst_ratio:.3}");
        // leading-order disagreement would push this past ~1e4
        assert!(
            worst_ratio < 500.0,
            "mismatch exceeded remainder order by C = {worst_ratio}"
        );
    }

    fn remainder_order(s: &BubbleState, field: &MorseField) -> f64 {
        let n = s.dim() as f64;
        let mut r = 0.0;
        for i in 0..s.q() {
            let inv_l = (-s.log_lambda()[i]).exp();
            let g = field.gradient(&s.centers()[i]).norm();
            r += g * g * inv_l * inv_l + inv_l.powi(4);
        }
        let sums = crate::bubbles::interaction_sums(s, field.kernel_scale()).unwrap();
        r + sums.total.powf((n + 2.0) / n)
    }

    #[test]
    fn limit_readings_agree_for_single_point() {
        let (a, b) = limit_energy_readings(&[2.5], 6);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn perturbation_terms_enter_energy_and_scale_testing() {
        let field = std_field();
        let c = ExpansionConstants::default();
        let w_field = FieldExpr::Cosine {
            offset: 0.5,
            coefficients: vec![vec![0.3], vec![], vec![], vec![], vec![], vec![]],
        };
        let p6 = PerturbationField::N6 {
            field: w_field.clone(),
        };
        assert!(p6.validate(6).is_ok());
        assert!(p6.validate(5).is_err());
        assert!(PerturbationField::N5 { field: w_field }.validate(6).is_err());

        let center = pt(&[0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let kv = field.value(&center);
        let alpha = balanced_amplitudes(&[kv], 6, 1.0, 1.0).unwrap();
        let lambda: f64 = 2000.0;
        let s = BubbleState::new(alpha, vec![center.clone()], vec![lambda], 0.0).unwrap();

        let w_at = 0.5 + 0.3 * (std::f64::consts::TAU * 0.1).cos();
        let sd = w_at * lambda.ln() / lambda.powi(4);

        let e_none = reduced_energy(&s, &field, &c, &PerturbationField::None).unwrap();
        let e_p = reduced_energy(&s, &field, &c, &p6).unwrap();
        let bal = balance(&s, &field).unwrap();
        let lead = c.energy_lead * bal.alpha_sq / bal.alpha_k_pow.powf(4.0 / 6.0);
        let expect = lead * c.energy_reg * sd;
        assert!(
            ((e_none - e_p) - expect).abs() < 1e-15 + 1e-10 * expect,
            "energy shift {} vs {expect}",
            e_none - e_p
        );

        let g_none = grad_lambda(&s, &field, &c, &PerturbationField::None).unwrap();
        let g_p = grad_lambda(&s, &field, &c, &p6).unwrap();
        let pref = s.alpha()[0] * s.alpha()[0] / bal.alpha_k_pow.powf(4.0 / 6.0);
        let expect = pref * c.lambda_reg * sd;
        assert!(
            ((g_p[0] - g_none[0]) - expect).abs() < 1e-18 + 1e-10 * expect,
            "scale-testing shift {} vs {expect}",
            g_p[0] - g_none[0]
        );
    }
}

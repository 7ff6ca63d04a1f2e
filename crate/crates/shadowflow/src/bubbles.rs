//! Bubble configurations and pairwise interaction terms.
//!
//! The interaction between bubbles `i` and `j` is
//!
//! ```text
//! eps_ij = (l_j/l_i + l_i/l_j + l_i l_j k_ij)^((2-n)/2),   k_ij = kernel_sq(a_i, a_j)
//! ```
//!
//! All scale arithmetic runs through log-lambda so the formulas stay finite in
//! the strongly concentrated regime (lambda ~ 1e12 and beyond); only ratios and
//! the normalized term weights ever materialize.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, TangentVector, TorusPoint};
use crate::{Result, ShadowError};

/// One point of the reduced phase space: `q` bubbles plus the remainder norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleState {
    alpha: Vec<f64>,
    centers: Vec<TorusPoint>,
    log_lambda: Vec<f64>,
    vnorm: f64,
}

impl BubbleState {
    pub fn new(
        alpha: Vec<f64>,
        centers: Vec<TorusPoint>,
        lambda: Vec<f64>,
        vnorm: f64,
    ) -> Result<Self> {
        if lambda.iter().any(|l| !(*l > 0.0)) {
            return Err(ShadowError::Domain("lambda must be > 0".into()));
        }
        Self::from_log_lambda(
            alpha,
            centers,
            lambda.into_iter().map(f64::ln).collect(),
            vnorm,
        )
    }

    pub fn from_log_lambda(
        alpha: Vec<f64>,
        centers: Vec<TorusPoint>,
        log_lambda: Vec<f64>,
        vnorm: f64,
    ) -> Result<Self> {
        let q = alpha.len();
        if q == 0 {
            return Err(ShadowError::Domain("need at least one bubble".into()));
        }
        if centers.len() != q || log_lambda.len() != q {
            return Err(ShadowError::DimensionMismatch(format!(
                "alpha/centers/lambda lengths differ: {q}/{}/{}",
                centers.len(),
                log_lambda.len()
            )));
        }
        if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(ShadowError::Domain("alpha must be finite and > 0".into()));
        }
        if log_lambda.iter().any(|l| !l.is_finite()) {
            return Err(ShadowError::Domain("log_lambda must be finite".into()));
        }
        if !(vnorm >= 0.0) || !vnorm.is_finite() {
            return Err(ShadowError::Domain("vnorm must be finite and >= 0".into()));
        }
        let dim = centers[0].dim();
        if centers.iter().any(|c| c.dim() != dim) {
            return Err(ShadowError::DimensionMismatch(
                "bubble centers have mixed dimensions".into(),
            ));
        }
        Ok(Self {
            alpha,
            centers,
            log_lambda,
            vnorm,
        })
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn centers(&self) -> &[TorusPoint] {
        &self.centers
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.log_lambda[i].exp()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.log_lambda.iter().map(|l| l.exp()).collect()
    }

    pub fn vnorm(&self) -> f64 {
        self.vnorm
    }

    /// Conserved norm surrogate `sum_i alpha_i^2 cbar0^2 + vnorm^2`.
    pub fn norm_surrogate(&self, cbar0: f64) -> f64 {
        self.alpha.iter().map(|a| a * a * cbar0 * cbar0).sum::<f64>() + self.vnorm * self.vnorm
    }

    pub fn min_log_lambda(&self) -> f64 {
        self.log_lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_log_lambda(&self) -> f64 {
        self.log_lambda
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Normalized decomposition of the interaction argument
/// `A = e^(lj-li) + e^(li-lj) + e^(li+lj) k`; the three weights sum to 1.
struct ArgParts {
    ln_arg: f64,
    t_ji: f64,
    t_ij: f64,
    t_sep: f64,
}

fn arg_parts(log_li: f64, log_lj: f64, ksq: f64) -> Result<ArgParts> {
    if !log_li.is_finite() || !log_lj.is_finite() {
        return Err(ShadowError::Domain("lambda must be positive".into()));
    }
    if !(ksq >= 0.0) {
        return Err(ShadowError::Domain("kernel term must be >= 0".into()));
    }
    let e_ji = log_lj - log_li;
    let e_ij = log_li - log_lj;
    let e_sep = if ksq > 0.0 {
        log_li + log_lj + ksq.ln()
    } else {
        f64::NEG_INFINITY
    };
    let m = e_ji.max(e_ij).max(e_sep);
    let w_ji = (e_ji - m).exp();
    let w_ij = (e_ij - m).exp();
    let w_sep = if e_sep.is_finite() {
        (e_sep - m).exp()
    } else {
        0.0
    };
    let s = w_ji + w_ij + w_sep;
    Ok(ArgParts {
        ln_arg: m + s.ln(),
        t_ji: w_ji / s,
        t_ij: w_ij / s,
        t_sep: w_sep / s,
    })
}

fn dim_check(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(ShadowError::Domain("dimension must be >= 3".into()));
    }
    Ok(dim as f64)
}

/// Interaction term between two bubbles with scales `exp(log_li)`, `exp(log_lj)`
/// and squared kernel separation `ksq`.
pub fn interaction(log_li: f64, log_lj: f64, ksq: f64, dim: usize) -> Result<f64> {
    let n = dim_check(dim)?;
    let p = arg_parts(log_li, log_lj, ksq)?;
    Ok(((2.0 - n) / 2.0 * p.ln_arg).exp())
}

/// Natural log of the interaction term; finite even when the term underflows.
pub fn ln_interaction(log_li: f64, log_lj: f64, ksq: f64, dim: usize) -> Result<f64> {
    let n = dim_check(dim)?;
    let p = arg_parts(log_li, log_lj, ksq)?;
    Ok((2.0 - n) / 2.0 * p.ln_arg)
}

/// Scale derivative `l_j d/d l_j` of the interaction term:
/// `-(n-2)/2 * (l_j/l_i - l_i/l_j + l_i l_j k) / (l_j/l_i + l_i/l_j + l_i l_j k)^(n/2)`.
pub fn interaction_dlam(log_li: f64, log_lj: f64, ksq: f64, dim: usize) -> Result<f64> {
    let n = dim_check(dim)?;
    let p = arg_parts(log_li, log_lj, ksq)?;
    let eps = ((2.0 - n) / 2.0 * p.ln_arg).exp();
    // (B/A) * A^((2-n)/2) with B/A expressed through the normalized weights
    Ok(-(n - 2.0) / 2.0 * (p.t_ji - p.t_ij + p.t_sep) * eps)
}

/// Center derivative `(1/l_j) grad_{a_j}` of the interaction term.
pub fn interaction_da(
    log_li: f64,
    log_lj: f64,
    ai: &TorusPoint,
    aj: &TorusPoint,
    dim: usize,
    kernel_scale: f64,
) -> Result<TangentVector> {
    let n = dim_check(dim)?;
    let w = geometry::wrapped_diff(aj, ai)?;
    let dsq: f64 = w.iter().map(|x| x * x).sum();
    if dsq == 0.0 {
        return Ok(TangentVector::zeros(aj.dim()));
    }
    let ksq = kernel_scale * dsq;
    let p = arg_parts(log_li, log_lj, ksq)?;
    let eps = ((2.0 - n) / 2.0 * p.ln_arg).exp();
    // (2-n) eps t_sep w_k / (l_j dsq); lambda_j enters only as a divisor so the
    // expression decays gracefully instead of overflowing
    let lj = log_lj.exp();
    let factor = (2.0 - n) * eps * p.t_sep / (lj * dsq);
    Ok(TangentVector::new(w.iter().map(|x| factor * x).collect()))
}

/// All pairwise interaction data for a configuration.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    /// `eps[i][j]`, symmetric with zero diagonal.
    pub eps: Vec<Vec<f64>>,
    /// `dlam[i][j] = l_j d/d l_j eps_ij`.
    pub dlam: Vec<Vec<f64>>,
    /// `da[i][j] = (1/l_j) grad_{a_j} eps_ij`.
    pub da: Vec<Vec<TangentVector>>,
}

impl InteractionMatrix {
    pub fn compute(s: &BubbleState, kernel_scale: f64) -> Result<Self> {
        let q = s.q();
        let n = s.dim();
        let mut eps = vec![vec![0.0; q]; q];
        let mut dlam = vec![vec![0.0; q]; q];
        let mut da = vec![vec![TangentVector::zeros(n); q]; q];
        for i in 0..q {
            for j in 0..q {
                if i == j {
                    continue;
                }
                let ksq =
                    geometry::kernel_sq(&s.centers()[i], &s.centers()[j], kernel_scale)?;
                eps[i][j] = interaction(s.log_lambda()[i], s.log_lambda()[j], ksq, n)?;
                dlam[i][j] = interaction_dlam(s.log_lambda()[i], s.log_lambda()[j], ksq, n)?;
                da[i][j] = interaction_da(
                    s.log_lambda()[i],
                    s.log_lambda()[j],
                    &s.centers()[i],
                    &s.centers()[j],
                    n,
                    kernel_scale,
                )?;
            }
        }
        Ok(Self { eps, dlam, da })
    }
}

/// Aggregate interaction statistics over ordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionSums {
    /// `sum_{r != s} eps_rs`
    pub total: f64,
    /// `per_bubble[j] = sum_{i != j} eps_ij`
    pub per_bubble: Vec<f64>,
    /// `sum_{r != s} eps_rs^((n+2)/(2n))`
    pub pow_frac: f64,
}

pub fn interaction_sums(s: &BubbleState, kernel_scale: f64) -> Result<InteractionSums> {
    let q = s.q();
    let n = s.dim() as f64;
    let exponent = (n + 2.0) / (2.0 * n);
    let m = InteractionMatrix::compute(s, kernel_scale)?;
    let mut total = 0.0;
    let mut pow_frac = 0.0;
    let mut per_bubble = vec![0.0; q];
    for i in 0..q {
        for j in 0..q {
            if i == j {
                continue;
            }
            total += m.eps[i][j];
            pow_frac += m.eps[i][j].powf(exponent);
            per_bubble[j] += m.eps[i][j];
        }
    }
    Ok(InteractionSums {
        total,
        per_bubble,
        pow_frac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(coords: &[f64]) -> TorusPoint {
        TorusPoint::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn coincident_equal_scale_pair() {
        let e = interaction(0.0, 0.0, 0.0, 6).unwrap();
        assert_eq!(e, 0.25);
    }

    #[test]
    fn direct_evaluations() {
        let l = 100.0f64.ln();
        let e = interaction(l, l, 0.25, 6).unwrap();
        let expect = (2.0 + 100.0 * 100.0 * 0.25f64).powi(-2);
        assert!((e - expect).abs() / expect < 1e-12);
        assert!((e - 1.5976e-7).abs() / e < 1e-3);

        let e = interaction(1.0f64.ln(), 4.0f64.ln(), 0.0, 6).unwrap();
        let expect = 4.25f64.powi(-2);
        assert!((e - expect).abs() / expect < 1e-12);
        assert!((e - 5.5363e-2).abs() / e < 1e-3);
    }

    #[test]
    fn dlam_symmetric_zero_and_direct() {
        assert_eq!(interaction_dlam(3.0, 3.0, 0.0, 6).unwrap(), 0.0);

        let d = interaction_dlam(1.0f64.ln(), 4.0f64.ln(), 0.0, 6).unwrap();
        let expect = -2.0 * (4.0 - 0.25) / 4.25f64.powi(3);
        assert!((d - expect).abs() / expect.abs() < 1e-12, "{d} vs {expect}");
        assert!((d - (-9.77e-2)).abs() < 5e-5);
    }

    #[test]
    fn da_zero_at_coincidence() {
        let a = pt(&[0.3; 6]);
        let v = interaction_da(2.0, 3.0, &a, &a, 6, 1.0).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn dlam_matches_log_scale_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let li = rng.gen_range(0.0..1e6f64.ln());
            let lj = rng.gen_range(0.0..1e6f64.ln());
            let ksq = rng.gen_range(0.0..0.25);
            let n = rng.gen_range(5..=9usize);
            let h = 1e-6;
            let ep = interaction(li, lj + h, ksq, n).unwrap();
            let em = interaction(li, lj - h, ksq, n).unwrap();
            let fd = (ep - em) / (2.0 * h);
            let d = interaction_dlam(li, lj, ksq, n).unwrap();
            let scale = d.abs().max(fd.abs());
            if scale > 1e-300 {
                assert!(
                    (d - fd).abs() / scale < 1e-6,
                    "dlam {d} vs fd {fd} at li={li} lj={lj} ksq={ksq} n={n}"
                );
            }
        }
    }

    #[test]
    fn da_matches_center_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let li = rng.gen_range(0.0..1e6f64.ln());
            let lj = rng.gen_range(0.0..1e6f64.ln());
            let n = 6;
            let ai = pt(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let aj = pt(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            if geometry::torus_distance(&ai, &aj).unwrap() < 1e-3 {
                continue;
            }
            // wrapped differences are non-smooth at half-period separation
            if geometry::wrapped_diff(&aj, &ai)
                .unwrap()
                .iter()
                .any(|w| w.abs() > 0.45)
            {
                continue;
            }
            let da = interaction_da(li, lj, &ai, &aj, n, 1.0).unwrap();
            let lambda_j = lj.exp();
            // chain the difference through the scalar kernel argument so each
            // piece is differenced at a well-conditioned step size
            let ksq = geometry::kernel_sq(&ai, &aj, 1.0).unwrap();
            let arg = (lj - li).exp() + (li - lj).exp() + (li + lj).exp() * ksq;
            let hk = 3e-4 * arg * (-(li + lj)).exp();
            let e_up = interaction(li, lj, ksq + hk, n).unwrap();
            let e_dn = interaction(li, lj, ksq - hk, n).unwrap();
            let deps_dksq = (e_up - e_dn) / (2.0 * hk);
            let h = 1e-6;
            for k in 0..n {
                let mut up = aj.coords().to_vec();
                let mut dn = aj.coords().to_vec();
                up[k] += h;
                dn[k] -= h;
                let kp = geometry::kernel_sq(&ai, &pt(&up), 1.0).unwrap();
                let km = geometry::kernel_sq(&ai, &pt(&dn), 1.0).unwrap();
                let fd = deps_dksq * (kp - km) / (2.0 * h) / lambda_j;
                let a = da.comps()[k];
                let scale = a.abs().max(fd.abs());
                if scale > 1e-300 {
                    assert!(
                        (a - fd).abs() / scale < 1e-6,
                        "da[{k}] {a} vs fd {fd} (li={li} lj={lj})"
                    );
                }
            }
        }
    }

    #[test]
    fn da_norm_bounded_by_interaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let li = rng.gen_range(0.0..1e4f64.ln());
            let lj = rng.gen_range(0.0..1e4f64.ln());
            let n = 6;
            let ai = pt(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let aj = pt(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let d = geometry::torus_distance(&ai, &aj).unwrap();
            if d < 1e-6 {
                continue;
            }
            let ksq = d * d;
            let eps = interaction(li, lj, ksq, n).unwrap();
            let da = interaction_da(li, lj, &ai, &aj, n, 1.0).unwrap();
            let bound = (n as f64 - 2.0) * li.exp() * d * eps;
            assert!(
                da.norm() <= bound * (1.0 + 1e-12),
                "|da| = {} exceeds (n-2) l_i d eps = {}",
                da.norm(),
                bound
            );
        }
    }

    #[test]
    fn interaction_slope_in_scale_product() {
        // for fixed distinct centers, ln eps / ln(l_i l_j) -> (2-n)/2
        let d2 = 0.25;
        for n in [5usize, 6, 9] {
            let mut pts = Vec::new();
            for k in 0..40 {
                let ll = 3.0 + 0.2 * k as f64; // log lambda for both bubbles
                let ln_eps = ln_interaction(ll, ll, d2, n).unwrap();
                pts.push((2.0 * ll, ln_eps));
            }
            let slope = fit_slope(&pts);
            let expect = (2.0 - n as f64) / 2.0;
            assert!(
                (slope - expect).abs() / expect.abs() < 0.01,
                "slope {slope} vs {expect} (n={n})"
            );
        }
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
    fn sums_brute_force_q3() {
        let s = BubbleState::new(
            vec![1.0, 1.1, 0.9],
            vec![
                pt(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                pt(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
                pt(&[0.0, 0.5, 0.0, 0.0, 0.0, 0.0]),
            ],
            vec![100.0, 200.0, 300.0],
            0.0,
        )
        .unwrap();
        let sums = interaction_sums(&s, 1.0).unwrap();
        // independent double loop
        let mut total = 0.0;
        let mut pow = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let k = geometry::kernel_sq(&s.centers()[i], &s.centers()[j], 1.0).unwrap();
                    let e =
                        interaction(s.log_lambda()[i], s.log_lambda()[j], k, 6).unwrap();
                    total += e;
                    pow += e.powf(8.0 / 12.0);
                }
            }
        }
        assert!((sums.total - total).abs() <= 1e-18 + 1e-12 * total);
        assert!((sums.pow_frac - pow).abs() <= 1e-18 + 1e-12 * pow);
    }

    #[test]
    fn sums_edge_cases() {
        let s1 = BubbleState::new(vec![1.0], vec![pt(&[0.1; 6])], vec![500.0], 0.0).unwrap();
        let sums = interaction_sums(&s1, 1.0).unwrap();
        assert_eq!(sums.total, 0.0);
        assert_eq!(sums.per_bubble, vec![0.0]);
        assert_eq!(sums.pow_frac, 0.0);

        let s2 = BubbleState::new(
            vec![1.0, 1.0],
            vec![pt(&[0.0; 6]), pt(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0])],
            vec![100.0, 100.0],
            0.0,
        )
        .unwrap();
        let sums = interaction_sums(&s2, 1.0).unwrap();
        let e = sums.per_bubble[0];
        assert!((sums.total - 2.0 * e).abs() < 1e-18 + 1e-12 * sums.total);
        assert_eq!(sums.per_bubble[0], sums.per_bubble[1]);
    }

    proptest! {
        #[test]
        fn interaction_is_symmetric(
            li in 0.0..14.0f64,
            lj in 0.0..14.0f64,
            ksq in 0.0..0.5f64,
            n in 5usize..=9,
        ) {
            let a = interaction(li, lj, ksq, n).unwrap();
            let b = interaction(lj, li, ksq, n).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn interaction_bounded_and_monotone(
            li in 0.0..14.0f64,
            dj in 0.0..5.0f64,
            ksq in 1e-12..0.5f64,
            n in 5usize..=9,
        ) {
            let lj = li + dj;
            let e = interaction(li, lj, ksq, n).unwrap();
            let top = 2.0f64.powf((2.0 - n as f64) / 2.0);
            prop_assert!(e > 0.0 && e <= top);
            // strictly decreasing in the separation
            let e2 = interaction(li, lj, ksq * 1.5, n).unwrap();
            prop_assert!(e2 < e);
            // for lj >= li at zero separation, strictly decreasing in lj
            let a = interaction(li, lj + 0.1, 0.0, n).unwrap();
            let b = interaction(li, lj, 0.0, n).unwrap();
            prop_assert!(a < b);
        }
    }
}

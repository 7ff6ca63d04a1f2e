//! Seeded sampling of admissible configurations for sweeps and property tests.
//!
//! States are drawn near the negative-Laplacian critical catalog (the flow's
//! target regime): distinct anchor points, small center jitter, nearly
//! balanced amplitudes and concentrations well inside the neighborhood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bubbles::BubbleState;
use crate::energy::balanced_amplitudes;
use crate::geometry::{CriticalPoint, MorseField, TorusPoint};
use crate::{Result, ShadowError};

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub q: usize,
    /// Half-width of the per-coordinate center jitter.
    pub center_jitter: f64,
    /// Relative half-width of the amplitude jitter around balance.
    pub alpha_jitter: f64,
    pub log_lambda_range: (f64, f64),
    pub vnorm_max: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            q: 2,
            center_jitter: 1e-3,
            alpha_jitter: 1e-3,
            log_lambda_range: (300.0f64.ln(), 1e5f64.ln()),
            vnorm_max: 0.0,
        }
    }
}

/// Draw one admissible state anchored at distinct negative-Laplacian critical
/// points of the field.
pub fn sample_state(
    field: &MorseField,
    crits: &[CriticalPoint],
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<BubbleState> {
    let negatives: Vec<&CriticalPoint> = crits.iter().filter(|c| c.laplacian < 0.0).collect();
    if negatives.len() < opts.q {
        return Err(ShadowError::Config(format!(
            "need {} negative-Laplacian anchors, catalog has {}",
            opts.q,
            negatives.len()
        )));
    }
    let mut picked: Vec<usize> = Vec::with_capacity(opts.q);
    while picked.len() < opts.q {
        let k = rng.gen_range(0..negatives.len());
        if !picked.contains(&k) {
            picked.push(k);
        }
    }
    let mut centers = Vec::with_capacity(opts.q);
    for k in &picked {
        let moved: Vec<f64> = negatives[*k]
            .location
            .coords()
            .iter()
            .map(|x| x + rng.gen_range(-opts.center_jitter..=opts.center_jitter))
            .collect();
        centers.push(TorusPoint::new(moved)?);
    }
    let kv: Vec<f64> = centers.iter().map(|c| field.value(c)).collect();
    let mut alpha = balanced_amplitudes(&kv, field.dim(), 1.0, 1.0)?;
    if opts.alpha_jitter > 0.0 {
        for a in alpha.iter_mut() {
            *a *= 1.0 + rng.gen_range(-opts.alpha_jitter..=opts.alpha_jitter);
        }
    }
    let lambda: Vec<f64> = (0..opts.q)
        .map(|_| {
            rng.gen_range(opts.log_lambda_range.0..=opts.log_lambda_range.1)
                .exp()
        })
        .collect();
    let vnorm = if opts.vnorm_max > 0.0 {
        rng.gen_range(0.0..=opts.vnorm_max)
    } else {
        0.0
    };
    BubbleState::new(alpha, centers, lambda, vnorm)
}

/// Seeded convenience wrapper returning a state inside the neighborhood,
/// retrying a few jitters if a draw lands outside.
pub fn sample_admissible(
    field: &MorseField,
    crits: &[CriticalPoint],
    opts: &SampleOptions,
    seed: u64,
    eps_region: f64,
) -> Result<BubbleState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let s = sample_state(field, crits, opts, &mut rng)?;
        if crate::flow::region_check(&s, field, eps_region)?.inside {
            return Ok(s);
        }
    }
    Err(ShadowError::Config(
        "could not draw an admissible state; widen the options".into(),
    ))
}

//! TOML-driven run configuration and scenario presets.
//!
//! A config file fully determines a run; every default is materialized back
//! into the run summary so outputs carry their provenance. Randomness only
//! enters through the seeded center jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bubbles::BubbleState;
use crate::energy::{balanced_amplitudes, ExpansionConstants, PerturbationField};
use crate::flow::{region_check, FlowConstants};
use crate::geometry::{
    check_nondegeneracy, find_critical_points, CriticalPoint, FieldExpr, MorseField, TorusPoint,
    ND_TOL,
};
use crate::integrator::IntegratorConfig;
use crate::{Result, ShadowError};

fn default_grid_density() -> usize {
    4
}

fn default_kernel_scale() -> f64 {
    1.0
}

fn default_norm_target() -> f64 {
    1.0
}

/// Scalar-field block of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    #[serde(flatten)]
    pub expr: FieldExpr,
    #[serde(default = "default_kernel_scale")]
    pub kernel_scale: f64,
}

/// Amplitudes are either solved for balance or given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Named("balanced".into())
    }
}

/// Initial-state block of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    pub lambda: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub vnorm: f64,
    #[serde(default = "default_norm_target")]
    pub norm_target: f64,
}

/// A full run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
    /// Center jitter half-width applied when `seed != 0`.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub run_id: Option<String>,
    pub field: FieldConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub flow: Option<FlowConstants>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub constants: ExpansionConstants,
    #[serde(default)]
    pub perturbation: PerturbationField,
    #[serde(default = "default_grid_density")]
    pub grid_density: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ShadowError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| ShadowError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn flow_constants(&self) -> FlowConstants {
        self.flow
            .clone()
            .unwrap_or_else(|| FlowConstants::defaults_for(self.q))
    }

    /// Materialize the run: build the field, the critical-point catalog and
    /// the (possibly jittered) initial state, validating every invariant.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let mut problems: Vec<String> = Vec::new();

        if self.q == 0 {
            problems.push("q must be >= 1".into());
        }
        let field = MorseField::with_kernel_scale(
            self.n,
            self.field.expr.clone(),
            self.field.kernel_scale,
        )
        .map_err(|e| ShadowError::Config(format!("field: {e}")))?;

        let flow = self.flow_constants();
        if let Err(e) = flow.validate(self.q.max(1)) {
            problems.push(e.to_string());
        }
        if let Err(e) = self.integrator.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.constants.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.perturbation.validate(self.n) {
            problems.push(e.to_string());
        }
        if self.initial.lambda.len() != self.q || self.initial.centers.len() != self.q {
            problems.push(format!(
                "initial state needs {} lambda values and centers, got {}/{}",
                self.q,
                self.initial.lambda.len(),
                self.initial.centers.len()
            ));
        }
        if !problems.is_empty() {
            return Err(ShadowError::Config(problems.join("; ")));
        }

        let crits = find_critical_points(&field, self.grid_density)?;
        let nd = check_nondegeneracy(&field, &crits, ND_TOL);
        if !nd.ok {
            return Err(ShadowError::Config(format!(
                "non-degeneracy check failed: {}",
                nd.violations.join("; ")
            )));
        }

        let mut centers = Vec::with_capacity(self.q);
        for c in &self.initial.centers {
            if c.len() != self.n {
                return Err(ShadowError::Config(format!(
                    "center {:?} has dimension {}, expected {}",
                    c,
                    c.len(),
                    self.n
                )));
            }
            centers.push(TorusPoint::new(c.clone())?);
        }
        if self.seed != 0 && self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for c in centers.iter_mut() {
                let moved: Vec<f64> = c
                    .coords()
                    .iter()
                    .map(|x| x + rng.gen_range(-self.jitter..self.jitter))
                    .collect();
                *c = TorusPoint::new(moved)?;
            }
        }

        let alpha = match &self.initial.alpha {
            AlphaSpec::Named(name) if name == "balanced" => {
                let kv: Vec<f64> = centers.iter().map(|c| field.value(c)).collect();
                balanced_amplitudes(
                    &kv,
                    self.n,
                    self.initial.norm_target,
                    self.constants.bubble_norm,
                )?
            }
            AlphaSpec::Named(other) => {
                return Err(ShadowError::Config(format!(
                    "unknown alpha spec {other:?}; use \"balanced\" or an explicit array"
                )))
            }
            AlphaSpec::Explicit(values) => {
                if values.len() != self.q {
                    return Err(ShadowError::Config(format!(
                        "alpha has {} entries, expected {}",
                        values.len(),
                        self.q
                    )));
                }
                values.clone()
            }
        };
        let state = BubbleState::new(
            alpha,
            centers,
            self.initial.lambda.clone(),
            self.initial.vnorm,
        )?;

        let region = region_check(&state, &field, flow.eps_region)?;
        if !region.inside {
            return Err(ShadowError::Config(format!(
                "initial state outside the concentration neighborhood: {}",
                region.violations.join("; ")
            )));
        }

        Ok(ResolvedRun {
            field,
            crits,
            state,
            flow,
        })
    }
}

/// A validated, materialized run.
#[derive(Debug)]
pub struct ResolvedRun {
    pub field: MorseField,
    pub crits: Vec<CriticalPoint>,
    pub state: BubbleState,
    pub flow: FlowConstants,
}

/// Parameters of the closed-form toy landscape scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub x0: Vec<f64>,
    pub signs: Vec<i8>,
    pub t_end: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            x0: vec![1.0, 1.0],
            signs: vec![1],
            t_end: 2.0,
        }
    }
}

/// Named scenarios reproducing the acceptance runs deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Two bubbles at distinct maxima: concentration with exponential rates.
    Existence,
    /// Two bubbles at the same maximum: tower repulsion and region exit.
    Tower,
    /// One bubble displaced from a maximum: gradient ascent of the center.
    OffCritical,
    /// One bubble at a low-index saddle with negative Laplacian.
    SaddleNegativeLaplacian,
    /// The closed-form toy landscape.
    Toy,
}

pub const PRESET_NAMES: [(&str, Preset); 5] = [
    ("existence", Preset::Existence),
    ("tower", Preset::Tower),
    ("off_critical", Preset::OffCritical),
    ("saddle_negative_laplacian", Preset::SaddleNegativeLaplacian),
    ("toy", Preset::Toy),
];

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        PRESET_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                ShadowError::Config(format!(
                    "unknown preset {name:?}; available: {}",
                    PRESET_NAMES
                        .iter()
                        .map(|(n, _)| *n)
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        PRESET_NAMES
            .iter()
            .find(|(_, p)| p == self)
            .map(|(n, _)| *n)
            .expect("all presets are named")
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Preset::Existence => {
                "q=2 bubbles at distinct maxima; scales grow as e^t and all deficits decay"
            }
            Preset::Tower => {
                "q=2 bubbles at the same maximum; the tower weights push both scales down"
            }
            Preset::OffCritical => {
                "q=1 bubble displaced from a maximum; the center ascends the field gradient"
            }
            Preset::SaddleNegativeLaplacian => {
                "q=1 bubble at an index-1 saddle with negative Laplacian"
            }
            Preset::Toy => "closed-form descent on the toy landscape",
        }
    }

    /// Coefficient ladder with a dominant first entry: no sign pattern can
    /// cancel, so every critical point has a nonzero Laplacian.
    fn ladder(count: usize) -> Vec<Vec<f64>> {
        const LADDER: [f64; 9] = [0.64, 0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025];
        LADDER[..count].iter().map(|c| vec![*c]).collect()
    }

    /// Single-mode separable field with 2^n non-degenerate critical points.
    pub fn standard_field(n: usize) -> FieldConfig {
        FieldConfig {
            expr: FieldExpr::Cosine {
                offset: 2.0,
                coefficients: Self::ladder(n),
            },
            kernel_scale: 1.0,
        }
    }

    /// Two-maxima separable field: coordinate 1 carries a second-harmonic mode,
    /// so x_1 in {0, 1/2} are both maxima of equal height.
    pub fn two_maxima_field(n: usize) -> FieldConfig {
        const LADDER: [f64; 8] = [0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025];
        let mut coefficients = vec![vec![0.0, 0.16]];
        coefficients.extend(LADDER[..n - 1].iter().map(|c| vec![*c]));
        FieldConfig {
            expr: FieldExpr::Cosine {
                offset: 2.0,
                coefficients,
            },
            kernel_scale: 1.0,
        }
    }

    /// Tower center separation per dimension: inside the neighborhood but with
    /// the tower gate active at lambda = 1e3.
    fn tower_separation(n: usize) -> f64 {
        match n {
            5 | 6 => 0.005,
            7 => 0.004,
            8 => 0.003,
            _ => 0.002,
        }
    }

    /// Starting concentration for the two-maxima scenarios: high enough that
    /// the scale-up gate is fully open at half-period separation (interactions
    /// decay like lambda^(2-n), so n = 5 needs a much larger start).
    fn existence_lambda(n: usize) -> f64 {
        if n == 5 {
            1e7
        } else {
            1e4
        }
    }

    /// Generate the run configuration for dimension `n` (None for `toy`).
    pub fn run_config(&self, n: usize) -> Option<RunConfig> {
        let zeros = |first: f64| {
            let mut v = vec![0.0; n];
            v[0] = first;
            v
        };
        match self {
            Preset::Toy => None,
            Preset::Existence => Some(RunConfig {
                n,
                q: 2,
                seed: 0,
                jitter: 2e-4,
                run_id: None,
                field: Self::two_maxima_field(n),
                initial: InitialConfig {
                    lambda: vec![Self::existence_lambda(n); 2],
                    centers: vec![zeros(0.0), zeros(0.5)],
                    alpha: AlphaSpec::default(),
                    vnorm: 1e-6,
                    norm_target: 1.0,
                },
                flow: None,
                integrator: IntegratorConfig {
                    t_max: 12.0,
                    ..Default::default()
                },
                constants: ExpansionConstants::default(),
                perturbation: PerturbationField::None,
                grid_density: 4,
            }),
            Preset::Tower => {
                let d = Self::tower_separation(n);
                Some(RunConfig {
                    n,
                    q: 2,
                    seed: 0,
                    jitter: 0.0,
                    run_id: None,
                    field: Self::two_maxima_field(n),
                    initial: InitialConfig {
                        lambda: vec![1e3, 1e3],
                        centers: vec![zeros(d / 2.0), zeros(1.0 - d / 2.0)],
                        alpha: AlphaSpec::default(),
                        vnorm: 0.0,
                        norm_target: 1.0,
                    },
                    flow: None,
                    integrator: IntegratorConfig {
                        t_max: 12.0,
                        ..Default::default()
                    },
                    constants: ExpansionConstants::default(),
                    perturbation: PerturbationField::None,
                    grid_density: 4,
                })
            }
            Preset::OffCritical => Some(RunConfig {
                n,
                q: 1,
                seed: 0,
                jitter: 0.0,
                run_id: None,
                field: Self::standard_field(n),
                initial: InitialConfig {
                    lambda: vec![1e3],
                    centers: vec![zeros(0.05)],
                    alpha: AlphaSpec::default(),
                    vnorm: 0.0,
                    norm_target: 1.0,
                },
                flow: None,
                integrator: IntegratorConfig {
                    t_max: 40.0,
                    ..Default::default()
                },
                constants: ExpansionConstants::default(),
                perturbation: PerturbationField::None,
                grid_density: 4,
            }),
            Preset::SaddleNegativeLaplacian => {
                let mut center = vec![0.5; n];
                center[0] = 0.0;
                Some(RunConfig {
                    n,
                    q: 1,
                    seed: 0,
                    jitter: 0.0,
                    run_id: None,
                    field: Self::standard_field(n),
                    initial: InitialConfig {
                        lambda: vec![1e4],
                        centers: vec![center],
                        alpha: AlphaSpec::default(),
                        vnorm: 1e-6,
                        norm_target: 1.0,
                    },
                    flow: None,
                    integrator: IntegratorConfig {
                        t_max: 12.0,
                        ..Default::default()
                    },
                    constants: ExpansionConstants::default(),
                    perturbation: PerturbationField::None,
                    grid_density: 4,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_identity() {
        for preset in [Preset::Existence, Preset::Tower, Preset::OffCritical] {
            let cfg = preset.run_config(6).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(cfg, back, "round trip changed the config:\n{text}");
        }
    }

    #[test]
    fn presets_validate_on_all_dimensions() {
        for n in 5..=9usize {
            for (name, preset) in PRESET_NAMES {
                if let Some(cfg) = preset.run_config(n) {
                    let resolved = cfg.resolve();
                    assert!(
                        resolved.is_ok(),
                        "preset {name} failed to resolve at n = {n}: {:?}",
                        resolved.err()
                    );
                }
            }
        }
    }

    #[test]
    fn bumps_and_perturbation_roundtrip() {
        use crate::geometry::{Bump, FieldExpr};
        let mut cfg = Preset::SaddleNegativeLaplacian.run_config(6).unwrap();
        cfg.field = FieldConfig {
            expr: FieldExpr::Bumps {
                offset: 1.0,
                bumps: vec![Bump {
                    amplitude: 2.5,
                    center: vec![0.3; 6],
                    sharpness: vec![1.5; 6],
                }],
            },
            kernel_scale: 2.0,
        };
        cfg.perturbation = PerturbationField::N6 {
            field: FieldExpr::Cosine {
                offset: 0.0,
                coefficients: vec![vec![0.2], vec![], vec![], vec![], vec![], vec![]],
            },
        };
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back, "bumps/perturbation round trip:\n{text}");
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(Preset::parse("nonsense").is_err());
        assert_eq!(Preset::parse("tower").unwrap(), Preset::Tower);
    }

    #[test]
    fn hierarchy_violation_is_itemized() {
        let mut cfg = Preset::Existence.run_config(6).unwrap();
        let mut fc = FlowConstants::defaults_for(2);
        fc.kappa_a = 10.0;
        cfg.flow = Some(fc);
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("kappa_lambda^3"), "{err}");
    }

    #[test]
    fn seeded_jitter_is_deterministic_and_bounded() {
        let mut cfg = Preset::Existence.run_config(6).unwrap();
        cfg.seed = 7;
        let a = cfg.resolve().unwrap();
        let b = cfg.resolve().unwrap();
        assert_eq!(a.state, b.state);
        let clean = {
            let mut c = cfg.clone();
            c.seed = 0;
            c.resolve().unwrap()
        };
        for (ja, jc) in a.state.centers().iter().zip(clean.state.centers()) {
            let d = crate::geometry::torus_distance(ja, jc).unwrap();
            assert!(d > 0.0 && d < 2e-4 * (6f64).sqrt() * 1.01);
        }
    }

    #[test]
    fn balanced_alpha_after_jitter() {
        let mut cfg = Preset::Existence.run_config(6).unwrap();
        cfg.seed = 3;
        let r = cfg.resolve().unwrap();
        let bal = crate::energy::balance(&r.state, &r.field).unwrap();
        for b in &bal.b {
            assert!((1.0 - b).abs() < 1e-12);
        }
    }
}

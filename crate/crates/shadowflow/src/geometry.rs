//! Flat-torus geometry and analytic scalar fields.
//!
//! The manifold model is `T^n = (R/Z)^n` with the flat metric: distances are
//! Euclidean norms of per-coordinate wrapped differences, and the leading-order
//! interaction kernel between two points is simply `kernel_scale * d(p, r)^2`.
//!
//! Scalar fields are closed-form expressions (sums of cosine modes or periodic
//! Gaussian bumps) so that gradient, Hessian, Laplacian and the gradient of the
//! Laplacian are exact analytic evaluations — no numerical differentiation
//! happens inside a field.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Result, ShadowError};

pub const MIN_DIM: usize = 5;
pub const MAX_DIM: usize = 9;

/// Newton convergence tolerance on the gradient norm.
pub const NEWTON_TOL: f64 = 1e-10;
/// Critical points closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-6;
/// A Hessian eigenvalue below this magnitude marks a degenerate critical point.
pub const HESS_TOL: f64 = 1e-8;
/// |Laplacian| at a critical point must exceed this.
pub const ND_TOL: f64 = 1e-8;

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Wrap a coordinate difference into [-1/2, 1/2).
fn wrap_signed(d: f64) -> f64 {
    let r = (d + 0.5).rem_euclid(1.0) - 0.5;
    if r >= 0.5 {
        -0.5
    } else {
        r
    }
}

/// A point on the flat torus; every coordinate is normalized into [0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ShadowError::Domain("non-finite torus coordinate".into()));
        }
        Ok(Self {
            coords: coords.into_iter().map(wrap_unit).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// A tangent vector at a torus point (same chart everywhere on the flat torus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    comps: Vec<f64>,
}

impl TangentVector {
    pub fn new(comps: Vec<f64>) -> Self {
        Self { comps }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            comps: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[f64] {
        &self.comps
    }

    pub fn norm(&self) -> f64 {
        self.comps.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&self, t: f64) -> TangentVector {
        TangentVector {
            comps: self.comps.iter().map(|c| c * t).collect(),
        }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(ShadowError::DimensionMismatch(format!(
            "expected dimension {a}, got {b}"
        )));
    }
    Ok(())
}

/// Per-coordinate wrapped difference `p - r`, each component in [-1/2, 1/2).
pub fn wrapped_diff(p: &TorusPoint, r: &TorusPoint) -> Result<Vec<f64>> {
    check_dims(p.dim(), r.dim())?;
    Ok(p.coords
        .iter()
        .zip(&r.coords)
        .map(|(a, b)| wrap_signed(a - b))
        .collect())
}

/// Flat-torus geodesic distance. Computed from the normalized coordinates so
/// the result is exactly symmetric in its arguments.
pub fn torus_distance(p: &TorusPoint, r: &TorusPoint) -> Result<f64> {
    check_dims(p.dim(), r.dim())?;
    let mut sum = 0.0;
    for (a, b) in p.coords.iter().zip(&r.coords) {
        let d = (a - b).abs();
        let c = d.min(1.0 - d);
        sum += c * c;
    }
    Ok(sum.sqrt())
}

/// Coordinatewise translation modulo 1.
pub fn torus_translate(p: &TorusPoint, v: &TangentVector) -> Result<TorusPoint> {
    check_dims(p.dim(), v.dim())?;
    TorusPoint::new(
        p.coords
            .iter()
            .zip(v.comps())
            .map(|(a, b)| a + b)
            .collect(),
    )
}

/// Leading-order squared interaction kernel: `scale * d(p, r)^2`.
pub fn kernel_sq(p: &TorusPoint, r: &TorusPoint, scale: f64) -> Result<f64> {
    let d = torus_distance(p, r)?;
    Ok(scale * d * d)
}

/// A periodic Gaussian bump `amplitude * exp(sum_k sharpness_k (cos(2 pi (x_k - center_k)) - 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sharpness: Vec<f64>,
}

/// Closed-form scalar field on the torus with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FieldExpr {
    /// `offset + sum_k sum_m coefficients[k][m] * cos(2 pi (m+1) x_k)`
    Cosine {
        offset: f64,
        coefficients: Vec<Vec<f64>>,
    },
    /// `offset + sum_j bump_j(x)`
    Bumps { offset: f64, bumps: Vec<Bump> },
}

const TAU: f64 = std::f64::consts::TAU;

impl FieldExpr {
    pub fn dim(&self) -> usize {
        match self {
            FieldExpr::Cosine { coefficients, .. } => coefficients.len(),
            FieldExpr::Bumps { bumps, .. } => {
                bumps.first().map(|b| b.center.len()).unwrap_or(0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FieldExpr::Cosine {
                offset,
                coefficients,
            } => {
                if !offset.is_finite()
                    || coefficients
                        .iter()
                        .any(|ms| ms.iter().any(|c| !c.is_finite()))
                {
                    return Err(ShadowError::Domain("non-finite field coefficient".into()));
                }
            }
            FieldExpr::Bumps { offset, bumps } => {
                if !offset.is_finite() {
                    return Err(ShadowError::Domain("non-finite field offset".into()));
                }
                let dim = self.dim();
                for b in bumps {
                    if b.center.len() != dim || b.sharpness.len() != dim {
                        return Err(ShadowError::DimensionMismatch(
                            "bump center/sharpness length differs across bumps".into(),
                        ));
                    }
                    if b.sharpness.iter().any(|s| *s <= 0.0) {
                        return Err(ShadowError::Domain("bump sharpness must be > 0".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Guaranteed lower bound of the field over the torus.
    pub fn lower_bound(&self) -> f64 {
        match self {
            FieldExpr::Cosine {
                offset,
                coefficients,
            } => offset - coefficients.iter().flatten().map(|c| c.abs()).sum::<f64>(),
            FieldExpr::Bumps { offset, bumps } => {
                // Each bump factor lies in (0, 1]; negative amplitudes bound from below.
                offset
                    + bumps
                        .iter()
                        .map(|b| if b.amplitude < 0.0 { b.amplitude } else { 0.0 })
                        .sum::<f64>()
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            FieldExpr::Cosine {
                offset,
                coefficients,
            } => {
                let mut v = *offset;
                for (k, modes) in coefficients.iter().enumerate() {
                    for (m, c) in modes.iter().enumerate() {
                        v += c * (TAU * (m + 1) as f64 * x[k]).cos();
                    }
                }
                v
            }
            FieldExpr::Bumps { offset, bumps } => {
                let mut v = *offset;
                for b in bumps {
                    v += b.amplitude * bump_exp(b, x);
                }
                v
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut g = vec![0.0; n];
        match self {
            FieldExpr::Cosine { coefficients, .. } => {
                for (k, modes) in coefficients.iter().enumerate() {
                    for (m, c) in modes.iter().enumerate() {
                        let w = TAU * (m + 1) as f64;
                        g[k] -= c * w * (w * x[k]).sin();
                    }
                }
            }
            FieldExpr::Bumps { bumps, .. } => {
                for b in bumps {
                    let e = b.amplitude * bump_exp(b, x);
                    for k in 0..n {
                        g[k] += e * bump_dlog(b, x, k);
                    }
                }
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        match self {
            FieldExpr::Cosine { coefficients, .. } => {
                for (k, modes) in coefficients.iter().enumerate() {
                    for (m, c) in modes.iter().enumerate() {
                        let w = TAU * (m + 1) as f64;
                        h[(k, k)] -= c * w * w * (w * x[k]).cos();
                    }
                }
            }
            FieldExpr::Bumps { bumps, .. } => {
                for b in bumps {
                    let e = b.amplitude * bump_exp(b, x);
                    for k in 0..n {
                        let gk = bump_dlog(b, x, k);
                        for l in 0..n {
                            let gl = bump_dlog(b, x, l);
                            let mut term = gk * gl;
                            if k == l {
                                term += bump_d2log(b, x, k);
                            }
                            h[(k, l)] += e * term;
                        }
                    }
                }
            }
        }
        h
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match self {
            FieldExpr::Cosine { coefficients, .. } => {
                let mut lap = 0.0;
                for (k, modes) in coefficients.iter().enumerate() {
                    for (m, c) in modes.iter().enumerate() {
                        let w = TAU * (m + 1) as f64;
                        lap -= c * w * w * (w * x[k]).cos();
                    }
                }
                lap
            }
            FieldExpr::Bumps { bumps, .. } => {
                let n = self.dim();
                let mut lap = 0.0;
                for b in bumps {
                    let e = b.amplitude * bump_exp(b, x);
                    let mut s = 0.0;
                    for k in 0..n {
                        let gk = bump_dlog(b, x, k);
                        s += gk * gk + bump_d2log(b, x, k);
                    }
                    lap += e * s;
                }
                lap
            }
        }
    }

    /// Gradient of the Laplacian.
    pub fn grad_laplacian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut g = vec![0.0; n];
        match self {
            FieldExpr::Cosine { coefficients, .. } => {
                for (k, modes) in coefficients.iter().enumerate() {
                    for (m, c) in modes.iter().enumerate() {
                        let w = TAU * (m + 1) as f64;
                        g[k] += c * w * w * w * (w * x[k]).sin();
                    }
                }
            }
            FieldExpr::Bumps { bumps, .. } => {
                for b in bumps {
                    let e = b.amplitude * bump_exp(b, x);
                    let mut s = 0.0;
                    let mut gs = vec![0.0; n];
                    for k in 0..n {
                        let gk = bump_dlog(b, x, k);
                        s += gk * gk + bump_d2log(b, x, k);
                        gs[k] = gk;
                    }
                    for l in 0..n {
                        let gl = gs[l];
                        // d/dx_l [e * s] = e*gl*s + e*(2 gl h_l + w_l)
                        let hl = bump_d2log(b, x, l);
                        let wl = bump_d3log(b, x, l);
                        g[l] += e * (gl * s + 2.0 * gl * hl + wl);
                    }
                }
            }
        }
        g
    }
}

fn bump_exp(b: &Bump, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        s += b.sharpness[k] * ((TAU * (x[k] - b.center[k])).cos() - 1.0);
    }
    s.exp()
}

fn bump_dlog(b: &Bump, x: &[f64], k: usize) -> f64 {
    -TAU * b.sharpness[k] * (TAU * (x[k] - b.center[k])).sin()
}

fn bump_d2log(b: &Bump, x: &[f64], k: usize) -> f64 {
    -TAU * TAU * b.sharpness[k] * (TAU * (x[k] - b.center[k])).cos()
}

fn bump_d3log(b: &Bump, x: &[f64], k: usize) -> f64 {
    TAU * TAU * TAU * b.sharpness[k] * (TAU * (x[k] - b.center[k])).sin()
}

/// A positive Morse function on the torus together with the kernel normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseField {
    dim: usize,
    expr: FieldExpr,
    #[serde(default = "default_kernel_scale")]
    kernel_scale: f64,
    min_value: f64,
}

fn default_kernel_scale() -> f64 {
    1.0
}

impl MorseField {
    pub fn new(dim: usize, expr: FieldExpr) -> Result<Self> {
        Self::with_kernel_scale(dim, expr, 1.0)
    }

    pub fn with_kernel_scale(dim: usize, expr: FieldExpr, kernel_scale: f64) -> Result<Self> {
        if !(MIN_DIM..=MAX_DIM).contains(&dim) {
            return Err(ShadowError::Config(format!(
                "dimension {dim} outside supported range {MIN_DIM}..={MAX_DIM}"
            )));
        }
        expr.validate()?;
        if expr.dim() != dim {
            return Err(ShadowError::DimensionMismatch(format!(
                "field expression has dimension {}, configured dimension is {dim}",
                expr.dim()
            )));
        }
        if kernel_scale <= 0.0 {
            return Err(ShadowError::Config("kernel_scale must be > 0".into()));
        }
        let min_value = expr.lower_bound();
        if min_value <= 0.0 {
            return Err(ShadowError::Config(format!(
                "field is not positive: guaranteed lower bound {min_value} <= 0"
            )));
        }
        Ok(Self {
            dim,
            expr,
            kernel_scale,
            min_value,
        })
    }

    /// Separable cosine field: `offset + sum_k sum_m coefficients[k][m] cos(2 pi (m+1) x_k)`.
    pub fn cosine(dim: usize, offset: f64, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            dim,
            FieldExpr::Cosine {
                offset,
                coefficients,
            },
        )
    }

    pub fn bumps(dim: usize, offset: f64, bumps: Vec<Bump>) -> Result<Self> {
        Self::new(dim, FieldExpr::Bumps { offset, bumps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &FieldExpr {
        &self.expr
    }

    pub fn kernel_scale(&self) -> f64 {
        self.kernel_scale
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn value(&self, p: &TorusPoint) -> f64 {
        self.expr.value(p.coords())
    }

    pub fn gradient(&self, p: &TorusPoint) -> TangentVector {
        TangentVector::new(self.expr.gradient(p.coords()))
    }

    pub fn hessian(&self, p: &TorusPoint) -> DMatrix<f64> {
        self.expr.hessian(p.coords())
    }

    pub fn laplacian(&self, p: &TorusPoint) -> f64 {
        self.expr.laplacian(p.coords())
    }

    pub fn grad_laplacian(&self, p: &TorusPoint) -> TangentVector {
        TangentVector::new(self.expr.grad_laplacian(p.coords()))
    }

    pub fn kernel_sq(&self, p: &TorusPoint, r: &TorusPoint) -> Result<f64> {
        kernel_sq(p, r, self.kernel_scale)
    }
}

/// A non-degenerate critical point of a Morse field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: TorusPoint,
    /// Number of negative Hessian eigenvalues.
    pub morse_index: usize,
    pub laplacian: f64,
    pub gradient_residual: f64,
    /// Smallest Hessian eigenvalue magnitude; Morse requires this above `HESS_TOL`.
    pub min_abs_eigenvalue: f64,
}

/// Newton search for all critical points seeded from a uniform grid.
///
/// Diverging seeds are skipped; converged points closer than `DEDUP_TOL` are
/// merged. A converged point with a singular Hessian (eigenvalue magnitude
/// below `HESS_TOL`) is a degeneracy error. Output is sorted lexicographically
/// by coordinates so the catalog is deterministic.
pub fn find_critical_points(field: &MorseField, grid_density: usize) -> Result<Vec<CriticalPoint>> {
    if grid_density < 2 {
        return Err(ShadowError::Config("grid_density must be >= 2".into()));
    }
    let n = field.dim();
    let seeds = (grid_density as f64).powi(n as i32);
    if seeds > 5e6 {
        return Err(ShadowError::Config(format!(
            "grid of {seeds} seeds is too large; lower grid_density"
        )));
    }

    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let seed: Vec<f64> = idx
            .iter()
            .map(|i| *i as f64 / grid_density as f64)
            .collect();
        if let Some(x) = newton_from_seed(field, seed) {
            let dup = found.iter().any(|y| close_mod1(&x, y, DEDUP_TOL));
            if !dup {
                found.push(x);
            }
        }
        // odometer increment
        let mut carry = true;
        for d in idx.iter_mut() {
            *d += 1;
            if *d < grid_density {
                carry = false;
                break;
            }
            *d = 0;
        }
        if carry {
            break;
        }
    }

    found.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));

    let mut out = Vec::with_capacity(found.len());
    for coords in found {
        let p = TorusPoint::new(coords)?;
        let h = field.hessian(&p);
        let eig = h.symmetric_eigen().eigenvalues;
        let min_abs = eig.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        if min_abs < HESS_TOL {
            return Err(ShadowError::Degenerate(format!(
                "critical point at {:?} has Hessian eigenvalue {min_abs:.3e} below {HESS_TOL:.1e}",
                p.coords()
            )));
        }
        let morse_index = eig.iter().filter(|e| **e < 0.0).count();
        out.push(CriticalPoint {
            gradient_residual: field.gradient(&p).norm(),
            laplacian: field.laplacian(&p),
            morse_index,
            min_abs_eigenvalue: min_abs,
            location: p,
        });
    }
    Ok(out)
}

/// Wrapped distance below `tol`, with per-coordinate early exit; both inputs
/// are normalized into [0, 1).
fn close_mod1(a: &[f64], b: &[f64], tol: f64) -> bool {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        let c = d.min(1.0 - d);
        sum += c * c;
        if sum >= tol * tol {
            return false;
        }
    }
    true
}

fn newton_from_seed(field: &MorseField, seed: Vec<f64>) -> Option<Vec<f64>> {
    let n = field.dim();
    let mut x = seed;
    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    for _ in 0..60 {
        let g = field.expr.gradient(&x);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= NEWTON_TOL {
            return Some(x.iter().map(|c| wrap_unit(*c)).collect());
        }
        // quadratic convergence shrinks the residual fast; wandering seeds
        // (clamped steps from near-singular Hessians) are dropped early
        if gnorm < 0.7 * best {
            best = gnorm;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 6 {
                return None;
            }
        }
        let h = field.expr.hessian(&x);
        let rhs = DVector::from_column_slice(&g);
        let lu = h.lu();
        let step = lu.solve(&rhs)?;
        let mut snorm = step.norm();
        if !snorm.is_finite() {
            return None;
        }
        // clamp to stay within one basin per iteration
        let cap = 0.2;
        let scale = if snorm > cap { cap / snorm } else { 1.0 };
        snorm *= scale;
        for k in 0..n {
            x[k] -= step[k] * scale;
        }
        if snorm < 1e-16 {
            // stalled away from a root
            let g = field.expr.gradient(&x);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            return if gnorm <= NEWTON_TOL {
                Some(x.iter().map(|c| wrap_unit(*c)).collect())
            } else {
                None
            };
        }
    }
    None
}

/// Itemized non-degeneracy report for a critical-point catalog.
#[derive(Debug, Clone, Serialize)]
pub struct NdReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks that every critical point has |Laplacian| above `nd_tol` and a Morse
/// Hessian. Empty catalogs pass vacuously.
pub fn check_nondegeneracy(
    _field: &MorseField,
    crits: &[CriticalPoint],
    nd_tol: f64,
) -> NdReport {
    let mut violations = Vec::new();
    for (i, c) in crits.iter().enumerate() {
        if c.laplacian.abs() <= nd_tol {
            violations.push(format!(
                "critical point {i} at {:?}: |Laplacian| = {:.3e} <= {nd_tol:.1e}",
                c.location.coords(),
                c.laplacian.abs()
            ));
        }
        if c.min_abs_eigenvalue < HESS_TOL {
            violations.push(format!(
                "critical point {i} at {:?}: Hessian eigenvalue {:.3e} below {HESS_TOL:.1e}",
                c.location.coords(),
                c.min_abs_eigenvalue
            ));
        }
    }
    NdReport {
        ok: violations.is_empty(),
        violations,
    }
}

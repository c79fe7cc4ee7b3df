//! Damped scattering integrals and their numerical verification:
//! conservation along orbits, functional independence via Jacobian rank,
//! and Poisson brackets.
//!
//! The integrals combine the outgoing asymptotic momentum with a
//! double-exponential damping in the time delay,
//!
//!   f_k = p_k⁺ · exp(-e^{(C/(g-1)) √(1+τ²)})   on scattering points,
//!   f_k = 0                                      elsewhere.
//!
//! The damping factor underflows quickly, so everything downstream factors
//! it out analytically: Jacobians and brackets are computed on the
//! assembled matrix  M = J_{p⁺} + w · p⁺ ⊗ ∇τ  with w = ∂ log(damping)/∂τ,
//! which has the same rank and the same normalized brackets.

use crate::model::{force, CentreConfig, GevreyParams, PhaseState};
use crate::scattering::{scattering_record, OrbitClass, ScatterSettings, ScatteringRecord};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegralError {
    #[error("stencil broken: a stencil point left the scattering class")]
    StencilBroken,
    #[error("scattering record lacks a converged tau")]
    MissingTau,
    #[error("scattering record lacks asymptotic momenta")]
    MissingMomentum,
    #[error("numerical overflow in the damping weight (tau = {tau})")]
    Overflow { tau: f64 },
    #[error("evaluation failed: {0}")]
    Eval(String),
}

/// Damping factor in log space. `value` is 0 with `underflow` set once the
/// true value drops below the double-precision floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub value: f64,
    pub log_value: f64,
    pub underflow: bool,
}

/// exp(-e^{(C/(g-1)) √(1+τ²)}), computed via its logarithm.
pub fn gevrey_damping(tau: f64, params: &GevreyParams) -> Damping {
    let inner = params.c_const / (params.g_index - 1.0) * (1.0 + tau * tau).sqrt();
    let log_value = -inner.exp();
    let value = log_value.exp();
    Damping { value, log_value, underflow: value == 0.0 }
}

/// d log(damping)/dτ; diverges with e^inner, so callers must check
/// finiteness before scaling by it.
fn damping_log_slope(tau: f64, params: &GevreyParams) -> f64 {
    let c = params.c_const / (params.g_index - 1.0);
    let root = (1.0 + tau * tau).sqrt();
    -(c * root).exp() * c * tau / root
}

/// Value of the integrals at one finished record.
#[derive(Debug, Clone)]
pub struct IntegralValue {
    /// (f_1, ..., f_d), embedded in 3-space like every other vector.
    pub f: crate::model::Vec3,
    pub damping: f64,
    pub damping_log: f64,
    pub underflow: bool,
    /// False for budget-relative classifications (Undetermined), where the
    /// zero extension is not authoritative.
    pub authoritative: bool,
    pub source: ScatteringRecord,
}

/// The case split of the integrals: p⁺ · damping on scattering points, the
/// zero extension elsewhere.
pub fn gevrey_integral(
    record: &ScatteringRecord,
    params: &GevreyParams,
) -> Result<IntegralValue, IntegralError> {
    match record.orbit_class {
        OrbitClass::Scattering => {
            let p_plus = record.p_plus.ok_or(IntegralError::MissingMomentum)?;
            let tau = record.tau.ok_or(IntegralError::MissingTau)?;
            if !record.tau_converged {
                return Err(IntegralError::MissingTau);
            }
            let damping = gevrey_damping(tau, params);
            Ok(IntegralValue {
                f: damping.value * p_plus,
                damping: damping.value,
                damping_log: damping.log_value,
                underflow: damping.underflow,
                authoritative: true,
                source: record.clone(),
            })
        }
        class => Ok(IntegralValue {
            f: crate::model::Vec3::zeros(),
            damping: 0.0,
            damping_log: f64::NEG_INFINITY,
            underflow: false,
            authoritative: class != OrbitClass::Undetermined,
            source: record.clone(),
        }),
    }
}

/// Central finite-difference gradient in (q, p) with per-coordinate steps
/// scaled by coordinate magnitude and an order-4 Richardson combination of
/// the h and h/2 differences. Layout: [∂/∂q_1..q_d, ∂/∂p_1..p_d].
pub fn phase_gradient<F>(
    mut func: F,
    x: &PhaseState,
    dim: usize,
    h: f64,
) -> Result<DVector<f64>, IntegralError>
where
    F: FnMut(&PhaseState) -> Result<f64, IntegralError>,
{
    let mut grad = DVector::zeros(2 * dim);
    for coord in 0..2 * dim {
        let base = coordinate(x, coord, dim);
        let step = h * base.abs().max(1.0);
        let mut central = [0.0; 2];
        for (slot, scale) in [(0usize, 1.0f64), (1, 0.5)] {
            let hp = step * scale;
            let fp = func(&offset(x, coord, dim, hp))?;
            let fm = func(&offset(x, coord, dim, -hp))?;
            central[slot] = (fp - fm) / (2.0 * hp);
        }
        grad[coord] = (4.0 * central[1] - central[0]) / 3.0;
    }
    Ok(grad)
}

fn coordinate(x: &PhaseState, coord: usize, dim: usize) -> f64 {
    if coord < dim {
        x.q[coord]
    } else {
        x.p[coord - dim]
    }
}

fn offset(x: &PhaseState, coord: usize, dim: usize, delta: f64) -> PhaseState {
    let mut y = *x;
    if coord < dim {
        y.q[coord] += delta;
    } else {
        y.p[coord - dim] += delta;
    }
    y
}

/// Symplectic pairing of two phase-space gradients:
/// Σ_i (∂a/∂q_i ∂b/∂p_i - ∂a/∂p_i ∂b/∂q_i).
pub fn bracket_of_gradients(a: &DVector<f64>, b: &DVector<f64>, dim: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        acc += a[i] * b[dim + i] - a[dim + i] * b[i];
    }
    acc
}

/// Poisson bracket of two phase-space functions by finite differences.
pub fn poisson_bracket<F, G>(
    func_a: F,
    func_b: G,
    x: &PhaseState,
    dim: usize,
    h: f64,
) -> Result<f64, IntegralError>
where
    F: FnMut(&PhaseState) -> Result<f64, IntegralError>,
    G: FnMut(&PhaseState) -> Result<f64, IntegralError>,
{
    let ga = phase_gradient(func_a, x, dim, h)?;
    let gb = phase_gradient(func_b, x, dim, h)?;
    Ok(bracket_of_gradients(&ga, &gb, dim))
}

/// Analytic phase-space gradient of the Hamiltonian: (-force(q), p).
pub fn hamiltonian_gradient(
    x: &PhaseState,
    config: &CentreConfig,
) -> Result<DVector<f64>, IntegralError> {
    let dim = config.dim();
    let fr = force(&x.q, config).map_err(|e| IntegralError::Eval(e.to_string()))?;
    let mut g = DVector::zeros(2 * dim);
    for i in 0..dim {
        g[i] = -fr[i];
        g[dim + i] = x.p[i];
    }
    Ok(g)
}

/// Gradients of the scattering data at `x`, from one shared finite-difference
/// stencil of full records: the d×2d Jacobian of p⁺ and the gradient of τ.
///
/// Every stencil evaluation must come back Scattering with converged τ;
/// anything else breaks the stencil (the caller resamples).
pub struct ScatteringJacobian {
    pub base: ScatteringRecord,
    /// d × 2d.
    pub jac_p: DMatrix<f64>,
    /// 2d.
    pub grad_tau: DVector<f64>,
}

pub fn scattering_jacobian(
    x: &PhaseState,
    config: &CentreConfig,
    settings: &ScatterSettings,
    h: f64,
) -> Result<ScatteringJacobian, IntegralError> {
    let dim = config.dim();
    let base = scattering_record(x, config, settings).map_err(|e| IntegralError::Eval(e.to_string()))?;
    if base.orbit_class != OrbitClass::Scattering || !base.tau_converged {
        return Err(IntegralError::StencilBroken);
    }

    let eval = |y: &PhaseState| -> Result<(crate::model::Vec3, f64), IntegralError> {
        let r = scattering_record(y, config, settings)
            .map_err(|e| IntegralError::Eval(e.to_string()))?;
        if r.orbit_class != OrbitClass::Scattering || !r.tau_converged {
            return Err(IntegralError::StencilBroken);
        }
        Ok((r.p_plus.ok_or(IntegralError::MissingMomentum)?, r.tau.ok_or(IntegralError::MissingTau)?))
    };

    let mut jac_p = DMatrix::zeros(dim, 2 * dim);
    let mut grad_tau = DVector::zeros(2 * dim);
    for coord in 0..2 * dim {
        let base_c = coordinate(x, coord, dim);
        let step = h * base_c.abs().max(1.0);
        let mut p_cd = [crate::model::Vec3::zeros(); 2];
        let mut tau_cd = [0.0; 2];
        for (slot, scale) in [(0usize, 1.0f64), (1, 0.5)] {
            let hp = step * scale;
            let (pp, taup) = eval(&offset(x, coord, dim, hp))?;
            let (pm, taum) = eval(&offset(x, coord, dim, -hp))?;
            p_cd[slot] = (pp - pm) / (2.0 * hp);
            tau_cd[slot] = (taup - taum) / (2.0 * hp);
        }
        let p_rich = (4.0 * p_cd[1] - p_cd[0]) / 3.0;
        for k in 0..dim {
            jac_p[(k, coord)] = p_rich[k];
        }
        grad_tau[coord] = (4.0 * tau_cd[1] - tau_cd[0]) / 3.0;
    }
    Ok(ScatteringJacobian { base, jac_p, grad_tau })
}

/// The damping-factored Jacobian M = J_{p⁺} + w · p⁺ ⊗ ∇τ; the Jacobian of
/// the integrals is damping(τ) · M, so ranks and normalized brackets agree.
pub fn assembled_jacobian(
    sj: &ScatteringJacobian,
    params: &GevreyParams,
    dim: usize,
) -> Result<DMatrix<f64>, IntegralError> {
    let tau = sj.base.tau.ok_or(IntegralError::MissingTau)?;
    let p_plus = sj.base.p_plus.ok_or(IntegralError::MissingMomentum)?;
    let w = damping_log_slope(tau, params);
    if !w.is_finite() {
        return Err(IntegralError::Overflow { tau });
    }
    let mut m = sj.jac_p.clone();
    for k in 0..dim {
        for c in 0..2 * dim {
            m[(k, c)] += w * p_plus[k] * sj.grad_tau[c];
        }
    }
    Ok(m)
}

/// Relative singular-value cutoff of the numerical rank.
pub const RANK_SV_CUTOFF: f64 = 1e-8;

/// Numerical rank: singular values above `RANK_SV_CUTOFF` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, Vec<f64>) {
    let svd = m.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let cutoff = sv.first().copied().unwrap_or(0.0) * RANK_SV_CUTOFF;
    let rank = sv.iter().filter(|s| **s > cutoff && **s > 0.0).count();
    (rank, sv)
}

/// Rank report of the integrals' Jacobian at one point.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Jacobian rank of (f_1, ..., f_d) at x, with the damping factored out.
pub fn independence_rank(
    x: &PhaseState,
    config: &CentreConfig,
    settings: &ScatterSettings,
    params: &GevreyParams,
    h: f64,
) -> Result<(RankReport, ScatteringJacobian), IntegralError> {
    let sj = scattering_jacobian(x, config, settings, h)?;
    let m = assembled_jacobian(&sj, params, config.dim())?;
    let (rank, singular_values) = numerical_rank(&m);
    Ok((RankReport { rank, singular_values }, sj))
}

/// Normalized bracket magnitudes of the integrals at one point: |{f_i, H}|
/// and |{f_i, f_j}|, each divided by the product of the gradient norms.
/// The common damping factor cancels in these ratios.
#[derive(Debug, Clone, Serialize)]
pub struct BracketReport {
    /// max_i |{f_i, H}| / (|∇f_i| |∇H|).
    pub f_h_max: f64,
    /// max_{i<j} |{f_i, f_j}| / (|∇f_i| |∇f_j|); 0 when d < 2.
    pub f_f_max: f64,
}

pub fn bracket_report(
    sj: &ScatteringJacobian,
    config: &CentreConfig,
    params: &GevreyParams,
) -> Result<BracketReport, IntegralError> {
    let dim = config.dim();
    let m = assembled_jacobian(sj, params, dim)?;
    let gh = hamiltonian_gradient(&sj.base.x, config)?;
    let rows: Vec<DVector<f64>> = (0..dim).map(|k| m.row(k).transpose()).collect();

    let mut f_h_max: f64 = 0.0;
    for row in &rows {
        let denom = row.norm() * gh.norm();
        if denom > 0.0 {
            f_h_max = f_h_max.max(bracket_of_gradients(row, &gh, dim).abs() / denom);
        }
    }
    let mut f_f_max: f64 = 0.0;
    for i in 0..dim {
        for j in i + 1..dim {
            let denom = rows[i].norm() * rows[j].norm();
            if denom > 0.0 {
                f_f_max = f_f_max.max(bracket_of_gradients(&rows[i], &rows[j], dim).abs() / denom);
            }
        }
    }
    Ok(BracketReport { f_h_max, f_f_max })
}

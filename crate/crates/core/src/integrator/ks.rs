//! Kustaanheimo-Stiefel regularization of one Coulomb centre.
//!
//! Near centre k the local coordinates x = q - s_k are mapped to u ∈ ℝ⁴ with
//! x = L̃(u) u and |x| = |u|², momenta lift as p_u = 2 L(u)ᵀ (p, 0). Under the
//! fictitious time dτ = dt / r the motion is generated by
//!
//!   K(u, p_u) = |p_u|²/8 - Z_k + |u|² (W(x(u)) - E),
//!
//! where W is the potential of the *other* centres (smooth near u = 0) and E
//! the fixed total energy at entry; on the energy surface K = 0 this flow is
//! the time-reparameterized original one, and it is regular at u = 0. The
//! planar Levi-Civita map is the u₃ = u₄ = 0 subspace of the same formulas,
//! so a single implementation serves d = 2 and d = 3.

use crate::model::{CentreConfig, Vec3};

use super::rk::OdeSystem;

/// Regularized state layout: [u₁..u₄, p_u1..p_u4, t].
pub type RegState = [f64; 9];

/// KS matrix applied to a 4-vector: L(u) v.
#[inline]
fn ks_l(u: &[f64; 4], v: &[f64; 4]) -> [f64; 4] {
    [
        u[0] * v[0] - u[1] * v[1] - u[2] * v[2] + u[3] * v[3],
        u[1] * v[0] + u[0] * v[1] - u[3] * v[2] - u[2] * v[3],
        u[2] * v[0] + u[3] * v[1] + u[0] * v[2] + u[1] * v[3],
        u[3] * v[0] - u[2] * v[1] + u[1] * v[2] - u[0] * v[3],
    ]
}

/// Transposed KS matrix applied to a 4-vector: L(u)ᵀ v.
#[inline]
fn ks_lt(u: &[f64; 4], v: &[f64; 4]) -> [f64; 4] {
    [
        u[0] * v[0] + u[1] * v[1] + u[2] * v[2] + u[3] * v[3],
        -u[1] * v[0] + u[0] * v[1] + u[3] * v[2] - u[2] * v[3],
        -u[2] * v[0] - u[3] * v[1] + u[0] * v[2] + u[1] * v[3],
        u[3] * v[0] - u[2] * v[1] + u[1] * v[2] - u[0] * v[3],
    ]
}

/// Position part of the KS map, x = first three components of L(u) u.
pub fn ks_position(u: &[f64; 4]) -> Vec3 {
    Vec3::new(
        u[0] * u[0] - u[1] * u[1] - u[2] * u[2] + u[3] * u[3],
        2.0 * (u[0] * u[1] - u[2] * u[3]),
        2.0 * (u[0] * u[2] + u[1] * u[3]),
    )
}

/// |u|² = r.
#[inline]
pub fn ks_r(u: &[f64; 4]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// Bilinear invariant ℓ(u, p_u); zero on canonically lifted states and
/// preserved by the regularized flow.
pub fn ks_constraint(u: &[f64; 4], pu: &[f64; 4]) -> f64 {
    u[3] * pu[0] - u[2] * pu[1] + u[1] * pu[2] - u[0] * pu[3]
}

/// Lift local cartesian (x, p) into KS variables. The fibre angle is fixed by
/// zeroing one redundant component, branch-split on sign(x₁) for stability.
pub fn ks_enter(x: &Vec3, p: &Vec3) -> ([f64; 4], [f64; 4]) {
    let r = x.norm();
    let mut u = [0.0; 4];
    if x.x >= 0.0 {
        u[0] = (0.5 * (r + x.x)).sqrt();
        u[1] = 0.5 * x.y / u[0];
        u[2] = 0.5 * x.z / u[0];
        u[3] = 0.0;
    } else {
        u[1] = (0.5 * (r - x.x)).sqrt();
        u[0] = 0.5 * x.y / u[1];
        u[2] = 0.0;
        u[3] = 0.5 * x.z / u[1];
    }
    let p4 = [p.x, p.y, p.z, 0.0];
    let mut pu = ks_lt(&u, &p4);
    for v in &mut pu {
        *v *= 2.0;
    }
    (u, pu)
}

/// Project KS variables back to local cartesian (x, p). Requires r > 0.
pub fn ks_exit(u: &[f64; 4], pu: &[f64; 4]) -> (Vec3, Vec3) {
    let r = ks_r(u);
    let x = ks_position(u);
    let lp = ks_l(u, pu);
    let p = Vec3::new(lp[0], lp[1], lp[2]) / (2.0 * r);
    (x, p)
}

/// The regularized equations of motion around centre `k`:
///   u'   = p_u / 4,
///   p_u' = 2 E u - 2 (W - E)·0 … = -2 (W - E) u - 2 r L(u)ᵀ (∇W, 0),
///   t'   = r.
pub struct RegularizedSystem<'a> {
    pub config: &'a CentreConfig,
    pub centre: usize,
    /// Total energy frozen at entry; K = 0 on the physical orbit.
    pub energy: f64,
}

impl<'a> RegularizedSystem<'a> {
    /// Potential and gradient of every centre except the regularized one,
    /// evaluated at absolute position q.
    fn other_potential(&self, q: &Vec3) -> (f64, Vec3) {
        let mut w = 0.0;
        let mut grad = Vec3::zeros();
        for (l, (s, z)) in self
            .config
            .centres()
            .iter()
            .zip(self.config.strengths())
            .enumerate()
        {
            if l == self.centre {
                continue;
            }
            let rel = q - s;
            let d2 = rel.norm_squared();
            let d = d2.sqrt();
            w -= z / d;
            grad += z / (d2 * d) * rel;
        }
        (w, grad)
    }

    /// Residual of the regularized Hamiltonian; stays ≈ 0 along the flow.
    pub fn k_residual(&self, y: &RegState) -> f64 {
        let u = [y[0], y[1], y[2], y[3]];
        let pu = [y[4], y[5], y[6], y[7]];
        let r = ks_r(&u);
        let q = self.config.centres()[self.centre] + ks_position(&u);
        let (w, _) = self.other_potential(&q);
        let pu2: f64 = pu.iter().map(|v| v * v).sum();
        pu2 / 8.0 - self.config.strengths()[self.centre] + r * (w - self.energy)
    }
}

impl<'a> OdeSystem<9> for RegularizedSystem<'a> {
    fn rhs(&self, _tau: f64, y: &RegState, dydt: &mut RegState) {
        let u = [y[0], y[1], y[2], y[3]];
        let pu = [y[4], y[5], y[6], y[7]];
        let r = ks_r(&u);
        let q = self.config.centres()[self.centre] + ks_position(&u);
        let (w, grad_w) = self.other_potential(&q);
        let g4 = [grad_w.x, grad_w.y, grad_w.z, 0.0];
        let ltg = ks_lt(&u, &g4);
        let c = -2.0 * (w - self.energy);
        for i in 0..4 {
            dydt[i] = 0.25 * pu[i];
            dydt[4 + i] = c * u[i] - 2.0 * r * ltg[i];
        }
        dydt[8] = r;
    }
}

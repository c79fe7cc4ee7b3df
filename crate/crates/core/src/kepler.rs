//! Closed-form machinery for the reference Coulomb/Kepler problem
//! H_∞ = p²/2 - z/|q|: conserved elements, exact propagation, asymptote
//! directions, and time spent inside a ball.
//!
//! All formulas are written sign-uniform in σ = sign(z), so attractive
//! (z > 0), repulsive (z < 0) and free (z = 0) tails share one code path.
//! Planar problems are embedded in the z = 0 plane of 3-space; the angular
//! momentum and Runge-Lenz algebra is always done with 3-vectors.
//!
//! Hyperbolic motion (E > 0) is parameterized as
//!   r(H)      = |a| (e cosh H - σ),      |a| = |z| / 2E,
//!   n (t-t_p) = e sinh H - σ H,          n = (2E)^{3/2} / |z|,
//! elliptic motion (E < 0, necessarily z > 0) in the standard eccentric
//! anomaly. Propagation solves the incremental form of these equations for
//! the anomaly difference and applies Lagrange f-g coefficients; both
//! residual functions are strictly monotone in the anomaly difference, so a
//! bracketed Newton iteration cannot escape.

use crate::model::{PhaseState, Vec3};
use thiserror::Error;

/// Residual tolerance of the anomaly solve, scaled by max(1, |n dt|).
const SOLVE_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 50;
const BISECT_MAX_ITER: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum KeplerError {
    #[error("state at the field origin")]
    AtOrigin,
    #[error("orbit with energy {energy} is bound; no asymptote")]
    BoundOrbit { energy: f64 },
    #[error("zero angular momentum collision-line orbit")]
    CollisionLine,
    #[error("parabolic orbit (E = 0) not supported")]
    Parabolic,
    #[error("ball of radius {r} not reached; perihelion distance {r_peri}")]
    BallNotReached { r: f64, r_peri: f64 },
    #[error("anomaly solve failed to converge")]
    NoConvergence,
    #[error("elements inconsistent with the provided on-orbit state")]
    InconsistentState,
}

/// Conserved elements of the reference Coulomb problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerElements {
    /// E_∞ = p²/2 - z/|q|.
    pub energy: f64,
    /// L = q × p.
    pub ang_mom: Vec3,
    /// A = p × L - z q/|q| (Laplace-Runge-Lenz vector).
    pub lrl: Vec3,
    /// Field strength, sign free.
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Incoming,
    Outgoing,
}

/// Conserved elements from a phase-space point.
pub fn elements_from_state(state: &PhaseState, z: f64) -> Result<KeplerElements, KeplerError> {
    let r = state.q.norm();
    if r == 0.0 {
        return Err(KeplerError::AtOrigin);
    }
    let energy = 0.5 * state.p.norm_squared() - z / r;
    let ang_mom = state.q.cross(&state.p);
    let lrl = state.p.cross(&ang_mom) - z / r * state.q;
    Ok(KeplerElements { energy, ang_mom, lrl, z })
}

impl KeplerElements {
    /// e = |A| / |z|; `None` for the free field where eccentricity is not
    /// defined.
    pub fn eccentricity(&self) -> Option<f64> {
        (self.z != 0.0).then(|| self.lrl.norm() / self.z.abs())
    }

    /// Perihelion distance of a scattering orbit (E > 0, or free motion).
    pub fn perihelion(&self) -> Result<f64, KeplerError> {
        if self.z == 0.0 {
            if self.energy <= 0.0 {
                return Err(KeplerError::BoundOrbit { energy: self.energy });
            }
            // Straight line: closest approach = |L| / v.
            return Ok(self.ang_mom.norm() / (2.0 * self.energy).sqrt());
        }
        if self.energy <= 0.0 {
            return Err(KeplerError::BoundOrbit { energy: self.energy });
        }
        let sigma = self.z.signum();
        let a_mag = self.z.abs() / (2.0 * self.energy);
        let e = self.lrl.norm() / self.z.abs();
        Ok(a_mag * (e - sigma))
    }
}

/// Limiting momentum of the orbit with these elements, for t → -∞
/// (`Incoming`) or t → +∞ (`Outgoing`).
///
/// Derivation: as t → ±∞ the position direction tends to ±p̂^±, so the
/// Runge-Lenz limit gives A·p̂^± = ∓z; the asymptote directions in the plane
/// spanned by Â and B̂ = L̂ × Â are the polar angles ±θ_∞ with
/// cos θ_∞ = -z/|A|, traversed in the direction of increasing angle.
pub fn kepler_asymptotic_momentum(
    elements: &KeplerElements,
    branch: Branch,
) -> Result<Vec3, KeplerError> {
    if elements.z != 0.0 && elements.energy <= 0.0 {
        return Err(KeplerError::BoundOrbit { energy: elements.energy });
    }
    if elements.z == 0.0 && elements.energy <= 0.0 {
        return Err(KeplerError::BoundOrbit { energy: elements.energy });
    }
    let l_norm = elements.ang_mom.norm();
    let a_norm = elements.lrl.norm();
    if l_norm == 0.0 || a_norm == 0.0 {
        return Err(KeplerError::CollisionLine);
    }
    let v = (2.0 * elements.energy).sqrt();
    let a_hat = elements.lrl / a_norm;
    let b_hat = elements.ang_mom.cross(&a_hat) / l_norm;
    let cos_th = (-elements.z / a_norm).clamp(-1.0, 1.0);
    let sin_th = (1.0 - cos_th * cos_th).max(0.0).sqrt();
    // Position asymptotes sit at polar angles ±θ_∞ from Â (motion sweeps
    // the angle upward); the momentum limits are v·r̂(+θ_∞) outgoing and
    // -v·r̂(-θ_∞) incoming.
    let dir = match branch {
        Branch::Outgoing => cos_th * a_hat + sin_th * b_hat,
        Branch::Incoming => -cos_th * a_hat + sin_th * b_hat,
    };
    Ok(v * dir)
}

/// Exact flow image of `state` after physical time `dt` under H_∞ with
/// strength `z`.
pub fn kepler_propagate(state: &PhaseState, z: f64, dt: f64) -> Result<PhaseState, KeplerError> {
    if dt == 0.0 {
        return Ok(*state);
    }
    let r0 = state.q.norm();
    if r0 == 0.0 {
        return Err(KeplerError::AtOrigin);
    }
    if z == 0.0 {
        return Ok(PhaseState::new(state.q + dt * state.p, state.p, state.t + dt));
    }
    let energy = 0.5 * state.p.norm_squared() - z / r0;
    if energy == 0.0 {
        return Err(KeplerError::Parabolic);
    }
    let k = z.abs();
    let sigma = z.signum();
    let rv = state.q.dot(&state.p); // r · dr/dt

    let (f, g, fdot, gdot) = if energy > 0.0 {
        hyperbolic_fg(r0, rv, energy, k, sigma, dt)?
    } else {
        elliptic_fg(r0, rv, energy, k, dt)?
    };

    let q1 = f * state.q + g * state.p;
    let p1 = fdot * state.q + gdot * state.p;
    Ok(PhaseState::new(q1, p1, state.t + dt))
}

/// Lagrange coefficients for E > 0 via the incremental hyperbolic anomaly.
///
/// With es = e sinh H₀ = rv/√(k|a|) and ec = e cosh H₀ = r₀/|a| + σ, the
/// residual F(ΔH) = es (cosh ΔH - 1) + ec sinh ΔH - σ ΔH - n dt has
/// derivative r₁/|a| > 0.
fn hyperbolic_fg(
    r0: f64,
    rv: f64,
    energy: f64,
    k: f64,
    sigma: f64,
    dt: f64,
) -> Result<(f64, f64, f64, f64), KeplerError> {
    let a_mag = k / (2.0 * energy);
    let n = (k / a_mag.powi(3)).sqrt();
    let es = rv / (k * a_mag).sqrt();
    let ec = r0 / a_mag + sigma;
    let m = n * dt;

    let res = |dh: f64| es * (dh.cosh() - 1.0) + ec * dh.sinh() - sigma * dh - m;
    let dres = |dh: f64| es * dh.sinh() + ec * dh.cosh() - sigma;

    // The anomaly difference is logarithmic in the mean anomaly: for
    // ΔH → ±∞ the residual grows like (e e^{±H₀}/2)·e^{|ΔH|}, with
    // e e^{H₀} = ec + es and e e^{-H₀} = ec - es (both positive).
    let coeff = if m >= 0.0 { ec + es } else { ec - es };
    let guess = m.signum() * (m.abs() / coeff.max(1e-12)).asinh();
    let dh = solve_monotone(res, dres, guess, 1e-13_f64.max(SOLVE_TOL * m.abs()))?;

    let r1 = a_mag * (es * dh.sinh() + ec * dh.cosh() - sigma);
    let f = 1.0 - sigma * (a_mag / r0) * (dh.cosh() - 1.0);
    let g = dt - sigma * (dh.sinh() - dh) / n;
    let fdot = -sigma * (k * a_mag).sqrt() * dh.sinh() / (r0 * r1);
    let gdot = 1.0 - sigma * (a_mag / r1) * (dh.cosh() - 1.0);
    Ok((f, g, fdot, gdot))
}

/// Lagrange coefficients for E < 0 (attractive only) via the incremental
/// eccentric anomaly. F(ΔE) = ΔE + es (1 - cos ΔE) - (1 - r₀/a) sin ΔE - n dt
/// has derivative r₁/a > 0; multi-revolution spans need no reduction.
fn elliptic_fg(
    r0: f64,
    rv: f64,
    energy: f64,
    k: f64,
    dt: f64,
) -> Result<(f64, f64, f64, f64), KeplerError> {
    let a = k / (-2.0 * energy);
    let n = (k / a.powi(3)).sqrt();
    let es = rv / (k * a).sqrt();
    let ec = 1.0 - r0 / a; // e cos E₀
    let m = n * dt;

    let res = |de: f64| de + es * (1.0 - de.cos()) - ec * de.sin() - m;
    let dres = |de: f64| 1.0 + es * de.sin() - ec * de.cos();

    let de = solve_monotone(res, dres, m, 1e-13_f64.max(SOLVE_TOL * m.abs()))?;

    let r1 = a * (1.0 + es * de.sin() - ec * de.cos());
    let f = 1.0 - (a / r0) * (1.0 - de.cos());
    let g = dt - (de - de.sin()) / n;
    let fdot = -(k * a).sqrt() * de.sin() / (r0 * r1);
    let gdot = 1.0 - (a / r1) * (1.0 - de.cos());
    Ok((f, g, fdot, gdot))
}

/// Bracketed Newton for a strictly increasing residual; falls back to
/// bisection when Newton stalls or leaves the bracket.
///
/// The hyperbolic residual overflows to NaN deep in its tails; since the
/// function is increasing, a non-finite value right of a finite negative one
/// acts as +∞ (and mirrored), so overflow only tightens the bracket.
fn solve_monotone(
    res: impl Fn(f64) -> f64,
    dres: impl Fn(f64) -> f64,
    guess: f64,
    tol: f64,
) -> Result<f64, KeplerError> {
    // Finite anchor: walk the guess toward 0, where both residuals are tame.
    let mut x0 = if guess.is_finite() { guess } else { 0.0 };
    let mut f0 = res(x0);
    let mut tries = 0;
    while !f0.is_finite() {
        x0 = if x0.abs() < 1e-150 { 0.0 } else { 0.5 * x0 };
        f0 = res(x0);
        tries += 1;
        if tries > 600 || (x0 == 0.0 && !f0.is_finite()) {
            return Err(KeplerError::NoConvergence);
        }
    }
    if f0.abs() <= tol {
        return Ok(x0);
    }

    // Expand toward the root (above x0 iff the residual there is negative).
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = 0.5f64.max(0.05 * x0.abs());
    let mut near = x0;
    let mut f_near = f0;
    let far;
    let f_far;
    let mut expand = 0;
    loop {
        let b = near + dir * step;
        let mut fb = res(b);
        if !fb.is_finite() {
            fb = dir * f64::INFINITY;
        }
        if (fb > 0.0) != (f_near > 0.0) {
            far = b;
            f_far = fb;
            break;
        }
        near = b;
        f_near = fb;
        step *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(KeplerError::NoConvergence);
        }
    }
    let (mut lo, mut flo, mut hi, mut fhi) = if dir > 0.0 {
        (near, f_near, far, f_far)
    } else {
        (far, f_far, near, f_near)
    };
    debug_assert!(flo <= 0.0 && fhi >= 0.0);
    let _ = (&mut flo, &mut fhi);

    let mut x = 0.5 * (lo + hi);
    for iter in 0..NEWTON_MAX_ITER + BISECT_MAX_ITER {
        let mut fx = res(x);
        if !fx.is_finite() {
            // Overflow inside the bracket sits on the far tail side.
            fx = if x - lo > hi - x { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        if fx.abs() <= tol || (hi - lo) <= f64::EPSILON * (1.0 + x.abs()) {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dres(x);
        let newton = if iter < NEWTON_MAX_ITER && fx.is_finite() && d > 0.0 {
            x - fx / d
        } else {
            f64::NAN
        };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Total physical time the orbit with these elements spends in the ball
/// {|q| ≤ R}, in closed form via the anomaly values of the two sphere
/// crossings. Requires a scattering orbit (E > 0, or free motion).
///
/// `state_on_orbit` pins the orbit the elements were measured on; it is
/// checked for consistency with `elements` and otherwise unused (the value
/// depends only on the conserved elements).
pub fn kepler_time_in_ball(
    elements: &KeplerElements,
    state_on_orbit: &PhaseState,
    radius: f64,
) -> Result<f64, KeplerError> {
    let r = state_on_orbit.q.norm();
    if r == 0.0 {
        return Err(KeplerError::AtOrigin);
    }
    let e_state = 0.5 * state_on_orbit.p.norm_squared() - elements.z / r;
    if (e_state - elements.energy).abs() > 1e-6 * (1.0 + elements.energy.abs()) {
        return Err(KeplerError::InconsistentState);
    }

    if elements.z == 0.0 {
        if elements.energy <= 0.0 {
            return Err(KeplerError::BoundOrbit { energy: elements.energy });
        }
        let v = (2.0 * elements.energy).sqrt();
        let b = elements.ang_mom.norm() / v;
        if radius < b {
            return Err(KeplerError::BallNotReached { r: radius, r_peri: b });
        }
        return Ok(2.0 * (radius * radius - b * b).sqrt() / v);
    }
    if elements.energy == 0.0 {
        return Err(KeplerError::Parabolic);
    }
    if elements.energy < 0.0 {
        return Err(KeplerError::BoundOrbit { energy: elements.energy });
    }

    let k = elements.z.abs();
    let sigma = elements.z.signum();
    let a_mag = k / (2.0 * elements.energy);
    let e = elements.lrl.norm() / k;
    let n = (k / a_mag.powi(3)).sqrt();
    let r_peri = a_mag * (e - sigma);
    // cosh H_R = (R/|a| + σ)/e; arg < 1 means the sphere lies inside perihelion.
    let arg = (radius / a_mag + sigma) / e;
    if arg < 1.0 {
        return Err(KeplerError::BallNotReached { r: radius, r_peri });
    }
    let h_r = arg.acosh();
    Ok(2.0 / n * (e * h_r.sinh() - sigma * h_r))
}

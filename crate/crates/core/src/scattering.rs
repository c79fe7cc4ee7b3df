//! Orbit classification and scattering data extraction: asymptotic momenta
//! p± and the time delay τ, with controlled extrapolation over a geometric
//! ladder of handoff radii and explicit convergence diagnostics.
//!
//! The extraction realizes the comparison-with-Kepler definitions: at a
//! handoff radius R the true state is matched to the reference field of
//! strength Z_∞, whose asymptote and time-in-ball are known in closed form.
//! The residual multipole field beyond the monopole decays like R⁻², so
//! ladder estimates converge geometrically and an Aitken Δ² extrapolation of
//! the last three rungs removes the leading error term.

use crate::integrator::{
    propagate, IntegrateError, IntegratorSettings, Outcome, Propagator, StopCondition, Trajectory,
};
use crate::kepler::{
    elements_from_state, kepler_asymptotic_momentum, kepler_time_in_ball, Branch, KeplerError,
};
use crate::model::{hamiltonian, CentreConfig, EvalError, PhaseState, Vec3};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScatterError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Kepler(#[from] KeplerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trajectory did not escape in the requested direction")]
    NotEscaped,
    #[error("no ladder handoff data above radius {0}")]
    NoLadderData(f64),
    #[error("scattering record inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitClass {
    Scattering,
    BoundedCandidate,
    TrappedCandidate,
    Collision,
    Undetermined,
}

impl OrbitClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            OrbitClass::Scattering => "scattering",
            OrbitClass::BoundedCandidate => "bounded",
            OrbitClass::TrappedCandidate => "trapped",
            OrbitClass::Collision => "collision",
            OrbitClass::Undetermined => "undetermined",
        }
    }
}

/// Extraction tolerances on top of the integrator settings.
#[derive(Debug, Clone)]
pub struct ScatterSettings {
    pub integrator: IntegratorSettings,
    /// Ladder convergence tolerance on p±, relative to |p|.
    pub tol_p: f64,
    /// Ladder convergence tolerance on τ (absolute).
    pub tol_tau: f64,
    /// Energy-shell consistency tolerance, relative.
    pub tol_e: f64,
}

impl ScatterSettings {
    pub fn for_config(config: &CentreConfig) -> Self {
        ScatterSettings {
            integrator: IntegratorSettings::for_config(config),
            tol_p: 1e-8,
            tol_tau: 1e-6,
            tol_e: 1e-6,
        }
    }
}

/// Scattering data of one phase point. Classification is budget-relative:
/// `BoundedCandidate`/`TrappedCandidate`/`Undetermined` say what the budgets
/// allowed to be decided, never more.
#[derive(Debug, Clone)]
pub struct ScatteringRecord {
    pub orbit_class: OrbitClass,
    pub p_minus: Option<Vec3>,
    pub p_plus: Option<Vec3>,
    /// Last ladder difference of the accepted p± estimates.
    pub p_residual: Option<f64>,
    pub tau: Option<f64>,
    pub tau_converged: bool,
    pub tau_residual: Option<f64>,
    /// Close-approach symbols in physical time order (0-based indices).
    pub itinerary: Vec<usize>,
    pub handoff_radius_used: f64,
    /// H(x).
    pub energy: f64,
    pub x: PhaseState,
}

impl ScatteringRecord {
    /// Itinerary rendered 1-based and dash-joined ("", "1", "1-2-1", ...).
    pub fn itinerary_string(&self) -> String {
        self.itinerary
            .iter()
            .map(|k| (k + 1).to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// One-direction propagation status after the classification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunStatus {
    Escaped,
    StayedInside,
    Excursing,
    Collided,
}

fn run_status(traj: &Trajectory, config: &CentreConfig) -> RunStatus {
    match traj.outcome {
        Some(Outcome::Escaped) => RunStatus::Escaped,
        Some(Outcome::Collision { .. }) => RunStatus::Collided,
        _ => {
            if traj.max_radius <= 2.0 * config.length_scale() {
                RunStatus::StayedInside
            } else {
                RunStatus::Excursing
            }
        }
    }
}

/// Propagates forward and backward up to budgets and classifies the orbit.
/// Returns the class and both trajectories (the backward one propagates the
/// momentum-flipped state forward; its times run away from x.t).
pub fn classify_orbit(
    x: &PhaseState,
    config: &CentreConfig,
    settings: &ScatterSettings,
) -> Result<(OrbitClass, Trajectory, Trajectory), ScatterError> {
    let fwd = propagate(*x, config, &settings.integrator, StopCondition::Escape)?;
    let bwd = propagate(x.reversed(), config, &settings.integrator, StopCondition::Escape)?;
    let class = classify_from_status(
        run_status(&fwd, config),
        run_status(&bwd, config),
    );
    Ok((class, fwd, bwd))
}

fn classify_from_status(f: RunStatus, b: RunStatus) -> OrbitClass {
    use RunStatus::*;
    match (f, b) {
        (Collided, _) | (_, Collided) => OrbitClass::Collision,
        (Escaped, Escaped) => OrbitClass::Scattering,
        (Escaped, StayedInside) | (StayedInside, Escaped) => OrbitClass::TrappedCandidate,
        (StayedInside, StayedInside) => OrbitClass::BoundedCandidate,
        _ => OrbitClass::Undetermined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// The forward trajectory; extracts p⁺.
    Forward,
    /// The trajectory of the momentum-flipped state; extracts p⁻.
    Backward,
}

/// Handoff ladder of a trajectory: the recorded outward crossing states of
/// the radii r_escape·2^j, restricted to rungs safely outside the start
/// radius, in ascending order. States come back shifted to the scattering
/// centre, the frame of every reference-Kepler comparison.
fn ladder_states(
    traj: &Trajectory,
    config: &CentreConfig,
    settings: &IntegratorSettings,
) -> Vec<(f64, PhaseState)> {
    let centre = config.scattering_centre();
    let r0 = (traj.initial.q - centre).norm();
    let mut out = Vec::new();
    for j in 0..=settings.ladder_max_rung {
        let radius = settings.r_escape * f64::powi(2.0, j as i32);
        if radius < 1.02 * r0 {
            continue;
        }
        if let Some(t) = traj.last_exit_time(radius) {
            if let Some(s) = traj.state_at(t) {
                out.push((radius, PhaseState::new(s.q - centre, s.p, s.t)));
            }
        }
    }
    out
}

/// Aitken Δ² extrapolation of the last three ladder values; falls back to
/// the last value when the denominator degenerates.
fn aitken(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 3 {
        return values[n - 1];
    }
    let (y0, y1, y2) = (values[n - 3], values[n - 2], values[n - 1]);
    let d1 = y1 - y0;
    let d2 = y2 - y1;
    let den = d2 - d1;
    if den.abs() <= 1e-3 * d2.abs().max(d1.abs()) || den == 0.0 {
        return y2;
    }
    y2 - d2 * d2 / den
}

/// Asymptotic momentum of an escaped trajectory from its handoff ladder.
///
/// Walks the recorded handoff states, matches each to the reference Kepler
/// field of strength Z_∞, and accepts at the first rung whose estimate moved
/// less than `tol_p · |p|` from the previous one; the returned value is the
/// Aitken-extrapolated estimate and the residual is that last difference.
pub fn asymptotic_momentum(
    traj: &Trajectory,
    config: &CentreConfig,
    settings: &ScatterSettings,
    direction: Direction,
) -> Result<(Vec3, f64, f64, PhaseState), ScatterError> {
    if traj.outcome != Some(Outcome::Escaped)
        && traj.outcome != Some(Outcome::ReachedRadius)
    {
        return Err(ScatterError::NotEscaped);
    }
    let ladder = ladder_states(traj, config, &settings.integrator);
    if ladder.is_empty() {
        return Err(ScatterError::NoLadderData(settings.integrator.r_escape));
    }
    let mut estimates: Vec<Vec3> = Vec::new();
    let mut radii: Vec<f64> = Vec::new();
    let mut states: Vec<PhaseState> = Vec::new();
    for (radius, state) in &ladder {
        let el = elements_from_state(state, config.z_total())?;
        let p_out = kepler_asymptotic_momentum(&el, Branch::Outgoing)?;
        let est = match direction {
            Direction::Forward => p_out,
            // The flipped orbit's outgoing limit is -p⁻ of the true orbit.
            Direction::Backward => -p_out,
        };
        estimates.push(est);
        radii.push(*radius);
        states.push(*state);
        let n = estimates.len();
        if n >= 2 {
            let diff = (estimates[n - 1] - estimates[n - 2]).norm();
            let scale = estimates[n - 1].norm().max(1e-12);
            if diff < settings.tol_p * scale {
                let value = Vec3::new(
                    aitken(&estimates.iter().map(|v| v.x).collect::<Vec<_>>()),
                    aitken(&estimates.iter().map(|v| v.y).collect::<Vec<_>>()),
                    aitken(&estimates.iter().map(|v| v.z).collect::<Vec<_>>()),
                );
                return Ok((value, diff, radii[n - 1], states[n - 1]));
            }
        }
    }
    Err(ScatterError::NoLadderData(*radii.last().unwrap_or(&0.0)))
}

#[derive(Debug, Clone, Copy)]
pub struct TauEstimate {
    pub tau: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Time delay over the handoff ladder.
///
/// For each rung R: T_R(orbit) is the physical time between the last entry
/// and final exit of {|q| ≤ R}, read off the two trajectories; T_R(Kepler)
/// is the symmetric half/half combination of the closed-form times-in-ball
/// of the incoming- and outgoing-matched reference orbits. The returned τ is
/// the Aitken-extrapolated limit of the difference.
pub fn time_delay(
    x: &PhaseState,
    fwd: &Trajectory,
    bwd: &Trajectory,
    handoff_out: &PhaseState,
    handoff_in: &PhaseState,
    config: &CentreConfig,
    settings: &ScatterSettings,
) -> Result<TauEstimate, ScatterError> {
    let el_out = elements_from_state(handoff_out, config.z_total())?;
    let el_in = elements_from_state(handoff_in, config.z_total())?;

    let fwd_ladder = ladder_states(fwd, config, &settings.integrator);
    let bwd_ladder = ladder_states(bwd, config, &settings.integrator);

    let mut taus: Vec<f64> = Vec::new();
    let mut last_diff = f64::INFINITY;
    for (radius, s_fwd) in &fwd_ladder {
        let Some((_, s_bwd)) = bwd_ladder
            .iter()
            .find(|(r, _)| (r - radius).abs() < 1e-9 * radius)
        else {
            continue;
        };
        let t_orbit = (s_fwd.t - x.t) + (s_bwd.t - x.t);
        let t_kepler = 0.5 * kepler_time_in_ball(&el_in, handoff_in, *radius)?
            + 0.5 * kepler_time_in_ball(&el_out, handoff_out, *radius)?;
        taus.push(t_orbit - t_kepler);
        let n = taus.len();
        if n >= 2 {
            last_diff = (taus[n - 1] - taus[n - 2]).abs();
            if last_diff < settings.tol_tau {
                return Ok(TauEstimate { tau: aitken(&taus), residual: last_diff, converged: true });
            }
        }
    }
    match taus.last() {
        Some(&t) => Ok(TauEstimate { tau: t, residual: last_diff, converged: false }),
        None => Err(ScatterError::NoLadderData(settings.integrator.r_escape)),
    }
}

/// Full scattering record of one phase point: classification, p±, τ and the
/// itinerary, with all record invariants enforced.
pub fn scattering_record(
    x: &PhaseState,
    config: &CentreConfig,
    settings: &ScatterSettings,
) -> Result<ScatteringRecord, ScatterError> {
    let energy = hamiltonian(x, config)?;
    let mut fwd_prop = Propagator::new(*x, config, settings.integrator.clone())?;
    let fwd_out = fwd_prop.run(StopCondition::Escape)?;
    let mut bwd_prop = Propagator::new(x.reversed(), config, settings.integrator.clone())?;
    let bwd_out = bwd_prop.run(StopCondition::Escape)?;
    let _ = (fwd_out, bwd_out);

    let class = classify_from_status(
        run_status(fwd_prop.trajectory(), config),
        run_status(bwd_prop.trajectory(), config),
    );

    let itinerary = combined_itinerary(bwd_prop.trajectory(), fwd_prop.trajectory());

    if class != OrbitClass::Scattering {
        return Ok(ScatteringRecord {
            orbit_class: class,
            p_minus: None,
            p_plus: None,
            p_residual: None,
            tau: None,
            tau_converged: false,
            tau_residual: None,
            itinerary,
            handoff_radius_used: 0.0,
            energy,
            x: *x,
        });
    }

    // Rung-by-rung extension of both directions until p± and τ converge.
    let v_inf = (2.0 * energy.abs()).sqrt().max(1e-6);
    let mut p_plus = None;
    let mut p_minus = None;
    let mut p_residual: Option<f64> = None;
    let mut handoff_out: Option<PhaseState> = None;
    let mut handoff_in: Option<PhaseState> = None;
    let mut handoff_radius = 0.0_f64;
    let mut tau_est: Option<TauEstimate> = None;

    for rung in 1..=settings.integrator.ladder_max_rung {
        let radius = settings.integrator.r_escape * f64::powi(2.0, rung as i32);
        let extra_time = 4.0 * radius / v_inf;
        fwd_prop.extend_time_budget(extra_time);
        bwd_prop.extend_time_budget(extra_time);
        fwd_prop.run(StopCondition::Radius(radius))?;
        bwd_prop.run(StopCondition::Radius(radius))?;

        if p_plus.is_none() {
            if let (Ok(fw), Ok(bw)) = (
                asymptotic_momentum(fwd_prop.trajectory(), config, settings, Direction::Forward),
                asymptotic_momentum(bwd_prop.trajectory(), config, settings, Direction::Backward),
            ) {
                p_plus = Some(fw.0);
                p_minus = Some(bw.0);
                p_residual = Some(fw.1.max(bw.1));
                handoff_radius = fw.2.max(bw.2);
                handoff_out = Some(fw.3);
                handoff_in = Some(bw.3);
            }
        }
        if let (Some(ho), Some(hi)) = (&handoff_out, &handoff_in) {
            let est = time_delay(
                x,
                fwd_prop.trajectory(),
                bwd_prop.trajectory(),
                ho,
                hi,
                config,
                settings,
            )?;
            tau_est = Some(est);
            if est.converged {
                break;
            }
        }
    }

    // Non-convergent momenta demote the record: the classification was
    // budget-relative and the data does not support scattering values.
    let (orbit_class, tau, tau_converged, tau_residual) = match (&p_plus, &tau_est) {
        (None, _) => (OrbitClass::Undetermined, None, false, None),
        (Some(_), Some(est)) if est.converged => {
            (OrbitClass::Scattering, Some(est.tau), true, Some(est.residual))
        }
        (Some(_), Some(est)) => (OrbitClass::Scattering, None, false, Some(est.residual)),
        (Some(_), None) => (OrbitClass::Scattering, None, false, None),
    };

    // Energy-shell invariant |p±|² = 2 H(x) within tol_e.
    let mut record = ScatteringRecord {
        orbit_class,
        p_minus,
        p_plus,
        p_residual,
        tau,
        tau_converged,
        tau_residual,
        itinerary,
        handoff_radius_used: handoff_radius,
        energy,
        x: *x,
    };
    if record.orbit_class == OrbitClass::Scattering {
        let shell_ok = [record.p_plus, record.p_minus].iter().all(|p| match p {
            Some(p) => {
                (p.norm_squared() - 2.0 * energy).abs() <= settings.tol_e * (2.0 * energy.abs()).max(1e-12)
            }
            None => false,
        });
        if !shell_ok {
            record.orbit_class = OrbitClass::Undetermined;
            record.p_plus = None;
            record.p_minus = None;
            record.tau = None;
            record.tau_converged = false;
        }
    }
    debug_assert!(record.tau.is_none() || (record.p_plus.is_some() && record.p_minus.is_some()));
    Ok(record)
}

/// Physical-time-ordered itinerary: backward symbols reversed, then forward
/// symbols, consecutive duplicates collapsed across the junction.
fn combined_itinerary(bwd: &Trajectory, fwd: &Trajectory) -> Vec<usize> {
    let mut symbols: Vec<usize> = bwd.close_approach_symbols();
    symbols.reverse();
    for s in fwd.close_approach_symbols() {
        if symbols.last() != Some(&s) {
            symbols.push(s);
        }
    }
    symbols
}

/// CSV header for scattering-map exports: beam parameters first, then the
/// record columns.
pub fn scattering_csv_header(dim: usize, param_names: &[&str]) -> String {
    let mut cols: Vec<String> = param_names.iter().map(|s| s.to_string()).collect();
    cols.push("class".into());
    for i in 1..=dim {
        cols.push(format!("pm{i}"));
    }
    for i in 1..=dim {
        cols.push(format!("pp{i}"));
    }
    cols.push("tau".into());
    cols.push("tau_resid".into());
    cols.push("itinerary".into());
    cols.join(",")
}

/// One CSV row of a scattering map; absent values render as `nan`.
pub fn scattering_csv_row(record: &ScatteringRecord, dim: usize, params: &[f64]) -> String {
    let f = crate::util::fmt_f64;
    let mut cols: Vec<String> = params.iter().map(|v| f(*v)).collect();
    cols.push(record.orbit_class.as_str().to_string());
    for vec in [record.p_minus, record.p_plus] {
        for i in 0..dim {
            cols.push(match vec {
                Some(v) => f(v[i]),
                None => "nan".to_string(),
            });
        }
    }
    cols.push(record.tau.map(f).unwrap_or_else(|| "nan".into()));
    cols.push(record.tau_residual.map(f).unwrap_or_else(|| "nan".into()));
    cols.push(record.itinerary_string());
    cols.join(",")
}

/// Writes a scattering map as CSV.
pub fn write_scattering_csv<W: Write>(
    w: &mut W,
    dim: usize,
    param_names: &[&str],
    rows: &[(Vec<f64>, ScatteringRecord)],
) -> io::Result<()> {
    writeln!(w, "{}", scattering_csv_header(dim, param_names))?;
    for (params, record) in rows {
        writeln!(w, "{}", scattering_csv_row(record, dim, params))?;
    }
    Ok(())
}

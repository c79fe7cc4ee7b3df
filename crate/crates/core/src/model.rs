//! The physical system: fixed Coulomb/Kepler centres, phase-space points, and
//! evaluation of potential, force and energy.
//!
//! Everything is expressed in natural units: unit particle mass, gravitational
//! constant absorbed into the strengths `Z_k` (units length³/time²). Positions
//! are stored as 3-vectors; planar systems live in the z = 0 plane.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Relative tolerance of the collinearity predicate, scaled by the
/// configuration diameter.
pub const EPS_GEOM_REL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("dim must be 2 or 3, got {0}")]
    BadDim(usize),
    #[error("centres list is empty")]
    NoCentres,
    #[error("centres ({0}) and strengths ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("centre {idx} has {got} coordinates, expected {expected}")]
    BadCoordinates { idx: usize, got: usize, expected: usize },
    #[error("strength Z[{0}] must be nonzero")]
    ZeroStrength(usize),
    #[error("duplicate centres {0} and {1}")]
    DuplicateCentres(usize, usize),
    #[error("gevrey parameters: {0}")]
    Gevrey(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("evaluation at centre {k}")]
    AtCentre { k: usize },
    #[error("evaluation at the origin of the reference Kepler field")]
    AtOrigin,
}

/// A validated configuration of fixed centres.
///
/// Immutable after construction; all evaluation routines are pure functions of
/// `(q, config)`, safe for unrestricted parallel use.
#[derive(Debug, Clone)]
pub struct CentreConfig {
    dim: usize,
    centres: Vec<Vec3>,
    strengths: Vec<f64>,
    z_total: f64,
    collinear: bool,
    axis: Option<Vec3>,
    warnings: Vec<String>,
}

impl CentreConfig {
    /// Validates raw centre/strength lists and derives `Z_∞`, the collinearity
    /// flag, and (for collinear configurations of at least two centres) the
    /// line direction.
    ///
    /// Configurations outside the high-energy integrability hypotheses
    /// (non-attracting centres in the plane, collinear spatial configurations)
    /// are accepted with a warning: simulation remains meaningful there.
    pub fn new(dim: usize, centres: Vec<Vec3>, strengths: Vec<f64>) -> Result<Self, ConfigError> {
        if dim != 2 && dim != 3 {
            return Err(ConfigError::BadDim(dim));
        }
        if centres.is_empty() {
            return Err(ConfigError::NoCentres);
        }
        if centres.len() != strengths.len() {
            return Err(ConfigError::LengthMismatch(centres.len(), strengths.len()));
        }
        for (k, z) in strengths.iter().enumerate() {
            if *z == 0.0 || !z.is_finite() {
                return Err(ConfigError::ZeroStrength(k));
            }
        }
        let diameter = centres
            .iter()
            .enumerate()
            .flat_map(|(k, a)| centres.iter().skip(k + 1).map(move |b| (a - b).norm()))
            .fold(0.0f64, f64::max);
        let eps_geom = EPS_GEOM_REL * diameter;
        for k in 0..centres.len() {
            for l in k + 1..centres.len() {
                if (centres[k] - centres[l]).norm() <= eps_geom {
                    return Err(ConfigError::DuplicateCentres(k, l));
                }
            }
        }

        // Collinearity: all centres within eps_geom of the line through the
        // most distant pair.
        let (collinear, axis) = if centres.len() == 1 {
            (true, None)
        } else {
            let (mut ki, mut kj, mut best) = (0, 1, 0.0f64);
            for k in 0..centres.len() {
                for l in k + 1..centres.len() {
                    let d = (centres[k] - centres[l]).norm();
                    if d > best {
                        (ki, kj, best) = (k, l, d);
                    }
                }
            }
            let dir = (centres[kj] - centres[ki]).normalize();
            let coll = centres
                .iter()
                .all(|s| (s - centres[ki]).cross(&dir).norm() <= eps_geom);
            (coll, coll.then_some(dir))
        };

        // z_total summed exactly in declaration order.
        let z_total = strengths.iter().sum();

        let mut warnings = Vec::new();
        if dim == 2 && strengths.iter().any(|z| *z <= 0.0) {
            warnings.push("planar config with non-attracting centres is outside the high-energy integrability hypotheses".to_string());
        }
        if dim == 3 && collinear && centres.len() >= 2 {
            warnings.push(
                "collinear 3D config outside Theorem 1 hypotheses; axial angular momentum is an extra invariant".to_string(),
            );
        }

        Ok(CentreConfig { dim, centres, strengths, z_total, collinear, axis, warnings })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_centres(&self) -> usize {
        self.centres.len()
    }

    pub fn centres(&self) -> &[Vec3] {
        &self.centres
    }

    pub fn strengths(&self) -> &[f64] {
        &self.strengths
    }

    /// Z_∞ = Σ Z_k, the strength of the reference Kepler field.
    pub fn z_total(&self) -> f64 {
        self.z_total
    }

    pub fn collinear(&self) -> bool {
        self.collinear
    }

    /// Unit direction of the common line, present iff the configuration is
    /// collinear with at least two centres.
    pub fn axis(&self) -> Option<Vec3> {
        self.axis
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Largest inter-centre distance (0 for a single centre).
    pub fn diameter(&self) -> f64 {
        self.centres
            .iter()
            .enumerate()
            .flat_map(|(k, a)| self.centres.iter().skip(k + 1).map(move |b| (a - b).norm()))
            .fold(0.0f64, f64::max)
    }

    /// Smallest inter-centre distance; `None` for a single centre.
    pub fn min_separation(&self) -> Option<f64> {
        let mut best = f64::INFINITY;
        for k in 0..self.centres.len() {
            for l in k + 1..self.centres.len() {
                best = best.min((self.centres[k] - self.centres[l]).norm());
            }
        }
        best.is_finite().then_some(best)
    }

    /// Characteristic length: the diameter, or 1 when it degenerates (n = 1).
    pub fn length_scale(&self) -> f64 {
        let d = self.diameter();
        if d > 0.0 {
            d
        } else {
            1.0
        }
    }

    /// Scale separating "record a close approach" from "switch to regularized
    /// coordinates": min separation when it exists, else the length scale.
    pub fn separation_scale(&self) -> f64 {
        self.min_separation().unwrap_or_else(|| self.length_scale())
    }

    pub fn centroid(&self) -> Vec3 {
        self.centres.iter().sum::<Vec3>() / self.centres.len() as f64
    }

    /// Anchor point of escape spheres and reference-Kepler comparisons: the
    /// strength-weighted centroid, which cancels the dipole term of the far
    /// field so ladder estimates converge at quadrupole order. Falls back to
    /// the geometric centroid when Z_∞ is small enough that the weighted
    /// point degenerates.
    pub fn scattering_centre(&self) -> Vec3 {
        let centroid = self.centroid();
        if self.z_total.abs() < 1e-12 {
            return centroid;
        }
        let weighted = self
            .centres
            .iter()
            .zip(&self.strengths)
            .map(|(s, z)| *z * s)
            .sum::<Vec3>()
            / self.z_total;
        if (weighted - centroid).norm() <= 2.0 * self.length_scale() {
            weighted
        } else {
            centroid
        }
    }

    /// Index of the nearest centre and the distance to it.
    pub fn nearest_centre(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, s) in self.centres.iter().enumerate() {
            let d = (q - s).norm();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

/// A point of the phase space, tagged with physical time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub q: Vec3,
    pub p: Vec3,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Vec3, p: Vec3, t: f64) -> Self {
        PhaseState { q, p, t }
    }

    /// Planar state, embedded in z = 0.
    pub fn planar(qx: f64, qy: f64, px: f64, py: f64) -> Self {
        PhaseState::new(Vec3::new(qx, qy, 0.0), Vec3::new(px, py, 0.0), 0.0)
    }

    /// Momentum-flipped state (q, -p); propagating it forward traces the
    /// original orbit backward in time.
    pub fn reversed(&self) -> Self {
        PhaseState { q: self.q, p: -self.p, t: self.t }
    }
}

/// V(q) = -Σ_k Z_k / |q - s_k|.
pub fn potential(q: &Vec3, config: &CentreConfig) -> Result<f64, EvalError> {
    let mut v = 0.0;
    for (k, (s, z)) in config.centres.iter().zip(&config.strengths).enumerate() {
        let d = (q - s).norm();
        if d == 0.0 {
            return Err(EvalError::AtCentre { k });
        }
        v -= z / d;
    }
    Ok(v)
}

/// -∇V(q) = -Σ_k Z_k (q - s_k) / |q - s_k|³.
pub fn force(q: &Vec3, config: &CentreConfig) -> Result<Vec3, EvalError> {
    let mut f = Vec3::zeros();
    for (k, (s, z)) in config.centres.iter().zip(&config.strengths).enumerate() {
        let r = q - s;
        let d2 = r.norm_squared();
        if d2 == 0.0 {
            return Err(EvalError::AtCentre { k });
        }
        f -= z / (d2 * d2.sqrt()) * r;
    }
    Ok(f)
}

/// H(p, q) = p²/2 + V(q).
pub fn hamiltonian(state: &PhaseState, config: &CentreConfig) -> Result<f64, EvalError> {
    Ok(0.5 * state.p.norm_squared() + potential(&state.q, config)?)
}

/// Reference Kepler Hamiltonian H_∞(p, q) = p²/2 - z/|q|.
pub fn kepler_hamiltonian(state: &PhaseState, z: f64) -> Result<f64, EvalError> {
    let r = state.q.norm();
    if r == 0.0 {
        return Err(EvalError::AtOrigin);
    }
    Ok(0.5 * state.p.norm_squared() - z / r)
}

/// Angular momentum component about the common axis of a collinear
/// configuration; `None` when the configuration is not collinear or has a
/// single centre (where the full angular momentum is conserved anyway).
pub fn axial_angular_momentum(state: &PhaseState, config: &CentreConfig) -> Option<f64> {
    let axis = config.axis()?;
    let rel = state.q - config.centres()[0];
    Some(axis.dot(&rel.cross(&state.p)))
}

/// Separation constant of the two-centre problem, in configuration-invariant
/// form. With centres a, b of strengths Z_a, Z_b, half-separation c and axis
/// direction x̂ = (b - a)/|b - a|:
///
///   Ω = L_a · L_b + 2c (Z_a cos θ_a - Z_b cos θ_b),
///
/// where L_i is the angular momentum about centre i and cos θ_i the angle of
/// the particle as seen from centre i against x̂. Obtained by separating the
/// Hamiltonian in prolate elliptic coordinates and eliminating the energy;
/// the azimuthal term folds into L_a · L_b, so the same expression is valid
/// in the plane and in space. `None` unless the configuration has exactly
/// two centres.
pub fn euler_constant(state: &PhaseState, config: &CentreConfig) -> Option<f64> {
    if config.n_centres() != 2 {
        return None;
    }
    let a = config.centres()[0];
    let b = config.centres()[1];
    let (za, zb) = (config.strengths()[0], config.strengths()[1]);
    let sep = b - a;
    let c = 0.5 * sep.norm();
    let x_hat = sep / sep.norm();
    let ra = state.q - a;
    let rb = state.q - b;
    let la = ra.cross(&state.p);
    let lb = rb.cross(&state.p);
    let cos_a = x_hat.dot(&ra) / ra.norm();
    let cos_b = x_hat.dot(&rb) / rb.norm();
    Some(la.dot(&lb) + 2.0 * c * (za * cos_a - zb * cos_b))
}

/// Parameters of the damped scattering integrals: constant C > 0, smoothness
/// index g > 1, the energy band they are defined on, and the user-asserted
/// threshold energy below which convergence failures are to be expected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevreyParams {
    pub c_const: f64,
    pub g_index: f64,
    pub e_window: (f64, f64),
    pub e_threshold_assumed: f64,
}

impl GevreyParams {
    pub fn new(
        c_const: f64,
        g_index: f64,
        e_window: (f64, f64),
        e_threshold_assumed: f64,
    ) -> Result<Self, ConfigError> {
        if !(c_const > 0.0) {
            return Err(ConfigError::Gevrey(format!("C must be > 0, got {c_const}")));
        }
        if !(g_index > 1.0) {
            return Err(ConfigError::Gevrey(format!("g must be > 1, got {g_index}")));
        }
        if !(e_window.0 <= e_window.1) {
            return Err(ConfigError::Gevrey(format!(
                "energy window [{}, {}] is empty",
                e_window.0, e_window.1
            )));
        }
        if !(e_window.0 > e_threshold_assumed) {
            return Err(ConfigError::Gevrey(format!(
                "E1 = {} must exceed the assumed threshold energy {}",
                e_window.0, e_threshold_assumed
            )));
        }
        Ok(GevreyParams { c_const, g_index, e_window, e_threshold_assumed })
    }
}

impl Default for GevreyParams {
    /// Exploratory defaults C = 1, g = 2 on an effectively unbounded band.
    fn default() -> Self {
        GevreyParams {
            c_const: 1.0,
            g_index: 2.0,
            e_window: (1e-9, 1e18),
            e_threshold_assumed: 0.0,
        }
    }
}

/// On-disk configuration schema (JSON syntax).
///
/// ```json
/// { "dim": 2, "centres": [[x,y], ...], "strengths": [Z1, ...],
///   "gevrey": {"C": 1.0, "g": 2.0, "E1": 1.0, "E2": 20.0, "E_th": 0.0} }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub dim: usize,
    pub centres: Vec<Vec<f64>>,
    pub strengths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gevrey: Option<GevreySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GevreySection {
    #[serde(rename = "C")]
    pub c: f64,
    pub g: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "E_th", default)]
    pub e_th: f64,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Validates into a `CentreConfig` plus the (optional) Gevrey parameters.
    pub fn build(&self) -> Result<(CentreConfig, Option<GevreyParams>), ConfigError> {
        let mut centres = Vec::with_capacity(self.centres.len());
        for (idx, c) in self.centres.iter().enumerate() {
            if c.len() != self.dim {
                return Err(ConfigError::BadCoordinates {
                    idx,
                    got: c.len(),
                    expected: self.dim,
                });
            }
            let z = if self.dim == 3 { c[2] } else { 0.0 };
            centres.push(Vec3::new(c[0], c[1], z));
        }
        let config = CentreConfig::new(self.dim, centres, self.strengths.clone())?;
        let gevrey = match &self.gevrey {
            Some(s) => Some(GevreyParams::new(s.c, s.g, (s.e1, s.e2), s.e_th)?),
            None => None,
        };
        Ok((config, gevrey))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn single_centre() -> CentreConfig {
        CentreConfig::new(2, vec![Vec3::zeros()], vec![1.0]).unwrap()
    }

    fn two_centres() -> CentreConfig {
        CentreConfig::new(
            2,
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    /// Unit triangle used throughout: side 1, vertices (0,0), (1,0), (1/2, √3/2).
    pub(crate) fn unit_triangle() -> CentreConfig {
        CentreConfig::new(
            2,
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 0.75f64.sqrt(), 0.0),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn validates_single_centre() {
        let c = single_centre();
        assert_eq!(c.z_total(), 1.0);
        assert!(c.collinear());
        assert!(c.axis().is_none());
        assert!(c.warnings().is_empty());
        assert_eq!(c.length_scale(), 1.0);
    }

    #[test]
    fn collinear_3d_accepted_with_warning() {
        let c = CentreConfig::new(
            3,
            vec![
                Vec3::new(-1.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 0.0, 0.0),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(c.collinear());
        assert!(c.axis().is_some());
        assert!(c.warnings().iter().any(|w| w.contains("collinear")));
    }

    #[test]
    fn rejects_duplicates_zero_strength_bad_dim() {
        let dup = CentreConfig::new(2, vec![Vec3::zeros(), Vec3::zeros()], vec![1.0, 1.0]);
        assert_eq!(dup.unwrap_err(), ConfigError::DuplicateCentres(0, 1));
        let zero = CentreConfig::new(2, vec![Vec3::zeros()], vec![0.0]);
        assert_eq!(zero.unwrap_err(), ConfigError::ZeroStrength(0));
        let dim = CentreConfig::new(4, vec![Vec3::zeros()], vec![1.0]);
        assert_eq!(dim.unwrap_err(), ConfigError::BadDim(4));
    }

    #[test]
    fn potential_examples() {
        let q = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(potential(&q, &single_centre()).unwrap(), -1.0);

        let origin = Vec3::zeros();
        assert_eq!(potential(&origin, &two_centres()).unwrap(), -2.0);

        // Centroid of the unit triangle: distance to each vertex is 1/√3,
        // so V = -3·√3 (independent evaluation of the three distances).
        let tri = unit_triangle();
        let centroid = tri.centroid();
        let expected: f64 = -3.0 * 3.0f64.sqrt();
        assert_relative_eq!(potential(&centroid, &tri).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn potential_at_centre_is_domain_error() {
        let tri = unit_triangle();
        let err = potential(&Vec3::new(1.0, 0.0, 0.0), &tri).unwrap_err();
        assert_eq!(err, EvalError::AtCentre { k: 1 });
    }

    #[test]
    fn force_examples() {
        let f = force(&Vec3::new(1.0, 0.0, 0.0), &single_centre()).unwrap();
        assert_relative_eq!(f.x, -1.0, max_relative = 1e-15);
        assert_eq!(f.y, 0.0);

        // Symmetric pair: force on the symmetry axis has no x-component.
        let f = force(&Vec3::new(0.0, 0.7, 0.0), &two_centres()).unwrap();
        assert_eq!(f.x, 0.0);
        assert!(f.y < 0.0);
    }

    #[test]
    fn force_matches_finite_difference_gradient() {
        let tri = unit_triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..200 {
            let q = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                0.0,
            );
            if tri.centres().iter().any(|s| (q - s).norm() < 0.1) {
                continue;
            }
            let f = force(&q, &tri).unwrap();
            for i in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = -(potential(&qp, &tri).unwrap() - potential(&qm, &tri).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(f[i], fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let s = PhaseState::planar(1.0, 0.0, 1.0, 0.0);
        assert_eq!(hamiltonian(&s, &single_centre()).unwrap(), -0.5);

        let s = PhaseState::planar(0.0, 0.0, 2.0, 0.0);
        assert_eq!(hamiltonian(&s, &two_centres()).unwrap(), 0.0);

        let tri = unit_triangle();
        let s = PhaseState::planar(1e6, 0.0, 0.0, 0.0);
        let h = hamiltonian(&s, &tri).unwrap();
        assert_relative_eq!(h, -3e-6, max_relative = 1e-4);
    }

    #[test]
    fn kepler_hamiltonian_examples() {
        let s = PhaseState::planar(1.0, 0.0, 0.0, 1.0);
        assert_eq!(kepler_hamiltonian(&s, 1.0).unwrap(), -0.5);
        assert_eq!(kepler_hamiltonian(&s, 0.0).unwrap(), 0.5);
        assert_eq!(
            kepler_hamiltonian(&PhaseState::planar(0.0, 0.0, 1.0, 0.0), 1.0).unwrap_err(),
            EvalError::AtOrigin
        );
    }

    #[test]
    fn hamiltonian_approaches_kepler_reference_at_large_radius() {
        // Off-centre triangle so the dipole moment is nonzero; the mismatch
        // must still decay with exponent >= 2 (monopole matches).
        let tri = CentreConfig::new(
            2,
            vec![
                Vec3::new(0.3, 0.1, 0.0),
                Vec3::new(1.3, 0.2, 0.0),
                Vec3::new(0.8, 1.0, 0.0),
            ],
            vec![1.0, 2.0, 0.5],
        )
        .unwrap();
        let dir = Vec3::new(0.6, 0.8, 0.0);
        let mut gaps = Vec::new();
        for r in [1e2, 1e3, 1e4] {
            let s = PhaseState::new(r * dir, Vec3::zeros(), 0.0);
            let gap = (hamiltonian(&s, &tri).unwrap()
                - kepler_hamiltonian(&s, tri.z_total()).unwrap())
            .abs();
            gaps.push((r, gap));
        }
        for w in gaps.windows(2) {
            let slope = (w[0].1 / w[1].1).log10() / (w[1].0 / w[0].0).log10();
            assert!(slope >= 1.9, "decay exponent {slope} too small");
        }
    }

    #[test]
    fn translation_covariance() {
        let tri = unit_triangle();
        let shift = Vec3::new(17.25, -3.5, 0.0);
        let shifted = CentreConfig::new(
            2,
            tri.centres().iter().map(|s| s + shift).collect(),
            tri.strengths().to_vec(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0);
            if tri.centres().iter().any(|s| (q - s).norm() < 0.05) {
                continue;
            }
            let v0 = potential(&q, &tri).unwrap();
            let v1 = potential(&(q + shift), &shifted).unwrap();
            assert_relative_eq!(v0, v1, max_relative = 1e-12);
        }
    }

    #[test]
    fn config_file_round_trip() {
        let text = r#"{
            "dim": 2,
            "centres": [[0.0, 0.0], [1.0, 0.0]],
            "strengths": [1.0, -0.5],
            "gevrey": {"C": 1.0, "g": 2.0, "E1": 1.0, "E2": 10.0, "E_th": 0.5}
        }"#;
        let file = ConfigFile::from_json(text).unwrap();
        let (config, gevrey) = file.build().unwrap();
        assert_eq!(config.n_centres(), 2);
        assert_eq!(config.z_total(), 0.5);
        let g = gevrey.unwrap();
        assert_eq!(g.e_window, (1.0, 10.0));
        // Planar config with a repulsive centre: warn, don't reject.
        assert!(!config.warnings().is_empty());
    }

    /// Finite-difference Poisson bracket {f, H}; a conserved quantity of the
    /// flow must zero it.
    fn fd_bracket_with_h(
        f: impl Fn(&PhaseState) -> f64,
        x: &PhaseState,
        config: &CentreConfig,
    ) -> f64 {
        let h = 1e-6;
        let mut acc = 0.0;
        for i in 0..3 {
            let mut qp = *x;
            let mut qm = *x;
            qp.q[i] += h;
            qm.q[i] -= h;
            let df_dq = (f(&qp) - f(&qm)) / (2.0 * h);
            let mut pp = *x;
            let mut pm = *x;
            pp.p[i] += h;
            pm.p[i] -= h;
            let df_dp = (f(&pp) - f(&pm)) / (2.0 * h);
            // dH/dq = -force, dH/dp = p.
            let fr = force(&x.q, config).unwrap();
            acc += df_dq * x.p[i] - df_dp * (-fr[i]);
        }
        acc
    }

    #[test]
    fn euler_constant_commutes_with_hamiltonian() {
        let config = CentreConfig::new(
            3,
            vec![Vec3::new(-0.7, 0.0, 0.0), Vec3::new(0.7, 0.0, 0.0)],
            vec![1.0, 0.6],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let x = PhaseState::new(
                Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                0.0,
            );
            if config.centres().iter().any(|s| (x.q - s).norm() < 0.3) {
                continue;
            }
            let br = fd_bracket_with_h(|s| euler_constant(s, &config).unwrap(), &x, &config);
            let scale = euler_constant(&x, &config).unwrap().abs().max(1.0);
            assert!(br.abs() < 1e-6 * scale, "{{Ω, H}} = {br}");
        }
    }

    #[test]
    fn axial_momentum_is_invariant_of_collinear_flow() {
        let config = CentreConfig::new(
            3,
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            vec![1.0, 2.0],
        )
        .unwrap();
        let x = PhaseState::new(Vec3::new(0.3, 1.2, -0.4), Vec3::new(0.5, 0.1, 0.9), 0.0);
        let br = fd_bracket_with_h(|s| axial_angular_momentum(s, &config).unwrap(), &x, &config);
        assert!(br.abs() < 1e-7, "{{L_axis, H}} = {br}");

        let tri = unit_triangle();
        assert!(axial_angular_momentum(&x, &tri).is_none());
    }

    #[test]
    fn gevrey_validation() {
        assert!(GevreyParams::new(0.0, 2.0, (1.0, 2.0), 0.0).is_err());
        assert!(GevreyParams::new(1.0, 1.0, (1.0, 2.0), 0.0).is_err());
        assert!(GevreyParams::new(1.0, 2.0, (3.0, 2.0), 0.0).is_err());
        assert!(GevreyParams::new(1.0, 2.0, (1.0, 2.0), 1.5).is_err());
        assert!(GevreyParams::new(1.0, 2.0, (1.0, 2.0), 0.5).is_ok());
    }
}

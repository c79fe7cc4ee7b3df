//! Beam parameterization of initial conditions: a launch point far from the
//! centres, aimed along a direction with a transverse impact offset, with the
//! momentum magnitude fixed so the state sits exactly on the requested energy
//! shell.

use crate::model::{potential, CentreConfig, EvalError, PhaseState, Vec3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BeamError {
    #[error("energy {e} is below the potential {v} at the launch point")]
    BelowShell { e: f64, v: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One beam initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub energy: f64,
    /// Unit direction of travel.
    pub dir: Vec3,
    /// Transverse offset from the aim line (perpendicular to `dir`).
    pub impact: Vec3,
    /// Launch distance from the configuration centroid along -dir.
    pub launch_radius: f64,
}

impl Beam {
    /// Planar beam: direction angle and signed scalar impact parameter.
    pub fn planar(energy: f64, angle: f64, b: f64, launch_radius: f64) -> Self {
        let dir = Vec3::new(angle.cos(), angle.sin(), 0.0);
        let perp = Vec3::new(-angle.sin(), angle.cos(), 0.0);
        Beam { energy, dir, impact: b * perp, launch_radius }
    }

    /// Spatial beam: direction from polar/azimuth angles, impact offsets
    /// along the two transverse frame vectors.
    pub fn spatial(energy: f64, polar: f64, azimuth: f64, b1: f64, b2: f64, launch_radius: f64) -> Self {
        let dir = Vec3::new(
            polar.sin() * azimuth.cos(),
            polar.sin() * azimuth.sin(),
            polar.cos(),
        );
        let (e1, e2) = transverse_frame(&dir);
        Beam { energy, dir, impact: b1 * e1 + b2 * e2, launch_radius }
    }

    /// The launch phase state, exactly on the energy shell.
    pub fn state(&self, config: &CentreConfig) -> Result<PhaseState, BeamError> {
        let q = config.centroid() - self.launch_radius * self.dir + self.impact;
        let v_pot = potential(&q, config)?;
        let kinetic = self.energy - v_pot;
        if kinetic <= 0.0 {
            return Err(BeamError::BelowShell { e: self.energy, v: v_pot });
        }
        Ok(PhaseState::new(q, (2.0 * kinetic).sqrt() * self.dir, 0.0))
    }
}

/// Right-handed transverse frame (e1, e2) for a unit direction.
pub fn transverse_frame(dir: &Vec3) -> (Vec3, Vec3) {
    let helper = if dir.z.abs() < 0.9 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let e1 = dir.cross(&helper).normalize();
    let e2 = dir.cross(&e1);
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hamiltonian, CentreConfig};
    use approx::assert_relative_eq;

    #[test]
    fn beam_sits_on_energy_shell() {
        let config = CentreConfig::new(2, vec![Vec3::zeros()], vec![1.0]).unwrap();
        let beam = Beam::planar(5.0, 0.7, 1.2, 30.0);
        let s = beam.state(&config).unwrap();
        assert_relative_eq!(hamiltonian(&s, &config).unwrap(), 5.0, max_relative = 1e-14);
        // Direction preserved exactly; offset perpendicular to it.
        assert_relative_eq!(s.p.normalize().dot(&beam.dir), 1.0, max_relative = 1e-14);
        assert!(beam.impact.dot(&beam.dir).abs() < 1e-14);
    }

    #[test]
    fn spatial_frame_is_orthonormal() {
        let beam = Beam::spatial(2.0, 1.1, -0.4, 0.3, -0.8, 40.0);
        assert_relative_eq!(beam.dir.norm(), 1.0, max_relative = 1e-14);
        assert!(beam.impact.dot(&beam.dir).abs() < 1e-13);
    }

    #[test]
    fn below_shell_is_an_error() {
        let config = CentreConfig::new(2, vec![Vec3::zeros()], vec![-50.0]).unwrap();
        // Strongly repulsive centre: potential at launch exceeds the energy.
        let beam = Beam::planar(0.1, 0.0, 0.0, 10.0);
        assert!(matches!(beam.state(&config), Err(BeamError::BelowShell { .. })));
    }
}

//! Sensor orientations, positions and readout parameters.
//!
//! Angles follow the physics convention: `theta` is measured from the +z
//! (out-of-plane) axis and `phi` from +x in the sample plane. Angles are
//! accepted in degrees and stored in radians.

use crate::{Error, Result, Vec3};

/// Default threshold on `|e1 . Bc|` below which the correlation factor is undefined.
pub const DEFAULT_PROJECTION_EPSILON: f64 = 1e-15;

/// Measurement axis of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorAxis {
    theta: f64,
    phi: f64,
    unit: Vec3,
}

impl SensorAxis {
    /// Build an axis from polar and azimuthal angles in degrees.
    ///
    /// A negative polar angle is folded into the equivalent `(|theta|, phi + 180)`
    /// representation; polar angles beyond 180 degrees are wrapped likewise. The
    /// unit vector is identical either way.
    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        if !theta_deg.is_finite() || !phi_deg.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "axis angles must be finite, got ({theta_deg}, {phi_deg})"
            )));
        }
        let mut theta = theta_deg.rem_euclid(360.0);
        let mut phi = phi_deg;
        if theta > 180.0 {
            theta = 360.0 - theta;
            phi += 180.0;
        }
        let phi = wrap_degrees(phi);
        Ok(Self::from_radians(theta.to_radians(), phi.to_radians()))
    }

    fn from_radians(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            theta,
            phi,
            unit: Vec3::new(st * cp, st * sp, ct),
        }
    }

    /// Axis along a (not necessarily normalized) direction vector.
    pub fn from_vector(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "axis direction must be finite and nonzero, got {v:?}"
            )));
        }
        let u = v / norm;
        let theta = u.z.clamp(-1.0, 1.0).acos();
        let phi = u.y.atan2(u.x);
        Ok(Self {
            theta,
            phi,
            unit: u,
        })
    }

    /// The same physical axis with its direction flipped into the upper
    /// hemisphere (`e . z >= 0`). Absolute-value observables cannot tell `e`
    /// from `-e`.
    pub fn upper_hemisphere(&self) -> Self {
        if self.unit.z < 0.0 {
            Self::from_vector(-self.unit).expect("unit vector is nonzero")
        } else {
            *self
        }
    }

    /// Polar angle, rad.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Azimuth, rad.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi.to_degrees()
    }

    pub fn unit(&self) -> Vec3 {
        self.unit
    }
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Eq. e . B: the field component seen by a sensor.
pub fn project_field(axis: &SensorAxis, field: Vec3) -> f64 {
    axis.unit.dot(&field)
}

/// Ratio of the two sensors' projections of a shared field, `(e2 . Bc) / (e1 . Bc)`.
pub fn correlation_factor_m(axis1: &SensorAxis, axis2: &SensorAxis, bc: Vec3) -> Result<f64> {
    correlation_factor_m_with_epsilon(axis1, axis2, bc, DEFAULT_PROJECTION_EPSILON)
}

pub fn correlation_factor_m_with_epsilon(
    axis1: &SensorAxis,
    axis2: &SensorAxis,
    bc: Vec3,
    epsilon: f64,
) -> Result<f64> {
    if !bc.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidArgument("field must be finite".into()));
    }
    let p1 = project_field(axis1, bc);
    if p1.abs() < epsilon {
        return Err(Error::DegenerateProjection {
            projection: p1.abs(),
            epsilon,
        });
    }
    Ok(project_field(axis2, bc) / p1)
}

/// Intrinsic dephasing exponent as a function of accumulation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dephasing {
    /// A fixed `zeta`, independent of tau.
    Fixed(f64),
    /// `zeta(tau) = (tau / t2_star)^exponent`.
    Stretched { t2_star: f64, exponent: f64 },
}

impl Dephasing {
    pub fn zeta(&self, tau: f64) -> f64 {
        match *self {
            Dephasing::Fixed(z) => z,
            Dephasing::Stretched { t2_star, exponent } => (tau / t2_star).powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Dephasing::Fixed(z) if z >= 0.0 && z.is_finite() => Ok(()),
            Dephasing::Fixed(z) => Err(Error::InvalidArgument(format!(
                "dephasing exponent must be finite and non-negative, got {z}"
            ))),
            Dephasing::Stretched { t2_star, exponent }
                if t2_star > 0.0
                    && exponent > 0.0
                    && t2_star.is_finite()
                    && exponent.is_finite() =>
            {
                Ok(())
            }
            Dephasing::Stretched { t2_star, exponent } => Err(Error::InvalidArgument(format!(
                "stretched dephasing needs t2* > 0 and p > 0, got ({t2_star}, {exponent})"
            ))),
        }
    }
}

/// One NV sensor: axis, lab-frame position (nm) relative to the probe
/// reference point, and optical readout parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NvSensor {
    pub axis: SensorAxis,
    pub position: Vec3,
    /// Mean photons per readout in the bright (m_S = 0) state.
    pub photon_yield: f64,
    /// Fractional optical contrast between spin states.
    pub contrast: f64,
    pub dephasing: Dephasing,
    /// The sensor's two spin transition frequencies, MHz.
    pub transition_mhz: [f64; 2],
}

impl NvSensor {
    pub fn new(
        axis: SensorAxis,
        position: Vec3,
        photon_yield: f64,
        contrast: f64,
        dephasing: Dephasing,
    ) -> Result<Self> {
        if !(photon_yield > 0.0 && photon_yield.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "photon yield must be positive, got {photon_yield}"
            )));
        }
        if !(0.0..=1.0).contains(&contrast) {
            return Err(Error::InvalidArgument(format!(
                "optical contrast must lie in [0, 1], got {contrast}"
            )));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(
                "sensor position must be finite".into(),
            ));
        }
        dephasing.validate()?;
        Ok(Self {
            axis,
            position,
            photon_yield,
            contrast,
            dephasing,
            transition_mhz: [f64::NAN; 2],
        })
    }

    pub fn with_transitions(mut self, f_mhz: [f64; 2]) -> Self {
        self.transition_mhz = f_mhz;
        self
    }

    /// `c * eps * exp(-zeta(tau))`, the slope between phase and count rate.
    pub fn readout_contrast(&self, tau: f64) -> f64 {
        self.photon_yield * self.contrast * (-self.dephasing.zeta(tau)).exp()
    }
}

/// Two sensors in one tip.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub sensors: [NvSensor; 2],
}

impl ProbePair {
    pub fn new(sensor1: NvSensor, sensor2: NvSensor) -> Self {
        Self {
            sensors: [sensor1, sensor2],
        }
    }

    /// `r2 - r1`, nm.
    pub fn separation(&self) -> Vec3 {
        self.sensors[1].position - self.sensors[0].position
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn axis(t: f64, p: f64) -> SensorAxis {
        SensorAxis::from_degrees(t, p).unwrap()
    }

    #[test]
    fn poles_and_equator() {
        assert_abs_diff_eq!(
            axis(0.0, 0.0).unit(),
            Vec3::new(0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            axis(90.0, 0.0).unit(),
            Vec3::new(1.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn tip2_axis_z_component() {
        let e = axis(41.0, 94.0);
        assert_abs_diff_eq!(e.unit().z, 0.754_709_580_222_772, epsilon = 1e-12);
        assert_abs_diff_eq!(e.unit().norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_theta_folds_to_same_vector() {
        let folded = axis(-84.0, -161.0);
        assert_abs_diff_eq!(folded.theta_deg(), 84.0, epsilon = 1e-9);
        assert_abs_diff_eq!(folded.phi_deg(), 19.0, epsilon = 1e-9);
        let (t, p) = ((-84f64).to_radians(), (-161f64).to_radians());
        let raw = Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
        assert_abs_diff_eq!(folded.unit(), raw, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_angles_rejected() {
        assert!(SensorAxis::from_degrees(f64::NAN, 0.0).is_err());
        assert!(SensorAxis::from_degrees(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn projections() {
        let b = Vec3::new(0.0, 0.0, 1e-3);
        assert_abs_diff_eq!(project_field(&axis(0.0, 0.0), b), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(project_field(&axis(90.0, 0.0), b), 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(
            project_field(&axis(41.0, 94.0), b),
            0.754_709_58e-3,
            epsilon = 1e-11
        );
    }

    #[test]
    fn correlation_factor_examples() {
        let e1 = axis(41.0, 94.0);
        let e2 = axis(-84.0, -161.0);
        let bz = Vec3::new(0.0, 0.0, 2e-6);
        assert_abs_diff_eq!(
            correlation_factor_m(&e1, &e1, bz).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let m = correlation_factor_m(&e1, &e2, bz).unwrap();
        assert_abs_diff_eq!(
            m,
            (84f64).to_radians().cos() / (41f64).to_radians().cos(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(m, 0.1385, epsilon = 5e-5);
        // e2 = x is orthogonal to a z field
        assert_abs_diff_eq!(
            correlation_factor_m(&e1, &axis(90.0, 0.0), bz).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_projection_is_an_error() {
        let err =
            correlation_factor_m(&axis(90.0, 0.0), &axis(0.0, 0.0), Vec3::new(0.0, 0.0, 1e-3));
        assert!(matches!(err, Err(Error::DegenerateProjection { .. })));
    }

    #[test]
    fn sensor_invariants() {
        let e = axis(0.0, 0.0);
        let p = Vec3::zeros();
        assert!(NvSensor::new(e, p, 0.0, 0.2, Dephasing::Fixed(0.7)).is_err());
        assert!(NvSensor::new(e, p, 0.1, 1.2, Dephasing::Fixed(0.7)).is_err());
        assert!(NvSensor::new(e, p, 0.1, 0.2, Dephasing::Fixed(-0.1)).is_err());
        let s = NvSensor::new(e, p, 0.1, 0.2, Dephasing::Fixed(0.7)).unwrap();
        let cr = s.readout_contrast(250e-9);
        assert!(cr > 0.0 && cr <= s.photon_yield);
        assert_abs_diff_eq!(cr, 0.1 * 0.2 * (-0.7f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn stretched_dephasing() {
        let d = Dephasing::Stretched {
            t2_star: 300e-9,
            exponent: 2.0,
        };
        assert_eq!(d.zeta(0.0), 0.0);
        assert_abs_diff_eq!(d.zeta(300e-9), 1.0, epsilon = 1e-12);
        assert!(d.zeta(200e-9) < d.zeta(250e-9));
    }

    #[test]
    fn separation_is_position_difference() {
        let e = axis(0.0, 0.0);
        let s1 = NvSensor::new(
            e,
            Vec3::new(0.0, 0.0, 47.0),
            0.1,
            0.2,
            Dephasing::Fixed(0.7),
        )
        .unwrap();
        let s2 = NvSensor::new(
            e,
            Vec3::new(-52.0, -96.0, 58.0),
            0.1,
            0.2,
            Dephasing::Fixed(0.7),
        )
        .unwrap();
        let pair = ProbePair::new(s1, s2);
        assert_eq!(pair.separation(), Vec3::new(-52.0, -96.0, 11.0));
    }

    fn finite_field() -> impl Strategy<Value = Vec3> {
        (-1e-2..1e-2f64, -1e-2..1e-2f64, -1e-2..1e-2f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn unit_norm_and_round_trip(theta in 0.5..179.5f64, phi in -179.5..179.5f64) {
            let a = axis(theta, phi);
            prop_assert!((a.unit().norm() - 1.0).abs() < 1e-12);
            let back = SensorAxis::from_vector(a.unit()).unwrap();
            prop_assert!((back.theta_deg() - theta).abs() < 1e-9);
            prop_assert!((back.phi_deg() - phi).abs() < 1e-9);
        }

        #[test]
        fn projection_is_linear(
            theta in 0.0..180.0f64, phi in -180.0..180.0f64,
            b1 in finite_field(), b2 in finite_field(),
            a in -3.0..3.0f64, b in -3.0..3.0f64,
        ) {
            let e = axis(theta, phi);
            let lhs = project_field(&e, b1 * a + b2 * b);
            let rhs = a * project_field(&e, b1) + b * project_field(&e, b2);
            let scale = (a.abs() * b1.norm() + b.abs() * b2.norm()).max(1e-300);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn m_is_scale_invariant_and_inverts_on_swap(
            t1 in 0.0..180.0f64, p1 in -180.0..180.0f64,
            t2 in 0.0..180.0f64, p2 in -180.0..180.0f64,
            bc in finite_field(), s in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64],
        ) {
            let (e1, e2) = (axis(t1, p1), axis(t2, p2));
            let p1v = project_field(&e1, bc);
            let p2v = project_field(&e2, bc);
            prop_assume!(p1v.abs() > 1e-9 && p2v.abs() > 1e-9);
            let m = correlation_factor_m(&e1, &e2, bc).unwrap();
            let ms = correlation_factor_m(&e1, &e2, bc * s).unwrap();
            prop_assert!((m - ms).abs() <= 1e-9 * m.abs().max(1.0));
            let inv = correlation_factor_m(&e2, &e1, bc).unwrap();
            prop_assert!((m * inv - 1.0).abs() < 1e-9);
        }
    }
}

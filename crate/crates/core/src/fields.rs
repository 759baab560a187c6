//! Analytic magnetic field sources.
//!
//! Positions are in nanometers and fields in tesla. The sample surface is the
//! plane `z = 0`; every model is only defined strictly above it.

use std::f64::consts::PI;

use rand::Rng;

use crate::{Error, Result, Vec3};

/// Vacuum permeability, T m / A.
pub const MU0: f64 = 4.0e-7 * PI;

const NM: f64 = 1e-9;

/// Position- and time-independent bias field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformField {
    pub b: Vec3,
}

/// Straight edge of an out-of-plane magnetized thin film.
///
/// The edge runs perpendicular to `normal`; the signed distance from the edge
/// is `r . normal - edge_position`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripeEdge {
    pub edge_position: f64,
    normal: Vec3,
    /// `mu0 * Ms * t`, tesla nanometers.
    pub sheet_moment: f64,
    pub magnetization_sign: f64,
}

impl StripeEdge {
    pub fn new(
        edge_position: f64,
        normal: Vec3,
        sheet_moment: f64,
        magnetization_sign: f64,
    ) -> Result<Self> {
        let in_plane = Vec3::new(normal.x, normal.y, 0.0);
        let norm = in_plane.norm();
        if normal.z != 0.0 || !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "edge normal must be a nonzero in-plane vector, got {normal:?}"
            )));
        }
        if !(sheet_moment > 0.0 && sheet_moment.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sheet moment must be positive, got {sheet_moment}"
            )));
        }
        if magnetization_sign.abs() != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "magnetization sign must be +1 or -1, got {magnetization_sign}"
            )));
        }
        Ok(Self {
            edge_position,
            normal: in_plane / norm,
            sheet_moment,
            magnetization_sign,
        })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }
}

/// Edge stray field: `sign * (mu0 Ms t / 2 pi) * (z n - x z_hat) / (x^2 + z^2)`.
pub fn edge_field(source: &StripeEdge, r: Vec3) -> Result<Vec3> {
    let z = r.z;
    if !(z > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "edge field needs z > 0, got z = {z} nm"
        )));
    }
    let x = r.dot(&source.normal) - source.edge_position;
    let k = source.magnetization_sign * source.sheet_moment / (2.0 * PI) / (x * x + z * z);
    Ok(source.normal * (k * z) - Vec3::z() * (k * x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurrentWaveform {
    Dc {
        amplitude: f64,
    },
    /// Sinusoid running asynchronously to the pulse sequence.
    AsyncAc {
        amplitude: f64,
        frequency: f64,
    },
}

impl CurrentWaveform {
    pub fn dc(amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "current amplitude must be >= 0, got {amplitude}"
            )));
        }
        Ok(CurrentWaveform::Dc { amplitude })
    }

    pub fn async_ac(amplitude: f64, frequency: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "current amplitude must be >= 0, got {amplitude}"
            )));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "AC frequency must be > 0, got {frequency}"
            )));
        }
        Ok(CurrentWaveform::AsyncAc {
            amplitude,
            frequency,
        })
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            CurrentWaveform::Dc { amplitude } | CurrentWaveform::AsyncAc { amplitude, .. } => {
                amplitude
            }
        }
    }

    /// Instantaneous current at time `t`, amperes.
    pub fn current_at(&self, t: f64) -> f64 {
        match *self {
            CurrentWaveform::Dc { amplitude } => amplitude,
            CurrentWaveform::AsyncAc {
                amplitude,
                frequency,
            } => amplitude * (2.0 * PI * frequency * t).sin(),
        }
    }
}

/// The current at a uniformly random instant of an asynchronous AC drive:
/// `I0 sin(u)` with `u ~ U[0, 2 pi)`, i.e. arcsine distributed on `[-I0, I0]`.
pub fn sample_ac_instant<R: Rng + ?Sized>(waveform: &CurrentWaveform, rng: &mut R) -> Result<f64> {
    match *waveform {
        CurrentWaveform::AsyncAc { amplitude, .. } => Ok(amplitude * arcsine_unit(rng)),
        CurrentWaveform::Dc { .. } => Err(Error::InvalidKind(
            "instantaneous sampling needs an asynchronous AC waveform".into(),
        )),
    }
}

/// `sin(u)` for `u ~ U[0, 2 pi)`.
#[inline]
pub fn arcsine_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>() * (2.0 * PI);
    u.sin()
}

/// Infinitely thin, uniform current sheet of finite width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteWire {
    pub width: f64,
    /// Position of the wire midline along the transverse in-plane axis, nm.
    pub center: f64,
    direction: Vec3,
    pub waveform: CurrentWaveform,
}

impl FiniteWire {
    pub fn new(
        width: f64,
        center: f64,
        direction: Vec3,
        waveform: CurrentWaveform,
    ) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wire width must be positive, got {width}"
            )));
        }
        let d = Vec3::new(direction.x, direction.y, 0.0);
        let n = d.norm();
        if direction.z != 0.0 || !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "current direction must be a nonzero in-plane vector, got {direction:?}"
            )));
        }
        Ok(Self {
            width,
            center,
            direction: d / n,
            waveform,
        })
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    /// In-plane axis across the wire; positive current gives a field along
    /// it above the sheet.
    pub fn transverse(&self) -> Vec3 {
        self.direction.cross(&Vec3::z())
    }

    /// Field per ampere of current at `r`.
    pub fn field_per_ampere(&self, r: Vec3) -> Result<Vec3> {
        let z = r.z;
        if !(z > 0.0) {
            return Err(Error::OutOfDomain(format!(
                "wire field needs z > 0, got z = {z} nm"
            )));
        }
        let u = self.transverse();
        let x = r.dot(&u) - self.center;
        let h = 0.5 * self.width;
        let w_m = self.width * NM;
        let bx = MU0 / (2.0 * PI * w_m) * (((x + h) / z).atan() - ((x - h) / z).atan());
        let bz =
            MU0 / (4.0 * PI * w_m) * (((x - h).powi(2) + z * z) / ((x + h).powi(2) + z * z)).ln();
        Ok(u * bx + Vec3::z() * bz)
    }
}

/// Field of a finite wire at `r` and time `t`.
pub fn wire_field(source: &FiniteWire, r: Vec3, t: f64) -> Result<Vec3> {
    Ok(source.field_per_ampere(r)? * source.waveform.current_at(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldSource {
    Uniform(UniformField),
    Edge(StripeEdge),
    Wire(FiniteWire),
}

impl FieldSource {
    pub fn field_at(&self, r: Vec3, t: f64) -> Result<Vec3> {
        match self {
            FieldSource::Uniform(u) => Ok(u.b),
            FieldSource::Edge(e) => edge_field(e, r),
            FieldSource::Wire(w) => wire_field(w, r, t),
        }
    }

    /// Field that does not change from shot to shot: everything except
    /// asynchronous AC wires.
    pub fn static_field(&self, r: Vec3) -> Result<Vec3> {
        match self {
            FieldSource::Wire(w) if matches!(w.waveform, CurrentWaveform::AsyncAc { .. }) => {
                Ok(Vec3::zeros())
            }
            other => other.field_at(r, 0.0),
        }
    }

    /// For an asynchronous AC wire, the field at peak current (`sin u = 1`).
    pub fn ac_amplitude(&self, r: Vec3) -> Result<Option<Vec3>> {
        match self {
            FieldSource::Wire(w) => match w.waveform {
                CurrentWaveform::AsyncAc { amplitude, .. } => {
                    Ok(Some(w.field_per_ampere(r)? * amplitude))
                }
                CurrentWaveform::Dc { .. } => Ok(None),
            },
            _ => Ok(None),
        }
    }

    pub fn ac_frequency(&self) -> Option<f64> {
        match self {
            FieldSource::Wire(FiniteWire {
                waveform: CurrentWaveform::AsyncAc { frequency, .. },
                ..
            }) => Some(*frequency),
            _ => None,
        }
    }
}

/// Superposition of all sources.
pub fn total_field(sources: &[FieldSource], r: Vec3, t: f64) -> Result<Vec3> {
    sources
        .iter()
        .try_fold(Vec3::zeros(), |acc, s| Ok(acc + s.field_at(r, t)?))
}

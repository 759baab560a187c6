//! Continuous-wave ODMR spectra of several sensors seen through one detector.

use crate::probe::{project_field, NvSensor};
use crate::{Error, Result, Vec3};

use super::GAMMA_NV;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdmrParams {
    /// Zero-field splitting, MHz.
    pub d0_mhz: f64,
    /// Full width at half maximum of each dip, MHz.
    pub width_mhz: f64,
    /// Fractional depth of each dip.
    pub depth: f64,
    /// Gyromagnetic ratio, rad / (s T).
    pub gamma: f64,
}

impl Default for OdmrParams {
    fn default() -> Self {
        Self {
            d0_mhz: 2870.0,
            width_mhz: 8.0,
            depth: 0.1,
            gamma: GAMMA_NV,
        }
    }
}

impl OdmrParams {
    /// Frequency shift per tesla, MHz / T.
    pub fn mhz_per_tesla(&self) -> f64 {
        self.gamma / (2.0 * std::f64::consts::PI) * 1e-6
    }

    /// `(D0 - g|e.B|, D0 + g|e.B|)`.
    pub fn transitions(&self, sensor: &NvSensor, field: Vec3) -> [f64; 2] {
        let split = self.mhz_per_tesla() * project_field(&sensor.axis, field).abs();
        [self.d0_mhz - split, self.d0_mhz + split]
    }
}

/// `start, start + step, ...` up to and including `stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl FrequencyGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step > 0.0 && stop >= start) {
            return Err(Error::InvalidArgument(format!(
                "frequency grid needs start <= stop and step > 0, got ({start}, {stop}, {step})"
            )));
        }
        Ok(Self { start, stop, step })
    }

    pub fn len(&self) -> usize {
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrSpectrum {
    pub freq_mhz: Vec<f64>,
    pub pl: Vec<f64>,
    /// Transition centers per sensor, MHz.
    pub centers: Vec<[f64; 2]>,
    /// Set when two dips sit closer than one linewidth.
    pub degenerate: bool,
}

/// PL normalized to 1 off resonance, minus one Lorentzian dip per transition.
pub fn odmr_spectrum(
    sensors: &[NvSensor],
    bias: Vec3,
    grid: &FrequencyGrid,
    params: &OdmrParams,
) -> Result<OdmrSpectrum> {
    let centers: Vec<[f64; 2]> = sensors
        .iter()
        .map(|s| params.transitions(s, bias))
        .collect();
    if centers.iter().flatten().any(|&f| f <= 0.0) {
        return Err(Error::InvalidArgument(
            "bias field pushes a transition below zero frequency".into(),
        ));
    }
    let mut all: Vec<f64> = centers.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let degenerate = all.windows(2).any(|w| w[1] - w[0] < params.width_mhz);

    let hw2 = (0.5 * params.width_mhz).powi(2);
    let freq_mhz = grid.values();
    let pl = freq_mhz
        .iter()
        .map(|&f| {
            1.0 - all
                .iter()
                .map(|&c| params.depth * hw2 / ((f - c).powi(2) + hw2))
                .sum::<f64>()
        })
        .collect();
    Ok(OdmrSpectrum {
        freq_mhz,
        pl,
        centers,
        degenerate,
    })
}

impl OdmrSpectrum {
    /// Indices of strict local minima of the PL curve.
    pub fn minima(&self) -> Vec<usize> {
        (1..self.pl.len().saturating_sub(1))
            .filter(|&i| self.pl[i] < self.pl[i - 1] && self.pl[i] <= self.pl[i + 1])
            .collect()
    }
}

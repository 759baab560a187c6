//! De-multiplexing of summed photon counts into per-sensor signals.
//!
//! Phases come from partial sums over the other sensors' readout phases: every
//! other sensor's cosine term cancels in the sum over its four phases, leaving
//! `S(Phi) = const - 4^(N-1) (c_r / 2) cos(phi + Phi)` for the sensor of
//! interest. With `Phi` in `(+x, +y, -x, -y) = (0, 90, 180, 270)` degrees,
//!
//! ```text
//! S(-x) - S(+x) = 4^(N-1) c_r cos(phi)
//! S(+y) - S(-y) = 4^(N-1) c_r sin(phi)
//! ```
//!
//! and `phi = atan2(S(+y) - S(-y), S(-x) - S(+x))` recovers the phase in the
//! full `(-pi, pi]` range.
//!
//! Covariances come from the excess variance `V - E` of single cells. For the
//! cell `(Phi1, Phi2)` the per-shot rate is
//! `K + (c_r1 / 2) s(Phi1) f(phi1) + (c_r2 / 2) s(Phi2) g(phi2)` where `f, g` are
//! `cos` for x readouts and `sin` for y readouts and `s = -1, +1, +1, -1` for
//! `+x, +y, -x, -y`. Differencing two cells that share `Phi1` and flip the sign
//! of `Phi2` isolates `c_r1 c_r2 s s' Cov(f(phi1), g(phi2))`.

use crate::spinmodel::{
    cell_count, cell_phases, CountMatrix, MomentMatrix, ReadoutCombo, ReadoutPhase,
};
use crate::{Error, Result};

/// Mean phases below this magnitude (rad) are treated as zero when isolating
/// the correlated-phase covariance.
pub const ZERO_PHASE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    /// Radians in `(-pi, pi]`.
    pub phi: f64,
    /// Shot-noise standard error, radians.
    pub sigma: f64,
    /// Readout contrast fitted from the same data, photons per shot.
    pub contrast: f64,
}

/// One count covariance and its two independent estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEntry {
    /// Mean of the two forms.
    pub value: f64,
    pub sigma: f64,
    /// From the `+` row of sensor 1.
    pub form_a: f64,
    /// From the `-` row of sensor 1.
    pub form_b: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
}

impl CovarianceEntry {
    /// Difference of the two forms in units of its standard error.
    pub fn form_disagreement(&self) -> f64 {
        (self.form_a - self.form_b) / (self.sigma_a.powi(2) + self.sigma_b.powi(2)).sqrt()
    }

    /// Covariances of sines and cosines are bounded by 1; noise can push
    /// estimates past that, which is flagged rather than clamped.
    pub fn out_of_range(&self) -> bool {
        self.value.abs() > 1.0
    }
}

/// `Cov(f(phi1), g(phi2))` with `f, g` = cos for `x`, sin for `y`; the
/// first letter refers to sensor 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub xx: CovarianceEntry,
    pub xy: CovarianceEntry,
    pub yx: CovarianceEntry,
    pub yy: CovarianceEntry,
}

/// Row (`Phi1`) and column (`Phi2`) sums of a two-sensor count matrix.
pub fn partial_sums(counts: &CountMatrix) -> Result<([f64; 4], [f64; 4])> {
    if counts.n_sensors() != 2 {
        return Err(Error::InvalidArgument(format!(
            "partial sums need a two-sensor matrix, got {} sensors",
            counts.n_sensors()
        )));
    }
    let mut rows = [0.0; 4];
    let mut cols = [0.0; 4];
    for i in 0..16 {
        let total = counts.require(i)?.total;
        rows[i / 4] += total;
        cols[i % 4] += total;
    }
    Ok((rows, cols))
}

/// Per-phase rate sums and their shot-noise variances for one sensor, over
/// the given cells. Cells may have different repetition counts.
fn rate_sums<'a>(
    n_sensors: usize,
    sensor: usize,
    cells: impl Iterator<Item = (usize, &'a crate::spinmodel::CountCell)>,
) -> ([f64; 4], [f64; 4]) {
    let mut sum = [0.0; 4];
    let mut var = [0.0; 4];
    for (index, cell) in cells {
        let p = cell_phases(n_sensors, index)[sensor].index();
        sum[p] += cell.rate();
        var[p] += cell.rate_variance();
    }
    (sum, var)
}

fn phase_from_sums(
    sum: [f64; 4],
    var: [f64; 4],
    multiplicity: f64,
    sensor: usize,
) -> Result<PhaseEstimate> {
    use ReadoutPhase::*;
    let x = sum[MinusX.index()] - sum[PlusX.index()];
    let y = sum[PlusY.index()] - sum[MinusY.index()];
    let var_x = var[MinusX.index()] + var[PlusX.index()];
    let var_y = var[PlusY.index()] + var[MinusY.index()];
    let r2 = x * x + y * y;
    let scale: f64 = sum.iter().map(|s| s.abs()).sum();
    let exact_zero = r2.sqrt() <= 1e-12 * scale;
    let below_noise = x * x <= var_x && y * y <= var_y;
    if exact_zero || below_noise {
        return Err(Error::IndeterminatePhase { sensor: sensor + 1 });
    }
    let mut phi = y.atan2(x);
    if phi == -std::f64::consts::PI {
        phi = std::f64::consts::PI;
    }
    let sigma = ((x * x * var_y + y * y * var_x) / (r2 * r2)).sqrt();
    Ok(PhaseEstimate {
        phi,
        sigma,
        contrast: r2.sqrt() / multiplicity,
    })
}

/// Phase of `sensor` (0-based) from a complete `4^N` count matrix.
pub fn sensor_phase(counts: &CountMatrix, sensor: usize) -> Result<PhaseEstimate> {
    let n = counts.n_sensors();
    if sensor >= n {
        return Err(Error::InvalidArgument(format!(
            "sensor {} of {n}",
            sensor + 1
        )));
    }
    let cells: Vec<_> = (0..cell_count(n))
        .map(|i| counts.require(i).map(|c| (i, c)))
        .collect::<Result<_>>()?;
    let (sum, var) = rate_sums(n, sensor, cells.into_iter());
    phase_from_sums(sum, var, 4f64.powi(n as i32 - 1), sensor)
}

/// Mean phases of both sensors from the full sixteen-cell matrix.
pub fn mean_phases(counts: &CountMatrix) -> Result<(PhaseEstimate, PhaseEstimate)> {
    if counts.n_sensors() != 2 {
        return Err(Error::InvalidArgument(
            "mean_phases needs a two-sensor matrix".into(),
        ));
    }
    Ok((sensor_phase(counts, 0)?, sensor_phase(counts, 1)?))
}

/// Mean phases of every sensor of an N-sensor matrix.
pub fn n_sensor_mean_phases(counts: &CountMatrix) -> Result<Vec<PhaseEstimate>> {
    (0..counts.n_sensors())
        .map(|s| sensor_phase(counts, s))
        .collect()
}

/// Mean phases from the reduced schedule `{(Phi1, +x)} U {(+x, Phi2)}`.
///
/// Within the `Phi2 = +x` column sensor 2 contributes a constant that cancels
/// in the differences, and likewise for the `Phi1 = +x` row.
pub fn demux_eight(counts: &CountMatrix) -> Result<(PhaseEstimate, PhaseEstimate)> {
    if counts.n_sensors() != 2 {
        return Err(Error::InvalidArgument(
            "demux_eight needs a two-sensor matrix".into(),
        ));
    }
    let x = ReadoutPhase::PlusX;
    let fetch = |combo: ReadoutCombo| {
        counts
            .combo(combo)
            .map(|c| (combo.index(), c))
            .ok_or_else(|| Error::IncompleteSubset(combo.label()))
    };
    let column: Vec<_> = ReadoutPhase::ALL
        .iter()
        .map(|&p| fetch(ReadoutCombo::new(p, x)))
        .collect::<Result<_>>()?;
    let row: Vec<_> = ReadoutPhase::ALL
        .iter()
        .map(|&p| fetch(ReadoutCombo::new(x, p)))
        .collect::<Result<_>>()?;
    let (s1, v1) = rate_sums(2, 0, column.into_iter());
    let (s2, v2) = rate_sums(2, 1, row.into_iter());
    Ok((
        phase_from_sums(s1, v1, 1.0, 0)?,
        phase_from_sums(s2, v2, 1.0, 1)?,
    ))
}

fn sign(p: ReadoutPhase) -> f64 {
    match p {
        ReadoutPhase::PlusX | ReadoutPhase::MinusY => -1.0,
        ReadoutPhase::PlusY | ReadoutPhase::MinusX => 1.0,
    }
}

fn entry(
    moments: &MomentMatrix,
    plus1: ReadoutPhase,
    plus2: ReadoutPhase,
    norm: f64,
) -> Result<CovarianceEntry> {
    let minus = |p: ReadoutPhase| ReadoutPhase::from_index((p.index() + 2) % 4);
    let cell = |a: ReadoutPhase, b: ReadoutPhase| moments.require(ReadoutCombo::new(a, b).index());
    let k = 1.0 / (norm * sign(plus1) * sign(plus2));
    let form = |row: ReadoutPhase| -> Result<(f64, f64)> {
        let (same, flipped) = if row == plus1 {
            (cell(row, plus2)?, cell(row, minus(plus2))?)
        } else {
            (cell(row, minus(plus2))?, cell(row, plus2)?)
        };
        let value = (same.excess_variance() - flipped.excess_variance()) * k;
        let var =
            (same.excess_variance_sampling_var() + flipped.excess_variance_sampling_var()) * k * k;
        Ok((value, var.sqrt()))
    };
    let (form_a, sigma_a) = form(plus1)?;
    let (form_b, sigma_b) = form(minus(plus1))?;
    Ok(CovarianceEntry {
        value: 0.5 * (form_a + form_b),
        sigma: 0.5 * (sigma_a * sigma_a + sigma_b * sigma_b).sqrt(),
        form_a,
        form_b,
        sigma_a,
        sigma_b,
    })
}

/// The four count covariances, normalized by the readout contrasts.
///
/// `yy` form A is `[(V-E)(+y+y) - (V-E)(+y-y)] / (c_r1 c_r2)`; form B uses
/// the `-y` row, `[(V-E)(-y-y) - (V-E)(-y+y)] / (c_r1 c_r2)`. The other three
/// follow the same pattern with the x readouts.
///
/// Contrasts fitted from data that already carry an AC phase are reduced by
/// the phase spread (a factor `J0(a)` for an arcsine source of amplitude
/// `a`), so passing them in inflates the result by the inverse product.
pub fn covariances(moments: &MomentMatrix, c_r1: f64, c_r2: f64) -> Result<CovarianceEstimate> {
    for c in [c_r1, c_r2] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidContrast(c));
        }
    }
    if moments.n_sensors() != 2 {
        return Err(Error::InvalidArgument(
            "covariances need a two-sensor moment matrix".into(),
        ));
    }
    use ReadoutPhase::{PlusX as X, PlusY as Y};
    let norm = c_r1 * c_r2;
    Ok(CovarianceEstimate {
        xx: entry(moments, X, X, norm)?,
        xy: entry(moments, X, Y, norm)?,
        yx: entry(moments, Y, X, norm)?,
        yy: entry(moments, Y, Y, norm)?,
    })
}

/// `Cov(sin dphi1, sin dphi2)` of the phase fluctuations about the means.
///
/// With `(cos phi, sin phi) = R(mean) (cos dphi, sin dphi)`, the covariance
/// matrix of the fluctuations is `R(mean1)^T C R(mean2)`; its `yy` entry is
/// `s1 s2 C_xx - s1 c2 C_xy - c1 s2 C_yx + c1 c2 C_yy`.
pub fn covariance_of_correlated_phase(cov: &CovarianceEstimate, mean1: f64, mean2: f64) -> f64 {
    if mean1.abs() < ZERO_PHASE_THRESHOLD && mean2.abs() < ZERO_PHASE_THRESHOLD {
        return cov.yy.value;
    }
    let (s1, c1) = mean1.sin_cos();
    let (s2, c2) = mean2.sin_cos();
    s1 * s2 * cov.xx.value - s1 * c2 * cov.xy.value - c1 * s2 * cov.yx.value
        + c1 * c2 * cov.yy.value
}

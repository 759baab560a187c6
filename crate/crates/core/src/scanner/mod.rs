//! Scan orchestration and the inverse problems built on it.

mod calibrate;
mod sensitivity;

pub use calibrate::{
    fit_probe_geometry, synthesize_edge_scans, CalibrationSample, EdgeAxis, EdgeScan, FitOptions,
    FitValue, ProbeFitResult, ResidualRow, SensorGuess, SHIFT_COLUMNS,
};
pub use sensitivity::{
    estimate_sensitivity, multiplexing_gain, MultiplexingGain, OperationMode, SensitivityReport,
    SensitivitySettings,
};

use std::io::Write;

use rand::Rng;

use crate::demux::{
    covariances, demux_eight, mean_phases, n_sensor_mean_phases, CovarianceEstimate, PhaseEstimate,
};
use crate::fields::{arcsine_unit, FieldSource};
use crate::par::{map_indexed, Execution};
use crate::probe::{project_field, ProbePair};
use crate::rng::{domain_stream, stream};
use crate::spinmodel::{
    pair_schedule, simulate_pair_totals, simulate_shots, CountMatrix, MomentMatrix, PhaseSampler,
    RamseyConfig, ReadoutCombo, ScheduleKind, SensorReadout,
};
use crate::{Error, Result, Vec3};

/// Above this `f * tau` the quasi-static treatment of AC fields is doubtful.
pub const QUASI_STATIC_LIMIT: f64 = 0.01;

const PREDICTION_DOMAIN: u64 = 1;

/// Probe reference positions, nm. The repetition count per cell lives in
/// [`RamseyConfig::reps`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPath {
    pixels: Vec<Vec3>,
}

impl ScanPath {
    pub fn new(pixels: Vec<Vec3>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("scan path is empty".into()));
        }
        if pixels.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(
                "scan path has non-finite coordinates".into(),
            ));
        }
        Ok(Self { pixels })
    }

    /// `count` evenly spaced points from `start` to `stop` inclusive.
    pub fn line(start: Vec3, stop: Vec3, count: usize) -> Result<Self> {
        let pixels = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (stop - start) * (i as f64 / (count - 1) as f64))
                .collect(),
        };
        Self::new(pixels)
    }

    pub fn pixels(&self) -> &[Vec3] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Phases,
    Covariance,
    Both,
}

impl ScanMode {
    pub fn wants_covariance(self) -> bool {
        matches!(self, ScanMode::Covariance | ScanMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    pub ramsey: RamseyConfig,
    pub mode: ScanMode,
    pub schedule: ScheduleKind,
    /// Independent Gaussian phase noise per sensor and shot, rad.
    pub uncorrelated_sigma: [f64; 2],
    pub seed: u64,
    pub execution: Execution,
    /// Keep per-pixel count and moment matrices in the result.
    pub keep_counts: bool,
}

impl ScanSettings {
    pub fn new(ramsey: RamseyConfig, mode: ScanMode, seed: u64) -> Self {
        Self {
            ramsey,
            mode,
            schedule: ScheduleKind::Sixteen,
            uncorrelated_sigma: [0.0; 2],
            seed,
            execution: Execution::Parallel,
            keep_counts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelResult {
    pub position: Vec3,
    pub phases: [Option<PhaseEstimate>; 2],
    pub covariance: Option<CovarianceEstimate>,
    pub total_counts: f64,
    pub counts: Option<CountMatrix>,
    pub moments: Option<MomentMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub pixels: Vec<PixelResult>,
}

/// Per-shot phase model of both sensors at one probe position: static fields
/// set the means, every asynchronous AC source adds an arcsine component.
pub fn pixel_phase_model(
    probe: &ProbePair,
    sources: &[FieldSource],
    cfg: &RamseyConfig,
    pixel: Vec3,
    uncorrelated_sigma: [f64; 2],
) -> Result<PhaseSampler> {
    let k = cfg.phase_per_tesla();
    let mut mean = [0.0; 2];
    let mut correlated = Vec::new();
    for (i, s) in probe.sensors.iter().enumerate() {
        let r = pixel + s.position;
        let b: Vec3 = sources.iter().try_fold(Vec3::zeros(), |acc, src| {
            Ok::<_, Error>(acc + src.static_field(r)?)
        })?;
        mean[i] = k * project_field(&s.axis, b);
    }
    for src in sources {
        let mut amp = [0.0; 2];
        let mut any = false;
        for (i, s) in probe.sensors.iter().enumerate() {
            if let Some(b) = src.ac_amplitude(pixel + s.position)? {
                amp[i] = k * project_field(&s.axis, b);
                any = true;
            }
        }
        if any {
            correlated.push(amp);
        }
    }
    Ok(PhaseSampler {
        mean,
        correlated,
        uncorrelated_sigma,
    })
}

fn check_quasi_static(sources: &[FieldSource], tau: f64) {
    for f in sources.iter().filter_map(FieldSource::ac_frequency) {
        if f * tau >= QUASI_STATIC_LIMIT {
            log::warn!(
                "AC frequency {f} Hz with tau = {tau} s gives f*tau = {:.3e} >= {QUASI_STATIC_LIMIT}; \
                 the quasi-static phase model is not accurate here",
                f * tau
            );
        }
    }
}

/// Simulate the readout at every pixel of `path` and de-multiplex it.
///
/// Each pixel draws from its own stream `(seed, pixel index)`, so the result
/// is identical for any worker count.
pub fn run_scan(
    path: &ScanPath,
    probe: &ProbePair,
    sources: &[FieldSource],
    settings: &ScanSettings,
) -> Result<ScanResult> {
    let cfg = &settings.ramsey;
    check_quasi_static(sources, cfg.tau);
    let has_ac = sources.iter().any(|s| s.ac_frequency().is_some());
    if settings.mode.wants_covariance() {
        if !has_ac {
            return Err(Error::InvalidArgument(
                "covariance mode needs at least one asynchronous AC source".into(),
            ));
        }
        if settings.schedule == ScheduleKind::Eight {
            return Err(Error::InvalidArgument(
                "covariance estimation needs the full sixteen-combination schedule".into(),
            ));
        }
    }

    let models = path
        .pixels()
        .iter()
        .map(|&p| pixel_phase_model(probe, sources, cfg, p, settings.uncorrelated_sigma))
        .collect::<Result<Vec<_>>>()?;
    let readouts = [
        SensorReadout::new(&probe.sensors[0], cfg.tau),
        SensorReadout::new(&probe.sensors[1], cfg.tau),
    ];
    let schedule = pair_schedule(settings.schedule);

    let pixels = map_indexed(models.len(), settings.execution, |i| {
        simulate_pixel(
            path.pixels()[i],
            &models[i],
            &readouts,
            &schedule,
            settings,
            &mut stream(settings.seed, i as u64),
        )
    });
    Ok(ScanResult { pixels })
}

fn simulate_pixel<R: Rng>(
    position: Vec3,
    sampler: &PhaseSampler,
    readouts: &[SensorReadout; 2],
    schedule: &[ReadoutCombo],
    settings: &ScanSettings,
    rng: &mut R,
) -> PixelResult {
    let reps = settings.ramsey.reps;
    let (counts, moments) = if !settings.mode.wants_covariance() && sampler.is_static() {
        (
            simulate_pair_totals(reps, readouts, sampler.mean, schedule, rng),
            None,
        )
    } else {
        let m = simulate_shots(reps, readouts, sampler, schedule, rng);
        (m.counts(), Some(m))
    };

    let phases = match settings.schedule {
        ScheduleKind::Sixteen => mean_phases(&counts).map(|(a, b)| [a, b]),
        ScheduleKind::Eight => demux_eight(&counts).map(|(a, b)| [a, b]),
        ScheduleKind::NSensor => n_sensor_mean_phases(&counts).map(|v| [v[0], v[1]]),
    };
    let phases = match phases {
        Ok([a, b]) => [Some(a), Some(b)],
        Err(e) => {
            log::debug!("pixel at {position:?}: {e}");
            // one sensor may still be recoverable
            [
                crate::demux::sensor_phase(&counts, 0)
                    .ok()
                    .filter(|_| settings.schedule != ScheduleKind::Eight),
                crate::demux::sensor_phase(&counts, 1)
                    .ok()
                    .filter(|_| settings.schedule != ScheduleKind::Eight),
            ]
        }
    };

    let covariance = match (&moments, phases) {
        (Some(m), [Some(p1), Some(p2)]) if settings.mode.wants_covariance() => {
            match covariances(m, p1.contrast, p2.contrast) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::debug!("pixel at {position:?}: {e}");
                    None
                }
            }
        }
        _ => None,
    };

    PixelResult {
        position,
        phases,
        covariance,
        total_counts: counts.grand_total(),
        counts: settings.keep_counts.then(|| counts.clone()),
        moments: if settings.keep_counts { moments } else { None },
    }
}

/// Projected AC field amplitudes `(e1 . B1, e2 . B2)` at each pixel, tesla.
pub fn ac_projection_profiles(
    path: &ScanPath,
    probe: &ProbePair,
    sources: &[FieldSource],
) -> Result<Vec<[f64; 2]>> {
    path.pixels()
        .iter()
        .map(|&p| {
            let mut out = [0.0; 2];
            for src in sources {
                for (i, s) in probe.sensors.iter().enumerate() {
                    if let Some(b) = src.ac_amplitude(p + s.position)? {
                        out[i] += project_field(&s.axis, b);
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Projected fields recovered from a measured phase scan, tesla.
pub fn field_profiles_from_scan(result: &ScanResult, cfg: &RamseyConfig) -> Vec<[f64; 2]> {
    let k = cfg.phase_per_tesla();
    result
        .pixels
        .iter()
        .map(|p| [0, 1].map(|i| p.phases[i].map_or(f64::NAN, |e| e.phi / k)))
        .collect()
}

/// Monte Carlo prediction of `cov_yy` under an asynchronous AC drive.
///
/// `profiles` are per-pixel projected fields at a reference drive (e.g. a DC
/// scan); `ac_scaling` converts them to the AC peak amplitude. Per pixel,
/// arcsine factors `s` give `phi_i = gamma tau s B_i ac_scaling` and the
/// result is the sample mean of `sin(phi1) sin(phi2)`.
pub fn mc_covariance_prediction(
    profiles: &[[f64; 2]],
    ac_scaling: f64,
    cfg: &RamseyConfig,
    samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<f64>> {
    if samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo prediction needs at least 10^4 samples, got {samples}"
        )));
    }
    let k = cfg.phase_per_tesla() * ac_scaling;
    Ok(map_indexed(profiles.len(), execution, |i| {
        let [b1, b2] = profiles[i];
        let mut rng = domain_stream(seed, PREDICTION_DOMAIN, i as u64);
        let mut acc = 0.0;
        for _ in 0..samples {
            let s = arcsine_unit(&mut rng);
            acc += (k * s * b1).sin() * (k * s * b2).sin();
        }
        acc / samples as f64
    }))
}

/// Format with 9 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub const SCAN_CSV_HEADER: [&str; 15] = [
    "x_nm",
    "y_nm",
    "z_nm",
    "phi1_rad",
    "sig_phi1",
    "phi2_rad",
    "sig_phi2",
    "cr1",
    "cr2",
    "cov_xx",
    "cov_xy",
    "cov_yx",
    "cov_yy",
    "sig_cov_yy",
    "total_counts",
];

impl ScanResult {
    /// One header row, one row per pixel; absent values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SCAN_CSV_HEADER)
            .map_err(|e| Error::Csv(e.to_string()))?;
        for p in &self.pixels {
            let [a, b] = p.phases;
            let cov = p.covariance;
            let row = [
                fmt_sig(p.position.x),
                fmt_sig(p.position.y),
                fmt_sig(p.position.z),
                opt(a.map(|e| e.phi)),
                opt(a.map(|e| e.sigma)),
                opt(b.map(|e| e.phi)),
                opt(b.map(|e| e.sigma)),
                opt(a.map(|e| e.contrast)),
                opt(b.map(|e| e.contrast)),
                opt(cov.map(|c| c.xx.value)),
                opt(cov.map(|c| c.xy.value)),
                opt(cov.map(|c| c.yx.value)),
                opt(cov.map(|c| c.yy.value)),
                opt(cov.map(|c| c.yy.sigma)),
                fmt_sig(p.total_counts),
            ];
            w.write_record(&row)
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is ASCII"))
    }

    pub fn cov_yy(&self) -> Vec<Option<f64>> {
        self.pixels
            .iter()
            .map(|p| p.covariance.map(|c| c.yy.value))
            .collect()
    }
}

/// Count matrix rows: combination label, total, E, V.
pub fn write_counts_csv<W: Write>(
    counts: &CountMatrix,
    moments: Option<&MomentMatrix>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["combo", "total", "E", "V"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for (i, cell) in counts.cells().iter().enumerate() {
        let Some(cell) = cell else { continue };
        let var = moments.and_then(|m| m.cell(i)).map(|m| m.variance());
        let row = [
            ReadoutCombo::from_index(i).label(),
            fmt_sig(cell.total),
            fmt_sig(cell.rate()),
            opt(var),
        ];
        w.write_record(&row)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CurrentWaveform, FiniteWire};
    use crate::probe::{Dephasing, NvSensor, SensorAxis};

    fn probe() -> ProbePair {
        let s = |t: f64, p: f64, pos: Vec3| {
            NvSensor::new(
                SensorAxis::from_degrees(t, p).unwrap(),
                pos,
                1.0,
                0.8,
                Dephasing::Fixed(0.1),
            )
            .unwrap()
        };
        ProbePair::new(
            s(70.0, 0.0, Vec3::new(0.0, 0.0, 50.0)),
            s(75.0, 20.0, Vec3::new(150.0, 0.0, 60.0)),
        )
    }

    fn dc_wire(i: f64) -> FieldSource {
        FieldSource::Wire(
            FiniteWire::new(700.0, 0.0, Vec3::y(), CurrentWaveform::dc(i).unwrap()).unwrap(),
        )
    }

    fn ac_wire(i: f64) -> FieldSource {
        FieldSource::Wire(
            FiniteWire::new(
                700.0,
                0.0,
                Vec3::y(),
                CurrentWaveform::async_ac(i, 35_211.43).unwrap(),
            )
            .unwrap(),
        )
    }

    fn line(n: usize) -> ScanPath {
        ScanPath::line(Vec3::new(-1200.0, 0.0, 0.0), Vec3::new(1200.0, 0.0, 0.0), n).unwrap()
    }

    #[test]
    fn path_validation() {
        assert!(ScanPath::new(vec![]).is_err());
        assert!(ScanPath::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let l = line(5);
        assert_eq!(l.pixels()[2], Vec3::zeros());
    }

    #[test]
    fn null_experiment() {
        let cfg = RamseyConfig::new(250e-9, 20_000).unwrap();
        let settings = ScanSettings::new(cfg, ScanMode::Both, 3);
        // an AC source with zero amplitude keeps covariance mode legal
        let res = run_scan(&line(6), &probe(), &[ac_wire(0.0)], &settings).unwrap();
        for p in &res.pixels {
            for e in p.phases.iter().flatten() {
                assert!(e.phi.abs() < 4.0 * e.sigma);
            }
            let c = p.covariance.unwrap();
            for e in [c.xx, c.xy, c.yx, c.yy] {
                assert!(e.value.abs() < 4.5 * e.sigma);
            }
        }
    }

    #[test]
    fn covariance_mode_requires_ac() {
        let cfg = RamseyConfig::new(250e-9, 100).unwrap();
        let settings = ScanSettings::new(cfg, ScanMode::Covariance, 3);
        assert!(run_scan(&line(3), &probe(), &[dc_wire(1e-5)], &settings).is_err());
    }

    #[test]
    fn field_errors_propagate() {
        let cfg = RamseyConfig::new(250e-9, 100).unwrap();
        let settings = ScanSettings::new(cfg, ScanMode::Phases, 3);
        let below = ScanPath::new(vec![Vec3::new(0.0, 0.0, -100.0)]).unwrap();
        assert!(matches!(
            run_scan(&below, &probe(), &[dc_wire(1e-5)], &settings),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn dc_scan_follows_projected_wire_field_with_shift() {
        let cfg = RamseyConfig::new(250e-9, 1_000_000).unwrap();
        let settings = ScanSettings::new(cfg, ScanMode::Phases, 5);
        let pr = probe();
        let path = line(49);
        let src = [dc_wire(10e-6)];
        let res = run_scan(&path, &pr, &src, &settings).unwrap();
        let k = cfg.phase_per_tesla();
        for (px, p) in path.pixels().iter().zip(&res.pixels) {
            for i in 0..2 {
                let s = &pr.sensors[i];
                let want =
                    k * project_field(&s.axis, src[0].field_at(px + s.position, 0.0).unwrap());
                let e = p.phases[i].unwrap();
                assert!((e.phi - want).abs() < 4.0 * e.sigma, "sensor {i} at {px:?}");
            }
        }
        // sensor 2 sits 150 nm further along x, so its trace is shifted left
        let profile = field_profiles_from_scan(&res, &cfg);
        let argmax = |i: usize| {
            (0..profile.len())
                .max_by(|&a, &b| profile[a][i].total_cmp(&profile[b][i]))
                .unwrap()
        };
        let x1 = path.pixels()[argmax(0)].x;
        let x2 = path.pixels()[argmax(1)].x;
        assert!(x2 < x1, "peaks at {x1} and {x2}");
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let cfg = RamseyConfig::new(250e-9, 2_000).unwrap();
        let mut settings = ScanSettings::new(cfg, ScanMode::Both, 17);
        let src = [ac_wire(12e-6)];
        let a = run_scan(&line(8), &probe(), &src, &settings).unwrap();
        settings.execution = Execution::Sequential;
        let b = run_scan(&line(8), &probe(), &src, &settings).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    }

    #[test]
    fn mc_prediction_cases() {
        let cfg = RamseyConfig::new(250e-9, 1).unwrap();
        let k = cfg.phase_per_tesla();
        let a = 0.2;
        let b = a / k;
        let profiles = vec![[b, 0.0], [b, b], [b, -b]];
        let pred =
            mc_covariance_prediction(&profiles, 1.0, &cfg, 400_000, 1, Execution::Sequential)
                .unwrap();
        assert_eq!(pred[0], 0.0);
        // E[sin^2(a sin u)] = (1 - J0(2a)) / 2 by quadrature
        let oracle = (0..200_000)
            .map(|j| {
                ((a * (2.0 * std::f64::consts::PI * (j as f64 + 0.5) / 200_000.0).sin()).sin())
                    .powi(2)
            })
            .sum::<f64>()
            / 200_000.0;
        assert!((pred[1] - oracle).abs() < 0.01 * oracle);
        assert!(pred[2] < 0.0);
        assert!(
            mc_covariance_prediction(&profiles, 1.0, &cfg, 100, 1, Execution::Sequential).is_err()
        );
    }

    #[test]
    fn csv_layout() {
        let cfg = RamseyConfig::new(250e-9, 1000).unwrap();
        let settings = ScanSettings::new(cfg, ScanMode::Phases, 1);
        let res = run_scan(&line(3), &probe(), &[dc_wire(1e-5)], &settings).unwrap();
        let text = res.to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], SCAN_CSV_HEADER.join(","));
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 15);
        assert_eq!(fields[0], "-1.20000000e3");
        assert!(fields[9].is_empty());
    }
}

//! Probe geometry from ODMR line scans across two orthogonal stripe edges.
//!
//! Each sensor sees the edge field shifted by its own lateral offset and
//! lift, projected on its own axis. Fitting the two sensors independently
//! gives each axis, each apparent edge position and each lift; the relative
//! geometry follows from the differences.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::fields::{edge_field, StripeEdge};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::par::{map_indexed, Execution};
use crate::probe::{NvSensor, ProbePair, SensorAxis};
use crate::rng::domain_stream;
use crate::scanner::fmt_sig;
use crate::spinmodel::GAMMA_NV;
use crate::{Error, Result, Vec3};

pub const SHIFT_COLUMNS: [&str; 4] = [
    "df1_minus_mhz",
    "df1_plus_mhz",
    "df2_minus_mhz",
    "df2_plus_mhz",
];

const NOISE_DOMAIN: u64 = 5;
const BOOTSTRAP_DOMAIN: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeAxis {
    /// Scan along x across an edge whose normal is x.
    X,
    Y,
}

impl EdgeAxis {
    fn unit(self) -> Vec3 {
        match self {
            EdgeAxis::X => Vec3::x(),
            EdgeAxis::Y => Vec3::y(),
        }
    }

    fn component(self) -> usize {
        match self {
            EdgeAxis::X => 0,
            EdgeAxis::Y => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EdgeAxis::X => "x",
            EdgeAxis::Y => "y",
        }
    }
}

/// Transition shifts from the zero-field splitting along one scan, MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScan {
    pub axis: EdgeAxis,
    /// Probe reference coordinate along the scan axis, nm, edge at 0.
    pub positions: Vec<f64>,
    /// `[df1_minus, df1_plus, df2_minus, df2_plus]` per position.
    pub shifts: Vec<[f64; 4]>,
}

impl EdgeScan {
    pub fn new(axis: EdgeAxis, positions: Vec<f64>, shifts: Vec<[f64; 4]>) -> Result<Self> {
        if positions.len() != shifts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} shift rows",
                positions.len(),
                shifts.len()
            )));
        }
        if positions.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "{}-scan has {} points, at least 6 are needed",
                axis.label(),
                positions.len()
            )));
        }
        if positions
            .iter()
            .chain(shifts.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "scan contains non-finite values".into(),
            ));
        }
        Ok(Self {
            axis,
            positions,
            shifts,
        })
    }

    pub fn read_csv<R: Read>(axis: EdgeAxis, input: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| Error::InvalidArgument(format!("{name}: unreadable header: {e}")))?
            .clone();
        let want: Vec<&str> = std::iter::once("pos_nm").chain(SHIFT_COLUMNS).collect();
        if header.iter().collect::<Vec<_>>() != want {
            return Err(Error::InvalidArgument(format!(
                "{name}: header must be `{}`",
                want.join(",")
            )));
        }
        let mut positions = Vec::new();
        let mut shifts = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let row = row + 1;
            let rec = rec.map_err(|e| Error::InvalidArgument(format!("{name}: row {row}: {e}")))?;
            let mut v = [0.0; 5];
            for (slot, field) in v.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("{name}: row {row}: bad number `{field}`"))
                    })?;
            }
            positions.push(v[0]);
            shifts.push([v[1], v[2], v[3], v[4]]);
        }
        Self::new(axis, positions, shifts)
            .map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))
    }

    pub fn read_path(axis: EdgeAxis, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(axis, file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["pos_nm"];
        header.extend(SHIFT_COLUMNS);
        w.write_record(&header)
            .map_err(|e| Error::Csv(e.to_string()))?;
        for (p, s) in self.positions.iter().zip(&self.shifts) {
            let row: Vec<String> = std::iter::once(p).chain(s).map(|&v| fmt_sig(v)).collect();
            w.write_record(&row)
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// Magnetic stripe used for calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    /// `mu0 M t`, T nm.
    pub sheet_moment: f64,
    pub magnetization_sign: f64,
    /// Uniform bias field, T.
    pub bias: Vec3,
    /// Transition shift per tesla of projected field, MHz / T.
    pub mhz_per_tesla: f64,
}

impl CalibrationSample {
    pub fn new(sheet_moment: f64, bias: Vec3) -> Result<Self> {
        if !(sheet_moment > 0.0 && sheet_moment.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sheet moment must be positive, got {sheet_moment}"
            )));
        }
        Ok(Self {
            sheet_moment,
            magnetization_sign: 1.0,
            bias,
            mhz_per_tesla: GAMMA_NV / (2.0 * PI) * 1e-6,
        })
    }

    fn edge(&self, axis: EdgeAxis) -> StripeEdge {
        StripeEdge::new(0.0, axis.unit(), self.sheet_moment, self.magnetization_sign)
            .expect("validated in new")
    }

    /// `|e . B|` in MHz for a sensor at `offset` (nm) from the edge along the
    /// scan axis and `z` above it.
    fn splitting(&self, edge: &StripeEdge, axis: EdgeAxis, e: Vec3, offset: f64, z: f64) -> f64 {
        let mut r = Vec3::new(0.0, 0.0, z);
        r[axis.component()] = offset;
        let b = edge_field(edge, r)
            .map(|b| b + self.bias)
            .unwrap_or(Vec3::repeat(f64::NAN));
        self.mhz_per_tesla * e.dot(&b).abs()
    }
}

/// Simulated x and y edge scans of `probe`, with Gaussian noise of
/// `noise_mhz` on every transition.
pub fn synthesize_edge_scans(
    probe: &ProbePair,
    sample: &CalibrationSample,
    positions: &[f64],
    noise_mhz: f64,
    seed: u64,
) -> Result<[EdgeScan; 2]> {
    if !(noise_mhz >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {noise_mhz}"
        )));
    }
    let mut out = Vec::with_capacity(2);
    for (k, axis) in [EdgeAxis::X, EdgeAxis::Y].into_iter().enumerate() {
        let edge = sample.edge(axis);
        let mut rng = domain_stream(seed, NOISE_DOMAIN, k as u64);
        let noise = Normal::new(0.0, noise_mhz).expect("non-negative sigma");
        let mut shifts = Vec::with_capacity(positions.len());
        for &s in positions {
            let mut row = [0.0; 4];
            for (i, sensor) in probe.sensors.iter().enumerate() {
                let r = sensor.position;
                if r.z <= 0.0 {
                    return Err(Error::OutOfDomain(format!(
                        "sensor {} lift {} nm",
                        i + 1,
                        r.z
                    )));
                }
                let split = sample.splitting(
                    &edge,
                    axis,
                    sensor.axis.unit(),
                    s + r[axis.component()],
                    r.z,
                );
                row[2 * i] = -split + noise.sample(&mut rng);
                row[2 * i + 1] = split + noise.sample(&mut rng);
            }
            shifts.push(row);
        }
        out.push(EdgeScan::new(axis, positions.to_vec(), shifts)?);
    }
    let y = out.pop().expect("two scans");
    let x = out.pop().expect("two scans");
    Ok([x, y])
}

/// Starting point for one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGuess {
    pub theta_deg: f64,
    pub phi_deg: f64,
    /// Apparent edge position in the x scan, nm; minus the lateral x offset.
    pub edge_x: f64,
    pub edge_y: f64,
    pub z: f64,
}

impl SensorGuess {
    pub fn from_sensor(s: &NvSensor) -> Self {
        Self {
            theta_deg: s.axis.theta_deg(),
            phi_deg: s.axis.phi_deg(),
            edge_x: -s.position.x,
            edge_y: -s.position.y,
            z: s.position.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Residual bootstrap resamples; 0 skips uncertainty estimation.
    pub bootstrap: usize,
    pub seed: u64,
    pub execution: Execution,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bootstrap: 100,
            seed: 0,
            execution: Execution::Parallel,
            max_evals: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitValue {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub scan: EdgeAxis,
    pub position: f64,
    pub column: usize,
    pub measured: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFitResult {
    pub theta_deg: [FitValue; 2],
    pub phi_deg: [FitValue; 2],
    pub z_nm: [FitValue; 2],
    pub edge_x_nm: [FitValue; 2],
    pub edge_y_nm: [FitValue; 2],
    /// Sensor 2 minus sensor 1, nm.
    pub dx_nm: FitValue,
    pub dy_nm: FitValue,
    pub dz_nm: FitValue,
    pub residual_rms_mhz: f64,
    pub signal_rms_mhz: f64,
    pub evals: usize,
    pub residuals: Vec<ResidualRow>,
}

/// Per-sensor data in a flat layout: `(axis, position, sign, value)`.
#[derive(Clone)]
struct SensorData {
    points: Vec<(EdgeAxis, f64, f64, f64)>,
    columns: Vec<usize>,
}

impl SensorData {
    fn gather(scans: &[EdgeScan; 2], sensor: usize) -> Self {
        let mut points = Vec::new();
        let mut columns = Vec::new();
        for scan in scans {
            for (&p, row) in scan.positions.iter().zip(&scan.shifts) {
                for (k, sign) in [(0, -1.0), (1, 1.0)] {
                    let col = 2 * sensor + k;
                    points.push((scan.axis, p, sign, row[col]));
                    columns.push(col);
                }
            }
        }
        Self { points, columns }
    }

    fn with_values(&self, values: &[f64]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .zip(values)
                .map(|(&(a, p, s, _), &v)| (a, p, s, v))
                .collect(),
            columns: self.columns.clone(),
        }
    }
}

/// `[theta, phi, edge_x, edge_y, z]`, angles in radians.
type Params = [f64; 5];

fn axis_vector(p: &[f64]) -> Vec3 {
    let (st, ct) = p[0].sin_cos();
    let (sp, cp) = p[1].sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

struct Model<'a> {
    sample: &'a CalibrationSample,
    edges: [StripeEdge; 2],
}

impl<'a> Model<'a> {
    fn new(sample: &'a CalibrationSample) -> Self {
        Self {
            sample,
            edges: [sample.edge(EdgeAxis::X), sample.edge(EdgeAxis::Y)],
        }
    }

    fn predict(&self, p: &[f64], axis: EdgeAxis, pos: f64, sign: f64) -> f64 {
        let edge_pos = match axis {
            EdgeAxis::X => p[2],
            EdgeAxis::Y => p[3],
        };
        sign * self.sample.splitting(
            &self.edges[axis.component()],
            axis,
            axis_vector(p),
            pos - edge_pos,
            p[4],
        )
    }

    fn ssr(&self, data: &SensorData, p: &[f64]) -> f64 {
        if !(p[4] > 0.5) {
            return f64::MAX;
        }
        data.points
            .iter()
            .map(|&(a, pos, s, v)| (v - self.predict(p, a, pos, s)).powi(2))
            .sum()
    }
}

const SIMPLEX_SCALE: Params = [0.2, 0.3, 20.0, 20.0, 10.0];

fn fit_sensor(
    model: &Model,
    data: &SensorData,
    guess: &SensorGuess,
    opts: &FitOptions,
) -> Result<(Params, usize)> {
    let norm: f64 = data
        .points
        .iter()
        .map(|p| p.3 * p.3)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let objective = |p: &[f64]| model.ssr(data, p) / norm;

    // Multi-start over orientations; the lateral offsets and lift start at
    // the guess.
    let mut starts: Vec<Params> = vec![[
        guess.theta_deg.to_radians(),
        guess.phi_deg.to_radians(),
        guess.edge_x,
        guess.edge_y,
        guess.z,
    ]];
    for t in [10.0f64, 30.0, 50.0, 70.0, 90.0] {
        for k in 0..8 {
            starts.push([
                t.to_radians(),
                (45.0 * k as f64).to_radians(),
                guess.edge_x,
                guess.edge_y,
                guess.z,
            ]);
        }
    }
    let quick = NelderMeadOptions {
        max_evals: 1500,
        f_tol: 1e-8,
        restarts: 0,
    };
    let probes = map_indexed(starts.len(), opts.execution, |i| {
        nelder_mead(objective, &starts[i], &SIMPLEX_SCALE, &quick)
    });
    let mut evals: usize = probes.iter().map(|m| m.evals).sum();
    let best = probes
        .into_iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");

    let full = NelderMeadOptions {
        max_evals: opts.max_evals,
        f_tol: 1e-10,
        restarts: 4,
    };
    let m = nelder_mead(objective, &best.x, &SIMPLEX_SCALE, &full);
    evals += m.evals;
    if !m.converged {
        return Err(Error::FitFailed {
            iterations: m.evals,
            best: m.x,
            diagnostics: format!("normalized residual {:.3e}", m.f),
        });
    }
    let mut p: Params = m.x.try_into().expect("five parameters");
    canonicalize(&mut p);
    Ok((p, evals))
}

/// Fold the axis into the upper hemisphere and wrap phi.
fn canonicalize(p: &mut Params) {
    let axis = SensorAxis::from_vector(axis_vector(p))
        .expect("unit vector")
        .upper_hemisphere();
    p[0] = axis.theta();
    p[1] = axis.phi();
}

/// Polar angles of `p`'s axis after aligning it with `reference`, degrees.
fn aligned_angles(p: &Params, reference: Vec3) -> (f64, f64) {
    let mut e = axis_vector(p);
    if e.dot(&reference) < 0.0 {
        e = -e;
    }
    let theta = e.z.clamp(-1.0, 1.0).acos().to_degrees();
    (theta, e.y.atan2(e.x).to_degrees())
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn wrapped_spread(v: &[f64], center: f64) -> Vec<f64> {
    v.iter()
        .map(|&a| crate::probe::wrap_degrees(a - center))
        .collect()
}

/// Fit both sensors' axes, apparent edge positions and lifts.
pub fn fit_probe_geometry(
    scans: &[EdgeScan; 2],
    sample: &CalibrationSample,
    guess: &[SensorGuess; 2],
    opts: &FitOptions,
) -> Result<ProbeFitResult> {
    if scans[0].axis != EdgeAxis::X || scans[1].axis != EdgeAxis::Y {
        return Err(Error::InvalidArgument(
            "expected an x scan followed by a y scan".into(),
        ));
    }
    let model = Model::new(sample);
    let data = [SensorData::gather(scans, 0), SensorData::gather(scans, 1)];
    let mut fits = [[0.0; 5]; 2];
    let mut evals = 0;
    for i in 0..2 {
        let (p, e) = fit_sensor(&model, &data[i], &guess[i], opts)?;
        fits[i] = p;
        evals += e;
    }

    let predictions: [Vec<f64>; 2] = [0, 1].map(|i| {
        data[i]
            .points
            .iter()
            .map(|&(a, pos, s, _)| model.predict(&fits[i], a, pos, s))
            .collect()
    });
    let mut residuals = Vec::new();
    let mut ss_res = 0.0;
    let mut ss_sig = 0.0;
    for i in 0..2 {
        for (k, &(a, pos, _, v)) in data[i].points.iter().enumerate() {
            let model_v = predictions[i][k];
            ss_res += (v - model_v).powi(2);
            ss_sig += v * v;
            residuals.push(ResidualRow {
                scan: a,
                position: pos,
                column: data[i].columns[k],
                measured: v,
                model: model_v,
            });
        }
    }
    let n_points = residuals.len() as f64;

    let replicates = if opts.bootstrap >= 2 {
        Some(bootstrap(&model, &data, &predictions, &fits, opts)?)
    } else {
        None
    };

    let value = |v: f64, sigma: Option<f64>| FitValue { value: v, sigma };
    let mut theta_deg = [value(0.0, None); 2];
    let mut phi_deg = [value(0.0, None); 2];
    let mut z_nm = [value(0.0, None); 2];
    let mut edge_x_nm = [value(0.0, None); 2];
    let mut edge_y_nm = [value(0.0, None); 2];
    for i in 0..2 {
        let p = &fits[i];
        let reps = replicates
            .as_ref()
            .map(|r| r.iter().map(|pair| pair[i]).collect::<Vec<Params>>());
        let col = |k: usize| {
            reps.as_ref()
                .map(|r| std_dev(&r.iter().map(|p| p[k]).collect::<Vec<_>>()))
        };
        let (theta, phi) = (p[0].to_degrees(), p[1].to_degrees());
        let angle_sigma = reps.as_ref().map(|r| {
            let (t, f): (Vec<f64>, Vec<f64>) =
                r.iter().map(|q| aligned_angles(q, axis_vector(p))).unzip();
            (std_dev(&t), std_dev(&wrapped_spread(&f, phi)))
        });
        theta_deg[i] = value(theta, angle_sigma.map(|s| s.0));
        phi_deg[i] = value(phi, angle_sigma.map(|s| s.1));
        edge_x_nm[i] = value(p[2], col(2));
        edge_y_nm[i] = value(p[3], col(3));
        z_nm[i] = value(p[4], col(4));
    }
    // r_i = -edge_i laterally, so r2 - r1 = edge1 - edge2
    let delta = |f: &dyn Fn(&[Params; 2]) -> f64| {
        let sigma = replicates
            .as_ref()
            .map(|r| std_dev(&r.iter().map(f).collect::<Vec<_>>()));
        value(f(&fits), sigma)
    };
    Ok(ProbeFitResult {
        theta_deg,
        phi_deg,
        z_nm,
        edge_x_nm,
        edge_y_nm,
        dx_nm: delta(&|p| p[0][2] - p[1][2]),
        dy_nm: delta(&|p| p[0][3] - p[1][3]),
        dz_nm: delta(&|p| p[1][4] - p[0][4]),
        residual_rms_mhz: (ss_res / n_points).sqrt(),
        signal_rms_mhz: (ss_sig / n_points).sqrt(),
        evals,
        residuals,
    })
}

/// Residual bootstrap: resample each sensor's residuals onto its best-fit
/// curve and refit from the best fit.
fn bootstrap(
    model: &Model,
    data: &[SensorData; 2],
    predictions: &[Vec<f64>; 2],
    fits: &[Params; 2],
    opts: &FitOptions,
) -> Result<Vec<[Params; 2]>> {
    let resid: [Vec<f64>; 2] = [0, 1].map(|i| {
        data[i]
            .points
            .iter()
            .zip(&predictions[i])
            .map(|(p, m)| p.3 - m)
            .collect()
    });
    let out = map_indexed(opts.bootstrap, opts.execution, |b| -> Result<[Params; 2]> {
        let mut rng = domain_stream(opts.seed, BOOTSTRAP_DOMAIN, b as u64);
        let mut pair = [[0.0; 5]; 2];
        for i in 0..2 {
            let n = resid[i].len();
            let values: Vec<f64> = predictions[i]
                .iter()
                .map(|m| m + resid[i][rng.random_range(0..n)])
                .collect();
            let synthetic = data[i].with_values(&values);
            let norm: f64 = values
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .max(f64::MIN_POSITIVE);
            let objective = |p: &[f64]| model.ssr(&synthetic, p) / norm;
            let m = nelder_mead(
                objective,
                &fits[i],
                &SIMPLEX_SCALE.map(|s| 0.25 * s),
                &NelderMeadOptions {
                    max_evals: opts.max_evals,
                    f_tol: 1e-10,
                    restarts: 2,
                },
            );
            if !m.converged {
                return Err(Error::FitFailed {
                    iterations: m.evals,
                    best: m.x,
                    diagnostics: format!("bootstrap replicate {b}, sensor {}", i + 1),
                });
            }
            pair[i] = m.x.try_into().expect("five parameters");
        }
        Ok(pair)
    });
    out.into_iter().collect()
}

impl ProbeFitResult {
    pub fn axis(&self, sensor: usize) -> Result<SensorAxis> {
        SensorAxis::from_degrees(self.theta_deg[sensor].value, self.phi_deg[sensor].value)
    }

    /// `key = value` lines, with `± sigma` when a bootstrap was run.
    pub fn report(&self) -> String {
        let line = |key: &str, v: FitValue| match v.sigma {
            Some(s) => format!("{key} = {:.4} ± {:.4}\n", v.value, s),
            None => format!("{key} = {:.4}\n", v.value),
        };
        let mut out = String::new();
        for i in 0..2 {
            let n = i + 1;
            out += &line(&format!("theta{n}_deg"), self.theta_deg[i]);
            out += &line(&format!("phi{n}_deg"), self.phi_deg[i]);
            out += &line(&format!("z{n}_nm"), self.z_nm[i]);
            out += &line(&format!("edge{n}_x_nm"), self.edge_x_nm[i]);
            out += &line(&format!("edge{n}_y_nm"), self.edge_y_nm[i]);
        }
        out += &line("dx_nm", self.dx_nm);
        out += &line("dy_nm", self.dy_nm);
        out += &line("dz_nm", self.dz_nm);
        out += &format!("residual_rms_mhz = {:.6e}\n", self.residual_rms_mhz);
        out += &format!("signal_rms_mhz = {:.6e}\n", self.signal_rms_mhz);
        out
    }

    pub fn write_residuals_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scan",
            "pos_nm",
            "column",
            "measured_mhz",
            "model_mhz",
            "residual_mhz",
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
        for r in &self.residuals {
            w.write_record([
                r.scan.label().to_string(),
                fmt_sig(r.position),
                SHIFT_COLUMNS[r.column].to_string(),
                fmt_sig(r.measured),
                fmt_sig(r.model),
                fmt_sig(r.measured - r.model),
            ])
            .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

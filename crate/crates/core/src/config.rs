//! Flat INI-style run configuration.
//!
//! ```text
//! seed = 42
//!
//! [probe]
//! theta1_deg = 41
//! ...
//! [field]
//! kind = wire
//! ...
//! ```
//!
//! `key = value` lines, `#` or `;` comments, `[section]` headers. `[field]`
//! may repeat; every other section appears at most once. Unknown keys and
//! sections are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::fields::{CurrentWaveform, FieldSource, FiniteWire, StripeEdge, UniformField};
use crate::probe::{Dephasing, NvSensor, ProbePair, SensorAxis};
use crate::scanner::{CalibrationSample, ScanMode, ScanPath};
use crate::spinmodel::{FrequencyGrid, OdmrParams, RamseyConfig, ScheduleKind};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path, l, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Typed view over one section that records which keys were consumed.
struct Reader<'a> {
    path: &'a str,
    section: &'a Section,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(path: &'a str, section: &'a Section) -> Self {
        Self {
            path,
            section,
            used: Vec::new(),
        }
    }

    fn err(&self, line: usize, message: String) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            line: Some(line),
            message,
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Entry> {
        self.used.push(key);
        self.section.entries.get(key)
    }

    fn missing(&self, key: &str) -> ConfigError {
        self.err(
            self.section.line,
            format!("[{}] is missing required key `{key}`", self.section.name),
        )
    }

    fn opt_str(&mut self, key: &'static str) -> Option<(&'a str, usize)> {
        self.raw(key).map(|e| (e.value.as_str(), e.line))
    }

    fn str(&mut self, key: &'static str) -> CResult<(&'a str, usize)> {
        self.opt_str(key).ok_or_else(|| self.missing(key))
    }

    fn opt_f64(&mut self, key: &'static str) -> CResult<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| {
                    self.err(
                        e.line,
                        format!("`{key}` must be a finite number, got `{}`", e.value),
                    )
                }),
        }
    }

    fn f64(&mut self, key: &'static str) -> CResult<f64> {
        self.opt_f64(key)?.ok_or_else(|| self.missing(key))
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> CResult<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn opt_u64(&mut self, key: &'static str) -> CResult<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => parse_u64(&e.value).map(Some).ok_or_else(|| {
                self.err(
                    e.line,
                    format!("`{key}` must be a non-negative integer, got `{}`", e.value),
                )
            }),
        }
    }

    fn u64(&mut self, key: &'static str) -> CResult<u64> {
        self.opt_u64(key)?.ok_or_else(|| self.missing(key))
    }

    /// Check `result`, anchoring an error at `key`'s line.
    fn check<T>(&self, key: &str, result: crate::Result<T>) -> CResult<T> {
        result.map_err(|e| {
            let line = self
                .section
                .entries
                .get(key)
                .map_or(self.section.line, |e| e.line);
            self.err(line, e.to_string())
        })
    }

    fn finish(self) -> CResult<()> {
        for (key, entry) in &self.section.entries {
            if !self.used.contains(&key.as_str()) {
                return Err(self.err(
                    entry.line,
                    format!("unknown key `{key}` in [{}]", self.section.name),
                ));
            }
        }
        Ok(())
    }
}

/// Integers, with `1e6`-style shorthand accepted when it is exact.
fn parse_u64(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    if let Ok(v) = s.parse::<u64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 1.8e19).then_some(f as u64)
}

fn parse_sections(path: &str, text: &str) -> CResult<(Section, Vec<Section>)> {
    let mut top = Section {
        name: "top level".into(),
        line: 1,
        entries: BTreeMap::new(),
    };
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ConfigError {
            path: path.to_string(),
            line: Some(line),
            message,
        };
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(err(format!("unknown section [{name}]")));
            }
            if name != "field" && sections.iter().any(|s| s.name == name) {
                return Err(err(format!("section [{name}] appears twice")));
            }
            sections.push(Section {
                name,
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        let target = sections.last_mut().unwrap_or(&mut top);
        if target.entries.contains_key(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        target.entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok((top, sections))
}

const SECTIONS: [&str; 7] = [
    "probe",
    "field",
    "sequence",
    "scan",
    "output",
    "odmr",
    "calibration",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub ramsey: RamseyConfig,
    pub schedule: ScheduleKind,
    /// Per-shot overhead, s.
    pub overhead: f64,
    /// Independent Gaussian phase noise per sensor, rad.
    pub uncorrelated_sigma: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub path: ScanPath,
    pub mode: ScanMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrConfig {
    pub grid: FrequencyGrid,
    pub params: OdmrParams,
    /// Bias field, T.
    pub bias: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub sample: CalibrationSample,
    /// Noise on synthesized transition shifts, MHz.
    pub noise_mhz: f64,
    pub bootstrap: usize,
    /// Scan positions for synthesized edge scans, nm.
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub path: String,
    pub seed: u64,
    pub probe: ProbePair,
    pub fields: Vec<FieldSource>,
    pub sequence: Option<SequenceConfig>,
    pub scan: Option<ScanConfig>,
    pub output_dir: Option<PathBuf>,
    pub odmr: Option<OdmrConfig>,
    pub calibration: Option<CalibrationConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CResult<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: name.clone(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&name, &text)
    }

    pub fn parse(path: &str, text: &str) -> CResult<Self> {
        let (top, sections) = parse_sections(path, text)?;
        let mut r = Reader::new(path, &top);
        let seed = r.u64("seed").map_err(|_| ConfigError {
            path: path.to_string(),
            line: top.entries.get("seed").map(|e| e.line),
            message: "`seed` must be set at the top level to a non-negative integer".into(),
        })?;
        r.finish()?;

        let find = |name: &str| sections.iter().find(|s| s.name == name);
        let probe_section = find("probe").ok_or_else(|| ConfigError {
            path: path.to_string(),
            line: None,
            message: "missing section [probe]".into(),
        })?;
        let probe = parse_probe(path, probe_section)?;
        let fields = sections
            .iter()
            .filter(|s| s.name == "field")
            .map(|s| parse_field(path, s))
            .collect::<CResult<Vec<_>>>()?;
        let sequence = find("sequence")
            .map(|s| parse_sequence(path, s))
            .transpose()?;
        let scan = find("scan").map(|s| parse_scan(path, s)).transpose()?;
        let output_dir = find("output")
            .map(|s| parse_output(path, s))
            .transpose()?
            .flatten();
        let odmr = find("odmr").map(|s| parse_odmr(path, s)).transpose()?;
        let calibration = find("calibration")
            .map(|s| parse_calibration(path, s))
            .transpose()?;
        Ok(Self {
            path: path.to_string(),
            seed,
            probe,
            fields,
            sequence,
            scan,
            output_dir,
            odmr,
            calibration,
        })
    }

    fn missing(&self, section: &str) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: None,
            message: format!("missing section [{section}]"),
        }
    }

    pub fn require_sequence(&self) -> CResult<&SequenceConfig> {
        self.sequence
            .as_ref()
            .ok_or_else(|| self.missing("sequence"))
    }

    pub fn require_scan(&self) -> CResult<&ScanConfig> {
        self.scan.as_ref().ok_or_else(|| self.missing("scan"))
    }

    pub fn require_odmr(&self) -> CResult<&OdmrConfig> {
        self.odmr.as_ref().ok_or_else(|| self.missing("odmr"))
    }

    pub fn require_calibration(&self) -> CResult<&CalibrationConfig> {
        self.calibration
            .as_ref()
            .ok_or_else(|| self.missing("calibration"))
    }
}

fn parse_probe(path: &str, s: &Section) -> CResult<ProbePair> {
    let mut r = Reader::new(path, s);
    let angles = [
        (r.f64("theta1_deg")?, r.f64("phi1_deg")?),
        (r.f64("theta2_deg")?, r.f64("phi2_deg")?),
    ];
    let d = Vec3::new(r.f64("dx_nm")?, r.f64("dy_nm")?, r.f64("dz_nm")?);
    let z1 = r.f64("z1_nm")?;
    let c = [r.f64("c1")?, r.f64("c2")?];
    let eps = [r.f64("eps1")?, r.f64("eps2")?];
    let zeta = [r.opt_f64("zeta1")?, r.opt_f64("zeta2")?];
    let t2 = [r.opt_f64("t2star1_ns")?, r.opt_f64("t2star2_ns")?];
    let exponent = r.f64_or("zeta_exponent", 2.0)?;
    let f = [
        [r.opt_f64("f1a_mhz")?, r.opt_f64("f1b_mhz")?],
        [r.opt_f64("f2a_mhz")?, r.opt_f64("f2b_mhz")?],
    ];
    let positions = [Vec3::new(0.0, 0.0, z1), Vec3::new(d.x, d.y, z1 + d.z)];

    let mut sensors = Vec::with_capacity(2);
    for i in 0..2 {
        let n = i + 1;
        let dephasing = match (zeta[i], t2[i]) {
            (Some(z), None) => Dephasing::Fixed(z),
            (None, Some(t)) => Dephasing::Stretched {
                t2_star: t * 1e-9,
                exponent,
            },
            (Some(_), Some(_)) => {
                return Err(r.err(
                    s.line,
                    format!("give either zeta{n} or t2star{n}_ns, not both"),
                ));
            }
            (None, None) => return Err(r.missing(&format!("zeta{n}"))),
        };
        let axis = r.check(
            &format!("theta{n}_deg"),
            SensorAxis::from_degrees(angles[i].0, angles[i].1),
        )?;
        let sensor = r.check(
            &format!("c{n}"),
            NvSensor::new(axis, positions[i], c[i], eps[i], dephasing),
        )?;
        let sensor = match f[i] {
            [Some(a), Some(b)] => sensor.with_transitions([a, b]),
            [None, None] => sensor,
            _ => {
                return Err(r.err(
                    s.line,
                    format!("give both f{n}a_mhz and f{n}b_mhz or neither"),
                ))
            }
        };
        sensors.push(sensor);
    }
    if z1 <= 0.0 || z1 + d.z <= 0.0 {
        return Err(r.err(
            s.line,
            "both sensors must sit above the sample (z1_nm > 0, z1_nm + dz_nm > 0)".into(),
        ));
    }
    r.finish()?;
    let s2 = sensors.pop().expect("two sensors");
    let s1 = sensors.pop().expect("two sensors");
    Ok(ProbePair::new(s1, s2))
}

fn parse_direction(r: &Reader, value: &str, line: usize) -> CResult<Vec3> {
    match value {
        "x" | "+x" => Ok(Vec3::x()),
        "-x" => Ok(-Vec3::x()),
        "y" | "+y" => Ok(Vec3::y()),
        "-y" => Ok(-Vec3::y()),
        other => Err(r.err(
            line,
            format!("direction must be one of x, -x, y, -y; got `{other}`"),
        )),
    }
}

fn parse_field(path: &str, s: &Section) -> CResult<FieldSource> {
    let mut r = Reader::new(path, s);
    let (kind, kind_line) = r.str("kind")?;
    let source = match kind {
        "uniform" => {
            let b = Vec3::new(
                r.f64_or("bx_mt", 0.0)?,
                r.f64_or("by_mt", 0.0)?,
                r.f64_or("bz_mt", 0.0)?,
            ) * 1e-3;
            FieldSource::Uniform(UniformField { b })
        }
        "edge" => {
            let (n, line) = r.str("normal")?;
            let normal = parse_direction(&r, n, line)?;
            let pos = r.f64_or("position_nm", 0.0)?;
            let moment = r.f64("sheet_moment_mtnm")? * 1e-3;
            let sign = r.f64_or("sign", 1.0)?;
            FieldSource::Edge(r.check(
                "sheet_moment_mtnm",
                StripeEdge::new(pos, normal, moment, sign),
            )?)
        }
        "wire" => {
            let (d, line) = r.str("direction")?;
            let direction = parse_direction(&r, d, line)?;
            let width = r.f64("width_nm")?;
            let center = r.f64_or("center_nm", 0.0)?;
            let current = r.f64("current_ma")? * 1e-3;
            let (drive, drive_line) = r.opt_str("drive").unwrap_or(("dc", s.line));
            let waveform = match drive {
                "dc" => {
                    if r.opt_f64("frequency_khz")?.is_some() {
                        return Err(r.err(drive_line, "frequency_khz needs drive = ac".into()));
                    }
                    r.check("current_ma", CurrentWaveform::dc(current))?
                }
                "ac" => {
                    let f = r.f64("frequency_khz")? * 1e3;
                    r.check("frequency_khz", CurrentWaveform::async_ac(current, f))?
                }
                other => {
                    return Err(r.err(drive_line, format!("drive must be dc or ac, got `{other}`")))
                }
            };
            FieldSource::Wire(r.check(
                "width_nm",
                FiniteWire::new(width, center, direction, waveform),
            )?)
        }
        other => {
            return Err(r.err(
                kind_line,
                format!("field kind must be uniform, edge or wire; got `{other}`"),
            ));
        }
    };
    r.finish()?;
    Ok(source)
}

fn parse_sequence(path: &str, s: &Section) -> CResult<SequenceConfig> {
    let mut r = Reader::new(path, s);
    let tau = r.f64("tau_ns")? * 1e-9;
    let reps = r.u64("n_shots")?;
    let ramsey = r.check("tau_ns", RamseyConfig::new(tau, reps))?;
    let schedule = match r.opt_str("schedule") {
        None | Some(("sixteen", _)) => ScheduleKind::Sixteen,
        Some(("eight", _)) => ScheduleKind::Eight,
        Some(("n_sensor", _)) => ScheduleKind::NSensor,
        Some((other, line)) => {
            return Err(r.err(
                line,
                format!("schedule must be sixteen, eight or n_sensor; got `{other}`"),
            ));
        }
    };
    let overhead = r.f64_or("overhead_ns", 3000.0)? * 1e-9;
    let sigma = [r.f64_or("sigma1_rad", 0.0)?, r.f64_or("sigma2_rad", 0.0)?];
    if overhead < 0.0 || sigma.iter().any(|&v| v < 0.0) {
        return Err(r.err(
            s.line,
            "overhead and noise levels must be non-negative".into(),
        ));
    }
    r.finish()?;
    Ok(SequenceConfig {
        ramsey,
        schedule,
        overhead,
        uncorrelated_sigma: sigma,
    })
}

fn parse_scan(path: &str, s: &Section) -> CResult<ScanConfig> {
    let mut r = Reader::new(path, s);
    let lift = r.f64_or("lift_nm", 0.0)?;
    let start = Vec3::new(r.f64("start_x_nm")?, r.f64_or("start_y_nm", 0.0)?, lift);
    let stop = Vec3::new(r.f64("stop_x_nm")?, r.f64_or("stop_y_nm", 0.0)?, lift);
    let pixels = r.u64("pixels")? as usize;
    let path_ = r.check("pixels", ScanPath::line(start, stop, pixels))?;
    let mode = match r.opt_str("mode") {
        None | Some(("phases", _)) => ScanMode::Phases,
        Some(("covariance", _)) => ScanMode::Covariance,
        Some(("both", _)) => ScanMode::Both,
        Some((other, line)) => {
            return Err(r.err(
                line,
                format!("mode must be phases, covariance or both; got `{other}`"),
            ));
        }
    };
    r.finish()?;
    Ok(ScanConfig { path: path_, mode })
}

fn parse_output(path: &str, s: &Section) -> CResult<Option<PathBuf>> {
    let mut r = Reader::new(path, s);
    let dir = r.opt_str("directory").map(|(d, _)| PathBuf::from(d));
    if let Some((formats, line)) = r.opt_str("formats") {
        if formats.split(',').any(|f| f.trim() != "csv") {
            return Err(r.err(
                line,
                format!("only csv output is supported, got `{formats}`"),
            ));
        }
    }
    r.finish()?;
    Ok(dir)
}

fn parse_odmr(path: &str, s: &Section) -> CResult<OdmrConfig> {
    let mut r = Reader::new(path, s);
    let grid = FrequencyGrid::new(r.f64("start_mhz")?, r.f64("stop_mhz")?, r.f64("step_mhz")?);
    let grid = r.check("start_mhz", grid)?;
    let defaults = OdmrParams::default();
    let params = OdmrParams {
        d0_mhz: r.f64_or("d0_mhz", defaults.d0_mhz)?,
        width_mhz: r.f64_or("dip_width_mhz", defaults.width_mhz)?,
        depth: r.f64_or("dip_depth", defaults.depth)?,
        gamma: defaults.gamma,
    };
    if !(params.width_mhz > 0.0 && (0.0..=1.0).contains(&params.depth)) {
        return Err(r.err(
            s.line,
            "dip width must be positive and depth within [0, 1]".into(),
        ));
    }
    let bias = Vec3::new(
        r.f64_or("bias_x_mt", 0.0)?,
        r.f64_or("bias_y_mt", 0.0)?,
        r.f64_or("bias_z_mt", 0.0)?,
    ) * 1e-3;
    r.finish()?;
    Ok(OdmrConfig { grid, params, bias })
}

fn parse_calibration(path: &str, s: &Section) -> CResult<CalibrationConfig> {
    let mut r = Reader::new(path, s);
    let moment = r.f64("sheet_moment_mtnm")? * 1e-3;
    let bias = Vec3::new(
        r.f64_or("bias_x_mt", 0.0)?,
        r.f64_or("bias_y_mt", 0.0)?,
        r.f64_or("bias_z_mt", 0.0)?,
    ) * 1e-3;
    let sample = r.check("sheet_moment_mtnm", CalibrationSample::new(moment, bias))?;
    let noise_mhz = r.f64_or("noise_mhz", 0.3)?;
    let bootstrap = r.opt_u64("bootstrap")?.unwrap_or(100) as usize;
    let start = r.f64_or("start_nm", -600.0)?;
    let stop = r.f64_or("stop_nm", 600.0)?;
    let step = r.f64_or("step_nm", 10.0)?;
    if !(step > 0.0 && stop > start) || noise_mhz < 0.0 {
        return Err(r.err(
            s.line,
            "scan range needs start_nm < stop_nm, step_nm > 0 and noise_mhz >= 0".into(),
        ));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let positions = (0..count).map(|k| start + step * k as f64).collect();
    r.finish()?;
    Ok(CalibrationConfig {
        sample,
        noise_mhz,
        bootstrap,
        positions,
    })
}

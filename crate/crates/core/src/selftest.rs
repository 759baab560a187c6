//! Fast invariant suite behind `nvmux selftest`.

use std::f64::consts::PI;

use crate::demux::{covariances, mean_phases, PhaseEstimate};
use crate::par::{map_indexed, Execution};
use crate::probe::{Dephasing, NvSensor, SensorAxis};
use crate::rng::domain_stream;
use crate::spinmodel::{
    expected_matrix, pair_schedule, simulate_shots, CountMatrix, PhaseSampler, RamseyConfig,
    ScheduleKind, SensorReadout,
};
use crate::{Result, Vec3};

/// Mean-phase estimator under test.
pub type PhaseDemux = fn(&CountMatrix) -> Result<(PhaseEstimate, PhaseEstimate)>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn sensor(c: f64, eps: f64, zeta: f64) -> NvSensor {
    NvSensor::new(
        SensorAxis::from_degrees(0.0, 0.0).expect("finite"),
        Vec3::new(0.0, 0.0, 50.0),
        c,
        eps,
        Dephasing::Fixed(zeta),
    )
    .expect("valid sensor")
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn round_trip(demux: PhaseDemux) -> CheckResult {
    let cfg = RamseyConfig::new(250e-9, 1_000_000).expect("valid");
    let sensors = [sensor(0.1, 0.2, 0.7), sensor(0.12, 0.25, 0.5)];
    let grid: Vec<f64> = (0..16)
        .map(|k| -PI + 2.0 * PI * (k as f64 + 1.0) / 16.0)
        .collect();
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for &a in &grid {
        for &b in &grid {
            let m = expected_matrix(&cfg, &sensors, &[a, b]).expect("two sensors");
            match demux(&m) {
                Ok((p1, p2)) => {
                    worst = worst
                        .max(wrap(p1.phi - a).abs())
                        .max(wrap(p2.phi - b).abs())
                }
                Err(e) => failure = Some(format!("({a:.3}, {b:.3}): {e}")),
            }
        }
    }
    let passed = failure.is_none() && worst < 1e-9;
    CheckResult {
        name: "phase round trip",
        passed,
        detail: failure
            .unwrap_or_else(|| format!("max error {worst:.3e} rad over 256 phase pairs")),
    }
}

fn poisson_identity(seed: u64) -> CheckResult {
    let readouts = [
        SensorReadout::new(&sensor(0.1, 0.2, 0.7), 0.0),
        SensorReadout::new(&sensor(0.1, 0.2, 0.7), 0.0),
    ];
    let schedule = pair_schedule(ScheduleKind::Sixteen);
    let trials = 8;
    let outside: usize = map_indexed(trials, Execution::Parallel, |t| {
        let mut rng = domain_stream(seed, 10, t as u64);
        let m = simulate_shots(
            20_000,
            &readouts,
            &PhaseSampler::fixed([0.3, -1.2]),
            &schedule,
            &mut rng,
        );
        m.cells()
            .iter()
            .flatten()
            .filter(|c| c.excess_variance().abs() > 5.0 * c.excess_variance_sampling_var().sqrt())
            .count()
    })
    .into_iter()
    .sum();
    let total = trials * 16;
    CheckResult {
        name: "Poisson V = E",
        passed: outside * 100 <= total,
        detail: format!("{outside} of {total} combinations beyond 5 standard errors"),
    }
}

fn dual_forms(seed: u64, demux: PhaseDemux) -> CheckResult {
    let bright = sensor(3.0, 1.0, 0.0);
    let readouts = [
        SensorReadout::new(&bright, 0.0),
        SensorReadout::new(&bright, 0.0),
    ];
    let schedule = pair_schedule(ScheduleKind::Sixteen);
    let sampler = PhaseSampler {
        mean: [0.0; 2],
        correlated: vec![[0.4, 0.4]],
        uncorrelated_sigma: [0.0; 2],
    };
    let mut rng = domain_stream(seed, 11, 0);
    let m = simulate_shots(40_000, &readouts, &sampler, &schedule, &mut rng);
    let (p1, p2) = match demux(&m.counts()) {
        Ok(p) => p,
        Err(e) => {
            return CheckResult {
                name: "covariance dual forms",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let cov = match covariances(&m, p1.contrast, p2.contrast) {
        Ok(c) => c,
        Err(e) => {
            return CheckResult {
                name: "covariance dual forms",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let worst = [cov.xx, cov.xy, cov.yx, cov.yy]
        .iter()
        .map(|e| e.form_disagreement())
        .fold(0.0, f64::max);
    // correlated noise along sin on both sensors must show up as positive yy
    let signal = cov.yy.value / cov.yy.sigma;
    CheckResult {
        name: "covariance dual forms",
        passed: worst < 4.0 && signal > 5.0,
        detail: format!("max form disagreement {worst:.2} sigma, cov_yy at {signal:.1} sigma"),
    }
}

/// Run every check with the library's own estimator.
pub fn run_selftest(seed: u64) -> SelftestReport {
    run_selftest_with(mean_phases, seed)
}

/// Run every check with `demux` standing in for the mean-phase estimator.
pub fn run_selftest_with(demux: PhaseDemux, seed: u64) -> SelftestReport {
    SelftestReport {
        checks: vec![
            round_trip(demux),
            poisson_identity(seed),
            dual_forms(seed, demux),
        ],
    }
}

//! Phase and field sensitivity of sequential versus multiplexed operation.

use std::f64::consts::PI;

use crate::demux::{mean_phases, sensor_phase, PhaseEstimate};
use crate::par::{map_indexed, Execution};
use crate::probe::ProbePair;
use crate::rng::domain_stream;
use crate::spinmodel::{
    pair_schedule, simulate_pair_totals, simulate_totals, RamseyConfig, ReadoutPhase, ScheduleKind,
    SensorReadout,
};
use crate::{Error, Result};

const MULTIPLEXED_DOMAIN: u64 = 3;
const SEQUENTIAL_DOMAIN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperationMode {
    /// Each sensor gets half the shots with four readouts; the other sensor
    /// is illuminated but not driven and adds its bright-state photons.
    Sequential,
    /// Both sensors driven in every shot over the sixteen combinations.
    Multiplexed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivitySettings {
    /// `reps` is the count per combination in multiplexed mode; sequential
    /// mode uses the same total number of shots.
    pub ramsey: RamseyConfig,
    /// Initialization and readout time added to every shot, s.
    pub overhead: f64,
    pub trials: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl SensitivitySettings {
    pub fn new(ramsey: RamseyConfig, trials: usize, seed: u64) -> Self {
        Self {
            ramsey,
            overhead: 3e-6,
            trials,
            seed,
            execution: Execution::Parallel,
        }
    }

    fn total_time(&self) -> f64 {
        16.0 * self.ramsey.reps as f64 * (self.ramsey.tau + self.overhead)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub mode: OperationMode,
    /// Spread of the phase estimates over trials, rad.
    pub phase_sigma: [f64; 2],
    /// Mean propagated standard error, rad.
    pub predicted_sigma: [f64; 2],
    /// Field uncertainty per experiment, T.
    pub field_sigma: [f64; 2],
    /// Per-sensor sensitivity, T / sqrt(Hz).
    pub per_sensor: [f64; 2],
    /// Inverse-variance combination of both sensors, T / sqrt(Hz).
    pub combined: f64,
    /// Duration of one experiment, s.
    pub total_time: f64,
    /// Trials where a sensor's phase was indeterminate.
    pub failures: [usize; 2],
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn run_trial(
    probe: &ProbePair,
    phases: [f64; 2],
    settings: &SensitivitySettings,
    mode: OperationMode,
    trial: usize,
) -> [Option<PhaseEstimate>; 2] {
    let cfg = &settings.ramsey;
    let readouts = [0, 1].map(|i| SensorReadout::new(&probe.sensors[i], cfg.tau));
    match mode {
        OperationMode::Multiplexed => {
            let mut rng = domain_stream(settings.seed, MULTIPLEXED_DOMAIN, trial as u64);
            let counts = simulate_pair_totals(
                cfg.reps,
                &readouts,
                phases,
                &pair_schedule(ScheduleKind::Sixteen),
                &mut rng,
            );
            match mean_phases(&counts) {
                Ok((a, b)) => [Some(a), Some(b)],
                Err(_) => [sensor_phase(&counts, 0).ok(), sensor_phase(&counts, 1).ok()],
            }
        }
        OperationMode::Sequential => [0, 1].map(|i| {
            let idle = SensorReadout::idle(&probe.sensors[1 - i]);
            let own = SensorReadout {
                baseline: readouts[i].baseline + idle.baseline,
                half_amplitude: readouts[i].half_amplitude,
            };
            let mut rng = domain_stream(settings.seed, SEQUENTIAL_DOMAIN, (2 * trial + i) as u64);
            let schedule: Vec<Vec<ReadoutPhase>> =
                ReadoutPhase::ALL.iter().map(|&p| vec![p]).collect();
            let counts = simulate_totals(2 * cfg.reps, &[own], &[phases[i]], &schedule, &mut rng)
                .expect("one sensor is in range");
            sensor_phase(&counts, 0).ok()
        }),
    }
}

/// Monte Carlo sensitivity at fixed mean phases over `settings.trials`
/// independent experiments of equal total duration.
pub fn estimate_sensitivity(
    probe: &ProbePair,
    phases: [f64; 2],
    settings: &SensitivitySettings,
    mode: OperationMode,
) -> Result<SensitivityReport> {
    if settings.trials < 2 {
        return Err(Error::InvalidArgument(
            "sensitivity needs at least two trials".into(),
        ));
    }
    if !(settings.overhead >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "overhead must be non-negative, got {}",
            settings.overhead
        )));
    }
    let results = map_indexed(settings.trials, settings.execution, |t| {
        run_trial(probe, phases, settings, mode, t)
    });

    let mut phase_sigma = [f64::INFINITY; 2];
    let mut predicted_sigma = [f64::INFINITY; 2];
    let mut failures = [0; 2];
    for i in 0..2 {
        let ok: Vec<PhaseEstimate> = results.iter().filter_map(|r| r[i]).collect();
        failures[i] = settings.trials - ok.len();
        if ok.len() < 2 || 2 * failures[i] > settings.trials {
            continue;
        }
        let n = ok.len() as f64;
        let d: Vec<f64> = ok.iter().map(|e| wrap(e.phi - phases[i])).collect();
        let mean = d.iter().sum::<f64>() / n;
        phase_sigma[i] = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        predicted_sigma[i] = ok.iter().map(|e| e.sigma).sum::<f64>() / n;
    }

    let k = settings.ramsey.phase_per_tesla();
    let total_time = settings.total_time();
    let field_sigma = phase_sigma.map(|s| s / k);
    let per_sensor = field_sigma.map(|s| s * total_time.sqrt());
    let inv: f64 = per_sensor.iter().map(|e| e.powi(-2)).sum();
    Ok(SensitivityReport {
        mode,
        phase_sigma,
        predicted_sigma,
        field_sigma,
        per_sensor,
        combined: inv.powf(-0.5),
        total_time,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexingGain {
    pub sequential: SensitivityReport,
    pub multiplexed: SensitivityReport,
    /// `eta_sequential / eta_multiplexed` per sensor.
    pub per_sensor_ratio: [f64; 2],
    /// The same ratio for the combined sensitivities.
    pub combined_ratio: f64,
}

/// Sequential against multiplexed operation at equal total duration.
pub fn multiplexing_gain(
    probe: &ProbePair,
    phases: [f64; 2],
    settings: &SensitivitySettings,
) -> Result<MultiplexingGain> {
    let sequential = estimate_sensitivity(probe, phases, settings, OperationMode::Sequential)?;
    let multiplexed = estimate_sensitivity(probe, phases, settings, OperationMode::Multiplexed)?;
    Ok(MultiplexingGain {
        per_sensor_ratio: [0, 1].map(|i| sequential.per_sensor[i] / multiplexed.per_sensor[i]),
        combined_ratio: sequential.combined / multiplexed.combined,
        sequential,
        multiplexed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{Dephasing, NvSensor, SensorAxis};
    use crate::Vec3;

    fn probe(eps2: f64) -> ProbePair {
        let s = |eps: f64| {
            NvSensor::new(
                SensorAxis::from_degrees(0.0, 0.0).unwrap(),
                Vec3::new(0.0, 0.0, 50.0),
                0.1,
                eps,
                Dephasing::Fixed(0.7),
            )
            .unwrap()
        };
        ProbePair::new(s(0.2), s(eps2))
    }

    fn bright() -> ProbePair {
        let s = NvSensor::new(
            SensorAxis::from_degrees(0.0, 0.0).unwrap(),
            Vec3::new(0.0, 0.0, 50.0),
            1.0,
            0.8,
            Dephasing::Fixed(0.1),
        )
        .unwrap();
        ProbePair::new(s.clone(), s)
    }

    #[test]
    fn field_sigma_scales_as_inverse_root_shots() {
        let phases = [0.4, -0.9];
        let ns = [10_000u64, 100_000, 1_000_000];
        let reports: Vec<SensitivityReport> = ns
            .iter()
            .map(|&n| {
                let s = SensitivitySettings::new(RamseyConfig::new(250e-9, n).unwrap(), 3000, 9);
                estimate_sensitivity(&bright(), phases, &s, OperationMode::Multiplexed).unwrap()
            })
            .collect();
        // least-squares slope of log sigma_B against log n
        let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = reports.iter().map(|r| r.field_sigma[0].ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() < 0.02, "slope {slope}");
        for r in &reports {
            assert!((r.phase_sigma[0] / r.predicted_sigma[0] - 1.0).abs() < 0.08);
        }
        // the sensitivity itself does not depend on the shot count
        assert!((reports[2].per_sensor[0] / reports[0].per_sensor[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn multiplexing_beats_sequential() {
        let s = SensitivitySettings::new(RamseyConfig::new(250e-9, 200_000).unwrap(), 2000, 4);
        let g = multiplexing_gain(&probe(0.2), [0.3, 1.1], &s).unwrap();
        for r in g.per_sensor_ratio.into_iter().chain([g.combined_ratio]) {
            assert!(r > 1.25 && r < 1.65, "ratio {r}");
        }
    }

    #[test]
    fn dead_sensor_drops_out_of_combination() {
        let s = SensitivitySettings::new(RamseyConfig::new(250e-9, 200_000).unwrap(), 300, 2);
        let r =
            estimate_sensitivity(&probe(0.0), [0.3, 0.3], &s, OperationMode::Multiplexed).unwrap();
        assert!(r.phase_sigma[1] > 10.0 * r.phase_sigma[0]);
        assert!((r.combined / r.per_sensor[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_settings() {
        let mut s = SensitivitySettings::new(RamseyConfig::new(250e-9, 10).unwrap(), 1, 2);
        assert!(
            estimate_sensitivity(&probe(0.2), [0.0; 2], &s, OperationMode::Sequential).is_err()
        );
        s.trials = 10;
        s.overhead = -1.0;
        assert!(
            estimate_sensitivity(&probe(0.2), [0.0; 2], &s, OperationMode::Sequential).is_err()
        );
    }
}

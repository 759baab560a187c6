//! Ramsey phase accumulation, the summed photon-count model and shot sampling.
//!
//! Per readout, sensor `i` emits on average
//! `c_i (1 - eps_i / 2 [1 + exp(-zeta_i) cos(phi_i + Phi_i)])` photons; all
//! sensors share one detector, so a shot is a single Poisson draw on the sum.

mod odmr;
mod readout;

pub use odmr::{odmr_spectrum, FrequencyGrid, OdmrParams, OdmrSpectrum};
pub use readout::{
    cell_count, cell_index, cell_phases, n_sensor_schedule, pair_schedule, CountCell, CountMatrix,
    MomentMatrix, ReadoutCombo, ReadoutPhase, ScheduleKind, ShotMoments, MAX_SENSORS,
};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::fields::arcsine_unit;
use crate::probe::NvSensor;
use crate::{Error, Result};

/// NV gyromagnetic ratio, rad / (s T).
pub const GAMMA_NV: f64 = 2.0 * std::f64::consts::PI * 28.0e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamseyConfig {
    /// Phase accumulation time, s.
    pub tau: f64,
    /// Repetitions per phase combination.
    pub reps: u64,
    /// Gyromagnetic ratio, rad / (s T).
    pub gamma: f64,
}

impl RamseyConfig {
    pub fn new(tau: f64, reps: u64) -> Result<Self> {
        Self::with_gamma(tau, reps, GAMMA_NV)
    }

    pub fn with_gamma(tau: f64, reps: u64, gamma: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        if reps == 0 {
            return Err(Error::InvalidArgument(
                "repetitions must be at least 1".into(),
            ));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self { tau, reps, gamma })
    }

    /// Phase per tesla of projected field.
    pub fn phase_per_tesla(&self) -> f64 {
        self.gamma * self.tau
    }
}

/// `gamma * tau * B`.
pub fn accumulate_phase(cfg: &RamseyConfig, b_projected: f64) -> f64 {
    cfg.gamma * cfg.tau * b_projected
}

/// One sensor's per-shot emission, reduced to `baseline - half_amplitude * cos(phi + Phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReadout {
    /// `c (1 - eps / 2)`.
    pub baseline: f64,
    /// `c eps exp(-zeta) / 2`, half the readout contrast.
    pub half_amplitude: f64,
}

impl SensorReadout {
    pub fn new(sensor: &NvSensor, tau: f64) -> Self {
        Self {
            baseline: sensor.photon_yield * (1.0 - 0.5 * sensor.contrast),
            half_amplitude: 0.5 * sensor.readout_contrast(tau),
        }
    }

    /// A sensor that is illuminated but not driven: it stays in m_S = 0.
    pub fn idle(sensor: &NvSensor) -> Self {
        Self {
            baseline: sensor.photon_yield,
            half_amplitude: 0.0,
        }
    }

    /// Mean photons per shot at total phase `phase + readout`.
    #[inline]
    pub fn rate(&self, phase: f64, readout: ReadoutPhase) -> f64 {
        self.baseline - self.half_amplitude * (phase + readout.angle()).cos()
    }

    pub fn readout_contrast(&self) -> f64 {
        2.0 * self.half_amplitude
    }
}

pub fn sensor_readouts(sensors: &[NvSensor], tau: f64) -> Vec<SensorReadout> {
    sensors.iter().map(|s| SensorReadout::new(s, tau)).collect()
}

/// Expected photon total of one cell after `cfg.reps` repetitions, for any
/// number of sensors.
pub fn expected_counts_n(
    cfg: &RamseyConfig,
    sensors: &[NvSensor],
    phases: &[f64],
    cell: &[ReadoutPhase],
) -> f64 {
    assert_eq!(sensors.len(), phases.len());
    assert_eq!(sensors.len(), cell.len());
    let per_shot: f64 = sensors
        .iter()
        .zip(phases)
        .zip(cell)
        .map(|((s, &phi), &p)| SensorReadout::new(s, cfg.tau).rate(phi, p))
        .sum();
    cfg.reps as f64 * per_shot
}

/// Two-sensor expected counts for one combination.
pub fn expected_counts(
    cfg: &RamseyConfig,
    sensors: &[NvSensor; 2],
    phases: (f64, f64),
    combo: ReadoutCombo,
) -> f64 {
    expected_counts_n(cfg, sensors, &[phases.0, phases.1], &combo.phases())
}

/// Noiseless count matrix over the full `4^N` schedule.
pub fn expected_matrix(
    cfg: &RamseyConfig,
    sensors: &[NvSensor],
    phases: &[f64],
) -> Result<CountMatrix> {
    let n = sensors.len();
    let mut m = CountMatrix::empty(n)?;
    for (i, cell) in n_sensor_schedule(n)?.iter().enumerate() {
        m.set(
            i,
            CountCell {
                total: expected_counts_n(cfg, sensors, phases, cell),
                reps: cfg.reps,
            },
        );
    }
    Ok(m)
}

/// Per-shot phase generator for two sensors:
/// `phi_i = mean_i + sum_k a_ik sin(u_k) + g_i`, with each asynchronous
/// component `k` drawing its own uniform `u_k` (shared by both sensors) and
/// independent zero-mean Gaussian `g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSampler {
    pub mean: [f64; 2],
    /// Per-component peak phase on each sensor.
    pub correlated: Vec<[f64; 2]>,
    pub uncorrelated_sigma: [f64; 2],
}

impl PhaseSampler {
    pub fn fixed(mean: [f64; 2]) -> Self {
        Self {
            mean,
            correlated: Vec::new(),
            uncorrelated_sigma: [0.0; 2],
        }
    }

    pub fn is_static(&self) -> bool {
        self.correlated.iter().all(|a| a[0] == 0.0 && a[1] == 0.0)
            && self.uncorrelated_sigma == [0.0; 2]
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let mut phi = self.mean;
        for a in &self.correlated {
            let s = arcsine_unit(rng);
            phi[0] += a[0] * s;
            phi[1] += a[1] * s;
        }
        for (p, &sigma) in phi.iter_mut().zip(&self.uncorrelated_sigma) {
            if sigma > 0.0 {
                let g: f64 = Normal::new(0.0, sigma)
                    .expect("sigma is positive")
                    .sample(rng);
                *p += g;
            }
        }
        phi
    }
}

/// Sampler for the decomposition `phi1 = mean1 + phic + u1`,
/// `phi2 = mean2 + m phic + u2` with arcsine `phic` of peak `amplitude`.
pub fn phase_sampler_from_decomposition(
    mean: [f64; 2],
    correlated_amplitude: f64,
    m: f64,
    uncorrelated_sigma: [f64; 2],
) -> Result<PhaseSampler> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "correlation factor must be finite, got {m}"
        )));
    }
    if !(correlated_amplitude >= 0.0) || uncorrelated_sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument(
            "noise amplitudes must be non-negative".into(),
        ));
    }
    let correlated = if correlated_amplitude > 0.0 {
        vec![[correlated_amplitude, m * correlated_amplitude]]
    } else {
        Vec::new()
    };
    Ok(PhaseSampler {
        mean,
        correlated,
        uncorrelated_sigma,
    })
}

#[inline]
fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    assert!(
        lambda >= 0.0,
        "negative photon rate {lambda}: sensor invariants violated"
    );
    if lambda == 0.0 {
        return 0;
    }
    Poisson::new(lambda)
        .expect("finite positive rate")
        .sample(rng) as u64
}

/// One multiplexed readout: a single Poisson draw on the summed rate.
#[inline]
pub fn sample_count_shot<R: Rng + ?Sized>(
    readouts: &[SensorReadout; 2],
    phases: [f64; 2],
    combo: ReadoutCombo,
    rng: &mut R,
) -> u64 {
    let lambda = readouts[0].rate(phases[0], combo.phi1) + readouts[1].rate(phases[1], combo.phi2);
    poisson(lambda, rng)
}

/// Run `reps` shots for every slot of `schedule`, drawing fresh phases per shot.
pub fn simulate_shots<R: Rng + ?Sized>(
    reps: u64,
    readouts: &[SensorReadout; 2],
    sampler: &PhaseSampler,
    schedule: &[ReadoutCombo],
    rng: &mut R,
) -> MomentMatrix {
    let mut out = MomentMatrix::pair();
    for &combo in schedule {
        let mut m = ShotMoments::default();
        for _ in 0..reps {
            let phi = sampler.sample(rng);
            m.push(sample_count_shot(readouts, phi, combo, rng));
        }
        out.merge_into(combo.index(), &m);
    }
    out
}

/// Fast path for static phases: the sum of `reps` Poisson shots is itself
/// Poisson, so each slot costs one draw.
pub fn simulate_totals<R: Rng + ?Sized>(
    reps: u64,
    readouts: &[SensorReadout],
    phases: &[f64],
    schedule: &[Vec<ReadoutPhase>],
    rng: &mut R,
) -> Result<CountMatrix> {
    let mut out = CountMatrix::empty(readouts.len())?;
    for cell in schedule {
        let lambda: f64 = readouts
            .iter()
            .zip(phases)
            .zip(cell)
            .map(|((r, &phi), &p)| r.rate(phi, p))
            .sum();
        out.add(
            cell_index(cell),
            poisson(reps as f64 * lambda, rng) as f64,
            reps,
        );
    }
    Ok(out)
}

/// Two-sensor convenience wrapper around [`simulate_totals`].
pub fn simulate_pair_totals<R: Rng + ?Sized>(
    reps: u64,
    readouts: &[SensorReadout; 2],
    phases: [f64; 2],
    schedule: &[ReadoutCombo],
    rng: &mut R,
) -> CountMatrix {
    let cells: Vec<Vec<ReadoutPhase>> = schedule.iter().map(|c| c.phases().to_vec()).collect();
    simulate_totals(reps, readouts, &phases, &cells, rng).expect("two sensors is in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{Dephasing, SensorAxis};
    use crate::rng;
    use crate::Vec3;
    use approx::assert_abs_diff_eq;

    fn sensor(c: f64, eps: f64, zeta: f64) -> NvSensor {
        NvSensor::new(
            SensorAxis::from_degrees(0.0, 0.0).unwrap(),
            Vec3::new(0.0, 0.0, 50.0),
            c,
            eps,
            Dephasing::Fixed(zeta),
        )
        .unwrap()
    }

    fn combo(s: &str) -> ReadoutCombo {
        ReadoutCombo::parse(s).unwrap()
    }

    #[test]
    fn phase_accumulation() {
        let cfg = RamseyConfig::new(250e-9, 1).unwrap();
        assert_eq!(accumulate_phase(&cfg, 0.0), 0.0);
        let phi = accumulate_phase(&cfg, 1e-6);
        assert_abs_diff_eq!(
            phi,
            2.0 * std::f64::consts::PI * 28e9 * 250e-9 * 1e-6,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(phi, 0.04398, epsilon = 5e-6);
        let cfg2 = RamseyConfig::new(500e-9, 1).unwrap();
        assert_eq!(accumulate_phase(&cfg2, 1e-6), 2.0 * phi);
    }

    #[test]
    fn config_validation() {
        assert!(RamseyConfig::new(0.0, 10).is_err());
        assert!(RamseyConfig::new(1e-7, 0).is_err());
        assert!(RamseyConfig::with_gamma(1e-7, 1, -1.0).is_err());
    }

    #[test]
    fn expected_counts_single_sensor_cases() {
        let cfg = RamseyConfig::new(250e-9, 1000).unwrap();
        let s = sensor(0.1, 0.2, 0.0);
        let x = |p: ReadoutPhase| expected_counts_n(&cfg, std::slice::from_ref(&s), &[0.0], &[p]);
        assert_abs_diff_eq!(x(ReadoutPhase::PlusX), 80.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x(ReadoutPhase::MinusX), 100.0, epsilon = 1e-12);
        let pair = [s.clone(), s];
        assert_abs_diff_eq!(
            expected_counts(&cfg, &pair, (0.0, 0.0), combo("+x+x")),
            160.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grand_total_is_phase_independent() {
        let cfg = RamseyConfig::new(250e-9, 1000).unwrap();
        let pair = [sensor(0.1, 0.2, 0.7), sensor(0.13, 0.25, 0.4)];
        let want = 16.0 * 1000.0 * (0.1 * 0.9 + 0.13 * 0.875);
        for (p1, p2) in [(0.0, 0.0), (0.5, -0.3), (3.0, 1.7)] {
            let total: f64 = ReadoutCombo::all()
                .map(|c| expected_counts(&cfg, &pair, (p1, p2), c))
                .sum();
            assert_abs_diff_eq!(total, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn sampled_mean_matches_expectation() {
        let cfg = RamseyConfig::new(250e-9, 1).unwrap();
        let pair = [sensor(0.1, 0.2, 0.7), sensor(0.1, 0.2, 0.7)];
        let readouts = [
            SensorReadout::new(&pair[0], cfg.tau),
            SensorReadout::new(&pair[1], cfg.tau),
        ];
        let c = combo("+y-x");
        let lambda = expected_counts(&cfg, &pair, (0.5, -0.3), c);
        let mut rng = rng::stream(5, 0);
        let n = 1_000_000;
        let total: u64 = (0..n)
            .map(|_| sample_count_shot(&readouts, [0.5, -0.3], c, &mut rng))
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - lambda).abs() < 4.0 * (lambda / n as f64).sqrt());
    }

    #[test]
    fn full_dephasing_removes_phase_dependence() {
        let s = sensor(0.1, 0.2, 800.0);
        let r = SensorReadout::new(&s, 250e-9);
        for p in ReadoutPhase::ALL {
            assert_eq!(r.rate(0.3, p), r.rate(-2.0, p));
        }
    }

    #[test]
    fn static_phases_are_pure_poisson() {
        let s = sensor(1.0, 0.8, 0.1);
        let readouts = [
            SensorReadout::new(&s, 250e-9),
            SensorReadout::new(&s, 250e-9),
        ];
        let sampler = PhaseSampler::fixed([0.4, -1.1]);
        let mut rng = rng::stream(9, 0);
        let mm = simulate_shots(
            200_000,
            &readouts,
            &sampler,
            &pair_schedule(ScheduleKind::Sixteen),
            &mut rng,
        );
        for cell in mm.cells().iter().flatten() {
            let z = cell.excess_variance() / cell.excess_variance_sampling_var().sqrt();
            assert!(z.abs() < 5.0, "z = {z}");
        }
    }

    #[test]
    fn fluctuating_phases_add_total_variance() {
        // V - E -> Var(lambda1 + lambda2) by the law of total variance
        let s = sensor(1.0, 1.0, 0.0);
        let readouts = [
            SensorReadout::new(&s, 250e-9),
            SensorReadout::new(&s, 250e-9),
        ];
        let sampler = phase_sampler_from_decomposition([0.0, 0.0], 0.6, 1.0, [0.0; 2]).unwrap();
        let c = combo("+y+y");
        let mut rng = rng::stream(3, 0);
        let mm = simulate_shots(400_000, &readouts, &sampler, &[c], &mut rng);
        let cell = mm.combo(c).unwrap();
        // oracle: lambda = 1 + sin(phi1) with phi1 = phi2 = 0.6 sin u, so Var = E[sin^2(0.6 sin u)]
        let oracle = monte_carlo_var_sin(0.6, 2_000_000);
        let sigma = cell.excess_variance_sampling_var().sqrt();
        assert!(cell.excess_variance() > 0.0);
        assert!(
            (cell.excess_variance() - oracle).abs() < 5.0 * sigma,
            "{} vs {}",
            cell.excess_variance(),
            oracle
        );
    }

    fn monte_carlo_var_sin(a: f64, n: usize) -> f64 {
        let mut rng = rng::domain_stream(1, 99, 0);
        let draws: Vec<f64> = (0..n).map(|_| (a * arcsine_unit(&mut rng)).sin()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64
    }

    #[test]
    fn degenerate_sampler_returns_means() {
        let s = phase_sampler_from_decomposition([0.2, -0.4], 0.0, 3.0, [0.0; 2]).unwrap();
        let mut rng = rng::stream(1, 1);
        for _ in 0..10 {
            assert_eq!(s.sample(&mut rng), [0.2, -0.4]);
        }
        assert!(s.is_static());
    }

    #[test]
    fn zero_m_decouples_sensor_two() {
        let s = phase_sampler_from_decomposition([0.0, 0.7], 0.5, 0.0, [0.0; 2]).unwrap();
        let mut rng = rng::stream(1, 2);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng)[1], 0.7);
        }
    }

    #[test]
    fn sampler_covariance_ratio_is_m() {
        let m = -0.63;
        let a = 0.3;
        let s = phase_sampler_from_decomposition([0.1, 0.2], a, m, [0.05, 0.08]).unwrap();
        let mut rng = rng::stream(1, 3);
        let n = 1_000_000;
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let [p1, p2] = s.sample(&mut rng);
            s1 += p1;
            s2 += p2;
            s12 += p1 * p2;
        }
        let nf = n as f64;
        let cov = s12 / nf - (s1 / nf) * (s2 / nf);
        let var_c = a * a / 2.0;
        assert!(
            (cov / var_c - m).abs() < 0.02 * m.abs(),
            "ratio {}",
            cov / var_c
        );
    }

    #[test]
    fn dephasing_factor_equals_gaussian_phase_noise() {
        // E[cos(phi + g)] = exp(-sigma^2 / 2) cos(phi), so sigma^2 = 2 zeta
        let zeta = 0.35;
        let deterministic = sensor(1.0, 0.8, zeta);
        let noisy = sensor(1.0, 0.8, 0.0);
        let sigma = (2.0 * zeta).sqrt();
        let r_det = [SensorReadout::new(&deterministic, 1e-7); 2];
        let r_noisy = [SensorReadout::new(&noisy, 1e-7); 2];
        let mean = [0.6, -0.2];
        let sched = pair_schedule(ScheduleKind::Sixteen);
        let mut rng = rng::stream(21, 0);
        let a = simulate_shots(
            100_000,
            &r_det,
            &PhaseSampler::fixed(mean),
            &sched,
            &mut rng,
        );
        let noisy_sampler = PhaseSampler {
            mean,
            correlated: vec![],
            uncorrelated_sigma: [sigma, sigma],
        };
        let b = simulate_shots(100_000, &r_noisy, &noisy_sampler, &sched, &mut rng);
        for i in 0..16 {
            let (ma, mb) = (a.cell(i).unwrap(), b.cell(i).unwrap());
            let se = ((ma.variance() + mb.variance()) / 100_000.0).sqrt();
            assert!((ma.mean() - mb.mean()).abs() < 5.0 * se);
        }
    }

    #[test]
    fn fast_path_agrees_with_per_shot_path() {
        let s = sensor(0.5, 0.6, 0.2);
        let readouts = [SensorReadout::new(&s, 1e-7); 2];
        let sched = pair_schedule(ScheduleKind::Sixteen);
        let mut rng = rng::stream(2, 0);
        let reps = 50_000;
        let slow = simulate_shots(
            reps,
            &readouts,
            &PhaseSampler::fixed([1.0, 2.0]),
            &sched,
            &mut rng,
        )
        .counts();
        let fast = simulate_pair_totals(reps, &readouts, [1.0, 2.0], &sched, &mut rng);
        for i in 0..16 {
            let (a, b) = (slow.cell(i).unwrap(), fast.cell(i).unwrap());
            assert_eq!(a.reps, b.reps);
            let se = (a.total + b.total).sqrt();
            assert!((a.total - b.total).abs() < 5.0 * se);
        }
    }

    #[test]
    fn per_combination_means_converge_at_monte_carlo_rate() {
        let s = sensor(0.3, 0.5, 0.1);
        let readouts = [SensorReadout::new(&s, 1e-7); 2];
        let sched = pair_schedule(ScheduleKind::Sixteen);
        let cfg = RamseyConfig::new(1e-7, 1).unwrap();
        let pair = [s.clone(), s];
        let mut errs = Vec::new();
        for (k, reps) in [1_000u64, 100_000].into_iter().enumerate() {
            // rms error over the 16 cells and several independent runs
            let mut sq = 0.0;
            for run in 0..8 {
                let mut rng = rng::domain_stream(4, k as u64, run);
                let mm = simulate_shots(
                    reps,
                    &readouts,
                    &PhaseSampler::fixed([0.3, 0.9]),
                    &sched,
                    &mut rng,
                );
                for c in ReadoutCombo::all() {
                    let want = expected_counts(&cfg, &pair, (0.3, 0.9), c);
                    sq += (mm.combo(c).unwrap().mean() - want).powi(2);
                }
            }
            errs.push((sq / 128.0).sqrt());
        }
        // 100x the shots: error shrinks by ~10
        let ratio = errs[0] / errs[1];
        assert!(ratio > 7.0 && ratio < 14.0, "ratio {ratio}");
    }
}

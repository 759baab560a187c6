//! Phase-cycled readout schedules and the matrices they fill.
//!
//! Cells are stored row-major with sensor 1 as the most significant index and
//! every sensor's phases in the order `(+x, +y, -x, -y)`: for two sensors the
//! flat index is `4 * i(phi1) + i(phi2)`.

use std::fmt;

use crate::{Error, Result};

/// Largest supported number of sensors in a full factorial schedule.
pub const MAX_SENSORS: usize = 6;

/// Relative phase of the second pi/2 pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReadoutPhase {
    PlusX,
    PlusY,
    MinusX,
    MinusY,
}

impl ReadoutPhase {
    pub const ALL: [ReadoutPhase; 4] = [
        ReadoutPhase::PlusX,
        ReadoutPhase::PlusY,
        ReadoutPhase::MinusX,
        ReadoutPhase::MinusY,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// 0, 90, 180, 270 degrees, in radians.
    pub fn angle(self) -> f64 {
        self.index() as f64 * std::f64::consts::FRAC_PI_2
    }

    pub fn label(self) -> &'static str {
        match self {
            ReadoutPhase::PlusX => "+x",
            ReadoutPhase::PlusY => "+y",
            ReadoutPhase::MinusX => "-x",
            ReadoutPhase::MinusY => "-y",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }
}

impl fmt::Display for ReadoutPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A phase pair for a two-sensor readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReadoutCombo {
    pub phi1: ReadoutPhase,
    pub phi2: ReadoutPhase,
}

impl ReadoutCombo {
    pub const fn new(phi1: ReadoutPhase, phi2: ReadoutPhase) -> Self {
        Self { phi1, phi2 }
    }

    pub fn index(self) -> usize {
        4 * self.phi1.index() + self.phi2.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(
            ReadoutPhase::from_index(i / 4),
            ReadoutPhase::from_index(i % 4),
        )
    }

    /// All sixteen combinations in storage order.
    pub fn all() -> impl Iterator<Item = ReadoutCombo> {
        (0..16).map(Self::from_index)
    }

    pub fn phases(self) -> [ReadoutPhase; 2] {
        [self.phi1, self.phi2]
    }

    /// e.g. `"+y-x"`.
    pub fn label(self) -> String {
        format!("{}{}", self.phi1, self.phi2)
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.len() != 4 || !s.is_ascii() {
            return None;
        }
        Some(Self::new(
            ReadoutPhase::parse(&s[..2])?,
            ReadoutPhase::parse(&s[2..])?,
        ))
    }
}

impl fmt::Display for ReadoutCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.phi1, self.phi2)
    }
}

/// Which cells a two-sensor run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Sixteen,
    /// `{(phi1, +x)} U {(+x, phi2)}`; the shared `(+x, +x)` slot is run twice.
    Eight,
    /// Full factorial schedule demultiplexed with the N-sensor routine.
    NSensor,
}

/// Measurement slots of a two-sensor schedule. A combination may appear
/// more than once; its cell then accumulates all the slots' repetitions.
pub fn pair_schedule(kind: ScheduleKind) -> Vec<ReadoutCombo> {
    match kind {
        ScheduleKind::Sixteen | ScheduleKind::NSensor => ReadoutCombo::all().collect(),
        ScheduleKind::Eight => {
            let x = ReadoutPhase::PlusX;
            let mut slots: Vec<_> = ReadoutPhase::ALL
                .iter()
                .map(|&p| ReadoutCombo::new(p, x))
                .collect();
            slots.extend(ReadoutPhase::ALL.iter().map(|&p| ReadoutCombo::new(x, p)));
            slots
        }
    }
}

/// Full factorial `4^N` schedule of phase tuples in storage order.
pub fn n_sensor_schedule(n_sensors: usize) -> Result<Vec<Vec<ReadoutPhase>>> {
    if !(1..=MAX_SENSORS).contains(&n_sensors) {
        return Err(Error::ScheduleSize(n_sensors));
    }
    Ok((0..cell_count(n_sensors))
        .map(|i| cell_phases(n_sensors, i))
        .collect())
}

pub fn cell_count(n_sensors: usize) -> usize {
    4usize.pow(n_sensors as u32)
}

/// Phase tuple of flat cell `index`.
pub fn cell_phases(n_sensors: usize, index: usize) -> Vec<ReadoutPhase> {
    (0..n_sensors)
        .map(|k| ReadoutPhase::from_index((index / 4usize.pow((n_sensors - 1 - k) as u32)) % 4))
        .collect()
}

pub fn cell_index(phases: &[ReadoutPhase]) -> usize {
    phases.iter().fold(0, |acc, p| 4 * acc + p.index())
}

fn cell_label(phases: &[ReadoutPhase]) -> String {
    phases.iter().map(|p| p.label()).collect()
}

/// Accumulated photon total of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountCell {
    /// Photons summed over all repetitions. Integer-valued for sampled data,
    /// real for noiseless expectations.
    pub total: f64,
    pub reps: u64,
}

impl CountCell {
    /// Mean photons per repetition.
    pub fn rate(&self) -> f64 {
        self.total / self.reps as f64
    }

    /// Shot-noise variance of [`rate`](Self::rate), taking the total as Poisson.
    pub fn rate_variance(&self) -> f64 {
        self.total / (self.reps as f64 * self.reps as f64)
    }
}

/// Per-cell photon totals over a readout schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n_sensors: usize,
    cells: Vec<Option<CountCell>>,
}

impl CountMatrix {
    pub fn empty(n_sensors: usize) -> Result<Self> {
        if !(1..=MAX_SENSORS).contains(&n_sensors) {
            return Err(Error::ScheduleSize(n_sensors));
        }
        Ok(Self {
            n_sensors,
            cells: vec![None; cell_count(n_sensors)],
        })
    }

    pub fn pair() -> Self {
        Self::empty(2).expect("two sensors is in range")
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    /// Add `total` photons over `reps` repetitions to the cell at `index`.
    pub fn add(&mut self, index: usize, total: f64, reps: u64) {
        let cell = self.cells[index].get_or_insert(CountCell {
            total: 0.0,
            reps: 0,
        });
        cell.total += total;
        cell.reps += reps;
    }

    pub fn set(&mut self, index: usize, cell: CountCell) {
        self.cells[index] = Some(cell);
    }

    pub fn cell(&self, index: usize) -> Option<&CountCell> {
        self.cells[index].as_ref()
    }

    pub fn combo(&self, combo: ReadoutCombo) -> Option<&CountCell> {
        debug_assert_eq!(self.n_sensors, 2);
        self.cell(combo.index())
    }

    pub fn cells(&self) -> &[Option<CountCell>] {
        &self.cells
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    /// The cell at `index`, or an incomplete-matrix error naming it.
    pub fn require(&self, index: usize) -> Result<&CountCell> {
        self.cell(index)
            .ok_or_else(|| Error::IncompleteMatrix(cell_label(&cell_phases(self.n_sensors, index))))
    }

    pub fn grand_total(&self) -> f64 {
        self.cells.iter().flatten().map(|c| c.total).sum()
    }
}

/// Power sums of per-shot photon counts for one cell.
///
/// Accumulation is integer, so merging partial results is exact and
/// order-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShotMoments {
    pub reps: u64,
    pub sum: u64,
    pub sum_sq: u64,
    pub sum_cube: u128,
    pub sum_quad: u128,
}

impl ShotMoments {
    #[inline]
    pub fn push(&mut self, k: u64) {
        let k2 = k * k;
        self.reps += 1;
        self.sum += k;
        self.sum_sq += k2;
        self.sum_cube += (k2 * k) as u128;
        self.sum_quad += (k2 as u128) * (k2 as u128);
    }

    pub fn merge(&mut self, other: &ShotMoments) {
        self.reps += other.reps;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.sum_cube += other.sum_cube;
        self.sum_quad += other.sum_quad;
    }

    fn raw(&self, order: usize) -> f64 {
        let n = self.reps as f64;
        match order {
            1 => self.sum as f64 / n,
            2 => self.sum_sq as f64 / n,
            3 => self.sum_cube as f64 / n,
            4 => self.sum_quad as f64 / n,
            _ => unreachable!(),
        }
    }

    /// E: mean photons per shot.
    pub fn mean(&self) -> f64 {
        self.raw(1)
    }

    /// V: unbiased sample variance of photons per shot.
    pub fn variance(&self) -> f64 {
        let n = self.reps as f64;
        if self.reps < 2 {
            return 0.0;
        }
        let m = self.sum as f64;
        ((self.sum_sq as f64 - m * m / n) / (n - 1.0)).max(0.0)
    }

    /// V - E, the excess over pure Poisson variance.
    pub fn excess_variance(&self) -> f64 {
        self.variance() - self.mean()
    }

    /// Sampling variance of [`excess_variance`](Self::excess_variance),
    /// by the delta method on the first two raw moments.
    pub fn excess_variance_sampling_var(&self) -> f64 {
        let n = self.reps as f64;
        let (m1, m2, m3, m4) = (self.raw(1), self.raw(2), self.raw(3), self.raw(4));
        let var_k = m2 - m1 * m1;
        let cov_k_k2 = m3 - m1 * m2;
        let var_k2 = m4 - m2 * m2;
        // V - E ~ m2 - m1^2 - m1; gradient (-(2 m1 + 1), 1)
        let g = -(2.0 * m1 + 1.0);
        ((g * g * var_k + 2.0 * g * cov_k_k2 + var_k2) / n).max(0.0)
    }
}

/// Per-cell shot moments over a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    n_sensors: usize,
    cells: Vec<Option<ShotMoments>>,
}

impl MomentMatrix {
    pub fn empty(n_sensors: usize) -> Result<Self> {
        if !(1..=MAX_SENSORS).contains(&n_sensors) {
            return Err(Error::ScheduleSize(n_sensors));
        }
        Ok(Self {
            n_sensors,
            cells: vec![None; cell_count(n_sensors)],
        })
    }

    pub fn pair() -> Self {
        Self::empty(2).expect("two sensors is in range")
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn merge_into(&mut self, index: usize, m: &ShotMoments) {
        self.cells[index]
            .get_or_insert_with(ShotMoments::default)
            .merge(m);
    }

    pub fn cell(&self, index: usize) -> Option<&ShotMoments> {
        self.cells[index].as_ref()
    }

    pub fn combo(&self, combo: ReadoutCombo) -> Option<&ShotMoments> {
        self.cell(combo.index())
    }

    pub fn require(&self, index: usize) -> Result<&ShotMoments> {
        self.cell(index)
            .ok_or_else(|| Error::IncompleteMatrix(cell_label(&cell_phases(self.n_sensors, index))))
    }

    pub fn cells(&self) -> &[Option<ShotMoments>] {
        &self.cells
    }

    /// Totals per cell, for phase de-multiplexing.
    pub fn counts(&self) -> CountMatrix {
        CountMatrix {
            n_sensors: self.n_sensors,
            cells: self
                .cells
                .iter()
                .map(|c| {
                    c.map(|m| CountCell {
                        total: m.sum as f64,
                        reps: m.reps,
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_distinct_combos_in_storage_order() {
        let all: Vec<_> = ReadoutCombo::all().collect();
        assert_eq!(all.len(), 16);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ReadoutCombo::parse(&c.label()), Some(*c));
        }
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 16);
        assert_eq!(ReadoutCombo::from_index(6).label(), "+y-x");
    }

    #[test]
    fn phase_angles() {
        assert_eq!(ReadoutPhase::PlusX.angle(), 0.0);
        assert_eq!(ReadoutPhase::MinusY.angle(), 1.5 * std::f64::consts::PI);
    }

    #[test]
    fn n_sensor_schedule_sizes() {
        assert_eq!(n_sensor_schedule(1).unwrap().len(), 4);
        let two = n_sensor_schedule(2).unwrap();
        for (i, phases) in two.iter().enumerate() {
            assert_eq!(ReadoutCombo::from_index(i).phases().to_vec(), *phases);
            assert_eq!(cell_index(phases), i);
        }
        assert_eq!(n_sensor_schedule(6).unwrap().len(), 4096);
        assert!(matches!(n_sensor_schedule(0), Err(Error::ScheduleSize(0))));
        assert!(matches!(n_sensor_schedule(7), Err(Error::ScheduleSize(7))));
    }

    #[test]
    fn eight_schedule_covers_seven_cells() {
        let slots = pair_schedule(ScheduleKind::Eight);
        assert_eq!(slots.len(), 8);
        let distinct: std::collections::HashSet<_> = slots.iter().collect();
        assert_eq!(distinct.len(), 7);
    }

    #[test]
    fn shot_moments_match_direct_computation() {
        let ks = [0u64, 1, 0, 2, 3, 0, 1, 1, 5, 0];
        let mut m = ShotMoments::default();
        ks.iter().for_each(|&k| m.push(k));
        let n = ks.len() as f64;
        let mean = ks.iter().sum::<u64>() as f64 / n;
        let var = ks.iter().map(|&k| (k as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((m.mean() - mean).abs() < 1e-15);
        assert!((m.variance() - var).abs() < 1e-12);

        let (a, b) = ks.split_at(4);
        let (mut ma, mut mb) = (ShotMoments::default(), ShotMoments::default());
        a.iter().for_each(|&k| ma.push(k));
        b.iter().for_each(|&k| mb.push(k));
        mb.merge(&ma);
        assert_eq!(mb, m);
    }

    #[test]
    fn missing_cell_is_named() {
        let mut c = CountMatrix::pair();
        for i in 0..16 {
            if i != ReadoutCombo::parse("-y+x").unwrap().index() {
                c.add(i, 1.0, 1);
            }
        }
        match c.require(ReadoutCombo::parse("-y+x").unwrap().index()) {
            Err(Error::IncompleteMatrix(label)) => assert_eq!(label, "-y+x"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

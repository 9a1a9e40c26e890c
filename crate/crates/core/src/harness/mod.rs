//! Monte Carlo experiments: SNR/iteration sweeps, the convergence-regime
//! table and per-iteration timing.
//!
//! Sources are `N(0, 1)` and `SNR = 1/σn²` (linear). Trial `t` of every grid
//! point uses the instance seeded with `base_seed ⊕ t`, so each trial can be
//! regenerated on its own and results never depend on the worker count.

mod bench;
mod regimes;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{mean_squared_distance, mmse_detect, DetectorConfig, DetectorKind, Verdict};
use crate::error::{Error, Result};
use crate::model::{Dimensions, SystemInstance};
use crate::rng::RngSeed;

pub use bench::{bench_iteration, BenchRow, BENCH_CSV_HEADER};
pub use regimes::{format_regime_table, regime_table, RegimeCell, RegimeRow, RegimeSpec, RegimeVerdict};

/// A full sweep over SNR and iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dims: Dimensions,
    pub snr_grid: Vec<f64>,
    pub iteration_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub detectors: Vec<DetectorKind>,
    #[serde(default)]
    pub base_seed: RngSeed,
    #[serde(default)]
    pub detector_cfg: DetectorConfig,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_trials() -> usize {
    500
}

impl ExperimentSpec {
    pub fn new(dims: Dimensions, snr_grid: Vec<f64>, iteration_grid: Vec<usize>, detectors: Vec<DetectorKind>) -> Self {
        ExperimentSpec {
            dims,
            snr_grid,
            iteration_grid,
            trials: default_trials(),
            detectors,
            base_seed: RngSeed::default(),
            detector_cfg: DetectorConfig::default(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snr_grid.is_empty() || self.iteration_grid.is_empty() || self.detectors.is_empty() {
            return bad("snr grid, iteration grid and detector list must be non-empty");
        }
        if let Some(&s) = self.snr_grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("SNR {s} is not a positive finite number")));
        }
        if self.iteration_grid.contains(&0) {
            return bad("iteration counts must be positive");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        self.detector_cfg.validate()
    }

    /// Reads a TOML experiment description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment specs always serialize")
    }

    fn sorted_iterations(&self) -> Vec<usize> {
        let mut its = self.iteration_grid.clone();
        its.sort_unstable();
        its.dedup();
        its
    }
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// One aggregated cell: a detector at one SNR after a given iteration count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub detector: DetectorKind,
    pub users: usize,
    pub antennas: usize,
    pub snr: f64,
    pub iterations: usize,
    pub trials: usize,
    /// Mean of `(1/K)‖x − x̂‖²` over trials that neither diverged nor failed.
    pub mean_mse: f64,
    /// Mean of `(1/K)‖x̂ − x̂_MMSE‖²` over the same trials.
    pub mean_dist_mmse: f64,
    pub diverged_fraction: f64,
    pub converged: usize,
    /// Trials still iterating (or stopped at the cap) at this count.
    pub max_iters: usize,
    pub diverged: usize,
    pub errors: usize,
    pub mean_wall_time_per_iter: f64,
}

pub const SWEEP_CSV_HEADER: &str = "detector,K,M,snr,iters,trials,mean_mse,mean_dist_mmse,diverged_fraction,\
converged,max_iters,diverged,errors,mean_wall_time_per_iter";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.15e},{:.15e},{},{},{},{},{},{:.6e}",
            self.detector,
            self.users,
            self.antennas,
            self.snr,
            self.iterations,
            self.trials,
            self.mean_mse,
            self.mean_dist_mmse,
            self.diverged_fraction,
            self.converged,
            self.max_iters,
            self.diverged,
            self.errors,
            self.mean_wall_time_per_iter
        )
    }

    /// Equality of everything except wall-clock timing.
    pub fn same_numerics(&self, other: &SweepRow) -> bool {
        let strip = |r: &SweepRow| SweepRow {
            mean_wall_time_per_iter: 0.0,
            ..r.clone()
        };
        let (a, b) = (strip(self), strip(other));
        // NaN means "no usable trials" and must compare equal to itself.
        a.csv_row() == b.csv_row()
    }
}

/// A detector failure inside one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialError {
    pub detector: DetectorKind,
    pub snr: f64,
    pub trial: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by SNR, then detector, then iteration count.
    pub rows: Vec<SweepRow>,
    pub errors: Vec<TrialError>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn same_numerics(&self, other: &SweepResult) -> bool {
        self.errors == other.errors
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_numerics(b))
    }

    pub fn row(&self, detector: DetectorKind, snr: f64, iterations: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.detector == detector && r.snr == snr && r.iterations == iterations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CellStatus {
    Converged,
    Running,
    Diverged,
}

#[derive(Debug, Clone)]
struct CellSample {
    status: CellStatus,
    mse: f64,
    dist_mmse: f64,
}

/// Everything one detector produced on one trial.
struct DetectorTrial {
    cells: std::result::Result<Vec<CellSample>, Error>,
    time_per_iter: f64,
}

fn run_detector_trial(
    kind: DetectorKind,
    inst: &SystemInstance,
    mmse: Option<&[f64]>,
    cfg: &DetectorConfig,
    iterations: &[usize],
) -> DetectorTrial {
    let mut snapshots: Vec<Option<Vec<f64>>> = vec![None; iterations.len()];
    let started = Instant::now();
    let outcome = kind.run_observed(inst, cfg, &mut |t, est| {
        if let Ok(i) = iterations.binary_search(&t) {
            snapshots[i] = Some(est.to_vec());
        }
    });
    let elapsed = started.elapsed().as_secs_f64();
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            return DetectorTrial {
                cells: Err(e),
                time_per_iter: f64::NAN,
            }
        }
    };
    let stopped = kind != DetectorKind::Mmse;
    let cells = iterations
        .iter()
        .zip(snapshots)
        .map(|(&t, snap)| {
            let finished = !stopped || result.iterations_run <= t;
            let status = match (finished, result.verdict) {
                (true, Verdict::Diverged) => CellStatus::Diverged,
                (true, Verdict::Converged) => CellStatus::Converged,
                _ => CellStatus::Running,
            };
            let est = match snap {
                Some(s) if stopped => s,
                _ => result.estimates.clone(),
            };
            CellSample {
                status,
                mse: mean_squared_distance(&est, inst.x().as_slice()),
                dist_mmse: mmse.map_or(f64::NAN, |m| mean_squared_distance(&est, m)),
            }
        })
        .collect();
    DetectorTrial {
        cells: Ok(cells),
        time_per_iter: elapsed / result.iterations_run.max(1) as f64,
    }
}

struct TrialRecord {
    per_detector: Vec<DetectorTrial>,
}

fn run_trial(spec: &ExperimentSpec, snr: f64, trial: usize, iterations: &[usize]) -> Result<TrialRecord> {
    let inst = SystemInstance::generate_uniform(spec.dims, 1.0, 1.0 / snr, spec.base_seed.for_trial(trial as u64))?;
    let mmse = mmse_detect(&inst).ok().map(|e| e.estimates.as_slice().to_vec());
    let cfg = spec
        .detector_cfg
        .clone()
        .with_max_iters(*iterations.last().expect("validated non-empty"));
    let per_detector = spec
        .detectors
        .iter()
        .map(|&d| run_detector_trial(d, &inst, mmse.as_deref(), &cfg, iterations))
        .collect();
    Ok(TrialRecord { per_detector })
}

#[derive(Default)]
struct CellAcc {
    sum_mse: f64,
    sum_dist: f64,
    usable: usize,
    converged: usize,
    running: usize,
    diverged: usize,
    errors: usize,
    sum_time: f64,
    timed: usize,
}

/// Runs every `(snr, trial)` pair in parallel and aggregates per cell in
/// trial order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let iterations = spec.sorted_iterations();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &snr in &spec.snr_grid {
        let records: Vec<Result<TrialRecord>> = with_workers(spec.workers, || {
            (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(spec, snr, t, &iterations))
                .collect()
        })?;
        let mut acc: Vec<Vec<CellAcc>> = spec
            .detectors
            .iter()
            .map(|_| iterations.iter().map(|_| CellAcc::default()).collect())
            .collect();
        for (trial, record) in records.into_iter().enumerate() {
            let record = record?;
            for (d, dt) in record.per_detector.into_iter().enumerate() {
                match dt.cells {
                    Err(error) => {
                        for cell in acc[d].iter_mut() {
                            cell.errors += 1;
                        }
                        errors.push(TrialError {
                            detector: spec.detectors[d],
                            snr,
                            trial,
                            error,
                        });
                    }
                    Ok(samples) => {
                        for (cell, s) in acc[d].iter_mut().zip(samples) {
                            match s.status {
                                CellStatus::Converged => cell.converged += 1,
                                CellStatus::Running => cell.running += 1,
                                CellStatus::Diverged => cell.diverged += 1,
                            }
                            if s.status != CellStatus::Diverged {
                                cell.usable += 1;
                                cell.sum_mse += s.mse;
                                cell.sum_dist += s.dist_mmse;
                            }
                            if dt.time_per_iter.is_finite() {
                                cell.sum_time += dt.time_per_iter;
                                cell.timed += 1;
                            }
                        }
                    }
                }
            }
        }
        for (d, cells) in acc.into_iter().enumerate() {
            for (&t, c) in iterations.iter().zip(cells) {
                let mean = |sum: f64, n: usize| if n == 0 { f64::NAN } else { sum / n as f64 };
                rows.push(SweepRow {
                    detector: spec.detectors[d],
                    users: spec.dims.users,
                    antennas: spec.dims.antennas,
                    snr,
                    iterations: t,
                    trials: spec.trials,
                    mean_mse: mean(c.sum_mse, c.usable),
                    mean_dist_mmse: mean(c.sum_dist, c.usable),
                    diverged_fraction: c.diverged as f64 / spec.trials as f64,
                    converged: c.converged,
                    max_iters: c.running,
                    diverged: c.diverged,
                    errors: c.errors,
                    mean_wall_time_per_iter: mean(c.sum_time, c.timed),
                });
            }
        }
    }
    Ok(SweepResult { rows, errors })
}

/// The two GMPID vs SA-GMPID comparison setups at desk scale: `K=200, M=300` over
/// 1–100 iterations and `K=10, M=60` at 20 iterations, both for GMPID,
/// SA-GMPID and MMSE.
pub fn sa_comparison_specs(trials: usize, base_seed: RngSeed) -> Vec<ExperimentSpec> {
    let snr_grid: Vec<f64> = [0.0, 5.0, 10.0, 15.0, 20.0]
        .iter()
        .map(|db: &f64| 10f64.powf(db / 10.0))
        .collect();
    let detectors = vec![DetectorKind::Mmse, DetectorKind::Gmpid, DetectorKind::Sagmpid];
    let mk = |users, antennas, iterations: Vec<usize>| ExperimentSpec {
        trials,
        base_seed,
        ..ExperimentSpec::new(
            Dimensions { users, antennas },
            snr_grid.clone(),
            iterations,
            detectors.clone(),
        )
    };
    vec![
        mk(200, 300, vec![1, 2, 5, 10, 20, 50, 100]),
        mk(10, 60, (1..=20).collect()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            trials: 4,
            base_seed: RngSeed(11),
            ..ExperimentSpec::new(
                Dimensions::new(4, 24).unwrap(),
                vec![10.0],
                vec![1, 5, 50],
                vec![DetectorKind::Mmse, DetectorKind::Gmpid, DetectorKind::Jacobi],
            )
        }
    }

    #[test]
    fn validation_rejects_empty_and_bad_grids() {
        let mut s = small_spec();
        s.trials = 0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.snr_grid = vec![-1.0];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.iteration_grid.clear();
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.iteration_grid = vec![0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = small_spec();
        let back = ExperimentSpec::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        assert!(ExperimentSpec::from_toml("trials = 3").is_err());
    }

    #[test]
    fn counts_add_up_and_rows_are_ordered() {
        let s = small_spec();
        let r = run_experiment(&s).unwrap();
        assert_eq!(r.rows.len(), 3 * 3);
        for row in &r.rows {
            assert_eq!(row.converged + row.max_iters + row.diverged + row.errors, row.trials);
            assert!(row.mean_mse >= 0.0);
        }
        let mmse = r.row(DetectorKind::Mmse, 10.0, 5).unwrap();
        assert_eq!(mmse.mean_dist_mmse, 0.0);
        assert_eq!(mmse.converged, 4);
        let g1 = r.row(DetectorKind::Gmpid, 10.0, 1).unwrap();
        let g50 = r.row(DetectorKind::Gmpid, 10.0, 50).unwrap();
        assert!(g50.mean_dist_mmse < g1.mean_dist_mmse);
        assert_eq!(g1.max_iters, 4);
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let r = run_experiment(&small_spec()).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), r.rows.len() + 1);
        let cols = SWEEP_CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn detector_errors_are_recorded_not_fatal() {
        let mut s = small_spec();
        s.detectors = vec![DetectorKind::Sagmpid, DetectorKind::Mmse];
        s.detector_cfg.relaxation_w = Some(-1.0);
        let r = run_experiment(&s).unwrap();
        assert_eq!(r.errors.len(), s.trials);
        assert!(r
            .errors
            .iter()
            .all(|e| matches!(e.error, Error::InvalidRelaxation { .. })));
        for row in &r.rows {
            let expected = if row.detector == DetectorKind::Sagmpid {
                s.trials
            } else {
                0
            };
            assert_eq!(row.errors, expected);
        }
    }
}

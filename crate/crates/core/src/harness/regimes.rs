use std::fmt;

use rayon::prelude::*;

use crate::detectors::{mean_squared_distance, mmse_detect, DetectorConfig, DetectorKind, Verdict};
use crate::error::Result;
use crate::model::{Dimensions, SystemInstance};
use crate::rng::RngSeed;

use super::with_workers;

/// Setup for the convergence-regime table: one row per user count at a
/// fixed antenna count.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub antennas: usize,
    pub users: Vec<usize>,
    pub snr: f64,
    pub trials: usize,
    pub max_iters: usize,
    /// A trial reaches the MMSE estimate when `(1/K)‖x̂ − x̂_MMSE‖² ≤` this.
    pub tolerance: f64,
    pub detectors: Vec<DetectorKind>,
    pub base_seed: RngSeed,
    pub detector_cfg: DetectorConfig,
    pub workers: Option<usize>,
}

impl Default for RegimeSpec {
    /// `M = 256` with `K ∈ {40, 50, 220}`: loads just below and just above
    /// `(√2 − 1)²`, and close to one.
    fn default() -> Self {
        RegimeSpec {
            antennas: 256,
            users: vec![40, 50, 220],
            snr: 10.0,
            trials: 50,
            max_iters: 3000,
            tolerance: 1e-4,
            detectors: vec![
                DetectorKind::Jacobi,
                DetectorKind::Gmpid,
                DetectorKind::Sagmpid,
                DetectorKind::Richardson,
            ],
            base_seed: RngSeed(0x7AB1E),
            detector_cfg: DetectorConfig::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeVerdict {
    /// At least 90% of trials reached the MMSE estimate.
    Converges,
    /// At least half of the trials diverged.
    Diverges,
    Mixed,
}

impl fmt::Display for RegimeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeVerdict::Converges => "C",
            RegimeVerdict::Diverges => "D",
            RegimeVerdict::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCell {
    pub detector: DetectorKind,
    pub reached_mmse: usize,
    pub diverged: usize,
    pub errors: usize,
    pub trials: usize,
    pub verdict: RegimeVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub dims: Dimensions,
    pub cells: Vec<RegimeCell>,
}

impl RegimeRow {
    pub fn beta(&self) -> f64 {
        self.dims.load()
    }

    pub fn verdict(&self, detector: DetectorKind) -> Option<RegimeVerdict> {
        self.cells.iter().find(|c| c.detector == detector).map(|c| c.verdict)
    }
}

#[derive(Clone, Copy)]
enum Outcome {
    Reached,
    Diverged,
    Other,
    Failed,
}

fn classify(reached: usize, diverged: usize, trials: usize) -> RegimeVerdict {
    if reached * 10 >= trials * 9 {
        RegimeVerdict::Converges
    } else if diverged * 2 >= trials {
        RegimeVerdict::Diverges
    } else {
        RegimeVerdict::Mixed
    }
}

fn run_trial(spec: &RegimeSpec, dims: Dimensions, trial: usize) -> Result<Vec<Outcome>> {
    let inst = SystemInstance::generate_uniform(dims, 1.0, 1.0 / spec.snr, spec.base_seed.for_trial(trial as u64))?;
    let mmse = mmse_detect(&inst)?;
    let cfg = spec.detector_cfg.clone().with_max_iters(spec.max_iters);
    Ok(spec
        .detectors
        .iter()
        .map(|d| match d.run(&inst, &cfg) {
            Err(_) => Outcome::Failed,
            Ok(r) if r.verdict == Verdict::Diverged => Outcome::Diverged,
            Ok(r) if mean_squared_distance(&r.estimates, mmse.estimates.as_slice()) <= spec.tolerance => {
                Outcome::Reached
            }
            Ok(_) => Outcome::Other,
        })
        .collect())
}

/// Classifies every detector as converging (C), diverging (D) or mixed in
/// each load regime.
pub fn regime_table(spec: &RegimeSpec) -> Result<Vec<RegimeRow>> {
    let mut rows = Vec::with_capacity(spec.users.len());
    for &users in &spec.users {
        let dims = Dimensions::new(users, spec.antennas)?;
        let trials: Vec<Result<Vec<Outcome>>> = with_workers(spec.workers, || {
            (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(spec, dims, t))
                .collect()
        })?;
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        let cells = spec
            .detectors
            .iter()
            .enumerate()
            .map(|(d, &detector)| {
                let (mut reached_mmse, mut diverged, mut errors) = (0, 0, 0);
                for t in &trials {
                    match t[d] {
                        Outcome::Reached => reached_mmse += 1,
                        Outcome::Diverged => diverged += 1,
                        Outcome::Failed => errors += 1,
                        Outcome::Other => {}
                    }
                }
                RegimeCell {
                    detector,
                    reached_mmse,
                    diverged,
                    errors,
                    trials: spec.trials,
                    verdict: classify(reached_mmse, diverged, spec.trials),
                }
            })
            .collect();
        rows.push(RegimeRow { dims, cells });
    }
    Ok(rows)
}

/// Plain-text table: one line per load, one column per detector.
pub fn format_regime_table(rows: &[RegimeRow]) -> String {
    let mut out = String::from("K,M,beta");
    if let Some(first) = rows.first() {
        for c in &first.cells {
            out.push(',');
            out.push_str(c.detector.name());
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{:.4}", r.dims.users, r.dims.antennas, r.beta()));
        for c in &r.cells {
            out.push_str(&format!(",{}", c.verdict));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(45, 0, 50), RegimeVerdict::Converges);
        assert_eq!(classify(44, 0, 50), RegimeVerdict::Mixed);
        assert_eq!(classify(0, 25, 50), RegimeVerdict::Diverges);
        assert_eq!(classify(10, 24, 50), RegimeVerdict::Mixed);
    }

    #[test]
    fn light_load_converges_everywhere() {
        let spec = RegimeSpec {
            antennas: 64,
            users: vec![4],
            trials: 5,
            max_iters: 500,
            ..RegimeSpec::default()
        };
        let rows = regime_table(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        for c in &rows[0].cells {
            assert_eq!(c.verdict, RegimeVerdict::Converges, "{:?}", c);
        }
        let text = format_regime_table(&rows);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("K,M,beta,jacobi,gmpid,sagmpid,richardson\n"));
    }
}

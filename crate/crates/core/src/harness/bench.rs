use std::time::Instant;

use crate::detectors::{mmse_detect, sum_update, variable_update, InitMode, MessageState, UpdateRule, VariableRule};
use crate::error::{Error, Result};
use crate::model::{Dimensions, SystemInstance};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dims: Dimensions,
    /// Median wall time of one GMPID sweep (sum + variable update).
    pub median_iter_seconds: f64,
    /// `median_iter_seconds / (K·M)`.
    pub seconds_per_edge: f64,
    /// Median wall time of a full MMSE detection, when requested.
    pub mmse_seconds: Option<f64>,
}

pub const BENCH_CSV_HEADER: &str = "K,M,median_iter_seconds,seconds_per_km,mmse_seconds";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6e},{:.6e},{}",
            self.dims.users,
            self.dims.antennas,
            self.median_iter_seconds,
            self.seconds_per_edge,
            self.mmse_seconds.map_or_else(String::new, |s| format!("{s:.6e}"))
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times `sweeps` GMPID iterations per size (at least 100) and optionally a
/// few MMSE detections. `dims_list` must be sorted by `K·M`.
///
/// Means are reset to the prior whenever they grow large, so diverging
/// loads are timed on ordinary floating-point values.
pub fn bench_iteration(
    dims_list: &[Dimensions],
    sweeps: usize,
    with_mmse: bool,
    seed: RngSeed,
) -> Result<Vec<BenchRow>> {
    let size = |d: &Dimensions| d.users * d.antennas;
    if dims_list.windows(2).any(|w| size(&w[0]) > size(&w[1])) {
        return Err(Error::InvalidConfig(
            "benchmark sizes must be sorted ascending by K*M".into(),
        ));
    }
    let sweeps = sweeps.max(100);
    let rule = UpdateRule::gmpid(VariableRule::Broadcast);
    dims_list
        .iter()
        .map(|&dims| {
            let inst = SystemInstance::generate_uniform(dims, 1.0, 0.1, seed)?;
            let mut state = MessageState::init(&inst, InitMode::Prior);
            let mut times = Vec::with_capacity(sweeps);
            for i in 0..sweeps + 3 {
                let start = Instant::now();
                sum_update(&mut state, &inst, 1.0)?;
                let sweep = variable_update(&mut state, &inst, rule)?;
                let t = start.elapsed().as_secs_f64();
                if i >= 3 {
                    times.push(t);
                }
                if sweep.max_abs_mean.is_nan() || sweep.max_abs_mean >= 1e6 {
                    state = MessageState::init(&inst, InitMode::Prior);
                }
            }
            let median_iter_seconds = median(times);
            let mmse_seconds = if with_mmse {
                let mut ts = Vec::new();
                for _ in 0..5 {
                    let start = Instant::now();
                    mmse_detect(&inst)?;
                    ts.push(start.elapsed().as_secs_f64());
                }
                Some(median(ts))
            } else {
                None
            };
            Ok(BenchRow {
                dims,
                median_iter_seconds,
                seconds_per_edge: median_iter_seconds / size(&dims) as f64,
                mmse_seconds,
            })
        })
        .collect()
}

//! Detection algorithms: exact MMSE, GMPID, SA-GMPID and the Jacobi and
//! Richardson baselines on the MMSE normal equations.
//!
//! Every iterative detector shares the same stopping logic: it stops when
//! the largest mean change (relative to `max(1, largest |mean|)`) drops below
//! [`DetectorConfig::tol_mean`], when any mean exceeds
//! [`DetectorConfig::divergence_bound`] or becomes non-finite, or after
//! [`DetectorConfig::max_iters`] iterations.

mod baseline;
mod message_passing;
mod mmse;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemInstance;

pub use baseline::{jacobi_run, jacobi_solve, richardson_run, richardson_solve, NormalEquations};
pub use message_passing::{
    gmpid_run, gmpid_run_with_state, resolve_relaxation, sagmpid_run, sagmpid_run_with_state, sum_update,
    variable_update, MessageState, UpdateRule, VariableSweep,
};
pub use mmse::{mmse_detect, MmseEstimate};

/// Starting point of the message-passing detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// `v^v(0) = +∞`, `e^v(0) = 0`.
    PaperInfinite,
    /// `v^v(0) = σ²_{x_k}`, `e^v(0) = 0`: the state one sweep after
    /// `PaperInfinite`, so trajectories match shifted by one iteration.
    #[default]
    Prior,
}

/// How the SA-GMPID relaxation parameter is computed when not given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WMode {
    /// `2 / (λ_min + λ_max)` of `A = γ(HᵀH − D) + I` by dense eigen-solve.
    ExactEigen,
    /// Marchenko–Pastur estimate `1 / (1 + β)`.
    #[default]
    MarchenkoPastur,
}

/// Which sums the variable node uses for the message it sends back to sum
/// node `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableRule {
    /// Sums over all `M` sum nodes, including `m` itself. Every outgoing
    /// message of user `k` is then the same. This is the update the
    /// convergence analysis (`ρ → β + 2√β`) describes.
    #[default]
    Broadcast,
    /// Excludes the destination's own incoming message (standard Gaussian
    /// BP cavity form). Its fixed point is exactly the MMSE estimate.
    Extrinsic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub max_iters: usize,
    /// Early stop threshold on the relative max-norm mean change.
    pub tol_mean: f64,
    /// Any mean with larger magnitude marks the run as diverged.
    pub divergence_bound: f64,
    pub init: InitMode,
    /// SA-GMPID relaxation; computed from `w_mode` when absent.
    pub relaxation_w: Option<f64>,
    pub w_mode: WMode,
    pub variable_rule: VariableRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            max_iters: 200,
            tol_mean: 1e-10,
            divergence_bound: 1e12,
            init: InitMode::Prior,
            relaxation_w: None,
            w_mode: WMode::MarchenkoPastur,
            variable_rule: VariableRule::Broadcast,
        }
    }
}

impl DetectorConfig {
    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn with_w(mut self, w: f64) -> Self {
        self.relaxation_w = Some(w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.tol_mean.is_nan() || self.tol_mean < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tol_mean must be >= 0, got {}",
                self.tol_mean
            )));
        }
        if self.divergence_bound.is_nan() || self.divergence_bound <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "divergence_bound must be > 0, got {}",
                self.divergence_bound
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    MaxIters,
    Diverged,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Converged => "converged",
            Verdict::MaxIters => "max-iters",
            Verdict::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// `(1/K) ‖x̂ − x‖²` against the transmitted symbols.
    pub mse_vs_truth: f64,
    pub mean_delta: f64,
    /// Average posterior variance over users.
    pub mean_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub estimates: Vec<f64>,
    pub posterior_vars: Vec<f64>,
    pub iterations_run: usize,
    pub verdict: Verdict,
    pub trace: Vec<TraceRow>,
    /// Set for detectors whose posterior variances have no exact meaning
    /// (Jacobi, Richardson report `1 / diag(A)`).
    pub variances_approximate: bool,
}

impl DetectionResult {
    /// Writes the trace as CSV with header `iter,mse,mean_delta,mean_var`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,mse,mean_delta,mean_var")?;
        for (i, row) in self.trace.iter().enumerate() {
            writeln!(
                out,
                "{},{:.15e},{:.15e},{:.15e}",
                i + 1,
                row.mse_vs_truth,
                row.mean_delta,
                row.mean_variance
            )?;
        }
        Ok(())
    }
}

/// The detectors selectable from the harness and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Mmse,
    Gmpid,
    Sagmpid,
    Jacobi,
    Richardson,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Mmse,
        DetectorKind::Gmpid,
        DetectorKind::Sagmpid,
        DetectorKind::Jacobi,
        DetectorKind::Richardson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Mmse => "mmse",
            DetectorKind::Gmpid => "gmpid",
            DetectorKind::Sagmpid => "sagmpid",
            DetectorKind::Jacobi => "jacobi",
            DetectorKind::Richardson => "richardson",
        }
    }

    /// Runs the detector, calling `observe(t, x̂(t))` after every iteration.
    pub fn run_observed(
        self,
        inst: &SystemInstance,
        cfg: &DetectorConfig,
        observe: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<DetectionResult> {
        match self {
            DetectorKind::Mmse => {
                let est = mmse_detect(inst)?;
                observe(1, est.estimates.as_slice());
                Ok(est.into_result(inst))
            }
            DetectorKind::Gmpid => message_passing::run(inst, cfg, 1.0, observe).map(|(r, _)| r),
            DetectorKind::Sagmpid => {
                let w = resolve_relaxation(inst, cfg)?;
                message_passing::run(inst, cfg, w, observe).map(|(r, _)| r)
            }
            DetectorKind::Jacobi => {
                cfg.validate()?;
                let ne = NormalEquations::from_instance(inst)?;
                baseline::jacobi_solve(&ne, inst.x().as_slice(), cfg, observe)
            }
            DetectorKind::Richardson => {
                cfg.validate()?;
                let ne = NormalEquations::from_instance(inst)?;
                let step = ne.optimal_richardson_step()?;
                baseline::richardson_solve(&ne, inst.x().as_slice(), step, cfg, observe)
            }
        }
    }

    pub fn run(self, inst: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectionResult> {
        self.run_observed(inst, cfg, &mut |_, _| {})
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|d| {
                d.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("sa-gmpid") && *d == DetectorKind::Sagmpid)
            })
            .ok_or_else(|| Error::InvalidConfig(format!("unknown detector {s:?}")))
    }
}

/// `(1/K) ‖a − b‖²`.
pub fn mean_squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    let den: f64 = b.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

/// Bookkeeping shared by the iterative detectors.
pub(crate) struct IterationLog<'a> {
    cfg: &'a DetectorConfig,
    truth: &'a [f64],
    trace: Vec<TraceRow>,
}

pub(crate) enum Step {
    Continue,
    Stop(Verdict),
}

impl<'a> IterationLog<'a> {
    pub(crate) fn new(cfg: &'a DetectorConfig, truth: &'a [f64]) -> Self {
        IterationLog {
            cfg,
            truth,
            trace: Vec::with_capacity(cfg.max_iters.min(4096)),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.trace.len()
    }

    /// Records one iteration. `max_change` and `max_abs` are max-norms over
    /// every mean the detector tracks; `may_converge` is false while the
    /// change is not yet meaningful (first sweep from an infinite init).
    pub(crate) fn record(
        &mut self,
        estimates: &[f64],
        variances: &[f64],
        max_change: f64,
        max_abs: f64,
        may_converge: bool,
    ) -> Step {
        let delta = max_change / max_abs.max(1.0);
        let mean_variance = variances.iter().sum::<f64>() / variances.len() as f64;
        self.trace.push(TraceRow {
            mse_vs_truth: mean_squared_distance(estimates, self.truth),
            mean_delta: delta,
            mean_variance,
        });
        let blown = !max_abs.is_finite()
            || max_abs > self.cfg.divergence_bound
            || estimates
                .iter()
                .any(|v| !v.is_finite() || v.abs() > self.cfg.divergence_bound);
        if blown {
            Step::Stop(Verdict::Diverged)
        } else if may_converge && delta < self.cfg.tol_mean {
            Step::Stop(Verdict::Converged)
        } else if self.trace.len() >= self.cfg.max_iters {
            Step::Stop(Verdict::MaxIters)
        } else {
            Step::Continue
        }
    }

    pub(crate) fn finish(
        self,
        estimates: Vec<f64>,
        posterior_vars: Vec<f64>,
        verdict: Verdict,
        variances_approximate: bool,
    ) -> DetectionResult {
        DetectionResult {
            estimates,
            posterior_vars,
            iterations_run: self.trace.len(),
            verdict,
            trace: self.trace,
            variances_approximate,
        }
    }
}

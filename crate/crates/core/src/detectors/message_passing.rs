//! GMPID and SA-GMPID on the pairwise factor graph.
//!
//! Sum node `m` and variable node `k` exchange Gaussian messages along edge
//! `(k, m)`. One iteration is a flooding sweep: every sum-to-variable message
//! is computed from the previous variable-to-sum messages, then every
//! variable-to-sum message from the new sum-to-variable ones.
//!
//! Sum node update (cavity over users `i ≠ k`):
//!
//! ```text
//! e^s_{m→k} = √w (y_m − Σ_{i≠k} h_{mi} e^v_{i→m})
//! v^s_{m→k} = Σ_{i≠k} h²_{mi} v^v_{i→m} + σn²
//! ```
//!
//! Variable node update ([`VariableRule::Broadcast`] sums over every `i`;
//! [`VariableRule::Extrinsic`] drops `i = m`):
//!
//! ```text
//! v^v_{k→m} = (Σ_i h²_{ik} / v^s_{i→k} + σ⁻²_{x_k})⁻¹
//! e^v_{k→m} = v^v_{k→m} Σ_i √w h_{ik} e^s_{i→k} / v^s_{i→k} − (w − 1) e^v_{k→m}(t−1)
//! ```
//!
//! Output after each sweep, always over all `M` sum nodes:
//!
//! ```text
//! σ²_{x̂_k} = (Σ_m h²_{mk} / v^s_{m→k} + σ⁻²_{x_k})⁻¹
//! x̂_k = σ²_{x̂_k} Σ_m √w h_{mk} e^s_{m→k} / v^s_{m→k} − (w − 1)/M Σ_m e^v_{k→m}(t−1)
//! ```
//!
//! GMPID is the `w = 1` case. The `(w − 1)/M` correction sits outside the
//! posterior-variance factor, matching the variable-node mean update; with the
//! factor applied to it the SA-GMPID output would settle at roughly `w` times
//! the MMSE estimate.
//!
//! `h'` is never materialized: `√w` multiplies the mean path only, variances
//! always use the unscaled channel and `σn²`. Every sweep costs `O(KM)` by
//! computing each full sum once and subtracting the excluded term.

use crate::analysis::{self, AsymptoticParams};
use crate::detectors::{DetectionResult, DetectorConfig, InitMode, IterationLog, Step, VariableRule, WMode};
use crate::error::{Error, Result};
use crate::model::SystemInstance;

/// The four edge-message arrays of the pairwise graph.
///
/// All arrays are edge-indexed and stored user-major (`k * M + m`), the same
/// layout as the column-major channel matrix. Variances may be `+∞`; the
/// reciprocal of `+∞` is taken as exactly 0 and `0 · ∞` (a zero channel gain
/// times an infinite variance) as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    users: usize,
    antennas: usize,
    mean_v2s: Vec<f64>,
    var_v2s: Vec<f64>,
    mean_s2v: Vec<f64>,
    var_s2v: Vec<f64>,
}

impl MessageState {
    pub fn init(inst: &SystemInstance, mode: InitMode) -> Self {
        let dims = inst.dims();
        let (k_n, m_n) = (dims.users, dims.antennas);
        let n = k_n * m_n;
        let mut var_v2s = vec![f64::INFINITY; n];
        if mode == InitMode::Prior {
            for (k, &sv) in inst.source_vars().iter().enumerate() {
                var_v2s[k * m_n..(k + 1) * m_n].fill(sv);
            }
        }
        MessageState {
            users: k_n,
            antennas: m_n,
            mean_v2s: vec![0.0; n],
            var_v2s,
            mean_s2v: vec![0.0; n],
            var_s2v: vec![f64::INFINITY; n],
        }
    }

    /// Every variable-to-sum message set to `(mean, var)`.
    pub fn uniform(users: usize, antennas: usize, mean: f64, var: f64) -> Self {
        let n = users * antennas;
        MessageState {
            users,
            antennas,
            mean_v2s: vec![mean; n],
            var_v2s: vec![var; n],
            mean_s2v: vec![0.0; n],
            var_s2v: vec![f64::INFINITY; n],
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn idx(&self, k: usize, m: usize) -> usize {
        assert!(k < self.users && m < self.antennas);
        k * self.antennas + m
    }

    /// `e^v_{k→m}`.
    pub fn mean_v2s(&self, k: usize, m: usize) -> f64 {
        self.mean_v2s[self.idx(k, m)]
    }

    /// `v^v_{k→m}`.
    pub fn var_v2s(&self, k: usize, m: usize) -> f64 {
        self.var_v2s[self.idx(k, m)]
    }

    /// `e^s_{m→k}`.
    pub fn mean_s2v(&self, m: usize, k: usize) -> f64 {
        self.mean_s2v[self.idx(k, m)]
    }

    /// `v^s_{m→k}`.
    pub fn var_s2v(&self, m: usize, k: usize) -> f64 {
        self.var_s2v[self.idx(k, m)]
    }

    pub fn set_v2s(&mut self, k: usize, m: usize, mean: f64, var: f64) {
        let i = self.idx(k, m);
        self.mean_v2s[i] = mean;
        self.var_v2s[i] = var;
    }

    pub fn set_s2v(&mut self, m: usize, k: usize, mean: f64, var: f64) {
        let i = self.idx(k, m);
        self.mean_s2v[i] = mean;
        self.var_s2v[i] = var;
    }

    /// All variable-to-sum variances, user-major.
    pub fn var_v2s_all(&self) -> &[f64] {
        &self.var_v2s
    }

    /// All sum-to-variable variances, user-major.
    pub fn var_s2v_all(&self) -> &[f64] {
        &self.var_s2v
    }

    pub fn has_infinite_variance(&self) -> bool {
        self.var_v2s.iter().any(|v| v.is_infinite())
    }

    fn check_shape(&self, inst: &SystemInstance) -> Result<()> {
        let d = inst.dims();
        if d.users != self.users || d.antennas != self.antennas {
            return Err(Error::ShapeMismatch(format!(
                "message state is {}x{}, instance is K={} M={}",
                self.users, self.antennas, d.users, d.antennas
            )));
        }
        Ok(())
    }
}

/// Parameters of one variable-node sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRule {
    /// Relaxation `w`; 1 for GMPID.
    pub w: f64,
    pub variable_rule: VariableRule,
}

impl UpdateRule {
    pub fn gmpid(variable_rule: VariableRule) -> Self {
        UpdateRule { w: 1.0, variable_rule }
    }
}

/// Outputs of one variable-node sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSweep {
    pub estimates: Vec<f64>,
    pub posterior_vars: Vec<f64>,
    /// Largest `|e^v(t) − e^v(t−1)|` over all edges.
    pub max_mean_change: f64,
    /// Largest `|e^v(t)|` over all edges.
    pub max_abs_mean: f64,
}

/// Sum-node sweep: recomputes every `(e^s_{m→k}, v^s_{m→k})` from the
/// current variable-to-sum messages. Returns the largest `|e^s|`.
pub fn sum_update(state: &mut MessageState, inst: &SystemInstance, w: f64) -> Result<f64> {
    state.check_shape(inst)?;
    let (k_n, m_n) = (state.users, state.antennas);
    let h = inst.h().as_slice();
    let y = inst.y().as_slice();
    let noise = inst.noise_var();
    let sw = w.sqrt();

    // Full sums per antenna: Σ h e, finite part of Σ h² v, and how many
    // infinite-variance terms it left out.
    let mut mean_sum = vec![0.0; m_n];
    let mut var_sum = vec![0.0; m_n];
    let mut inf_count = vec![0u32; m_n];
    for k in 0..k_n {
        let col = &h[k * m_n..(k + 1) * m_n];
        let ev = &state.mean_v2s[k * m_n..(k + 1) * m_n];
        let vv = &state.var_v2s[k * m_n..(k + 1) * m_n];
        for m in 0..m_n {
            let hm = col[m];
            mean_sum[m] += hm * ev[m];
            if vv[m].is_finite() {
                var_sum[m] += hm * hm * vv[m];
            } else if hm != 0.0 {
                inf_count[m] += 1;
            }
        }
    }

    let mut max_abs = 0.0f64;
    for k in 0..k_n {
        let base = k * m_n;
        for m in 0..m_n {
            let i = base + m;
            let hm = h[i];
            let ev = state.mean_v2s[i];
            let vv = state.var_v2s[i];
            let es = sw * (y[m] - (mean_sum[m] - hm * ev));
            let (own_finite, own_inf) = if vv.is_finite() {
                (hm * hm * vv, 0)
            } else {
                (0.0, u32::from(hm != 0.0))
            };
            let vs = if inf_count[m] > own_inf {
                f64::INFINITY
            } else {
                (var_sum[m] - own_finite).max(0.0) + noise
            };
            state.mean_s2v[i] = es;
            state.var_s2v[i] = vs;
            max_abs = max_abs.max(es.abs());
            if es.is_nan() {
                max_abs = f64::NAN;
            }
        }
    }
    Ok(max_abs)
}

/// Variable-node sweep: recomputes every `(e^v_{k→m}, v^v_{k→m})` from the
/// current sum-to-variable messages and returns the per-user posterior.
pub fn variable_update(state: &mut MessageState, inst: &SystemInstance, rule: UpdateRule) -> Result<VariableSweep> {
    state.check_shape(inst)?;
    let (k_n, m_n) = (state.users, state.antennas);
    let h = inst.h().as_slice();
    let sw = rule.w.sqrt();
    let memory = rule.w - 1.0;
    let inv_m = 1.0 / m_n as f64;

    let mut estimates = vec![0.0; k_n];
    let mut posterior_vars = vec![0.0; k_n];
    let mut max_change = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut nan_seen = false;
    let mut prec = vec![0.0; m_n];
    let mut info = vec![0.0; m_n];

    for k in 0..k_n {
        let base = k * m_n;
        let prior_prec = 1.0 / inst.source_vars()[k];
        let (mut prec_sum, mut info_sum, mut old_mean_sum) = (0.0, 0.0, 0.0);
        for m in 0..m_n {
            let i = base + m;
            let vs = state.var_s2v[i];
            if vs <= 0.0 {
                return Err(Error::DegenerateVariance { antenna: m, user: k });
            }
            let inv = if vs.is_finite() { 1.0 / vs } else { 0.0 };
            let hm = h[i];
            prec[m] = hm * hm * inv;
            info[m] = sw * hm * inv * state.mean_s2v[i];
            prec_sum += prec[m];
            info_sum += info[m];
            old_mean_sum += state.mean_v2s[i];
        }
        let post_var = 1.0 / (prec_sum + prior_prec);
        posterior_vars[k] = post_var;
        estimates[k] = post_var * info_sum - memory * inv_m * old_mean_sum;

        for m in 0..m_n {
            let i = base + m;
            let old = state.mean_v2s[i];
            let (vv, ev) = match rule.variable_rule {
                VariableRule::Broadcast => (post_var, post_var * info_sum),
                VariableRule::Extrinsic => {
                    let v = 1.0 / ((prec_sum - prec[m]).max(0.0) + prior_prec);
                    (v, v * (info_sum - info[m]))
                }
            };
            let ev = ev - memory * old;
            state.var_v2s[i] = vv;
            state.mean_v2s[i] = ev;
            max_change = max_change.max((ev - old).abs());
            max_abs = max_abs.max(ev.abs());
            nan_seen |= ev.is_nan();
        }
    }
    if nan_seen {
        max_abs = f64::NAN;
    }
    Ok(VariableSweep {
        estimates,
        posterior_vars,
        max_mean_change: max_change,
        max_abs_mean: max_abs,
    })
}

/// Shared iteration loop; `w = 1` is GMPID.
pub(crate) fn run(
    inst: &SystemInstance,
    cfg: &DetectorConfig,
    w: f64,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<(DetectionResult, MessageState)> {
    cfg.validate()?;
    let rule = UpdateRule {
        w,
        variable_rule: cfg.variable_rule,
    };
    let mut state = MessageState::init(inst, cfg.init);
    let mut log = IterationLog::new(cfg, inst.x().as_slice());
    loop {
        let warm = !state.has_infinite_variance();
        let sum_abs = sum_update(&mut state, inst, w)?;
        let sweep = variable_update(&mut state, inst, rule)?;
        observe(log.len() + 1, &sweep.estimates);
        let max_abs = if sum_abs.is_nan() {
            f64::NAN
        } else {
            sweep.max_abs_mean.max(sum_abs)
        };
        let step = log.record(
            &sweep.estimates,
            &sweep.posterior_vars,
            sweep.max_mean_change,
            max_abs,
            warm,
        );
        if let Step::Stop(verdict) = step {
            return Ok((log.finish(sweep.estimates, sweep.posterior_vars, verdict, false), state));
        }
    }
}

/// GMPID from the configured init until convergence, divergence or
/// `max_iters`.
pub fn gmpid_run(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectionResult> {
    run(inst, cfg, 1.0, &mut |_, _| {}).map(|(r, _)| r)
}

/// [`gmpid_run`] that also returns the final message state.
pub fn gmpid_run_with_state(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<(DetectionResult, MessageState)> {
    run(inst, cfg, 1.0, &mut |_, _| {})
}

/// The relaxation SA-GMPID will use for this instance and config.
///
/// A given `w` must be positive; under [`WMode::ExactEigen`] it must also be
/// below `2 / λ_max` of `A = γ(HᵀH − D) + I`. Without a given `w` the
/// optimum is computed in the configured mode, which needs identical source
/// variances and `K < M`.
pub fn resolve_relaxation(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<f64> {
    match cfg.relaxation_w {
        Some(w) => {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidRelaxation {
                    w,
                    upper: f64::INFINITY,
                });
            }
            if cfg.w_mode == WMode::ExactEigen {
                let params = AsymptoticParams::from_instance(inst)?;
                let a = analysis::iteration_matrix(inst.h(), analysis::gamma_asymptotic(&params));
                let (_, lmax) = analysis::extreme_eigenvalues(&a)?;
                let upper = 2.0 / lmax;
                if w >= upper {
                    return Err(Error::InvalidRelaxation { w, upper });
                }
            }
            Ok(w)
        }
        None => {
            let params = AsymptoticParams::from_instance(inst)?;
            let h = (cfg.w_mode == WMode::ExactEigen).then(|| inst.h());
            analysis::optimal_w(&params, cfg.w_mode, h)
        }
    }
}

/// SA-GMPID with the relaxation from [`resolve_relaxation`].
pub fn sagmpid_run(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectionResult> {
    sagmpid_run_with_state(inst, cfg).map(|(r, _)| r)
}

pub fn sagmpid_run_with_state(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<(DetectionResult, MessageState)> {
    let w = resolve_relaxation(inst, cfg)?;
    run(inst, cfg, w, &mut |_, _| {})
}

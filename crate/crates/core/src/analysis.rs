//! Large-system asymptotics and convergence predicates for GMPID and
//! SA-GMPID.
//!
//! Everything here assumes identical source variances `σx²` and a load
//! `β = K/M < 1`. Eigen-solves are dense; they target `K` up to a few
//! thousand.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::detectors::{sum_update, variable_update, MessageState, UpdateRule, VariableRule, WMode};
use crate::error::{Error, Result};
use crate::model::SystemInstance;

/// `(√2 − 1)²`: below this load GMPID provably reaches the MMSE estimate.
pub const GMPID_LOAD_THRESHOLD: f64 = (std::f64::consts::SQRT_2 - 1.0) * (std::f64::consts::SQRT_2 - 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticParams {
    users: usize,
    antennas: usize,
    sigma_x2: f64,
    sigma_n2: f64,
}

impl AsymptoticParams {
    pub fn new(users: usize, antennas: usize, sigma_x2: f64, sigma_n2: f64) -> Result<Self> {
        crate::model::Dimensions::new(users, antennas)?;
        for (what, v) in [("source variance", sigma_x2), ("noise variance", sigma_n2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveVariance { what, value: v });
            }
        }
        if users >= antennas {
            return Err(Error::LoadTooHigh {
                beta: users as f64 / antennas as f64,
            });
        }
        Ok(AsymptoticParams {
            users,
            antennas,
            sigma_x2,
            sigma_n2,
        })
    }

    pub fn from_instance(inst: &SystemInstance) -> Result<Self> {
        let sx2 = inst.uniform_source_var().ok_or(Error::NonUniformSourceVariance)?;
        let d = inst.dims();
        Self::new(d.users, d.antennas, sx2, inst.noise_var())
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn sigma_x2(&self) -> f64 {
        self.sigma_x2
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n2
    }

    pub fn beta(&self) -> f64 {
        self.users as f64 / self.antennas as f64
    }

    /// `s = σx² / σn²`.
    pub fn snr(&self) -> f64 {
        self.sigma_x2 / self.sigma_n2
    }

    fn k(&self) -> f64 {
        self.users as f64
    }

    fn m(&self) -> f64 {
        self.antennas as f64
    }
}

/// Limiting per-user MMSE as `K → ∞`: `σn² / (M − K)`.
pub fn mmse_asymptotic_mse(p: &AsymptoticParams) -> f64 {
    p.sigma_n2 / (p.m() - p.k())
}

/// Positive root `σ̂²` of `Kσx⁻² σ̂⁴ + (σn²σx⁻² + M − K) σ̂² − σn² = 0`, the
/// common limit of every GMPID variable-to-sum variance.
///
/// Evaluated as `2c / (√(b² + 4ac) + b)`, which equals the textbook root
/// without cancelling when `4ac ≪ b²`.
pub fn gmpid_variance_fixed_point(p: &AsymptoticParams) -> f64 {
    let (a, b, c) = variance_quadratic(p);
    let root = 2.0 * c / ((b * b + 4.0 * a * c).sqrt() + b);
    debug_assert!(variance_quadratic_residual(p, root) <= 1e-10);
    root
}

fn variance_quadratic(p: &AsymptoticParams) -> (f64, f64, f64) {
    let inv_sx2 = 1.0 / p.sigma_x2;
    (p.k() * inv_sx2, p.sigma_n2 * inv_sx2 + p.m() - p.k(), p.sigma_n2)
}

/// `|aσ⁴ + bσ² − c|` relative to the largest of the three terms.
pub fn variance_quadratic_residual(p: &AsymptoticParams, s2: f64) -> f64 {
    let (a, b, c) = variance_quadratic(p);
    let terms = [a * s2 * s2, b * s2, c];
    let scale = terms.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));
    (terms[0] + terms[1] - terms[2]).abs() / scale
}

/// Large-system GMPID variance `σn² / (M − K + s⁻¹)`.
pub fn gmpid_asymptotic_mse(p: &AsymptoticParams) -> f64 {
    p.sigma_n2 / (p.m() - p.k() + 1.0 / p.snr())
}

/// Limit `σ̃² = Kσ̂² + σn²` of the sum-to-variable variances.
pub fn sum_variance_limit(p: &AsymptoticParams) -> f64 {
    p.k() * gmpid_variance_fixed_point(p) + p.sigma_n2
}

/// `γ = σ̂² / σ̃² = 1 / (K + σn²/σ̂²)` from the variance fixed point.
pub fn gamma_value(p: &AsymptoticParams) -> f64 {
    1.0 / (p.k() + p.sigma_n2 / gmpid_variance_fixed_point(p))
}

/// `γ ≈ (M + s⁻¹)⁻¹`.
pub fn gamma_asymptotic(p: &AsymptoticParams) -> f64 {
    1.0 / (p.m() + 1.0 / p.snr())
}

/// `γ = mean v^v / mean v^s` measured on a message state whose variances
/// have settled. One extra sweep is run on a copy; if any variance still
/// moves by more than `1e-6` relative the state is rejected.
pub fn empirical_gamma(state: &MessageState, inst: &SystemInstance) -> Result<f64> {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(state.var_v2s_all()) || !finite(state.var_s2v_all()) {
        return Err(Error::NotConverged("message variances are not finite yet".into()));
    }
    let mut probe = state.clone();
    sum_update(&mut probe, inst, 1.0)?;
    variable_update(&mut probe, inst, UpdateRule::gmpid(VariableRule::Broadcast))?;
    let moved = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / y.abs())
            .fold(0.0f64, f64::max)
    };
    let drift = moved(probe.var_v2s_all(), state.var_v2s_all()).max(moved(probe.var_s2v_all(), state.var_s2v_all()));
    if drift > 1e-6 {
        return Err(Error::NotConverged(format!(
            "variances still moving (relative change {drift:.3e})"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(state.var_v2s_all()) / mean(state.var_s2v_all()))
}

/// Which `γ` the predicates use.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaChoice {
    /// `(M + s⁻¹)⁻¹`.
    #[default]
    Asymptotic,
    /// `1 / (K + σn²/σ̂²)`.
    FixedPoint,
    /// A measured value, e.g. from [`empirical_gamma`].
    Given(f64),
}

impl GammaChoice {
    pub fn resolve(self, p: &AsymptoticParams) -> f64 {
        match self {
            GammaChoice::Asymptotic => gamma_asymptotic(p),
            GammaChoice::FixedPoint => gamma_value(p),
            GammaChoice::Given(g) => g,
        }
    }
}

/// `HᵀH − D_{HᵀH}`.
pub fn offdiag_gram(h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = h.tr_mul(h);
    g.fill_diagonal(0.0);
    g
}

/// `A = γ (HᵀH − D_{HᵀH}) + I_K`.
pub fn iteration_matrix(h: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut a = offdiag_gram(h) * gamma;
    a.fill_diagonal(1.0);
    a
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(SymmetricEigen::new(m.clone()).eigenvalues.as_slice().to_vec())
}

/// Largest `|λ|` of a symmetric matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.into_iter().fold(0.0, |acc, l| acc.max(l.abs())))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let ev = eigenvalues(m)?;
    if ev.is_empty() {
        return Err(Error::NotSquare { rows: 0, cols: 0 });
    }
    Ok(ev
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l), hi.max(l))))
}

/// Outcome of the two sufficient conditions for GMPID mean convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Check {
    pub gamma: f64,
    /// Every row of `I + γ(HᵀH − D)` strictly dominant.
    pub strictly_dominant: bool,
    /// Irreducible, weakly dominant everywhere and strictly in some row.
    pub irreducibly_dominant: bool,
    /// `ρ(γ(HᵀH − D))`.
    pub spectral_radius: f64,
}

impl Theorem2Check {
    pub fn diag_dominant(&self) -> bool {
        self.strictly_dominant || self.irreducibly_dominant
    }

    pub fn radius_below_one(&self) -> bool {
        self.spectral_radius < 1.0
    }

    /// Either condition holds.
    pub fn guaranteed(&self) -> bool {
        self.diag_dominant() || self.radius_below_one()
    }
}

/// Evaluates both sufficient conditions on `I_K + γ(HᵀH − D)`.
pub fn check_theorem2(h: &DMatrix<f64>, gamma: f64) -> Result<Theorem2Check> {
    let off = offdiag_gram(h) * gamma;
    let k = off.nrows();
    let row_sums: Vec<f64> = (0..k).map(|i| off.row(i).iter().map(|v| v.abs()).sum()).collect();
    let strictly_dominant = row_sums.iter().all(|&s| s < 1.0);
    let weakly = row_sums.iter().all(|&s| s <= 1.0);
    let some_strict = row_sums.iter().any(|&s| s < 1.0);
    let irreducibly_dominant = weakly && some_strict && pattern_connected(&off);
    Ok(Theorem2Check {
        gamma,
        strictly_dominant,
        irreducibly_dominant,
        spectral_radius: spectral_radius(&off)?,
    })
}

/// Strong connectivity of the off-diagonal nonzero pattern. The pattern of
/// `HᵀH` is symmetric, so a single traversal from node 0 decides it.
fn pattern_connected(off: &DMatrix<f64>) -> bool {
    let n = off.nrows();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && (off[(i, j)] != 0.0 || off[(j, i)] != 0.0) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// `β < (√2 − 1)²`.
pub fn corollary1_predicate(beta: f64) -> bool {
    beta < GMPID_LOAD_THRESHOLD
}

/// Large-system `ρ(γ(HᵀH − D)) → β + 2√β`.
pub fn gmpid_asymptotic_radius(beta: f64) -> f64 {
    beta + 2.0 * beta.sqrt()
}

/// Marchenko–Pastur estimates of the extreme eigenvalues of `A`:
/// `1 + γM[(1 ∓ √β)² − 1]`.
pub fn mp_eigen_bounds(p: &AsymptoticParams, gamma: f64) -> (f64, f64) {
    let gm = gamma * p.m();
    let r = p.beta().sqrt();
    (
        1.0 + gm * ((1.0 - r).powi(2) - 1.0),
        1.0 + gm * ((1.0 + r).powi(2) - 1.0),
    )
}

/// Optimal SA-GMPID relaxation.
///
/// `ExactEigen` needs `h` and returns `2 / (λ_min + λ_max)` of
/// `A = γ(HᵀH − D) + I` with the asymptotic `γ`; `MarchenkoPastur` returns
/// `1 / (1 + β)`. When `h` is given the result is checked against the
/// admissible range `(0, 2/λ_max)`.
pub fn optimal_w(p: &AsymptoticParams, mode: WMode, h: Option<&DMatrix<f64>>) -> Result<f64> {
    let extremes = match h {
        Some(h) => Some(extreme_eigenvalues(&iteration_matrix(h, gamma_asymptotic(p)))?),
        None => None,
    };
    let w = match mode {
        WMode::MarchenkoPastur => 1.0 / (1.0 + p.beta()),
        WMode::ExactEigen => {
            let (lmin, lmax) =
                extremes.ok_or_else(|| Error::InvalidConfig("exact-eigen w needs the channel matrix".into()))?;
            2.0 / (lmin + lmax)
        }
    };
    if let Some((_, lmax)) = extremes {
        let upper = 2.0 / lmax;
        if !(w > 0.0 && w < upper) {
            return Err(Error::InvalidRelaxation { w, upper });
        }
    }
    Ok(w)
}

/// `ρ(I − wA) = max(|1 − wλ_min|, |1 − wλ_max|)`.
pub fn relaxed_radius(w: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    (1.0 - w * lambda_min).abs().max((1.0 - w * lambda_max).abs())
}

/// Large-system SA-GMPID radius at the optimal `w`: `2√β / (1 + β)`.
pub fn sagmpid_asymptotic_radius(beta: f64) -> f64 {
    2.0 * beta.sqrt() / (1.0 + beta)
}

/// Everything the convergence analysis says about one channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub users: usize,
    pub antennas: usize,
    pub beta: f64,
    pub snr: f64,
    pub gamma: f64,
    /// `ρ(γ(HᵀH − D))`.
    pub spectral_radius_gmpid: f64,
    pub strictly_dominant: bool,
    pub irreducibly_dominant: bool,
    pub diag_dominant: bool,
    /// `β + 2√β`.
    pub predicted_radius_asymptotic: f64,
    pub lambda_min_a: f64,
    pub lambda_max_a: f64,
    pub lambda_bounds_mp: (f64, f64),
    pub w_opt_exact: f64,
    pub w_opt_asymptotic: f64,
    /// `ρ(I − w_opt_exact A)`.
    pub sagmpid_radius_exact: f64,
    /// `2√β / (1 + β)`.
    pub sagmpid_radius_asymptotic: f64,
    pub theorem2_condition1: bool,
    pub theorem2_condition2: bool,
    pub theorem2_guaranteed: bool,
    pub corollary1: bool,
    /// `0 < w_opt_asymptotic < 2/λ_max`.
    pub theorem3_asymptotic_w_admissible: bool,
}

/// Column order of [`ConvergenceReport::csv_row`].
pub const REPORT_CSV_HEADER: &str = "K,M,beta,snr,gamma,spectral_radius_gmpid,strictly_dominant,irreducibly_dominant,\
diag_dominant,predicted_radius_asymptotic,lambda_min_A,lambda_max_A,lambda_min_mp,lambda_max_mp,w_opt_exact,\
w_opt_asymptotic,sagmpid_radius_exact,sagmpid_radius_asymptotic,theorem2_condition1,theorem2_condition2,\
theorem2_guaranteed,corollary1,theorem3_asymptotic_w_admissible";

impl ConvergenceReport {
    pub fn compute(h: &DMatrix<f64>, p: &AsymptoticParams, gamma: GammaChoice) -> Result<Self> {
        if h.ncols() != p.users || h.nrows() != p.antennas {
            return Err(Error::ShapeMismatch(format!(
                "H is {}x{}, params say K={} M={}",
                h.nrows(),
                h.ncols(),
                p.users,
                p.antennas
            )));
        }
        let gamma = gamma.resolve(p);
        let t2 = check_theorem2(h, gamma)?;
        let (lambda_min_a, lambda_max_a) = extreme_eigenvalues(&iteration_matrix(h, gamma))?;
        let w_opt_exact = 2.0 / (lambda_min_a + lambda_max_a);
        let w_opt_asymptotic = 1.0 / (1.0 + p.beta());
        Ok(ConvergenceReport {
            users: p.users,
            antennas: p.antennas,
            beta: p.beta(),
            snr: p.snr(),
            gamma,
            spectral_radius_gmpid: t2.spectral_radius,
            strictly_dominant: t2.strictly_dominant,
            irreducibly_dominant: t2.irreducibly_dominant,
            diag_dominant: t2.diag_dominant(),
            predicted_radius_asymptotic: gmpid_asymptotic_radius(p.beta()),
            lambda_min_a,
            lambda_max_a,
            lambda_bounds_mp: mp_eigen_bounds(p, gamma),
            w_opt_exact,
            w_opt_asymptotic,
            sagmpid_radius_exact: relaxed_radius(w_opt_exact, lambda_min_a, lambda_max_a),
            sagmpid_radius_asymptotic: sagmpid_asymptotic_radius(p.beta()),
            theorem2_condition1: t2.diag_dominant(),
            theorem2_condition2: t2.radius_below_one(),
            theorem2_guaranteed: t2.guaranteed(),
            corollary1: corollary1_predicate(p.beta()),
            theorem3_asymptotic_w_admissible: w_opt_asymptotic > 0.0 && w_opt_asymptotic < 2.0 / lambda_max_a,
        })
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:.15e}");
        vec![
            ("K", self.users.to_string()),
            ("M", self.antennas.to_string()),
            ("beta", f(self.beta)),
            ("snr", f(self.snr)),
            ("gamma", f(self.gamma)),
            ("spectral_radius_gmpid", f(self.spectral_radius_gmpid)),
            ("strictly_dominant", self.strictly_dominant.to_string()),
            ("irreducibly_dominant", self.irreducibly_dominant.to_string()),
            ("diag_dominant", self.diag_dominant.to_string()),
            ("predicted_radius_asymptotic", f(self.predicted_radius_asymptotic)),
            ("lambda_min_A", f(self.lambda_min_a)),
            ("lambda_max_A", f(self.lambda_max_a)),
            ("lambda_min_mp", f(self.lambda_bounds_mp.0)),
            ("lambda_max_mp", f(self.lambda_bounds_mp.1)),
            ("w_opt_exact", f(self.w_opt_exact)),
            ("w_opt_asymptotic", f(self.w_opt_asymptotic)),
            ("sagmpid_radius_exact", f(self.sagmpid_radius_exact)),
            ("sagmpid_radius_asymptotic", f(self.sagmpid_radius_asymptotic)),
            ("theorem2_condition1", self.theorem2_condition1.to_string()),
            ("theorem2_condition2", self.theorem2_condition2.to_string()),
            ("theorem2_guaranteed", self.theorem2_guaranteed.to_string()),
            ("corollary1", self.corollary1.to_string()),
            (
                "theorem3_asymptotic_w_admissible",
                self.theorem3_asymptotic_w_admissible.to_string(),
            ),
        ]
    }

    /// One `key=value` per line, in [`REPORT_CSV_HEADER`] order.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    /// One CSV data row matching [`REPORT_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}

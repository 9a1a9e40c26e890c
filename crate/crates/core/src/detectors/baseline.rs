//! Classical stationary iterations on the MMSE normal equations
//! `A x = b`, `A = σn⁻² HᵀH + V_x⁻¹`, `b = σn⁻² Hᵀy`, started from `x = 0`.

use nalgebra::{DMatrix, DVector};

use crate::analysis::extreme_eigenvalues;
use crate::detectors::{DetectionResult, DetectorConfig, IterationLog, Step};
use crate::error::{Error, Result};
use crate::model::SystemInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl NormalEquations {
    pub fn from_instance(inst: &SystemInstance) -> Result<Self> {
        let inv_noise = 1.0 / inst.noise_var();
        let h = inst.h();
        let mut a = h.tr_mul(h) * inv_noise;
        for (k, &sv) in inst.source_vars().iter().enumerate() {
            a[(k, k)] += 1.0 / sv;
        }
        let b = h.tr_mul(inst.y()) * inv_noise;
        Ok(NormalEquations { a, b })
    }

    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if a.nrows() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "A is {}x{}, b has {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(NormalEquations { a, b })
    }

    /// `2 / (λ_min(A) + λ_max(A))`, the step minimizing `ρ(I − w_r A)`.
    pub fn optimal_richardson_step(&self) -> Result<f64> {
        let (lmin, lmax) = extreme_eigenvalues(&self.a)?;
        Ok(2.0 / (lmin + lmax))
    }
}

/// Jacobi: `x ← D⁻¹ (b − (A − D) x)`.
pub fn jacobi_solve(
    ne: &NormalEquations,
    truth: &[f64],
    cfg: &DetectorConfig,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<DetectionResult> {
    cfg.validate()?;
    let n = ne.b.len();
    let diag = ne.a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    let vars: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    let mut x = DVector::zeros(n);
    let mut log = IterationLog::new(cfg, truth);
    loop {
        let ax = &ne.a * &x;
        let next = DVector::from_fn(n, |i, _| (ne.b[i] - ax[i] + diag[i] * x[i]) / diag[i]);
        let (change, abs) = change_and_scale(&next, &x);
        x = next;
        observe(log.len() + 1, x.as_slice());
        if let Step::Stop(v) = log.record(x.as_slice(), &vars, change, abs, true) {
            return Ok(log.finish(x.as_slice().to_vec(), vars, v, true));
        }
    }
}

/// Richardson: `x ← x + step (b − A x)`.
pub fn richardson_solve(
    ne: &NormalEquations,
    truth: &[f64],
    step: f64,
    cfg: &DetectorConfig,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<DetectionResult> {
    cfg.validate()?;
    let n = ne.b.len();
    let vars: Vec<f64> = ne.a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = DVector::zeros(n);
    let mut log = IterationLog::new(cfg, truth);
    loop {
        let residual = &ne.b - &ne.a * &x;
        let next = &x + residual * step;
        let (change, abs) = change_and_scale(&next, &x);
        x = next;
        observe(log.len() + 1, x.as_slice());
        if let Step::Stop(v) = log.record(x.as_slice(), &vars, change, abs, true) {
            return Ok(log.finish(x.as_slice().to_vec(), vars, v, true));
        }
    }
}

fn change_and_scale(next: &DVector<f64>, prev: &DVector<f64>) -> (f64, f64) {
    let mut change = 0.0f64;
    let mut abs = 0.0f64;
    for (a, b) in next.iter().zip(prev.iter()) {
        if a.is_nan() {
            return (f64::NAN, f64::NAN);
        }
        change = change.max((a - b).abs());
        abs = abs.max(a.abs());
    }
    (change, abs)
}

/// Jacobi on the instance's normal equations. Posterior variances are
/// `1 / diag(A)` and flagged approximate.
pub fn jacobi_run(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectionResult> {
    let ne = NormalEquations::from_instance(inst)?;
    jacobi_solve(&ne, inst.x().as_slice(), cfg, &mut |_, _| {})
}

/// Richardson with the eigen-optimal step on the instance's normal equations.
pub fn richardson_run(inst: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectionResult> {
    let ne = NormalEquations::from_instance(inst)?;
    let step = ne.optimal_richardson_step()?;
    richardson_solve(&ne, inst.x().as_slice(), step, cfg, &mut |_, _| {})
}

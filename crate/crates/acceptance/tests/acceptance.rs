//! End-to-end acceptance criteria. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Every threshold is a named constant below; none is tuned per run.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gmpid::analysis::{
    gmpid_asymptotic_radius, gmpid_variance_fixed_point, sagmpid_asymptotic_radius, variance_quadratic_residual,
    AsymptoticParams, ConvergenceReport, GammaChoice,
};
use gmpid::detectors::{
    gmpid_run, mean_squared_distance, mmse_detect, relative_error, sagmpid_run, sum_update, variable_update,
    DetectorConfig, DetectorKind, InitMode, MessageState, UpdateRule, Verdict,
};
use gmpid::harness::{
    bench_iteration, format_regime_table, regime_table, run_experiment, sa_comparison_specs, ExperimentSpec,
    RegimeSpec, RegimeVerdict,
};
use gmpid::model::{Dimensions, SystemInstance};
use gmpid::RngSeed;

/// `SNR = 1/σn²` used wherever a criterion leaves it open.
const SNR: f64 = 10.0;

const C1_INSTANCES: u64 = 20;
const C1_REL_TOL: f64 = 1e-6;

const C2_TRIALS: u64 = 50;
const C2_REL_TOL: f64 = 0.05;
const C2_PAPER_VALUE: f64 = 4.9975e-4;
const C2_VARIANCE_SETTLED: f64 = 1e-9;
const C2_BUDGET: Duration = Duration::from_secs(60);

const C3_TRIALS: usize = 50;
const C3_W: f64 = 0.6;
const C3_ITERS: usize = 100;
const C3_DIST_TOL: f64 = 1e-4;

const C4_SEEDS: u64 = 20;
const C4_DIST_TOL: f64 = 1e-4;
const C4_MAX_ITERS: usize = 500;
const C4_WIN_FRACTION: f64 = 0.8;

const C5_USERS: usize = 500;
const C5_REL_TOL: f64 = 0.10;

const C6_TRIALS: usize = 50;
const C6_BUDGET: Duration = Duration::from_secs(600);

const C7_MONOTONE_SEEDS: u64 = 10;
const C7_MONOTONE_SLACK: f64 = 1e-12;
const C7_TRACE_TOL: f64 = 1e-12;
const C7_RESIDUAL_DRAWS: u64 = 1000;
const C7_RESIDUAL_TOL: f64 = 1e-10;

const C8_MAX_DRIFT: f64 = 2.5;
const C8_SWEEPS: usize = 200;
const C8_FIG5_TRIALS: usize = 50;
const C8_BUDGET: Duration = Duration::from_secs(300);

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(users: usize, antennas: usize, seed: u64) -> SystemInstance {
    SystemInstance::generate_uniform(Dimensions::new(users, antennas).unwrap(), 1.0, 1.0 / SNR, RngSeed(seed)).unwrap()
}

fn mmse_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for s in 0..C1_INSTANCES {
        let users = 1 + (s % 5) as usize;
        let inst = uniform(users, 40, 1000 + s);
        let r = gmpid_run(&inst, &DetectorConfig::default()).unwrap();
        if r.verdict != Verdict::Converged {
            unconverged += 1;
        }
        let mmse = mmse_detect(&inst).unwrap();
        worst = worst.max(relative_error(&r.estimates, mmse.estimates.as_slice()));
    }
    outcome(
        unconverged == 0 && worst <= C1_REL_TOL,
        format!(
            "{unconverged} of {C1_INSTANCES} not converged; worst relative error {worst:.3e} (tol {C1_REL_TOL:.0e})"
        ),
    )
}

fn variance_fixed_point() -> Outcome {
    let started = Instant::now();
    let (mut gmpid_sum, mut mmse_sum) = (0.0, 0.0);
    let mut unsettled = 0;
    for t in 0..C2_TRIALS {
        let inst = uniform(100, 300, 2000 + t);
        let r = gmpid_run(&inst, &DetectorConfig::default()).unwrap();
        let n = r.trace.len();
        if n < 2 || {
            let (a, b) = (r.trace[n - 2].mean_variance, r.trace[n - 1].mean_variance);
            (a - b).abs() > C2_VARIANCE_SETTLED * b
        } {
            unsettled += 1;
        }
        gmpid_sum += r.posterior_vars.iter().sum::<f64>() / r.posterior_vars.len() as f64;
        let m = mmse_detect(&inst).unwrap();
        mmse_sum += m.posterior_vars.mean();
    }
    let gmpid_mean = gmpid_sum / C2_TRIALS as f64;
    let mmse_mean = mmse_sum / C2_TRIALS as f64;
    let err_a = (gmpid_mean / mmse_mean - 1.0).abs();
    let err_b = (gmpid_mean / C2_PAPER_VALUE - 1.0).abs();
    let elapsed = started.elapsed();
    outcome(
        unsettled == 0 && err_a <= C2_REL_TOL && err_b <= C2_REL_TOL && elapsed < C2_BUDGET,
        format!(
            "GMPID {gmpid_mean:.5e}, MMSE diag {mmse_mean:.5e} ({:.2}%), closed form {C2_PAPER_VALUE:.5e} ({:.2}%), \
             {unsettled} unsettled, {:.1}s",
            100.0 * err_a,
            100.0 * err_b,
            elapsed.as_secs_f64()
        ),
    )
}

fn divergence_regime() -> Outcome {
    let mut spec = ExperimentSpec::new(
        Dimensions::new(200, 300).unwrap(),
        vec![SNR],
        vec![C3_ITERS],
        vec![DetectorKind::Gmpid, DetectorKind::Sagmpid],
    );
    spec.trials = C3_TRIALS;
    spec.base_seed = RngSeed(3000);
    spec.detector_cfg = DetectorConfig::default().with_w(C3_W);
    let r = run_experiment(&spec).unwrap();
    let g = r.row(DetectorKind::Gmpid, SNR, C3_ITERS).unwrap();
    let sa = r.row(DetectorKind::Sagmpid, SNR, C3_ITERS).unwrap();
    outcome(
        g.diverged_fraction > 0.5 && sa.diverged_fraction == 0.0 && sa.mean_dist_mmse <= C3_DIST_TOL,
        format!(
            "GMPID diverged {:.2}; SA-GMPID diverged {:.2}, distance to MMSE {:.3e} (tol {C3_DIST_TOL:.0e})",
            g.diverged_fraction, sa.diverged_fraction, sa.mean_dist_mmse
        ),
    )
}

fn iterations_to_reach(kind: DetectorKind, inst: &SystemInstance, target: &[f64]) -> Option<usize> {
    let cfg = DetectorConfig::default().with_max_iters(C4_MAX_ITERS);
    let mut hit = None;
    let r = kind.run_observed(inst, &cfg, &mut |t, est| {
        if hit.is_none() && mean_squared_distance(est, target) <= C4_DIST_TOL {
            hit = Some(t);
        }
    });
    match r {
        Ok(_) => hit,
        Err(_) => None,
    }
}

fn speed_ordering() -> Outcome {
    let mut wins = 0;
    let mut summary = Vec::new();
    for s in 0..C4_SEEDS {
        let inst = uniform(100, 300, 4000 + s);
        let target = mmse_detect(&inst).unwrap().estimates;
        let sa = iterations_to_reach(DetectorKind::Sagmpid, &inst, target.as_slice());
        let g = iterations_to_reach(DetectorKind::Gmpid, &inst, target.as_slice());
        if sa.is_some() && (g.is_none() || sa < g) {
            wins += 1;
        }
        let show = |x: Option<usize>| x.map_or("never".to_string(), |v| v.to_string());
        if s < 3 {
            summary.push(format!("{}/{}", show(sa), show(g)));
        }
    }
    let frac = wins as f64 / C4_SEEDS as f64;
    outcome(
        frac >= C4_WIN_FRACTION,
        format!(
            "SA-GMPID faster on {wins}/{C4_SEEDS} seeds (need {:.0}%); first seeds SA/GMPID: {}",
            100.0 * C4_WIN_FRACTION,
            summary.join(" ")
        ),
    )
}

fn spectral_asymptotics() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, antennas) in [(0.1, 5000), (0.5, 1000)] {
        let inst = uniform(C5_USERS, antennas, 5000 + antennas as u64);
        let p = AsymptoticParams::from_instance(&inst).unwrap();
        let r = ConvergenceReport::compute(inst.h(), &p, GammaChoice::Asymptotic).unwrap();
        let rho_pred = gmpid_asymptotic_radius(beta);
        let sa_pred = sagmpid_asymptotic_radius(beta);
        let e1 = (r.spectral_radius_gmpid / rho_pred - 1.0).abs();
        let e2 = (r.sagmpid_radius_exact / sa_pred - 1.0).abs();
        pass &= e1 <= C5_REL_TOL && e2 <= C5_REL_TOL;
        parts.push(format!(
            "beta={beta}: rho {:.4} vs {rho_pred:.4} ({:.1}%), SA rho {:.4} vs {sa_pred:.4} ({:.1}%)",
            r.spectral_radius_gmpid,
            100.0 * e1,
            r.sagmpid_radius_exact,
            100.0 * e2
        ));
    }
    outcome(pass, parts.join("; "))
}

fn regime_reproduction() -> Outcome {
    let started = Instant::now();
    let spec = RegimeSpec {
        trials: C6_TRIALS,
        ..RegimeSpec::default()
    };
    let rows = regime_table(&spec).unwrap();
    let elapsed = started.elapsed();
    use DetectorKind::*;
    use RegimeVerdict::*;
    let v = |row: usize, d| rows[row].verdict(d).unwrap();
    let expected_rows = [
        [Some(Converges), Some(Converges), Some(Converges)],
        [Some(Diverges), Some(Converges), Some(Converges)],
        [None, Some(Diverges), Some(Converges)],
    ];
    let mut pass = elapsed < C6_BUDGET;
    for (row, expected) in expected_rows.iter().enumerate() {
        for (d, want) in [Jacobi, Gmpid, Sagmpid].into_iter().zip(expected) {
            if let Some(want) = want {
                pass &= v(row, d) == *want;
            }
        }
    }
    pass &= v(1, Richardson) == Converges && v(2, Richardson) == Converges;
    let table = format_regime_table(&rows).trim_end().replace('\n', " | ");
    outcome(pass, format!("{table} ({:.0}s)", elapsed.as_secs_f64()))
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();

    for s in 0..C7_MONOTONE_SEEDS {
        let inst = uniform(20 + 5 * s as usize, 120, 7000 + s);
        let mut state = MessageState::init(&inst, InitMode::Prior);
        let rule = UpdateRule::gmpid(Default::default());
        let mut prev = state.var_v2s_all().to_vec();
        for t in 1..=50 {
            sum_update(&mut state, &inst, 1.0).unwrap();
            variable_update(&mut state, &inst, rule).unwrap();
            let cur = state.var_v2s_all();
            if cur
                .iter()
                .zip(&prev)
                .any(|(c, p)| !(*c > 0.0 && *c <= p * (1.0 + C7_MONOTONE_SLACK)))
            {
                failures.push(format!("variance increase at seed {s} iteration {t}"));
                break;
            }
            prev = cur.to_vec();
        }
    }

    let inst = uniform(30, 120, 7100);
    let cfg = DetectorConfig::default().with_max_iters(60);
    let g = gmpid_run(&inst, &cfg).unwrap();
    let sa = sagmpid_run(&inst, &cfg.clone().with_w(1.0)).unwrap();
    let trace_gap = g
        .trace
        .iter()
        .zip(&sa.trace)
        .map(|(a, b)| {
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
            rel(a.mse_vs_truth, b.mse_vs_truth).max(rel(a.mean_variance, b.mean_variance))
        })
        .fold(0.0f64, f64::max);
    if g.trace.len() != sa.trace.len() || trace_gap > C7_TRACE_TOL {
        failures.push(format!("w=1 trace gap {trace_gap:.2e}"));
    }

    let mut worst_residual: f64 = 0.0;
    for d in 0..C7_RESIDUAL_DRAWS {
        // Deterministic low-discrepancy draws over K, M, σx², σn².
        let u = |k: u64| ((d * k + 7) as f64 * 0.618_033_988_749_894_9).fract();
        let antennas = 2 + (u(3) * 4000.0) as usize;
        let users = 1 + (u(5) * (antennas - 1) as f64) as usize;
        let users = users.min(antennas - 1);
        let sx2 = 10f64.powf(-2.0 + 4.0 * u(11));
        let sn2 = 10f64.powf(-4.0 + 6.0 * u(13));
        let p = AsymptoticParams::new(users, antennas, sx2, sn2).unwrap();
        worst_residual = worst_residual.max(variance_quadratic_residual(&p, gmpid_variance_fixed_point(&p)));
    }
    if worst_residual > C7_RESIDUAL_TOL {
        failures.push(format!("fixed-point residual {worst_residual:.2e}"));
    }

    let mut spec = ExperimentSpec::new(
        Dimensions::new(16, 64).unwrap(),
        vec![1.0, SNR],
        vec![1, 10, 40],
        DetectorKind::ALL.to_vec(),
    );
    spec.trials = 12;
    spec.base_seed = RngSeed(7200);
    spec.workers = Some(1);
    let one = run_experiment(&spec).unwrap();
    spec.workers = Some(4);
    let four = run_experiment(&spec).unwrap();
    if !one.same_numerics(&four) {
        failures.push("sweep differs between 1 and 4 workers".into());
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "monotone over {C7_MONOTONE_SEEDS} seeds; w=1 trace gap {trace_gap:.1e}; worst residual \
                 {worst_residual:.1e} over {C7_RESIDUAL_DRAWS} draws; worker-count invariant"
            )
        } else {
            failures.join("; ")
        },
    )
}

fn performance() -> Outcome {
    let dims: Vec<_> = [256, 512, 1024]
        .iter()
        .map(|&m| Dimensions::new(64, m).unwrap())
        .collect();
    let rows = bench_iteration(&dims, C8_SWEEPS, false, RngSeed(8000)).unwrap();
    let per: Vec<f64> = rows.iter().map(|r| r.seconds_per_edge).collect();
    let drift = per.iter().cloned().fold(0.0, f64::max) / per.iter().cloned().fold(f64::INFINITY, f64::min);

    let started = Instant::now();
    for spec in sa_comparison_specs(C8_FIG5_TRIALS, RngSeed(8100)) {
        run_experiment(&spec).unwrap();
    }
    let fig5 = started.elapsed();
    outcome(
        drift < C8_MAX_DRIFT && fig5 < C8_BUDGET,
        format!(
            "time/(K*M) {} ns, drift {drift:.2}x (limit {C8_MAX_DRIFT}x); comparison sweep {:.1}s (limit {}s)",
            per.iter()
                .map(|p| format!("{:.3}", p * 1e9))
                .collect::<Vec<_>>()
                .join("/"),
            fig5.as_secs_f64(),
            C8_BUDGET.as_secs()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("GMPID matches MMSE at light load", mmse_agreement),
        ("GMPID variance fixed point", variance_fixed_point),
        ("GMPID diverges, SA-GMPID converges at beta=2/3", divergence_regime),
        ("SA-GMPID faster than GMPID at beta=1/3", speed_ordering),
        ("spectral-radius asymptotics", spectral_asymptotics),
        ("convergence-regime table", regime_reproduction),
        ("property suites", property_suites),
        ("per-iteration cost and sweep runtime", performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {verdict} — {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! The experiment scenarios behind each subcommand. Every function consumes
//! flat settings, runs the physics through dfl-core, checks the analytic
//! bound ordering on what it is about to emit, and returns tidy tables plus
//! a JSON summary; file writing is the caller's job.

use dfl_core::bounds::{
    a_star, b_star, delta_c_squared, dicke_bound, dicke_delta_e, dicke_inputs, ky_bound,
    markovian_qubit_infidelity_bound, qsl_bound, BoundInputs, BoundReport, LindbladModel,
};
use dfl_core::classical::{estimate_bds, ClassicalConfig, InitialPopulation};
use dfl_core::controllers::{FeedbackController, LocalCostController, MarkovianController, PhaseMode};
use dfl_core::linalg::{ComplexMatrix, DensityOperator, C64};
use dfl_core::rng::{stream_rng, PURPOSE_INITIAL_STATE};
use dfl_core::sme::{
    dicke_monitoring_model, run_ensemble, timestep_warning, MonitoringChannel, SmeConfig, SmeModel,
};
use dfl_core::spin::{coherent_spin_state, to_twice_half_integer, CollectiveSpinSystem};
use rand::Rng;
use serde_json::json;

use crate::config::Settings;
use crate::error::CliError;
use crate::output::{derive_seed, ScenarioOutput, Table};

/// Slack multiplier for Monte Carlo estimates checked against analytic bounds.
const MC_SIGMA: f64 = 3.0;

fn usage(e: dfl_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Validate that m_t is a level of the N-atom ladder (same parity, in range).
fn check_level(n_atoms: usize, m_t: f64) -> Result<(), CliError> {
    let twice_m = to_twice_half_integer(m_t, "m_t").map_err(usage)?;
    let twice_l = n_atoms as i64;
    if twice_m.abs() > twice_l || (twice_l - twice_m) % 2 != 0 {
        return Err(CliError::Usage(format!(
            "m_t = {m_t} is not a level of the N = {n_atoms} ladder"
        )));
    }
    Ok(())
}

fn check_rate(name: &str, value: f64) -> Result<(), CliError> {
    if value < 0.0 || !value.is_finite() {
        return Err(CliError::Usage(format!("{name} = {value} must be finite and >= 0")));
    }
    Ok(())
}

/// Tag a float for a file name: integers verbatim, otherwise `.` -> `p`.
fn fmt_tag(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}").replace('-', "m").replace('.', "p")
    }
}

/// Shared Monte Carlo knobs for the steady-state sweeps.
struct SweepNumerics {
    trajectories: usize,
    dt: f64,
    t_final: f64,
    burn_in: f64,
    record_stride: usize,
    classical_realizations: usize,
    classical_dt: f64,
    classical_t_final: f64,
    classical_burn_in: f64,
    seed: u64,
}

impl SweepNumerics {
    fn read(settings: &mut Settings, default_trajectories: usize) -> Result<Self, CliError> {
        let trajectories = settings.usize("trajectories", default_trajectories)?;
        let dt = settings.f64("dt", 1e-3)?;
        let t_final = settings.f64("t_final", 30.0)?;
        let burn_in = settings.f64("burn_in", 0.5 * t_final)?;
        let record_stride = settings.usize("record_stride", 100)?;
        let classical_realizations =
            settings.usize("classical_realizations", (2 * trajectories).max(1000))?;
        let classical_dt = settings.f64("classical_dt", dt)?;
        let classical_t_final = settings.f64("classical_t_final", 2.0 * t_final)?;
        let classical_burn_in =
            settings.f64("classical_burn_in", 0.5 * classical_t_final)?;
        let seed = settings.u64("seed", 7)?;
        Ok(Self {
            trajectories,
            dt,
            t_final,
            burn_in,
            record_stride,
            classical_realizations,
            classical_dt,
            classical_t_final,
            classical_burn_in,
            seed,
        })
    }

    fn sme_config(&self, seed: u64) -> SmeConfig {
        let mut config = SmeConfig::new(self.dt, self.t_final, self.trajectories, seed);
        config.burn_in = self.burn_in;
        config.record_stride = self.record_stride;
        config
    }

    fn classical_config(&self, gamma: f64, kappa: f64, u_max: f64, seed: u64) -> ClassicalConfig {
        let mut config = ClassicalConfig::new(
            gamma,
            kappa,
            u_max,
            self.classical_dt,
            self.classical_t_final,
            self.classical_realizations,
            seed,
        );
        config.burn_in = self.classical_burn_in;
        // Sweeps only need the scalar estimate; keep the curve tiny.
        config.record_stride = ((self.classical_t_final / self.classical_dt).round() as usize).max(1);
        config
    }
}

/// Analytic bounds for one (N, m_t, gamma) point, hierarchy enforced.
/// Returns (b_d, b_qsl, b_ky).
fn point_bounds(
    n_atoms: usize,
    m_t: f64,
    gamma: f64,
    kappa: f64,
    u_max: f64,
) -> Result<(f64, f64, f64), CliError> {
    let l = n_atoms as f64 / 2.0;
    let sys = CollectiveSpinSystem::new(n_atoms).map_err(usage)?;
    let target = sys.dicke_state(m_t).map_err(usage)?;
    let mut ops = Vec::new();
    if kappa > 0.0 {
        ops.push(sys.jz().scaled(C64::new(kappa.sqrt(), 0.0)));
    }
    if gamma > 0.0 {
        ops.push(sys.jminus().scaled(C64::new(gamma.sqrt(), 0.0)));
    }
    let model = LindbladModel::new(ops, target)?;
    let delta_e = dicke_delta_e(u_max, l, m_t)?;
    let inputs = dicke_inputs(l, m_t, gamma, u_max)?;
    let b_qsl = qsl_bound(&inputs);
    let b_ky = ky_bound(&model, delta_e)?;
    let b_d = dicke_bound(l, m_t, gamma, u_max)?;
    BoundReport::new(inputs, b_qsl, b_ky, Some(b_d))
        .map_err(|e| CliError::Invariant(e.to_string()))?;
    Ok((b_d, b_qsl, b_ky))
}

/// Steady-state fidelity of a local-cost controller, starting at the target.
fn steady_fidelity(
    n_atoms: usize,
    m_t: f64,
    gamma: f64,
    kappa: f64,
    u_max: f64,
    mode: PhaseMode,
    num: &SweepNumerics,
    seed: u64,
) -> Result<(f64, f64), CliError> {
    let model = dicke_monitoring_model(n_atoms, kappa, gamma, m_t)?;
    let initial = DensityOperator::pure(model.target());
    let config = num.sme_config(seed);
    let stats = run_ensemble(
        &model,
        &config,
        |_| Ok(initial.clone()),
        |_| {
            let ctrl = match mode {
                PhaseMode::Optimized => LocalCostController::optimized_phase(n_atoms, m_t, u_max)?,
                PhaseMode::Fixed => LocalCostController::fixed_phase(n_atoms, m_t, u_max)?,
            };
            Ok(Box::new(ctrl) as Box<dyn FeedbackController>)
        },
    )?;
    Ok((stats.steady_state_mean, stats.steady_state_stderr))
}

/// Ergodic stochastic-preparation limit for one point: (estimate, stderr).
fn classical_point(
    l_t: f64,
    m_t: f64,
    gamma: f64,
    kappa: f64,
    u_max: f64,
    num: &SweepNumerics,
    seed: u64,
) -> Result<(f64, f64), CliError> {
    let config = num.classical_config(gamma, kappa, u_max, seed);
    let est = estimate_bds(&config, l_t, m_t)?;
    Ok((est.bds, est.stderr))
}

fn check_stochastic_under_level_bound(
    b_ds: f64,
    b_ds_err: f64,
    b_d: f64,
    context: &str,
) -> Result<(), CliError> {
    if b_ds > b_d + MC_SIGMA * b_ds_err + 1e-9 {
        return Err(CliError::Invariant(format!(
            "{context}: stochastic estimate {b_ds:.6} exceeds the level bound {b_d:.6} \
             beyond {MC_SIGMA} sigma ({b_ds_err:.2e})"
        )));
    }
    Ok(())
}

const SWEEP_COLUMNS: [&str; 9] =
    ["gamma_over_u", "f_op", "f_op_err", "f_fp", "f_fp_err", "b_ds", "b_d", "b_qsl", "b_ky"];

/// One steady-state sweep row shared by the qubit and N=4 scenarios.
#[allow(clippy::too_many_arguments)]
fn sweep_row(
    n_atoms: usize,
    m_t: f64,
    gamma: f64,
    kappa: f64,
    u_max: f64,
    num: &SweepNumerics,
    tag: &str,
) -> Result<(Vec<f64>, f64), CliError> {
    let l = n_atoms as f64 / 2.0;
    let (b_d, b_qsl, b_ky) = point_bounds(n_atoms, m_t, gamma, kappa, u_max)?;
    let (f_op, f_op_err) = steady_fidelity(
        n_atoms,
        m_t,
        gamma,
        kappa,
        u_max,
        PhaseMode::Optimized,
        num,
        derive_seed(num.seed, &format!("{tag}:op")),
    )?;
    let (f_fp, f_fp_err) = steady_fidelity(
        n_atoms,
        m_t,
        gamma,
        kappa,
        u_max,
        PhaseMode::Fixed,
        num,
        derive_seed(num.seed, &format!("{tag}:fp")),
    )?;
    let (b_ds, b_ds_err) =
        classical_point(l, m_t, gamma, kappa, u_max, num, derive_seed(num.seed, &format!("{tag}:bds")))?;
    check_stochastic_under_level_bound(b_ds, b_ds_err, b_d, tag)?;
    Ok((vec![gamma / u_max, f_op, f_op_err, f_fp, f_fp_err, b_ds, b_d, b_qsl, b_ky], b_ds_err))
}

fn push_warning(warnings: &mut Vec<String>, w: Option<String>) {
    if let Some(w) = w {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
}

/// Analytic bound table over an (N, m_t, gamma) grid; no simulation.
pub fn bounds(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let n_list = settings.f64_list("n_list", &[1.0, 2.0, 4.0, 6.0])?;
    let m_t_spec = settings.string("m_t_list", "all");
    let gammas = settings.f64_list("gamma_list", &[0.1, 0.5, 1.0, 2.0])?;
    let kappa = settings.f64("kappa", 0.4)?;
    let u_max = settings.f64("u_max", 1.0)?;
    let _seed = settings.u64("seed", 7)?;
    for key in ["trajectories", "dt", "t_final"] {
        settings.ignore(key);
    }
    check_rate("kappa", kappa)?;
    if !(u_max > 0.0) {
        return Err(CliError::Usage(format!("u_max = {u_max} must be > 0")));
    }

    let mut table = Table::new(
        "bounds",
        &["n", "m_t", "gamma_over_u", "delta_c_sq", "a_star", "b_star", "delta_e", "b_qsl", "b_ky", "b_d"],
    );
    for &n_f in &n_list {
        if n_f < 1.0 || n_f != n_f.trunc() {
            return Err(CliError::Usage(format!("n_list entry {n_f} is not a positive integer")));
        }
        let n = n_f as usize;
        let l = n as f64 / 2.0;
        let m_targets: Vec<f64> = if m_t_spec == "all" {
            // Every level of the ladder, top down.
            (0..=n).map(|i| l - i as f64).collect()
        } else {
            m_t_spec
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("m_t_list: {s:?} is not a number")))
                })
                .collect::<Result<Vec<f64>, CliError>>()?
        };
        let sys = CollectiveSpinSystem::new(n).map_err(usage)?;
        for &m_t in &m_targets {
            check_level(n, m_t)?;
            for &gamma in &gammas {
                check_rate("gamma", gamma)?;
                let target = sys.dicke_state(m_t).map_err(usage)?;
                let mut ops = Vec::new();
                if kappa > 0.0 {
                    ops.push(sys.jz().scaled(C64::new(kappa.sqrt(), 0.0)));
                }
                if gamma > 0.0 {
                    ops.push(sys.jminus().scaled(C64::new(gamma.sqrt(), 0.0)));
                }
                let model = LindbladModel::new(ops, target)?;
                let delta_c_sq = delta_c_squared(&model)?;
                let reentry = a_star(&model)?;
                let spread = b_star(&model)?;
                let delta_e = dicke_delta_e(u_max, l, m_t)?;
                let inputs = BoundInputs::new(delta_c_sq, reentry, spread, delta_e)?;
                let b_qsl = qsl_bound(&inputs);
                let b_ky = ky_bound(&model, delta_e)?;
                let b_d = dicke_bound(l, m_t, gamma, u_max)?;
                BoundReport::new(inputs, b_qsl, b_ky, Some(b_d))
                    .map_err(|e| CliError::Invariant(e.to_string()))?;
                table.push(vec![
                    n as f64,
                    m_t,
                    gamma / u_max,
                    delta_c_sq,
                    reentry,
                    spread,
                    delta_e,
                    b_qsl,
                    b_ky,
                    b_d,
                ]);
            }
        }
    }
    let rows = table.rows.len();
    Ok(ScenarioOutput {
        scenario: "bounds",
        tables: vec![table],
        summary: json!({ "rows": rows, "kappa": kappa, "u_max": u_max }),
        warnings: Vec::new(),
    })
}

/// Steady-state fidelity sweep for one atom: both controllers against every
/// analytic and stochastic bound.
pub fn qubit_sweep(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let kappa = settings.f64("kappa", 0.4)?;
    let u_max = settings.f64("u_max", 1.0)?;
    let gammas =
        settings.f64_list("gamma_list", &[0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5])?;
    let num = SweepNumerics::read(settings, 2000)?;
    check_rate("kappa", kappa)?;
    if !(u_max > 0.0) {
        return Err(CliError::Usage(format!("u_max = {u_max} must be > 0")));
    }

    let mut warnings = Vec::new();
    let mut table = Table::new("qubit_sweep", &SWEEP_COLUMNS);
    let mut b_ds_errs = Vec::new();
    for (i, &gamma) in gammas.iter().enumerate() {
        check_rate("gamma", gamma)?;
        push_warning(&mut warnings, timestep_warning(num.dt, gamma, kappa, u_max, 1));
        let (row, b_ds_err) =
            sweep_row(1, 0.5, gamma, kappa, u_max, &num, &format!("qubit:{i}"))?;
        table.push(row);
        b_ds_errs.push(b_ds_err);
    }
    Ok(ScenarioOutput {
        scenario: "qubit_sweep",
        tables: vec![table],
        summary: json!({
            "kappa": kappa,
            "u_max": u_max,
            "trajectories": num.trajectories,
            "classical_realizations": num.classical_realizations,
            "b_ds_err": b_ds_errs,
        }),
        warnings,
    })
}

/// Four-atom steady-state sweeps, one table per (m_t, kappa) cell.
pub fn n4_sweep(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let u_max = settings.f64("u_max", 1.0)?;
    let m_t_list = settings.f64_list("m_t_list", &[2.0])?;
    let kappa_list = settings.f64_list("kappa_list", &[0.4, 2.0])?;
    let gammas = settings.f64_list("gamma_list", &[0.25, 0.5, 1.0])?;
    let num = SweepNumerics::read(settings, 500)?;
    if !(u_max > 0.0) {
        return Err(CliError::Usage(format!("u_max = {u_max} must be > 0")));
    }

    let mut warnings = Vec::new();
    let mut tables = Vec::new();
    let mut cells = Vec::new();
    for &m_t in &m_t_list {
        check_level(4, m_t)?;
        for &kappa in &kappa_list {
            check_rate("kappa", kappa)?;
            let name = format!("n4_sweep_mt{}_kappa{}", fmt_tag(m_t), fmt_tag(kappa));
            let mut table = Table::new(&name, &SWEEP_COLUMNS);
            let mut b_ds_errs = Vec::new();
            for (i, &gamma) in gammas.iter().enumerate() {
                check_rate("gamma", gamma)?;
                push_warning(&mut warnings, timestep_warning(num.dt, gamma, kappa, u_max, 4));
                let tag = format!("n4:mt{}:k{}:{}", fmt_tag(m_t), fmt_tag(kappa), i);
                let (row, b_ds_err) = sweep_row(4, m_t, gamma, kappa, u_max, &num, &tag)?;
                table.push(row);
                b_ds_errs.push(b_ds_err);
            }
            cells.push(json!({ "table": name, "m_t": m_t, "kappa": kappa, "b_ds_err": b_ds_errs }));
            tables.push(table);
        }
    }
    Ok(ScenarioOutput {
        scenario: "n4_sweep",
        tables,
        summary: json!({
            "u_max": u_max,
            "trajectories": num.trajectories,
            "classical_realizations": num.classical_realizations,
            "cells": cells,
        }),
        warnings,
    })
}

/// Steady-state fidelity against atom number, with per-atom rate scaling.
pub fn n_scaling(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let n_list = settings.f64_list("n_list", &[1.0, 2.0, 4.0, 6.0])?;
    let u_max = settings.f64("u_max", 1.0)?;
    let gamma_over_n = settings.bool("gamma_over_n", true)?;
    let gamma_tilde = settings.f64("gamma_tilde", 0.8)?;
    let gamma_fixed = settings.f64("gamma", 0.8)?;
    let kappa_over_n = settings.bool("kappa_over_n", true)?;
    let kappa_tilde = settings.f64("kappa_tilde", 0.4)?;
    let kappa_fixed = settings.f64("kappa", 2.0)?;
    let m_t_zero = settings.bool("m_t_zero", false)?;
    let num = SweepNumerics::read(settings, 200)?;
    if !(u_max > 0.0) {
        return Err(CliError::Usage(format!("u_max = {u_max} must be > 0")));
    }
    for (name, v) in [
        ("gamma_tilde", gamma_tilde),
        ("gamma", gamma_fixed),
        ("kappa_tilde", kappa_tilde),
        ("kappa", kappa_fixed),
    ] {
        check_rate(name, v)?;
    }

    let mut warnings = Vec::new();
    let mut table = Table::new(
        "n_scaling",
        &["n", "f_op", "f_op_err", "f_fp", "f_fp_err", "b_ds", "b_d", "b_qsl"],
    );
    let mut b_ds_errs = Vec::new();
    for &n_f in &n_list {
        if n_f < 1.0 || n_f != n_f.trunc() {
            return Err(CliError::Usage(format!("n_list entry {n_f} is not a positive integer")));
        }
        let n = n_f as usize;
        let m_t = if m_t_zero {
            if n % 2 != 0 {
                return Err(CliError::Usage(format!(
                    "m_t = 0 needs an even atom number, got N = {n}"
                )));
            }
            0.0
        } else {
            n as f64 / 2.0
        };
        let gamma = if gamma_over_n { gamma_tilde / n as f64 } else { gamma_fixed };
        let kappa = if kappa_over_n { kappa_tilde / n as f64 } else { kappa_fixed };
        push_warning(&mut warnings, timestep_warning(num.dt, gamma, kappa, u_max, n));
        let (row, b_ds_err) =
            sweep_row(n, m_t, gamma, kappa, u_max, &num, &format!("scaling:{n}"))?;
        // Same measurements, scaling-specific column layout.
        table.push(vec![n as f64, row[1], row[2], row[3], row[4], row[5], row[6], row[7]]);
        b_ds_errs.push(b_ds_err);
    }
    Ok(ScenarioOutput {
        scenario: "n_scaling",
        tables: vec![table],
        summary: json!({
            "u_max": u_max,
            "gamma_over_n": gamma_over_n,
            "kappa_over_n": kappa_over_n,
            "trajectories": num.trajectories,
            "b_ds_err": b_ds_errs,
        }),
        warnings,
    })
}

/// Window-averaged photocurrent feedback on a damped qubit, swept over the
/// damping-per-window product, against the closed-form infidelity floor.
pub fn markovian_qubit(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let gamma = settings.f64("gamma", 1.0)?;
    let gamma_dt_list =
        settings.f64_list("gamma_dt_list", &[0.01, 0.0316, 0.1, 0.316, 1.0])?;
    let substeps = settings.usize("window_substeps", 50)?;
    let dt_max = settings.f64("dt_max", 2e-3)?;
    let dt_explicit = settings.f64_opt("dt")?;
    let trajectories = settings.usize("trajectories", 1000)?;
    let t_final = settings.f64("t_final", 20.0)?;
    let burn_in = settings.f64("burn_in", 0.5 * t_final)?;
    let record_stride = settings.usize("record_stride", 200)?;
    let seed = settings.u64("seed", 7)?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(CliError::Usage(format!("gamma = {gamma} must be > 0")));
    }
    if substeps == 0 {
        return Err(CliError::Usage("window_substeps must be positive".into()));
    }
    if !(dt_max > 0.0) {
        return Err(CliError::Usage(format!("dt_max = {dt_max} must be > 0")));
    }

    let sys = CollectiveSpinSystem::new(1).map_err(usage)?;
    let target = sys.dicke_state(0.5).map_err(usage)?;
    let initial = DensityOperator::pure(&target);
    // Homodyne monitoring of the damping channel; feed the current back
    // through the spin-flip quadrature.
    let channel =
        MonitoringChannel::homodyne(sys.jminus().scaled(C64::new(gamma.sqrt(), 0.0)), 1.0)?;
    let model = SmeModel::new(vec![channel], target)?;
    let f_op = sys.jy().scaled(C64::new(-2.0 * gamma.sqrt(), 0.0));
    let bare = ComplexMatrix::zeros(2);

    let mut warnings = Vec::new();
    let mut table =
        Table::new("markovian_qubit", &["gamma_dt", "infidelity_sim", "stderr", "infidelity_bound"]);
    let mut dts = Vec::new();
    for (i, &g) in gamma_dt_list.iter().enumerate() {
        if !(g > 0.0) || !g.is_finite() {
            return Err(CliError::Usage(format!("gamma_dt value {g} must be > 0")));
        }
        let window = g / gamma;
        let dt = match dt_explicit {
            Some(dt) => {
                if window < dt {
                    return Err(CliError::Usage(format!(
                        "window {window:.3e} is smaller than the step dt = {dt:.3e}"
                    )));
                }
                dt
            }
            None => {
                // Resolve the window with `substeps` steps, capped for accuracy,
                // and land on an exact integer number of steps per window.
                let dt = (window / substeps as f64).min(dt_max);
                let per_window = (window / dt).round().max(1.0);
                window / per_window
            }
        };
        push_warning(&mut warnings, timestep_warning(dt, gamma, 0.0, 0.0, 1));
        let mut config = SmeConfig::new(dt, t_final, trajectories, derive_seed(seed, &format!("mk:{i}")));
        config.burn_in = burn_in;
        config.record_stride = record_stride;
        let stats = run_ensemble(
            &model,
            &config,
            |_| Ok(initial.clone()),
            |_| {
                Ok(Box::new(MarkovianController::new(f_op.clone(), window, bare.clone(), 0)?)
                    as Box<dyn FeedbackController>)
            },
        )?;
        let infidelity = 1.0 - stats.steady_state_mean;
        let bound = markovian_qubit_infidelity_bound(gamma, window);
        table.push(vec![g, infidelity, stats.steady_state_stderr, bound]);
        dts.push(dt);
    }
    Ok(ScenarioOutput {
        scenario: "markovian_qubit",
        tables: vec![table],
        summary: json!({
            "gamma": gamma,
            "trajectories": trajectories,
            "dt_per_point": dts,
        }),
        warnings,
    })
}

/// Undamped four-atom transient: both greedy controllers from random
/// coherent states against the stochastic limit curve.
pub fn gamma_zero(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let n_atoms = settings.usize("n_atoms", 4)?;
    let kappa = settings.f64("kappa", 0.4)?;
    let u_max = settings.f64("u_max", 1.0)?;
    let m_t = settings.f64("m_t", n_atoms as f64 / 2.0)?;
    let trajectories = settings.usize("trajectories", 2000)?;
    let dt = settings.f64("dt", 1e-3)?;
    let t_final = settings.f64("t_final", 30.0)?;
    let plateau_start = settings.f64("plateau_start", 0.75 * t_final)?;
    let record_stride = settings.usize("record_stride", 100)?;
    let seed = settings.u64("seed", 7)?;
    check_rate("kappa", kappa)?;
    check_level(n_atoms, m_t)?;
    if !(u_max > 0.0) {
        return Err(CliError::Usage(format!("u_max = {u_max} must be > 0")));
    }
    if !(plateau_start >= 0.0 && plateau_start < t_final) {
        return Err(CliError::Usage(format!(
            "plateau_start = {plateau_start} must lie in [0, t_final = {t_final})"
        )));
    }

    let model = dicke_monitoring_model(n_atoms, kappa, 0.0, m_t)?;
    let mut warnings = Vec::new();
    push_warning(&mut warnings, timestep_warning(dt, 0.0, kappa, u_max, n_atoms));

    let random_coherent = |master: u64| {
        move |stream_id: u64| {
            let mut rng = stream_rng(master, stream_id, PURPOSE_INITIAL_STATE);
            let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let psi = coherent_spin_state(n_atoms, cos_theta.acos(), phi)?;
            Ok(DensityOperator::pure(&psi))
        }
    };
    let run_quantum = |tag: &str, local_weights: bool| {
        let master = derive_seed(seed, tag);
        let mut config = SmeConfig::new(dt, t_final, trajectories, master);
        config.burn_in = plateau_start;
        config.record_stride = record_stride;
        run_ensemble(&model, &config, random_coherent(master), |_| {
            let ctrl = if local_weights {
                LocalCostController::optimized_phase_local(n_atoms, m_t, u_max)?
            } else {
                LocalCostController::optimized_phase(n_atoms, m_t, u_max)?
            };
            Ok(Box::new(ctrl) as Box<dyn FeedbackController>)
        })
        .map_err(CliError::from)
    };
    let euclid = run_quantum("gz:op-euclid", false)?;
    let local = run_quantum("gz:op-local", true)?;

    let mut classical_config = ClassicalConfig::new(
        0.0,
        kappa,
        u_max,
        dt,
        t_final,
        trajectories,
        derive_seed(seed, "gz:bds"),
    );
    classical_config.burn_in = plateau_start;
    classical_config.record_stride = record_stride;
    classical_config.initial = InitialPopulation::RandomCoherent;
    let stochastic = estimate_bds(&classical_config, n_atoms as f64 / 2.0, m_t)?;

    if euclid.times.len() != stochastic.times.len() {
        return Err(CliError::Numeric(format!(
            "curve grids disagree: {} quantum points vs {} classical points",
            euclid.times.len(),
            stochastic.times.len()
        )));
    }
    let mut table = Table::new(
        "gamma_zero",
        &["t", "f_op_euclidean", "f_op_euclidean_err", "f_op_local", "f_op_local_err", "b_ds", "b_ds_err"],
    );
    for i in 0..euclid.times.len() {
        table.push(vec![
            euclid.times[i],
            euclid.mean_fidelity[i],
            euclid.stderr_fidelity[i],
            local.mean_fidelity[i],
            local.stderr_fidelity[i],
            stochastic.curve[i],
            stochastic.curve_stderr[i],
        ]);
    }
    Ok(ScenarioOutput {
        scenario: "gamma_zero",
        tables: vec![table],
        summary: json!({
            "n_atoms": n_atoms,
            "kappa": kappa,
            "trajectories": trajectories,
            "plateau_start": plateau_start,
            "plateau": {
                "op_euclidean": { "mean": euclid.steady_state_mean, "stderr": euclid.steady_state_stderr },
                "op_local": { "mean": local.steady_state_mean, "stderr": local.steady_state_stderr },
                "b_ds": { "mean": stochastic.bds, "stderr": stochastic.stderr },
            },
        }),
        warnings,
    })
}

/// Direct run of the classical population SDE for one parameter point.
pub fn classical_bds(settings: &mut Settings) -> Result<ScenarioOutput, CliError> {
    let n_atoms = settings.usize("n_atoms", 4)?;
    let l_t = n_atoms as f64 / 2.0;
    let m_t = settings.f64("m_t", l_t)?;
    let gamma = settings.f64("gamma", 0.5)?;
    let kappa = settings.f64("kappa", 0.4)?;
    let u_max = settings.f64("u_max", 1.0)?;
    let dt = settings.f64("dt", 1e-3)?;
    let t_final = settings.f64("t_final", 60.0)?;
    let burn_in = settings.f64("burn_in", 0.5 * t_final)?;
    let default_realizations = settings.usize("trajectories", 2000)?;
    let realizations = settings.usize("realizations", default_realizations)?;
    let record_stride = settings.usize("record_stride", 100)?;
    let initial_name = settings.string("initial", "truncated_coherent");
    let seed = settings.u64("seed", 7)?;
    check_rate("gamma", gamma)?;
    check_rate("kappa", kappa)?;
    check_rate("u_max", u_max)?;
    check_level(n_atoms, m_t)?;
    let initial = match initial_name.as_str() {
        "truncated_coherent" => InitialPopulation::TruncatedCoherent,
        "uniform" => InitialPopulation::Uniform,
        "random_coherent" => InitialPopulation::RandomCoherent,
        other => {
            return Err(CliError::Usage(format!(
                "initial = {other:?} (expected truncated_coherent, uniform, or random_coherent)"
            )))
        }
    };

    let mut config = ClassicalConfig::new(gamma, kappa, u_max, dt, t_final, realizations, seed);
    config.burn_in = burn_in;
    config.record_stride = record_stride;
    config.initial = initial;
    let est = estimate_bds(&config, l_t, m_t)?;
    let b_d = dicke_bound(l_t, m_t, gamma, u_max)?;
    check_stochastic_under_level_bound(est.bds, est.stderr, b_d, "classical_bds")?;

    let mut table =
        Table::new("classical_bds", &["t", "target_population_mean", "target_population_stderr"]);
    for i in 0..est.times.len() {
        table.push(vec![est.times[i], est.curve[i], est.curve_stderr[i]]);
    }
    Ok(ScenarioOutput {
        scenario: "classical_bds",
        tables: vec![table],
        summary: json!({
            "bds": est.bds,
            "stderr": est.stderr,
            "b_d": b_d,
            "max_clamp": est.max_clamp,
            "n_realizations": est.n_realizations,
        }),
        warnings: Vec::new(),
    })
}

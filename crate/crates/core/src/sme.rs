//! Diffusive stochastic master equation engine.
//!
//! Conditional states evolve under
//!
//!   d rho = -i[H, rho] dt + sum_j D[c_j] rho dt + sum_j sqrt(eta_j) Hcal[c_j] rho dw_j,
//!
//! with D[c] rho = c rho c^† - {c^† c, rho}/2 the dissipator and
//! Hcal[c] rho = c rho + rho c^† - tr[rho (c + c^†)] rho the innovation
//! superoperator, driven by independent Wiener increments dw_j ~ Normal(0, dt).
//! The associated photocurrent increments are
//! dy_j = sqrt(eta_j) tr[rho (c_j + c_j^†)] dt + dw_j.
//!
//! Integration is first-order Euler-Maruyama in Ito form; every step ends
//! with Hermitization and exact trace renormalization. Heterodyne detection
//! of an operator c is expanded into the homodyne pair (c/sqrt(2),
//! i c/sqrt(2)) with independent noises, which leaves the dissipator
//! unchanged and splits the measurement between both quadratures.

use crate::controllers::FeedbackController;
use crate::error::{Error, Result};
use crate::linalg::{fidelity, hermitian_eigensystem, ComplexMatrix, DensityOperator, StateVector, C64};
use crate::rng::NoiseStreams;
use crate::spin::{to_twice_half_integer, CollectiveSpinSystem};
use rayon::prelude::*;

/// Conditional states are flagged when an eigenvalue dips below this floor;
/// first-order integration can transiently produce small negative values.
pub const POSITIVITY_FLOOR: f64 = -1e-6;

/// Measurement scheme attached to a jump operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    /// Single-quadrature detection; `phase` rotates the measured quadrature
    /// (the monitored operator is c e^{-i phase}).
    Homodyne { phase: f64 },
    /// Dual-quadrature detection, expanded internally into two homodyne
    /// channels (c/sqrt(2), i c/sqrt(2)) with independent noises.
    Heterodyne,
}

/// A monitored decoherence channel with rate absorbed into the operator.
#[derive(Debug, Clone)]
pub struct MonitoringChannel {
    jump_op: ComplexMatrix,
    efficiency: f64,
    kind: Detection,
}

/// One scalar noise/photocurrent slot after heterodyne expansion.
#[derive(Debug, Clone)]
pub struct ExpandedChannel {
    pub op: ComplexMatrix,
    pub sqrt_efficiency: f64,
}

impl MonitoringChannel {
    pub fn new(jump_op: ComplexMatrix, efficiency: f64, kind: Detection) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
            return Err(Error::Domain(format!(
                "detection efficiency {efficiency} outside [0, 1]"
            )));
        }
        if let Detection::Homodyne { phase } = kind {
            if !phase.is_finite() {
                return Err(Error::Domain(format!("homodyne phase {phase} must be finite")));
            }
        }
        if jump_op.has_non_finite() {
            return Err(Error::Domain("jump operator has non-finite entries".into()));
        }
        Ok(Self { jump_op, efficiency, kind })
    }

    /// Homodyne detection of the standard quadrature (phase 0).
    pub fn homodyne(jump_op: ComplexMatrix, efficiency: f64) -> Result<Self> {
        Self::new(jump_op, efficiency, Detection::Homodyne { phase: 0.0 })
    }

    pub fn homodyne_with_phase(jump_op: ComplexMatrix, efficiency: f64, phase: f64) -> Result<Self> {
        Self::new(jump_op, efficiency, Detection::Homodyne { phase })
    }

    pub fn heterodyne(jump_op: ComplexMatrix, efficiency: f64) -> Result<Self> {
        Self::new(jump_op, efficiency, Detection::Heterodyne)
    }

    pub fn jump_op(&self) -> &ComplexMatrix {
        &self.jump_op
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn kind(&self) -> &Detection {
        &self.kind
    }

    /// Scalar channels actually integrated: one for homodyne, two for
    /// heterodyne. The expansion preserves the total dissipator.
    pub fn expand(&self) -> Vec<ExpandedChannel> {
        let sqrt_eta = self.efficiency.sqrt();
        match self.kind {
            Detection::Homodyne { phase } => {
                let op = self.jump_op.scaled(C64::from_polar(1.0, -phase));
                vec![ExpandedChannel { op, sqrt_efficiency: sqrt_eta }]
            }
            Detection::Heterodyne => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                vec![
                    ExpandedChannel {
                        op: self.jump_op.scaled(C64::new(r, 0.0)),
                        sqrt_efficiency: sqrt_eta,
                    },
                    ExpandedChannel {
                        op: self.jump_op.scaled(C64::new(0.0, r)),
                        sqrt_efficiency: sqrt_eta,
                    },
                ]
            }
        }
    }
}

/// Monitored system: the channels being integrated plus the pure state that
/// fidelities are reported against.
#[derive(Debug, Clone)]
pub struct SmeModel {
    channels: Vec<MonitoringChannel>,
    expanded: Vec<ExpandedChannel>,
    target: StateVector,
}

impl SmeModel {
    pub fn new(channels: Vec<MonitoringChannel>, target: StateVector) -> Result<Self> {
        for (i, ch) in channels.iter().enumerate() {
            if ch.jump_op().dim() != target.dim() {
                return Err(Error::Dimension(format!(
                    "channel {i} has dim {} but the target has dim {}",
                    ch.jump_op().dim(),
                    target.dim()
                )));
            }
        }
        let expanded = channels.iter().flat_map(|c| c.expand()).collect();
        Ok(Self { channels, expanded, target })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn channels(&self) -> &[MonitoringChannel] {
        &self.channels
    }

    pub fn expanded(&self) -> &[ExpandedChannel] {
        &self.expanded
    }

    /// Number of scalar noise/photocurrent slots per step.
    pub fn expanded_count(&self) -> usize {
        self.expanded.len()
    }

    pub fn target(&self) -> &StateVector {
        &self.target
    }
}

/// Collective-spin monitoring: homodyne detection of sqrt(kappa) Jz plus
/// heterodyne detection of sqrt(gamma) J-, both at unit efficiency, with the
/// target Dicke level |l, m_target>. Channels with zero rate are omitted.
pub fn dicke_monitoring_model(
    n_atoms: usize,
    kappa: f64,
    gamma: f64,
    m_target: f64,
) -> Result<SmeModel> {
    for (name, rate) in [("kappa", kappa), ("gamma", gamma)] {
        if rate < 0.0 || !rate.is_finite() {
            return Err(Error::Domain(format!("{name} = {rate} must be finite and >= 0")));
        }
    }
    let sys = CollectiveSpinSystem::new(n_atoms)?;
    to_twice_half_integer(m_target, "m_target")?;
    let target = sys.dicke_state(m_target)?;
    let mut channels = Vec::new();
    if kappa > 0.0 {
        channels.push(MonitoringChannel::homodyne(
            sys.jz().scaled(C64::new(kappa.sqrt(), 0.0)),
            1.0,
        )?);
    }
    if gamma > 0.0 {
        channels.push(MonitoringChannel::heterodyne(
            sys.jminus().scaled(C64::new(gamma.sqrt(), 0.0)),
            1.0,
        )?);
    }
    SmeModel::new(channels, target)
}

/// Integration and ensemble parameters. Times are in control-rate units.
#[derive(Debug, Clone)]
pub struct SmeConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Time discarded before steady-state averaging.
    pub burn_in: f64,
    pub n_trajectories: usize,
    pub master_seed: u64,
    /// Curve recording cadence used by ensemble runs (single-trajectory runs
    /// record every step).
    pub record_stride: usize,
    /// State snapshot cadence for single-trajectory runs; 0 disables.
    pub snapshot_stride: usize,
    /// Track the minimum conditional eigenvalue each step (costly; tests).
    pub check_positivity: bool,
}

impl SmeConfig {
    pub fn new(dt: f64, t_final: f64, n_trajectories: usize, master_seed: u64) -> Self {
        Self {
            dt,
            t_final,
            burn_in: 0.5 * t_final,
            n_trajectories,
            master_seed,
            record_stride: 1,
            snapshot_stride: 0,
            check_positivity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Domain(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Domain(format!("t_final = {} must be positive", self.t_final)));
        }
        if self.burn_in < 0.0 || self.burn_in > self.t_final || !self.burn_in.is_finite() {
            return Err(Error::Domain(format!(
                "burn_in = {} must lie in [0, t_final = {}]",
                self.burn_in, self.t_final
            )));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Domain("n_trajectories must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Domain("record_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }
}

/// Warn when the step is too coarse for the fastest rate in the problem:
/// collective decay and dephasing stiffen as N^2, control as sqrt(N).
pub fn timestep_warning(
    dt: f64,
    gamma: f64,
    kappa: f64,
    u_max: f64,
    n_atoms: usize,
) -> Option<String> {
    let n = n_atoms as f64;
    let fastest = (gamma * n * n).max(kappa * n * n).max(u_max * n.sqrt());
    let product = dt * fastest;
    if product > 0.05 {
        Some(format!(
            "dt = {dt} is coarse for the fastest rate scale {fastest:.3e} \
             (dt * rate = {product:.3e} > 0.05); expect discretization bias"
        ))
    } else {
        None
    }
}

/// Record of a single conditional trajectory on the time grid t_k = k dt.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub stream_id: u64,
    pub times: Vec<f64>,
    pub fidelities: Vec<f64>,
    /// Photocurrent increments, one inner list per expanded channel; entry k
    /// is the increment of the step ending at t_{k+1}. Empty in summary runs.
    pub photocurrents: Vec<Vec<f64>>,
    pub final_state: DensityOperator,
    /// Optional (time, state) snapshots on the snapshot stride.
    pub snapshots: Vec<(f64, DensityOperator)>,
    /// Time average of the fidelity over t >= burn_in.
    pub steady_state_mean: f64,
    /// Smallest conditional eigenvalue seen (positivity checking only).
    pub min_eigenvalue: Option<f64>,
    /// Steps whose minimum eigenvalue fell below the positivity floor.
    pub positivity_violations: Option<usize>,
}

/// Trajectory-ensemble summary on the recorded time grid.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_fidelity: Vec<f64>,
    /// Sample standard deviation across trajectories / sqrt(n), per time.
    pub stderr_fidelity: Vec<f64>,
    /// Average fidelity over t in [burn_in, t_final] and all trajectories.
    pub steady_state_mean: f64,
    /// Standard error of the per-trajectory time averages (trajectories are
    /// the independent unit; samples within one trajectory are correlated).
    pub steady_state_stderr: f64,
    pub n_trajectories: usize,
}

/// out += -i (w - w^†), the commutator term when w = H rho with Hermitian H.
fn add_anti_hermitian_part(out: &mut ComplexMatrix, w: &ComplexMatrix) {
    let d = w.dim();
    for r in 0..d {
        for c in 0..d {
            let v = w[(r, c)] - w[(c, r)].conj();
            out[(r, c)] += C64::new(v.im, -v.re);
        }
    }
}

/// out += factor * (w + w^†).
fn add_hermitian_part(out: &mut ComplexMatrix, w: &ComplexMatrix, factor: f64) {
    let d = w.dim();
    for r in 0..d {
        for c in 0..d {
            out[(r, c)] += factor * (w[(r, c)] + w[(c, r)].conj());
        }
    }
}

/// Reusable workspace for stepping one model without per-step allocation.
struct Stepper {
    ops: Vec<ComplexMatrix>,
    ops_dag: Vec<ComplexMatrix>,
    sqrt_eta: Vec<f64>,
    /// Sum of c_j^† c_j over expanded channels.
    ksum: ComplexMatrix,
    /// c_j rho products of the current step.
    cr: Vec<ComplexMatrix>,
    work: ComplexMatrix,
    drift: ComplexMatrix,
    next: ComplexMatrix,
}

impl Stepper {
    fn new(expanded: &[ExpandedChannel], dim: usize) -> Self {
        let ops: Vec<ComplexMatrix> = expanded.iter().map(|c| c.op.clone()).collect();
        let ops_dag: Vec<ComplexMatrix> = ops.iter().map(|c| c.adjoint()).collect();
        let mut ksum = ComplexMatrix::zeros(dim);
        let mut work = ComplexMatrix::zeros(dim);
        for (op, op_dag) in ops.iter().zip(&ops_dag) {
            work.mul_into(op_dag, op);
            ksum.add_assign_scaled(&work, C64::new(1.0, 0.0));
        }
        Self {
            cr: vec![ComplexMatrix::zeros(dim); ops.len()],
            sqrt_eta: expanded.iter().map(|c| c.sqrt_efficiency).collect(),
            ops,
            ops_dag,
            ksum,
            work,
            drift: ComplexMatrix::zeros(dim),
            next: ComplexMatrix::zeros(dim),
        }
    }

    /// Fill `self.cr` with c_j rho and `self.drift` with the Lindblad
    /// right-hand side -i[h, rho] + sum_j D[c_j] rho.
    fn lindblad_into(&mut self, rho: &ComplexMatrix, h: &ComplexMatrix) {
        self.drift.set_zero();
        self.work.mul_into(h, rho);
        add_anti_hermitian_part(&mut self.drift, &self.work);
        self.work.mul_into(&self.ksum, rho);
        add_hermitian_part(&mut self.drift, &self.work, -0.5);
        for j in 0..self.ops.len() {
            self.cr[j].mul_into(&self.ops[j], rho);
            self.work.mul_into(&self.cr[j], &self.ops_dag[j]);
            self.drift.add_assign_scaled(&self.work, C64::new(1.0, 0.0));
        }
    }

    /// One Euler-Maruyama step in place. Writes the photocurrent increments
    /// for this step into `dy` and leaves `rho` Hermitized and unit-trace.
    fn step_in_place(
        &mut self,
        rho: &mut ComplexMatrix,
        h: &ComplexMatrix,
        dt: f64,
        noises: &[f64],
        dy: &mut [f64],
    ) -> Result<()> {
        self.lindblad_into(rho, h);
        self.next.copy_from(rho);
        self.next.add_assign_scaled(&self.drift, C64::new(dt, 0.0));
        for j in 0..self.ops.len() {
            // Quadrature mean of the pre-step state: tr[rho (c + c^†)].
            let mean = 2.0 * self.cr[j].trace().re;
            dy[j] = self.sqrt_eta[j] * mean * dt + noises[j];
            let factor = self.sqrt_eta[j] * noises[j];
            add_hermitian_part(&mut self.next, &self.cr[j], factor);
            self.next.add_assign_scaled(rho, C64::new(-factor * mean, 0.0));
        }
        self.next.hermitize();
        let trace = self.next.trace().re;
        if !trace.is_finite() || trace <= 0.0 {
            return Err(Error::Numerical(format!("state trace became {trace} during a step")));
        }
        self.next.scale_mut(1.0 / trace);
        rho.copy_from(&self.next);
        Ok(())
    }
}

fn check_hamiltonian(h: &ComplexMatrix, dim: usize) -> Result<()> {
    if h.dim() != dim {
        return Err(Error::Dimension(format!(
            "Hamiltonian dim {} against state dim {dim}",
            h.dim()
        )));
    }
    let scale = h.max_abs_entry().max(1.0);
    let dev = h.hermiticity_deviation();
    if dev > 1e-10 * scale {
        return Err(Error::NotHermitian { tol: 1e-10 * scale, deviation: dev });
    }
    Ok(())
}

/// Deterministic part -i[H, rho] + sum_j D[c_j] rho. The result is traceless
/// and Hermitian to rounding.
pub fn lindblad_rhs(
    rho: &DensityOperator,
    h: &ComplexMatrix,
    channels: &[MonitoringChannel],
) -> Result<ComplexMatrix> {
    check_hamiltonian(h, rho.dim())?;
    for (i, ch) in channels.iter().enumerate() {
        if ch.jump_op().dim() != rho.dim() {
            return Err(Error::Dimension(format!(
                "channel {i} has dim {} but the state has dim {}",
                ch.jump_op().dim(),
                rho.dim()
            )));
        }
    }
    let expanded: Vec<ExpandedChannel> = channels.iter().flat_map(|c| c.expand()).collect();
    let mut stepper = Stepper::new(&expanded, rho.dim());
    stepper.lindblad_into(rho.matrix(), h);
    Ok(stepper.drift)
}

/// One Euler-Maruyama update of the conditional state. `noises` holds one
/// Normal(0, dt) draw per expanded channel (heterodyne channels take two).
/// The returned state is Hermitized and exactly trace-renormalized.
pub fn sme_step(
    rho: &DensityOperator,
    h: &ComplexMatrix,
    channels: &[MonitoringChannel],
    dt: f64,
    noises: &[f64],
) -> Result<DensityOperator> {
    check_hamiltonian(h, rho.dim())?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("dt = {dt} must be positive")));
    }
    for (i, ch) in channels.iter().enumerate() {
        if ch.jump_op().dim() != rho.dim() {
            return Err(Error::Dimension(format!(
                "channel {i} has dim {} but the state has dim {}",
                ch.jump_op().dim(),
                rho.dim()
            )));
        }
    }
    let expanded: Vec<ExpandedChannel> = channels.iter().flat_map(|c| c.expand()).collect();
    if noises.len() != expanded.len() {
        return Err(Error::Dimension(format!(
            "{} noise draws for {} expanded channels",
            noises.len(),
            expanded.len()
        )));
    }
    let mut stepper = Stepper::new(&expanded, rho.dim());
    let mut mat = rho.matrix().clone();
    let mut dy = vec![0.0; expanded.len()];
    stepper.step_in_place(&mut mat, h, dt, noises, &mut dy)?;
    Ok(DensityOperator::from_matrix_unchecked(mat))
}

/// Photocurrent increment dy = sqrt(eta) tr[rho (c + c^†)] dt + dw for one
/// expanded channel.
pub fn photocurrent_increment(
    rho: &DensityOperator,
    channel: &ExpandedChannel,
    dw: f64,
    dt: f64,
) -> Result<f64> {
    if channel.op.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "channel dim {} against state dim {}",
            channel.op.dim(),
            rho.dim()
        )));
    }
    let mean = 2.0 * rho.expectation(&channel.op)?.re;
    Ok(channel.sqrt_efficiency * mean * dt + dw)
}

struct RunOptions {
    record_stride: usize,
    store_photocurrents: bool,
    snapshot_stride: usize,
    check_positivity: bool,
}

/// Shared trajectory loop behind `run_trajectory` and `run_ensemble`.
fn integrate(
    model: &SmeModel,
    initial: &DensityOperator,
    controller: &mut dyn FeedbackController,
    config: &SmeConfig,
    stream_id: u64,
    opts: &RunOptions,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if initial.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state dim {} against model dim {}",
            initial.dim(),
            model.dim()
        )));
    }
    let dim = model.dim();
    let n_steps = config.n_steps();
    let dt = config.dt;
    let n_channels = model.expanded_count();
    let burn_in_edge = config.burn_in - 0.5 * dt;

    let mut stepper = Stepper::new(model.expanded(), dim);
    let mut noise = NoiseStreams::new(config.master_seed, stream_id, n_channels, dt);
    let mut state = initial.clone();
    let mut h = ComplexMatrix::zeros(dim);
    let mut noises = vec![0.0; n_channels];
    let mut dy = vec![0.0; n_channels];
    let mut last_dy: Vec<f64> = Vec::new();

    let n_recorded = n_steps / opts.record_stride + 2;
    let mut times = Vec::with_capacity(n_recorded);
    let mut fidelities = Vec::with_capacity(n_recorded);
    let mut photocurrents = if opts.store_photocurrents {
        vec![Vec::with_capacity(n_steps); n_channels]
    } else {
        Vec::new()
    };
    let mut snapshots = Vec::new();
    let mut steady_sum = 0.0;
    let mut steady_count = 0usize;
    let mut min_eig = f64::INFINITY;
    let mut violations = 0usize;

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let f = fidelity(&state, model.target())?;
        if !f.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite fidelity at t = {t}, stream {stream_id}"
            )));
        }
        if k % opts.record_stride == 0 || k == n_steps {
            times.push(t);
            fidelities.push(f);
        }
        if opts.snapshot_stride > 0 && (k % opts.snapshot_stride == 0 || k == n_steps) {
            snapshots.push((t, state.clone()));
        }
        if t >= burn_in_edge {
            steady_sum += f;
            steady_count += 1;
        }
        if opts.check_positivity {
            let (eigs, _) = hermitian_eigensystem(state.matrix())?;
            let low = eigs.last().copied().unwrap_or(0.0);
            min_eig = min_eig.min(low);
            if low < POSITIVITY_FLOOR {
                violations += 1;
            }
        }
        if k == n_steps {
            break;
        }

        controller.write_hamiltonian(&state, t, &last_dy, dt, &mut h)?;
        noise.draw(&mut noises);
        stepper
            .step_in_place(state.matrix_mut(), &h, dt, &noises, &mut dy)
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "{msg} (t = {t}, stream {stream_id})"
                )),
                other => other,
            })?;
        if k % 128 == 0 && state.matrix().has_non_finite() {
            return Err(Error::Numerical(format!(
                "non-finite state entries at t = {t}, stream {stream_id}"
            )));
        }
        if opts.store_photocurrents {
            for (j, column) in photocurrents.iter_mut().enumerate() {
                column.push(dy[j]);
            }
        }
        if last_dy.is_empty() {
            last_dy = vec![0.0; n_channels];
        }
        last_dy.copy_from_slice(&dy);
    }

    let steady_state_mean = if steady_count > 0 { steady_sum / steady_count as f64 } else { 0.0 };
    Ok(TrajectoryRecord {
        stream_id,
        times,
        fidelities,
        photocurrents,
        final_state: state,
        snapshots,
        steady_state_mean,
        min_eigenvalue: opts.check_positivity.then_some(min_eig),
        positivity_violations: opts.check_positivity.then_some(violations),
    })
}

/// Integrate one conditional trajectory, recording every step. Deterministic
/// in (master_seed, stream_id): replays are bit-identical.
pub fn run_trajectory(
    model: &SmeModel,
    initial: &DensityOperator,
    controller: &mut dyn FeedbackController,
    config: &SmeConfig,
    stream_id: u64,
) -> Result<TrajectoryRecord> {
    integrate(
        model,
        initial,
        controller,
        config,
        stream_id,
        &RunOptions {
            record_stride: 1,
            store_photocurrents: true,
            snapshot_stride: config.snapshot_stride,
            check_positivity: config.check_positivity,
        },
    )
}

/// Integrate `n_trajectories` independent trajectories (stream ids 0..n) in
/// parallel and reduce to mean/stderr curves plus a steady-state estimate.
/// The reduction runs in stream order, so results do not depend on the
/// number of worker threads.
pub fn run_ensemble<I, C>(
    model: &SmeModel,
    config: &SmeConfig,
    initial_state: I,
    make_controller: C,
) -> Result<EnsembleStats>
where
    I: Fn(u64) -> Result<DensityOperator> + Sync,
    C: Fn(u64) -> Result<Box<dyn FeedbackController>> + Sync,
{
    config.validate()?;
    if config.n_trajectories < 2 {
        return Err(Error::Domain(
            "ensemble statistics need at least 2 trajectories".into(),
        ));
    }
    let opts = RunOptions {
        record_stride: config.record_stride,
        store_photocurrents: false,
        snapshot_stride: 0,
        check_positivity: config.check_positivity,
    };
    let summaries: Vec<(Vec<f64>, f64)> = (0..config.n_trajectories as u64)
        .into_par_iter()
        .map(|stream_id| {
            let initial = initial_state(stream_id)?;
            let mut controller = make_controller(stream_id)?;
            let record = integrate(model, &initial, controller.as_mut(), config, stream_id, &opts)?;
            Ok((record.fidelities, record.steady_state_mean))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = summaries.len();
    let n_points = summaries[0].0.len();
    let times: Vec<f64> = {
        let n_steps = config.n_steps();
        let mut ts: Vec<f64> = (0..=n_steps)
            .filter(|k| k % config.record_stride == 0 || *k == n_steps)
            .map(|k| k as f64 * config.dt)
            .collect();
        ts.dedup();
        ts
    };
    debug_assert_eq!(times.len(), n_points);

    let mut mean = vec![0.0; n_points];
    for (curve, _) in &summaries {
        for (m, f) in mean.iter_mut().zip(curve) {
            *m += f;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut stderr = vec![0.0; n_points];
    if n > 1 {
        for (curve, _) in &summaries {
            for ((s, f), m) in stderr.iter_mut().zip(curve).zip(&mean) {
                *s += (f - m) * (f - m);
            }
        }
        for s in &mut stderr {
            *s = (*s / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        }
    }

    let steady: Vec<f64> = summaries.iter().map(|(_, s)| *s).collect();
    let steady_mean = steady.iter().sum::<f64>() / n as f64;
    let steady_var =
        steady.iter().map(|s| (s - steady_mean) * (s - steady_mean)).sum::<f64>() / (n - 1) as f64;
    let steady_stderr = steady_var.sqrt() / (n as f64).sqrt();

    Ok(EnsembleStats {
        times,
        mean_fidelity: mean,
        stderr_fidelity: stderr,
        steady_state_mean: steady_mean,
        steady_state_stderr: steady_stderr,
        n_trajectories: n,
    })
}

/// Fourth-order Runge-Kutta integration of the unconditional master equation
/// with a (possibly time-dependent) Hamiltonian schedule. Returns the state
/// at every grid time including t = 0. Aborts if the trace drifts by more
/// than 1e-6; healthy runs stay within 1e-8.
pub fn unconditional_solve<F>(
    model: &SmeModel,
    initial: &DensityOperator,
    mut h_schedule: F,
    t_final: f64,
    dt: f64,
) -> Result<Vec<DensityOperator>>
where
    F: FnMut(f64, &mut ComplexMatrix),
{
    if !(dt > 0.0) || !(t_final > 0.0) || !dt.is_finite() || !t_final.is_finite() {
        return Err(Error::Domain(format!(
            "need positive dt and t_final (got dt = {dt}, t_final = {t_final})"
        )));
    }
    if initial.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state dim {} against model dim {}",
            initial.dim(),
            model.dim()
        )));
    }
    let dim = model.dim();
    let n_steps = ((t_final / dt).round() as usize).max(1);
    let mut stepper = Stepper::new(model.expanded(), dim);
    let mut h = ComplexMatrix::zeros(dim);
    let mut m = initial.matrix().clone();
    let mut k1 = ComplexMatrix::zeros(dim);
    let mut k2 = ComplexMatrix::zeros(dim);
    let mut k3 = ComplexMatrix::zeros(dim);
    let mut k4 = ComplexMatrix::zeros(dim);
    let mut tmp = ComplexMatrix::zeros(dim);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(DensityOperator::from_matrix_unchecked(m.clone()));

    for k in 0..n_steps {
        let t = k as f64 * dt;
        h_schedule(t, &mut h);
        check_hamiltonian(&h, dim)?;
        stepper.lindblad_into(&m, &h);
        k1.copy_from(&stepper.drift);

        h_schedule(t + 0.5 * dt, &mut h);
        tmp.copy_from(&m);
        tmp.add_assign_scaled(&k1, C64::new(0.5 * dt, 0.0));
        stepper.lindblad_into(&tmp, &h);
        k2.copy_from(&stepper.drift);

        tmp.copy_from(&m);
        tmp.add_assign_scaled(&k2, C64::new(0.5 * dt, 0.0));
        stepper.lindblad_into(&tmp, &h);
        k3.copy_from(&stepper.drift);

        h_schedule(t + dt, &mut h);
        tmp.copy_from(&m);
        tmp.add_assign_scaled(&k3, C64::new(dt, 0.0));
        stepper.lindblad_into(&tmp, &h);
        k4.copy_from(&stepper.drift);

        m.add_assign_scaled(&k1, C64::new(dt / 6.0, 0.0));
        m.add_assign_scaled(&k2, C64::new(dt / 3.0, 0.0));
        m.add_assign_scaled(&k3, C64::new(dt / 3.0, 0.0));
        m.add_assign_scaled(&k4, C64::new(dt / 6.0, 0.0));
        m.hermitize();

        let drift = (m.trace().re - 1.0).abs();
        if !drift.is_finite() || drift > 1e-6 {
            return Err(Error::Numerical(format!(
                "trace drift {drift:e} at t = {:.6} exceeds 1e-6; reduce dt",
                t + dt
            )));
        }
        out.push(DensityOperator::from_matrix_unchecked(m.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ZeroController;
    use crate::linalg::variance;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn qubit_damping(gamma: f64) -> (CollectiveSpinSystem, MonitoringChannel) {
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let op = sys.jminus().scaled(c(gamma.sqrt(), 0.0));
        (sys, MonitoringChannel::heterodyne(op, 1.0).unwrap())
    }

    fn plus_state() -> DensityOperator {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        DensityOperator::pure(&StateVector::new(vec![c(r, 0.0), c(r, 0.0)]).unwrap())
    }

    #[test]
    fn channel_validation_and_expansion() {
        let op = ComplexMatrix::diagonal(&[1.0, -1.0]);
        assert!(MonitoringChannel::homodyne(op.clone(), 1.5).is_err());
        assert!(MonitoringChannel::homodyne(op.clone(), -0.1).is_err());

        let hom = MonitoringChannel::homodyne(op.clone(), 0.25).unwrap();
        let ex = hom.expand();
        assert_eq!(ex.len(), 1);
        assert!((ex[0].sqrt_efficiency - 0.5).abs() < 1e-15);
        assert!(ex[0].op.sub(&op).unwrap().max_abs_entry() < 1e-15);

        let het = MonitoringChannel::heterodyne(op.clone(), 1.0).unwrap();
        let ex = het.expand();
        assert_eq!(ex.len(), 2);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(ex[0].op.sub(&op.scaled(c(r, 0.0))).unwrap().max_abs_entry() < 1e-15);
        assert!(ex[1].op.sub(&op.scaled(c(0.0, r))).unwrap().max_abs_entry() < 1e-15);

        // A quadrature rotation leaves the dissipator unchanged.
        let rho = plus_state();
        let h = ComplexMatrix::zeros(2);
        let a = lindblad_rhs(&rho, &h, &[MonitoringChannel::homodyne(op.clone(), 1.0).unwrap()])
            .unwrap();
        let b = lindblad_rhs(
            &rho,
            &h,
            &[MonitoringChannel::homodyne_with_phase(op.clone(), 1.0, 1.1).unwrap()],
        )
        .unwrap();
        let het = lindblad_rhs(&rho, &h, &[MonitoringChannel::heterodyne(op, 1.0).unwrap()])
            .unwrap();
        assert!(a.sub(&b).unwrap().max_abs_entry() < 1e-14);
        assert!(a.sub(&het).unwrap().max_abs_entry() < 1e-14);
    }

    #[test]
    fn lindblad_rhs_dark_state_and_decay_rate() {
        let gamma: f64 = 0.8;
        let (sys, ch) = qubit_damping(gamma);
        let h = ComplexMatrix::zeros(2);

        // Ground state is dark: the right-hand side vanishes.
        let ground = DensityOperator::pure(&sys.dicke_state(-0.5).unwrap());
        let rhs = lindblad_rhs(&ground, &h, std::slice::from_ref(&ch)).unwrap();
        assert!(rhs.max_abs_entry() < 1e-14);

        // Excited population decays at rate gamma.
        let excited = DensityOperator::pure(&sys.dicke_state(0.5).unwrap());
        let rhs = lindblad_rhs(&excited, &h, std::slice::from_ref(&ch)).unwrap();
        assert!((rhs[(0, 0)].re + gamma).abs() < 1e-12);
        assert!((rhs[(1, 1)].re - gamma).abs() < 1e-12);
    }

    #[test]
    fn lindblad_rhs_is_traceless_and_hermitian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let sys = CollectiveSpinSystem::new(3).unwrap();
        let channels = vec![
            MonitoringChannel::homodyne(sys.jz().scaled(c(0.6, 0.0)), 0.8).unwrap(),
            MonitoringChannel::heterodyne(sys.jminus().scaled(c(0.9, 0.0)), 1.0).unwrap(),
        ];
        for _ in 0..20 {
            let amps: Vec<C64> =
                (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let rho = DensityOperator::pure(&StateVector::new(amps).unwrap());
            let mut h = ComplexMatrix::zeros(4);
            h.add_assign_scaled(sys.jx(), c(rng.gen_range(-1.0..1.0), 0.0));
            h.add_assign_scaled(sys.jy(), c(rng.gen_range(-1.0..1.0), 0.0));
            let rhs = lindblad_rhs(&rho, &h, &channels).unwrap();
            assert!(rhs.trace().norm() < 1e-12);
            assert!(rhs.hermiticity_deviation() < 1e-12);
        }

        // Dimension mismatch and non-Hermitian Hamiltonians are rejected.
        let rho = plus_state();
        assert!(lindblad_rhs(&rho, &ComplexMatrix::zeros(2), &channels).is_err());
        let mut skew = ComplexMatrix::zeros(2);
        skew[(0, 1)] = c(1.0, 0.0);
        assert!(lindblad_rhs(&rho, &skew, &[]).is_err());
    }

    #[test]
    fn sme_step_with_zero_efficiency_is_deterministic_euler() {
        let gamma: f64 = 0.7;
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let op = sys.jminus().scaled(c(gamma.sqrt(), 0.0));
        let ch = MonitoringChannel::homodyne(op, 0.0).unwrap();
        let rho = plus_state();
        let mut h = ComplexMatrix::zeros(2);
        h.add_assign_scaled(sys.jy(), c(0.4, 0.0));
        let dt = 1e-3;

        let stepped = sme_step(&rho, &h, std::slice::from_ref(&ch), dt, &[0.123]).unwrap();

        let rhs = lindblad_rhs(&rho, &h, std::slice::from_ref(&ch)).unwrap();
        let mut expected = rho.matrix().clone();
        expected.add_assign_scaled(&rhs, c(dt, 0.0));
        expected.hermitize();
        let tr = expected.trace().re;
        expected.scale_mut(1.0 / tr);
        assert!(stepped.matrix().sub(&expected).unwrap().max_abs_entry() < 1e-15);
    }

    #[test]
    fn sme_step_noise_average_matches_deterministic_step() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let gamma: f64 = 1.0;
        let (sys, ch) = qubit_damping(gamma);
        let mut h = ComplexMatrix::zeros(2);
        h.add_assign_scaled(sys.jx(), c(0.8, 0.0));
        let rho = plus_state();
        let dt: f64 = 1e-3;
        let channels = std::slice::from_ref(&ch);

        let n = 100_000;
        let normal = Normal::new(0.0, dt.sqrt()).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let mut mean = ComplexMatrix::zeros(2);
        let mut sq = vec![0.0; 4];
        for _ in 0..n {
            let noises = [normal.sample(&mut rng), normal.sample(&mut rng)];
            let stepped = sme_step(&rho, &h, channels, dt, &noises).unwrap();
            for (i, v) in stepped.matrix().entries().iter().enumerate() {
                sq[i] += v.norm_sqr();
            }
            mean.add_assign_scaled(stepped.matrix(), c(1.0 / n as f64, 0.0));
        }

        let rhs = lindblad_rhs(&rho, &h, channels).unwrap();
        let mut expected = rho.matrix().clone();
        expected.add_assign_scaled(&rhs, c(dt, 0.0));

        for (i, (got, want)) in mean.entries().iter().zip(expected.entries()).enumerate() {
            let second = sq[i] / n as f64;
            let var = (second - got.norm_sqr()).max(0.0);
            let stderr = (var / n as f64).sqrt();
            assert!(
                (got - want).norm() <= 4.0 * stderr + 1e-9,
                "entry {i}: diff {:e} vs stderr {stderr:e}",
                (got - want).norm()
            );
        }
    }

    #[test]
    fn sme_step_preserves_purity_to_second_order() {
        let (_, ch) = qubit_damping(1.0);
        let channels = [ch];
        let rho = plus_state();
        let h = ComplexMatrix::zeros(2);

        // Heterodyne expansion has two noise slots. Averaging over the four
        // sign points (+-sqrt(dt), +-sqrt(dt)) gives every slot dw^2 = dt
        // exactly and cancels the odd and cross terms, so only the genuine
        // O(dt^2) integrator error survives in the mean.
        let mean_deviation = |dt: f64| {
            let mut acc = 0.0;
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    let noises = [s1 * dt.sqrt(), s2 * dt.sqrt()];
                    let stepped = sme_step(&rho, &h, &channels, dt, &noises).unwrap();
                    acc += 1.0 - stepped.purity();
                }
            }
            (acc / 4.0).abs()
        };

        let d1 = mean_deviation(1e-3);
        let d2 = mean_deviation(2e-3);
        assert!(d1 < 5.0 * 1e-6, "mean purity deviation {d1:e} not O(dt^2)");
        let ratio = d2 / d1;
        assert!((2.5..6.0).contains(&ratio), "scaling ratio {ratio} not quadratic");

        // Pathwise deviation stays O(dt) even for a 3-sigma noise draw.
        let dt = 1e-3;
        let stepped = sme_step(&rho, &h, &channels, dt, &[3.0 * dt.sqrt(), 0.0]).unwrap();
        assert!((1.0 - stepped.purity()).abs() <= 10.0 * dt);
        assert!((stepped.matrix().trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn photocurrent_examples() {
        let gamma: f64 = 0.49;
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let op = sys.jminus().scaled(c(gamma.sqrt(), 0.0));

        // Zero efficiency: pure noise.
        let dark = MonitoringChannel::homodyne(op.clone(), 0.0).unwrap().expand();
        let rho = plus_state();
        assert_eq!(photocurrent_increment(&rho, &dark[0], 0.37, 1e-3).unwrap(), 0.37);

        let bright = MonitoringChannel::homodyne(op, 1.0).unwrap().expand();
        let excited = DensityOperator::pure(&sys.dicke_state(0.5).unwrap());
        let dt = 1e-3;
        assert!(photocurrent_increment(&excited, &bright[0], 0.0, dt).unwrap().abs() < 1e-15);
        let dy = photocurrent_increment(&rho, &bright[0], 0.0, dt).unwrap();
        assert!((dy - gamma.sqrt() * dt).abs() < 1e-15);
    }

    #[test]
    fn trajectories_replay_bit_identically() {
        let model = dicke_monitoring_model(2, 0.4, 0.5, 0.0).unwrap();
        let initial = DensityOperator::pure(
            &crate::spin::coherent_spin_state(2, 1.2, 0.3).unwrap(),
        );
        let config = SmeConfig::new(1e-3, 0.2, 1, 77);
        let mut ctrl_a = ZeroController;
        let a = run_trajectory(&model, &initial, &mut ctrl_a, &config, 5).unwrap();
        let mut ctrl_b = ZeroController;
        let b = run_trajectory(&model, &initial, &mut ctrl_b, &config, 5).unwrap();
        assert_eq!(a.fidelities, b.fidelities);
        assert_eq!(a.photocurrents, b.photocurrents);

        let mut ctrl_c = ZeroController;
        let other = run_trajectory(&model, &initial, &mut ctrl_c, &config, 6).unwrap();
        assert_ne!(a.fidelities, other.fidelities);

        assert_eq!(a.times.len(), a.fidelities.len());
        assert_eq!(a.photocurrents.len(), model.expanded_count());
        assert_eq!(a.photocurrents[0].len(), a.times.len() - 1);
        assert!(a.fidelities.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn dephasing_eigenstate_stays_put() {
        // Pure Jz monitoring of a Dicke level: the innovation term vanishes
        // identically and the fidelity stays 1.
        let model = dicke_monitoring_model(4, 0.7, 0.0, 1.0).unwrap();
        let initial = DensityOperator::pure(model.target());
        let config = SmeConfig::new(1e-3, 0.3, 1, 19);
        let mut ctrl = ZeroController;
        let rec = run_trajectory(&model, &initial, &mut ctrl, &config, 0).unwrap();
        assert!(rec.fidelities.iter().all(|f| *f >= 1.0 - 1e-13));
        assert!((rec.steady_state_mean - 1.0).abs() < 1e-13);
    }

    #[test]
    fn damping_ensemble_matches_exponential_decay() {
        let gamma: f64 = 1.0;
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let op = sys.jminus().scaled(c(gamma.sqrt(), 0.0));
        let ch = MonitoringChannel::heterodyne(op, 1.0).unwrap();
        let target = sys.dicke_state(0.5).unwrap();
        let model = SmeModel::new(vec![ch], target.clone()).unwrap();
        let initial = DensityOperator::pure(&target);

        let mut config = SmeConfig::new(1e-3, 2.0, 400, 2024);
        config.record_stride = 200;
        let stats = run_ensemble(&model, &config, |_| Ok(initial.clone()), |_| {
            Ok(Box::new(ZeroController) as Box<dyn FeedbackController>)
        })
        .unwrap();

        for (t, (mean, se)) in stats
            .times
            .iter()
            .zip(stats.mean_fidelity.iter().zip(&stats.stderr_fidelity))
        {
            let exact = (-gamma * t).exp();
            assert!(
                (mean - exact).abs() <= 4.0 * se + 1e-9,
                "t = {t}: mean {mean} vs exact {exact} (stderr {se:e})"
            );
        }
    }

    #[test]
    fn trivial_ensemble_keeps_initial_fidelity() {
        let sys = CollectiveSpinSystem::new(2).unwrap();
        let target = sys.dicke_state(1.0).unwrap();
        let model = SmeModel::new(vec![], target).unwrap();
        let initial = DensityOperator::pure(
            &crate::spin::coherent_spin_state(2, 0.9, 0.1).unwrap(),
        );
        let f0 = fidelity(&initial, model.target()).unwrap();
        let config = SmeConfig::new(1e-2, 0.5, 3, 4);
        let stats = run_ensemble(&model, &config, |_| Ok(initial.clone()), |_| {
            Ok(Box::new(ZeroController) as Box<dyn FeedbackController>)
        })
        .unwrap();
        assert!((stats.steady_state_mean - f0).abs() < 1e-12);
        assert!(stats.steady_state_stderr < 1e-12);
    }

    #[test]
    fn unconditional_solver_reproduces_amplitude_damping() {
        let gamma: f64 = 0.9;
        let (sys, ch) = qubit_damping(gamma);
        let target = sys.dicke_state(0.5).unwrap();
        let model = SmeModel::new(vec![ch], target.clone()).unwrap();
        let initial = DensityOperator::pure(&target);
        let dt = 1e-3;
        let states = unconditional_solve(&model, &initial, |_, h| h.set_zero(), 2.0, dt).unwrap();
        assert_eq!(states.len(), 2001);
        for (k, rho) in states.iter().enumerate() {
            let t = k as f64 * dt;
            let f = fidelity(rho, &target).unwrap();
            assert!((f - (-gamma * t).exp()).abs() < 1e-6, "t = {t}");
            assert!((rho.matrix().trace().re - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn unconditional_dephasing_fixes_diagonal_states() {
        let sys = CollectiveSpinSystem::new(3).unwrap();
        let ch = MonitoringChannel::homodyne(sys.jz().scaled(c(0.8, 0.0)), 1.0).unwrap();
        let target = sys.dicke_state(0.5).unwrap();
        let model = SmeModel::new(vec![ch], target).unwrap();
        let mut diag = ComplexMatrix::zeros(4);
        for (i, p) in [0.4, 0.3, 0.2, 0.1].iter().enumerate() {
            diag[(i, i)] = c(*p, 0.0);
        }
        let initial = DensityOperator::new(diag.clone()).unwrap();
        let states = unconditional_solve(&model, &initial, |_, h| h.set_zero(), 0.5, 1e-3).unwrap();
        let last = states.last().unwrap();
        assert!(last.matrix().sub(&diag).unwrap().max_abs_entry() < 1e-12);
    }

    #[test]
    fn unconditional_damping_relaxes_to_ground_level() {
        let n = 3;
        let sys = CollectiveSpinSystem::new(n).unwrap();
        let ch = MonitoringChannel::heterodyne(sys.jminus().scaled(c(1.0, 0.0)), 1.0).unwrap();
        let ground = sys.dicke_state(-1.5).unwrap();
        let model = SmeModel::new(vec![ch], ground.clone()).unwrap();
        let initial = DensityOperator::pure(&sys.dicke_state(1.5).unwrap());
        let states = unconditional_solve(&model, &initial, |_, h| h.set_zero(), 12.0, 1e-3).unwrap();
        let f = fidelity(states.last().unwrap(), &ground).unwrap();
        assert!(f > 0.999, "ground fidelity {f}");
    }

    #[test]
    fn ensemble_mean_state_matches_unconditional_solution() {
        // Feedback-free constant drive: the trajectory average must converge
        // to the unconditional master equation at the Monte Carlo rate.
        let gamma: f64 = 0.8;
        let kappa: f64 = 0.3;
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let channels = vec![
            MonitoringChannel::homodyne(sys.jz().scaled(c(kappa.sqrt(), 0.0)), 1.0).unwrap(),
            MonitoringChannel::heterodyne(sys.jminus().scaled(c(gamma.sqrt(), 0.0)), 1.0).unwrap(),
        ];
        let target = sys.dicke_state(0.5).unwrap();
        let model = SmeModel::new(channels, target).unwrap();
        let initial = plus_state();
        let mut h0 = ComplexMatrix::zeros(2);
        h0.add_assign_scaled(sys.jy(), c(0.7, 0.0));

        let dt = 1e-3;
        let t_final = 1.0;
        let exact = unconditional_solve(&model, &initial, |_, h| h.copy_from(&h0), t_final, dt)
            .unwrap();

        let sample_steps = [250usize, 500, 1000];
        for n_traj in [500u64, 2000] {
            let mut sums: Vec<ComplexMatrix> =
                sample_steps.iter().map(|_| ComplexMatrix::zeros(2)).collect();
            let mut sq: Vec<[f64; 4]> = sample_steps.iter().map(|_| [0.0; 4]).collect();
            let mut config = SmeConfig::new(dt, t_final, 1, 31_000 + n_traj);
            config.snapshot_stride = 250;
            for sid in 0..n_traj {
                let h0 = h0.clone();
                let mut ctrl = crate::controllers::ConstantController::new(h0).unwrap();
                let rec = run_trajectory(&model, &initial, &mut ctrl, &config, sid).unwrap();
                for (si, step) in sample_steps.iter().enumerate() {
                    let (_, state) = rec
                        .snapshots
                        .iter()
                        .find(|(t, _)| (t - *step as f64 * dt).abs() < 1e-9)
                        .expect("snapshot missing");
                    sums[si].add_assign_scaled(state.matrix(), c(1.0, 0.0));
                    for (ei, v) in state.matrix().entries().iter().enumerate() {
                        sq[si][ei] += v.norm_sqr();
                    }
                }
            }
            for (si, step) in sample_steps.iter().enumerate() {
                let mut mean = sums[si].clone();
                mean.scale_mut(1.0 / n_traj as f64);
                let want = exact[*step].matrix();
                for (ei, (got, want)) in mean.entries().iter().zip(want.entries()).enumerate() {
                    let second = sq[si][ei] / n_traj as f64;
                    let var = (second - got.norm_sqr()).max(0.0);
                    let stderr = (var / n_traj as f64).sqrt();
                    assert!(
                        (got - want).norm() <= 4.0 * stderr + 1e-8,
                        "n = {n_traj}, step {step}, entry {ei}: diff {:e}, stderr {stderr:e}",
                        (got - want).norm()
                    );
                }
            }
        }
    }

    #[test]
    fn unit_efficiency_monitoring_keeps_states_nearly_pure() {
        // Everything measured, nothing lost: the exact conditional state is
        // pure, so the Euler-Maruyama purity deficit is pure discretization
        // error and must shrink as the step does.
        let model = dicke_monitoring_model(4, 0.4, 0.5, 1.0).unwrap();
        let initial = DensityOperator::pure(model.target());
        let deficit = |dt: f64| {
            let config = SmeConfig::new(dt, 2.0, 1, 914);
            let mut worst: f64 = 0.0;
            for sid in 0..3 {
                let mut ctrl =
                    crate::controllers::LocalCostController::optimized_phase(4, 1.0, 1.0).unwrap();
                let rec = run_trajectory(&model, &initial, &mut ctrl, &config, sid).unwrap();
                worst = worst.max(1.0 - rec.final_state.purity());
            }
            worst
        };
        let coarse = deficit(1e-3);
        let fine = deficit(2.5e-4);
        assert!(coarse < 0.1, "purity deficit {coarse} too large at dt = 1e-3");
        assert!(
            fine < 0.6 * coarse + 1e-4,
            "deficit did not shrink with dt: coarse {coarse:e}, fine {fine:e}"
        );
    }

    #[test]
    fn variance_helper_smoke() {
        // Guards against regressions in the expectation plumbing the engine
        // relies on: var(Jz) on an equatorial coherent state is l/2.
        let sys = CollectiveSpinSystem::new(2).unwrap();
        let css = crate::spin::coherent_spin_state(2, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        let v = variance(sys.jz(), &css).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation_and_warning() {
        let mut config = SmeConfig::new(1e-3, 2.0, 10, 1);
        assert!(config.validate().is_ok());
        assert_eq!(config.n_steps(), 2000);
        config.burn_in = 3.0;
        assert!(config.validate().is_err());
        config.burn_in = 1.0;
        config.dt = 0.0;
        assert!(config.validate().is_err());

        assert!(timestep_warning(1e-3, 1.0, 0.5, 1.0, 4).is_none());
        assert!(timestep_warning(1e-2, 1.0, 0.5, 1.0, 10).is_some());
        assert!(timestep_warning(1e-3, 0.0, 0.0, 1.0, 100).is_none());
    }

    #[test]
    fn noise_count_and_dimension_errors() {
        let (_, ch) = qubit_damping(1.0);
        let rho = plus_state();
        let h = ComplexMatrix::zeros(2);
        // Heterodyne expands to two slots; one noise is an error.
        assert!(sme_step(&rho, &h, std::slice::from_ref(&ch), 1e-3, &[0.0]).is_err());
        assert!(sme_step(&rho, &ComplexMatrix::zeros(3), std::slice::from_ref(&ch), 1e-3, &[0.0, 0.0])
            .is_err());
    }
}

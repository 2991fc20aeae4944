//! Feedback control laws: conditional state (and measurement history) in,
//! Hamiltonian out.
//!
//! The local-cost controllers steer a collective spin by minimizing the
//! instantaneous rate of a diagonal cost C = sum_m w_m a_m. Writing the
//! adjacent coherences of the conditional state as
//! r_m = <l,m|rho|l,m+1> and the drive as H = u (cos(theta) Jx + sin(theta) Jy),
//! the Hamiltonian part of the cost rate is
//!
//!   dC/dt = u * Re[ e^{i(theta - pi/2)} * conj(S) ],
//!   S = sum_m (w_m - w_{m+1}) r_m h_m,
//!
//! so the optimized-phase law picks theta = arg(S) - pi/2 at full strength
//! (dC/dt = -u_max |S|), and the fixed-phase law keeps theta = pi/2 and
//! switches u = -sign(Re S) u_max. The windowed controller instead feeds a
//! time-averaged photocurrent directly back as a Hamiltonian coefficient.

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, DensityOperator, C64};
use crate::spin::{ladder_coefficient, to_twice_half_integer, CollectiveSpinSystem};

/// Strategy queried by the trajectory engine once per step, in time order.
///
/// `previous_increments` holds the photocurrent increments of the step that
/// just completed (one per expanded channel), and is empty on the first call.
pub trait FeedbackController: Send {
    fn write_hamiltonian(
        &mut self,
        rho: &DensityOperator,
        t: f64,
        previous_increments: &[f64],
        dt: f64,
        out: &mut ComplexMatrix,
    ) -> Result<()>;
}

/// No control: H = 0.
pub struct ZeroController;

impl FeedbackController for ZeroController {
    fn write_hamiltonian(
        &mut self,
        _rho: &DensityOperator,
        _t: f64,
        _previous_increments: &[f64],
        _dt: f64,
        out: &mut ComplexMatrix,
    ) -> Result<()> {
        out.set_zero();
        Ok(())
    }
}

/// Fixed Hamiltonian, independent of state and record.
pub struct ConstantController {
    h: ComplexMatrix,
}

impl ConstantController {
    pub fn new(h: ComplexMatrix) -> Result<Self> {
        let scale = h.max_abs_entry().max(1.0);
        let dev = h.hermiticity_deviation();
        if dev > 1e-12 * scale {
            return Err(Error::NotHermitian { tol: 1e-12 * scale, deviation: dev });
        }
        Ok(Self { h })
    }
}

impl FeedbackController for ConstantController {
    fn write_hamiltonian(
        &mut self,
        _rho: &DensityOperator,
        _t: f64,
        _previous_increments: &[f64],
        _dt: f64,
        out: &mut ComplexMatrix,
    ) -> Result<()> {
        out.copy_from(&self.h);
        Ok(())
    }
}

/// Drive strength and axis phase of a collective control Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlAction {
    pub u: f64,
    pub theta: f64,
}

/// Whether the drive axis is optimized each step or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    Optimized,
    Fixed,
}

/// Diagonal cost weights, stored by basis index (index i holds w at m = l - i).
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    w: Vec<f64>,
}

impl CostWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Domain("cost weights cannot be empty".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("cost weights must be finite".into()));
        }
        Ok(Self { w })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

fn ladder_dims(l_t: f64, m_t: f64) -> Result<(usize, usize)> {
    let twice_l = to_twice_half_integer(l_t, "l_t")?;
    let twice_m = to_twice_half_integer(m_t, "m_t")?;
    if twice_m.abs() > twice_l || (twice_l - twice_m) % 2 != 0 {
        return Err(Error::Domain(format!("m_t = {m_t} is not a level of the l = {l_t} ladder")));
    }
    let dim = (twice_l + 1) as usize;
    let target_index = ((twice_l - twice_m) / 2) as usize;
    Ok((dim, target_index))
}

/// Distance-from-target weights w_m = |m - m_t|.
pub fn euclidean_weights(l_t: f64, m_t: f64) -> Result<CostWeights> {
    let (dim, _) = ladder_dims(l_t, m_t)?;
    CostWeights::new((0..dim).map(|i| ((l_t - i as f64) - m_t).abs()).collect())
}

/// Weights whose cost is the negative target population, so the cost rate is
/// the negative fidelity rate.
pub fn infidelity_weights(l_t: f64, m_t: f64) -> Result<CostWeights> {
    let (dim, target_index) = ladder_dims(l_t, m_t)?;
    let mut w = vec![0.0; dim];
    w[target_index] = -1.0;
    CostWeights::new(w)
}

/// Level populations and adjacent coherences of a state in the ladder basis.
///
/// Pair j couples basis indices (j+1, j), i.e. levels (m, m+1) with
/// m = l - j - 1; the returned coherence j is <l,m|rho|l,m+1>.
pub fn dicke_amplitudes(rho: &DensityOperator) -> (Vec<f64>, Vec<C64>) {
    let d = rho.dim();
    let mat = rho.matrix();
    let populations = (0..d).map(|i| mat[(i, i)].re).collect();
    let coherences = (0..d.saturating_sub(1)).map(|j| mat[(j + 1, j)]).collect();
    (populations, coherences)
}

/// Steering sum S = sum_m (w_m - w_{m+1}) <l,m|rho|l,m+1> h_m.
pub fn steering_sum(weights: &CostWeights, rho: &DensityOperator) -> Result<C64> {
    if weights.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "weights of dim {} against state of dim {}",
            weights.dim(),
            rho.dim()
        )));
    }
    let l = (rho.dim() as f64 - 1.0) / 2.0;
    let (_, coherences) = dicke_amplitudes(rho);
    let w = weights.values();
    let mut s = C64::new(0.0, 0.0);
    for (j, r) in coherences.iter().enumerate() {
        let m = l - (j as f64 + 1.0);
        let h = ladder_coefficient(l, m)?;
        s += (w[j + 1] - w[j]) * r * h;
    }
    Ok(s)
}

/// Hamiltonian contribution to the cost rate for a given action.
pub fn cost_rate(action: &ControlAction, weights: &CostWeights, rho: &DensityOperator) -> Result<f64> {
    let s = steering_sum(weights, rho)?;
    let phase = C64::from_polar(1.0, action.theta - std::f64::consts::FRAC_PI_2);
    Ok(action.u * (phase * s.conj()).re)
}

/// One-step greedy action minimizing the cost rate under |u| <= u_max.
pub fn control_action(
    weights: &CostWeights,
    rho: &DensityOperator,
    u_max: f64,
    mode: PhaseMode,
) -> Result<ControlAction> {
    if u_max < 0.0 || !u_max.is_finite() {
        return Err(Error::Domain(format!("u_max = {u_max} must be finite and >= 0")));
    }
    let s = steering_sum(weights, rho)?;
    Ok(match mode {
        PhaseMode::Optimized => {
            if s.norm() == 0.0 {
                ControlAction { u: 0.0, theta: 0.0 }
            } else {
                ControlAction { u: u_max, theta: s.arg() - std::f64::consts::FRAC_PI_2 }
            }
        }
        PhaseMode::Fixed => {
            // At theta = pi/2 the cost rate is u * Re(S).
            let re = s.re;
            let u = if re == 0.0 { 0.0 } else { -re.signum() * u_max };
            ControlAction { u, theta: std::f64::consts::FRAC_PI_2 }
        }
    })
}

/// Greedy cost-descent controller driving through Jx and Jy.
pub struct LocalCostController {
    sys: CollectiveSpinSystem,
    weights: CostWeights,
    u_max: f64,
    mode: PhaseMode,
}

impl LocalCostController {
    pub fn new(
        sys: CollectiveSpinSystem,
        weights: CostWeights,
        u_max: f64,
        mode: PhaseMode,
    ) -> Result<Self> {
        if weights.dim() != sys.dim() {
            return Err(Error::Dimension(format!(
                "weights of dim {} for a system of dim {}",
                weights.dim(),
                sys.dim()
            )));
        }
        if u_max < 0.0 || !u_max.is_finite() {
            return Err(Error::Domain(format!("u_max = {u_max} must be finite and >= 0")));
        }
        Ok(Self { sys, weights, u_max, mode })
    }

    /// Optimized-phase controller with distance weights.
    pub fn optimized_phase(n_atoms: usize, m_t: f64, u_max: f64) -> Result<Self> {
        let sys = CollectiveSpinSystem::new(n_atoms)?;
        let weights = euclidean_weights(sys.l(), m_t)?;
        Self::new(sys, weights, u_max, PhaseMode::Optimized)
    }

    /// Fixed-phase (bang-bang) controller with distance weights.
    pub fn fixed_phase(n_atoms: usize, m_t: f64, u_max: f64) -> Result<Self> {
        let sys = CollectiveSpinSystem::new(n_atoms)?;
        let weights = euclidean_weights(sys.l(), m_t)?;
        Self::new(sys, weights, u_max, PhaseMode::Fixed)
    }

    /// Optimized-phase controller that greedily maximizes the target
    /// population instead of descending the distance cost.
    pub fn optimized_phase_local(n_atoms: usize, m_t: f64, u_max: f64) -> Result<Self> {
        let sys = CollectiveSpinSystem::new(n_atoms)?;
        let weights = infidelity_weights(sys.l(), m_t)?;
        Self::new(sys, weights, u_max, PhaseMode::Optimized)
    }

    /// Single-atom special case of the fixed-phase law: u = -sign(<sigma_x>) u_max.
    pub fn qubit_bang_bang(u_max: f64) -> Result<Self> {
        Self::fixed_phase(1, 0.5, u_max)
    }

    pub fn action(&self, rho: &DensityOperator) -> Result<ControlAction> {
        control_action(&self.weights, rho, self.u_max, self.mode)
    }
}

impl FeedbackController for LocalCostController {
    fn write_hamiltonian(
        &mut self,
        rho: &DensityOperator,
        _t: f64,
        _previous_increments: &[f64],
        _dt: f64,
        out: &mut ComplexMatrix,
    ) -> Result<()> {
        let action = self.action(rho)?;
        out.set_zero();
        out.add_assign_scaled(self.sys.jx(), C64::new(action.u * action.theta.cos(), 0.0));
        out.add_assign_scaled(self.sys.jy(), C64::new(action.u * action.theta.sin(), 0.0));
        Ok(())
    }
}

/// Window-averaged photocurrent feedback H = H0 + F * (Dy/Dt).
///
/// Increments are accumulated over consecutive windows of length `window`;
/// the average of the window that just completed drives the next one. Until
/// the first window completes the controller emits the bare Hamiltonian.
pub struct MarkovianController {
    f_op: ComplexMatrix,
    bare_h: ComplexMatrix,
    window: f64,
    channel: usize,
    steps_per_window: Option<usize>,
    accumulated: f64,
    steps_in_window: usize,
    held_rate: f64,
}

impl MarkovianController {
    pub fn new(
        f_op: ComplexMatrix,
        window: f64,
        bare_h: ComplexMatrix,
        channel: usize,
    ) -> Result<Self> {
        for (name, m) in [("feedback operator", &f_op), ("bare Hamiltonian", &bare_h)] {
            let scale = m.max_abs_entry().max(1.0);
            let dev = m.hermiticity_deviation();
            if dev > 1e-12 * scale {
                return Err(Error::Domain(format!("{name} must be Hermitian (deviation {dev:e})")));
            }
        }
        if f_op.dim() != bare_h.dim() {
            return Err(Error::Dimension(format!(
                "feedback operator dim {} against bare Hamiltonian dim {}",
                f_op.dim(),
                bare_h.dim()
            )));
        }
        if !(window > 0.0) || !window.is_finite() {
            return Err(Error::Domain(format!("window = {window} must be positive")));
        }
        Ok(Self {
            f_op,
            bare_h,
            window,
            channel,
            steps_per_window: None,
            accumulated: 0.0,
            steps_in_window: 0,
            held_rate: 0.0,
        })
    }
}

impl FeedbackController for MarkovianController {
    fn write_hamiltonian(
        &mut self,
        _rho: &DensityOperator,
        _t: f64,
        previous_increments: &[f64],
        dt: f64,
        out: &mut ComplexMatrix,
    ) -> Result<()> {
        let steps = match self.steps_per_window {
            Some(s) => s,
            None => {
                if self.window < dt - 1e-12 * dt.abs() {
                    return Err(Error::Domain(format!(
                        "window {} shorter than the integration step {dt}",
                        self.window
                    )));
                }
                let s = (self.window / dt).round().max(1.0) as usize;
                self.steps_per_window = Some(s);
                s
            }
        };
        if !previous_increments.is_empty() {
            let dy = previous_increments.get(self.channel).copied().ok_or_else(|| {
                Error::Dimension(format!(
                    "feedback channel {} but only {} photocurrents",
                    self.channel,
                    previous_increments.len()
                ))
            })?;
            self.accumulated += dy;
            self.steps_in_window += 1;
            if self.steps_in_window == steps {
                self.held_rate = self.accumulated / (steps as f64 * dt);
                self.accumulated = 0.0;
                self.steps_in_window = 0;
            }
        }
        out.copy_from(&self.bare_h);
        out.add_assign_scaled(&self.f_op, C64::new(self.held_rate, 0.0));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{variance, StateVector};

    fn pure(amps: Vec<C64>) -> DensityOperator {
        DensityOperator::pure(&StateVector::new(amps).unwrap())
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn weights_examples() {
        let w = euclidean_weights(2.0, 0.0).unwrap();
        assert_eq!(w.values(), &[2.0, 1.0, 0.0, 1.0, 2.0]);
        let w = euclidean_weights(2.0, 2.0).unwrap();
        assert_eq!(w.values(), &[0.0, 1.0, 2.0, 3.0, 4.0]);

        let w = infidelity_weights(2.0, 1.0).unwrap();
        assert_eq!(w.values(), &[0.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(w.values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn amplitudes_of_basis_and_mixed_states() {
        let sys = CollectiveSpinSystem::new(4).unwrap();
        let rho = DensityOperator::pure(&sys.dicke_state(2.0).unwrap());
        let (a, r) = dicke_amplitudes(&rho);
        assert_eq!(a, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(r.iter().all(|z| z.norm() == 0.0));

        let mixed = DensityOperator::maximally_mixed(5);
        let (a, r) = dicke_amplitudes(&mixed);
        assert!(a.iter().all(|x| (x - 0.2).abs() < 1e-15));
        assert!(r.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn amplitudes_of_phased_pure_state() {
        // Amplitudes sqrt(a_m) e^{i phi_m}: coherence is sqrt(a_m a_{m+1}) e^{i(phi_m - phi_{m+1})}.
        let a: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
        let phi = [0.3, -0.7, 1.9, 0.4];
        // Index i corresponds to m = l - i, so index 3 is the lowest m.
        let amps: Vec<C64> =
            (0..4).map(|i| C64::from_polar(a[3 - i].sqrt(), phi[3 - i])).collect();
        let rho = pure(amps);
        let (_, r) = dicke_amplitudes(&rho);
        // Pair j couples m = l - j - 1 (index j+1) with m + 1 (index j).
        for j in 0..3 {
            let m_idx = 2 - j;
            let expected = C64::from_polar(
                (a[m_idx] * a[m_idx + 1]).sqrt(),
                phi[m_idx] - phi[m_idx + 1],
            );
            assert!((r[j] - expected).norm() < 1e-12, "pair {j}");
        }
    }

    #[test]
    fn target_state_gives_zero_action() {
        let sys = CollectiveSpinSystem::new(4).unwrap();
        let rho = DensityOperator::pure(&sys.dicke_state(2.0).unwrap());
        let w = euclidean_weights(2.0, 2.0).unwrap();
        for mode in [PhaseMode::Optimized, PhaseMode::Fixed] {
            let action = control_action(&w, &rho, 1.0, mode).unwrap();
            assert_eq!(action.u, 0.0);
        }
    }

    #[test]
    fn qubit_fixed_phase_is_bang_bang_on_sigma_x() {
        let u_max = 0.8;
        let ctrl = LocalCostController::qubit_bang_bang(u_max).unwrap();
        let sys = CollectiveSpinSystem::new(1).unwrap();
        let sigma_x = sys.jx().scaled(c(2.0, 0.0));

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = pure(vec![c(r, 0.0), c(r, 0.0)]);
        let minus = pure(vec![c(r, 0.0), c(-r, 0.0)]);
        for rho in [plus, minus] {
            let action = ctrl.action(&rho).unwrap();
            let mean_x = rho.expectation(&sigma_x).unwrap().re;
            assert_eq!(action.theta, std::f64::consts::FRAC_PI_2);
            assert!((action.u - (-mean_x.signum() * u_max)).abs() < 1e-12);
            assert!(action.u.abs() <= u_max + 1e-15);
        }

        let excited = pure(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(ctrl.action(&excited).unwrap().u, 0.0);
    }

    #[test]
    fn optimized_phase_increases_fidelity_from_plus_state() {
        let mut ctrl = LocalCostController::optimized_phase(1, 0.5, 1.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let rho = pure(vec![c(r, 0.0), c(r, 0.0)]);
        let mut h = ComplexMatrix::zeros(2);
        ctrl.write_hamiltonian(&rho, 0.0, &[], 1e-3, &mut h).unwrap();
        assert!(h.is_hermitian(1e-12));

        // One Euler step of the unitary part must raise the excited population.
        let comm = ComplexMatrix::commutator(&h, rho.matrix()).unwrap();
        let dt = 1e-4;
        let drho = comm.scaled(c(0.0, -dt));
        let df = drho[(0, 0)].re;
        assert!(df > 1e-5, "fidelity rate {df:e} not positive");

        // The emitted action achieves cost rate -u_max |S|.
        let w = euclidean_weights(0.5, 0.5).unwrap();
        let action = ctrl.action(&rho).unwrap();
        let s = steering_sum(&w, &rho).unwrap();
        let rate = cost_rate(&action, &w, &rho).unwrap();
        assert!((rate + s.norm()).abs() < 1e-12);
    }

    #[test]
    fn optimized_phase_aligns_with_pre_phased_state() {
        // State with uniform pair phase offset: arg(S) = theta0 + pi/2, so the
        // optimized action recovers theta0 and the cost rate is -u_max |S|.
        let l = 2.0;
        let theta0 = 0.9;
        let a: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];
        let mut phi = [0.0f64; 5];
        // Delta phi_m = phi_m - phi_{m+1} = theta0 + pi/2 for every adjacent pair.
        for i in (0..4).rev() {
            phi[i] = phi[i + 1] + (theta0 + std::f64::consts::FRAC_PI_2);
        }
        // phi array is ordered by m ascending here; map to indices (m = l - i).
        let amps: Vec<C64> =
            (0..5).map(|i| C64::from_polar(a[4 - i].sqrt(), phi[4 - i])).collect();
        let rho = pure(amps);

        let w = euclidean_weights(l, l).unwrap();
        let action = control_action(&w, &rho, 1.0, PhaseMode::Optimized).unwrap();
        let wrapped = (action.theta - theta0).rem_euclid(2.0 * std::f64::consts::PI);
        assert!(wrapped < 1e-10 || wrapped > 2.0 * std::f64::consts::PI - 1e-10);

        let s = steering_sum(&w, &rho).unwrap();
        let expected: f64 = (0..4)
            .map(|i| {
                let m = -l + i as f64;
                (a[i] * a[i + 1]).sqrt() * ladder_coefficient(l, m).unwrap()
            })
            .sum();
        assert!((s.norm() - expected).abs() < 1e-12);
        assert!((cost_rate(&action, &w, &rho).unwrap() + expected).abs() < 1e-12);
    }

    #[test]
    fn optimized_phase_is_a_local_minimum_of_the_cost_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let w = euclidean_weights(1.5, 0.5).unwrap();
        for _ in 0..50 {
            let amps: Vec<C64> =
                (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let rho = pure(amps);
            let action = control_action(&w, &rho, 1.0, PhaseMode::Optimized).unwrap();
            if action.u == 0.0 {
                continue;
            }
            let base = cost_rate(&action, &w, &rho).unwrap();
            for delta in [-1e-3, 1e-3] {
                let perturbed = ControlAction { u: action.u, theta: action.theta + delta };
                assert!(cost_rate(&perturbed, &w, &rho).unwrap() >= base - 1e-12);
            }
        }
    }

    #[test]
    fn hamiltonian_variance_respects_energy_budget() {
        use crate::bounds::dicke_delta_e;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let n = 4;
        let m_t = 2.0;
        let sys = CollectiveSpinSystem::new(n).unwrap();
        let target = sys.dicke_state(m_t).unwrap();
        let budget = dicke_delta_e(1.0, sys.l(), m_t).unwrap();
        let mut op = LocalCostController::optimized_phase(n, m_t, 1.0).unwrap();
        let mut h = ComplexMatrix::zeros(sys.dim());
        for _ in 0..50 {
            let amps: Vec<C64> =
                (0..5).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let rho = pure(amps);
            op.write_hamiltonian(&rho, 0.0, &[], 1e-3, &mut h).unwrap();
            let v = variance(&h, &target).unwrap();
            assert!(v.sqrt() <= budget + 1e-10, "variance {v:e} exceeds budget");
        }
    }

    #[test]
    fn markovian_controller_window_average() {
        let f_op = ComplexMatrix::diagonal(&[1.0, -1.0]);
        let bare = ComplexMatrix::diagonal(&[0.3, 0.3]);
        let mut ctrl = MarkovianController::new(f_op.clone(), 0.2, bare.clone(), 0).unwrap();
        let rho = DensityOperator::maximally_mixed(2);
        let dt = 0.1;
        let mut h = ComplexMatrix::zeros(2);

        // First query: no completed window, bare Hamiltonian.
        ctrl.write_hamiltonian(&rho, 0.0, &[], dt, &mut h).unwrap();
        assert!(h.sub(&bare).unwrap().max_abs_entry() < 1e-15);

        // Two increments complete the first window; the held rate is their
        // average, (0.04 + 0.02) / 0.2 = 0.3.
        ctrl.write_hamiltonian(&rho, 0.1, &[0.04], dt, &mut h).unwrap();
        assert!(h.sub(&bare).unwrap().max_abs_entry() < 1e-15);
        ctrl.write_hamiltonian(&rho, 0.2, &[0.02], dt, &mut h).unwrap();
        let mut expected = bare.clone();
        expected.add_assign_scaled(&f_op, c(0.3, 0.0));
        assert!(h.sub(&expected).unwrap().max_abs_entry() < 1e-12);

        // The held value persists through the next window.
        ctrl.write_hamiltonian(&rho, 0.3, &[-0.5], dt, &mut h).unwrap();
        assert!(h.sub(&expected).unwrap().max_abs_entry() < 1e-12);

        // Zero net signal in a window resets the feedback term.
        ctrl.write_hamiltonian(&rho, 0.4, &[0.5], dt, &mut h).unwrap();
        assert!(h.sub(&bare).unwrap().max_abs_entry() < 1e-12);
    }

    #[test]
    fn markovian_controller_rejects_window_below_dt() {
        let f_op = ComplexMatrix::diagonal(&[1.0, -1.0]);
        let bare = ComplexMatrix::zeros(2);
        let mut ctrl = MarkovianController::new(f_op, 0.05, bare, 0).unwrap();
        let rho = DensityOperator::maximally_mixed(2);
        let mut h = ComplexMatrix::zeros(2);
        assert!(ctrl.write_hamiltonian(&rho, 0.0, &[], 0.1, &mut h).is_err());
    }

    #[test]
    fn markovian_controller_replays_identically() {
        let f_op = ComplexMatrix::diagonal(&[0.7, -0.7]);
        let bare = ComplexMatrix::zeros(2);
        let rho = DensityOperator::maximally_mixed(2);
        let record: Vec<f64> = (0..40).map(|k| ((k * 37 % 11) as f64 - 5.0) * 1e-3).collect();
        let mut seq_a = Vec::new();
        let mut seq_b = Vec::new();
        for seq in [&mut seq_a, &mut seq_b] {
            let mut ctrl = MarkovianController::new(f_op.clone(), 0.05, bare.clone(), 0).unwrap();
            let mut h = ComplexMatrix::zeros(2);
            ctrl.write_hamiltonian(&rho, 0.0, &[], 0.01, &mut h).unwrap();
            for (k, dy) in record.iter().enumerate() {
                ctrl.write_hamiltonian(&rho, (k + 1) as f64 * 0.01, &[*dy], 0.01, &mut h).unwrap();
                seq.push(h.clone());
            }
        }
        for (a, b) in seq_a.iter().zip(&seq_b) {
            assert_eq!(a.entries(), b.entries());
        }
    }
}

//! Analytic fidelity bounds for monitored, feedback-controlled systems.
//!
//! All quantities are evaluated from model data alone (jump operators,
//! target state, control strength); nothing here simulates dynamics. The
//! steady-state bound takes three environment numbers and one Hamiltonian
//! number: the target-leakage rate delta_c_sq, the reentry norm a_star, the
//! cross-term spread b_star, and the control energy spread delta_e.

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigensystem, hermitian_operator_norm, variance, ComplexMatrix, StateVector, C64,
};
use crate::spin::{ladder_coefficient, to_twice_half_integer};
use serde::Serialize;

/// Jump-operator list (rate prefactors absorbed) plus the target state.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    jump_ops: Vec<ComplexMatrix>,
    target: StateVector,
}

impl LindbladModel {
    pub fn new(jump_ops: Vec<ComplexMatrix>, target: StateVector) -> Result<Self> {
        for (j, op) in jump_ops.iter().enumerate() {
            if op.dim() != target.dim() {
                return Err(Error::Dimension(format!(
                    "jump operator {j} has dim {} but target has dim {}",
                    op.dim(),
                    target.dim()
                )));
            }
        }
        Ok(Self { jump_ops, target })
    }

    pub fn jump_ops(&self) -> &[ComplexMatrix] {
        &self.jump_ops
    }

    pub fn target(&self) -> &StateVector {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

/// Inputs to the steady-state fidelity bound; all nonnegative rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub delta_c_sq: f64,
    pub a_star: f64,
    pub b_star: f64,
    pub delta_e: f64,
}

impl BoundInputs {
    pub fn new(delta_c_sq: f64, a_star: f64, b_star: f64, delta_e: f64) -> Result<Self> {
        for (name, v) in [
            ("delta_c_sq", delta_c_sq),
            ("a_star", a_star),
            ("b_star", b_star),
            ("delta_e", delta_e),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(Self { delta_c_sq, a_star, b_star, delta_e })
    }

    /// True when every input vanishes, leaving the fidelity unconstrained.
    pub fn is_degenerate(&self) -> bool {
        self.delta_c_sq == 0.0 && self.a_star == 0.0 && self.b_star == 0.0 && self.delta_e == 0.0
    }
}

/// Evaluated bounds for one model configuration.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub b_qsl: f64,
    pub b_ky: f64,
    pub b_d: Option<f64>,
    pub notes: Vec<String>,
}

/// Slack allowed when checking the analytic bound hierarchy.
pub const HIERARCHY_TOL: f64 = 1e-12;

impl BoundReport {
    /// Assemble a report, enforcing the bound hierarchy.
    pub fn new(inputs: BoundInputs, b_qsl: f64, b_ky: f64, b_d: Option<f64>) -> Result<Self> {
        if b_qsl > b_ky + HIERARCHY_TOL {
            return Err(Error::Numerical(format!(
                "bound hierarchy violated: b_qsl = {b_qsl:.17e} > b_ky = {b_ky:.17e}"
            )));
        }
        if let Some(bd) = b_d {
            if bd > b_qsl + HIERARCHY_TOL {
                return Err(Error::Numerical(format!(
                    "bound hierarchy violated: b_d = {bd:.17e} > b_qsl = {b_qsl:.17e}"
                )));
            }
        }
        let mut notes = vec!["steady-state root of the fidelity-rate inequality".to_string()];
        if inputs.is_degenerate() {
            notes.push("degenerate inputs: no dynamics constrains the fidelity; bound is 1".into());
        }
        Ok(Self { inputs, b_qsl, b_ky, b_d, notes })
    }
}

/// Total leakage rate out of the target: sum of jump-operator variances.
pub fn delta_c_squared(model: &LindbladModel) -> Result<f64> {
    let mut total = 0.0;
    for op in model.jump_ops() {
        total += variance(op, model.target())?;
    }
    Ok(total)
}

fn target_complement_projector(target: &StateVector) -> ComplexMatrix {
    let mut q = ComplexMatrix::identity(target.dim());
    q.add_assign_scaled(&target.projector(), C64::new(-1.0, 0.0));
    q
}

fn reentry_matrix(model: &LindbladModel) -> Result<ComplexMatrix> {
    // X_A = sum_j c_j^dagger |psi><psi| c_j, built from the vectors c_j^dagger psi.
    let mut x = ComplexMatrix::zeros(model.dim());
    for op in model.jump_ops() {
        let w = op.adjoint().apply(model.target().amplitudes())?;
        x = x.add(&ComplexMatrix::outer(&w, &w)?)?;
    }
    Ok(x)
}

/// Largest rate at which decayed population can reenter the target:
/// the operator norm of X_A restricted to the target's complement.
pub fn a_star(model: &LindbladModel) -> Result<f64> {
    let q = target_complement_projector(model.target());
    let m = q.mul(&reentry_matrix(model)?)?.mul(&q)?;
    let (eigenvalues, _) = hermitian_eigensystem(&m)?;
    Ok(eigenvalues.first().copied().unwrap_or(0.0).max(0.0))
}

/// Spread of the drift operator X_B = sum_j (2 c_j^dagger |psi><psi| c_j - c_j^dagger c_j)
/// in the target state.
pub fn b_star(model: &LindbladModel) -> Result<f64> {
    let mut x = reentry_matrix(model)?.scaled(C64::new(2.0, 0.0));
    for op in model.jump_ops() {
        x.add_assign_scaled(&op.adjoint().mul(op)?, C64::new(-1.0, 0.0));
    }
    x.hermitize();
    Ok(variance(&x, model.target())?.sqrt())
}

/// Steady-state fidelity bound: the stable root of the fidelity-rate
/// inequality, clamped to [0, 1]. All-zero inputs return 1.
pub fn qsl_bound(inputs: &BoundInputs) -> f64 {
    let a = inputs.a_star;
    let d = inputs.delta_c_sq;
    let s = inputs.b_star + 2.0 * inputs.delta_e;
    let den = 2.0 * ((a + d).powi(2) + s * s);
    if den == 0.0 {
        return 1.0;
    }
    let num = 2.0 * a * (a + d) + s * (s + (4.0 * a * d + s * s).sqrt());
    (num / den).clamp(0.0, 1.0)
}

/// Instantaneous upper bound on the average-fidelity rate at fidelity `f`.
pub fn qsl_fidelity_rate(f: f64, inputs: &BoundInputs) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Domain(format!("fidelity {f} outside [0, 1]")));
    }
    let s = inputs.b_star + 2.0 * inputs.delta_e;
    Ok(s * (f - f * f).max(0.0).sqrt() - f * inputs.delta_c_sq + (1.0 - f) * inputs.a_star)
}

/// Looser steady-state bound obtained from the Cauchy-Schwarz fidelity-rate
/// inequality; always at or above `qsl_bound` for the same model.
pub fn ky_bound(model: &LindbladModel, delta_e: f64) -> Result<f64> {
    let d = delta_c_squared(model)?;
    let mut k = 0.0;
    for op in model.jump_ops() {
        let psi = model.target().amplitudes();
        let up = op.adjoint().apply(psi)?;
        let mean_cc_dag: f64 = up.iter().map(|z| z.norm_sqr()).sum();
        let number_op_psi = op.adjoint().mul(op)?.apply(psi)?;
        let mean_number_sq: f64 = number_op_psi.iter().map(|z| z.norm_sqr()).sum();
        k += mean_cc_dag + mean_number_sq.sqrt();
    }
    let den = 2.0 * delta_e + std::f64::consts::SQRT_2 * k;
    if den == 0.0 {
        return Ok(if d > 0.0 { 0.0 } else { 1.0 });
    }
    let s = d / den;
    Ok((1.0 - s * s).clamp(0.0, 1.0))
}

/// Energy spread of a strength-limited collective drive at the target level.
pub fn dicke_delta_e(u_max: f64, l_t: f64, m_t: f64) -> Result<f64> {
    if u_max < 0.0 || !u_max.is_finite() {
        return Err(Error::Domain(format!("u_max = {u_max} must be finite and >= 0")));
    }
    let twice_l = to_twice_half_integer(l_t, "l_t")?;
    let twice_m = to_twice_half_integer(m_t, "m_t")?;
    if twice_m.abs() > twice_l {
        return Err(Error::Domain(format!("m_t = {m_t} outside [-{l_t}, {l_t}]")));
    }
    Ok(u_max / 2f64.sqrt() * (l_t * (l_t + 1.0) - m_t * m_t).sqrt())
}

/// Level-resolved steady-state bound for collective-spin targets under a
/// strength-limited linear drive.
pub fn dicke_bound(l_t: f64, m_t: f64, gamma: f64, u_max: f64) -> Result<f64> {
    let twice_l = to_twice_half_integer(l_t, "l_t")?;
    let twice_m = to_twice_half_integer(m_t, "m_t")?;
    if twice_m.abs() > twice_l || (twice_l - twice_m) % 2 != 0 {
        return Err(Error::Domain(format!("m_t = {m_t} is not a level of the l = {l_t} ladder")));
    }
    if gamma < 0.0 {
        return Err(Error::Domain(format!("gamma = {gamma} must be >= 0")));
    }
    if gamma == 0.0 || twice_m == -twice_l {
        return Ok(1.0);
    }
    if u_max <= 0.0 {
        return Ok(0.0);
    }
    let ratio = gamma / u_max;
    // sum over m from -l to m_T - 1 of prod_{k=m}^{m_T-1} (h_k * ratio)^2,
    // accumulated from the top so each term extends the running product.
    let mut sum = 0.0;
    let mut product = 1.0;
    let mut twice_k = twice_m - 2;
    while twice_k >= -twice_l {
        let h = ladder_coefficient(l_t, twice_k as f64 / 2.0)?;
        product *= (h * ratio).powi(2);
        sum += product;
        twice_k -= 2;
    }
    Ok((1.0 / (1.0 + sum)).clamp(0.0, 1.0))
}

/// Analytic bound inputs for the standard collective-spin monitoring model
/// (dispersive z monitoring plus collective damping, target |l_t, m_t>).
pub fn dicke_inputs(l_t: f64, m_t: f64, gamma: f64, u_max: f64) -> Result<BoundInputs> {
    let twice_l = to_twice_half_integer(l_t, "l_t")?;
    let twice_m = to_twice_half_integer(m_t, "m_t")?;
    if twice_m.abs() > twice_l {
        return Err(Error::Domain(format!("m_t = {m_t} outside [-{l_t}, {l_t}]")));
    }
    let leak = if twice_m == -twice_l {
        0.0
    } else {
        gamma * ladder_coefficient(l_t, m_t - 1.0)?.powi(2)
    };
    let reentry = gamma * ladder_coefficient(l_t, m_t)?.powi(2);
    BoundInputs::new(leak, reentry, 0.0, dicke_delta_e(u_max, l_t, m_t)?)
}

/// Effective energy spread available to finite-window photocurrent feedback.
pub fn markovian_effective_delta_e(
    delta_f: f64,
    jump_op: &ComplexMatrix,
    window: f64,
) -> Result<f64> {
    if window <= 0.0 || !window.is_finite() {
        return Err(Error::Domain(format!("window = {window} must be positive")));
    }
    let mut quadrature = jump_op.add(&jump_op.adjoint())?;
    quadrature.hermitize();
    let opnorm = hermitian_operator_norm(&quadrature)?;
    Ok((opnorm + 1.0 / window.sqrt()) * delta_f)
}

/// Largest measurement window for which the finite-window correction stays
/// below a fraction epsilon of the leakage rate; infinite when there is no
/// leakage to fight.
pub fn markovian_window_limit(epsilon: f64, delta_f: f64, delta_c_sq: f64) -> f64 {
    if delta_c_sq == 0.0 {
        return f64::INFINITY;
    }
    epsilon * (2.0 * delta_f / delta_c_sq).powi(2)
}

/// Average Hamiltonian strength that photocurrent feedback must sustain.
pub fn markovian_strength_limit(epsilon: f64, delta_c_sq: f64) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Domain(format!("epsilon = {epsilon} must be > 0")));
    }
    Ok((2.0 / (std::f64::consts::PI * epsilon)).sqrt() * delta_c_sq)
}

/// Closed-form lower bound on the steady-state infidelity of window-averaged
/// photocurrent feedback stabilizing a damped qubit.
pub fn markovian_qubit_infidelity_bound(gamma: f64, window: f64) -> f64 {
    let g = (gamma * window).max(0.0);
    if g == 0.0 {
        return 0.0;
    }
    g / (4.0 + 8.0 * g.sqrt() + 5.0 * g)
}

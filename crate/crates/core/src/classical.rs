//! Classical population dynamics on a truncated spin ladder.
//!
//! Under phase-aligned control at full strength, the level populations
//! a_m (m = -l .. m_T, nothing above the target is kept) close on
//! themselves and obey the Ito system
//!
//!   da_m = (T_m - T_{m-1}) dt + dS_m,
//!   T_m  = -u_max sqrt(a_m a_{m+1}) h_m + gamma a_{m+1} h_m^2,
//!   dS_m = sqrt(2 gamma) (sqrt(a_m a_{m+1}) h_m - a_m |<J->|) dw_-
//!        + 2 sqrt(kappa) a_m (m - <Jz>) dw_z,
//!
//! with h_m the ladder coefficient, |<J->| = sum_{k<m_T} sqrt(a_k a_{k+1}) h_k
//! and <Jz> = sum_k a_k k. T_m is the net downhill flux across the edge
//! (m, m+1): the damping term feeds level m, the control term pumps
//! population up toward the target at m_T. The equations contain no control
//! phase: the phase has been optimized out, which is why the API has no
//! phase parameter anywhere.
//!
//! The ergodic average of the target population a_{m_T} estimates the
//! stochastic preparation limit for Dicke targets.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, NoiseStreams, PURPOSE_INITIAL_STATE};
use crate::spin::{ladder_coefficient, to_twice_half_integer};
use rand::Rng;
use rayon::prelude::*;

/// Populations on the ladder levels m = -l_t .. m_t, stored ascending in m
/// (index 0 is the bottom level, the last index is the target).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    twice_l: i64,
    twice_m_t: i64,
    a: Vec<f64>,
}

/// How the population vector is seeded at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPopulation {
    /// Squared amplitudes of an equatorial coherent spin state, truncated to
    /// the kept levels and renormalized (the default).
    TruncatedCoherent,
    /// Equal weight on every kept level.
    Uniform,
    /// A coherent-state profile with a polar angle drawn per realization
    /// (uniform in cos(theta)), truncated and renormalized.
    RandomCoherent,
}

impl PopulationState {
    pub fn new(l_t: f64, m_t: f64, a: Vec<f64>) -> Result<Self> {
        let twice_l = to_twice_half_integer(l_t, "l_t")?;
        let twice_m_t = to_twice_half_integer(m_t, "m_t")?;
        if twice_m_t.abs() > twice_l || (twice_l - twice_m_t) % 2 != 0 {
            return Err(Error::Domain(format!(
                "m_t = {m_t} is not a level of the l = {l_t} ladder"
            )));
        }
        let len = ((twice_l + twice_m_t) / 2 + 1) as usize;
        if a.len() != len {
            return Err(Error::Dimension(format!(
                "{} populations for {len} levels (m = {} .. {})",
                a.len(),
                -l_t,
                m_t
            )));
        }
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain("populations must be finite and >= 0".into()));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("population sum {sum} differs from 1 beyond 1e-9")));
        }
        let mut state = Self { twice_l, twice_m_t, a };
        state.renormalize();
        Ok(state)
    }

    /// Equal weight on every kept level.
    pub fn uniform(l_t: f64, m_t: f64) -> Result<Self> {
        let twice_l = to_twice_half_integer(l_t, "l_t")?;
        let twice_m_t = to_twice_half_integer(m_t, "m_t")?;
        let len = ((twice_l + twice_m_t) / 2 + 1) as usize;
        Self::new(l_t, m_t, vec![1.0 / len as f64; len])
    }

    /// Coherent-state profile at polar angle theta, truncated to m <= m_t and
    /// renormalized: kept weights are proportional to
    /// C(2l, l-m) cos^{2(l+m)}(theta/2) sin^{2(l-m)}(theta/2).
    pub fn coherent(l_t: f64, m_t: f64, theta: f64) -> Result<Self> {
        let twice_l = to_twice_half_integer(l_t, "l_t")?;
        let twice_m_t = to_twice_half_integer(m_t, "m_t")?;
        if twice_m_t.abs() > twice_l || (twice_l - twice_m_t) % 2 != 0 {
            return Err(Error::Domain(format!(
                "m_t = {m_t} is not a level of the l = {l_t} ladder"
            )));
        }
        let n = twice_l as usize;
        let half = 0.5 * theta;
        let (c2, s2) = (half.cos().powi(2), half.sin().powi(2));
        // Log-space weights survive the extreme angles where cos^{2n} or
        // sin^{2n} underflows. Walk k = l - m from the top; keep m <= m_t.
        let power = |base: f64, count: usize| -> f64 {
            if count == 0 {
                0.0
            } else {
                count as f64 * base.ln()
            }
        };
        let mut log_binom = 0.0;
        let mut kept = Vec::new();
        for k in 0..=n {
            let m_twice = twice_l - 2 * k as i64;
            if m_twice <= twice_m_t {
                kept.push(log_binom + power(c2, n - k) + power(s2, k));
            }
            if k < n {
                log_binom += ((n - k) as f64 / (k + 1) as f64).ln();
            }
        }
        kept.reverse();
        let peak = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Numerical(format!(
                "coherent profile at theta = {theta} has no weight below m_t = {m_t}"
            )));
        }
        let mut weights: Vec<f64> = kept.iter().map(|lw| (lw - peak).exp()).collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        let mut state = Self { twice_l, twice_m_t, a: weights };
        state.renormalize();
        Ok(state)
    }

    /// The default initial condition: equatorial coherent profile.
    pub fn truncated_coherent(l_t: f64, m_t: f64) -> Result<Self> {
        Self::coherent(l_t, m_t, std::f64::consts::FRAC_PI_2)
    }

    pub fn l_t(&self) -> f64 {
        self.twice_l as f64 / 2.0
    }

    pub fn m_t(&self) -> f64 {
        self.twice_m_t as f64 / 2.0
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn populations(&self) -> &[f64] {
        &self.a
    }

    /// Population of the target level m_t.
    pub fn target_population(&self) -> f64 {
        *self.a.last().expect("at least one level")
    }

    /// Level value at a storage index (ascending from -l_t).
    pub fn m_of_index(&self, index: usize) -> f64 {
        (self.twice_l as f64) / -2.0 + index as f64
    }

    pub fn index_of_m(&self, m: f64) -> Result<usize> {
        let twice_m = to_twice_half_integer(m, "m")?;
        if twice_m < -self.twice_l || twice_m > self.twice_m_t
            || (twice_m + self.twice_l) % 2 != 0
        {
            return Err(Error::Domain(format!(
                "m = {m} outside the kept levels {} .. {}",
                -self.l_t(),
                self.m_t()
            )));
        }
        Ok(((twice_m + self.twice_l) / 2) as usize)
    }

    /// <Jz> = sum_m a_m m over the kept levels.
    pub fn mean_jz(&self) -> f64 {
        self.a.iter().enumerate().map(|(i, a)| a * self.m_of_index(i)).sum()
    }

    /// |<J->| = sum_{m < m_t} sqrt(a_m a_{m+1}) h_m under phase alignment.
    pub fn lowering_magnitude(&self) -> f64 {
        let l = self.l_t();
        (0..self.a.len().saturating_sub(1))
            .map(|i| {
                let h = ladder_coefficient(l, self.m_of_index(i)).expect("kept level");
                (self.a[i] * self.a[i + 1]).sqrt() * h
            })
            .sum()
    }

    fn renormalize(&mut self) {
        let sum: f64 = self.a.iter().sum();
        if sum > 0.0 {
            for x in &mut self.a {
                *x /= sum;
            }
        }
    }
}

/// Rates, grid, and ensemble parameters for the classical SDE.
#[derive(Debug, Clone)]
pub struct ClassicalConfig {
    pub gamma: f64,
    pub kappa: f64,
    pub u_max: f64,
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
    /// Curve recording cadence.
    pub record_stride: usize,
    pub initial: InitialPopulation,
}

impl ClassicalConfig {
    pub fn new(
        gamma: f64,
        kappa: f64,
        u_max: f64,
        dt: f64,
        t_final: f64,
        n_realizations: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            gamma,
            kappa,
            u_max,
            dt,
            t_final,
            burn_in: 0.5 * t_final,
            n_realizations,
            master_seed,
            record_stride: 1,
            initial: InitialPopulation::TruncatedCoherent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("gamma", self.gamma), ("kappa", self.kappa), ("u_max", self.u_max)] {
            if rate < 0.0 || !rate.is_finite() {
                return Err(Error::Domain(format!("{name} = {rate} must be finite and >= 0")));
            }
        }
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
        if self.n_realizations == 0 {
            return Err(Error::Domain("n_realizations must be positive".into()));
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

/// Net flux T_m across the edge (m, m+1): positive values feed level m.
pub fn transfer_rate(a: &PopulationState, m: f64, gamma: f64, u_max: f64) -> Result<f64> {
    let i = a.index_of_m(m)?;
    if i + 1 >= a.len() {
        return Err(Error::Domain(format!(
            "transfer rate needs the edge (m, m+1); m = {m} is the top kept level"
        )));
    }
    let h = ladder_coefficient(a.l_t(), m)?;
    let pops = a.populations();
    Ok(-u_max * (pops[i] * pops[i + 1]).sqrt() * h + gamma * pops[i + 1] * h * h)
}

/// Measurement-noise increment dS_m for level m given the Wiener increments
/// (dw_minus, dw_z). The increments sum to zero over all levels.
pub fn stochastic_increment(
    a: &PopulationState,
    m: f64,
    gamma: f64,
    kappa: f64,
    noises: (f64, f64),
) -> Result<f64> {
    let i = a.index_of_m(m)?;
    let (dw_minus, dw_z) = noises;
    let pops = a.populations();
    let up_coherence = if i + 1 < a.len() {
        (pops[i] * pops[i + 1]).sqrt() * ladder_coefficient(a.l_t(), m)?
    } else {
        0.0
    };
    let damping_part = (2.0 * gamma).sqrt() * (up_coherence - pops[i] * a.lowering_magnitude());
    let dephasing_part = 2.0 * kappa.sqrt() * pops[i] * (m - a.mean_jz());
    Ok(damping_part * dw_minus + dephasing_part * dw_z)
}

/// Shared per-step update. Returns the magnitude of the largest negative
/// excursion clamped away (0 when no clamping happened).
fn step_core(
    a: &mut PopulationState,
    gamma: f64,
    kappa: f64,
    u_max: f64,
    dt: f64,
    noises: (f64, f64),
) -> Result<f64> {
    let n = a.a.len();
    let l = a.l_t();
    let (dw_minus, dw_z) = noises;
    let jm = a.lowering_magnitude();
    let jz = a.mean_jz();
    let sqrt_2g = (2.0 * gamma).sqrt();
    let sqrt_k2 = 2.0 * kappa.sqrt();

    // Edge fluxes T at edges (index i, i+1); boundaries carry no flux.
    let mut edges = vec![0.0; n.saturating_sub(1)];
    for (i, edge) in edges.iter_mut().enumerate() {
        let h = ladder_coefficient(l, a.m_of_index(i))?;
        *edge = -u_max * (a.a[i] * a.a[i + 1]).sqrt() * h + gamma * a.a[i + 1] * h * h;
    }

    let mut clamp = 0.0f64;
    let mut updated = Vec::with_capacity(n);
    for i in 0..n {
        let inflow = if i < n - 1 { edges[i] } else { 0.0 };
        let outflow = if i > 0 { edges[i - 1] } else { 0.0 };
        let up_coherence = if i + 1 < n {
            (a.a[i] * a.a[i + 1]).sqrt() * ladder_coefficient(l, a.m_of_index(i))?
        } else {
            0.0
        };
        let ds = sqrt_2g * (up_coherence - a.a[i] * jm) * dw_minus
            + sqrt_k2 * a.a[i] * (a.m_of_index(i) - jz) * dw_z;
        let mut next = a.a[i] + (inflow - outflow) * dt + ds;
        if !next.is_finite() {
            return Err(Error::Numerical(format!(
                "population {i} became {next} during a classical step"
            )));
        }
        if next < 0.0 {
            clamp = clamp.max(-next);
            next = 0.0;
        }
        updated.push(next);
    }
    let sum: f64 = updated.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::Numerical(format!(
            "population sum became {sum} during a classical step"
        )));
    }
    for x in &mut updated {
        *x /= sum;
    }
    a.a = updated;
    Ok(clamp)
}

/// One Euler-Maruyama update of the population vector, with negatives
/// clamped to zero and the total renormalized to one.
pub fn classical_step(
    a: &PopulationState,
    config: &ClassicalConfig,
    noises: (f64, f64),
) -> Result<PopulationState> {
    config.validate()?;
    let mut next = a.clone();
    step_core(&mut next, config.gamma, config.kappa, config.u_max, config.dt, noises)?;
    Ok(next)
}

/// Ergodic estimate of the stochastic preparation limit for the target level.
#[derive(Debug, Clone)]
pub struct BdsEstimate {
    /// Time-and-realization average of the target population after burn-in.
    pub bds: f64,
    /// Standard error across realizations (the independent unit).
    pub stderr: f64,
    /// Mean target population over realizations on the recorded grid.
    pub curve: Vec<f64>,
    /// Standard error of the curve across realizations, per recorded point.
    pub curve_stderr: Vec<f64>,
    pub times: Vec<f64>,
    /// Largest negative excursion removed by clamping, over all steps.
    pub max_clamp: f64,
    pub n_realizations: usize,
}

fn initial_population(
    config: &ClassicalConfig,
    l_t: f64,
    m_t: f64,
    stream_id: u64,
) -> Result<PopulationState> {
    match config.initial {
        InitialPopulation::TruncatedCoherent => PopulationState::truncated_coherent(l_t, m_t),
        InitialPopulation::Uniform => PopulationState::uniform(l_t, m_t),
        InitialPopulation::RandomCoherent => {
            let mut rng = stream_rng(config.master_seed, stream_id, PURPOSE_INITIAL_STATE);
            let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
            PopulationState::coherent(l_t, m_t, cos_theta.acos())
        }
    }
}

/// Run the classical ensemble and average the target population ergodically.
pub fn estimate_bds(config: &ClassicalConfig, l_t: f64, m_t: f64) -> Result<BdsEstimate> {
    config.validate()?;
    if config.n_realizations < 2 {
        return Err(Error::Domain("ensemble statistics need at least 2 realizations".into()));
    }
    let n_steps = config.n_steps();
    let stride = config.record_stride;
    let burn_in_edge = config.burn_in - 0.5 * config.dt;

    let per_realization: Vec<(Vec<f64>, f64, f64)> = (0..config.n_realizations as u64)
        .into_par_iter()
        .map(|stream_id| {
            let mut state = initial_population(config, l_t, m_t, stream_id)?;
            let mut noise = NoiseStreams::new(config.master_seed, stream_id, 2, config.dt);
            let mut draws = [0.0; 2];
            let mut curve = Vec::with_capacity(n_steps / stride + 2);
            let mut steady_sum = 0.0;
            let mut steady_count = 0usize;
            let mut max_clamp = 0.0f64;
            for k in 0..=n_steps {
                let t = k as f64 * config.dt;
                let target = state.target_population();
                if k % stride == 0 || k == n_steps {
                    curve.push(target);
                }
                if t >= burn_in_edge {
                    steady_sum += target;
                    steady_count += 1;
                }
                if k == n_steps {
                    break;
                }
                noise.draw(&mut draws);
                let clamp = step_core(
                    &mut state,
                    config.gamma,
                    config.kappa,
                    config.u_max,
                    config.dt,
                    (draws[0], draws[1]),
                )
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!(
                        "{msg} (t = {t}, realization {stream_id})"
                    )),
                    other => other,
                })?;
                max_clamp = max_clamp.max(clamp);
            }
            let mean = if steady_count > 0 { steady_sum / steady_count as f64 } else { 0.0 };
            Ok((curve, mean, max_clamp))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_realization.len();
    let n_points = per_realization[0].0.len();
    let mut curve = vec![0.0; n_points];
    let mut curve_sq = vec![0.0; n_points];
    for (c, _, _) in &per_realization {
        for (i, v) in c.iter().enumerate() {
            curve[i] += v;
            curve_sq[i] += v * v;
        }
    }
    for v in &mut curve {
        *v /= n as f64;
    }
    let curve_stderr: Vec<f64> = curve
        .iter()
        .zip(&curve_sq)
        .map(|(m, sq)| {
            let var = (sq - n as f64 * m * m).max(0.0) / (n - 1) as f64;
            (var / n as f64).sqrt()
        })
        .collect();
    let times: Vec<f64> = (0..=n_steps)
        .filter(|k| k % stride == 0 || *k == n_steps)
        .map(|k| k as f64 * config.dt)
        .collect();

    let means: Vec<f64> = per_realization.iter().map(|(_, m, _)| *m).collect();
    let bds = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|m| (m - bds) * (m - bds)).sum::<f64>() / (n - 1) as f64;
    let stderr = var.sqrt() / (n as f64).sqrt();
    let max_clamp = per_realization.iter().map(|(_, _, c)| *c).fold(0.0, f64::max);

    Ok(BdsEstimate { bds, stderr, curve, curve_stderr, times, max_clamp, n_realizations: n })
}

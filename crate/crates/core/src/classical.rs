//! Classical three-oscillator system, its reduction by the total action K,
//! Poincare sections in the psi1 = 0 plane and periodic orbits.
//!
//! Trajectories are propagated in the amplitude variables of [`crate::meanfield`],
//! which stay regular where a well empties. The amplitude flow i dc/dt = dH/dc*
//! turns arg c_k at -dH/dI_k, so the canonical angle is phi_k = -arg c_k.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix4, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::ModelParams;
use crate::meanfield::{self, AmplitudeState};
use crate::ode::{integrate_sampled, single_step, Dopri5, OdeError, Tolerances};
use crate::optimize::nelder_mead;
use crate::torusfield::principal;

/// Actions at or below this value are treated as the coordinate boundary.
pub const ACTION_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ClassicalError {
    #[error("state outside the physical domain: {0}")]
    Domain(String),
    #[error("action {0:e} at the coordinate boundary")]
    SingularBoundary(f64),
    #[error("no J1 reaches E={energy} at psi2={psi2}, J2={j2}")]
    NoRoot { energy: f64, psi2: f64, j2: f64 },
    #[error("shooting did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub phi: [f64; 3],
    pub action: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub psi1: f64,
    pub psi2: f64,
    pub j1: f64,
    pub j2: f64,
    pub k_total: f64,
}

impl ReducedState {
    /// Action of well 2, K - J1 - J2.
    pub fn j_mid(&self) -> f64 {
        self.k_total - self.j1 - self.j2
    }

    fn check(&self) -> Result<(), ClassicalError> {
        let lowest = self.j1.min(self.j2).min(self.j_mid());
        if !(lowest > ACTION_FLOOR) {
            return Err(ClassicalError::SingularBoundary(lowest));
        }
        Ok(())
    }
}

/// Zero-point energy H0(1/2, 1/2, 1/2).
pub fn zero_point(params: &ModelParams) -> f64 {
    (0..3)
        .map(|j| 0.5 * params.omega[j] + 0.25 * params.x[j])
        .sum()
}

pub fn h_full(state: &FullState, params: &ModelParams) -> Result<f64, ClassicalError> {
    let i = state.action;
    if i.iter().any(|&a| a < 0.0 || !a.is_finite()) {
        return Err(ClassicalError::Domain(format!("actions {i:?}")));
    }
    let p = &state.phi;
    let h0: f64 = (0..3)
        .map(|j| params.omega[j] * i[j] + params.x[j] * i[j] * i[j])
        .sum();
    Ok(h0
        - params.k12 * (i[0] * i[1]).sqrt() * (p[0] - p[1]).cos()
        - params.k23 * (i[1] * i[2]).sqrt() * (p[2] - p[1]).cos())
}

fn h_reduced_raw(s: &ReducedState, params: &ModelParams) -> f64 {
    let (o, x) = (&params.omega, &params.x);
    let jm = s.j_mid().max(0.0);
    o[0] * s.j1 + o[1] * jm + o[2] * s.j2 + x[0] * s.j1 * s.j1 + x[1] * jm * jm + x[2] * s.j2 * s.j2
        - params.k12 * (s.j1.max(0.0) * jm).sqrt() * s.psi1.cos()
        - params.k23 * (s.j2.max(0.0) * jm).sqrt() * s.psi2.cos()
}

/// Reduced Hamiltonian; with `zero_point_shifted` the zero-point energy is subtracted.
pub fn h_reduced(
    state: &ReducedState,
    params: &ModelParams,
    zero_point_shifted: bool,
) -> Result<f64, ClassicalError> {
    if state.j1 < 0.0 || state.j2 < 0.0 || state.j_mid() < 0.0 {
        return Err(ClassicalError::Domain(format!("{state:?}")));
    }
    let shift = if zero_point_shifted {
        zero_point(params)
    } else {
        0.0
    };
    Ok(h_reduced_raw(state, params) - shift)
}

pub fn reduce(state: &FullState) -> ReducedState {
    let p = &state.phi;
    ReducedState {
        psi1: (p[0] - p[1]).rem_euclid(TAU),
        psi2: (p[2] - p[1]).rem_euclid(TAU),
        j1: state.action[0],
        j2: state.action[2],
        k_total: state.action.iter().sum(),
    }
}

/// dtheta/dt = dH/dK at fixed (psi, J).
pub fn dtheta_dt(s: &ReducedState, params: &ModelParams) -> Result<f64, ClassicalError> {
    s.check()?;
    let jm = s.j_mid();
    Ok(params.omega[1] + 2.0 * params.x[1] * jm
        - 0.5 * params.k12 * (s.j1 / jm).sqrt() * s.psi1.cos()
        - 0.5 * params.k23 * (s.j2 / jm).sqrt() * s.psi2.cos())
}

/// Reduced equations of motion, ordered (psi1, psi2, J1, J2).
pub fn eom_reduced(s: &ReducedState, params: &ModelParams) -> Result<[f64; 4], ClassicalError> {
    s.check()?;
    let (o, x) = (&params.omega, &params.x);
    let jm = s.j_mid();
    let mid = o[1] + 2.0 * x[1] * jm;
    let (c1, c2) = (s.psi1.cos(), s.psi2.cos());
    let dpsi1 = o[0] + 2.0 * x[0] * s.j1
        - mid
        - 0.5 * params.k12 * ((jm / s.j1).sqrt() - (s.j1 / jm).sqrt()) * c1
        + 0.5 * params.k23 * (s.j2 / jm).sqrt() * c2;
    let dpsi2 = o[2] + 2.0 * x[2] * s.j2
        - mid
        - 0.5 * params.k23 * ((jm / s.j2).sqrt() - (s.j2 / jm).sqrt()) * c2
        + 0.5 * params.k12 * (s.j1 / jm).sqrt() * c1;
    let dj1 = -params.k12 * (s.j1 * jm).sqrt() * s.psi1.sin();
    let dj2 = -params.k23 * (s.j2 * jm).sqrt() * s.psi2.sin();
    Ok([dpsi1, dpsi2, dj1, dj2])
}

/// Amplitudes with theta = 0.
pub fn to_amplitudes(s: &ReducedState) -> AmplitudeState {
    AmplitudeState {
        c: [
            Complex64::from_polar(s.j1.max(0.0).sqrt(), -s.psi1),
            Complex64::new(s.j_mid().max(0.0).sqrt(), 0.0),
            Complex64::from_polar(s.j2.max(0.0).sqrt(), -s.psi2),
        ],
    }
}

pub fn from_amplitudes(a: &AmplitudeState) -> ReducedState {
    let c = &a.c;
    ReducedState {
        psi1: (c[0].conj() * c[1]).arg().rem_euclid(TAU),
        psi2: (c[2].conj() * c[1]).arg().rem_euclid(TAU),
        j1: c[0].norm_sqr(),
        j2: c[2].norm_sqr(),
        k_total: a.norm2(),
    }
}

pub fn full_from_amplitudes(a: &AmplitudeState) -> FullState {
    FullState {
        phi: a.c.map(|c| (-c.arg()).rem_euclid(TAU)),
        action: a.actions(),
    }
}

/// omega_j + 2 x_j I_j.
pub fn effective_frequencies(actions: [f64; 3], params: &ModelParams) -> [f64; 3] {
    [0, 1, 2].map(|j| params.omega[j] + 2.0 * params.x[j] * actions[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub tol: Tolerances,
    pub sample_dt: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            sample_dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedTrajectory {
    pub t: Vec<f64>,
    pub states: Vec<ReducedState>,
    /// Energy with the zero point subtracted.
    pub energy: Vec<f64>,
}

fn trajectory_from(
    t: Vec<f64>,
    amps: &[AmplitudeState],
    params: &ModelParams,
) -> ReducedTrajectory {
    let zp = zero_point(params);
    let energy = amps
        .iter()
        .map(|a| meanfield::hamiltonian(a, params) - zp)
        .collect();
    ReducedTrajectory {
        t,
        states: amps.iter().map(from_amplitudes).collect(),
        energy,
    }
}

pub fn integrate(
    state0: &ReducedState,
    params: &ModelParams,
    t_end: f64,
    opts: &IntegrationOptions,
) -> Result<ReducedTrajectory, ClassicalError> {
    state0.check()?;
    let f = meanfield::real_field(params);
    let (t, ys) = integrate_sampled(
        &f,
        0.0,
        to_amplitudes(state0).to_real(),
        t_end,
        opts.sample_dt,
        opts.tol,
    )?;
    let amps: Vec<AmplitudeState> = ys.iter().map(AmplitudeState::from_real).collect();
    Ok(trajectory_from(t, &amps, params))
}

/// Integrate the singular reduced equations directly; for interior cross-checks.
pub fn integrate_direct(
    state0: &ReducedState,
    params: &ModelParams,
    t_end: f64,
    opts: &IntegrationOptions,
) -> Result<ReducedTrajectory, ClassicalError> {
    let k = state0.k_total;
    let f = move |_t: f64, y: &[f64; 4]| -> Result<[f64; 4], String> {
        let s = ReducedState {
            psi1: y[0],
            psi2: y[1],
            j1: y[2],
            j2: y[3],
            k_total: k,
        };
        eom_reduced(&s, params).map_err(|e| e.to_string())
    };
    let y0 = [state0.psi1, state0.psi2, state0.j1, state0.j2];
    let (t, ys) = integrate_sampled(&f, 0.0, y0, t_end, opts.sample_dt, opts.tol)?;
    let zp = zero_point(params);
    let states: Vec<ReducedState> = ys
        .iter()
        .map(|y| ReducedState {
            psi1: y[0],
            psi2: y[1],
            j1: y[2],
            j2: y[3],
            k_total: k,
        })
        .collect();
    let energy = states
        .iter()
        .map(|s| h_reduced_raw(s, params) - zp)
        .collect();
    Ok(ReducedTrajectory { t, states, energy })
}

/// Rebuild the full trajectory: theta(t) by trapezoidal quadrature of dH/dK,
/// then phi = (psi1 + theta, theta, psi2 + theta), I = (J1, K - J1 - J2, J2).
pub fn lift(
    traj: &ReducedTrajectory,
    theta0: f64,
    params: &ModelParams,
) -> Result<Vec<FullState>, ClassicalError> {
    let mut out = Vec::with_capacity(traj.states.len());
    let mut theta = theta0;
    let mut prev_rate = None;
    for (i, s) in traj.states.iter().enumerate() {
        let rate = dtheta_dt(s, params)?;
        if let Some(r0) = prev_rate {
            theta += 0.5 * (r0 + rate) * (traj.t[i] - traj.t[i - 1]);
        }
        prev_rate = Some(rate);
        out.push(FullState {
            phi: [
                (s.psi1 + theta).rem_euclid(TAU),
                theta.rem_euclid(TAU),
                (s.psi2 + theta).rem_euclid(TAU),
            ],
            action: [s.j1, s.j_mid(), s.j2],
        });
    }
    Ok(out)
}

/// A point on the psi1 = 0 plane at the requested energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seed {
    pub state: ReducedState,
    /// All J1 roots at this (psi2, J2) with dpsi1/dt > 0, ascending.
    pub roots: Vec<f64>,
    /// Index into `roots` of the root used.
    pub branch: usize,
}

const SEED_SAMPLES: usize = 1000;

/// Solve H(0, psi2, J1, J2) = energy (zero point subtracted) for J1 with dpsi1/dt > 0.
///
/// When several roots qualify the one closest to `previous_root` is used, or
/// the smallest root if none is given.
pub fn poincare_seed(
    psi2: f64,
    j2: f64,
    energy: f64,
    params: &ModelParams,
    previous_root: Option<f64>,
) -> Result<Seed, ClassicalError> {
    let k = params.k_total();
    let no_root = ClassicalError::NoRoot { energy, psi2, j2 };
    let hi = k - j2 - ACTION_FLOOR;
    if !(j2 > ACTION_FLOOR) || hi <= ACTION_FLOOR {
        return Err(no_root);
    }
    let zp = zero_point(params);
    let at = |j1: f64| ReducedState {
        psi1: 0.0,
        psi2,
        j1,
        j2,
        k_total: k,
    };
    let g = |j1: f64| h_reduced_raw(&at(j1), params) - zp - energy;
    let mut roots = Vec::new();
    let lo = ACTION_FLOOR;
    let mut x0 = lo;
    let mut g0 = g(x0);
    for i in 1..=SEED_SAMPLES {
        let x1 = lo + (hi - lo) * i as f64 / SEED_SAMPLES as f64;
        let g1 = g(x1);
        if g0 == 0.0 || g0.signum() != g1.signum() {
            let (mut a, mut b, mut ga) = (x0, x1, g0);
            while b - a > 1e-12 * b.max(1.0) {
                let m = 0.5 * (a + b);
                let gm = g(m);
                if gm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if gm.signum() == ga.signum() {
                    a = m;
                    ga = gm;
                } else {
                    b = m;
                }
            }
            let r = 0.5 * (a + b);
            if eom_reduced(&at(r), params)
                .map(|d| d[0] > 0.0)
                .unwrap_or(false)
            {
                roots.push(r);
            }
        }
        x0 = x1;
        g0 = g1;
    }
    if roots.is_empty() {
        return Err(no_root);
    }
    let branch = match previous_root {
        Some(p) => (0..roots.len())
            .min_by(|&a, &b| (roots[a] - p).abs().total_cmp(&(roots[b] - p).abs()))
            .unwrap(),
        None => 0,
    };
    Ok(Seed {
        state: at(roots[branch]),
        roots,
        branch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub seed_id: usize,
    pub t: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub j1: f64,
    pub j2: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareSection {
    pub energy: f64,
    pub crossings: Vec<Crossing>,
    /// (seed id, error message) for seeds that could not be followed.
    pub failures: Vec<(usize, String)>,
}

fn sin_psi1_numer(y: &[f64; 6]) -> (f64, f64) {
    let a = AmplitudeState::from_real(y);
    let z = a.c[0].conj() * a.c[1];
    (z.im, z.re)
}

/// Oriented crossings of psi1 = 0 (dpsi1/dt > 0) of the trajectory from `state0`.
pub fn section_crossings(
    state0: &ReducedState,
    params: &ModelParams,
    max_crossings: usize,
    t_max: f64,
    tol: Tolerances,
) -> Result<Vec<(f64, ReducedState)>, ClassicalError> {
    state0.check()?;
    let f = meanfield::real_field(params);
    let mut solver = Dopri5::new(&f, 0.0, to_amplitudes(state0).to_real(), tol)?;
    let mut out = Vec::new();
    while out.len() < max_crossings && solver.t() < t_max {
        let step = solver.step(t_max)?;
        let (g0, _) = sin_psi1_numer(&step.y0);
        let (g1, re1) = sin_psi1_numer(&step.y1);
        if !(g0 < 0.0 && g1 >= 0.0 && re1 > 0.0) {
            continue;
        }
        let (mut a, mut b) = (step.t0, step.t1());
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if sin_psi1_numer(&step.interpolate(m)).0 < 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 * b.abs().max(1.0) {
                break;
            }
        }
        // polish on exact Runge-Kutta steps from the step start
        let mut h = 0.5 * (a + b) - step.t0;
        let mut y = single_step(&f, step.t0, &step.y0, h)?;
        for _ in 0..8 {
            let s = from_amplitudes(&AmplitudeState::from_real(&y));
            let psi1 = principal(s.psi1);
            if psi1.abs() < 1e-12 {
                break;
            }
            let rate = eom_reduced(&s, params)?[0];
            h -= psi1 / rate;
            y = single_step(&f, step.t0, &step.y0, h)?;
        }
        let mut s = from_amplitudes(&AmplitudeState::from_real(&y));
        s.psi1 = principal(s.psi1);
        out.push((step.t0 + h, s));
    }
    Ok(out)
}

pub fn poincare_section(
    energy: f64,
    params: &ModelParams,
    seeds: &[ReducedState],
    crossings_per_seed: usize,
    tol: Tolerances,
) -> PoincareSection {
    let t_max = 200.0 * crossings_per_seed as f64 + 100.0;
    let zp = zero_point(params);
    let results: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            (
                id,
                section_crossings(s, params, crossings_per_seed, t_max, tol),
            )
        })
        .collect();
    let mut crossings = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(list) => crossings.extend(list.into_iter().map(|(t, s)| Crossing {
                seed_id: id,
                t,
                psi1: s.psi1,
                psi2: s.psi2,
                j1: s.j1,
                j2: s.j2,
                energy: h_reduced_raw(&s, params) - zp,
            })),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    PoincareSection {
        energy,
        crossings,
        failures,
    }
}

/// Seeds on a regular (psi2, J2) lattice; inaccessible points are skipped.
/// All seeds follow the branch of the first root found.
pub fn seed_grid(
    energy: f64,
    params: &ModelParams,
    n_psi2: usize,
    n_j2: usize,
) -> Vec<ReducedState> {
    let k = params.k_total();
    let mut seeds = Vec::new();
    let mut branch = None;
    for i in 0..n_psi2 {
        let psi2 = TAU * i as f64 / n_psi2 as f64;
        for j in 0..n_j2 {
            let j2 = k * (j as f64 + 0.5) / n_j2 as f64;
            if let Ok(seed) = poincare_seed(psi2, j2, energy, params, branch) {
                branch.get_or_insert(seed.state.j1);
                seeds.push(seed.state);
            }
        }
    }
    seeds
}

fn flow(
    state: &ReducedState,
    params: &ModelParams,
    t: f64,
    tol: Tolerances,
) -> Result<ReducedState, ClassicalError> {
    let f = meanfield::real_field(params);
    let (_, ys) = integrate_sampled(&f, 0.0, to_amplitudes(state).to_real(), t, t, tol)?;
    Ok(from_amplitudes(&AmplitudeState::from_real(
        ys.last().unwrap(),
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicOrbit {
    pub state: ReducedState,
    pub period: f64,
    /// Trace of the 4x4 monodromy matrix, 2 + lambda + 1/lambda.
    pub monodromy_trace: f64,
    /// Largest |lambda| of the nontrivial multiplier pair.
    pub multiplier: f64,
    pub stable: bool,
    /// Phase-space distance between start and end point.
    pub closure: f64,
}

fn solve_j1(psi2: f64, j2: f64, j1_guess: f64, energy: f64, params: &ModelParams) -> Option<f64> {
    let k = params.k_total();
    let zp = zero_point(params);
    let g = |j1: f64| {
        h_reduced_raw(
            &ReducedState {
                psi1: 0.0,
                psi2,
                j1,
                j2,
                k_total: k,
            },
            params,
        ) - zp
            - energy
    };
    let mut j1 = j1_guess;
    for _ in 0..60 {
        let h = 1e-7 * j1.max(1.0);
        let d = (g(j1 + h) - g(j1 - h)) / (2.0 * h);
        if d == 0.0 {
            return None;
        }
        let step = g(j1) / d;
        j1 -= step;
        if !(j1 > ACTION_FLOOR && j1 < k - j2) {
            return None;
        }
        if step.abs() < 1e-14 * j1.max(1.0) {
            break;
        }
    }
    (g(j1).abs() < 1e-9).then_some(j1)
}

fn distance(a: &ReducedState, b: &ReducedState) -> f64 {
    let d = [
        principal(a.psi1 - b.psi1),
        principal(a.psi2 - b.psi2),
        a.j1 - b.j1,
        a.j2 - b.j2,
    ];
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// First return time to the neighbourhood of `state` among its oriented
/// section crossings, used as the period guess.
fn return_time_guess(state: &ReducedState, params: &ModelParams, tol: Tolerances) -> Option<f64> {
    let f = meanfield::real_field(params);
    let (ts, ys) =
        integrate_sampled(&f, 0.0, to_amplitudes(state).to_real(), 40.0, 0.005, tol).ok()?;
    let d: Vec<f64> = ys
        .iter()
        .map(|y| distance(&from_amplitudes(&AmplitudeState::from_real(y)), state))
        .collect();
    let scale = state.k_total;
    (1..d.len() - 1)
        .filter(|&i| ts[i] > 0.5 && d[i] <= d[i - 1] && d[i] <= d[i + 1] && d[i] < 0.05 * scale)
        .map(|i| ts[i])
        .next()
}

/// Newton shooting for a periodic orbit through the psi1 = 0 plane at `energy`
/// (zero point subtracted). Unknowns are (psi2, J2, T); J1 follows from the energy.
pub fn find_periodic_orbit(
    guess: &ReducedState,
    energy: f64,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<PeriodicOrbit, ClassicalError> {
    let mut psi2 = guess.psi2;
    let mut j2 = guess.j2;
    let mut j1 = solve_j1(psi2, j2, guess.j1, energy, params).ok_or(ClassicalError::NoRoot {
        energy,
        psi2,
        j2,
    })?;
    let start = |psi2: f64, j2: f64, j1: f64| ReducedState {
        psi1: 0.0,
        psi2,
        j1,
        j2,
        k_total: params.k_total(),
    };
    let mut period = return_time_guess(&start(psi2, j2, j1), params, tol)
        .ok_or(ClassicalError::NoConvergence(f64::INFINITY))?;

    let residual = |psi2: f64, j2: f64, j1: f64, t: f64| -> Result<Vector3<f64>, ClassicalError> {
        let s0 = start(psi2, j2, j1);
        let s1 = flow(&s0, params, t, tol)?;
        Ok(Vector3::new(
            principal(s1.psi1),
            principal(s1.psi2 - psi2),
            s1.j2 - j2,
        ))
    };
    let mut r = residual(psi2, j2, j1, period)?;
    for _ in 0..40 {
        if r.norm() < 1e-11 {
            break;
        }
        let h = 1e-7;
        let mut jac = Matrix3::zeros();
        for col in 0..3 {
            let (mut p, mut q, mut t) = (psi2, j2, period);
            match col {
                0 => p += h,
                1 => q += h,
                _ => t += h,
            }
            let j1c = solve_j1(p, q, j1, energy, params)
                .ok_or(ClassicalError::NoConvergence(r.norm()))?;
            let rc = residual(p, q, j1c, t)?;
            jac.set_column(col, &((rc - r) / h));
        }
        let delta = jac
            .lu()
            .solve(&(-r))
            .ok_or(ClassicalError::NoConvergence(r.norm()))?;
        let mut lambda = 1.0;
        loop {
            let (p, q, t) = (
                psi2 + lambda * delta[0],
                j2 + lambda * delta[1],
                period + lambda * delta[2],
            );
            if let Some(j1n) = solve_j1(p, q, j1, energy, params) {
                if let Ok(rn) = residual(p, q, j1n, t) {
                    if rn.norm() < r.norm() || lambda < 1e-3 {
                        psi2 = p;
                        j2 = q;
                        period = t;
                        j1 = j1n;
                        r = rn;
                        break;
                    }
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Err(ClassicalError::NoConvergence(r.norm()));
            }
        }
    }
    let s0 = start(psi2, j2, j1);
    let s1 = flow(&s0, params, period, tol)?;
    let closure = distance(&s0, &s1);
    if closure > 1e-8 {
        return Err(ClassicalError::NoConvergence(closure));
    }
    let m = monodromy(&s0, params, period, tol)?;
    let trace = m.trace();
    let tau = trace - 2.0;
    let multiplier = if tau.abs() <= 2.0 {
        1.0
    } else {
        0.5 * (tau.abs() + (tau * tau - 4.0).sqrt())
    };
    Ok(PeriodicOrbit {
        state: s0,
        period,
        monodromy_trace: trace,
        multiplier,
        stable: tau.abs() < 2.0,
        closure,
    })
}

fn monodromy(
    s0: &ReducedState,
    params: &ModelParams,
    period: f64,
    tol: Tolerances,
) -> Result<Matrix4<f64>, ClassicalError> {
    let base = [s0.psi1, s0.psi2, s0.j1, s0.j2];
    let as_state = |v: [f64; 4]| ReducedState {
        psi1: v[0],
        psi2: v[1],
        j1: v[2],
        j2: v[3],
        k_total: s0.k_total,
    };
    let unwrap_to = |s: ReducedState, reference: &ReducedState| {
        [
            reference.psi1 + principal(s.psi1 - reference.psi1),
            reference.psi2 + principal(s.psi2 - reference.psi2),
            s.j1,
            s.j2,
        ]
    };
    let h = 1e-6;
    let mut m = Matrix4::zeros();
    for col in 0..4 {
        let mut p = base;
        let mut q = base;
        p[col] += h;
        q[col] -= h;
        let fp = flow(&as_state(p), params, period, tol)?;
        let fq = flow(&as_state(q), params, period, tol)?;
        let vp = unwrap_to(fp, s0);
        let vq = unwrap_to(fq, s0);
        for row in 0..4 {
            m[(row, col)] = (vp[row] - vq[row]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Starting points on the line psi = (0, 0) whose trajectories come back close
/// to themselves within `t_max`; guesses for [`find_periodic_orbit`].
pub fn symmetric_orbit_guesses(
    energy: f64,
    params: &ModelParams,
    n_scan: usize,
    tol: Tolerances,
) -> Vec<ReducedState> {
    let k = params.k_total();
    let candidates: Vec<ReducedState> = (1..n_scan)
        .flat_map(|i| {
            let j2 = k * i as f64 / n_scan as f64;
            poincare_seed(0.0, j2, energy, params, None)
                .map(|s| {
                    s.roots
                        .iter()
                        .map(|&j1| ReducedState {
                            psi1: 0.0,
                            psi2: 0.0,
                            j1,
                            j2,
                            k_total: k,
                        })
                        .collect()
                })
                .unwrap_or_else(|_| Vec::new())
        })
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|s| {
            let f = meanfield::real_field(params);
            match integrate_sampled(&f, 0.0, to_amplitudes(s).to_real(), 15.0, 0.01, tol) {
                Ok((ts, ys)) => ys
                    .iter()
                    .zip(&ts)
                    .filter(|(_, &t)| t > 1.0)
                    .map(|(y, _)| distance(&from_amplitudes(&AmplitudeState::from_real(y)), s))
                    .fold(f64::INFINITY, f64::min),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    // keep local minima of the return distance along the scan
    (0..candidates.len())
        .filter(|&i| {
            let left = i == 0 || scores[i] <= scores[i - 1];
            let right = i + 1 == candidates.len() || scores[i] <= scores[i + 1];
            left && right && scores[i] < 1.0
        })
        .map(|i| candidates[i])
        .collect()
}

/// Global (min, max) of the reduced Hamiltonian with the zero point subtracted, by
/// multi-start Nelder-Mead over (psi1, psi2) and a softmax chart of the action simplex.
pub fn energy_range(params: &ModelParams, starts: usize, seed: u64) -> (f64, f64) {
    let k = params.k_total();
    let zp = zero_point(params);
    let energy = |v: &[f64]| {
        let m = v[2].max(v[3]).max(0.0);
        let (e1, e2, e0) = ((v[2] - m).exp(), (v[3] - m).exp(), (-m).exp());
        let z = e1 + e2 + e0;
        let s = ReducedState {
            psi1: v[0],
            psi2: v[1],
            j1: k * e1 / z,
            j2: k * e2 / z,
            k_total: k,
        };
        h_reduced_raw(&s, params) - zp
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..starts {
        let x0 = [
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
        ];
        let (_, fmin) = nelder_mead(|v| energy(v), &x0, 0.5, 1e-13, 20_000);
        let (_, fneg) = nelder_mead(|v| -energy(v), &x0, 0.5, 1e-13, 20_000);
        lo = lo.min(fmin);
        hi = hi.max(-fneg);
    }
    (lo, hi)
}

/// Growth of a small phase-space separation over `t`: max distance / initial distance.
pub fn divergence_factor(
    state: &ReducedState,
    params: &ModelParams,
    t: f64,
    d0: f64,
    tol: Tolerances,
) -> Result<f64, ClassicalError> {
    let f = meanfield::real_field(params);
    let a0 = to_amplitudes(state);
    let b0 = to_amplitudes(&ReducedState {
        j2: state.j2 + d0,
        j1: state.j1 - d0,
        ..*state
    });
    let dist = |a: &[f64; 6], b: &[f64; 6]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (_, ya) = integrate_sampled(&f, 0.0, a0.to_real(), t, 1.0, tol)?;
    let (_, yb) = integrate_sampled(&f, 0.0, b0.to_real(), t, 1.0, tol)?;
    let start = dist(&ya[0], &yb[0]);
    Ok(ya
        .iter()
        .zip(&yb)
        .map(|(a, b)| dist(a, b))
        .fold(0.0, f64::max)
        / start)
}

/// Divergence factor above which a trajectory is counted as chaotic.
pub const CHAOS_FACTOR: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosProfile {
    /// (energy, fraction of sampled trajectories that are chaotic), ascending in energy.
    pub samples: Vec<(f64, f64)>,
}

impl ChaosProfile {
    /// Linearly interpolated chaotic fraction.
    pub fn fraction(&self, energy: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() {
            return 0.0;
        }
        if energy <= s[0].0 {
            return s[0].1;
        }
        for w in s.windows(2) {
            if energy <= w[1].0 {
                let u = (energy - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + u * (w[1].1 - w[0].1);
            }
        }
        s[s.len() - 1].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChaosSettings {
    pub energies: usize,
    pub seeds_per_energy: usize,
    pub t: f64,
    pub d0: f64,
    pub rng_seed: u64,
}

impl Default for ChaosSettings {
    fn default() -> Self {
        Self {
            energies: 24,
            seeds_per_energy: 12,
            t: 1000.0,
            d0: 1e-8,
            rng_seed: 7,
        }
    }
}

/// Chaotic fraction of random section seeds on an even energy lattice over [e_min, e_max].
pub fn chaos_profile(
    params: &ModelParams,
    e_min: f64,
    e_max: f64,
    settings: &ChaosSettings,
    tol: Tolerances,
) -> ChaosProfile {
    let n = settings.energies.max(2);
    let energies: Vec<f64> = (0..n)
        .map(|i| e_min + (e_max - e_min) * i as f64 / (n - 1) as f64)
        .collect();
    let k = params.k_total();
    let samples = energies
        .par_iter()
        .enumerate()
        .map(|(idx, &e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed.wrapping_add(idx as u64));
            let mut chaotic = 0;
            let mut total = 0;
            let mut attempts = 0;
            while total < settings.seeds_per_energy && attempts < 50 * settings.seeds_per_energy {
                attempts += 1;
                let psi2 = rng.gen_range(0.0..TAU);
                let j2 = rng.gen_range(0.0..k);
                let Ok(seed) = poincare_seed(psi2, j2, e, params, None) else {
                    continue;
                };
                if let Ok(factor) =
                    divergence_factor(&seed.state, params, settings.t, settings.d0, tol)
                {
                    total += 1;
                    if factor > CHAOS_FACTOR {
                        chaotic += 1;
                    }
                }
            }
            (
                e,
                if total == 0 {
                    0.0
                } else {
                    chaotic as f64 / total as f64
                },
            )
        })
        .collect();
    ChaosProfile { samples }
}

/// Period of psi1 for the decoupled system at fixed actions.
pub fn uncoupled_period(actions: [f64; 3], params: &ModelParams) -> f64 {
    let w = effective_frequencies(actions, params);
    TAU / (w[0] - w[1]).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec_orientation() -> ModelParams {
        ModelParams {
            omega: [0.1, 0.0, -0.1],
            ..ModelParams::default()
        }
    }

    #[test]
    fn zero_point_energy() {
        let p = ModelParams::default();
        assert!((zero_point(&p) - 0.075).abs() < 1e-15);
        let s = FullState {
            phi: [0.4; 3],
            action: [0.5; 3],
        };
        let h = h_full(&s, &p.uncoupled()).unwrap();
        assert!((h - 0.075).abs() < 1e-15);
    }

    #[test]
    fn effective_frequency_examples() {
        let w = effective_frequencies([0.5; 3], &spec_orientation());
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 0.1).abs() < 1e-15 && w[2].abs() < 1e-15);
        let p = ModelParams {
            x: [0.0; 3],
            ..ModelParams::default()
        };
        assert_eq!(effective_frequencies([3.0, 1.0, 8.0], &p), p.omega);
    }

    #[test]
    fn uncoupled_energy() {
        let p = ModelParams::default().uncoupled();
        let s = FullState {
            phi: [0.1, 2.0, 4.0],
            action: [3.0, 10.0, 1.5],
        };
        let expect: f64 = (0..3)
            .map(|j| p.omega[j] * s.action[j] + p.x[j] * s.action[j].powi(2))
            .sum();
        assert!((h_full(&s, &p).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn reduced_eom_without_coupling() {
        let p = ModelParams::default().uncoupled();
        let s = ReducedState {
            psi1: 0.3,
            psi2: 1.0,
            j1: 5.0,
            j2: 7.0,
            k_total: 31.5,
        };
        let d = eom_reduced(&s, &p).unwrap();
        let jm = s.j_mid();
        assert_eq!(d[2], 0.0);
        assert_eq!(d[3], 0.0);
        assert!(
            (d[0] - (p.omega[0] + 2.0 * p.x[0] * s.j1 - p.omega[1] - 2.0 * p.x[1] * jm)).abs()
                < 1e-14
        );
    }

    #[test]
    fn cos_terms_vanish_at_half_pi() {
        let p = ModelParams::default();
        let s = ReducedState {
            psi1: PI / 2.0,
            psi2: PI / 2.0,
            j1: 5.0,
            j2: 7.0,
            k_total: 31.5,
        };
        let d = eom_reduced(&s, &p).unwrap();
        let w = effective_frequencies([s.j1, s.j_mid(), s.j2], &p);
        assert!((d[0] - (w[0] - w[1])).abs() < 1e-14);
        assert!((d[1] - (w[2] - w[1])).abs() < 1e-14);
    }

    #[test]
    fn boundary_is_singular() {
        let p = ModelParams::default();
        let s = ReducedState {
            psi1: 0.0,
            psi2: 0.0,
            j1: 0.0,
            j2: 7.0,
            k_total: 31.5,
        };
        assert!(matches!(
            eom_reduced(&s, &p),
            Err(ClassicalError::SingularBoundary(_))
        ));
    }

    #[test]
    fn amplitude_roundtrip() {
        let s = ReducedState {
            psi1: 1.2,
            psi2: 5.9,
            j1: 4.0,
            j2: 11.0,
            k_total: 31.5,
        };
        let r = from_amplitudes(&to_amplitudes(&s));
        assert!((r.psi1 - s.psi1).abs() < 1e-12 && (r.psi2 - s.psi2).abs() < 1e-12);
        assert!(
            (r.j1 - s.j1).abs() < 1e-12
                && (r.j2 - s.j2).abs() < 1e-12
                && (r.k_total - 31.5).abs() < 1e-12
        );
    }

    #[test]
    fn seed_below_minimum_has_no_root() {
        let p = ModelParams::default();
        assert!(matches!(
            poincare_seed(PI, 7.5, 10.0, &p, None),
            Err(ClassicalError::NoRoot { .. })
        ));
    }

    #[test]
    fn seed_root_agrees_with_bracketing_scan() {
        let p = ModelParams::default();
        let seed = poincare_seed(PI, 7.5, 55.0, &p, None).unwrap();
        let h = h_reduced(&seed.state, &p, true).unwrap();
        assert!((h - 55.0).abs() < 1e-10);
        // independent brute-force scan of H(J1) on 10^4 samples
        let k = p.k_total();
        let n = 10_000;
        let mut brackets = Vec::new();
        let val = |j1: f64| {
            h_reduced(
                &ReducedState {
                    psi1: 0.0,
                    psi2: PI,
                    j1,
                    j2: 7.5,
                    k_total: k,
                },
                &p,
                true,
            )
            .unwrap()
                - 55.0
        };
        let grid: Vec<f64> = (0..=n)
            .map(|i| 1e-9 + (k - 7.5 - 2e-9) * i as f64 / n as f64)
            .collect();
        for w in grid.windows(2) {
            if val(w[0]).signum() != val(w[1]).signum() {
                brackets.push((w[0], w[1]));
            }
        }
        assert!(brackets
            .iter()
            .any(|&(a, b)| seed.state.j1 >= a && seed.state.j1 <= b));
        let d = eom_reduced(&seed.state, &p).unwrap();
        assert!(d[0] > 0.0);
    }

    #[test]
    fn lift_decoupled_theta_is_linear() {
        let p = ModelParams::default().uncoupled();
        let s0 = ReducedState {
            psi1: 0.2,
            psi2: 1.3,
            j1: 6.0,
            j2: 9.0,
            k_total: 31.5,
        };
        let opts = IntegrationOptions {
            sample_dt: 0.1,
            ..IntegrationOptions::default()
        };
        let traj = integrate(&s0, &p, 20.0, &opts).unwrap();
        let full = lift(&traj, 0.7, &p).unwrap();
        let rate = p.omega[1] + 2.0 * p.x[1] * s0.j_mid();
        for (t, f) in traj.t.iter().zip(&full) {
            let expect = (0.7 + rate * t).rem_euclid(TAU);
            assert!(principal(f.phi[1] - expect).abs() < 1e-9);
            assert!((f.action[1] - s0.j_mid()).abs() < 1e-9);
        }
    }

    #[test]
    fn lift_then_reduce_is_identity() {
        let p = ModelParams::default();
        let s0 = ReducedState {
            psi1: 0.5,
            psi2: 2.0,
            j1: 8.0,
            j2: 10.0,
            k_total: 31.5,
        };
        let traj = integrate(&s0, &p, 10.0, &IntegrationOptions::default()).unwrap();
        let full = lift(&traj, 1.0, &p).unwrap();
        for (f, s) in full.iter().zip(&traj.states) {
            let r = reduce(f);
            assert!(principal(r.psi1 - s.psi1).abs() < 1e-12);
            assert!(principal(r.psi2 - s.psi2).abs() < 1e-12);
            assert!((r.j1 - s.j1).abs() < 1e-12 && (r.j2 - s.j2).abs() < 1e-12);
            assert!((f.action[1] - (s.k_total - s.j1 - s.j2)).abs() < 1e-12);
        }
    }

    #[test]
    fn crossings_lie_on_plane_and_shell() {
        let p = ModelParams::default();
        let seeds = seed_grid(40.0, &p, 3, 3);
        assert!(!seeds.is_empty());
        let sec = poincare_section(40.0, &p, &seeds, 20, Tolerances::default());
        assert!(sec.crossings.len() > 20);
        for c in &sec.crossings {
            assert!(c.psi1.abs() < 1e-9, "{c:?}");
            assert!((c.energy - 40.0).abs() < 1e-8, "{c:?}");
            let s = ReducedState {
                psi1: c.psi1,
                psi2: c.psi2,
                j1: c.j1,
                j2: c.j2,
                k_total: p.k_total(),
            };
            assert!(eom_reduced(&s, &p).unwrap()[0] > 0.0);
        }
    }

    #[test]
    fn decoupled_orbit_period() {
        let p = ModelParams {
            k12: 0.0,
            k23: 0.0,
            ..ModelParams::default()
        };
        let s = ReducedState {
            psi1: 0.0,
            psi2: 0.0,
            j1: 6.0,
            j2: 9.0,
            k_total: 31.5,
        };
        let w = effective_frequencies([6.0, s.j_mid(), 9.0], &p);
        let t1 = TAU / (w[0] - w[1]).abs();
        let traj = integrate(
            &s,
            &p,
            t1,
            &IntegrationOptions {
                sample_dt: t1,
                ..Default::default()
            },
        )
        .unwrap();
        let end = traj.states.last().unwrap();
        assert!(principal(end.psi1).abs() < 1e-9);
        assert!((uncoupled_period([6.0, s.j_mid(), 9.0], &p) - t1).abs() < 1e-12);
    }
}

//! Mean-field (discrete Gross-Pitaevskii) dynamics of the three complex amplitudes.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Center, StateAssignment};
use crate::fock::{EigenSystem, FockBasis, ModelParams};
use crate::ode::{integrate_sampled, OdeError, Tolerances};
use crate::torusfield::principal;

#[derive(Debug, Error, PartialEq)]
pub enum MeanFieldError {
    #[error("trajectory spans {windows} windows, at least 3 are needed")]
    TooShort { windows: usize },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeState {
    pub c: [Complex64; 3],
}

impl AmplitudeState {
    pub fn actions(&self) -> [f64; 3] {
        self.c.map(|c| c.norm_sqr())
    }

    pub fn phases(&self) -> [f64; 3] {
        self.c.map(|c| c.arg())
    }

    pub fn norm2(&self) -> f64 {
        self.actions().iter().sum()
    }

    pub fn to_real(&self) -> [f64; 6] {
        let c = &self.c;
        [c[0].re, c[0].im, c[1].re, c[1].im, c[2].re, c[2].im]
    }

    pub fn from_real(y: &[f64; 6]) -> Self {
        Self {
            c: [
                Complex64::new(y[0], y[1]),
                Complex64::new(y[2], y[3]),
                Complex64::new(y[4], y[5]),
            ],
        }
    }

    pub fn rotated(&self, alpha: f64) -> Self {
        let r = Complex64::from_polar(1.0, alpha);
        Self {
            c: self.c.map(|c| c * r),
        }
    }
}

/// H = sum(omega |c|^2 + x |c|^4) - k12/2 (c1 c2* + c.c.) - k23/2 (c2 c3* + c.c.).
pub fn hamiltonian(state: &AmplitudeState, params: &ModelParams) -> f64 {
    let c = &state.c;
    let onsite: f64 = (0..3)
        .map(|k| {
            let n = c[k].norm_sqr();
            params.omega[k] * n + params.x[k] * n * n
        })
        .sum();
    onsite - params.k12 * (c[0] * c[1].conj()).re - params.k23 * (c[1] * c[2].conj()).re
}

/// dc/dt from i dc_k/dt = dH/dc_k*.
pub fn eom_amplitudes(state: &AmplitudeState, params: &ModelParams) -> [Complex64; 3] {
    let c = &state.c;
    let g = |k: usize| params.omega[k] + 2.0 * params.x[k] * c[k].norm_sqr();
    let rhs = [
        g(0) * c[0] - 0.5 * params.k12 * c[1],
        g(1) * c[1] - 0.5 * params.k12 * c[0] - 0.5 * params.k23 * c[2],
        g(2) * c[2] - 0.5 * params.k23 * c[1],
    ];
    rhs.map(|r| Complex64::new(r.im, -r.re))
}

pub fn real_field(
    params: &ModelParams,
) -> impl Fn(f64, &[f64; 6]) -> Result<[f64; 6], String> + '_ {
    move |_t, y| {
        Ok(AmplitudeState {
            c: eom_amplitudes(&AmplitudeState::from_real(y), params),
        }
        .to_real())
    }
}

/// c_k = sqrt(n_k + 1/2) e^{i phase_k}.
pub fn ic_from_number_state(n: [usize; 3], phases: [f64; 3]) -> AmplitudeState {
    let mut c = [Complex64::new(0.0, 0.0); 3];
    for k in 0..3 {
        c[k] = Complex64::from_polar((n[k] as f64 + 0.5).sqrt(), phases[k]);
    }
    AmplitudeState { c }
}

/// Real amplitudes sqrt(<n_k> + 1/2) built from the eigenvector's occupation expectation.
pub fn ic_from_eigenstate(eigvec: &[f64], basis: &FockBasis) -> AmplitudeState {
    let mut occ = [0.0; 3];
    for (s, &v) in basis.states().iter().zip(eigvec) {
        let w = v * v;
        for k in 0..3 {
            occ[k] += w * s[k] as f64;
        }
    }
    let norm: f64 = eigvec.iter().map(|v| v * v).sum();
    AmplitudeState {
        c: occ.map(|o| Complex64::new((o / norm + 0.5).sqrt(), 0.0)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeTrajectory {
    pub t: Vec<f64>,
    pub states: Vec<AmplitudeState>,
}

impl AmplitudeTrajectory {
    /// Continuous phases arg c_k, unwrapped sample to sample.
    pub fn unwrapped_phases(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = Vec::with_capacity(self.states.len());
        for s in &self.states {
            let p = s.phases();
            let next = match out.last() {
                None => p,
                Some(prev) => {
                    let mut q = *prev;
                    for k in 0..3 {
                        q[k] += principal(p[k] - prev[k]);
                    }
                    q
                }
            };
            out.push(next);
        }
        out
    }
}

/// Adaptive Dormand-Prince integration sampled every `dt`.
pub fn evolve(
    state0: &AmplitudeState,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    tol: Tolerances,
) -> Result<AmplitudeTrajectory, MeanFieldError> {
    let f = real_field(params);
    let (t, ys) = integrate_sampled(&f, 0.0, state0.to_real(), t_end, dt, tol)?;
    Ok(AmplitudeTrajectory {
        t,
        states: ys.iter().map(AmplitudeState::from_real).collect(),
    })
}

/// Fixed-step fourth-order symplectic splitting: exact on-site rotations
/// alternating with the exact linear tunnelling flow.
pub struct SplitStepper {
    params: ModelParams,
    q: Matrix3<f64>,
    lambda: [f64; 3],
}

impl SplitStepper {
    pub fn new(params: &ModelParams) -> Self {
        let a = Matrix3::new(
            0.0,
            0.5 * params.k12,
            0.0,
            0.5 * params.k12,
            0.0,
            0.5 * params.k23,
            0.0,
            0.5 * params.k23,
            0.0,
        );
        let eig = SymmetricEigen::new(a);
        Self {
            params: *params,
            q: eig.eigenvectors,
            lambda: [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]],
        }
    }

    fn onsite(&self, c: &mut [Complex64; 3], h: f64) {
        for k in 0..3 {
            let rate = self.params.omega[k] + 2.0 * self.params.x[k] * c[k].norm_sqr();
            c[k] *= Complex64::from_polar(1.0, -rate * h);
        }
    }

    fn tunnel(&self, c: &mut [Complex64; 3], h: f64) {
        // dc/dt = i A c
        let mut modal = [Complex64::new(0.0, 0.0); 3];
        for j in 0..3 {
            for k in 0..3 {
                modal[j] += self.q[(k, j)] * c[k];
            }
            modal[j] *= Complex64::from_polar(1.0, self.lambda[j] * h);
        }
        for k in 0..3 {
            c[k] = (0..3).map(|j| self.q[(k, j)] * modal[j]).sum();
        }
    }

    fn strang(&self, c: &mut [Complex64; 3], h: f64) {
        self.onsite(c, 0.5 * h);
        self.tunnel(c, h);
        self.onsite(c, 0.5 * h);
    }

    pub fn step(&self, state: &AmplitudeState, h: f64) -> AmplitudeState {
        let cbrt2 = 2f64.powf(1.0 / 3.0);
        let w1 = 1.0 / (2.0 - cbrt2);
        let w0 = -cbrt2 * w1;
        let mut c = state.c;
        self.strang(&mut c, w1 * h);
        self.strang(&mut c, w0 * h);
        self.strang(&mut c, w1 * h);
        AmplitudeState { c }
    }

    pub fn evolve(
        &self,
        state0: &AmplitudeState,
        t_end: f64,
        h: f64,
        every: usize,
    ) -> AmplitudeTrajectory {
        let n = (t_end / h).round() as usize;
        let mut t = vec![0.0];
        let mut states = vec![*state0];
        let mut s = *state0;
        for i in 1..=n {
            s = self.step(&s, h);
            if i % every.max(1) == 0 || i == n {
                t.push(i as f64 * h);
                states.push(s);
            }
        }
        AmplitudeTrajectory { t, states }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LockSettings {
    /// Window length in model time units.
    pub window: f64,
    /// A pair is locked when its relative phase drifts slower than this
    /// fraction of the pair's mean phase speed.
    pub threshold: f64,
    pub t_end: f64,
    pub sample_dt: f64,
}

impl Default for LockSettings {
    fn default() -> Self {
        Self {
            window: 50.0,
            threshold: 0.05,
            t_end: 500.0,
            sample_dt: 0.05,
        }
    }
}

/// Pair order used in lock arrays: (1,2), (2,3), (1,3).
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowLocks {
    pub t_start: f64,
    pub velocities: [f64; 3],
    pub locked: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LockReport {
    pub windows: Vec<WindowLocks>,
    /// Pairs locked in every window.
    pub locked: [bool; 3],
    pub intermittent: bool,
    pub center: Center,
    pub low_confidence: bool,
}

fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ti, yi) in t.iter().zip(y) {
        num += (ti - tm) * (yi - ym);
        den += (ti - tm) * (ti - tm);
    }
    num / den
}

/// True when the relative phase turns back at least twice, i.e. oscillates
/// instead of drifting monotonically.
fn librates(rel: &[f64]) -> bool {
    let mut reversals = 0;
    let mut last = 0.0;
    for w in rel.windows(2) {
        let d = w[1] - w[0];
        if d != 0.0 {
            if last != 0.0 && d.signum() != last {
                reversals += 1;
            }
            last = d.signum();
        }
    }
    reversals >= 2
}

pub fn pattern_center(locked: [bool; 3]) -> Center {
    match locked.iter().filter(|&&l| l).count() {
        0 => Center::A,
        1 if locked[0] => Center::C,
        1 if locked[1] => Center::B,
        1 => Center::D,
        _ => Center::E1,
    }
}

pub fn detect_locking(
    traj: &AmplitudeTrajectory,
    settings: &LockSettings,
) -> Result<LockReport, MeanFieldError> {
    let span = traj.t.last().copied().unwrap_or(0.0) - traj.t.first().copied().unwrap_or(0.0);
    let n_windows = (span / settings.window + 1e-9).floor() as usize;
    if n_windows < 3 {
        return Err(MeanFieldError::TooShort { windows: n_windows });
    }
    let phases = traj.unwrapped_phases();
    let t0 = traj.t[0];
    let mut windows = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let lo = t0 + w as f64 * settings.window;
        let hi = lo + settings.window;
        let idx: Vec<usize> = (0..traj.t.len())
            .filter(|&i| traj.t[i] >= lo && traj.t[i] <= hi)
            .collect();
        let ts: Vec<f64> = idx.iter().map(|&i| traj.t[i]).collect();
        let mut velocities = [0.0; 3];
        for k in 0..3 {
            let ys: Vec<f64> = idx.iter().map(|&i| phases[i][k]).collect();
            velocities[k] = slope(&ts, &ys);
        }
        let mut locked = [false; 3];
        for (p, &(i, j)) in PAIRS.iter().enumerate() {
            let rel: Vec<f64> = idx.iter().map(|&s| phases[s][i] - phases[s][j]).collect();
            let drift = slope(&ts, &rel).abs();
            let speed = 0.5 * (velocities[i].abs() + velocities[j].abs());
            locked[p] = speed > 0.0 && drift < settings.threshold * speed && librates(&rel);
        }
        windows.push(WindowLocks {
            t_start: lo,
            velocities,
            locked,
        });
    }
    let first = windows[0].locked;
    let intermittent = windows
        .iter()
        .any(|w| pattern_center(w.locked) != pattern_center(first));
    let locked = [0, 1, 2].map(|p| windows.iter().all(|w| w.locked[p]));
    let center = if intermittent {
        Center::E2
    } else {
        pattern_center(first)
    };
    Ok(LockReport {
        windows,
        locked,
        intermittent,
        center,
        low_confidence: center == Center::D,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub n1: usize,
    pub n3: usize,
    pub classical: Center,
    pub quantum: Center,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisGrid {
    pub cells: Vec<GridCell>,
}

impl BasisGrid {
    /// Fraction of cells labelled in both grids whose labels coincide, and the number of such cells.
    pub fn agreement(&self) -> (f64, usize) {
        let both: Vec<&GridCell> = self
            .cells
            .iter()
            .filter(|c| c.classical != Center::Unassigned && c.quantum != Center::Unassigned)
            .collect();
        if both.is_empty() {
            return (0.0, 0);
        }
        let same = both.iter().filter(|c| c.classical == c.quantum).count();
        (same as f64 / both.len() as f64, both.len())
    }
}

/// Weight above which a basis state counts as contributing to an eigenstate.
pub const SIGNIFICANT_WEIGHT: f64 = 0.05;

/// Label every number state by the type of its mean-field trajectory and by the
/// assigned eigenstate carrying most of its weight.
pub fn classify_basis_grid(
    params: &ModelParams,
    basis: &FockBasis,
    eig: &EigenSystem,
    assignments: &[StateAssignment],
    settings: &LockSettings,
    tol: Tolerances,
) -> BasisGrid {
    let cells = basis
        .states()
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let ic = ic_from_number_state(s, [0.0; 3]);
            let classical = evolve(&ic, params, settings.t_end, settings.sample_dt, tol)
                .and_then(|traj| detect_locking(&traj, settings))
                .map(|r| r.center)
                .unwrap_or(Center::Unassigned);
            let mut best: Option<(f64, Center)> = None;
            for a in assignments
                .iter()
                .filter(|a| a.center != Center::Unassigned)
            {
                let w = eig.vectors[(i, a.state_index - 1)].powi(2);
                if best.is_none_or(|(bw, _)| w > bw) {
                    best = Some((w, a.center));
                }
            }
            let quantum = match best {
                Some((w, c)) if w > SIGNIFICANT_WEIGHT => c,
                _ => Center::Unassigned,
            };
            GridCell {
                n1: s[0],
                n3: s[2],
                classical,
                quantum,
            }
        })
        .collect();
    BasisGrid { cells }
}

/// Phase velocity of a decoupled rotor, for reference in tests and reports.
pub fn rotor_frequency(params: &ModelParams, k: usize, action: f64) -> f64 {
    -(params.omega[k] + 2.0 * params.x[k] * action)
}

/// Wrap to [0, 2pi) for exported phases.
pub fn phase_mod(p: f64) -> f64 {
    p.rem_euclid(TAU)
}

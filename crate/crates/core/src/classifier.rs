//! Organisation-centre classification of semiclassical wave functions.
//!
//! Decision pipeline on the max-normalised density rho:
//! 1. E1 when every superlevel component at `tau_low` is contractible.
//! 2. B, C or D when all components at `tau_mid` wind in one common direction
//!    and the density is uniform along it.
//! 3. A when a single component at `tau_mid` covers the torus and the phase
//!    is close to a plane wave.
//! 4. Otherwise unassigned, or E2 when the energy lies in a chaotic band.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classical::ChaosProfile;
use crate::fock::{EigenSystem, FockBasis};
use crate::torusfield::{
    density, phase_gradient_fit, synthesize, winding_number, wrap_index, Mode, PlaneWaveFit,
    TorusField, TorusGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Center {
    A,
    B,
    C,
    D,
    E1,
    E2,
    #[serde(rename = "UNASSIGNED")]
    Unassigned,
}

impl Center {
    pub const ALL: [Center; 7] = [
        Center::A,
        Center::B,
        Center::C,
        Center::D,
        Center::E1,
        Center::E2,
        Center::Unassigned,
    ];
}

impl fmt::Display for Center {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Center::A => "A",
            Center::B => "B",
            Center::C => "C",
            Center::D => "D",
            Center::E1 => "E1",
            Center::E2 => "E2",
            Center::Unassigned => "UNASSIGNED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Superlevel for the contractibility test.
    pub tau_low: f64,
    /// Superlevel for crest and torus topology.
    pub tau_mid: f64,
    /// Components smaller than this fraction of the grid are ignored.
    pub min_component_fraction: f64,
    /// Minimum variance share of the density explained by the transverse profile.
    pub uniformity_min: f64,
    /// Largest plane-wave residual accepted for type A.
    pub residual_max: f64,
    /// D requires (m1 + m3) below this fraction of N.
    pub d_outer_fraction: f64,
    /// Peaks along a cut below this fraction of the cut maximum are ignored.
    pub peak_min: f64,
    /// A dip between two peaks counts as separating them below this fraction of the lower peak.
    pub node_dip: f64,
    /// Chaotic fraction at the state energy needed to call an unassigned state E2.
    pub chaos_min_fraction: f64,
    /// Smallest idealised-template overlap for an assignment to stand.
    pub template_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_low: 0.01,
            tau_mid: 0.1,
            min_component_fraction: 1.0 / 1024.0,
            uniformity_min: 0.5,
            residual_max: 1.5,
            d_outer_fraction: 0.5,
            peak_min: 0.1,
            node_dip: 0.5,
            chaos_min_fraction: 0.5,
            template_min: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateAssignment {
    /// 1-based eigenstate label.
    pub state_index: usize,
    pub energy: f64,
    pub center: Center,
    /// A: (mu_l1, mu_l2); B, C, D: (mu_l, mu_t); E1: (mu_td, mu_ta).
    pub quantum_numbers: Option<(u32, u32)>,
    pub confidence: f64,
}

/// Homotopy type of a connected superlevel component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum WrapClass {
    Contractible,
    /// Primitive winding direction (around psi1, around psi2).
    Direction(i64, i64),
    /// Two independent directions: the component covers the torus.
    Full,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub cells: Vec<(usize, usize)>,
    pub wrap: WrapClass,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn classify_wraps(wraps: &[(i64, i64)]) -> WrapClass {
    let Some(&(a0, b0)) = wraps.first() else {
        return WrapClass::Contractible;
    };
    if wraps.iter().any(|&(a, b)| a0 * b - b0 * a != 0) {
        return WrapClass::Full;
    }
    let g = gcd(a0, b0);
    let (mut a, mut b) = (a0 / g, b0 / g);
    if a < 0 || (a == 0 && b < 0) {
        a = -a;
        b = -b;
    }
    WrapClass::Direction(a, b)
}

/// 4-connected components of {rho > tau} on the periodic grid, with their homotopy type.
pub fn superlevel_components(rho: &DMatrix<f64>, tau: f64, min_cells: usize) -> Vec<Component> {
    let (m1, m2) = rho.shape();
    let mut label = vec![usize::MAX; m1 * m2];
    let mut lift = vec![(0i64, 0i64); m1 * m2];
    let mut out = Vec::new();
    for a0 in 0..m1 {
        for b0 in 0..m2 {
            if rho[(a0, b0)] <= tau || label[a0 * m2 + b0] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut cells = Vec::new();
            let mut wraps: Vec<(i64, i64)> = Vec::new();
            label[a0 * m2 + b0] = id;
            let mut queue = VecDeque::from([(a0, b0)]);
            while let Some((a, b)) = queue.pop_front() {
                cells.push((a, b));
                let (la, lb) = lift[a * m2 + b];
                for (da, db) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (ra, rb) = (a as i64 + da, b as i64 + db);
                    let (na, nb) = (wrap_index(ra, m1), wrap_index(rb, m2));
                    let sa = la + ra.div_euclid(m1 as i64);
                    let sb = lb + rb.div_euclid(m2 as i64);
                    if rho[(na, nb)] <= tau {
                        continue;
                    }
                    let k = na * m2 + nb;
                    if label[k] == usize::MAX {
                        label[k] = id;
                        lift[k] = (sa, sb);
                        queue.push_back((na, nb));
                    } else {
                        let d = (sa - lift[k].0, sb - lift[k].1);
                        if d != (0, 0) && !wraps.contains(&d) {
                            wraps.push(d);
                        }
                    }
                }
            }
            out.push(Component {
                cells,
                wrap: classify_wraps(&wraps),
            });
        }
    }
    out.into_iter()
        .filter(|c| c.cells.len() >= min_cells)
        .collect()
}

/// Share of the density variance carried by directional averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Uniformity {
    /// Average over psi2, leaving a profile in psi1 (crest along psi1 = const).
    pub c: f64,
    /// Average over psi1 (crest along psi2 = const).
    pub b: f64,
    /// Average along psi1 - psi2 = const.
    pub d: f64,
    /// Average along psi1 + psi2 = const.
    pub ad: f64,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

pub fn uniformity(rho: &DMatrix<f64>) -> Uniformity {
    let (m1, m2) = rho.shape();
    let all: Vec<f64> = rho.iter().copied().collect();
    let var = variance(&all);
    if var <= 0.0 {
        return Uniformity {
            c: 1.0,
            b: 1.0,
            d: 1.0,
            ad: 1.0,
        };
    }
    let along_b: Vec<f64> = (0..m1).map(|a| rho.row(a).sum() / m2 as f64).collect();
    let along_a: Vec<f64> = (0..m2).map(|b| rho.column(b).sum() / m1 as f64).collect();
    let (mut d, mut ad) = (0.0, 0.0);
    if m1 == m2 {
        let m = m1;
        let mut diff = vec![0.0; m];
        let mut sum = vec![0.0; m];
        for a in 0..m {
            for b in 0..m {
                diff[(a + m - b) % m] += rho[(a, b)] / m as f64;
                sum[(a + b) % m] += rho[(a, b)] / m as f64;
            }
        }
        d = variance(&diff) / var;
        ad = variance(&sum) / var;
    }
    Uniformity {
        c: variance(&along_b) / var,
        b: variance(&along_a) / var,
        d,
        ad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrestDirection {
    /// Crest on psi1 = const, running along psi2.
    Psi1Const,
    /// Crest on psi2 = const, running along psi1.
    Psi2Const,
    /// psi1 - psi2 = const.
    Diagonal,
    /// psi1 + psi2 = const.
    Antidiagonal,
}

impl CrestDirection {
    fn wrap(&self) -> WrapClass {
        match self {
            CrestDirection::Psi1Const => WrapClass::Direction(0, 1),
            CrestDirection::Psi2Const => WrapClass::Direction(1, 0),
            CrestDirection::Diagonal => WrapClass::Direction(1, 1),
            CrestDirection::Antidiagonal => WrapClass::Direction(1, -1),
        }
    }

    fn from_wrap(w: WrapClass) -> Option<Self> {
        match w {
            WrapClass::Direction(0, 1) => Some(CrestDirection::Psi1Const),
            WrapClass::Direction(1, 0) => Some(CrestDirection::Psi2Const),
            WrapClass::Direction(1, 1) => Some(CrestDirection::Diagonal),
            WrapClass::Direction(1, -1) => Some(CrestDirection::Antidiagonal),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CrestError {
    #[error("no crest in the requested direction")]
    NoCrest,
    #[error("density is flat; every line is a crest")]
    DegenerateFlat,
}

fn normalized_density(field: &TorusField) -> DMatrix<f64> {
    let rho = density(field);
    let max = rho.max();
    if max > 0.0 {
        rho / max
    } else {
        rho
    }
}

fn min_cells(grid: &TorusGrid, th: &Thresholds) -> usize {
    ((grid.m1 * grid.m2) as f64 * th.min_component_fraction)
        .round()
        .max(1.0) as usize
}

/// Ridge of one winding component: the densest cell per step along the crest.
fn ridge(rho: &DMatrix<f64>, comp: &Component, dir: CrestDirection) -> Vec<(usize, usize)> {
    let (m1, m2) = rho.shape();
    let by_b = dir == CrestDirection::Psi1Const;
    let n = if by_b { m2 } else { m1 };
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    for &(a, b) in &comp.cells {
        let key = if by_b { b } else { a };
        if best[key].is_none_or(|(ba, bb)| rho[(a, b)] > rho[(ba, bb)]) {
            best[key] = Some((a, b));
        }
    }
    best.into_iter().flatten().collect()
}

/// Closed ridge paths of the crests in `direction`, densest crest first.
pub fn crest_trace(
    field: &TorusField,
    direction: CrestDirection,
    th: &Thresholds,
) -> Result<Vec<Vec<(usize, usize)>>, CrestError> {
    let rho = normalized_density(field);
    if rho.max() > 0.0 && rho.max() - rho.min() < 1e-9 {
        return Err(CrestError::DegenerateFlat);
    }
    let comps = superlevel_components(&rho, th.tau_mid, min_cells(&field.grid, th));
    let mut crests: Vec<(f64, Vec<(usize, usize)>)> = comps
        .iter()
        .filter(|c| c.wrap == direction.wrap())
        .map(|c| {
            let path = ridge(&rho, c, direction);
            let peak = path.iter().map(|&(a, b)| rho[(a, b)]).fold(0.0, f64::max);
            (peak, path)
        })
        .collect();
    if crests.is_empty() {
        return Err(CrestError::NoCrest);
    }
    crests.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(crests.into_iter().map(|(_, p)| p).collect())
}

/// Indices of separated density maxima along a profile.
fn separated_peaks(rho: &[f64], th: &Thresholds) -> Vec<usize> {
    let n = rho.len();
    let max = rho.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 || n < 3 {
        return Vec::new();
    }
    let mut keep: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if rho[i] < th.peak_min * max || rho[i] < rho[i - 1] || rho[i] <= rho[i + 1] {
            continue;
        }
        match keep.last() {
            Some(&j) => {
                let dip = rho[j..=i].iter().copied().fold(f64::INFINITY, f64::min);
                if dip < th.node_dip * rho[i].min(rho[j]) {
                    keep.push(i);
                } else if rho[i] > rho[j] {
                    *keep.last_mut().unwrap() = i;
                }
            }
            None => keep.push(i),
        }
    }
    keep
}

/// Nodal lines crossed by an open cut: one between each pair of neighbouring
/// density maxima that are separated by a dip below `node_dip` of the lower peak.
/// Avoided nodal crossings, where the cut passes beside the phase singularity,
/// count as nodes as long as the density dip is deep.
pub fn count_transverse_nodes(
    field: &TorusField,
    cut: &[(usize, usize)],
    th: &Thresholds,
) -> usize {
    let rho: Vec<f64> = cut
        .iter()
        .map(|&(a, b)| field.at(a as i64, b as i64).norm_sqr())
        .collect();
    separated_peaks(&rho, th).len().saturating_sub(1)
}

/// Cut of length m through (a0, b0) along (1, s), centred on that cell.
fn centred_cut(grid: &TorusGrid, a0: usize, b0: usize, s: i64) -> Vec<(usize, usize)> {
    let m = grid.m1 as i64;
    (-m / 2..m / 2)
        .map(|t| {
            (
                wrap_index(a0 as i64 + t, grid.m1),
                wrap_index(b0 as i64 + s * t, grid.m2),
            )
        })
        .collect()
}

/// Largest particle number present in the field's modes.
fn particles(field: &TorusField) -> i64 {
    field.modes().iter().map(|m| m.n1 + m.n3).max().unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct Features {
    pub low: Vec<WrapClass>,
    pub mid: Vec<WrapClass>,
    pub uniformity: Uniformity,
    pub fit: PlaneWaveFit,
}

pub fn features(field: &TorusField, th: &Thresholds) -> Features {
    let rho = normalized_density(field);
    let mc = min_cells(&field.grid, th);
    Features {
        low: superlevel_components(&rho, th.tau_low, mc)
            .iter()
            .map(|c| c.wrap)
            .collect(),
        mid: superlevel_components(&rho, th.tau_mid, mc)
            .iter()
            .map(|c| c.wrap)
            .collect(),
        uniformity: uniformity(&rho),
        fit: phase_gradient_fit(field),
    }
}

fn crest_numbers(field: &TorusField, dir: CrestDirection, th: &Thresholds) -> Option<(u32, u32)> {
    let crests = crest_trace(field, dir, th).ok()?;
    let mu_t = crests.len() as u32 - 1;
    let mu_l = crests
        .iter()
        .find_map(|c| winding_number(field, c).ok())?
        .winding
        .unsigned_abs() as u32;
    Some((mu_l, mu_t))
}

/// Classify one wave function. A candidate from the density topology is kept
/// only when its idealised template overlaps the field by at least
/// `template_min`. The E2 decision needs the energy and is made by [`classify_all`].
pub fn classify(
    state_index: usize,
    energy: f64,
    field: &TorusField,
    th: &Thresholds,
) -> StateAssignment {
    let a = candidate(state_index, energy, field, th);
    if a.center != Center::Unassigned && template_overlap(field, &a) < th.template_min {
        return StateAssignment {
            center: Center::Unassigned,
            quantum_numbers: None,
            confidence: 0.0,
            ..a
        };
    }
    a
}

/// Topology-only decision, before the template check.
pub fn candidate(
    state_index: usize,
    energy: f64,
    field: &TorusField,
    th: &Thresholds,
) -> StateAssignment {
    let unassigned = StateAssignment {
        state_index,
        energy,
        center: Center::Unassigned,
        quantum_numbers: None,
        confidence: 0.0,
    };
    let rho = normalized_density(field);
    let mc = min_cells(&field.grid, th);
    let low = superlevel_components(&rho, th.tau_low, mc);
    if !low.is_empty() && low.iter().all(|c| c.wrap == WrapClass::Contractible) {
        let (a0, b0) = rho.iamax_full();
        let td = count_transverse_nodes(field, &centred_cut(&field.grid, a0, b0, 1), th) as u32;
        let ta = count_transverse_nodes(field, &centred_cut(&field.grid, a0, b0, -1), th) as u32;
        let covered = low.iter().map(|c| c.cells.len()).sum::<usize>() as f64 / rho.len() as f64;
        return StateAssignment {
            state_index,
            energy,
            center: Center::E1,
            quantum_numbers: Some((td, ta)),
            confidence: 1.0 - covered,
        };
    }

    let mid = superlevel_components(&rho, th.tau_mid, mc);
    let u = uniformity(&rho);
    let fit = phase_gradient_fit(field);
    let first = mid.first().map(|c| c.wrap);
    let common = first.filter(|w| mid.iter().all(|c| c.wrap == *w));
    if let Some(dir) = common.and_then(CrestDirection::from_wrap) {
        let outer = fit.m1 + fit.m3;
        let d_allowed = outer < th.d_outer_fraction * particles(field) as f64;
        let (center, score) = match dir {
            CrestDirection::Psi1Const => (Center::C, u.c),
            CrestDirection::Psi2Const => (Center::B, u.b),
            CrestDirection::Diagonal if d_allowed => (Center::D, u.d),
            CrestDirection::Antidiagonal if d_allowed => (Center::D, u.ad),
            _ => (Center::Unassigned, 0.0),
        };
        if center != Center::Unassigned && score >= th.uniformity_min {
            if let Some(qn) = crest_numbers(field, dir, th) {
                return StateAssignment {
                    state_index,
                    energy,
                    center,
                    quantum_numbers: Some(qn),
                    confidence: score.clamp(0.0, 1.0),
                };
            }
        }
    }

    if mid.len() == 1 && mid[0].wrap == WrapClass::Full && fit.residual < th.residual_max {
        let (m1, m3) = fit.rounded();
        return StateAssignment {
            state_index,
            energy,
            center: Center::A,
            quantum_numbers: Some((m1.unsigned_abs() as u32, m3.unsigned_abs() as u32)),
            confidence: (1.0 - fit.residual / (2.0 * th.residual_max)).clamp(0.0, 1.0),
        };
    }
    unassigned
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub assignments: Vec<StateAssignment>,
    pub counts: BTreeMap<Center, usize>,
}

impl Classification {
    pub fn count(&self, c: Center) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    /// States given one of the five organising-centre types A, B, C, D, E1.
    pub fn assigned(&self) -> usize {
        [Center::A, Center::B, Center::C, Center::D, Center::E1]
            .iter()
            .map(|&c| self.count(c))
            .sum()
    }
}

/// Classify every eigenstate. With a chaos profile, unassigned states whose
/// energy falls in a chaotic band become E2.
pub fn classify_all(
    eig: &EigenSystem,
    basis: &FockBasis,
    grid: &TorusGrid,
    th: &Thresholds,
    chaos: Option<&ChaosProfile>,
) -> Classification {
    let assignments: Vec<StateAssignment> = (0..eig.len())
        .into_par_iter()
        .map(|k| {
            let energy = eig.energies[k];
            let v: Vec<f64> = eig.vectors.column(k).iter().copied().collect();
            let field = synthesize(&v, basis, grid).expect("eigenvector matches basis");
            let mut a = classify(k + 1, energy, &field, th);
            if a.center == Center::Unassigned {
                if let Some(profile) = chaos {
                    let f = profile.fraction(energy);
                    if f >= th.chaos_min_fraction {
                        a.center = Center::E2;
                        a.confidence = f;
                    }
                }
            }
            a
        })
        .collect();
    let mut counts = BTreeMap::new();
    for a in &assignments {
        *counts.entry(a.center).or_insert(0) += 1;
    }
    Classification {
        assignments,
        counts,
    }
}

/// Normalised overlap |<Phi|T>|^2 / (<Phi|Phi><T|T>) on the grid.
pub fn overlap(field: &TorusField, template: &DMatrix<Complex64>) -> f64 {
    let mut s = Complex64::new(0.0, 0.0);
    let (mut nf, mut nt) = (0.0, 0.0);
    for (f, t) in field.values.iter().zip(template.iter()) {
        s += f.conj() * t;
        nf += f.norm_sqr();
        nt += t.norm_sqr();
    }
    if nf == 0.0 || nt == 0.0 {
        return 0.0;
    }
    s.norm_sqr() / (nf * nt)
}

/// Hermite function of order n at x (weight e^{-x^2/2}, unnormalised).
fn hermite_function(n: u32, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if n == 0 {
        return (-0.5 * x * x).exp();
    }
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1 * (-0.5 * x * x).exp()
}

const PENDULUM_MODES: i64 = 48;

/// Well depths scanned for the transverse profile: from broad to narrow.
const PENDULUM_DEPTHS: usize = 26;

fn pendulum_depth(i: usize) -> f64 {
    0.5 * 1.5f64.powi(i as i32)
}

/// Plane-wave coefficients of the eigenstates of the periodic anharmonic
/// oscillator -d^2/dx^2 - q cos x, per scanned depth q, sorted by energy.
fn pendulum_table() -> &'static [DMatrix<f64>] {
    static TABLE: OnceLock<Vec<DMatrix<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let k = PENDULUM_MODES;
        let dim = (2 * k + 1) as usize;
        (0..PENDULUM_DEPTHS)
            .map(|i| {
                let q = pendulum_depth(i);
                let h = DMatrix::from_fn(dim, dim, |i, j| {
                    let (ki, kj) = (i as i64 - k, j as i64 - k);
                    if i == j {
                        (ki * ki) as f64
                    } else if (ki - kj).abs() == 1 {
                        -0.5 * q
                    } else {
                        0.0
                    }
                });
                let eig = SymmetricEigen::new(h);
                let mut order: Vec<usize> = (0..dim).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
                DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])])
            })
            .collect()
    })
}

/// Oscillator eigenstate n at depth index `depth`, evaluated at `x`.
fn pendulum_state(n: u32, depth: usize, x: &[f64]) -> Vec<Complex64> {
    let k = PENDULUM_MODES;
    let col = pendulum_table()[depth].column(n as usize);
    x.iter()
        .map(|&x| {
            col.iter()
                .enumerate()
                .map(|(i, &a)| Complex64::from_polar(a, (i as i64 - k) as f64 * x))
                .sum()
        })
        .collect()
}

/// Density-weighted circular mean of angles.
fn circular_mean(weights: &[f64], angles: &[f64]) -> f64 {
    let z: Complex64 = weights
        .iter()
        .zip(angles)
        .map(|(&w, &x)| Complex64::from_polar(w, x))
        .sum();
    z.arg()
}

fn signum_or_one(x: f64) -> i64 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

fn field_norm(field: &TorusField) -> f64 {
    field.values.iter().map(|v| v.norm_sqr()).sum()
}

/// Best overlap with e^{i(k1 psi1 + k3 psi2)} chi_n(x_d - c), where the transverse
/// coordinate x_d = d dx + offset depends on the cell through d(a, b).
fn line_template_overlap(
    field: &TorusField,
    n: u32,
    transverse: impl Fn(usize, usize) -> usize,
    offset: f64,
    carriers: &[(i64, i64)],
) -> f64 {
    let grid = field.grid;
    let m = grid.m1;
    let dx = TAU / m as f64;
    let mut marginal = vec![0.0; m];
    let mut count = vec![0.0; m];
    let mut projected = vec![vec![Complex64::new(0.0, 0.0); m]; carriers.len()];
    for a in 0..m {
        for b in 0..grid.m2 {
            let d = transverse(a, b);
            let v = field.values[(a, b)];
            marginal[d] += v.norm_sqr();
            count[d] += 1.0;
            for (p, &(k1, k3)) in projected.iter_mut().zip(carriers) {
                p[d] += v.conj()
                    * Complex64::from_polar(
                        1.0,
                        k1 as f64 * grid.psi1(a) + k3 as f64 * grid.psi2(b),
                    );
            }
        }
    }
    let nf = field_norm(field);
    let angles: Vec<f64> = (0..m).map(|d| d as f64 * dx + offset).collect();
    let c = circular_mean(&marginal, &angles);
    let x: Vec<f64> = angles.iter().map(|x| x - c).collect();
    let mut best: f64 = 0.0;
    for depth in 0..PENDULUM_DEPTHS {
        let chi = pendulum_state(n, depth, &x);
        let nt: f64 = chi.iter().zip(&count).map(|(c, k)| c.norm_sqr() * k).sum();
        for p in &projected {
            let s: Complex64 = p.iter().zip(&chi).map(|(p, c)| p * c).sum();
            best = best.max(s.norm_sqr() / (nf * nt));
        }
    }
    best
}

/// Overlap with the idealised wave function of an assignment, maximised over
/// the transverse width and the transverse carrier wave number:
/// - B, C, D: plane wave along the centre times a periodic anharmonic-oscillator
///   eigenfunction with mu_t nodes across it
/// - E1: Hermite functions along the diagonal and antidiagonal
/// - A: the plane wave (mu_l1, mu_l2)
pub fn template_overlap(field: &TorusField, a: &StateAssignment) -> f64 {
    let Some((q1, q2)) = a.quantum_numbers else {
        return 0.0;
    };
    let grid = field.grid;
    let (m1, m2) = (grid.m1, grid.m2);
    let fit = phase_gradient_fit(field);
    let (r1, r3) = fit.rounded();
    let shifts = -3..=3i64;
    match a.center {
        Center::C => {
            let k3 = signum_or_one(fit.m3) * q1 as i64;
            let carriers: Vec<_> = shifts.map(|s| (r1 + s, k3)).collect();
            line_template_overlap(field, q2, |a, _| a, grid.psi1_start, &carriers)
        }
        Center::B => {
            let k1 = signum_or_one(fit.m1) * q1 as i64;
            let carriers: Vec<_> = shifts.map(|s| (k1, r3 + s)).collect();
            line_template_overlap(field, q2, |_, b| b, grid.psi2_start, &carriers)
        }
        Center::D if m1 == m2 => {
            let total = signum_or_one(fit.m1 + fit.m3) * q1 as i64;
            let diag: Vec<_> = shifts.clone().map(|s| (r1 + s, total - r1 - s)).collect();
            let along = line_template_overlap(
                field,
                q2,
                |a, b| (a + m1 - b) % m1,
                grid.psi1_start - grid.psi2_start,
                &diag,
            );
            let diff = signum_or_one(fit.m1 - fit.m3) * q1 as i64;
            let anti: Vec<_> = shifts.map(|s| (r1 + s, r1 + s - diff)).collect();
            let across = line_template_overlap(
                field,
                q2,
                |a, b| (a + b) % m1,
                grid.psi1_start + grid.psi2_start,
                &anti,
            );
            along.max(across)
        }
        Center::E1 => point_template_overlap(field, q1, q2, r1, r3),
        Center::A => {
            let (k1, k3) = (
                signum_or_one(fit.m1) * q1 as i64,
                signum_or_one(fit.m3) * q2 as i64,
            );
            let t = DMatrix::from_fn(m1, m2, |i, j| {
                Complex64::from_polar(1.0, k1 as f64 * grid.psi1(i) + k3 as f64 * grid.psi2(j))
            });
            overlap(field, &t)
        }
        _ => 0.0,
    }
}

/// Hermite functions of orders (nu, nv) along the diagonal u and antidiagonal v
/// about the density centre, scanned over both widths and nearby carriers.
fn point_template_overlap(field: &TorusField, nu: u32, nv: u32, r1: i64, r3: i64) -> f64 {
    let grid = field.grid;
    let (m1, m2) = (grid.m1, grid.m2);
    let rho = density(field);
    let p1: Vec<f64> = (0..m1).map(|i| rho.row(i).sum()).collect();
    let p2: Vec<f64> = (0..m2).map(|j| rho.column(j).sum()).collect();
    let c1 = circular_mean(&p1, &(0..m1).map(|i| grid.psi1(i)).collect::<Vec<_>>());
    let c2 = circular_mean(&p2, &(0..m2).map(|j| grid.psi2(j)).collect::<Vec<_>>());
    let wrap = |x: f64| (x + PI).rem_euclid(TAU) - PI;
    let carriers = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];
    let mut uv = Vec::with_capacity(m1 * m2);
    let mut projected = vec![Vec::with_capacity(m1 * m2); carriers.len()];
    for i in 0..m1 {
        for j in 0..m2 {
            let (x1, x2) = (wrap(grid.psi1(i) - c1), wrap(grid.psi2(j) - c2));
            uv.push(((x1 + x2) / 2f64.sqrt(), (x1 - x2) / 2f64.sqrt()));
            let v = field.values[(i, j)].conj();
            for (p, &(d1, d3)) in projected.iter_mut().zip(&carriers) {
                let k = (r1 + d1) as f64 * grid.psi1(i) + (r3 + d3) as f64 * grid.psi2(j);
                p.push(v * Complex64::from_polar(1.0, k));
            }
        }
    }
    let nf = field_norm(field);
    let widths: Vec<f64> = (0..12).map(|i| 0.05 * 1.35f64.powi(i)).collect();
    let mut best: f64 = 0.0;
    for &su in &widths {
        for &sv in &widths {
            let amp: Vec<f64> = uv
                .iter()
                .map(|&(u, v)| hermite_function(nu, u / su) * hermite_function(nv, v / sv))
                .collect();
            let nt: f64 = amp.iter().map(|a| a * a).sum();
            for p in &projected {
                let s: Complex64 = p.iter().zip(&amp).map(|(p, a)| p * a).sum();
                best = best.max(s.norm_sqr() / (nf * nt));
            }
        }
    }
    best
}

/// Exchange wells 1 and 3 in a field: Phi(psi1, psi2) -> Phi(psi2, psi1).
pub fn swap_wells(field: &TorusField) -> TorusField {
    let modes = field
        .modes()
        .iter()
        .map(|m| Mode {
            n1: m.n3,
            n3: m.n1,
            c: m.c,
        })
        .collect();
    let g = field.grid;
    TorusField::from_modes(
        modes,
        TorusGrid {
            m1: g.m2,
            m2: g.m1,
            psi1_start: g.psi2_start,
            psi2_start: g.psi1_start,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_rho(m: usize, on: impl Fn(usize, usize) -> bool) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |a, b| if on(a, b) { 1.0 } else { 0.0 })
    }

    #[test]
    fn blob_is_contractible() {
        let rho = mask_rho(16, |a, b| {
            (3..6).contains(&a) && (14..16).contains(&b) || (3..6).contains(&a) && b < 2
        });
        let comps = superlevel_components(&rho, 0.5, 1);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].wrap, WrapClass::Contractible);
    }

    #[test]
    fn bands_and_diagonals() {
        let col = mask_rho(16, |a, _| a == 4 || a == 5);
        let comps = superlevel_components(&col, 0.5, 1);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].wrap, WrapClass::Direction(0, 1));
        let row = mask_rho(16, |_, b| b == 9);
        assert_eq!(
            superlevel_components(&row, 0.5, 1)[0].wrap,
            WrapClass::Direction(1, 0)
        );
        let diag = mask_rho(16, |a, b| (a + 16 - b) % 16 <= 1);
        assert_eq!(
            superlevel_components(&diag, 0.5, 1)[0].wrap,
            WrapClass::Direction(1, 1)
        );
        let anti = mask_rho(16, |a, b| (a + b) % 16 <= 1);
        assert_eq!(
            superlevel_components(&anti, 0.5, 1)[0].wrap,
            WrapClass::Direction(1, -1)
        );
        let full = mask_rho(16, |a, b| a == 2 || b == 7);
        assert_eq!(
            superlevel_components(&full, 0.5, 1)[0].wrap,
            WrapClass::Full
        );
        let two = mask_rho(16, |a, _| a == 2 || a == 9);
        assert_eq!(superlevel_components(&two, 0.5, 1).len(), 2);
    }

    #[test]
    fn uniformity_of_band() {
        let col = mask_rho(32, |a, _| (10..14).contains(&a));
        let u = uniformity(&col);
        assert!((u.c - 1.0).abs() < 1e-12);
        assert!(u.b.abs() < 1e-12);
    }

    #[test]
    fn flat_field_is_degenerate() {
        let f = TorusField::from_modes(
            vec![Mode {
                n1: 3,
                n3: 1,
                c: Complex64::new(1.0, 0.0),
            }],
            TorusGrid::square(32),
        );
        assert_eq!(
            crest_trace(&f, CrestDirection::Psi1Const, &Thresholds::default()),
            Err(CrestError::DegenerateFlat)
        );
        let cut: Vec<_> = (0..32).map(|a| (a, 5)).collect();
        assert_eq!(count_transverse_nodes(&f, &cut, &Thresholds::default()), 0);
    }

    #[test]
    fn crest_of_synthetic_band() {
        // e^{i 5 psi2} times a periodic bump in psi1: one crest, winding 5 along psi2
        let mut modes = Vec::new();
        for n in -6i64..=6 {
            let c = (-(n as f64).powi(2) / 8.0).exp();
            modes.push(Mode {
                n1: n,
                n3: 5,
                c: Complex64::new(c, 0.0),
            });
        }
        let f = TorusField::from_modes(modes, TorusGrid::square(64));
        let th = Thresholds::default();
        let crests = crest_trace(&f, CrestDirection::Psi1Const, &th).unwrap();
        assert_eq!(crests.len(), 1);
        assert_eq!(winding_number(&f, &crests[0]).unwrap().winding, 5);
        assert_eq!(
            crest_trace(&f, CrestDirection::Psi2Const, &th),
            Err(CrestError::NoCrest)
        );
        let a = classify(1, 0.0, &f, &th);
        assert_eq!(a.center, Center::C);
        assert_eq!(a.quantum_numbers, Some((5, 0)));
    }

    #[test]
    fn hermite_nodes() {
        // first excited oscillator profile across a band: one node
        let grid = TorusGrid::square(64);
        let t = DMatrix::from_fn(64, 64, |i, _| {
            let x = ((i as f64 - 20.0 + 32.0).rem_euclid(64.0) - 32.0) / 4.0;
            Complex64::new(hermite_function(1, x), 0.0)
        });
        let modes = fourier_modes(&t, &grid);
        let f = TorusField::from_modes(modes, grid);
        let cut: Vec<_> = (0..64).map(|a| ((a + 52) % 64, 0)).collect();
        assert_eq!(count_transverse_nodes(&f, &cut, &Thresholds::default()), 1);
    }

    /// Forward DFT of grid values into modes, for building test fields.
    fn fourier_modes(values: &DMatrix<Complex64>, grid: &TorusGrid) -> Vec<Mode> {
        let m = grid.m1 as i64;
        let mut modes = Vec::new();
        for n1 in -m / 2..m / 2 {
            for n3 in -m / 2..m / 2 {
                let mut s = Complex64::new(0.0, 0.0);
                for a in 0..grid.m1 {
                    for b in 0..grid.m2 {
                        let ph = -(n1 as f64 * grid.psi1(a) + n3 as f64 * grid.psi2(b));
                        s += values[(a, b)] * Complex64::from_polar(1.0, ph);
                    }
                }
                s /= (grid.m1 * grid.m2) as f64;
                if s.norm() > 1e-12 {
                    modes.push(Mode { n1, n3, c: s });
                }
            }
        }
        modes
    }

    #[test]
    fn wraps_reduced_to_primitive() {
        assert_eq!(
            classify_wraps(&[(0, 2), (0, -1)]),
            WrapClass::Direction(0, 1)
        );
        assert_eq!(classify_wraps(&[(-2, -2)]), WrapClass::Direction(1, 1));
        assert_eq!(classify_wraps(&[(1, 0), (0, 1)]), WrapClass::Full);
        assert_eq!(classify_wraps(&[]), WrapClass::Contractible);
    }

    #[test]
    fn center_labels() {
        assert_eq!(Center::Unassigned.to_string(), "UNASSIGNED");
        assert_eq!(serde_json_like(Center::E1), "E1");
    }

    fn serde_json_like(c: Center) -> String {
        c.to_string()
    }
}

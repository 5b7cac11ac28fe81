//! Semiclassical wave functions on the reduced (psi1, psi2) torus.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::FockBasis;

/// Phase is undefined where density falls below this fraction of the grid maximum.
pub const DENSITY_FLOOR: f64 = 1e-3;

/// Steps with a larger phase change than this are treated as unresolved.
pub const MAX_PHASE_STEP: f64 = 0.9 * PI;

#[derive(Debug, Error, PartialEq)]
pub enum TorusError {
    #[error("coefficient vector has length {got}, basis has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid {m1}x{m2} is coarser than 2pi/{n}")]
    Undersampled { m1: usize, m2: usize, n: usize },
    #[error("loop passes through a node at cell ({0}, {1})")]
    LoopThroughNode(usize, usize),
    #[error("unresolved phase jump of {jump:.3} rad entering cell ({a}, {b})")]
    UnresolvedJump { a: usize, b: usize, jump: f64 },
    #[error("empty loop")]
    EmptyLoop,
}

/// Periodic grid: psi1 = psi1_start + 2pi a/m1, psi2 = psi2_start + 2pi b/m2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorusGrid {
    pub m1: usize,
    pub m2: usize,
    pub psi1_start: f64,
    pub psi2_start: f64,
}

impl Default for TorusGrid {
    fn default() -> Self {
        Self::square(128)
    }
}

impl TorusGrid {
    /// m x m grid over [-pi/2, 3pi/2)^2.
    pub fn square(m: usize) -> Self {
        Self {
            m1: m,
            m2: m,
            psi1_start: -PI / 2.0,
            psi2_start: -PI / 2.0,
        }
    }

    pub fn psi1(&self, a: usize) -> f64 {
        self.psi1_start + TAU * a as f64 / self.m1 as f64
    }

    pub fn psi2(&self, b: usize) -> f64 {
        self.psi2_start + TAU * b as f64 / self.m2 as f64
    }

    pub fn cell_area(&self) -> f64 {
        TAU * TAU / (self.m1 * self.m2) as f64
    }

    pub fn resolves(&self, n_particles: usize) -> bool {
        self.m1 >= n_particles && self.m2 >= n_particles
    }

    /// Nearest grid index for an angle, wrapping as needed.
    pub fn index1(&self, psi1: f64) -> usize {
        wrap_index(
            ((psi1 - self.psi1_start) / TAU * self.m1 as f64).round() as i64,
            self.m1,
        )
    }

    pub fn index2(&self, psi2: f64) -> usize {
        wrap_index(
            ((psi2 - self.psi2_start) / TAU * self.m2 as f64).round() as i64,
            self.m2,
        )
    }
}

pub fn wrap_index(i: i64, m: usize) -> usize {
    i.rem_euclid(m as i64) as usize
}

/// One Fourier component e^{i(n1 psi1 + n3 psi2)}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub n1: i64,
    pub n3: i64,
    pub c: Complex64,
}

#[derive(Debug, Clone)]
pub struct TorusField {
    pub grid: TorusGrid,
    /// `values[(a, b)]` is the field at (psi1_a, psi2_b).
    pub values: DMatrix<Complex64>,
    modes: Vec<Mode>,
}

impl TorusField {
    /// Evaluate a finite Fourier series on `grid`.
    pub fn from_modes(modes: Vec<Mode>, grid: TorusGrid) -> Self {
        let values = fourier_synthesis(&modes, &grid);
        Self {
            grid,
            values,
            modes,
        }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn at(&self, a: i64, b: i64) -> Complex64 {
        self.values[(wrap_index(a, self.grid.m1), wrap_index(b, self.grid.m2))]
    }

    /// Field of d/dpsi1 (`axis` 0) or d/dpsi2 (`axis` 1).
    pub fn derivative(&self, axis: usize) -> TorusField {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let n = if axis == 0 { m.n1 } else { m.n3 };
                Mode {
                    c: m.c * Complex64::new(0.0, n as f64),
                    ..*m
                }
            })
            .collect();
        TorusField::from_modes(modes, self.grid)
    }

    pub fn scale(&self, s: Complex64) -> TorusField {
        let modes = self
            .modes
            .iter()
            .map(|m| Mode { c: m.c * s, ..*m })
            .collect();
        TorusField {
            grid: self.grid,
            values: self.values.map(|v| v * s),
            modes,
        }
    }
}

fn fourier_synthesis(modes: &[Mode], grid: &TorusGrid) -> DMatrix<Complex64> {
    let (m1, m2) = (grid.m1, grid.m2);
    // row-major spectrum, row = n1 mod m1
    let mut buf = vec![Complex64::new(0.0, 0.0); m1 * m2];
    for m in modes {
        let shift = Complex64::from_polar(
            1.0,
            m.n1 as f64 * grid.psi1_start + m.n3 as f64 * grid.psi2_start,
        );
        buf[wrap_index(m.n1, m1) * m2 + wrap_index(m.n3, m2)] += m.c * shift;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(m2).process(&mut buf);
    let mut cols = vec![Complex64::new(0.0, 0.0); m1 * m2];
    for a in 0..m1 {
        for b in 0..m2 {
            cols[b * m1 + a] = buf[a * m2 + b];
        }
    }
    planner.plan_fft_inverse(m1).process(&mut cols);
    DMatrix::from_vec(m1, m2, cols)
}

/// Phi(psi1, psi2) = sum c_{n1,n2,n3} e^{i(n1 psi1 + n3 psi2)}, global e^{iN theta} dropped.
pub fn synthesize(
    eigvec: &[f64],
    basis: &FockBasis,
    grid: &TorusGrid,
) -> Result<TorusField, TorusError> {
    let coeffs: Vec<Complex64> = eigvec.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    synthesize_complex(&coeffs, basis, grid)
}

pub fn synthesize_complex(
    coeffs: &[Complex64],
    basis: &FockBasis,
    grid: &TorusGrid,
) -> Result<TorusField, TorusError> {
    if coeffs.len() != basis.len() {
        return Err(TorusError::DimensionMismatch {
            expected: basis.len(),
            got: coeffs.len(),
        });
    }
    if !grid.resolves(basis.n_particles()) {
        return Err(TorusError::Undersampled {
            m1: grid.m1,
            m2: grid.m2,
            n: basis.n_particles(),
        });
    }
    let modes = basis
        .states()
        .iter()
        .zip(coeffs)
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(s, &c)| Mode {
            n1: s[0] as i64,
            n3: s[2] as i64,
            c,
        })
        .collect();
    Ok(TorusField::from_modes(modes, *grid))
}

pub fn density(field: &TorusField) -> DMatrix<f64> {
    field.values.map(|v| v.norm_sqr())
}

pub fn phase(field: &TorusField) -> DMatrix<f64> {
    field.values.map(|v| v.arg().rem_euclid(TAU))
}

/// Map an angle difference to (-pi, pi].
pub fn principal(d: f64) -> f64 {
    let r = d.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winding {
    pub winding: i64,
    /// Distance of the accumulated advance from the nearest multiple of 2pi, in turns.
    pub residual: f64,
}

/// Phase winding along a closed loop of grid cells; the last cell connects back to the first.
pub fn winding_number(field: &TorusField, cells: &[(usize, usize)]) -> Result<Winding, TorusError> {
    if cells.is_empty() {
        return Err(TorusError::EmptyLoop);
    }
    let rho_max = field
        .values
        .iter()
        .map(|v| v.norm_sqr())
        .fold(0.0, f64::max);
    let floor = DENSITY_FLOOR * rho_max;
    let value = |&(a, b): &(usize, usize)| field.values[(a % field.grid.m1, b % field.grid.m2)];
    for c in cells {
        if value(c).norm_sqr() < floor {
            return Err(TorusError::LoopThroughNode(c.0, c.1));
        }
    }
    let mut total = 0.0;
    for i in 0..cells.len() {
        let next = &cells[(i + 1) % cells.len()];
        let step = principal(value(next).arg() - value(&cells[i]).arg());
        if step.abs() > MAX_PHASE_STEP {
            return Err(TorusError::UnresolvedJump {
                a: next.0,
                b: next.1,
                jump: step,
            });
        }
        total += step;
    }
    let turns = total / TAU;
    let winding = turns.round();
    Ok(Winding {
        winding: winding as i64,
        residual: (turns - winding).abs(),
    })
}

/// Homotopy class (times around psi1, times around psi2) of a closed cell loop,
/// taking the shortest periodic displacement for every step.
pub fn loop_class(grid: &TorusGrid, cells: &[(usize, usize)]) -> (i64, i64) {
    let short = |d: i64, m: usize| {
        let m = m as i64;
        let r = d.rem_euclid(m);
        if 2 * r > m {
            r - m
        } else {
            r
        }
    };
    let (mut da, mut db) = (0i64, 0i64);
    for i in 0..cells.len() {
        let (a0, b0) = cells[i];
        let (a1, b1) = cells[(i + 1) % cells.len()];
        da += short(a1 as i64 - a0 as i64, grid.m1);
        db += short(b1 as i64 - b0 as i64, grid.m2);
    }
    (da / grid.m1 as i64, db / grid.m2 as i64)
}

/// Density-weighted least-squares plane wave e^{i(m1 psi1 + m3 psi2)} fitted to the phase gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlaneWaveFit {
    pub m1: f64,
    pub m3: f64,
    /// RMS deviation of the local wave vector from (m1, m3), density weighted.
    pub residual: f64,
}

impl PlaneWaveFit {
    pub fn rounded(&self) -> (i64, i64) {
        (self.m1.round() as i64, self.m3.round() as i64)
    }
}

pub fn phase_gradient_fit(field: &TorusField) -> PlaneWaveFit {
    let d1 = field.derivative(0);
    let d3 = field.derivative(1);
    // rho * grad(arg Phi) = Im(conj(Phi) grad Phi), regular at nodes
    let mut rho_sum = 0.0;
    let (mut g1_sum, mut g3_sum) = (0.0, 0.0);
    let n = field.values.len();
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let f = field.values[i];
        let rho = f.norm_sqr();
        let g1 = (f.conj() * d1.values[i]).im;
        let g3 = (f.conj() * d3.values[i]).im;
        rho_sum += rho;
        g1_sum += g1;
        g3_sum += g3;
        g.push((rho, g1, g3));
    }
    let m1 = g1_sum / rho_sum;
    let m3 = g3_sum / rho_sum;
    let tiny = f64::MIN_POSITIVE;
    let r2: f64 = g
        .iter()
        .filter(|(rho, _, _)| *rho > tiny)
        .map(|&(rho, g1, g3)| ((g1 - m1 * rho).powi(2) + (g3 - m3 * rho).powi(2)) / rho)
        .sum::<f64>()
        / rho_sum;
    PlaneWaveFit {
        m1,
        m3,
        residual: r2.sqrt(),
    }
}

/// Overlap of two angle states within the fixed-N sector, as a function of the
/// angle difference. Tends to a delta comb for large N; kept as a diagnostic.
pub fn overlap_kernel(n_particles: usize, dpsi1: f64, dpsi2: f64) -> Complex64 {
    let n = n_particles as i64;
    let mut s = Complex64::new(0.0, 0.0);
    for n1 in 0..=n {
        for n3 in 0..=n - n1 {
            s += Complex64::from_polar(1.0, n1 as f64 * dpsi1 + n3 as f64 * dpsi2);
        }
    }
    s
}

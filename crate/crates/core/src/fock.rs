//! Fixed-N number basis, Bose-Hubbard Hamiltonian and its dense eigendecomposition.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FockError {
    #[error("basis holds N={basis} particles but params request N={params}")]
    ParticleMismatch { basis: usize, params: usize },
    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

/// Parameters of the three-mode model.
///
/// `Default` is the reference run: x = 0.1, k12 = k23 = 0.5, N = 30 and
/// frequencies (-0.1, 0, 0.1), rising from well 1 to well 3. The spectrum
/// does not depend on that orientation; [`ModelParams::mirrored`] gives the
/// other one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub omega: [f64; 3],
    pub x: [f64; 3],
    pub k12: f64,
    pub k23: f64,
    pub n_particles: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            omega: [-0.1, 0.0, 0.1],
            x: [0.1, 0.1, 0.1],
            k12: 0.5,
            k23: 0.5,
            n_particles: 30,
        }
    }
}

impl ModelParams {
    /// Total classical action K = N + 3/2.
    pub fn k_total(&self) -> f64 {
        self.n_particles as f64 + 1.5
    }

    /// Relabel wells 1 and 3.
    pub fn mirrored(&self) -> Self {
        Self {
            omega: [self.omega[2], self.omega[1], self.omega[0]],
            x: [self.x[2], self.x[1], self.x[0]],
            k12: self.k23,
            k23: self.k12,
            n_particles: self.n_particles,
        }
    }

    pub fn uncoupled(&self) -> Self {
        Self {
            k12: 0.0,
            k23: 0.0,
            ..*self
        }
    }

    pub fn with_particles(&self, n: usize) -> Self {
        Self {
            n_particles: n,
            ..*self
        }
    }
}

/// All (n1, n2, n3) with n1 + n2 + n3 = N, ordered by descending n1, then descending n2.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    n: usize,
    states: Vec<[usize; 3]>,
}

impl FockBasis {
    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[[usize; 3]] {
        &self.states
    }

    pub fn state(&self, i: usize) -> [usize; 3] {
        self.states[i]
    }

    pub fn index_of(&self, s: [usize; 3]) -> Option<usize> {
        if s[0] + s[1] + s[2] != self.n {
            return None;
        }
        let r = self.n - s[0];
        Some(r * (r + 1) / 2 + (r - s[1]))
    }
}

pub fn enumerate_basis(n_particles: usize) -> FockBasis {
    let n = n_particles;
    let mut states = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for n1 in (0..=n).rev() {
        for n2 in (0..=n - n1).rev() {
            states.push([n1, n2, n - n1 - n2]);
        }
    }
    FockBasis { n, states }
}

fn diagonal(params: &ModelParams, s: [usize; 3]) -> f64 {
    (0..3)
        .map(|j| {
            let h = s[j] as f64 + 0.5;
            params.omega[j] * h + params.x[j] * h * h
        })
        .sum()
}

/// Hamiltonian restricted to an arbitrary list of number states.
///
/// Hops whose target is missing from `states` are dropped, so a list mixing
/// several particle numbers shows directly that sectors never couple.
pub fn hamiltonian_on_states(params: &ModelParams, states: &[[usize; 3]]) -> DMatrix<f64> {
    let index: HashMap<[usize; 3], usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let l = states.len();
    let mut h = DMatrix::zeros(l, l);
    for (i, &s) in states.iter().enumerate() {
        h[(i, i)] = diagonal(params, s);
        // a1† a2 and a3† a2; the transposed entries supply the reverse hops
        if s[1] > 0 {
            let t = [s[0] + 1, s[1] - 1, s[2]];
            if let Some(&j) = index.get(&t) {
                let v = -0.5 * params.k12 * ((s[0] + 1) as f64).sqrt() * (s[1] as f64).sqrt();
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
            let t = [s[0], s[1] - 1, s[2] + 1];
            if let Some(&j) = index.get(&t) {
                let v = -0.5 * params.k23 * ((s[2] + 1) as f64).sqrt() * (s[1] as f64).sqrt();
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
    }
    h
}

pub fn build_hamiltonian(
    params: &ModelParams,
    basis: &FockBasis,
) -> Result<DMatrix<f64>, FockError> {
    if basis.n != params.n_particles {
        return Err(FockError::ParticleMismatch {
            basis: basis.n,
            params: params.n_particles,
        });
    }
    Ok(hamiltonian_on_states(params, &basis.states))
}

/// Ascending eigenvalues; column k of `vectors` is eigenstate k+1 in basis order.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Coefficients of the eigenstate with 1-based `label`.
    pub fn state(&self, label: usize) -> Vec<f64> {
        self.vectors.column(label - 1).iter().copied().collect()
    }
}

pub fn diagonalize(h: &DMatrix<f64>) -> Result<EigenSystem, FockError> {
    let (rows, cols) = h.shape();
    if rows != cols {
        return Err(FockError::NotSquare { rows, cols });
    }
    let deviation = (h - h.transpose()).amax();
    if deviation > 1e-12 {
        return Err(FockError::NotSymmetric { deviation });
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(rows, rows);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    Ok(EigenSystem { energies, vectors })
}

/// Basis plus eigensystem for `params`.
pub fn solve(params: &ModelParams) -> (FockBasis, EigenSystem) {
    let basis = enumerate_basis(params.n_particles);
    let h = hamiltonian_on_states(params, &basis.states);
    let eig = diagonalize(&h).expect("assembled Hamiltonian is symmetric");
    (basis, eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_orientation() -> ModelParams {
        ModelParams {
            omega: [0.1, 0.0, -0.1],
            ..ModelParams::default()
        }
    }

    #[test]
    fn basis_sizes() {
        assert_eq!(enumerate_basis(0).states(), &[[0, 0, 0]]);
        assert_eq!(enumerate_basis(2).len(), 6);
        assert_eq!(enumerate_basis(30).len(), 496);
    }

    #[test]
    fn index_of_is_inverse() {
        let b = enumerate_basis(9);
        for (i, &s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        assert_eq!(b.index_of([1, 1, 1]), None);
    }

    #[test]
    fn small_matrix_elements() {
        let p = spec_orientation().with_particles(1);
        let b = enumerate_basis(1);
        let h = build_hamiltonian(&p, &b).unwrap();
        let i100 = b.index_of([1, 0, 0]).unwrap();
        let i010 = b.index_of([0, 1, 0]).unwrap();
        assert!((h[(i100, i100)] - 0.375).abs() < 1e-15);
        assert!((h[(i010, i100)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn mismatch_rejected() {
        let b = enumerate_basis(3);
        let err = build_hamiltonian(&ModelParams::default(), &b).unwrap_err();
        assert_eq!(
            err,
            FockError::ParticleMismatch {
                basis: 3,
                params: 30
            }
        );
    }

    #[test]
    fn asymmetric_rejected() {
        let mut h = DMatrix::identity(3, 3);
        h[(0, 1)] = 1e-9;
        assert!(matches!(
            diagonalize(&h),
            Err(FockError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn single_state() {
        let p = ModelParams::default().with_particles(0);
        let (b, eig) = solve(&p);
        let h = build_hamiltonian(&p, &b).unwrap();
        assert_eq!(eig.len(), 1);
        assert_eq!(eig.energies[0], h[(0, 0)]);
    }

    #[test]
    fn sectors_do_not_couple() {
        let p = ModelParams::default();
        let mut states = enumerate_basis(4).states().to_vec();
        states.extend_from_slice(enumerate_basis(5).states());
        states.extend_from_slice(enumerate_basis(6).states());
        let h = hamiltonian_on_states(&p, &states);
        let total = |s: [usize; 3]| s[0] + s[1] + s[2];
        for i in 0..states.len() {
            for j in 0..states.len() {
                if total(states[i]) != total(states[j]) {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn eigenvectors_orthonormal_and_sign_fixed() {
        let (_, eig) = solve(&ModelParams::default().with_particles(12));
        let g = eig.vectors.transpose() * &eig.vectors;
        let l = eig.len();
        assert!((g - DMatrix::<f64>::identity(l, l)).amax() < 1e-10);
        for k in 0..l {
            let col = eig.vectors.column(k);
            let pivot = col
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap();
            assert!(pivot > 0.0);
        }
        assert!(eig.energies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn trace_equals_eigenvalue_sum() {
        let p = ModelParams::default();
        let (b, eig) = solve(&p);
        let h = build_hamiltonian(&p, &b).unwrap();
        let tr = h.trace();
        let sum: f64 = eig.energies.iter().sum();
        assert!(((tr - sum) / tr).abs() < 1e-8);
    }

    #[test]
    fn mirror_symmetry_of_spectrum() {
        for n in 0..=6 {
            let p = spec_orientation().with_particles(n);
            let (_, a) = solve(&p);
            let (_, b) = solve(&p.mirrored());
            let (_, c) = solve(&ModelParams {
                omega: [-0.1, 0.0, 0.1],
                ..p
            });
            for k in 0..a.len() {
                assert!((a.energies[k] - b.energies[k]).abs() < 1e-12);
                assert!((a.energies[k] - c.energies[k]).abs() < 1e-12);
            }
        }
    }

    /// Eigenvalues of a symmetric matrix as roots of det(H - E) found by
    /// sign changes of a Sturm-free LU determinant scan plus bisection.
    fn char_poly_roots(h: &DMatrix<f64>) -> Vec<f64> {
        let det = |e: f64| (h - DMatrix::identity(h.nrows(), h.ncols()) * e).determinant();
        let r = h.abs().row_sum().max() + 1.0;
        let steps = 200_000;
        let mut roots = Vec::new();
        let mut prev = det(-r);
        let mut x0 = -r;
        for i in 1..=steps {
            let x1 = -r + 2.0 * r * i as f64 / steps as f64;
            let cur = det(x1);
            if cur == 0.0 || prev.signum() != cur.signum() {
                let (mut lo, mut hi, mut flo) = (x0, x1, prev);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let fm = det(mid);
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = cur;
            x0 = x1;
        }
        roots
    }

    #[test]
    fn n2_matches_characteristic_polynomial() {
        let p = ModelParams::default().with_particles(2);
        let (b, eig) = solve(&p);
        let h = build_hamiltonian(&p, &b).unwrap();
        let roots = char_poly_roots(&h);
        assert_eq!(roots.len(), 6);
        for (r, e) in roots.iter().zip(&eig.energies) {
            assert!((r - e).abs() < 1e-9, "{r} vs {e}");
        }
    }
}

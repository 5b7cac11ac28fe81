//! Adaptive Dormand-Prince 5(4) integrator with continuous output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("vector field failed at t={t}: {msg}")]
    Field { t: f64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 50_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub type Field<'a, const D: usize> = dyn Fn(f64, &[f64; D]) -> Result<[f64; D], String> + 'a;

/// One accepted step together with its interpolation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Step<const D: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; D],
    pub y1: [f64; D],
    r: [[f64; D]; 5],
}

impl<const D: usize> Step<D> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Fourth-order continuous extension on [t0, t0 + h].
    pub fn interpolate(&self, t: f64) -> [f64; D] {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let mut y = [0.0; D];
        for i in 0..D {
            let r = &self.r;
            y[i] = r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])));
        }
        y
    }
}

pub struct Dopri5<'a, const D: usize> {
    f: &'a Field<'a, D>,
    tol: Tolerances,
    t: f64,
    y: [f64; D],
    k1: [f64; D],
    h: f64,
    steps: usize,
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..D {
            out[i] += h * c * k[i];
        }
    }
    out
}

impl<'a, const D: usize> Dopri5<'a, D> {
    pub fn new(
        f: &'a Field<'a, D>,
        t0: f64,
        y0: [f64; D],
        tol: Tolerances,
    ) -> Result<Self, OdeError> {
        let k1 = f(t0, &y0).map_err(|msg| OdeError::Field { t: t0, msg })?;
        let norm = |v: &[f64; D]| {
            ((0..D)
                .map(|i| (v[i] / (tol.atol + tol.rtol * y0[i].abs())).powi(2))
                .sum::<f64>()
                / D as f64)
                .sqrt()
        };
        let (d0, d1) = (norm(&y0), norm(&k1));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let k2 = f(t0 + h0, &axpy(&y0, h0, &[(1.0, &k1)]))
            .map_err(|msg| OdeError::Field { t: t0, msg })?;
        let mut diff = [0.0; D];
        for i in 0..D {
            diff[i] = k2[i] - k1[i];
        }
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let h = (100.0 * h0).min(h1);
        Ok(Self {
            f,
            tol,
            t: t0,
            y: y0,
            k1,
            h,
            steps: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; D] {
        &self.y
    }

    fn eval(&self, t: f64, y: &[f64; D]) -> Result<[f64; D], OdeError> {
        (self.f)(t, y).map_err(|msg| OdeError::Field { t, msg })
    }

    /// Advance by one accepted step, never passing `t_max`.
    pub fn step(&mut self, t_max: f64) -> Result<Step<D>, OdeError> {
        loop {
            self.steps += 1;
            if self.steps > self.tol.max_steps {
                return Err(OdeError::TooManySteps(self.tol.max_steps));
            }
            let h = self.h.min(t_max - self.t);
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow { t: self.t });
            }
            let (t, y, k1) = (self.t, self.y, self.k1);
            let k2 = self.eval(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]))?;
            let k3 = self.eval(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = self.eval(
                t + C4 * h,
                &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = self.eval(
                t + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = self.eval(
                t + h,
                &axpy(
                    &y,
                    h,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            )?;
            let y1 = axpy(
                &y,
                h,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            if y1.iter().any(|v| !v.is_finite()) {
                self.h = 0.25 * h;
                continue;
            }
            let k7 = self.eval(t + h, &y1)?;
            let mut err = 0.0;
            for i in 0..D {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y1[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / D as f64).sqrt();
            if err <= 1.0 {
                let mut r = [[0.0; D]; 5];
                for i in 0..D {
                    let dy = y1[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    r[0][i] = y[i];
                    r[1][i] = dy;
                    r[2][i] = bspl;
                    r[3][i] = dy - h * k7[i] - bspl;
                    r[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = h * fac;
                self.t = t + h;
                self.y = y1;
                self.k1 = k7;
                return Ok(Step {
                    t0: t,
                    h,
                    y0: y,
                    y1,
                    r,
                });
            }
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
}

/// One unadapted fifth-order step of size `h` from (t, y).
pub fn single_step<const D: usize>(
    f: &Field<'_, D>,
    t: f64,
    y: &[f64; D],
    h: f64,
) -> Result<[f64; D], OdeError> {
    let eval = |t: f64, y: &[f64; D]| f(t, y).map_err(|msg| OdeError::Field { t, msg });
    let k1 = eval(t, y)?;
    let k2 = eval(t + C2 * h, &axpy(y, h, &[(A21, &k1)]))?;
    let k3 = eval(t + C3 * h, &axpy(y, h, &[(A31, &k1), (A32, &k2)]))?;
    let k4 = eval(
        t + C4 * h,
        &axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
    )?;
    let k5 = eval(
        t + C5 * h,
        &axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = eval(
        t + h,
        &axpy(
            y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
    )?;
    Ok(axpy(
        y,
        h,
        &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    ))
}

/// Integrate to `t_end`, sampling at t0, t0 + dt, ... and always at `t_end`.
pub fn integrate_sampled<const D: usize>(
    f: &Field<'_, D>,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    dt: f64,
    tol: Tolerances,
) -> Result<(Vec<f64>, Vec<[f64; D]>), OdeError> {
    let mut ts = vec![t0];
    let mut ys = vec![y0];
    if t_end <= t0 {
        return Ok((ts, ys));
    }
    let mut solver = Dopri5::new(f, t0, y0, tol)?;
    let mut k = 1usize;
    while solver.t() < t_end {
        let step = solver.step(t_end)?;
        loop {
            let ts_k = t0 + k as f64 * dt;
            if ts_k > step.t1() || ts_k >= t_end {
                break;
            }
            ts.push(ts_k);
            ys.push(step.interpolate(ts_k));
            k += 1;
        }
    }
    ts.push(t_end);
    ys.push(*solver.y());
    Ok((ts, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase_accuracy() {
        let f = |_t: f64, y: &[f64; 2]| -> Result<[f64; 2], String> { Ok([y[1], -y[0]]) };
        let (ts, ys) =
            integrate_sampled(&f, 0.0, [1.0, 0.0], 100.0, 0.37, Tolerances::default()).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-9, "t={t}");
            assert!((y[1] + t.sin()).abs() < 1e-9);
        }
        assert_eq!(*ts.last().unwrap(), 100.0);
    }

    #[test]
    fn exponential_growth() {
        let f = |_t: f64, y: &[f64; 1]| -> Result<[f64; 1], String> { Ok([y[0]]) };
        let tol = Tolerances {
            rtol: 1e-10,
            atol: 1e-14,
            ..Tolerances::default()
        };
        let (_, ys) = integrate_sampled(&f, 0.0, [1.0], 5.0, 1.0, tol).unwrap();
        assert!((ys.last().unwrap()[0] / 5f64.exp() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn field_errors_propagate() {
        let f = |t: f64, y: &[f64; 1]| -> Result<[f64; 1], String> {
            if t > 1.0 {
                Err("boundary".to_string())
            } else {
                Ok([y[0]])
            }
        };
        let r = integrate_sampled(&f, 0.0, [1.0], 2.0, 0.5, Tolerances::default());
        assert!(matches!(r, Err(OdeError::Field { .. })));
    }
}

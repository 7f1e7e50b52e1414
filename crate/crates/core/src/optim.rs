//! Unconstrained local minimisers used by the likelihood fits.
//!
//! Objectives may return `f64::INFINITY` (or NaN) to reject a point; both
//! methods treat that as "worse than anything finite".

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Stop when the simplex's value spread falls below this.
    pub f_tol: f64,
    /// Initial simplex edge, relative to `max(|x_i|, 0.1)`.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            f_tol: 1e-10,
            step: 0.1,
        }
    }
}

impl NelderMead {
    /// Dimension-adaptive Nelder-Mead.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let nf = n as f64;
        let (alpha, beta, gamma, delta) = (
            1.0,
            1.0 + 2.0 / nf,
            0.75 - 1.0 / (2.0 * nf),
            1.0 - 1.0 / nf,
        );
        let eval = |x: &[f64]| sanitize(f(x));
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), eval(x0)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.step * x0[i].abs().max(0.1);
            let v = eval(&x);
            simplex.push((x, v));
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            if best.is_finite() && (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) {
                converged = true;
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / nf;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(beta);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(gamma * alpha);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-gamma);
                let v = eval(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let x_best = simplex[0].0.clone();
            for (x, v) in simplex.iter_mut().skip(1) {
                for (xi, bi) in x.iter_mut().zip(&x_best) {
                    *xi = bi + delta * (*xi - bi);
                }
                *v = eval(x);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            iterations,
            converged,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Bfgs {
    pub max_iter: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub g_tol: f64,
    pub f_tol: f64,
}

impl Default for Bfgs {
    fn default() -> Self {
        Self {
            max_iter: 500,
            g_tol: 1e-6,
            f_tol: 1e-13,
        }
    }
}

/// Central-difference gradient.
pub fn numerical_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1e-2);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

impl Bfgs {
    /// BFGS on an inverse-Hessian approximation with central-difference
    /// gradients and a backtracking Armijo line search.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let f = |x: &[f64]| sanitize(f(x));
        let n = x0.len();
        let mut x = x0.to_vec();
        let mut fx = f(&x);
        if !fx.is_finite() {
            return Minimum {
                x,
                value: fx,
                iterations: 0,
                converged: false,
            };
        }
        let mut g = numerical_gradient(&f, &x);
        let mut h = identity(n);
        let mut converged = false;
        let mut iterations = 0;
        let mut fresh = true;
        while iterations < self.max_iter {
            iterations += 1;
            if g.iter().all(|v| v.is_finite()) && inf_norm(&g) < self.g_tol {
                converged = true;
                break;
            }
            let mut dir: Vec<f64> = (0..n).map(|i| -dot_row(&h[i], &g)).collect();
            let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            if !(slope < 0.0) {
                // Not a descent direction: restart from steepest descent.
                h = identity(n);
                dir = g.iter().map(|v| -v).collect();
                slope = -g.iter().map(|v| v * v).sum::<f64>();
                fresh = true;
            }
            let mut t = if fresh {
                (1.0 / inf_norm(&dir).max(1e-12)).min(1.0)
            } else {
                1.0
            };
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let fnew = f(&xn);
                if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fnew));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, fnew)) = accepted else {
                if fresh {
                    break;
                }
                h = identity(n);
                fresh = true;
                continue;
            };
            let gn = numerical_gradient(&f, &xn);
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let df = fx - fnew;
            x = xn;
            g = gn;
            fx = fnew;
            if df.abs() <= self.f_tol * (1.0 + fx.abs()) && !fresh {
                converged = inf_norm(&g) < self.g_tol * 1e3;
                break;
            }
            fresh = false;
            if sy > 1e-12 {
                let hy: Vec<f64> = (0..n).map(|i| dot_row(&h[i], &y)).collect();
                let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
                let rho = 1.0 / sy;
                for i in 0..n {
                    for j in 0..n {
                        h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j]
                            - hy[i] * s[j]
                            - s[i] * hy[j]);
                    }
                }
            }
        }
        Minimum {
            x,
            value: fx,
            iterations,
            converged,
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot_row(r: &[f64], v: &[f64]) -> f64 {
    r.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Central-difference Hessian.
pub fn numerical_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let hs: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let mut hess = vec![vec![0.0; n]; n];
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        p[i] = x[i] + hs[i];
        let fp = f(&p);
        p[i] = x[i] - hs[i];
        let fm = f(&p);
        p[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i]);
        for j in 0..i {
            let mut e = |di: f64, dj: f64| {
                p[i] = x[i] + di * hs[i];
                p[j] = x[j] + dj * hs[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0))
                / (4.0 * hs[i] * hs[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

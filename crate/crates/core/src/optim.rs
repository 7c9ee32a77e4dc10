//! Local minimizers used by the MAP search.
//!
//! [`bfgs`] is a quasi-Newton method with central finite-difference
//! gradients and a backtracking Armijo line search; it is meant for smooth
//! objectives. [`nelder_mead`] is a derivative-free simplex method for
//! piecewise-constant or otherwise non-smooth objectives.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeSettings {
    /// Gradient infinity-norm at which BFGS stops.
    pub grad_tol: f64,
    /// BFGS: relative step size at which progress counts as stalled.
    /// Nelder-Mead: simplex diameter (infinity-norm) at which it stops.
    pub step_tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &mut [f64]) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0` by BFGS.
///
/// Converged means either the gradient infinity-norm fell below `grad_tol`,
/// or no descent step longer than `step_tol * (1 + |x|)` could reduce `f`
/// any further (the iterate is stationary to working precision). The
/// returned value never exceeds `f(x0)`.
pub fn bfgs(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], s: &MinimizeSettings) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = vec![0.0; n];
    fd_gradient(f, &x, &mut g);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < s.max_iters {
        if inf_norm(&g) < s.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = mat_vec(&h, &g).iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        if fresh {
            // keep the first step of a fresh curvature model at unit length
            let scale = 1.0 / inf_norm(&dir).max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
            slope *= scale;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            if fresh {
                // steepest descent cannot improve either
                converged = stalled(&dir, alpha, &x, s.step_tol);
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut gn = vec![0.0; n];
        fd_gradient(f, &xn, &mut gn);
        let yk: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &yk);
        let small_step = inf_norm(&step) < s.step_tol * (1.0 + inf_norm(&x));
        let decrease = fx - fxn;
        x = xn;
        fx = fxn;
        g = gn;
        if small_step && decrease <= 1e-14 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        if sy > 1e-300 {
            if fresh {
                let scale = sy / dot(&yk, &yk);
                h = identity(n);
                h.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
                fresh = false;
            }
            bfgs_update(&mut h, &step, &yk, sy);
        }
    }
    Minimum {
        point: x,
        value: fx,
        converged,
        iterations,
    }
}

fn stalled(dir: &[f64], alpha: f64, x: &[f64], step_tol: f64) -> bool {
    alpha * inf_norm(dir) < step_tol * (1.0 + inf_norm(x)).max(1.0) || alpha < 1e-20
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Inverse-Hessian update `H <- (I - r s y') H (I - r y s') + r s s'`, `r = 1/(y's)`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    // keep symmetric against rounding drift
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = avg;
            h[j][i] = avg;
        }
    }
}

/// Minimizes `f` from `x0` with the Nelder-Mead simplex method
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// The initial simplex offsets each coordinate by `0.05 * (1 + |x0_i|)`.
/// Converged means the simplex diameter fell below `step_tol`.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], s: &MinimizeSettings) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += 0.05 * (1.0 + x0[i].abs());
        let v = f(&p);
        simplex.push((p, v));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        // stable sort keeps the earlier vertex first on ties
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };
    let mut iterations = 0;
    let mut converged = false;
    order(&mut simplex);
    while iterations < s.max_iters {
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0, f64::max);
        if diameter < s.step_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let fp = f(&p);
                    *v = (p, fp);
                }
            }
        }
        order(&mut simplex);
    }
    let (point, value) = simplex.swap_remove(0);
    Minimum {
        point,
        value,
        converged,
        iterations,
    }
}

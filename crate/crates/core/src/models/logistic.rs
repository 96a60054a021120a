//! Logistic regression by full-batch proximal gradient descent.
//!
//! The objective is the mean log-loss plus `penalty(w) / (C * n)`, which is the
//! usual `C * sum(loss) + penalty(w)` divided by `C * n`. The bias is never
//! penalized. `l2` uses `0.5 * |w|^2` and `l1` uses `|w|_1` (handled by a soft
//! threshold step, so no subgradient is ever taken).
//!
//! Without `standard_scale` the solver still works in coordinates divided by
//! each column's root mean square, with the penalty reweighted so the optimum
//! is exactly that of the raw problem. This only changes conditioning.

use super::scaling::{column_rms, Standardizer};
use super::{LinearFit, LogisticParams, Penalty};

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    z: &'a [f64],
    d: usize,
    y: &'a [u8],
    lam: f64,
    /// Per-coordinate penalty weight.
    pen: Vec<f64>,
    penalty: Penalty,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// Smooth part of the objective (loss, plus the l2 term) and its gradient.
    fn smooth(&self, v: &[f64], b: f64, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
        let n = self.n();
        let mut loss = 0.0;
        let mut gb = 0.0;
        let mut g = grad;
        if let Some((gv, _)) = g.as_mut() {
            gv.iter_mut().for_each(|x| *x = 0.0);
        }
        for (row, &yi) in self.z.chunks_exact(self.d).zip(self.y) {
            let m = b + row.iter().zip(v).map(|(a, w)| a * w).sum::<f64>();
            // loss = softplus(m) - y m
            loss += softplus(m) - f64::from(yi) * m;
            if let Some((gv, _)) = g.as_mut() {
                let r = sigmoid(m) - f64::from(yi);
                gb += r;
                for (gj, a) in gv.iter_mut().zip(row) {
                    *gj += r * a;
                }
            }
        }
        let mut f = loss / n;
        if let Some((gv, gbo)) = g {
            gv.iter_mut().for_each(|x| *x /= n);
            *gbo = gb / n;
            if self.penalty == Penalty::L2 {
                for ((gj, vj), pj) in gv.iter_mut().zip(v).zip(&self.pen) {
                    *gj += self.lam * pj * vj;
                }
            }
        }
        if self.penalty == Penalty::L2 {
            f += 0.5
                * self.lam
                * v.iter()
                    .zip(&self.pen)
                    .map(|(vj, pj)| pj * vj * vj)
                    .sum::<f64>();
        }
        f
    }

    fn nonsmooth(&self, v: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L1 => {
                self.lam
                    * v.iter()
                        .zip(&self.pen)
                        .map(|(vj, pj)| pj * vj.abs())
                        .sum::<f64>()
            }
            _ => 0.0,
        }
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        if self.penalty == Penalty::L1 {
            for (vj, pj) in v.iter_mut().zip(&self.pen) {
                let t = step * self.lam * pj;
                *vj = vj.signum() * (vj.abs() - t).max(0.0);
            }
        }
    }

    /// Infinity norm of the minimum-norm subgradient (0 exactly at the optimum).
    fn optimality(&self, v: &[f64], g: &[f64], gb: f64, fit_intercept: bool) -> f64 {
        let mut worst = if fit_intercept { gb.abs() } else { 0.0 };
        for ((vj, gj), pj) in v.iter().zip(g).zip(&self.pen) {
            let r = match self.penalty {
                Penalty::L1 => {
                    let t = self.lam * pj;
                    if *vj != 0.0 {
                        (gj + t * vj.signum()).abs()
                    } else {
                        (gj.abs() - t).max(0.0)
                    }
                }
                _ => gj.abs(),
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Penalized objective on raw features: `params` holds the `d` weights
/// followed by the bias. Returns the value and its gradient (for `l1` the
/// gradient uses `sign(w)`, valid away from zero).
pub fn objective(
    x: &[f64],
    d: usize,
    y: &[u8],
    params: &[f64],
    penalty: Penalty,
    c: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(params.len(), d + 1, "params must hold d weights and a bias");
    let p = Problem {
        z: x,
        d,
        y,
        lam: 1.0 / (c * y.len() as f64),
        pen: vec![1.0; d],
        penalty,
    };
    let (v, b) = params.split_at(d);
    let mut g = vec![0.0; d];
    let mut gb = 0.0;
    let f = p.smooth(v, b[0], Some((&mut g, &mut gb))) + p.nonsmooth(v);
    if penalty == Penalty::L1 {
        for (gj, vj) in g.iter_mut().zip(v) {
            *gj += p.lam * vj.signum();
        }
    }
    g.push(gb);
    (f, g)
}

pub(crate) fn fit(x: &[f64], d: usize, y: &[u8], hp: &LogisticParams) -> LinearFit {
    let (z, scaler, rms) = if hp.standard_scale {
        let s = Standardizer::fit(x, d);
        (s.transform(x), Some(s), None)
    } else {
        let rms = column_rms(x, d);
        let mut z = x.to_vec();
        for row in z.chunks_exact_mut(d) {
            for (v, r) in row.iter_mut().zip(&rms) {
                *v /= r;
            }
        }
        (z, None, Some(rms))
    };
    // raw w_j = v_j / rms_j, so penalties on w become reweighted penalties on v
    let pen = match (&rms, hp.penalty) {
        (Some(r), Penalty::L2) => r.iter().map(|r| 1.0 / (r * r)).collect(),
        (Some(r), Penalty::L1) => r.iter().map(|r| 1.0 / r).collect(),
        _ => vec![1.0; d],
    };
    let problem = Problem {
        z: &z,
        d,
        y,
        lam: 1.0 / (hp.c * y.len() as f64),
        pen,
        penalty: hp.penalty,
    };

    let mut v = vec![0.0; d];
    let mut b = 0.0;
    let mut g = vec![0.0; d];
    let mut gb = 0.0;
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut cand = vec![0.0; d];
    while iterations < hp.max_iter {
        let f = problem.smooth(&v, b, Some((&mut g, &mut gb)));
        if !hp.fit_intercept {
            gb = 0.0;
        }
        if problem.optimality(&v, &g, gb, hp.fit_intercept) <= hp.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // backtracking on the quadratic upper bound of the smooth part
        loop {
            for ((c, vj), gj) in cand.iter_mut().zip(&v).zip(&g) {
                *c = vj - step * gj;
            }
            problem.prox(&mut cand, step);
            let cb = b - step * gb;
            let fc = problem.smooth(&cand, cb, None);
            let mut lin = (cb - b) * gb;
            let mut sq = (cb - b) * (cb - b);
            for ((c, vj), gj) in cand.iter().zip(&v).zip(&g) {
                lin += (c - vj) * gj;
                sq += (c - vj) * (c - vj);
            }
            if fc <= f + lin + sq / (2.0 * step) + 1e-15 * f.abs() || step < 1e-12 {
                v.copy_from_slice(&cand);
                b = cb;
                break;
            }
            step *= 0.5;
        }
        step = (step * 2.0).min(1e6);
    }
    if !converged && iterations == hp.max_iter {
        let _ = problem.smooth(&v, b, Some((&mut g, &mut gb)));
        if !hp.fit_intercept {
            gb = 0.0;
        }
        converged = problem.optimality(&v, &g, gb, hp.fit_intercept) <= hp.tol;
    }

    let weights = match rms {
        Some(r) => v.iter().zip(&r).map(|(vj, rj)| vj / rj).collect(),
        None => v,
    };
    LinearFit {
        weights,
        bias: b,
        scaler,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed_: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = seed::rng(seed_);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.gen_range(0.0..100.0);
            x.extend([a, b]);
            let z = 2.0 * a + 0.03 * (b - 50.0);
            y.push(u8::from(rng.gen::<f64>() < sigmoid(z)));
        }
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = data(200, 1);
        let mut rng = seed::rng(2);
        for penalty in [Penalty::L2, Penalty::L1, Penalty::None] {
            for _ in 0..10 {
                let p: Vec<f64> = (0..3)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (_, g) = objective(&x, 2, &y, &p, penalty, 0.3);
                for k in 0..3 {
                    let h = 1e-6 * p[k].abs().max(1.0);
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[k] += h;
                    b[k] -= h;
                    let fd = (objective(&x, 2, &y, &a, penalty, 0.3).0
                        - objective(&x, 2, &y, &b, penalty, 0.3).0)
                        / (2.0 * h);
                    let rel = (fd - g[k]).abs() / g[k].abs().max(1e-8);
                    assert!(rel < 1e-5, "{penalty:?} k={k} fd={fd} g={}", g[k]);
                }
            }
        }
    }

    #[test]
    fn unscaled_fit_is_stationary_for_raw_objective() {
        // with standard_scale=false the preconditioning must not move the optimum
        let (x, y) = data(400, 3);
        let hp = LogisticParams {
            standard_scale: false,
            tol: 1e-9,
            max_iter: 20_000,
            c: 0.5,
            ..Default::default()
        };
        let fit1 = fit(&x, 2, &y, &hp);
        assert!(fit1.converged);
        let mut params = fit1.weights.clone();
        params.push(fit1.bias);
        let (_, g) = objective(&x, 2, &y, &params, Penalty::L2, 0.5);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn l1_produces_exact_zeros_for_noise() {
        let mut rng = seed::rng(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..300 {
            let a: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            x.extend([a, noise]);
            y.push(u8::from(a > 0.0));
        }
        let hp = LogisticParams {
            penalty: Penalty::L1,
            c: 0.01,
            tol: 1e-8,
            max_iter: 5000,
            ..Default::default()
        };
        let f = fit(&x, 2, &y, &hp);
        assert_eq!(f.weights[1], 0.0);
        assert!(f.weights[0] > 0.0);
    }

    #[test]
    fn loose_tolerance_stops_immediately() {
        let (x, y) = data(100, 9);
        let hp = LogisticParams {
            tol: 10.0,
            ..Default::default()
        };
        let f = fit(&x, 2, &y, &hp);
        assert!(f.converged);
        assert_eq!(f.iterations, 0);
        let hp = LogisticParams {
            tol: 1e-12,
            max_iter: 3,
            ..Default::default()
        };
        let f = fit(&x, 2, &y, &hp);
        assert!(!f.converged);
        assert_eq!(f.iterations, 3);
    }
}

//! Linear SVM trained with Pegasos-style stochastic subgradient steps on
//!
//! ```text
//! lambda/2 * |w|^2 + mean(max(0, 1 - y (w.x + b))),   lambda = 1 / (C n)
//! ```
//!
//! The bias is learned as the weight of a constant feature. Each pass visits
//! the rows in a seeded random order; the returned weights are the average of
//! the iterates of the last pass. `max_iter` counts passes and `tol` is the
//! relative change of the objective between passes.
//!
//! Confidence scores are Platt-calibrated on out-of-fold margins.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::scaling::{column_rms, Standardizer};
use super::{LinearFit, SvmParams};

const FOLDS: usize = 3;

/// `p = sigmoid(a * margin + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
    /// True when a fold had a single class and the identity sigmoid was used.
    pub fallback: bool,
}

impl Calibration {
    pub const IDENTITY: Calibration = Calibration {
        a: 1.0,
        b: 0.0,
        fallback: true,
    };

    pub fn apply(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.b)
    }
}

struct Fitted {
    w: Vec<f64>,
    iterations: u32,
    converged: bool,
}

fn objective(z: &[f64], d: usize, y: &[u8], idx: &[usize], w: &[f64], lam: f64) -> f64 {
    let hinge: f64 = idx
        .iter()
        .map(|&i| {
            let row = &z[i * d..(i + 1) * d];
            let m = w[d] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            (1.0 - sign(y[i]) * m).max(0.0)
        })
        .sum();
    0.5 * lam * w.iter().map(|v| v * v).sum::<f64>() + hinge / idx.len() as f64
}

fn sign(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Pegasos on the rows `idx` of the transformed matrix `z`. The returned
/// vector has `d + 1` entries, the last being the bias.
fn pegasos(
    z: &[f64],
    d: usize,
    y: &[u8],
    idx: &[usize],
    hp: &SvmParams,
    rng: &mut ChaCha8Rng,
) -> Fitted {
    let lam = 1.0 / (hp.c * idx.len() as f64);
    let radius = 1.0 / lam.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut order = idx.to_vec();
    let mut t = 0u64;
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < hp.max_iter {
        iterations += 1;
        order.shuffle(rng);
        avg.iter_mut().for_each(|v| *v = 0.0);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lam * t as f64);
            let row = &z[i * d..(i + 1) * d];
            let yi = sign(y[i]);
            let m = w[d] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - 1.0 / t as f64;
            w.iter_mut().for_each(|v| *v *= shrink);
            if yi * m < 1.0 {
                for (wj, a) in w.iter_mut().zip(row) {
                    *wj += eta * yi * a;
                }
                w[d] += eta * yi;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            for (a, v) in avg.iter_mut().zip(&w) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|v| *v /= order.len() as f64);
        let obj = objective(z, d, y, idx, &avg, lam);
        if (prev - obj).abs() <= hp.tol * obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = obj;
    }
    Fitted {
        w: avg,
        iterations,
        converged,
    }
}

pub(crate) fn fit(
    x: &[f64],
    d: usize,
    y: &[u8],
    hp: &SvmParams,
    rng: &mut ChaCha8Rng,
) -> (LinearFit, Calibration) {
    let n = y.len();
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

    let all: Vec<usize> = (0..n).collect();
    let main = pegasos(&z, d, y, &all, hp, rng);

    // out-of-fold margins for calibration
    let mut perm = all.clone();
    perm.shuffle(rng);
    let mut margins = vec![0.0; n];
    let mut fallback = false;
    for k in 0..FOLDS {
        let held: Vec<usize> = perm.iter().copied().skip(k).step_by(FOLDS).collect();
        let mut train: Vec<usize> = perm
            .iter()
            .enumerate()
            .filter(|(p, _)| p % FOLDS != k)
            .map(|(_, &i)| i)
            .collect();
        train.sort_unstable();
        let pos = train.iter().filter(|&&i| y[i] == 1).count();
        if held.is_empty() || pos == 0 || pos == train.len() {
            fallback = true;
            break;
        }
        let f = pegasos(&z, d, y, &train, hp, rng);
        for &i in &held {
            let row = &z[i * d..(i + 1) * d];
            margins[i] = f.w[d] + row.iter().zip(&f.w).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let calibration = if fallback {
        Calibration::IDENTITY
    } else {
        platt(&margins, y)
    };

    let mut w = main.w;
    let bias = w.pop().expect("bias entry");
    let weights = match rms {
        Some(r) => w.iter().zip(&r).map(|(v, r)| v / r).collect(),
        None => w,
    };
    (
        LinearFit {
            weights,
            bias,
            scaler,
            iterations: main.iterations,
            converged: main.converged,
        },
        calibration,
    )
}

/// Fits `sigmoid(a m + b)` to labels by Newton's method with backtracking,
/// using Platt's smoothed targets.
pub fn platt(margins: &[f64], y: &[u8]) -> Calibration {
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = y.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let target: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();

    let loss = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&target)
            .map(|(&m, &t)| {
                let z = a * m + b;
                // -t log p - (1-t) log(1-p) = softplus(z) - t z
                let sp = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                sp - t * z
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((pos + 1.0) / (neg + 1.0)).ln();
    let mut f = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&m, &t) in margins.iter().zip(&target) {
            let p = sigmoid(a * m + b);
            let r = p - t;
            let w = p * (1.0 - p);
            ga += r * m;
            gb += r;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let slope = ga * da + gb * db;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = loss(na, nb);
            if nf <= f + 1e-4 * step * slope {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return Calibration {
                    a,
                    b,
                    fallback: false,
                };
            }
        }
    }
    Calibration {
        a,
        b,
        fallback: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn separates_linearly_separable_data() {
        let mut rng = seed::rng(1);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..400 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            x.extend([a, b]);
            y.push(u8::from(a + b > 0.0));
        }
        let hp = SvmParams {
            c: 10.0,
            ..Default::default()
        };
        let (fit, cal) = fit(&x, 2, &y, &hp, &mut seed::rng(2));
        let st = fit.scaler.as_ref().unwrap();
        let correct = x
            .chunks_exact(2)
            .zip(&y)
            .filter(|(r, &yi)| {
                let mut r = r.to_vec();
                st.transform_row_in_place(&mut r);
                let m = fit.bias + r.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>();
                u8::from(m >= 0.0) == yi
            })
            .count();
        assert!(correct as f64 / y.len() as f64 > 0.97);
        assert!(!cal.fallback && cal.a > 0.0);
    }

    #[test]
    fn platt_recovers_a_known_sigmoid() {
        let mut rng = seed::rng(4);
        let margins: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<u8> = margins
            .iter()
            .map(|&m| u8::from(rng.gen::<f64>() < sigmoid(2.0 * m - 0.5)))
            .collect();
        let c = platt(&margins, &y);
        assert!((c.a - 2.0).abs() < 0.15, "{c:?}");
        assert!((c.b + 0.5).abs() < 0.1, "{c:?}");
    }
}

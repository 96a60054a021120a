//! Weighted ridge regression with an unpenalized intercept, on sufficient
//! statistics so that forward selection only solves small systems.

pub(crate) struct WeightedStats {
    d: usize,
    x_mean: Vec<f64>,
    t_mean: f64,
    /// Weighted centered cross products, row-major `d x d`.
    gram: Vec<f64>,
    xt: Vec<f64>,
    tt: f64,
}

pub(crate) struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination.
    pub r2: f64,
}

impl WeightedStats {
    pub fn new(x: &[Vec<f64>], t: &[f64], w: &[f64]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let sw: f64 = w.iter().sum();
        let mut x_mean = vec![0.0; d];
        let mut t_mean = 0.0;
        for ((row, &ti), &wi) in x.iter().zip(t).zip(w) {
            for (m, v) in x_mean.iter_mut().zip(row) {
                *m += wi * v;
            }
            t_mean += wi * ti;
        }
        x_mean.iter_mut().for_each(|m| *m /= sw);
        t_mean /= sw;

        let mut gram = vec![0.0; d * d];
        let mut xt = vec![0.0; d];
        let mut tt = 0.0;
        let mut cx = vec![0.0; d];
        for ((row, &ti), &wi) in x.iter().zip(t).zip(w) {
            for ((c, v), m) in cx.iter_mut().zip(row).zip(&x_mean) {
                *c = v - m;
            }
            let ct = ti - t_mean;
            tt += wi * ct * ct;
            for a in 0..d {
                let wa = wi * cx[a];
                xt[a] += wa * ct;
                for b in a..d {
                    gram[a * d + b] += wa * cx[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[a * d + b] = gram[b * d + a];
            }
        }
        Self {
            d,
            x_mean,
            t_mean,
            gram,
            xt,
            tt,
        }
    }

    pub fn target_ss(&self) -> f64 {
        self.tt
    }

    /// Coefficients on `cols` and the resulting weighted residual sum of squares.
    fn solve(&self, cols: &[usize], lambda: f64) -> (Vec<f64>, f64) {
        let k = cols.len();
        let mut a = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (i, &ci) in cols.iter().enumerate() {
            rhs[i] = self.xt[ci];
            for (j, &cj) in cols.iter().enumerate() {
                a[i * k + j] = self.gram[ci * self.d + cj];
            }
            a[i * k + i] += lambda;
        }
        let beta = cholesky_solve(&mut a, rhs, k);
        // residual = tt - 2 b.c + b' G b
        let mut sse = self.tt;
        for (i, &ci) in cols.iter().enumerate() {
            sse -= 2.0 * beta[i] * self.xt[ci];
            for (j, &cj) in cols.iter().enumerate() {
                sse += beta[i] * beta[j] * self.gram[ci * self.d + cj];
            }
        }
        (beta, sse.max(0.0))
    }

    /// Greedy forward selection of `k` columns by residual sum of squares.
    /// Ties keep the lower column index.
    pub fn forward_select(&self, k: usize, lambda: f64) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k.min(self.d) {
            let mut best: Option<(f64, usize)> = None;
            for j in (0..self.d).filter(|j| !chosen.contains(j)) {
                let mut cols = chosen.clone();
                cols.push(j);
                let (_, sse) = self.solve(&cols, lambda);
                if best.map_or(true, |(b, _)| sse < b) {
                    best = Some((sse, j));
                }
            }
            chosen.push(best.expect("a remaining column").1);
        }
        chosen
    }

    pub fn fit(&self, cols: &[usize], lambda: f64) -> RidgeFit {
        let (coef, sse) = self.solve(cols, lambda);
        let intercept = self.t_mean
            - cols
                .iter()
                .zip(&coef)
                .map(|(&c, b)| b * self.x_mean[c])
                .sum::<f64>();
        let r2 = if self.tt > 0.0 {
            1.0 - sse / self.tt
        } else {
            0.0
        };
        RidgeFit {
            coef,
            intercept,
            r2,
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten with
/// its Cholesky factor).
pub(crate) fn cholesky_solve(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        let l = s.max(f64::MIN_POSITIVE).sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    b
}

use serde::{Deserialize, Serialize};

/// Column means and population standard deviations of a row-major matrix.
pub(crate) fn column_moments(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / d.max(1)) as f64;
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for j in 0..d {
            let dv = row[j] - mean[j];
            var[j] += dv * dv;
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// Root mean square of each column, with zero columns mapped to 1.
pub(crate) fn column_rms(x: &[f64], d: usize) -> Vec<f64> {
    let n = (x.len() / d.max(1)) as f64;
    let mut ss = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (s, v) in ss.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    ss.into_iter().map(|s| nonzero((s / n).sqrt())).collect()
}

fn nonzero(s: f64) -> f64 {
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Standardization captured at train time: `x' = (x - mean) / scale`.
/// Zero-variance columns get scale 1 so they pass through centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], d: usize) -> Self {
        let (mean, std) = column_moments(x, d);
        Self {
            mean,
            scale: std.into_iter().map(nonzero).collect(),
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(d) {
            self.transform_row_in_place(row);
        }
        out
    }

    pub fn transform_row_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Anything that maps a feature row to a positive-class probability.
///
/// Metrics, the sampler and the explainer only ever see models through this
/// trait, so hand-built stubs and masked models plug in the same way as
/// trained ones. Callers are responsible for passing rows of the right width.
pub trait Predictor: Sync {
    fn score(&self, row: &[f64]) -> f64;

    fn classify(&self, row: &[f64]) -> u8 {
        u8::from(self.score(row) >= 0.5)
    }
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, row: &[f64]) -> f64 {
        self(row)
    }
}

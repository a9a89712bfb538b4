use ndarray::ArrayView2;

use crate::error::{shape_err, Result};

/// 2x2 event table at one threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Contingency {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub correct_negatives: u64,
}

impl Contingency {
    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.false_alarms + self.correct_negatives
    }

    pub fn add(&mut self, other: &Contingency) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.false_alarms += other.false_alarms;
        self.correct_negatives += other.correct_negatives;
    }
}

pub(crate) fn check_shapes(pred: &ArrayView2<f32>, obs: &ArrayView2<f32>) -> Result<()> {
    if pred.dim() != obs.dim() {
        return Err(shape_err(format!("prediction {:?} vs observation {:?}", pred.dim(), obs.dim())));
    }
    Ok(())
}

/// Events are cells strictly above `tau`.
pub fn contingency(pred: ArrayView2<f32>, obs: ArrayView2<f32>, tau: f64) -> Result<Contingency> {
    check_shapes(&pred, &obs)?;
    let mut c = Contingency::default();
    for (&p, &o) in pred.iter().zip(obs.iter()) {
        match (p as f64 > tau, o as f64 > tau) {
            (true, true) => c.hits += 1,
            (false, true) => c.misses += 1,
            (true, false) => c.false_alarms += 1,
            (false, false) => c.correct_negatives += 1,
        }
    }
    Ok(c)
}

/// hits / (hits + misses + false alarms); `None` when nothing happened.
pub fn csi(c: &Contingency) -> Option<f64> {
    let den = c.hits + c.misses + c.false_alarms;
    (den > 0).then(|| c.hits as f64 / den as f64)
}

/// false alarms / (false alarms + hits); `None` without positive forecasts.
pub fn far(c: &Contingency) -> Option<f64> {
    let den = c.false_alarms + c.hits;
    (den > 0).then(|| c.false_alarms as f64 / den as f64)
}

use ndarray::ArrayView2;

use super::categorical::check_shapes;
use super::pairwise_sum;
use crate::error::Result;

pub fn mse(pred: ArrayView2<f32>, obs: ArrayView2<f32>) -> Result<f64> {
    check_shapes(&pred, &obs)?;
    let sq: Vec<f64> = pred
        .iter()
        .zip(obs.iter())
        .map(|(&p, &o)| {
            let d = p as f64 - o as f64;
            d * d
        })
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

pub fn mae(pred: ArrayView2<f32>, obs: ArrayView2<f32>) -> Result<f64> {
    check_shapes(&pred, &obs)?;
    let abs: Vec<f64> = pred
        .iter()
        .zip(obs.iter())
        .map(|(&p, &o)| (p as f64 - o as f64).abs())
        .collect();
    Ok(pairwise_sum(&abs) / abs.len() as f64)
}

/// Pearson correlation; `None` when either field is constant.
pub fn pcc(pred: ArrayView2<f32>, obs: ArrayView2<f32>) -> Result<Option<f64>> {
    check_shapes(&pred, &obs)?;
    let p: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let o: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let n = p.len() as f64;
    let mp = pairwise_sum(&p) / n;
    let mo = pairwise_sum(&o) / n;
    let dp: Vec<f64> = p.iter().map(|v| v - mp).collect();
    let dobs: Vec<f64> = o.iter().map(|v| v - mo).collect();
    let cov = pairwise_sum(&dp.iter().zip(&dobs).map(|(a, b)| a * b).collect::<Vec<_>>());
    let vp = pairwise_sum(&dp.iter().map(|a| a * a).collect::<Vec<_>>());
    let vo = pairwise_sum(&dobs.iter().map(|a| a * a).collect::<Vec<_>>());
    if vp == 0.0 || vo == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vp * vo).sqrt()).clamp(-1.0, 1.0)))
}

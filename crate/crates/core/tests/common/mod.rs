//! Brute-force reference implementations shared by the integration tests.
//! Each one walks the grid with plain loops and never calls into the crate's
//! metric code.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (hits, misses, false alarms, correct negatives) at threshold `tau`.
pub fn contingency_loops(p: &Array2<f32>, o: &Array2<f32>, tau: f64) -> (u64, u64, u64, u64) {
    let (mut h, mut m, mut f, mut c) = (0, 0, 0, 0);
    let (rows, cols) = p.dim();
    for i in 0..rows {
        for j in 0..cols {
            let pe = p[[i, j]] as f64 > tau;
            let oe = o[[i, j]] as f64 > tau;
            match (pe, oe) {
                (true, true) => h += 1,
                (false, true) => m += 1,
                (true, false) => f += 1,
                (false, false) => c += 1,
            }
        }
    }
    (h, m, f, c)
}

pub fn csi_loops(p: &Array2<f32>, o: &Array2<f32>, tau: f64) -> Option<f64> {
    let (h, m, f, _) = contingency_loops(p, o, tau);
    (h + m + f > 0).then(|| h as f64 / (h + m + f) as f64)
}

pub fn far_loops(p: &Array2<f32>, o: &Array2<f32>, tau: f64) -> Option<f64> {
    let (h, _, f, _) = contingency_loops(p, o, tau);
    (h + f > 0).then(|| f as f64 / (h + f) as f64)
}

/// FSS with an odd `n x n` window centred on each cell, zero outside the
/// grid. Counts are integers so the result is exact.
pub fn fss_loops(p: &Array2<f32>, o: &Array2<f32>, n: usize, tau: f64) -> Option<f64> {
    let (rows, cols) = p.dim();
    let r = (n / 2) as isize;
    let count = |a: &Array2<f32>, i: usize, j: usize| -> i64 {
        let mut c = 0;
        for di in -r..=r {
            for dj in -r..=r {
                let (y, x) = (i as isize + di, j as isize + dj);
                if y >= 0 && x >= 0 && (y as usize) < rows && (x as usize) < cols && a[[y as usize, x as usize]] as f64 > tau {
                    c += 1;
                }
            }
        }
        c
    };
    let (mut num, mut den) = (0i64, 0i64);
    for i in 0..rows {
        for j in 0..cols {
            let (cp, co) = (count(p, i, j), count(o, i, j));
            num += (cp - co) * (cp - co);
            den += cp * cp + co * co;
        }
    }
    (den > 0).then(|| 1.0 - num as f64 / den as f64)
}

pub fn mse_loops(p: &Array2<f32>, o: &Array2<f32>) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(o.iter()) {
        s += (*a as f64 - *b as f64).powi(2);
    }
    s / p.len() as f64
}

pub fn mae_loops(p: &Array2<f32>, o: &Array2<f32>) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(o.iter()) {
        s += (*a as f64 - *b as f64).abs();
    }
    s / p.len() as f64
}

pub fn pcc_loops(p: &Array2<f32>, o: &Array2<f32>) -> Option<f64> {
    let n = p.len() as f64;
    let mp = p.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mo = o.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut c, mut vp, mut vo) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(o.iter()) {
        let (da, db) = (*a as f64 - mp, *b as f64 - mo);
        c += da * db;
        vp += da * da;
        vo += db * db;
    }
    (vp > 0.0 && vo > 0.0).then(|| c / (vp * vo).sqrt())
}

/// Rain-like grid: mostly dry with a few wet patches up to ~12 mm/h.
pub fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    let wet = rng.random_range(0.0..0.6);
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random_bool(wet) {
            rng.random_range(0.0f32..12.0)
        } else {
            0.0
        }
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Inhomogeneous p-variation distance between two step-2 lifts on a common grid.
//!
//! On an interval the local gap is |ΔX − ΔY| + |A^X − A^Y|^{1/2} (Frobenius
//! norm on level 2); the distance is the p-variation of this gap over grid
//! partitions. Level-2 increments over longer intervals come from Chen's relation.

use super::DrivingSignal;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoughDistance {
    /// Sup over partitions of (Σ |ΔX − ΔY|^p)^{1/p}.
    pub level1: f64,
    /// Sup over partitions of (Σ |A^X − A^Y|^{p/2})^{1/p}.
    pub level2: f64,
    /// Sup over partitions of (Σ (|ΔX − ΔY| + |A^X − A^Y|^{1/2})^p)^{1/p}.
    pub total: f64,
}

pub fn rough_distance(a: &DrivingSignal, b: &DrivingSignal, p: f64) -> Result<RoughDistance> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch(
            "rough_distance needs both signals on the same grid; resample first".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(Error::GridMismatch(format!(
            "signal dimensions differ ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::Range(format!("exponent must be >= 1, got {p}")));
    }
    let n = a.grid().len();
    let l = a.dim();
    // Work with the difference of level-1 paths and the two level-2 processes.
    let inc = |s: &DrivingSignal, k: usize| -> Vec<f64> {
        s.value(k + 1).iter().zip(s.value(k)).map(|(y, x)| y - x).collect()
    };
    let inc_a: Vec<Vec<f64>> = (0..n - 1).map(|k| inc(a, k)).collect();
    let inc_b: Vec<Vec<f64>> = (0..n - 1).map(|k| inc(b, k)).collect();

    let mut best1 = vec![0.0f64; n];
    let mut best2 = vec![0.0f64; n];
    let mut best = vec![0.0f64; n];
    let mut dxa = vec![0.0; l];
    let mut dxb = vec![0.0; l];
    let mut aa = vec![0.0; l * l];
    let mut ab = vec![0.0; l * l];
    for i in 0..n - 1 {
        dxa.iter_mut().for_each(|v| *v = 0.0);
        dxb.iter_mut().for_each(|v| *v = 0.0);
        aa.iter_mut().for_each(|v| *v = 0.0);
        ab.iter_mut().for_each(|v| *v = 0.0);
        for j in i..n - 1 {
            chen_step(&mut dxa, &mut aa, &inc_a[j], a.cell_level2(j));
            chen_step(&mut dxb, &mut ab, &inc_b[j], b.cell_level2(j));
            let g1 = dxa
                .iter()
                .zip(&dxb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let g2 = aa
                .iter()
                .zip(&ab)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
                .sqrt();
            let k = j + 1;
            best1[k] = best1[k].max(best1[i] + g1.powf(p));
            best2[k] = best2[k].max(best2[i] + g2.powf(p));
            best[k] = best[k].max(best[i] + (g1 + g2).powf(p));
        }
    }
    let root = |v: f64| v.powf(1.0 / p);
    Ok(RoughDistance {
        level1: root(best1[n - 1]),
        level2: root(best2[n - 1]),
        total: root(best[n - 1]),
    })
}

/// Extend increments (dx, A) over [s, t] by one cell with increment `inc` and level-2 `cell`.
fn chen_step(dx: &mut [f64], a: &mut [f64], inc: &[f64], cell: &[f64]) {
    let l = dx.len();
    for r in 0..l {
        for c in 0..l {
            a[r * l + c] += cell[r * l + c] + dx[r] * inc[c];
        }
    }
    for r in 0..l {
        dx[r] += inc[r];
    }
}

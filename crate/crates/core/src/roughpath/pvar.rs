//! Exact p-variation of piecewise-linear paths.
//!
//! For a piecewise-linear path and p >= 1 the supremum over partitions is
//! attained on partitions made of grid points (each summand is convex along
//! a linear piece), so an O(n²) dynamic program over grid points is exact.

use super::DrivingSignal;
use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// p-variation of the polyline through `values` (row-major, `dim` per point).
pub fn p_variation_of_points(values: &[f64], dim: usize, p: f64) -> f64 {
    let n = values.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let pt = |k: usize| &values[k * dim..(k + 1) * dim];
    let mut best = vec![0.0f64; n];
    for j in 1..n {
        let xj = pt(j);
        let mut m = f64::NEG_INFINITY;
        for i in 0..j {
            let v = best[i] + dist(pt(i), xj).powf(p);
            if v > m {
                m = v;
            }
        }
        best[j] = m;
    }
    best[n - 1].powf(1.0 / p)
}

fn check(signal: &DrivingSignal, p: f64, s: f64, t: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Range(format!("p-variation exponent must be >= 1, got {p}")));
    }
    let horizon = signal.grid().horizon();
    if s < 0.0 || t > horizon || !s.is_finite() || !t.is_finite() {
        return Err(Error::Invalid(format!(
            "interval [{s}, {t}] is outside [0, {horizon}]"
        )));
    }
    Ok(())
}

/// p-variation over [s, t] with endpoints snapped to the nearest grid points.
pub fn p_variation(signal: &DrivingSignal, p: f64, s: f64, t: f64) -> Result<f64> {
    check(signal, p, s, t)?;
    if t <= s {
        return Ok(0.0);
    }
    let grid = signal.grid();
    let (i, j) = (grid.snap(s), grid.snap(t));
    if j <= i {
        return Ok(0.0);
    }
    let l = signal.dim();
    Ok(p_variation_of_points(
        &signal.values()[i * l..(j + 1) * l],
        l,
        p,
    ))
}

/// p-variation over [s, t] of the piecewise-linear path, with interpolated
/// endpoints when `s` or `t` fall strictly inside a cell.
pub fn p_variation_exact(signal: &DrivingSignal, p: f64, s: f64, t: f64) -> Result<f64> {
    check(signal, p, s, t)?;
    if t <= s {
        return Ok(0.0);
    }
    Ok(p_variation_of_points(&section_points(signal, s, t), signal.dim(), p))
}

/// Path values at `s`, at every grid point strictly inside (s, t), and at `t`.
pub(crate) fn section_points(signal: &DrivingSignal, s: f64, t: f64) -> Vec<f64> {
    let pts = signal.grid().points();
    let mut out = signal.value_at(s);
    let first = pts.partition_point(|&q| q <= s);
    for (k, &q) in pts.iter().enumerate().skip(first) {
        if q >= t {
            break;
        }
        out.extend_from_slice(signal.value(k));
    }
    out.extend(signal.value_at(t));
    out
}

//! Sampled driving signals, their step-2 lifts, p-variation, interval
//! splitting and piecewise-linear approximation sequences.

mod approx;
mod distance;
mod io;
mod pvar;
mod sample;
mod split;

pub use approx::{approximation_sequence, resample_onto};
pub use distance::{rough_distance, RoughDistance};
pub use io::{read_signal_csv, write_signal_csv};
pub use pvar::{p_variation, p_variation_exact, p_variation_of_points};
pub use sample::{sample_signal, SignalKind};
pub use split::{split_by_pvar, IntervalSplit};

use crate::error::{Error, Result};

/// Strictly increasing time points starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid("a time grid needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::Invalid(format!(
                "time grid must start at 0, got {}",
                points[0]
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("time grid contains non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("time grid must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `cells` equal steps on [0, horizon]; the last point is exactly `horizon`.
    pub fn uniform(horizon: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Invalid(format!(
                "uniform grid needs cells > 0 and horizon > 0 (got {cells}, {horizon})"
            )));
        }
        let mut points: Vec<f64> = (0..=cells)
            .map(|i| horizon * i as f64 / cells as f64)
            .collect();
        points[cells] = horizon;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn mesh(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.horizon() / self.cells() as f64;
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0))
    }

    /// Index of the grid point nearest to `t` (ties go left).
    pub fn snap(&self, t: f64) -> usize {
        let k = self.points.partition_point(|&p| p < t);
        if k == 0 {
            return 0;
        }
        if k >= self.points.len() {
            return self.points.len() - 1;
        }
        if (t - self.points[k - 1]) <= (self.points[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// Cell index `k` with `points[k] <= t < points[k+1]`, clamped to valid cells.
    pub fn locate(&self, t: f64) -> usize {
        let k = self.points.partition_point(|&p| p <= t);
        k.saturating_sub(1).min(self.cells() - 1)
    }

    /// Exact index of `t` if it is a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.snap(t);
        (self.points[k] == t).then_some(k)
    }
}

/// An l-dimensional path sampled on a grid with level-2 iterated integrals per cell.
///
/// Between grid points the path is linear. `p = 1` marks a smooth
/// approximant; `p` in [2, 3) marks a rough signal.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingSignal {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    level2: Vec<f64>,
    p: f64,
}

/// Values only; turn into a [`DrivingSignal`] with [`lift_step2`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub grid: TimeGrid,
    pub dim: usize,
    /// Row-major, `grid.len() * dim` entries.
    pub values: Vec<f64>,
}

/// Step-2 lift of a piecewise-linear path: each cell carries ½ ΔX ⊗ ΔX.
pub fn lift_step2(path: &SampledPath, p: f64) -> Result<DrivingSignal> {
    let n = path.grid.len();
    if path.dim == 0 {
        return Err(Error::Invalid("signal dimension must be positive".into()));
    }
    if path.values.len() != n * path.dim {
        return Err(Error::Invalid(format!(
            "expected {} values for {} grid points of dimension {}, got {}",
            n * path.dim,
            n,
            path.dim,
            path.values.len()
        )));
    }
    if let Some(k) = path.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!(
            "missing or non-finite value at grid point {}",
            k / path.dim
        )));
    }
    check_p(p)?;
    let l = path.dim;
    let mut level2 = vec![0.0; (n - 1) * l * l];
    for k in 0..n - 1 {
        let a = &path.values[k * l..(k + 1) * l];
        let b = &path.values[(k + 1) * l..(k + 2) * l];
        let cell = &mut level2[k * l * l..(k + 1) * l * l];
        for i in 0..l {
            for j in 0..l {
                cell[i * l + j] = 0.5 * (b[i] - a[i]) * (b[j] - a[j]);
            }
        }
    }
    Ok(DrivingSignal {
        grid: path.grid.clone(),
        dim: l,
        values: path.values.clone(),
        level2,
        p,
    })
}

fn check_p(p: f64) -> Result<()> {
    if p == 1.0 || (2.0..3.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Range(format!(
            "variation exponent must be 1 (smooth) or in [2, 3), got {p}"
        )))
    }
}

impl DrivingSignal {
    /// Build from values and explicit per-cell level-2 matrices. The symmetric
    /// part of every cell must equal ½ ΔX ⊗ ΔX.
    pub fn with_level2(path: SampledPath, level2: Vec<f64>, p: f64) -> Result<Self> {
        let lifted = lift_step2(&path, p)?;
        let l = path.dim;
        if level2.len() != lifted.level2.len() {
            return Err(Error::Invalid(format!(
                "expected {} level-2 entries, got {}",
                lifted.level2.len(),
                level2.len()
            )));
        }
        for k in 0..path.grid.cells() {
            let c = &level2[k * l * l..(k + 1) * l * l];
            let g = &lifted.level2[k * l * l..(k + 1) * l * l];
            for i in 0..l {
                for j in 0..l {
                    let sym = 0.5 * (c[i * l + j] + c[j * l + i]);
                    let scale = 1.0 + g[i * l + j].abs();
                    if (sym - g[i * l + j]).abs() > 1e-9 * scale || !c[i * l + j].is_finite() {
                        return Err(Error::Invalid(format!(
                            "level-2 entry ({},{}) of cell {k} is not geometric",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { level2, ..lifted })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn is_smooth(&self) -> bool {
        self.p == 1.0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level2_cells(&self) -> &[f64] {
        &self.level2
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cell_level2(&self, k: usize) -> &[f64] {
        let l2 = self.dim * self.dim;
        &self.level2[k * l2..(k + 1) * l2]
    }

    /// Same path viewed as a smooth piecewise-linear approximant.
    pub fn to_smooth(&self) -> DrivingSignal {
        let path = SampledPath {
            grid: self.grid.clone(),
            dim: self.dim,
            values: self.values.clone(),
        };
        lift_step2(&path, 1.0).expect("values already validated")
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        check_p(p)?;
        self.p = p;
        Ok(self)
    }

    /// Linear interpolation of the path at time `t` (clamped to [0, T]).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let pts = self.grid.points();
        let t = t.clamp(0.0, self.grid.horizon());
        let k = self.grid.locate(t);
        let w = (t - pts[k]) / (pts[k + 1] - pts[k]);
        let a = self.value(k);
        let b = self.value(k + 1);
        if w >= 1.0 {
            return b.to_vec();
        }
        a.iter().zip(b).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// Level-1 and level-2 increments over grid indices `i <= j`, assembled by Chen's relation.
    pub fn signature(&self, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.dim;
        let mut dx = vec![0.0; l];
        let mut a = vec![0.0; l * l];
        for k in i..j {
            let inc: Vec<f64> = self
                .value(k + 1)
                .iter()
                .zip(self.value(k))
                .map(|(b, a)| b - a)
                .collect();
            let cell = self.cell_level2(k);
            for r in 0..l {
                for c in 0..l {
                    a[r * l + c] += cell[r * l + c] + dx[r] * inc[c];
                }
            }
            for r in 0..l {
                dx[r] += inc[r];
            }
        }
        (dx, a)
    }

    /// Linear pieces of the path intersected with [a, b]: `(t0, t1, slope)` in increasing time.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, Vec<f64>)> {
        let pts = self.grid.points();
        let mut out = Vec::new();
        if b <= a {
            return out;
        }
        let start = self.grid.locate(a);
        for k in start..self.grid.cells() {
            let lo = pts[k].max(a);
            let hi = pts[k + 1].min(b);
            if hi > lo {
                let h = pts[k + 1] - pts[k];
                let slope = self
                    .value(k + 1)
                    .iter()
                    .zip(self.value(k))
                    .map(|(y, x)| (y - x) / h)
                    .collect();
                out.push((lo, hi, slope));
            }
            if pts[k + 1] >= b {
                break;
            }
        }
        out
    }

    /// True if every increment is exactly zero.
    pub fn is_constant(&self) -> bool {
        let x0 = self.value(0);
        (1..self.grid.len()).all(|k| self.value(k) == x0)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use super::*;

    fn path(points: Vec<f64>, dim: usize, values: Vec<f64>) -> SampledPath {
        SampledPath {
            grid: TimeGrid::new(points).unwrap(),
            dim,
            values,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        assert_eq!(g.horizon(), 1.0);
        assert_eq!(g.snap(0.26), 3);
        assert_eq!(g.locate(1.0), 9);
        assert!(g.is_uniform());
    }

    #[test]
    fn single_cell_lift_of_identity_path() {
        let s = lift_step2(&path(vec![0.0, 1.0], 1, vec![0.0, 1.0]), 2.0).unwrap();
        assert_eq!(s.cell_level2(0), &[0.5]);
    }

    #[test]
    fn cross_integrals_of_parabola() {
        let n = 1000;
        let pts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let values: Vec<f64> = pts.iter().flat_map(|&t| [t, t * t]).collect();
        let s = lift_step2(&path(pts, 2, values), 1.0).unwrap();
        let (_, a) = s.signature(0, n);
        // ∫ X1 dX2 = ∫ t·2t dt = 2/3, ∫ X2 dX1 = ∫ t² dt = 1/3
        assert!((a[1] - 2.0 / 3.0).abs() < 1e-4, "{}", a[1]);
        assert!((a[2] - 1.0 / 3.0).abs() < 1e-4, "{}", a[2]);
    }

    #[test]
    fn missing_values_are_rejected() {
        let p = path(vec![0.0, 0.5, 1.0], 1, vec![0.0, f64::NAN, 1.0]);
        assert!(lift_step2(&p, 2.0).is_err());
        let p = path(vec![0.0, 0.5, 1.0], 1, vec![0.0, 1.0]);
        assert!(lift_step2(&p, 2.0).is_err());
    }

    #[test]
    fn non_geometric_level2_is_rejected() {
        let p = path(vec![0.0, 1.0], 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(DrivingSignal::with_level2(p.clone(), vec![0.5, 0.7, 0.3, 0.5], 2.0).is_ok());
        assert!(DrivingSignal::with_level2(p, vec![0.5, 0.7, 0.7, 0.5], 2.0).is_err());
    }

    #[test]
    fn pieces_cover_subinterval() {
        let s = lift_step2(&path(vec![0.0, 0.5, 1.0], 1, vec![0.0, 1.0, 0.0]), 1.0).unwrap();
        let pcs = s.pieces(0.25, 0.75);
        assert_eq!(pcs.len(), 2);
        assert_eq!((pcs[0].0, pcs[0].1, pcs[0].2[0]), (0.25, 0.5, 2.0));
        assert_eq!((pcs[1].0, pcs[1].1, pcs[1].2[0]), (0.5, 0.75, -2.0));
        assert_eq!(s.value_at(0.75), vec![0.5]);
    }

    proptest! {
        #[test]
        fn lifts_are_geometric_and_satisfy_chen(
            vals in prop::collection::vec(-3.0f64..3.0, 2 * 12),
            cut in 1usize..11,
        ) {
            let n = 11;
            let pts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let s = lift_step2(&path(pts, 2, vals), 2.5).unwrap();
            let (dx, a) = s.signature(0, n);
            for r in 0..2 {
                for c in 0..2 {
                    let sym = 0.5 * (a[r * 2 + c] + a[c * 2 + r]);
                    prop_assert!((sym - 0.5 * dx[r] * dx[c]).abs() <= 1e-12);
                }
            }
            let (x1, a1) = s.signature(0, cut);
            let (x2, a2) = s.signature(cut, n);
            for r in 0..2 {
                prop_assert!((x1[r] + x2[r] - dx[r]).abs() <= 1e-12);
                for c in 0..2 {
                    let joined = a1[r * 2 + c] + a2[r * 2 + c] + x1[r] * x2[c];
                    prop_assert!((joined - a[r * 2 + c]).abs() <= 1e-12);
                }
            }
        }
    }
}

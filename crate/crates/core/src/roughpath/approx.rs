//! Dyadic piecewise-linear approximants and resampling.

use super::{lift_step2, DrivingSignal, SampledPath, TimeGrid};
use crate::error::{Error, Result};

/// Piecewise-linear interpolation of `signal` at the dyadic times k·T/2^n for
/// each requested level `n`, lifted as smooth (p = 1) signals on their own grids.
pub fn approximation_sequence(signal: &DrivingSignal, levels: &[u32]) -> Result<Vec<DrivingSignal>> {
    let cells = signal.grid().cells();
    let horizon = signal.grid().horizon();
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        if n >= usize::BITS - 1 || (1usize << n) > cells {
            return Err(Error::Range(format!(
                "approximation level {n} exceeds the source resolution of {cells} cells"
            )));
        }
        let grid = TimeGrid::uniform(horizon, 1 << n)?;
        let values = grid
            .points()
            .iter()
            .flat_map(|&t| source_value(signal, t))
            .collect();
        let path = SampledPath {
            grid,
            dim: signal.dim(),
            values,
        };
        out.push(lift_step2(&path, 1.0)?);
    }
    Ok(out)
}

/// Value of the source at `t`, exact when `t` is (numerically) a grid point.
fn source_value(signal: &DrivingSignal, t: f64) -> Vec<f64> {
    let grid = signal.grid();
    let k = grid.snap(t);
    if (grid.points()[k] - t).abs() <= 1e-12 * grid.horizon() {
        signal.value(k).to_vec()
    } else {
        signal.value_at(t)
    }
}

/// Re-express a signal on a finer grid containing all of its points. The path
/// is unchanged and every new cell carries the piecewise-linear lift.
pub fn resample_onto(signal: &DrivingSignal, grid: &TimeGrid) -> Result<DrivingSignal> {
    if (grid.horizon() - signal.grid().horizon()).abs() > 1e-12 * grid.horizon() {
        return Err(Error::GridMismatch(format!(
            "horizons differ ({} vs {})",
            grid.horizon(),
            signal.grid().horizon()
        )));
    }
    for &t in signal.grid().points() {
        let k = grid.snap(t);
        if (grid.points()[k] - t).abs() > 1e-12 * grid.horizon() {
            return Err(Error::GridMismatch(format!(
                "target grid does not contain source point {t}"
            )));
        }
    }
    let values = grid
        .points()
        .iter()
        .flat_map(|&t| signal.value_at(t))
        .collect();
    lift_step2(
        &SampledPath {
            grid: grid.clone(),
            dim: signal.dim(),
            values,
        },
        signal.p(),
    )
}

//! CSV aggregates and run manifests.

use super::SolutionEnsemble;
use crate::error::Result;
use std::io::Write;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summary(mut v: Vec<f64>) -> [f64; 4] {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    [mean, quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95)]
}

/// One row per grid time: mean and 5/50/95% quantiles of Y, |Z| and K, the
/// mean of each Z component and the standard error of Y.
pub fn write_aggregates_csv<W: Write>(run: &SolutionEnsemble, mut w: W) -> Result<()> {
    let d = run.dim();
    let np = run.paths();
    let mut header = String::from("t,y_mean,y_q05,y_q50,y_q95,y_stderr,znorm_mean,znorm_q05,znorm_q50,znorm_q95");
    for k in 1..=d {
        header.push_str(&format!(",z{k}_mean"));
    }
    header.push_str(",k_mean,k_q05,k_q50,k_q95");
    writeln!(w, "{header}")?;
    for (i, t) in run.grid().points().iter().enumerate() {
        let zs = &run.z[i * np * d..(i + 1) * np * d];
        let y = summary(run.y_at(i).to_vec());
        let zn = summary(
            zs.chunks(d)
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
        );
        let k = summary(run.k_at(i).to_vec());
        write!(w, "{t},{},{},{},{},{}", y[0], y[1], y[2], y[3], run.stderr[i])?;
        write!(w, ",{},{},{},{}", zn[0], zn[1], zn[2], zn[3])?;
        for c in 0..d {
            let m = zs.iter().skip(c).step_by(d).sum::<f64>() / np as f64;
            write!(w, ",{m}")?;
        }
        writeln!(w, ",{},{},{},{}", k[0], k[1], k[2], k[3])?;
    }
    Ok(())
}

/// `key = value` lines: seed, grid, basis, cut times, penalty and the `extra`
/// entries supplied by the caller (problem description, penalty ladder, ...).
pub fn write_manifest<W: Write>(run: &SolutionEnsemble, extra: &[(&str, String)], mut w: W) -> Result<()> {
    let grid = run.grid();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    writeln!(w, "seed = {}", run.seed())?;
    writeln!(w, "paths = {}", run.paths())?;
    writeln!(w, "dim = {}", run.dim())?;
    writeln!(w, "horizon = {}", grid.horizon())?;
    writeln!(w, "steps = {}", grid.cells())?;
    if grid.is_uniform() {
        writeln!(w, "grid = uniform")?;
    } else {
        writeln!(w, "grid = {}", join(grid.points()))?;
    }
    writeln!(w, "basis = {}", run.basis)?;
    writeln!(w, "cut_times = {}", join(&run.cut_times))?;
    match run.penalty {
        Some(m) => writeln!(w, "penalty = {m}")?,
        None => writeln!(w, "penalty = none")?,
    }
    writeln!(w, "flow_fallbacks = {}", run.flow_fallbacks)?;
    for (k, v) in extra {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{simulate_diffusion, solve_classical_rbsde, SolverConfig};
    use super::*;
    use crate::problem::catalog;
    use crate::roughpath::TimeGrid;
    use std::sync::Arc;

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.05), 0.2);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn artifacts_are_deterministic() {
        let spec = catalog::martingale(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let write = || {
            let fw = Arc::new(simulate_diffusion(&spec, &grid, 100, 9).unwrap());
            let run = solve_classical_rbsde(&spec, &fw, &SolverConfig::default()).unwrap();
            let mut a = Vec::new();
            write_aggregates_csv(&run, &mut a).unwrap();
            write_manifest(&run, &[("problem", "martingale".into())], &mut a).unwrap();
            a
        };
        let a = write();
        assert_eq!(a, write());
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 1 + 9 + 11);
        assert!(text.contains("seed = 9\n"));
        assert!(text.contains("problem = martingale\n"));
    }
}

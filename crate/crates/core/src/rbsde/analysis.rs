//! Diagnostics on solved ensembles: orderings, stability under refinement,
//! a priori estimates and the Skorokhod condition.

use super::{solve_classical_rbsde, solve_rough_rbsde, ForwardPaths, PriorBound, SolutionEnsemble, SolverConfig};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::regression::Regressor;
use crate::roughpath::DrivingSignal;
use std::sync::Arc;

/// Per-time check of Y^A ≤ Y^B + tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub tolerance: f64,
    pub times: Vec<f64>,
    pub violation_fraction: Vec<f64>,
    /// max over paths of (Y^A − Y^B)⁺ at each time.
    pub max_violation: Vec<f64>,
    /// Number of (time, path) pairs exceeding the tolerance.
    pub violations: usize,
}

impl ComparisonReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

fn same_sampling(a: &SolutionEnsemble, b: &SolutionEnsemble) -> Result<()> {
    if a.grid() != b.grid() || a.paths() != b.paths() || a.dim() != b.dim() {
        return Err(Error::GridMismatch(format!(
            "ensembles differ in grid or sampling ({} vs {} cells, {} vs {} paths)",
            a.grid().cells(),
            b.grid().cells(),
            a.paths(),
            b.paths()
        )));
    }
    if a.seed() != b.seed() {
        return Err(Error::GridMismatch(format!("seeds differ: {} vs {}", a.seed(), b.seed())));
    }
    Ok(())
}

pub fn compare_solutions(a: &SolutionEnsemble, b: &SolutionEnsemble, tolerance: f64) -> Result<ComparisonReport> {
    same_sampling(a, b)?;
    let n = a.grid().cells();
    let np = a.paths();
    let mut out = ComparisonReport {
        tolerance,
        times: a.grid().points().to_vec(),
        violation_fraction: Vec::with_capacity(n + 1),
        max_violation: Vec::with_capacity(n + 1),
        violations: 0,
    };
    for i in 0..=n {
        let (ya, yb) = (a.y_at(i), b.y_at(i));
        let mut worst = 0.0f64;
        let mut count = 0;
        for p in 0..np {
            let gap = ya[p] - yb[p];
            worst = worst.max(gap);
            if gap > tolerance {
                count += 1;
            }
        }
        out.violations += count;
        out.violation_fraction.push(count as f64 / np as f64);
        out.max_violation.push(worst);
    }
    Ok(out)
}

/// Deviation of one run from the reference run.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub level: u32,
    /// sup_t E|Y^(n)_t − Y_t|.
    pub y_sup: f64,
    /// (E Σ_i |Z^(n) − Z|² Δt_i)^{1/2}.
    pub z_h2: f64,
    /// sup_t E|K^(n)_t − K_t|.
    pub k_sup: f64,
    pub y0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityTable {
    pub reference_level: u32,
    pub reference_y0: f64,
    pub rows: Vec<StabilityRow>,
}

impl StabilityTable {
    /// Indices k where y_sup[k+1] > y_sup[k].
    pub fn non_monotone_steps(&self) -> Vec<usize> {
        self.rows
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].y_sup > w[0].y_sup)
            .map(|(k, _)| k)
            .collect()
    }

    /// Y-deviations decrease, allowing at most `allowed` increases of relative size ≤ `slack`.
    pub fn is_decreasing(&self, allowed: usize, slack: f64) -> bool {
        let bad = self.non_monotone_steps();
        bad.len() <= allowed && bad.iter().all(|&k| self.rows[k + 1].y_sup <= (1.0 + slack) * self.rows[k].y_sup)
    }
}

pub(crate) fn deviation(level: u32, run: &SolutionEnsemble, reference: &SolutionEnsemble) -> Result<StabilityRow> {
    same_sampling(run, reference)?;
    let grid = run.grid();
    let n = grid.cells();
    let np = run.paths();
    let d = run.dim();
    let mean_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / np as f64;
    let mut y_sup = 0.0f64;
    let mut k_sup = 0.0f64;
    let mut z2 = 0.0;
    for i in 0..=n {
        y_sup = y_sup.max(mean_abs(run.y_at(i), reference.y_at(i)));
        k_sup = k_sup.max(mean_abs(run.k_at(i), reference.k_at(i)));
        if i < n {
            let w = np * d;
            let s: f64 = run.z[i * w..(i + 1) * w]
                .iter()
                .zip(&reference.z[i * w..(i + 1) * w])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            z2 += s / np as f64 * grid.dt(i);
        }
    }
    Ok(StabilityRow {
        level,
        y_sup,
        z_h2: z2.sqrt(),
        k_sup,
        y0: run.y0(),
    })
}

/// Solve the family at each level and at the reference level on common noise and
/// tabulate deviations from the reference. `family(n)` returns the problem and an
/// optional driving signal (None solves without the rough term).
pub fn stability_sweep<F>(
    family: F,
    levels: &[u32],
    reference_level: u32,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<StabilityTable>
where
    F: Fn(u32) -> Result<(ProblemSpec, Option<DrivingSignal>)>,
{
    let solve = |n: u32| -> Result<SolutionEnsemble> {
        let (spec, signal) = family(n)?;
        match signal {
            Some(s) => solve_rough_rbsde(&spec, &s, forward, cfg),
            None => solve_classical_rbsde(&spec, forward, cfg),
        }
    };
    let reference = solve(reference_level)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let run = solve(n)?;
        rows.push(deviation(n, &run, &reference)?);
    }
    Ok(StabilityTable {
        reference_level,
        reference_y0: reference.y0(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    /// max over times and paths of the regression estimate of E_t[Σ_{s≥t} |Z_s|² Δs].
    pub bmo_proxy: f64,
    /// (mean K_T²)^{1/2}.
    pub k_t_l2: f64,
    /// max over paths of Σ_i |Y_i − L_i| ΔK_i.
    pub skorokhod_defect: f64,
    /// max over paths of K_T, the scale against which the defect is read.
    pub k_t_max: f64,
}

pub fn estimate_checks(run: &SolutionEnsemble) -> Result<EstimateReport> {
    let grid = run.grid();
    let n = grid.cells();
    let np = run.paths();
    let d = run.dim();
    let basis = crate::regression::Basis::parse(&run.basis)?;
    let mut acc = vec![0.0; np];
    let mut fit = vec![0.0; np];
    let mut bmo = 0.0f64;
    for i in (0..n).rev() {
        let h = grid.dt(i);
        for p in 0..np {
            let z = &run.z[(i * np + p) * d..(i * np + p + 1) * d];
            acc[p] += z.iter().map(|v| v * v).sum::<f64>() * h;
        }
        let reg = Regressor::fit(basis, run.forward.state(i), d, None)?;
        reg.project(&acc, &mut fit);
        bmo = fit.iter().fold(bmo, |m, &v| m.max(v));
    }
    let kt = run.k_terminal();
    let k_t_l2 = (kt.iter().map(|v| v * v).sum::<f64>() / np as f64).sqrt();
    let k_t_max = kt.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut defect = 0.0f64;
    for p in 0..np {
        let mut s = 0.0;
        for i in 0..n {
            let dk = run.k[(i + 1) * np + p] - run.k[i * np + p];
            if dk != 0.0 {
                s += (run.y[i * np + p] - run.obstacle[i * np + p]).abs() * dk;
            }
        }
        defect = defect.max(s);
    }
    Ok(EstimateReport {
        bmo_proxy: bmo,
        k_t_l2,
        skorokhod_defect: defect,
        k_t_max,
    })
}

/// Discrete complementarity and obstacle checks.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionReport {
    pub tolerance: f64,
    /// Number of (time, path) pairs with ΔK > 0.
    pub pushes: usize,
    /// Pushes where Y − L exceeds the tolerance.
    pub complementarity_violations: usize,
    /// Largest Y − L where ΔK > 0.
    pub max_gap_when_pushing: f64,
    /// min over times and paths of Y − L (should not be below −tolerance).
    pub min_margin: f64,
    /// Largest decrease of K along any path.
    pub max_k_decrease: f64,
}

impl ReflectionReport {
    pub fn holds(&self) -> bool {
        self.complementarity_violations == 0 && self.min_margin >= -self.tolerance && self.max_k_decrease <= 0.0
    }
}

pub fn reflection_report(run: &SolutionEnsemble, tolerance: f64) -> ReflectionReport {
    let n = run.grid().cells();
    let np = run.paths();
    let mut out = ReflectionReport {
        tolerance,
        pushes: 0,
        complementarity_violations: 0,
        max_gap_when_pushing: 0.0,
        min_margin: f64::INFINITY,
        max_k_decrease: 0.0,
    };
    for i in 0..=n {
        for p in 0..np {
            let node = i * np + p;
            let margin = run.y[node] - run.obstacle[node];
            if margin.is_finite() {
                out.min_margin = out.min_margin.min(margin);
            }
            if i < n {
                let dk = run.k[node + np] - run.k[node];
                out.max_k_decrease = out.max_k_decrease.max(-dk);
                if dk > 0.0 {
                    out.pushes += 1;
                    out.max_gap_when_pushing = out.max_gap_when_pushing.max(margin);
                    if margin > tolerance {
                        out.complementarity_violations += 1;
                    }
                }
            }
        }
    }
    out
}

/// ∫ y dK as Σ ½(y_i + y_{i+1})(K_{i+1} − K_i) on the common grid.
pub fn stieltjes_integrate(y: &[f64], k: &[f64]) -> Result<f64> {
    if y.len() != k.len() {
        return Err(Error::GridMismatch(format!(
            "integrand has {} samples, integrator {}",
            y.len(),
            k.len()
        )));
    }
    let scale = k.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut total = 0.0;
    for i in 1..k.len() {
        let dk = k[i] - k[i - 1];
        if dk < -1e-12 * scale {
            return Err(Error::Invalid(format!("integrator decreases by {} at sample {i}", -dk)));
        }
        total += 0.5 * (y[i - 1] + y[i]) * dk;
    }
    Ok(total)
}

/// Sampled max |Y| against the prior bound.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBoundCheck {
    pub m_bar: f64,
    pub max_abs_y: f64,
    /// Largest standard error over times.
    pub stderr: f64,
    pub within: bool,
}

/// max_t |Y_t| ≤ M̄ + `k_stderr`·stderr over all paths and times.
pub fn check_prior_bound(run: &SolutionEnsemble, bound: &PriorBound, k_stderr: f64) -> PriorBoundCheck {
    let max_abs_y = run.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stderr = run.stderr.iter().fold(0.0f64, |m, &v| m.max(v));
    PriorBoundCheck {
        m_bar: bound.m_bar,
        max_abs_y,
        stderr,
        within: max_abs_y <= bound.m_bar + k_stderr * stderr,
    }
}

//! PDE against Monte Carlo, and PDE solutions along driver refinements.

use super::{solve_obstacle_pde, PdeConfig, PdeGrid};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::rbsde::{solve_classical_rbsde, solve_rough_rbsde, MonteCarlo, SolverConfig};
use crate::roughpath::{approximation_sequence, DrivingSignal};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGap {
    pub x: f64,
    pub pde: f64,
    pub mc: f64,
    pub stderr: f64,
    pub gap: f64,
    /// max(rel_tol·|u|, k·stderr).
    pub tolerance: f64,
}

impl ProbeGap {
    pub fn within(&self) -> bool {
        self.gap <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeynmanKacReport {
    pub probes: Vec<ProbeGap>,
}

impl FeynmanKacReport {
    pub fn all_within(&self) -> bool {
        self.probes.iter().all(ProbeGap::within)
    }
}

/// Compare u(0, x) with Y^{0,x}_0 at each probe. Gaps are judged against
/// max(`rel_tol`·|u(0, x)|, `k_stderr`·stderr).
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_crosscheck(
    spec: &ProblemSpec,
    driver: Option<&DrivingSignal>,
    probes: &[f64],
    pde: &PdeConfig,
    mc: &MonteCarlo,
    solver: &SolverConfig,
    rel_tol: f64,
    k_stderr: f64,
) -> Result<FeynmanKacReport> {
    if spec.dim != 1 {
        return Err(Error::Invalid("the Feynman–Kac cross-check needs d = 1".into()));
    }
    let grid = solve_obstacle_pde(spec, driver, pde)?;
    let mut out = Vec::with_capacity(probes.len());
    for &x in probes {
        if x < pde.x_lo || x > pde.x_hi {
            return Err(Error::Range(format!("probe {x} outside the PDE interval")));
        }
        let local = spec.clone().with_x0(vec![x]);
        let fw = mc.simulate(&local)?;
        let run = match driver {
            Some(sig) => solve_rough_rbsde(&local, sig, &fw, solver)?,
            None => solve_classical_rbsde(&local, &fw, solver)?,
        };
        let u = grid.initial(x);
        let (y, se) = (run.y0(), run.y0_stderr());
        out.push(ProbeGap {
            x,
            pde: u,
            mc: y,
            stderr: se,
            gap: (u - y).abs(),
            tolerance: (rel_tol * u.abs()).max(k_stderr * se),
        });
    }
    Ok(FeynmanKacReport { probes: out })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeLimitReport {
    pub levels: Vec<u32>,
    pub grids: Vec<PdeGrid>,
    /// sup over the window and all times of |u^{n_{k+1}} − u^{n_k}|.
    pub cauchy: Vec<f64>,
    /// u^n(T, ·) = g at every level, exactly.
    pub terminal_exact: bool,
}

impl PdeLimitReport {
    /// True if the last two Cauchy differences do not decrease.
    pub fn tail_not_decreasing(&self) -> bool {
        let c = &self.cauchy;
        c.len() >= 2 && c[c.len() - 1] >= c[c.len() - 2]
    }

    pub fn is_decreasing(&self) -> bool {
        self.cauchy.windows(2).all(|w| w[1] < w[0])
    }
}

/// PDE solutions along the dyadic approximants of `signal` at `levels`.
pub fn rough_pde_limit(
    spec: &ProblemSpec,
    signal: &DrivingSignal,
    levels: &[u32],
    cfg: &PdeConfig,
    window: (f64, f64),
) -> Result<PdeLimitReport> {
    let approx = approximation_sequence(signal, levels)?;
    let mut grids = Vec::with_capacity(levels.len());
    for a in &approx {
        grids.push(solve_obstacle_pde(spec, Some(a), cfg)?);
    }
    let mut cauchy = Vec::new();
    for w in grids.windows(2) {
        cauchy.push(w[1].sup_diff(&w[0], window)?);
    }
    let terminal_exact = grids.iter().all(|g| {
        let last = g.times.len() - 1;
        g.layer(last)
            .iter()
            .zip(&g.xs)
            .all(|(&u, &x)| u == spec.terminal_at(&[x]))
    });
    Ok(PdeLimitReport {
        levels: levels.to_vec(),
        grids,
        cauchy,
        terminal_exact,
    })
}

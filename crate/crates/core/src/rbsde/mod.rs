//! Forward diffusion, prior bounds and regression Monte Carlo solvers for
//! classical, rough, penalized and randomly stopped reflected BSDEs.

mod analysis;
mod io;
mod solver;

pub use analysis::{
    check_prior_bound, compare_solutions, estimate_checks, reflection_report, stability_sweep, stieltjes_integrate,
    ComparisonReport, EstimateReport, PriorBoundCheck, ReflectionReport, StabilityRow, StabilityTable,
};
pub use io::{write_aggregates_csv, write_manifest};
pub use solver::{
    solve_classical_rbsde, solve_penalized, solve_random_terminal, solve_rough_rbsde, solve_unreflected,
    PenaltyLadder,
};
pub(crate) use solver::{run_engine, Mode};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::ode::{Dopri, Workspace};
use crate::problem::ProblemSpec;
use crate::regression::Basis;
use crate::roughpath::TimeGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Euler–Maruyama paths of the forward diffusion with the Brownian increments used.
#[derive(Clone, Debug)]
pub struct ForwardPaths {
    pub grid: TimeGrid,
    pub paths: usize,
    pub dim: usize,
    pub seed: u64,
    /// Index `(i * paths + p) * dim + k`.
    pub s: Vec<f64>,
    /// Increments over cell i, same layout without the last time.
    pub dw: Vec<f64>,
}

impl ForwardPaths {
    /// States of all paths at time index `i` (paths × dim).
    pub fn state(&self, i: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.s[i * w..(i + 1) * w]
    }

    pub fn increments(&self, i: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.dw[i * w..(i + 1) * w]
    }

    pub fn point(&self, i: usize, p: usize) -> &[f64] {
        let k = (i * self.paths + p) * self.dim;
        &self.s[k..k + self.dim]
    }
}

pub fn simulate_diffusion(spec: &ProblemSpec, grid: &TimeGrid, paths: usize, seed: u64) -> Result<ForwardPaths> {
    spec.validate()?;
    if paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::GridMismatch(format!(
            "solver grid ends at {} but the horizon is {}",
            grid.horizon(),
            spec.horizon
        )));
    }
    let d = spec.dim;
    let n = grid.cells();
    let w = paths * d;
    let mut s = vec![0.0; (n + 1) * w];
    let mut dw = vec![0.0; n * w];
    for p in 0..paths {
        s[p * d..(p + 1) * d].copy_from_slice(&spec.x0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    for i in 0..n {
        let t = grid.points()[i];
        let h = grid.dt(i);
        let sq = h.sqrt();
        for v in dw[i * w..(i + 1) * w].iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sq * z;
        }
        for p in 0..paths {
            let cur = (i * paths + p) * d;
            let nxt = ((i + 1) * paths + p) * d;
            let x = s[cur..cur + d].to_vec();
            spec.drift_at(t, &x, &mut b);
            spec.diffusion_at(t, &x, &mut sig);
            for r in 0..d {
                let mut v = x[r] + b[r] * h;
                for c in 0..d {
                    v += sig[r * d + c] * dw[cur + c];
                }
                s[nxt + r] = v;
            }
        }
    }
    Ok(ForwardPaths {
        grid: grid.clone(),
        paths,
        dim: d,
        seed,
        s,
        dw,
    })
}

/// Sampling parameters of a Monte Carlo run on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarlo {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

impl MonteCarlo {
    pub fn simulate(&self, spec: &ProblemSpec) -> Result<Arc<ForwardPaths>> {
        let grid = TimeGrid::uniform(spec.horizon, self.steps)?;
        Ok(Arc::new(simulate_diffusion(spec, &grid, self.paths, self.seed)?))
    }
}

/// Solution of U_t = b + ∫_t^T c(U_r) dr with M̄ = U_0.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBound {
    pub m_bar: f64,
    pub b: f64,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    /// max_t |U_t − b − ∫_t^T c(U_r) dr| by Simpson's rule on the stored nodes.
    pub residual: f64,
}

pub fn prior_bound(spec: &ProblemSpec) -> Result<PriorBound> {
    prior_bound_from(spec.growth.c.clone(), spec.growth.c_xi.max(spec.growth.c_l), spec.horizon)
}

pub(crate) fn prior_bound_from(c: crate::problem::GrowthFn, b: f64, horizon: f64) -> Result<PriorBound> {
    let n = 1000;
    let mut times = vec![0.0; n + 1];
    let mut u = vec![0.0; n + 1];
    if !b.is_finite() {
        return Ok(PriorBound {
            m_bar: f64::INFINITY,
            b,
            times,
            u,
            residual: 0.0,
        });
    }
    let solver = Dopri::new(1e-13);
    let mut ws = Workspace::new(1);
    let mut h = 0.0;
    let mut state = [b];
    u[n] = b;
    times[n] = horizon;
    for k in (0..n).rev() {
        let t1 = horizon * (k + 1) as f64 / n as f64;
        let t0 = horizon * k as f64 / n as f64;
        solver
            .integrate(|_, y, dy| dy[0] = -c(y[0]), t1, t0, &mut state, &mut h, &mut ws)
            .map_err(|e| Error::Numerical(format!("prior-bound ODE blew up at t = {}", e.t)))?;
        times[k] = t0;
        u[k] = state[0];
    }
    // Simpson on pairs of cells from the right; odd remainder by the trapezoid rule.
    let hstep = horizon / n as f64;
    let cv: Vec<f64> = u.iter().map(|&v| c(v)).collect();
    let mut integral = vec![0.0; n + 1];
    let mut k = n;
    while k >= 2 {
        integral[k - 1] = integral[k] + hstep / 12.0 * (5.0 * cv[k] + 8.0 * cv[k - 1] - cv[k - 2]);
        integral[k - 2] = integral[k] + hstep / 3.0 * (cv[k] + 4.0 * cv[k - 1] + cv[k - 2]);
        k -= 2;
    }
    if k == 1 {
        integral[0] = integral[1] + 0.5 * hstep * (cv[1] + cv[0]);
    }
    let residual = (0..=n)
        .map(|k| (u[k] - b - integral[k]).abs())
        .fold(0.0, f64::max);
    if !u[0].is_finite() {
        return Err(Error::Numerical("prior bound is not finite".into()));
    }
    Ok(PriorBound {
        m_bar: u[0],
        b,
        times,
        u,
        residual,
    })
}

/// Knobs shared by the Monte Carlo solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// None picks local-linear bins for d = 1 and cubic polynomials otherwise.
    pub basis: Option<Basis>,
    pub iter_max: usize,
    pub tol_picard: f64,
    pub flow: FlowConfig,
    /// p-variation budget per cell; infinite means a single cell.
    pub split_delta: f64,
    /// Exponent for splitting; defaults to the signal's p (2 for smooth signals).
    pub split_p: Option<f64>,
    pub max_cells: usize,
    /// Dyadic level of the approximant used for rough signals; None uses the
    /// piecewise-linear interpolation on the signal's own grid.
    pub approx_level: Option<u32>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            basis: None,
            iter_max: 50,
            tol_picard: 1e-10,
            flow: FlowConfig::default(),
            split_delta: f64::INFINITY,
            split_p: None,
            max_cells: 256,
            approx_level: None,
        }
    }
}

impl SolverConfig {
    pub fn basis_for(&self, dim: usize) -> Basis {
        self.basis.unwrap_or_else(|| Basis::default_for(dim))
    }
}

/// Per-path trajectories of a solved (reflected) BSDE.
#[derive(Clone, Debug)]
pub struct SolutionEnsemble {
    pub forward: Arc<ForwardPaths>,
    pub basis: String,
    /// `(i * paths + p)`.
    pub y: Vec<f64>,
    /// `(i * paths + p) * dim + k`; zero at the terminal time.
    pub z: Vec<f64>,
    /// K_0 = 0, nondecreasing.
    pub k: Vec<f64>,
    /// Obstacle l(t_i, S_i) (−∞ without obstacle); at the last index the terminal value ξ.
    pub obstacle: Vec<f64>,
    /// Monte Carlo standard error of Y at each time.
    pub stderr: Vec<f64>,
    /// Cut times of the flow cells, decreasing from T to 0.
    pub cut_times: Vec<f64>,
    pub penalty: Option<f64>,
    pub flow_fallbacks: usize,
}

impl SolutionEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.forward.grid
    }

    pub fn paths(&self) -> usize {
        self.forward.paths
    }

    pub fn dim(&self) -> usize {
        self.forward.dim
    }

    pub fn seed(&self) -> u64 {
        self.forward.seed
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        let p = self.paths();
        &self.y[i * p..(i + 1) * p]
    }

    pub fn k_at(&self, i: usize) -> &[f64] {
        let p = self.paths();
        &self.k[i * p..(i + 1) * p]
    }

    pub fn obstacle_at(&self, i: usize) -> &[f64] {
        let p = self.paths();
        &self.obstacle[i * p..(i + 1) * p]
    }

    /// Average of Y over paths at time index `i`.
    pub fn mean_y(&self, i: usize) -> f64 {
        let v = self.y_at(i);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn y0(&self) -> f64 {
        self.mean_y(0)
    }

    pub fn y0_stderr(&self) -> f64 {
        self.stderr[0]
    }

    pub fn k_terminal(&self) -> &[f64] {
        self.k_at(self.grid().cells())
    }
}

//! Backward induction over flow cells.
//!
//! Inside each cell the equation is transformed by the flow of the cell, solved
//! one step at a time by regression and Picard iteration, and mapped back.
//! Cells are processed from the terminal time to 0; the value at a cut is the
//! terminal value of the next cell to the left.

use super::{prior_bound, ForwardPaths, SolutionEnsemble, SolverConfig};
use crate::error::{Error, Result};
use crate::flow::{build_transformed_driver, FlowField, FlowStream, PointCoeffs};
use crate::problem::ProblemSpec;
use crate::regression::Regressor;
use crate::roughpath::{approximation_sequence, split_by_pvar, DrivingSignal};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Mode {
    /// Projection on the obstacle.
    Reflected,
    /// Obstacle ignored.
    Unreflected,
    /// Regression on realized pathwise values; stop where the payoff beats continuation.
    Snell,
}

/// Per-path stopping index and the value frozen from that index on.
#[derive(Clone, Debug)]
pub(crate) struct StopRule {
    pub index: Vec<usize>,
    pub value: Vec<f64>,
}

pub(crate) struct EngineOutput {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub dk: Vec<f64>,
    pub obstacle: Vec<f64>,
    pub pathwise: Vec<f64>,
    pub stop: Vec<bool>,
    pub cut_times: Vec<f64>,
    pub fallbacks: usize,
    pub basis: String,
}

/// Smooth driver actually used: the signal itself, or its dyadic approximant.
fn smooth_driver(signal: &DrivingSignal, cfg: &SolverConfig) -> Result<DrivingSignal> {
    if signal.is_smooth() {
        return Ok(signal.clone());
    }
    match cfg.approx_level {
        Some(n) => Ok(approximation_sequence(signal, &[n])?.remove(0)),
        None => Ok(signal.to_smooth()),
    }
}

/// Cut indices on the solver grid, decreasing from N to 0.
fn cut_indices(
    forward: &ForwardPaths,
    driver: Option<(&DrivingSignal, f64)>,
    cfg: &SolverConfig,
) -> Result<Vec<usize>> {
    let grid = &forward.grid;
    let n = grid.cells();
    let Some((sig, p)) = driver else {
        return Ok(vec![n, 0]);
    };
    if !cfg.split_delta.is_finite() {
        return Ok(vec![n, 0]);
    }
    let split = split_by_pvar(sig, p, cfg.split_delta)?;
    if split.cell_count() > cfg.max_cells {
        return Err(Error::Range(format!(
            "p-variation split produced {} cells, more than the limit of {}",
            split.cell_count(),
            cfg.max_cells
        )));
    }
    let mut idx: Vec<usize> = split.cut_times.iter().map(|&t| grid.snap(t)).collect();
    idx[0] = n;
    *idx.last_mut().expect("nonempty") = 0;
    idx.dedup();
    Ok(idx)
}

/// Value range covered by flow tables and the inversion bracket.
fn value_box(spec: &ProblemSpec, forward: &ForwardPaths, stop: Option<&StopRule>) -> (f64, f64) {
    let m_bar = prior_bound(spec).map(|b| b.m_bar).unwrap_or(f64::INFINITY);
    let m = if m_bar.is_finite() {
        m_bar
    } else {
        let n = forward.grid.cells();
        let mut m = 0.0f64;
        for p in 0..forward.paths {
            let x = forward.point(n, p);
            m = m.max(spec.terminal_at(x).abs());
        }
        if let Some(s) = stop {
            m = s.value.iter().fold(m, |a, v| a.max(v.abs()));
        }
        m
    };
    (2.0 * m + 1.0, 10.0 * m.max(1.0))
}

fn picard<F>(step: usize, cont: f64, dt: f64, cfg: &SolverConfig, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut y = cont;
    let mut gap = f64::INFINITY;
    for _ in 0..cfg.iter_max {
        let next = cont + f(y)? * dt;
        gap = (next - y).abs();
        y = next;
        if gap <= cfg.tol_picard {
            return Ok(y);
        }
    }
    if !y.is_finite() {
        gap = f64::INFINITY;
    }
    Err(Error::Picard { step, residual: gap })
}

pub(crate) fn run_engine(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    forward: &ForwardPaths,
    cfg: &SolverConfig,
    mode: Mode,
    stop: Option<&StopRule>,
) -> Result<EngineOutput> {
    spec.validate()?;
    if forward.dim != spec.dim {
        return Err(Error::Invalid(format!(
            "forward paths have dimension {}, problem has {}",
            forward.dim, spec.dim
        )));
    }
    let grid = &forward.grid;
    let n = grid.cells();
    let np = forward.paths;
    let d = spec.dim;
    let basis = cfg.basis_for(d);

    let smooth = match signal {
        Some(s) => {
            if (s.grid().horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
                return Err(Error::GridMismatch(format!(
                    "signal horizon {} differs from problem horizon {}",
                    s.grid().horizon(),
                    spec.horizon
                )));
            }
            if s.dim() != spec.field.signal_dim() {
                return Err(Error::Invalid(format!(
                    "signal has dimension {} but the vector field expects {}",
                    s.dim(),
                    spec.field.signal_dim()
                )));
            }
            let p = cfg.split_p.unwrap_or(if s.is_smooth() { 2.0 } else { s.p() });
            Some((smooth_driver(s, cfg)?, p))
        }
        None => None,
    };
    let cuts = cut_indices(forward, smooth.as_ref().map(|(s, p)| (s, *p)), cfg)?;

    let (half_width, bracket) = value_box(spec, forward, stop);
    let mut flow_cfg = cfg.flow;
    flow_cfg.bracket = bracket;

    let mut y = vec![0.0; (n + 1) * np];
    let mut z = vec![0.0; (n + 1) * np * d];
    let mut dk = vec![0.0; n * np];
    let mut obstacle = vec![0.0; (n + 1) * np];
    let mut pathwise = vec![0.0; (n + 1) * np];
    let mut stopped = vec![false; (n + 1) * np];

    // Terminal data.
    for p in 0..np {
        let xi = match stop {
            Some(s) => s.value[p],
            None => spec.terminal_at(forward.point(n, p)),
        };
        y[n * np + p] = xi;
        pathwise[n * np + p] = xi;
        obstacle[n * np + p] = xi;
        stopped[n * np + p] = true;
    }
    let active_at = |i: usize, p: usize| stop.is_none_or(|s| s.index[p] > i);

    let mut ytil_next: Vec<f64> = y[n * np..].to_vec();
    let mut vtil_next: Vec<f64> = pathwise[n * np..].to_vec();
    let mut ytil = vec![0.0; np];
    let mut vtil = vec![0.0; np];
    let mut cont = vec![0.0; np];
    let mut resid = vec![0.0; np];
    let mut zt = vec![0.0; np * d];
    let mut proj = vec![0.0; np];
    let mut col = vec![0.0; np];
    let mut active = vec![true; np];
    let mut coeffs = PointCoeffs::new(d);
    let mut zbuf = vec![0.0; d];
    let mut zout = vec![0.0; d];
    let mut fallbacks = 0;

    for w in cuts.windows(2) {
        let (i_hi, i_lo) = (w[0], w[1]);
        let (t_lo, t_hi) = (grid.points()[i_lo], grid.points()[i_hi]);
        let field = match &smooth {
            Some((sig, _)) => FlowField::new(spec.field.clone(), sig, t_lo, t_hi, flow_cfg)?,
            None => FlowField::identity(spec.field.clone(), t_lo, t_hi, flow_cfg),
        };
        let tp = build_transformed_driver(spec, &field)?;
        let x_range = if field.depends_on_x() && d == 1 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in i_lo..=i_hi {
                for &v in forward.state(i) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let pad = 1e-6 * (1.0 + hi.abs().max(lo.abs()));
            Some((lo - pad, hi + pad))
        } else {
            None
        };
        let mut stream: FlowStream = field.stream((-half_width, half_width), x_range);

        for i in (i_lo..i_hi).rev() {
            let t = grid.points()[i];
            let dt = grid.dt(i);
            let slice = stream.slice_at(t)?;
            let xs = forward.state(i);
            let dws = forward.increments(i);
            for p in 0..np {
                active[p] = active_at(i, p);
            }
            let reg = Regressor::fit(basis, xs, d, stop.map(|_| active.as_slice()))?;
            let target = if mode == Mode::Snell { &vtil_next } else { &ytil_next };
            reg.project(target, &mut cont);
            for &p in reg.members() {
                resid[p] = target[p] - cont[p];
            }
            for k in 0..d {
                for &p in reg.members() {
                    proj[p] = resid[p] * dws[p * d + k];
                }
                reg.project(&proj, &mut col);
                for &p in reg.members() {
                    zt[p * d + k] = col[p] / dt;
                }
            }
            for p in 0..np {
                let x = &xs[p * d..(p + 1) * d];
                let node = i * np + p;
                obstacle[node] = spec.obstacle_at(t, x);
                if !active[p] {
                    let frozen = stop.expect("inactive paths come from a stop rule").value[p];
                    let v = tp.transform_value(&slice, x, frozen)?;
                    ytil[p] = v;
                    vtil[p] = v;
                    y[node] = frozen;
                    pathwise[node] = frozen;
                    stopped[node] = true;
                    continue;
                }
                coeffs.fill(spec, t, x);
                let zp = &zt[p * d..(p + 1) * d];
                let c = cont[p];
                let yhat = picard(i, c, dt, cfg, |v| tp.driver(&slice, x, &coeffs, v, zp, &mut zbuf))?;
                let ltil = match mode {
                    Mode::Unreflected => f64::NEG_INFINITY,
                    _ => tp.obstacle(&slice, x)?,
                };
                match mode {
                    Mode::Reflected | Mode::Unreflected => {
                        let push = if ltil > yhat { ltil - yhat } else { 0.0 };
                        ytil[p] = if push > 0.0 { ltil } else { yhat };
                        vtil[p] = if push > 0.0 { ltil } else { vtil_next[p] + (yhat - c) };
                        let (yv, jac) = tp.map_back(&slice, x, &coeffs, ytil[p], zp, &mut zout)?;
                        y[node] = yv;
                        dk[node] = if push > 0.0 { jac * push } else { 0.0 };
                        stopped[node] = push > 0.0;
                    }
                    Mode::Snell => {
                        let stop_now = ltil >= yhat;
                        ytil[p] = if stop_now { ltil } else { yhat };
                        vtil[p] = if stop_now {
                            ltil
                        } else {
                            let next = vtil_next[p];
                            picard(i, next, dt, cfg, |v| tp.driver(&slice, x, &coeffs, v, zp, &mut zbuf))?
                        };
                        let (yv, _) = tp.map_back(&slice, x, &coeffs, ytil[p], zp, &mut zout)?;
                        y[node] = yv;
                        stopped[node] = stop_now;
                    }
                }
                z[node * d..(node + 1) * d].copy_from_slice(&zout);
                pathwise[node] = if slice.is_identity() { vtil[p] } else { slice.eval(x, vtil[p])?.phi };
            }
            std::mem::swap(&mut ytil_next, &mut ytil);
            std::mem::swap(&mut vtil_next, &mut vtil);
        }
        // Left end of the cell: the flow of the next cell starts from the identity.
        ytil_next.copy_from_slice(&y[i_lo * np..(i_lo + 1) * np]);
        vtil_next.copy_from_slice(&pathwise[i_lo * np..(i_lo + 1) * np]);
        fallbacks += field.fallback_count();
    }

    let cut_times = cuts.iter().map(|&i| grid.points()[i]).collect();
    Ok(EngineOutput {
        y,
        z,
        dk,
        obstacle,
        pathwise,
        stop: stopped,
        cut_times,
        fallbacks,
        basis: basis.describe(),
    })
}

fn std_err(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Standard error of the mean of Y at each node, from the spread of the realized pathwise values.
pub(crate) fn node_stderr(out: &EngineOutput, n: usize, np: usize) -> Vec<f64> {
    (0..=n).map(|i| std_err(out.pathwise[i * np..(i + 1) * np].iter().copied())).collect()
}

fn into_ensemble(out: EngineOutput, forward: Arc<ForwardPaths>, penalty: Option<f64>) -> SolutionEnsemble {
    let n = forward.grid.cells();
    let np = forward.paths;
    let stderr = node_stderr(&out, n, np);
    let mut k = vec![0.0; (n + 1) * np];
    for i in 0..n {
        for p in 0..np {
            k[(i + 1) * np + p] = k[i * np + p] + out.dk[i * np + p];
        }
    }
    SolutionEnsemble {
        forward,
        basis: out.basis,
        y: out.y,
        z: out.z,
        k,
        obstacle: out.obstacle,
        stderr,
        cut_times: out.cut_times,
        penalty,
        flow_fallbacks: out.fallbacks,
    }
}

/// Reflected BSDE without the rough term (H is ignored).
pub fn solve_classical_rbsde(
    spec: &ProblemSpec,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<SolutionEnsemble> {
    let out = run_engine(spec, None, forward, cfg, Mode::Reflected, None)?;
    Ok(into_ensemble(out, forward.clone(), None))
}

/// BSDE without reflection and without the rough term.
pub fn solve_unreflected(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<SolutionEnsemble> {
    let out = run_engine(spec, signal, forward, cfg, Mode::Unreflected, None)?;
    Ok(into_ensemble(out, forward.clone(), None))
}

/// Reflected BSDE with rough driver ∫H(S, Y) d𝐗, stitched over p-variation cells.
pub fn solve_rough_rbsde(
    spec: &ProblemSpec,
    signal: &DrivingSignal,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<SolutionEnsemble> {
    let out = run_engine(spec, Some(signal), forward, cfg, Mode::Reflected, None)?;
    Ok(into_ensemble(out, forward.clone(), None))
}

/// Unreflected rough BSDE with driver f + m(y − L)⁻; K^m_t = m∫_0^t (Y − L)⁻ dr by the trapezoid rule.
pub fn solve_penalized(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    m: f64,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<SolutionEnsemble> {
    if !(m > 0.0) {
        return Err(Error::Range(format!("penalty must be positive, got {m}")));
    }
    let grid = &forward.grid;
    let worst = (0..grid.cells()).map(|i| grid.dt(i)).fold(0.0, f64::max);
    if m * worst > 0.5 + 1e-12 {
        return Err(Error::Range(format!(
            "penalty m = {m} with step {worst} violates m·Δt ≤ 0.5; refine the grid"
        )));
    }
    let pen = spec.penalized(m);
    let out = run_engine(&pen, signal, forward, cfg, Mode::Unreflected, None)?;
    let mut ens = into_ensemble(out, forward.clone(), Some(m));
    let n = grid.cells();
    let np = forward.paths;
    for i in 0..n {
        let t = grid.points()[i];
        for p in 0..np {
            ens.obstacle[i * np + p] = spec.obstacle_at(t, forward.point(i, p));
        }
    }
    let neg = |v: f64| if v < 0.0 { -v } else { 0.0 };
    for i in 0..n {
        let h = grid.dt(i);
        for p in 0..np {
            let a = neg(ens.y[i * np + p] - ens.obstacle[i * np + p]);
            let b = if i + 1 == n { 0.0 } else { neg(ens.y[(i + 1) * np + p] - ens.obstacle[(i + 1) * np + p]) };
            ens.k[(i + 1) * np + p] = ens.k[i * np + p] + 0.5 * h * m * (a + b);
        }
    }
    Ok(ens)
}

/// Unreflected BSDE on [0, τ] with per-path grid stopping index τ and terminal value
/// `value[p]` at τ: coefficients are frozen after τ, so Y = value on [τ, T].
pub fn solve_random_terminal(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
    index: &[usize],
    value: &[f64],
) -> Result<SolutionEnsemble> {
    let np = forward.paths;
    let n = forward.grid.cells();
    if index.len() != np || value.len() != np {
        return Err(Error::Invalid(format!(
            "stopping data needs one entry per path ({np}), got {} and {}",
            index.len(),
            value.len()
        )));
    }
    if let Some(&bad) = index.iter().find(|&&i| i > n) {
        return Err(Error::Range(format!("stopping index {bad} beyond the last time index {n}")));
    }
    let rule = StopRule {
        index: index.to_vec(),
        value: value.to_vec(),
    };
    let out = run_engine(spec, signal, forward, cfg, Mode::Unreflected, Some(&rule))?;
    Ok(into_ensemble(out, forward.clone(), None))
}

/// Y^m_0 along a penalty ladder with common random numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyLadder {
    pub penalties: Vec<f64>,
    pub y0: Vec<f64>,
    pub stderr: Vec<f64>,
    /// sup over paths and times of (Y^m − L)⁻.
    pub max_violation: Vec<f64>,
}

impl PenaltyLadder {
    pub fn run(
        spec: &ProblemSpec,
        signal: Option<&DrivingSignal>,
        penalties: &[f64],
        forward: &Arc<ForwardPaths>,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        let mut out = PenaltyLadder {
            penalties: penalties.to_vec(),
            y0: vec![],
            stderr: vec![],
            max_violation: vec![],
        };
        for &m in penalties {
            let e = solve_penalized(spec, signal, m, forward, cfg)?;
            out.y0.push(e.y0());
            out.stderr.push(e.y0_stderr());
            let v = e
                .y
                .iter()
                .zip(&e.obstacle)
                .map(|(y, l)| (l - y).max(0.0))
                .fold(0.0, f64::max);
            out.max_violation.push(v);
        }
        Ok(out)
    }

    /// Largest drop Y^{m_k}_0 − Y^{m_{k+1}}_0 measured in units of the larger standard error.
    pub fn worst_drop_in_stderr(&self) -> f64 {
        self.y0
            .windows(2)
            .zip(self.stderr.windows(2))
            .map(|(y, s)| (y[0] - y[1]) / s[0].max(s[1]).max(1e-300))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::super::simulate_diffusion;
    use super::*;
    use crate::problem::catalog;
    use crate::roughpath::{lift_step2, SampledPath, TimeGrid};

    fn forward(spec: &ProblemSpec, n: usize, paths: usize, seed: u64) -> Arc<ForwardPaths> {
        let grid = TimeGrid::uniform(spec.horizon, n).unwrap();
        Arc::new(simulate_diffusion(spec, &grid, paths, seed).unwrap())
    }

    #[test]
    fn constant_solution_touches_obstacle_without_pushing() {
        let spec = catalog::constant(2.5, 1.0);
        let fw = forward(&spec, 20, 200, 1);
        let e = solve_classical_rbsde(&spec, &fw, &SolverConfig::default()).unwrap();
        assert!(e.y.iter().all(|&v| v == 2.5));
        assert!(e.k.iter().all(|&v| v == 0.0));
        assert!(e.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn martingale_is_recovered() {
        let spec = catalog::martingale(0.3, 1.0);
        let fw = forward(&spec, 50, 4000, 2);
        let e = solve_classical_rbsde(&spec, &fw, &SolverConfig::default()).unwrap();
        assert!((e.y0() - 0.3).abs() <= 3.0 * e.y0_stderr(), "{} ± {}", e.y0(), e.y0_stderr());
        let zbar = e.z[..4000].iter().sum::<f64>() / 4000.0;
        assert!((zbar - 1.0).abs() < 0.05, "{zbar}");
    }

    #[test]
    fn linear_flow_closed_form() {
        let spec = catalog::linear_flow(1.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let x = lift_step2(
            &SampledPath {
                grid: grid.clone(),
                dim: 1,
                values: grid.points().to_vec(),
            },
            1.0,
        )
        .unwrap();
        let fw = forward(&spec, 32, 50, 3);
        let cfg = SolverConfig {
            split_delta: 0.3,
            ..Default::default()
        };
        let e = solve_rough_rbsde(&spec, &x, &fw, &cfg).unwrap();
        assert!(e.cut_times.len() > 2);
        for i in 0..=32 {
            let t = i as f64 / 32.0;
            for &v in e.y_at(i) {
                assert!((v - (1.0 - t).exp()).abs() < 1e-7, "t = {t}: {v}");
            }
        }
        assert!(e.k.iter().all(|&v| v == 0.0));
        assert!(e.z.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn penalty_checks_step_condition() {
        let spec = catalog::american_put(Default::default());
        let fw = forward(&spec, 10, 20, 4);
        assert!(matches!(
            solve_penalized(&spec, None, 10.0, &fw, &SolverConfig::default()),
            Err(Error::Range(_))
        ));
        assert!(solve_penalized(&spec, None, 5.0, &fw, &SolverConfig::default()).is_ok());
    }

    #[test]
    fn freezing_at_the_horizon_reproduces_the_plain_solver() {
        let spec = catalog::american_put(Default::default());
        let fw = forward(&spec, 20, 500, 5);
        let cfg = SolverConfig::default();
        let plain = solve_unreflected(&spec, None, &fw, &cfg).unwrap();
        let xi: Vec<f64> = (0..500).map(|p| spec.terminal_at(fw.point(20, p))).collect();
        let frozen = solve_random_terminal(&spec, None, &fw, &cfg, &vec![20; 500], &xi).unwrap();
        assert_eq!(plain.y, frozen.y);
        assert_eq!(plain.z, frozen.z);
    }
}

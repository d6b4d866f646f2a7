//! Finite differences for the one-dimensional obstacle problem
//!
//! u_t + ½σ²u_xx + b u_x + f(t, x, u, σu_x) + H(x, u)Ẋ_t = 0,  u(T) = g,  u ≥ l,
//!
//! along a smooth driver, directly or through the flow transformation.

mod crosscheck;

pub use crosscheck::{feynman_kac_crosscheck, rough_pde_limit, FeynmanKacReport, PdeLimitReport, ProbeGap};

use crate::error::{Error, Result};
use crate::flow::{build_transformed_driver, FlowField, FlowSlice, Jet, PointCoeffs, TransformedProblem};
use crate::problem::ProblemSpec;
use crate::rbsde::prior_bound;
use crate::roughpath::DrivingSignal;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Explicit Euler with projection; needs the CFL condition.
    ExplicitProjected,
    /// Implicit Euler; the obstacle is handled by policy iteration.
    ImplicitPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// u = max(l, g) at both ends.
    Dirichlet,
    /// u_0 = 2u_1 − u_2 (and mirrored), using the previous layer in the implicit scheme.
    LinearExtrapolation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub scheme: Scheme,
    pub boundary: Boundary,
    /// Bound on |H|·|ΔX| per sub-step of the rough term.
    pub rough_substep: f64,
    pub policy_iter_max: usize,
}

impl PdeConfig {
    pub fn new(x_lo: f64, x_hi: f64, n_x: usize, n_t: usize) -> Self {
        Self {
            x_lo,
            x_hi,
            n_x,
            n_t,
            scheme: Scheme::ImplicitPolicy,
            boundary: Boundary::Dirichlet,
            rough_substep: 0.1,
            policy_iter_max: 200,
        }
    }

    pub fn explicit(mut self) -> Self {
        self.scheme = Scheme::ExplicitProjected;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_hi > self.x_lo) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(Error::Range(format!("bad space interval [{}, {}]", self.x_lo, self.x_hi)));
        }
        if self.n_x < 5 || self.n_t == 0 {
            return Err(Error::Range(format!(
                "need at least 5 space nodes and one time step, got {} and {}",
                self.n_x, self.n_t
            )));
        }
        if !(self.rough_substep > 0.0) {
            return Err(Error::Range("rough sub-step bound must be positive".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = (self.x_hi - self.x_lo) / (self.n_x - 1) as f64;
        (0..self.n_x).map(|j| self.x_lo + h * j as f64).collect()
    }
}

/// Values u(t_i, x_j), row-major in time.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeGrid {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub u: Vec<f64>,
    pub scheme: Scheme,
    pub boundary: Boundary,
}

impl PdeGrid {
    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        let n = self.n_x();
        &self.u[i * n..(i + 1) * n]
    }

    /// Linear interpolation of u(t_i, ·) at x (clamped to the interval).
    pub fn value_at(&self, i: usize, x: f64) -> f64 {
        let row = self.layer(i);
        let n = self.n_x();
        let h = (self.xs[n - 1] - self.xs[0]) / (n - 1) as f64;
        let r = ((x - self.xs[0]) / h).clamp(0.0, (n - 1) as f64);
        let j = (r.floor() as usize).min(n - 2);
        let s = r - j as f64;
        row[j] * (1.0 - s) + row[j + 1] * s
    }

    pub fn initial(&self, x: f64) -> f64 {
        self.value_at(0, x)
    }

    /// sup over all times and the nodes inside [lo, hi] of |u − v|.
    pub fn sup_diff(&self, other: &PdeGrid, window: (f64, f64)) -> Result<f64> {
        if self.xs != other.xs || self.times != other.times {
            return Err(Error::GridMismatch("PDE grids differ".into()));
        }
        let n = self.n_x();
        let mut m = 0.0f64;
        for (k, (a, b)) in self.u.iter().zip(&other.u).enumerate() {
            let x = self.xs[k % n];
            if x >= window.0 && x <= window.1 {
                m = m.max((a - b).abs());
            }
        }
        Ok(m)
    }

    /// Rows `t,x,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        let n = self.n_x();
        for (i, t) in self.times.iter().enumerate() {
            for j in 0..n {
                writeln!(w, "{t},{},{}", self.xs[j], self.u[i * n + j])?;
            }
        }
        Ok(())
    }
}

/// The pieces of one equation the marching scheme needs.
trait Layer {
    /// Called once per time node, going backward.
    fn enter(&mut self, t: f64) -> Result<()>;
    fn driver(&mut self, t: f64, x: f64, coeffs: &PointCoeffs, u: f64, ux: f64) -> Result<f64>;
    fn obstacle(&mut self, t: f64, x: f64) -> Result<f64>;
    fn boundary(&mut self, t: f64, x: f64) -> Result<f64>;
    /// Apply the rough term on [t_lo, t_hi] to the layer at t_hi.
    fn rough_step(&mut self, t_lo: f64, t_hi: f64, xs: &[f64], u: &mut [f64]) -> Result<()>;
}

struct Direct<'a> {
    spec: &'a ProblemSpec,
    driver: Option<&'a DrivingSignal>,
    substep: f64,
    jet: Jet,
}

impl Direct<'_> {
    fn h(&mut self, slope: &[f64], x: f64, u: f64) -> f64 {
        self.jet.clear();
        self.spec.field.add_weighted_jet(slope, &[x], u, false, &mut self.jet);
        self.jet.h
    }
}

impl Layer for Direct<'_> {
    fn enter(&mut self, _t: f64) -> Result<()> {
        Ok(())
    }

    fn driver(&mut self, t: f64, x: f64, coeffs: &PointCoeffs, u: f64, ux: f64) -> Result<f64> {
        Ok((self.spec.driver)(t, &[x], u, &[coeffs.sigma[0] * ux]))
    }

    fn obstacle(&mut self, t: f64, x: f64) -> Result<f64> {
        Ok(self.spec.obstacle_at(t, &[x]))
    }

    fn boundary(&mut self, t: f64, x: f64) -> Result<f64> {
        Ok(self.spec.obstacle_at(t, &[x]).max(self.spec.terminal_at(&[x])))
    }

    fn rough_step(&mut self, t_lo: f64, t_hi: f64, xs: &[f64], u: &mut [f64]) -> Result<()> {
        let Some(sig) = self.driver else {
            return Ok(());
        };
        if self.spec.field.is_zero() {
            return Ok(());
        }
        for (a, b, slope) in sig.pieces(t_lo, t_hi).into_iter().rev() {
            let dur = b - a;
            let mut worst = 0.0f64;
            for (j, &x) in xs.iter().enumerate() {
                worst = worst.max(self.h(&slope, x, u[j]).abs() * dur);
            }
            let n_sub = ((worst / self.substep).ceil() as usize).clamp(1, 1_000_000);
            let h = dur / n_sub as f64;
            for (j, &x) in xs.iter().enumerate() {
                let mut v = u[j];
                for _ in 0..n_sub {
                    let k1 = self.h(&slope, x, v);
                    let k2 = self.h(&slope, x, v + 0.5 * h * k1);
                    let k3 = self.h(&slope, x, v + 0.5 * h * k2);
                    let k4 = self.h(&slope, x, v + h * k3);
                    v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("rough term blew up at t = {a}, x = {x}")));
                }
                u[j] = v;
            }
        }
        Ok(())
    }
}

struct Transformed<'a> {
    tp: TransformedProblem<'a>,
    stream: crate::flow::FlowStream<'a>,
    slice: Option<FlowSlice<'a>>,
    zbuf: [f64; 1],
}

impl<'a> Transformed<'a> {
    fn slice(&self) -> &FlowSlice<'a> {
        self.slice.as_ref().expect("enter() sets the slice")
    }
}

impl Layer for Transformed<'_> {
    fn enter(&mut self, t: f64) -> Result<()> {
        self.slice = Some(self.stream.slice_at(t)?);
        Ok(())
    }

    fn driver(&mut self, _t: f64, x: f64, coeffs: &PointCoeffs, u: f64, ux: f64) -> Result<f64> {
        let z = [coeffs.sigma[0] * ux];
        let slice = self.slice.as_ref().expect("enter() sets the slice");
        self.tp.driver(slice, &[x], coeffs, u, &z, &mut self.zbuf)
    }

    fn obstacle(&mut self, _t: f64, x: f64) -> Result<f64> {
        self.tp.obstacle(self.slice(), &[x])
    }

    fn boundary(&mut self, t: f64, x: f64) -> Result<f64> {
        let spec = self.tp.spec();
        let v = spec.obstacle_at(t, &[x]).max(spec.terminal_at(&[x]));
        self.tp.transform_value(self.slice(), &[x], v)
    }

    fn rough_step(&mut self, _: f64, _: f64, _: &[f64], _: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// Solve M u = rhs for tridiagonal M (sub `a`, diagonal `d`, super `c`).
fn thomas(a: &[f64], d: &[f64], c: &[f64], rhs: &[f64], out: &mut [f64]) -> Result<()> {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut m = d[0];
    if m == 0.0 {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    cp[0] = c[0] / m;
    dp[0] = rhs[0] / m;
    for i in 1..n {
        m = d[i] - a[i] * cp[i - 1];
        if m == 0.0 {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        cp[i] = c[i] / m;
        dp[i] = (rhs[i] - a[i] * dp[i - 1]) / m;
    }
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
    Ok(())
}

/// Generator weights (lower, diagonal, upper) at one node: central differences
/// for the drift when |b|Δx ≤ σ², upwind otherwise.
fn stencil(b: f64, s2: f64, dx: f64) -> (f64, f64, f64) {
    let diff = 0.5 * s2 / (dx * dx);
    if b.abs() * dx <= s2 {
        let adv = b / (2.0 * dx);
        (diff - adv, -2.0 * diff, diff + adv)
    } else {
        let up = b.max(0.0) / dx;
        let dn = (-b).max(0.0) / dx;
        (diff + dn, -2.0 * diff - up - dn, diff + up)
    }
}

fn march<L: Layer>(
    spec: &ProblemSpec,
    layer: &mut L,
    cfg: &PdeConfig,
    t_lo: f64,
    t_hi: f64,
    terminal: Vec<f64>,
) -> Result<PdeGrid> {
    cfg.validate()?;
    if spec.dim != 1 {
        return Err(Error::Invalid(format!(
            "the PDE solver handles d = 1 only, problem has d = {}",
            spec.dim
        )));
    }
    let xs = cfg.nodes();
    let n = xs.len();
    let nt = cfg.n_t;
    let dx = xs[1] - xs[0];
    let dt = (t_hi - t_lo) / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|i| if i == nt { t_hi } else { t_lo + dt * i as f64 }).collect();
    let mut u = vec![0.0; (nt + 1) * n];
    u[nt * n..].copy_from_slice(&terminal);
    let mut coeffs = PointCoeffs::new(1);
    let mut cur = terminal;
    let mut next = vec![0.0; n];
    let mut obst = vec![0.0; n];
    let (mut sa, mut sd, mut sc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut rhs = vec![0.0; n];
    let mut active = vec![false; n];
    for i in (0..nt).rev() {
        let t = times[i];
        let t_next = times[i + 1];
        layer.rough_step(t, t_next, &xs, &mut cur)?;
        layer.enter(t)?;
        for j in 0..n {
            obst[j] = layer.obstacle(t, xs[j])?;
        }
        let bvals = match cfg.boundary {
            Boundary::Dirichlet => [layer.boundary(t, xs[0])?, layer.boundary(t, xs[n - 1])?],
            Boundary::LinearExtrapolation => [2.0 * cur[1] - cur[2], 2.0 * cur[n - 2] - cur[n - 3]],
        };
        match cfg.scheme {
            Scheme::ExplicitProjected => {
                for j in 1..n - 1 {
                    coeffs.fill(spec, t_next, &[xs[j]]);
                    let (b, s) = (coeffs.b[0], coeffs.sigma[0]);
                    let (lo, di, up) = stencil(b, s * s, dx);
                    if -di * dt > 1.0 + 1e-12 {
                        return Err(Error::Cfl(format!(
                            "Δt = {dt:e} too large for Δx = {dx:e} at x = {} (need Δt ≤ {:e})",
                            xs[j],
                            -1.0 / di
                        )));
                    }
                    let ux = (cur[j + 1] - cur[j - 1]) / (2.0 * dx);
                    let f = layer.driver(t_next, xs[j], &coeffs, cur[j], ux)?;
                    next[j] = cur[j] + dt * (lo * cur[j - 1] + di * cur[j] + up * cur[j + 1] + f);
                }
                match cfg.boundary {
                    Boundary::Dirichlet => {
                        next[0] = bvals[0];
                        next[n - 1] = bvals[1];
                    }
                    Boundary::LinearExtrapolation => {
                        next[0] = 2.0 * next[1] - next[2];
                        next[n - 1] = 2.0 * next[n - 2] - next[n - 3];
                    }
                }
            }
            Scheme::ImplicitPolicy => {
                for j in 1..n - 1 {
                    coeffs.fill(spec, t, &[xs[j]]);
                    let (b, s) = (coeffs.b[0], coeffs.sigma[0]);
                    let (lo, di, up) = stencil(b, s * s, dx);
                    let ux = (cur[j + 1] - cur[j - 1]) / (2.0 * dx);
                    let f = layer.driver(t, xs[j], &coeffs, cur[j], ux)?;
                    sa[j] = -dt * lo;
                    sd[j] = 1.0 - dt * di;
                    sc[j] = -dt * up;
                    rhs[j] = cur[j] + dt * f;
                }
                sa[0] = 0.0;
                sd[0] = 1.0;
                sc[0] = 0.0;
                rhs[0] = bvals[0];
                sa[n - 1] = 0.0;
                sd[n - 1] = 1.0;
                sc[n - 1] = 0.0;
                rhs[n - 1] = bvals[1];
                // Warm start: nodes in contact on the previous layer start on the obstacle.
                for j in 0..n {
                    active[j] = cur[j] <= obst[j];
                }
                policy_solve(cfg, &sa, &sd, &sc, &rhs, &obst, &mut active, &mut next)?;
            }
        }
        for j in 0..n {
            if next[j] < obst[j] {
                next[j] = obst[j];
            }
            if !next[j].is_finite() {
                return Err(Error::Numerical(format!("PDE value not finite at t = {t}, x = {}", xs[j])));
            }
        }
        u[i * n..(i + 1) * n].copy_from_slice(&next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(PdeGrid {
        times,
        xs,
        u,
        scheme: cfg.scheme,
        boundary: cfg.boundary,
    })
}

/// Howard iteration for min(M u − rhs, u − l) = 0 on interior nodes.
#[allow(clippy::too_many_arguments)]
fn policy_solve(
    cfg: &PdeConfig,
    a: &[f64],
    d: &[f64],
    c: &[f64],
    rhs: &[f64],
    obst: &[f64],
    active: &mut [bool],
    out: &mut [f64],
) -> Result<()> {
    let n = d.len();
    let (mut pa, mut pd, mut pc, mut pr) = (a.to_vec(), d.to_vec(), c.to_vec(), rhs.to_vec());
    for _ in 0..cfg.policy_iter_max {
        for j in 1..n - 1 {
            if active[j] {
                pa[j] = 0.0;
                pd[j] = 1.0;
                pc[j] = 0.0;
                pr[j] = obst[j];
            } else {
                pa[j] = a[j];
                pd[j] = d[j];
                pc[j] = c[j];
                pr[j] = rhs[j];
            }
        }
        thomas(&pa, &pd, &pc, &pr, out)?;
        let mut changed = false;
        for j in 1..n - 1 {
            let pde = a[j] * out[j - 1] + d[j] * out[j] + c[j] * out[j + 1] - rhs[j];
            let obs = out[j] - obst[j];
            // Switch only on a clear preference so that ties cannot cycle.
            let eps = 1e-13 * (1.0 + out[j].abs());
            let want = if active[j] { obs <= pde + eps } else { obs < pde - eps };
            if want != active[j] {
                active[j] = want;
                changed = true;
            }
        }
        if !changed {
            return Ok(());
        }
    }
    Err(Error::Numerical(format!(
        "policy iteration did not settle within {} sweeps",
        cfg.policy_iter_max
    )))
}

fn terminal_layer(spec: &ProblemSpec, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| spec.terminal_at(&[x])).collect()
}

/// Direct scheme on [0, T]; the rough term H(x, u)Ẋ follows the smooth driver
/// (None or a zero field drops it).
pub fn solve_obstacle_pde(spec: &ProblemSpec, driver: Option<&DrivingSignal>, cfg: &PdeConfig) -> Result<PdeGrid> {
    spec.validate()?;
    if let Some(sig) = driver {
        if !sig.is_smooth() {
            return Err(Error::Invalid(
                "the PDE solver needs a smooth driver; pass an approximant of the rough signal".into(),
            ));
        }
        if (sig.grid().horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
            return Err(Error::GridMismatch(format!(
                "driver horizon {} differs from problem horizon {}",
                sig.grid().horizon(),
                spec.horizon
            )));
        }
        if sig.dim() != spec.field.signal_dim() {
            return Err(Error::Invalid(format!(
                "driver has dimension {} but the vector field expects {}",
                sig.dim(),
                spec.field.signal_dim()
            )));
        }
    }
    let mut layer = Direct {
        spec,
        driver,
        substep: cfg.rough_substep,
        jet: Jet::zeros(1),
    };
    let terminal = terminal_layer(spec, &cfg.nodes());
    march(spec, &mut layer, cfg, 0.0, spec.horizon, terminal)
}

/// Scheme for v with driver f̃ and obstacle ψ(l) on [field.start, field.terminal],
/// then u = φ(t, x, v) nodewise. The field must end at the horizon.
pub fn solve_transformed_pde(spec: &ProblemSpec, field: &FlowField, cfg: &PdeConfig) -> Result<PdeGrid> {
    spec.validate()?;
    cfg.validate()?;
    if (field.terminal() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::GridMismatch(format!(
            "flow ends at {} but the horizon is {}",
            field.terminal(),
            spec.horizon
        )));
    }
    let xs = cfg.nodes();
    let mut m = prior_bound(spec).map(|b| b.m_bar).unwrap_or(f64::INFINITY);
    if !m.is_finite() {
        m = 0.0;
        for &x in &xs {
            m = m.max(spec.terminal_at(&[x]).abs());
            let l = spec.obstacle_at(0.0, &[x]);
            if l.is_finite() {
                m = m.max(l.abs());
            }
        }
    }
    let half = 2.0 * m + 1.0;
    let stream = field.stream((-half, half), Some((cfg.x_lo, cfg.x_hi)));
    let mut layer = Transformed {
        tp: build_transformed_driver(spec, field)?,
        stream,
        slice: None,
        zbuf: [0.0],
    };
    let terminal = terminal_layer(spec, &xs);
    let mut grid = march(spec, &mut layer, cfg, field.start(), field.terminal(), terminal)?;
    // Map back layer by layer on a fresh stream (the first one has moved to the start).
    let mut back = field.stream((-half, half), Some((cfg.x_lo, cfg.x_hi)));
    let n = grid.n_x();
    for i in (0..grid.times.len()).rev() {
        let slice = back.slice_at(grid.times[i])?;
        if slice.is_identity() {
            continue;
        }
        for j in 0..n {
            let k = i * n + j;
            grid.u[k] = slice.eval(&[grid.xs[j]], grid.u[k])?.phi;
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ExprField, FlowConfig};
    use crate::problem::catalog;
    use crate::roughpath::{lift_step2, SampledPath, TimeGrid};
    use std::sync::Arc;

    fn smooth_line(horizon: f64, cells: usize) -> DrivingSignal {
        let grid = TimeGrid::uniform(horizon, cells).unwrap();
        let values = grid.points().to_vec();
        lift_step2(&SampledPath { grid, dim: 1, values }, 1.0).unwrap()
    }

    /// ∫ g(y) N(x − y; 0, T) dy by composite Simpson on [−14, 14].
    fn heat_oracle(x: f64, horizon: f64) -> f64 {
        let g = |y: f64| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let k = |r: f64| (-0.5 * r * r / horizon).exp() / (2.0 * std::f64::consts::PI * horizon).sqrt();
        let n = 4000;
        let h = 28.0 / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let y = -14.0 + h * i as f64;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(y) * k(x - y);
        }
        s * h / 3.0
    }

    fn heat_gap(cfg: &PdeConfig) -> f64 {
        let spec = catalog::heat_kernel(1.0);
        let grid = solve_obstacle_pde(&spec, None, cfg).unwrap();
        grid.xs
            .iter()
            .zip(grid.layer(0))
            .map(|(&x, &u)| (u - heat_oracle(x, 1.0)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_kernel_matches_convolution() {
        let cfg = PdeConfig::new(-8.0, 8.0, 801, 3200).explicit();
        let gap = heat_gap(&cfg);
        assert!(gap < 1e-3, "{gap}");
        let implicit = PdeConfig::new(-8.0, 8.0, 801, 3200);
        assert!(heat_gap(&implicit) < 1e-3);
    }

    #[test]
    fn refinement_shrinks_heat_gap() {
        let coarse = heat_gap(&PdeConfig::new(-8.0, 8.0, 41, 50).explicit());
        let fine = heat_gap(&PdeConfig::new(-8.0, 8.0, 81, 200).explicit());
        assert!(coarse / fine >= 3.0, "{coarse} {fine}");
    }

    #[test]
    fn explicit_scheme_checks_cfl() {
        let spec = catalog::heat_kernel(1.0);
        let cfg = PdeConfig::new(-8.0, 8.0, 801, 100).explicit();
        assert!(matches!(solve_obstacle_pde(&spec, None, &cfg), Err(Error::Cfl(_))));
    }

    #[test]
    fn constant_problem_is_constant() {
        let spec = catalog::constant(3.0, 1.0);
        for cfg in [PdeConfig::new(-3.0, 3.0, 61, 400).explicit(), PdeConfig::new(-3.0, 3.0, 61, 40)] {
            let g = solve_obstacle_pde(&spec, None, &cfg).unwrap();
            assert!(g.u.iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn put_matches_binomial() {
        let spec = catalog::american_put(Default::default());
        let g = solve_obstacle_pde(&spec, None, &PdeConfig::new(0.0, 200.0, 1601, 1000)).unwrap();
        let u = g.initial(36.0);
        assert!((u / 7.108971883182118 - 1.0).abs() < 0.01, "{u}");
        for i in 0..g.times.len() {
            for (j, &x) in g.xs.iter().enumerate() {
                assert!(g.layer(i)[j] >= (40.0 - x).max(0.0) - 1e-12);
            }
        }
    }

    #[test]
    fn raising_data_never_lowers_the_solution() {
        let base = catalog::american_put(Default::default());
        let cfg = PdeConfig::new(0.0, 120.0, 241, 200);
        let u = solve_obstacle_pde(&base, None, &cfg).unwrap();
        for up in [base.clone().shift_terminal(0.5), base.clone().shift_obstacle(0.5)] {
            let v = solve_obstacle_pde(&up, None, &cfg).unwrap();
            assert!(u.u.iter().zip(&v.u).all(|(a, b)| a <= &(b + 1e-12)));
        }
    }

    #[test]
    fn linear_terminal_is_preserved() {
        let mut spec = catalog::martingale(0.0, 1.0);
        spec.terminal = Arc::new(|x| 2.0 * x[0] + 1.0);
        let cfg = PdeConfig::new(-6.0, 6.0, 121, 400);
        let g = solve_obstacle_pde(&spec, None, &cfg).unwrap();
        for (j, &x) in g.xs.iter().enumerate() {
            assert!((g.layer(0)[j] - (2.0 * x + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_rough_term_scales_by_exponential() {
        // H = y, X_t = t, ξ ≡ 1 and nothing else: u = e^{T − t}.
        let spec = catalog::linear_flow(1.0, 1.0);
        let x = smooth_line(1.0, 16);
        let mut cfg = PdeConfig::new(-3.0, 3.0, 31, 64);
        cfg.boundary = Boundary::LinearExtrapolation;
        let g = solve_obstacle_pde(&spec, Some(&x), &cfg).unwrap();
        for (i, t) in g.times.iter().enumerate() {
            for v in g.layer(i) {
                assert!((v - (1.0 - t).exp()).abs() < 1e-8, "{t}: {v}");
            }
        }
    }

    #[test]
    fn transformed_route_agrees_with_direct() {
        let spec = catalog::american_put(Default::default())
            .with_field(Arc::new(ExprField::parse(&["0.3*y + 0.01*x1"], 1).unwrap()));
        let x = smooth_line(1.0, 8);
        let cfg = PdeConfig::new(0.0, 120.0, 241, 400);
        let direct = solve_obstacle_pde(&spec, Some(&x), &cfg).unwrap();
        let field = FlowField::new(spec.field.clone(), &x, 0.0, 1.0, FlowConfig::default()).unwrap();
        let via = solve_transformed_pde(&spec, &field, &cfg).unwrap();
        let gap = direct.sup_diff(&via, (20.0, 60.0)).unwrap();
        assert!(gap < 5e-3, "{gap}");
        // Obstacle equivalence: u ≥ l at every node.
        for i in 0..via.times.len() {
            for (j, &s) in via.xs.iter().enumerate() {
                assert!(via.layer(i)[j] >= (40.0 - s).max(0.0) - 1e-8);
            }
        }
    }

    #[test]
    fn zero_field_transform_is_identity() {
        let spec = catalog::american_put(Default::default());
        let cfg = PdeConfig::new(0.0, 120.0, 121, 100);
        let direct = solve_obstacle_pde(&spec, None, &cfg).unwrap();
        let field = FlowField::identity(spec.field.clone(), 0.0, 1.0, FlowConfig::default());
        let via = solve_transformed_pde(&spec, &field, &cfg).unwrap();
        assert_eq!(direct, via);
    }
}

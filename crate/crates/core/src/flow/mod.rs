//! Backward characteristic flow φ(t, x, y) = y + ∫_t^{T'} H(x, φ(r, x, y)) dX_r
//! along a smooth (piecewise-linear) driver, its derivatives, and its inverse ψ.
//!
//! Derivatives come from the variational system obtained by differentiating
//! the flow equation; the third-order terms D_yyy, D_xyy and D_xxy are carried
//! so that tables can use Hermite interpolation in y.

mod field;
mod table;
mod transform;

pub use field::{ExprField, Jet, VectorField, ZeroField};
pub use table::{FlowSlice, FlowStream};
pub use transform::{build_transformed_driver, PointCoeffs, TransformedGrowth, TransformedProblem};

use crate::error::{Error, Result};
use crate::ode::{Dopri, Workspace};
use crate::roughpath::DrivingSignal;
use smallvec::{smallvec, SmallVec};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub type Small = SmallVec<[f64; 4]>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Absolute and relative tolerance of the adaptive ODE solver.
    pub tol_flow: f64,
    /// Residual tolerance |φ(ψ) − v| of the inversion.
    pub tol_inv: f64,
    /// Inversion bracket [−R, R]; obstacle values below −R are treated as inactive.
    pub bracket: f64,
    /// Number of y-nodes in interpolation tables.
    pub n_y: usize,
    /// Number of x-nodes in tables for x-dependent fields (d = 1).
    pub n_x: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            tol_flow: 1e-8,
            tol_inv: 1e-10,
            bracket: 100.0,
            n_y: 257,
            n_x: 65,
        }
    }
}

/// φ and its derivatives at one point. Matrix entries are row-major d×d.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPoint {
    pub phi: f64,
    pub dy: f64,
    pub dyy: f64,
    pub dyyy: f64,
    pub dx: Small,
    pub dxy: Small,
    pub dxyy: Small,
    pub dxx: Small,
    pub dxxy: Small,
}

impl FlowPoint {
    pub fn identity(y: f64, d: usize) -> Self {
        Self {
            phi: y,
            dy: 1.0,
            dyy: 0.0,
            dyyy: 0.0,
            dx: smallvec![0.0; d],
            dxy: smallvec![0.0; d],
            dxyy: smallvec![0.0; d],
            dxx: smallvec![0.0; d * d],
            dxxy: smallvec![0.0; d * d],
        }
    }
}

/// Offsets of the variational state vector:
/// φ, J = D_yφ, B = D_yyφ, F = D_yyyφ, then A = D_xφ, C = D_xyφ, Q = D_xyyφ
/// (d each) and E = D_xxφ, R = D_xxyφ (d² each) when the field depends on x.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub d: usize,
    pub full: bool,
}

impl Layout {
    pub fn len(&self) -> usize {
        if self.full {
            4 + 3 * self.d + 2 * self.d * self.d
        } else {
            4
        }
    }
    fn a(&self) -> usize {
        4
    }
    fn c(&self) -> usize {
        4 + self.d
    }
    fn q(&self) -> usize {
        4 + 2 * self.d
    }
    fn e(&self) -> usize {
        4 + 3 * self.d
    }
    fn r(&self) -> usize {
        4 + 3 * self.d + self.d * self.d
    }

    pub fn initial(&self, y: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = y;
        out[1] = 1.0;
    }

    pub fn to_point(&self, s: &[f64]) -> FlowPoint {
        let d = self.d;
        let mut p = FlowPoint::identity(s[0], d);
        p.dy = s[1];
        p.dyy = s[2];
        p.dyyy = s[3];
        if self.full {
            p.dx.copy_from_slice(&s[self.a()..self.a() + d]);
            p.dxy.copy_from_slice(&s[self.c()..self.c() + d]);
            p.dxyy.copy_from_slice(&s[self.q()..self.q() + d]);
            p.dxx.copy_from_slice(&s[self.e()..self.e() + d * d]);
            p.dxxy.copy_from_slice(&s[self.r()..self.r() + d * d]);
        }
        p
    }

    /// Right-hand side in reversed time s = T' − t for driver slope `v`.
    pub fn rhs(&self, field: &dyn VectorField, v: &[f64], x: &[f64], s: &[f64], out: &mut [f64], g: &mut Jet) {
        g.clear();
        field.add_weighted_jet(v, x, s[0], self.full, g);
        let (j, b, f) = (s[1], s[2], s[3]);
        out[0] = g.h;
        out[1] = g.hy * j;
        out[2] = g.hyy * j * j + g.hy * b;
        out[3] = g.hyyy * j * j * j + 3.0 * g.hyy * j * b + g.hy * f;
        if !self.full {
            return;
        }
        let d = self.d;
        let (ia, ic, iq, ie, ir) = (self.a(), self.c(), self.q(), self.e(), self.r());
        for i in 0..d {
            let ai = s[ia + i];
            let ci = s[ic + i];
            let mi = g.hxy[i] + g.hyy * ai;
            out[ia + i] = g.hy * ai + g.hx[i];
            out[ic + i] = mi * j + g.hy * ci;
            out[iq + i] = (g.hxyy[i] + g.hyyy * ai) * j * j
                + 2.0 * g.hyy * j * ci
                + mi * b
                + g.hy * s[iq + i];
        }
        for i in 0..d {
            let ai = s[ia + i];
            let mi = g.hxy[i] + g.hyy * ai;
            for k in 0..d {
                let ak = s[ia + k];
                let mk = g.hxy[k] + g.hyy * ak;
                let eik = s[ie + i * d + k];
                out[ie + i * d + k] = g.hxx[i * d + k]
                    + g.hxy[i] * ak
                    + g.hxy[k] * ai
                    + g.hyy * ai * ak
                    + g.hy * eik;
                out[ir + i * d + k] = (g.hxxy[i * d + k]
                    + g.hxyy[i] * ak
                    + g.hxyy[k] * ai
                    + g.hyyy * ai * ak
                    + g.hyy * eik)
                    * j
                    + mi * s[ic + k]
                    + mk * s[ic + i]
                    + g.hy * s[ir + i * d + k];
            }
        }
    }
}

/// The flow on one cell [start, terminal] for a fixed smooth driver.
pub struct FlowField {
    field: Arc<dyn VectorField>,
    start: f64,
    terminal: f64,
    /// Linear pieces of the driver inside the cell, increasing in time.
    pieces: Vec<(f64, f64, Vec<f64>)>,
    config: FlowConfig,
    identity: bool,
    layout: Layout,
    fallbacks: AtomicUsize,
}

impl std::fmt::Debug for FlowField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowField")
            .field("start", &self.start)
            .field("terminal", &self.terminal)
            .field("pieces", &self.pieces.len())
            .field("identity", &self.identity)
            .finish()
    }
}

impl FlowField {
    pub fn new(
        field: Arc<dyn VectorField>,
        driver: &DrivingSignal,
        start: f64,
        terminal: f64,
        config: FlowConfig,
    ) -> Result<Self> {
        if !driver.is_smooth() {
            return Err(Error::Invalid(
                "flows are solved along smooth approximants; take an approximant or call to_smooth() first"
                    .into(),
            ));
        }
        if field.signal_dim() != driver.dim() {
            return Err(Error::Invalid(format!(
                "vector field has {} components but the signal has dimension {}",
                field.signal_dim(),
                driver.dim()
            )));
        }
        let horizon = driver.grid().horizon();
        if !(0.0 <= start && start < terminal && terminal <= horizon * (1.0 + 1e-12)) {
            return Err(Error::Invalid(format!(
                "flow cell [{start}, {terminal}] is not inside [0, {horizon}]"
            )));
        }
        let pieces: Vec<_> = driver
            .pieces(start, terminal)
            .into_iter()
            .filter(|(_, _, v)| v.iter().any(|&s| s != 0.0))
            .collect();
        let identity = field.is_zero() || pieces.is_empty();
        let layout = Layout {
            d: field.state_dim(),
            full: field.depends_on_x() && !identity,
        };
        Ok(Self {
            field,
            start,
            terminal,
            pieces,
            config,
            identity,
            layout,
            fallbacks: AtomicUsize::new(0),
        })
    }

    /// The identity flow on [start, terminal], used where the rough term is absent.
    pub fn identity(field: Arc<dyn VectorField>, start: f64, terminal: f64, config: FlowConfig) -> Self {
        let layout = Layout {
            d: field.state_dim(),
            full: false,
        };
        Self {
            field,
            start,
            terminal,
            pieces: Vec::new(),
            config,
            identity: true,
            layout,
            fallbacks: AtomicUsize::new(0),
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn terminal(&self) -> f64 {
        self.terminal
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn state_dim(&self) -> usize {
        self.layout.d
    }

    pub fn depends_on_x(&self) -> bool {
        self.layout.full
    }

    pub fn vector_field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub(crate) fn layout(&self) -> Layout {
        self.layout
    }

    /// Number of table lookups that fell back to on-demand ODE solves.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub(crate) fn note_fallback(&self) {
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
    }

    /// Integrate the variational state from `t_hi` down to `t_lo`.
    pub(crate) fn propagate(
        &self,
        x: &[f64],
        state: &mut [f64],
        t_hi: f64,
        t_lo: f64,
        h: &mut f64,
        ws: &mut Workspace,
        jet: &mut Jet,
        y0: f64,
    ) -> Result<()> {
        if self.identity || t_lo >= t_hi {
            return Ok(());
        }
        let solver = Dopri::new(self.config.tol_flow);
        let layout = self.layout;
        let field = self.field.as_ref();
        let end = self.pieces.partition_point(|(a, _, _)| *a < t_hi);
        for (a, b, v) in self.pieces[..end].iter().rev() {
            let hi = b.min(t_hi);
            let lo = a.max(t_lo);
            if hi <= lo {
                if *b <= t_lo {
                    break;
                }
                continue;
            }
            solver
                .integrate(
                    |_, s, ds| {
                        layout.rhs(field, v, x, s, ds, jet);
                        ds.iter_mut().for_each(|q| *q = -*q);
                    },
                    hi,
                    lo,
                    state,
                    h,
                    ws,
                )
                .map_err(|e| Error::StepUnderflow {
                    t: e.t,
                    x: x.to_vec(),
                    y: y0,
                })?;
        }
        Ok(())
    }

    /// φ and derivatives at (t, x, y) by a direct ODE solve from the terminal time.
    pub fn point(&self, t: f64, x: &[f64], y: f64) -> Result<FlowPoint> {
        let d = self.layout.d;
        if x.len() != d {
            return Err(Error::Invalid(format!("x has length {}, expected {d}", x.len())));
        }
        if t > self.terminal || t < self.start - 1e-12 * self.terminal.max(1.0) {
            return Err(Error::Invalid(format!(
                "query time {t} outside the flow cell [{}, {}]",
                self.start, self.terminal
            )));
        }
        if self.identity {
            return Ok(FlowPoint::identity(y, d));
        }
        let mut state = vec![0.0; self.layout.len()];
        self.layout.initial(y, &mut state);
        let mut ws = Workspace::new(state.len());
        let mut jet = Jet::zeros(d);
        let mut h = 0.0;
        self.propagate(x, &mut state, self.terminal, t, &mut h, &mut ws, &mut jet, y)?;
        Ok(self.layout.to_point(&state))
    }

    /// ψ(t, x, v): the y with φ(t, x, y) = v, by safeguarded Newton on direct solves.
    pub fn invert(&self, t: f64, x: &[f64], v: f64) -> Result<f64> {
        if self.identity {
            return Ok(v);
        }
        let eval = |y: f64| -> Result<(f64, f64)> {
            let p = self.point(t, x, y)?;
            Ok((p.phi - v, p.dy))
        };
        invert_monotone(eval, v, self.config.bracket, self.config.tol_inv)
    }

    /// Stream of interpolation tables at decreasing times, starting from the terminal time.
    pub fn stream(&self, y_range: (f64, f64), x_range: Option<(f64, f64)>) -> FlowStream<'_> {
        FlowStream::new(self, y_range, x_range)
    }

    /// Stream whose tables sit exactly on the given uniform x-nodes (d = 1).
    pub fn stream_on_nodes(&self, y_range: (f64, f64), x_nodes: (f64, f64, usize)) -> FlowStream<'_> {
        FlowStream::on_nodes(self, y_range, x_nodes)
    }
}

/// Solve g(y) = 0 for increasing g, starting from `y0`, within [−r, r].
/// `eval` returns (g(y), g'(y)).
pub(crate) fn invert_monotone<F>(mut eval: F, y0: f64, r: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let mut y = y0.clamp(-r, r);
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    let (mut g, mut dg) = eval(y)?;
    for _ in 0..200 {
        if !g.is_finite() {
            return Err(Error::Inversion(format!("non-finite flow value at y = {y}")));
        }
        if g.abs() <= tol {
            return Ok(y);
        }
        if g < 0.0 {
            lo = Some(lo.map_or(y, |l: f64| l.max(y)));
        } else {
            hi = Some(hi.map_or(y, |h: f64| h.min(y)));
        }
        let mut next = if dg > 0.0 && dg.is_finite() { y - g / dg } else { f64::NAN };
        match (lo, hi) {
            (Some(l), Some(h)) => {
                if !(next > l && next < h) {
                    next = 0.5 * (l + h);
                }
                if h - l <= 4.0 * f64::EPSILON * (1.0 + l.abs().max(h.abs())) {
                    return Ok(if g.abs() < tol * 1e3 { y } else { 0.5 * (l + h) });
                }
            }
            _ => {
                if !next.is_finite() {
                    next = if g < 0.0 { y + 1.0 } else { y - 1.0 };
                }
                if next > r || next < -r {
                    let edge = if g < 0.0 { r } else { -r };
                    if y == edge {
                        return Err(Error::Inversion(format!(
                            "no bracket for the target within [-{r}, {r}]"
                        )));
                    }
                    next = edge;
                }
            }
        }
        y = next;
        let e = eval(y)?;
        g = e.0;
        dg = e.1;
    }
    if g.abs() <= tol * 1e3 {
        Ok(y)
    } else {
        Err(Error::Inversion(format!(
            "Newton/bisection did not reach tolerance (residual {g:e})"
        )))
    }
}

/// Largest flow sensitivities over a sample of (t, x, y).
#[derive(Clone, Debug, PartialEq)]
pub struct SmallnessReport {
    pub max_dx: f64,
    pub max_dy_minus_one: f64,
    pub max_dyy: f64,
    pub max_dxy: f64,
    pub max_dxx: f64,
    pub epsilon: f64,
    pub all_below: bool,
}

/// Sample |D_xφ|, |D_yφ − 1| and the second derivatives at `n_t` times of the
/// cell and every (x, y) in the given samples.
pub fn check_flow_smallness(
    field: &FlowField,
    epsilon: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    n_t: usize,
) -> Result<SmallnessReport> {
    let mut r = SmallnessReport {
        max_dx: 0.0,
        max_dy_minus_one: 0.0,
        max_dyy: 0.0,
        max_dxy: 0.0,
        max_dxx: 0.0,
        epsilon,
        all_below: true,
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n_t = n_t.max(1);
    for k in 0..n_t {
        let t = field.start + (field.terminal - field.start) * k as f64 / n_t as f64;
        for x in xs {
            for &y in ys {
                let p = field.point(t, x, y)?;
                r.max_dx = r.max_dx.max(norm(&p.dx));
                r.max_dy_minus_one = r.max_dy_minus_one.max((p.dy - 1.0).abs());
                r.max_dyy = r.max_dyy.max(p.dyy.abs());
                r.max_dxy = r.max_dxy.max(norm(&p.dxy));
                r.max_dxx = r.max_dxx.max(norm(&p.dxx));
            }
        }
    }
    r.all_below = [r.max_dx, r.max_dy_minus_one, r.max_dyy, r.max_dxy, r.max_dxx]
        .iter()
        .all(|&m| m <= epsilon);
    Ok(r)
}

/// CSV section `t,y,phi,dy_phi` at a fixed x over the given times and y values.
pub fn write_flow_section_csv<W: Write>(
    field: &FlowField,
    x: &[f64],
    times: &[f64],
    ys: &[f64],
    mut w: W,
) -> Result<()> {
    writeln!(w, "t,y,phi,dy_phi")?;
    for &t in times {
        for &y in ys {
            let p = field.point(t, x, y)?;
            writeln!(w, "{t},{y},{},{}", p.phi, p.dy)?;
        }
    }
    Ok(())
}

//! Interpolation tables of the flow at decreasing times.
//!
//! Each table stores the variational state on a uniform y-grid (and, for
//! x-dependent fields in one space dimension, on a uniform x-grid). Values in
//! y use Hermite interpolation from the stored derivatives; x uses 4-point
//! Lagrange. Queries outside the table fall back to a direct solve.

use super::{invert_monotone, FlowField, FlowPoint, Layout};
use crate::error::{Error, Result};
use crate::ode::Workspace;

use super::Jet;

/// Quintic Hermite interpolant on [0, 1] from value, first and second
/// derivative at both ends; `h` is the cell width in the original variable.
#[allow(clippy::too_many_arguments)]
pub(crate) fn quintic(u: f64, h: f64, f0: f64, d0: f64, s0: f64, f1: f64, d1: f64, s1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let h0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h1 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
    let h2 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
    let h3 = 0.5 * u3 - u4 + 0.5 * u5;
    let h4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let h5 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    f0 * h0 + h * d0 * h1 + h * h * s0 * h2 + f1 * h5 + h * d1 * h4 + h * h * s1 * h3
}

/// Cubic Hermite interpolant from values and first derivatives.
pub(crate) fn cubic(u: f64, h: f64, f0: f64, d0: f64, f1: f64, d1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    f0 * (2.0 * u3 - 3.0 * u2 + 1.0)
        + h * d0 * (u3 - 2.0 * u2 + u)
        + f1 * (3.0 * u2 - 2.0 * u3)
        + h * d1 * (u3 - u2)
}

#[derive(Clone, Debug)]
struct Table {
    layout: Layout,
    y_lo: f64,
    hy: f64,
    n_y: usize,
    /// (x_lo, hx, n_x) when the table is indexed by x as well.
    xs: Option<(f64, f64, usize)>,
    data: Vec<f64>,
}

impl Table {
    fn width(&self) -> usize {
        self.layout.len()
    }

    fn node(&self, jx: usize, iy: usize) -> &[f64] {
        let w = self.width();
        let k = (jx * self.n_y + iy) * w;
        &self.data[k..k + w]
    }

    fn y_hi(&self) -> f64 {
        self.y_lo + self.hy * (self.n_y - 1) as f64
    }

    /// Interpolate in y at x-node `jx`, accumulating `w ×` the point into `acc`.
    fn accumulate(&self, jx: usize, y: f64, w: f64, acc: &mut FlowPoint) {
        let r = ((y - self.y_lo) / self.hy).max(0.0);
        let k = (r.floor() as usize).min(self.n_y - 2);
        let u = r - k as f64;
        let (a, b) = (self.node(jx, k), self.node(jx, k + 1));
        let h = self.hy;
        let lin = |i: usize| a[i] + u * (b[i] - a[i]);
        acc.phi += w * quintic(u, h, a[0], a[1], a[2], b[0], b[1], b[2]);
        acc.dy += w * quintic(u, h, a[1], a[2], a[3], b[1], b[2], b[3]);
        acc.dyy += w * cubic(u, h, a[2], a[3], b[2], b[3]);
        acc.dyyy += w * lin(3);
        if !self.layout.full {
            return;
        }
        let d = self.layout.d;
        let (ia, ic, iq, ie, ir) = (4, 4 + d, 4 + 2 * d, 4 + 3 * d, 4 + 3 * d + d * d);
        for i in 0..d {
            acc.dx[i] += w * quintic(u, h, a[ia + i], a[ic + i], a[iq + i], b[ia + i], b[ic + i], b[iq + i]);
            acc.dxy[i] += w * cubic(u, h, a[ic + i], a[iq + i], b[ic + i], b[iq + i]);
            acc.dxyy[i] += w * lin(iq + i);
        }
        for ij in 0..d * d {
            acc.dxx[ij] += w * cubic(u, h, a[ie + ij], a[ir + ij], b[ie + ij], b[ir + ij]);
            acc.dxxy[ij] += w * lin(ir + ij);
        }
    }

    /// None when (x, y) lies outside the table.
    fn eval(&self, x: &[f64], y: f64) -> Option<FlowPoint> {
        if !(y >= self.y_lo && y <= self.y_hi()) {
            return None;
        }
        let mut p = FlowPoint::identity(0.0, self.layout.d);
        p.dy = 0.0;
        match self.xs {
            None => self.accumulate(0, y, 1.0, &mut p),
            Some((x_lo, hx, n_x)) => {
                let r = (x[0] - x_lo) / hx;
                if !(r >= -1e-9 && r <= (n_x - 1) as f64 + 1e-9) {
                    return None;
                }
                let near = r.round();
                if (r - near).abs() <= 1e-9 {
                    self.accumulate(near as usize, y, 1.0, &mut p);
                } else {
                    let m = (r.floor() as isize - 1).clamp(0, n_x as isize - 4) as usize;
                    let s = r - m as f64;
                    for a in 0..4 {
                        let mut w = 1.0;
                        for b in 0..4 {
                            if a != b {
                                w *= (s - b as f64) / (a as f64 - b as f64);
                            }
                        }
                        self.accumulate(m + a, y, w, &mut p);
                    }
                }
            }
        }
        Some(p)
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Identity,
    Table(Table),
    Exact,
}

/// Flow tables produced on demand while walking backward in time.
pub struct FlowStream<'a> {
    field: &'a FlowField,
    kind: Kind,
    t: f64,
    steps: Vec<f64>,
    ws: Workspace,
    jet: Jet,
}

impl<'a> FlowStream<'a> {
    pub(super) fn new(field: &'a FlowField, y_range: (f64, f64), x_range: Option<(f64, f64)>) -> Self {
        let n_x = field.config().n_x.max(4);
        let xs = match (field.depends_on_x(), x_range) {
            (false, _) => None,
            (true, Some((lo, hi))) if field.state_dim() == 1 && hi > lo => {
                Some((lo, (hi - lo) / (n_x - 1) as f64, n_x))
            }
            _ => return Self::build(field, Kind::Exact),
        };
        Self::with_table(field, y_range, xs)
    }

    pub(super) fn on_nodes(field: &'a FlowField, y_range: (f64, f64), nodes: (f64, f64, usize)) -> Self {
        let (lo, hi, n) = nodes;
        let xs = if field.depends_on_x() && field.state_dim() == 1 && n >= 4 && hi > lo {
            Some((lo, (hi - lo) / (n - 1) as f64, n))
        } else if field.depends_on_x() {
            return Self::build(field, Kind::Exact);
        } else {
            None
        };
        Self::with_table(field, y_range, xs)
    }

    fn with_table(field: &'a FlowField, y_range: (f64, f64), xs: Option<(f64, f64, usize)>) -> Self {
        if field.is_identity() {
            return Self::build(field, Kind::Identity);
        }
        let layout = field.layout();
        let n_y = field.config().n_y.max(3);
        let (y_lo, y_hi) = if y_range.1 > y_range.0 { y_range } else { (y_range.0 - 1.0, y_range.0 + 1.0) };
        let hy = (y_hi - y_lo) / (n_y - 1) as f64;
        let n_x = xs.map_or(1, |x| x.2);
        let w = layout.len();
        let mut data = vec![0.0; n_x * n_y * w];
        for jx in 0..n_x {
            for iy in 0..n_y {
                let k = (jx * n_y + iy) * w;
                layout.initial(y_lo + hy * iy as f64, &mut data[k..k + w]);
            }
        }
        let table = Table {
            layout,
            y_lo,
            hy,
            n_y,
            xs,
            data,
        };
        Self::build(field, Kind::Table(table))
    }

    fn build(field: &'a FlowField, kind: Kind) -> Self {
        let n = match &kind {
            Kind::Table(t) => t.data.len() / t.width(),
            _ => 0,
        };
        let w = field.layout().len();
        Self {
            field,
            kind,
            t: field.terminal(),
            steps: vec![0.0; n],
            ws: Workspace::new(w),
            jet: Jet::zeros(field.state_dim()),
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Advance the tables to time `t` (not later than the current time) and
    /// return a snapshot.
    pub fn slice_at(&mut self, t: f64) -> Result<FlowSlice<'a>> {
        if t > self.t {
            return Err(Error::Invalid(format!(
                "flow stream moves backward only: at {}, asked for {t}",
                self.t
            )));
        }
        if let Kind::Table(table) = &mut self.kind {
            if t < self.t {
                let w = table.width();
                let d = table.layout.d;
                for node in 0..table.data.len() / w {
                    let iy = node % table.n_y;
                    let y0 = table.y_lo + table.hy * iy as f64;
                    let mut x = vec![0.0; d];
                    if let Some((x_lo, hx, _)) = table.xs {
                        x[0] = x_lo + hx * (node / table.n_y) as f64;
                    }
                    let state = &mut table.data[node * w..(node + 1) * w];
                    self.field.propagate(
                        &x,
                        state,
                        self.t,
                        t,
                        &mut self.steps[node],
                        &mut self.ws,
                        &mut self.jet,
                        y0,
                    )?;
                }
            }
        }
        self.t = t;
        Ok(FlowSlice {
            field: self.field,
            t,
            kind: self.kind.clone(),
        })
    }
}

/// The flow and its derivatives at one fixed time.
#[derive(Clone, Debug)]
pub struct FlowSlice<'a> {
    field: &'a FlowField,
    t: f64,
    kind: Kind,
}

impl<'a> FlowSlice<'a> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    pub fn field(&self) -> &'a FlowField {
        self.field
    }

    pub fn eval(&self, x: &[f64], y: f64) -> Result<FlowPoint> {
        match &self.kind {
            Kind::Identity => Ok(FlowPoint::identity(y, self.field.state_dim())),
            Kind::Exact => self.field.point(self.t, x, y),
            Kind::Table(table) => match table.eval(x, y) {
                Some(p) => Ok(p),
                None => {
                    self.field.note_fallback();
                    self.field.point(self.t, x, y)
                }
            },
        }
    }

    /// ψ(t, x, v).
    pub fn invert(&self, x: &[f64], v: f64) -> Result<f64> {
        if self.is_identity() {
            return Ok(v);
        }
        let cfg = self.field.config();
        invert_monotone(
            |y| {
                let p = self.eval(x, y)?;
                Ok((p.phi - v, p.dy))
            },
            v,
            cfg.bracket,
            cfg.tol_inv,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ExprField, FlowConfig, VectorField};
    use crate::roughpath::{sample_signal, SignalKind, TimeGrid};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    #[test]
    fn hermite_reproduces_polynomials() {
        let p = |y: f64| 1.0 - 2.0 * y + 0.5 * y.powi(3) + 0.25 * y.powi(5);
        let dp = |y: f64| -2.0 + 1.5 * y * y + 1.25 * y.powi(4);
        let ddp = |y: f64| 3.0 * y + 5.0 * y.powi(3);
        let (a, b) = (0.3, 1.1);
        let h = b - a;
        for k in 0..=10 {
            let u = k as f64 / 10.0;
            let y = a + u * h;
            let q = quintic(u, h, p(a), dp(a), ddp(a), p(b), dp(b), ddp(b));
            assert!((q - p(y)).abs() < 1e-13);
            let c3 = |y: f64| y.powi(3) - y;
            let d3 = |y: f64| 3.0 * y * y - 1.0;
            assert!((cubic(u, h, c3(a), d3(a), c3(b), d3(b)) - c3(y)).abs() < 1e-13);
        }
    }

    fn brownian_field(src: &[&str], seed: u64) -> FlowField {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let sig = sample_signal(&SignalKind::Brownian { dim: src.len() }, &grid, seed)
            .unwrap()
            .to_smooth();
        let h: Arc<dyn VectorField> = Arc::new(ExprField::parse(src, 1).unwrap());
        FlowField::new(h, &sig, 0.0, 1.0, FlowConfig::default()).unwrap()
    }

    fn compare_with_direct(field: &FlowField, xs: (f64, f64), tol: f64) {
        let mut stream = field.stream((-3.0, 3.0), Some(xs));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for k in (0..10).rev() {
            let t = k as f64 / 10.0;
            let slice = stream.slice_at(t).unwrap();
            for _ in 0..100 {
                let x = [rng.gen_range(xs.0..xs.1)];
                let y = rng.gen_range(-2.5..2.5);
                let a = slice.eval(&x, y).unwrap();
                let b = field.point(t, &x, y).unwrap();
                worst = worst.max((a.phi - b.phi).abs()).max((a.dy - b.dy).abs());
                let psi = slice.invert(&x, b.phi).unwrap();
                assert!((psi - y).abs() < 1e-7, "psi {psi} vs {y}");
            }
        }
        assert!(worst <= tol, "table vs direct: {worst:e}");
    }

    #[test]
    fn table_matches_direct_solves() {
        let f = brownian_field(&["0.5*sin(y)", "0.3*cos(y)"], 11);
        compare_with_direct(&f, (0.0, 1.0), 10.0 * f.config().tol_flow);
    }

    #[test]
    fn x_dependent_table_matches_direct_solves() {
        let f = brownian_field(&["0.3*sin(y) + 0.2*x1"], 12);
        compare_with_direct(&f, (-1.0, 1.0), 1e-6);
    }

    #[test]
    fn out_of_table_queries_fall_back() {
        let f = brownian_field(&["0.5*sin(y)"], 5);
        let mut s = f.stream((-1.0, 1.0), None);
        let slice = s.slice_at(0.5).unwrap();
        let a = slice.eval(&[0.0], 4.0).unwrap();
        let b = f.point(0.5, &[0.0], 4.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(f.fallback_count(), 1);
        assert!(s.slice_at(0.7).is_err());
    }
}

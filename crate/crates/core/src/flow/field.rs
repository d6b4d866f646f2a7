//! Vector fields H(x, y) ∈ R^l with derivatives up to order three.

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};

/// Value and partial derivatives of a scalar function of (x, y) at one point.
///
/// `hxx` and `hxxy` are row-major d×d.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Jet {
    pub h: f64,
    pub hy: f64,
    pub hyy: f64,
    pub hyyy: f64,
    pub hx: Vec<f64>,
    pub hxy: Vec<f64>,
    pub hxyy: Vec<f64>,
    pub hxx: Vec<f64>,
    pub hxxy: Vec<f64>,
}

impl Jet {
    pub fn zeros(d: usize) -> Self {
        Self {
            hx: vec![0.0; d],
            hxy: vec![0.0; d],
            hxyy: vec![0.0; d],
            hxx: vec![0.0; d * d],
            hxxy: vec![0.0; d * d],
            ..Self::default()
        }
    }

    pub fn clear(&mut self) {
        self.h = 0.0;
        self.hy = 0.0;
        self.hyy = 0.0;
        self.hyyy = 0.0;
        for v in [
            &mut self.hx,
            &mut self.hxy,
            &mut self.hxyy,
            &mut self.hxx,
            &mut self.hxxy,
        ] {
            v.iter_mut().for_each(|a| *a = 0.0);
        }
    }
}

/// The rough vector field H: R^d × R → R^l of the equation.
pub trait VectorField: Send + Sync {
    /// Number of signal components l.
    fn signal_dim(&self) -> usize;
    /// State dimension d of x.
    fn state_dim(&self) -> usize;
    /// False when H does not depend on x, which shrinks the variational system.
    fn depends_on_x(&self) -> bool;
    /// True when H vanishes identically.
    fn is_zero(&self) -> bool;
    /// Accumulate Σ_k w_k · jet(H_k)(x, y) into `out` (which is not cleared).
    /// x-derivatives may be skipped when `with_x` is false.
    fn add_weighted_jet(&self, w: &[f64], x: &[f64], y: f64, with_x: bool, out: &mut Jet);
}

/// Identically zero field.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    pub signal_dim: usize,
    pub state_dim: usize,
}

impl VectorField for ZeroField {
    fn signal_dim(&self) -> usize {
        self.signal_dim
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn depends_on_x(&self) -> bool {
        false
    }
    fn is_zero(&self) -> bool {
        true
    }
    fn add_weighted_jet(&self, _: &[f64], _: &[f64], _: f64, _: bool, _: &mut Jet) {}
}

#[derive(Clone, Debug)]
struct ComponentJet {
    h: Expr,
    hy: Expr,
    hyy: Expr,
    hyyy: Expr,
    hx: Vec<Expr>,
    hxy: Vec<Expr>,
    hxyy: Vec<Expr>,
    hxx: Vec<Expr>,
    hxxy: Vec<Expr>,
}

/// Field given by one formula in `x1..xd, y` per signal component, with
/// symbolic derivatives.
#[derive(Clone, Debug)]
pub struct ExprField {
    state_dim: usize,
    components: Vec<ComponentJet>,
    depends_on_x: bool,
    zero: bool,
}

impl ExprField {
    pub fn new(components: Vec<Expr>, state_dim: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("vector field needs at least one component".into()));
        }
        let mut out = Vec::with_capacity(components.len());
        for (k, h) in components.into_iter().enumerate() {
            if h.depends_on(Var::T) || h.max_index(false) > 0 {
                return Err(Error::Expr(format!(
                    "vector field component {} may only use x and y",
                    k + 1
                )));
            }
            if h.max_index(true) > state_dim {
                return Err(Error::Expr(format!(
                    "vector field component {} uses x{} but the state dimension is {state_dim}",
                    k + 1,
                    h.max_index(true)
                )));
            }
            let hy = h.diff(Var::Y);
            let hyy = hy.diff(Var::Y);
            let hyyy = hyy.diff(Var::Y);
            let hx: Vec<Expr> = (0..state_dim).map(|i| h.diff(Var::X(i))).collect();
            let hxy: Vec<Expr> = hx.iter().map(|e| e.diff(Var::Y)).collect();
            let hxyy: Vec<Expr> = hxy.iter().map(|e| e.diff(Var::Y)).collect();
            let mut hxx = Vec::with_capacity(state_dim * state_dim);
            let mut hxxy = Vec::with_capacity(state_dim * state_dim);
            for i in 0..state_dim {
                for j in 0..state_dim {
                    let e = hx[i].diff(Var::X(j));
                    hxxy.push(e.diff(Var::Y));
                    hxx.push(e);
                }
            }
            out.push(ComponentJet {
                h,
                hy,
                hyy,
                hyyy,
                hx,
                hxy,
                hxyy,
                hxx,
                hxxy,
            });
        }
        let depends_on_x = out
            .iter()
            .any(|c| (0..state_dim).any(|i| c.h.depends_on(Var::X(i))));
        let zero = out.iter().all(|c| c.h.is_zero());
        Ok(Self {
            state_dim,
            components: out,
            depends_on_x,
            zero,
        })
    }

    pub fn parse(components: &[&str], state_dim: usize) -> Result<Self> {
        let exprs = components
            .iter()
            .map(|s| Expr::parse(s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(exprs, state_dim)
    }

    /// Value of component `k` at (x, y).
    pub fn value(&self, k: usize, x: &[f64], y: f64) -> f64 {
        self.components[k].h.eval(&Env {
            t: 0.0,
            x,
            y,
            z: &[],
        })
    }
}

impl VectorField for ExprField {
    fn signal_dim(&self) -> usize {
        self.components.len()
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn depends_on_x(&self) -> bool {
        self.depends_on_x
    }
    fn is_zero(&self) -> bool {
        self.zero
    }
    fn add_weighted_jet(&self, w: &[f64], x: &[f64], y: f64, with_x: bool, out: &mut Jet) {
        let env = Env {
            t: 0.0,
            x,
            y,
            z: &[],
        };
        let acc = |e: &Expr, wk: f64, slot: &mut f64| {
            if !e.is_zero() {
                *slot += wk * e.eval(&env);
            }
        };
        for (c, &wk) in self.components.iter().zip(w) {
            if wk == 0.0 {
                continue;
            }
            acc(&c.h, wk, &mut out.h);
            acc(&c.hy, wk, &mut out.hy);
            acc(&c.hyy, wk, &mut out.hyy);
            acc(&c.hyyy, wk, &mut out.hyyy);
            if with_x {
                for i in 0..self.state_dim {
                    acc(&c.hx[i], wk, &mut out.hx[i]);
                    acc(&c.hxy[i], wk, &mut out.hxy[i]);
                    acc(&c.hxyy[i], wk, &mut out.hxyy[i]);
                }
                for ij in 0..self.state_dim * self.state_dim {
                    acc(&c.hxx[ij], wk, &mut out.hxx[ij]);
                    acc(&c.hxxy[ij], wk, &mut out.hxxy[ij]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet_of(f: &ExprField, x: &[f64], y: f64) -> Jet {
        let mut j = Jet::zeros(f.state_dim());
        f.add_weighted_jet(&[1.0], x, y, true, &mut j);
        j
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let f = ExprField::parse(&["sin(x1) * cos(y) + 0.3 * x1^2 * y^3"], 1).unwrap();
        let (x, y, h) = (0.4, -0.7, 1e-4);
        let j = jet_of(&f, &[x], y);
        let fy = |x: f64, y: f64| jet_of(&f, &[x], y);
        let cd = |a: f64, b: f64| (a - b) / (2.0 * h);
        let checks = [
            (j.hy, cd(fy(x, y + h).h, fy(x, y - h).h)),
            (j.hyy, cd(fy(x, y + h).hy, fy(x, y - h).hy)),
            (j.hyyy, cd(fy(x, y + h).hyy, fy(x, y - h).hyy)),
            (j.hx[0], cd(fy(x + h, y).h, fy(x - h, y).h)),
            (j.hxy[0], cd(fy(x + h, y).hy, fy(x - h, y).hy)),
            (j.hxyy[0], cd(fy(x + h, y).hyy, fy(x - h, y).hyy)),
            (j.hxx[0], cd(fy(x + h, y).hx[0], fy(x - h, y).hx[0])),
            (j.hxxy[0], cd(fy(x + h, y).hxy[0], fy(x - h, y).hxy[0])),
        ];
        for (an, fd) in checks {
            assert!((an - fd).abs() < 1e-6 * (1.0 + an.abs()), "{an} vs {fd}");
        }
    }

    #[test]
    fn structure_flags() {
        assert!(ExprField::parse(&["0"], 1).unwrap().is_zero());
        assert!(!ExprField::parse(&["0.5 * y"], 1).unwrap().depends_on_x());
        assert!(ExprField::parse(&["x1 * y", "1"], 1).unwrap().depends_on_x());
        assert!(ExprField::parse(&["t * y"], 1).is_err());
        assert!(ExprField::parse(&["x2 * y"], 1).is_err());
    }
}

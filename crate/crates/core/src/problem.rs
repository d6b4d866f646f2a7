//! Problem data: forward coefficients, driver, obstacle, terminal condition,
//! the rough vector field and the declared growth constants.

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::flow::{ExprField, VectorField, ZeroField};
use std::sync::Arc;

/// f(t, x, y, z).
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// Writes b(t, x) (length d) or σ(t, x) (row-major d×d) into the output slice.
pub type CoefficientFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// l(t, x).
pub type ObstacleFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// g(x).
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// y ↦ c(y), increasing and positive.
pub type GrowthFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Declared constants: |f(t,x,y,z)| ≤ c(|y|) + C_0|z|², coefficient bound C_S,
/// |ξ| ≤ C_ξ and |L| ≤ C_L.
#[derive(Clone)]
pub struct Growth {
    pub c: GrowthFn,
    pub c0: f64,
    pub c_s: f64,
    pub c_xi: f64,
    pub c_l: f64,
}

impl Growth {
    pub fn constant(c: f64, c0: f64, c_s: f64, c_xi: f64, c_l: f64) -> Self {
        Self {
            c: Arc::new(move |_| c),
            c0,
            c_s,
            c_xi,
            c_l,
        }
    }
}

impl std::fmt::Debug for Growth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Growth")
            .field("c(0)", &(self.c)(0.0))
            .field("c0", &self.c0)
            .field("c_s", &self.c_s)
            .field("c_xi", &self.c_xi)
            .field("c_l", &self.c_l)
            .finish()
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub driver: DriverFn,
    pub drift: CoefficientFn,
    pub diffusion: CoefficientFn,
    /// None means no obstacle.
    pub obstacle: Option<ObstacleFn>,
    pub terminal: TerminalFn,
    pub field: Arc<dyn VectorField>,
    pub growth: Growth,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("has_obstacle", &self.obstacle.is_some())
            .field("growth", &self.growth)
            .finish()
    }
}

/// Sampled checks of L_T ≤ ξ and of the declared bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub terminal_dominates: bool,
    pub worst_terminal_gap: f64,
    pub max_abs_terminal: f64,
    pub max_abs_obstacle: f64,
    pub within_declared_bounds: bool,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("state dimension must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Range(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.x0.len() != self.dim {
            return Err(Error::Invalid(format!(
                "initial point has {} entries, expected {}",
                self.x0.len(),
                self.dim
            )));
        }
        if self.field.state_dim() != self.dim {
            return Err(Error::Invalid(format!(
                "vector field is defined for dimension {}, problem has {}",
                self.field.state_dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// l(t, x), or −∞ without an obstacle.
    pub fn obstacle_at(&self, t: f64, x: &[f64]) -> f64 {
        match &self.obstacle {
            Some(l) => l(t, x),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn terminal_at(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn drift_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }

    pub fn check_assumptions(&self, xs: &[Vec<f64>]) -> AssumptionReport {
        let mut r = AssumptionReport {
            terminal_dominates: true,
            worst_terminal_gap: f64::INFINITY,
            max_abs_terminal: 0.0,
            max_abs_obstacle: 0.0,
            within_declared_bounds: true,
        };
        for x in xs {
            let g = self.terminal_at(x);
            let l = self.obstacle_at(self.horizon, x);
            r.worst_terminal_gap = r.worst_terminal_gap.min(g - l);
            r.max_abs_terminal = r.max_abs_terminal.max(g.abs());
            if l.is_finite() {
                r.max_abs_obstacle = r.max_abs_obstacle.max(l.abs());
            }
        }
        r.terminal_dominates = r.worst_terminal_gap >= 0.0;
        r.within_declared_bounds =
            r.max_abs_terminal <= self.growth.c_xi && r.max_abs_obstacle <= self.growth.c_l;
        r
    }

    pub fn with_field(mut self, field: Arc<dyn VectorField>) -> Self {
        self.field = field;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    /// ξ + δ.
    pub fn shift_terminal(mut self, delta: f64) -> Self {
        let g = self.terminal.clone();
        self.terminal = Arc::new(move |x| g(x) + delta);
        self.growth.c_xi += delta.abs();
        self
    }

    /// f + δ.
    pub fn shift_driver(mut self, delta: f64) -> Self {
        let f = self.driver.clone();
        self.driver = Arc::new(move |t, x, y, z| f(t, x, y, z) + delta);
        let c = self.growth.c.clone();
        self.growth.c = Arc::new(move |y| c(y) + delta.abs());
        self
    }

    /// L + δ.
    pub fn shift_obstacle(mut self, delta: f64) -> Self {
        if let Some(l) = self.obstacle.clone() {
            self.obstacle = Some(Arc::new(move |t, x| l(t, x) + delta));
            self.growth.c_l += delta.abs();
        }
        self
    }

    /// Driver f + m(y − l(t, x))⁻ with the obstacle removed.
    pub fn penalized(&self, m: f64) -> Self {
        let mut out = self.clone();
        if let Some(l) = self.obstacle.clone() {
            let f = self.driver.clone();
            out.driver = Arc::new(move |t, x, y, z| {
                let gap = y - l(t, x);
                let pen = if gap < 0.0 { -m * gap } else { 0.0 };
                f(t, x, y, z) + pen
            });
            out.obstacle = None;
        }
        out
    }
}

/// Coefficients as formulas in `t`, `x1..xd`, `y`, `z1..zd`.
#[derive(Clone, Debug, PartialEq)]
pub struct Formulas {
    pub dim: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub driver: String,
    /// d entries.
    pub drift: Vec<String>,
    /// d×d row-major entries.
    pub diffusion: Vec<String>,
    pub obstacle: Option<String>,
    pub terminal: String,
    /// One entry per signal component; empty means H ≡ 0.
    pub field: Vec<String>,
    pub signal_dim: usize,
    /// c(y) as a formula in `y`.
    pub growth_c: String,
    pub c0: f64,
    pub c_s: f64,
    pub c_xi: f64,
    pub c_l: f64,
}

fn parse_restricted(src: &str, what: &str, d: usize, allow: &[Var]) -> Result<Expr> {
    let e = Expr::parse(src).map_err(|e| Error::Expr(format!("{what}: {e}")))?;
    let uses = |v: Var| e.depends_on(v);
    if e.max_index(true) > d {
        return Err(Error::Expr(format!("{what} uses x{} but the dimension is {d}", e.max_index(true))));
    }
    if e.max_index(false) > d {
        return Err(Error::Expr(format!("{what} uses z{} but the dimension is {d}", e.max_index(false))));
    }
    if !allow.contains(&Var::T) && uses(Var::T) {
        return Err(Error::Expr(format!("{what} may not depend on t")));
    }
    if !allow.contains(&Var::Y) && uses(Var::Y) {
        return Err(Error::Expr(format!("{what} may not depend on y")));
    }
    if !allow.contains(&Var::X(0)) && (0..d).any(|i| uses(Var::X(i))) {
        return Err(Error::Expr(format!("{what} may not depend on x")));
    }
    if !allow.contains(&Var::Z(0)) && (0..d).any(|i| uses(Var::Z(i))) {
        return Err(Error::Expr(format!("{what} may not depend on z")));
    }
    Ok(e)
}

impl ProblemSpec {
    pub fn from_formulas(name: &str, fm: &Formulas) -> Result<Self> {
        let d = fm.dim;
        let all = [Var::T, Var::X(0), Var::Y, Var::Z(0)];
        let tx = [Var::T, Var::X(0)];
        let driver = parse_restricted(&fm.driver, "driver", d, &all)?;
        if fm.drift.len() != d {
            return Err(Error::Invalid(format!("drift needs {d} entries, got {}", fm.drift.len())));
        }
        if fm.diffusion.len() != d * d {
            return Err(Error::Invalid(format!(
                "diffusion needs {} entries, got {}",
                d * d,
                fm.diffusion.len()
            )));
        }
        let drift = fm
            .drift
            .iter()
            .map(|s| parse_restricted(s, "drift", d, &tx))
            .collect::<Result<Vec<_>>>()?;
        let diffusion = fm
            .diffusion
            .iter()
            .map(|s| parse_restricted(s, "diffusion", d, &tx))
            .collect::<Result<Vec<_>>>()?;
        let obstacle = fm
            .obstacle
            .as_ref()
            .map(|s| parse_restricted(s, "obstacle", d, &tx))
            .transpose()?;
        let terminal = parse_restricted(&fm.terminal, "terminal", d, &[Var::X(0)])?;
        let growth_c = parse_restricted(&fm.growth_c, "growth c", d, &[Var::Y])?;
        let field: Arc<dyn VectorField> = if fm.field.is_empty() {
            Arc::new(ZeroField {
                signal_dim: fm.signal_dim.max(1),
                state_dim: d,
            })
        } else {
            if fm.field.len() != fm.signal_dim {
                return Err(Error::Invalid(format!(
                    "vector field has {} components but the signal has dimension {}",
                    fm.field.len(),
                    fm.signal_dim
                )));
            }
            let srcs: Vec<&str> = fm.field.iter().map(|s| s.as_str()).collect();
            Arc::new(ExprField::parse(&srcs, d)?)
        };
        let env = |t: f64, x: &[f64], y: f64, z: &[f64], e: &Expr| -> f64 { e.eval(&Env { t, x, y, z }) };
        let spec = ProblemSpec {
            name: name.to_string(),
            dim: d,
            horizon: fm.horizon,
            x0: fm.x0.clone(),
            driver: Arc::new(move |t, x, y, z| env(t, x, y, z, &driver)),
            drift: Arc::new(move |t, x, out| {
                for (o, e) in out.iter_mut().zip(&drift) {
                    *o = env(t, x, 0.0, &[], e);
                }
            }),
            diffusion: Arc::new(move |t, x, out| {
                for (o, e) in out.iter_mut().zip(&diffusion) {
                    *o = env(t, x, 0.0, &[], e);
                }
            }),
            obstacle: obstacle.map(|e| -> ObstacleFn { Arc::new(move |t, x| env(t, x, 0.0, &[], &e)) }),
            terminal: Arc::new(move |x| env(0.0, x, 0.0, &[], &terminal)),
            field,
            growth: Growth {
                c: Arc::new(move |y| env(0.0, &[], y, &[], &growth_c)),
                c0: fm.c0,
                c_s: fm.c_s,
                c_xi: fm.c_xi,
                c_l: fm.c_l,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Built-in problems.
pub mod catalog {
    use super::*;

    /// American put: dS = rS dt + σS dW, f(y) = −ry, L = ξ = (κ − S)⁺.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct PutParams {
        pub rate: f64,
        pub vol: f64,
        pub strike: f64,
        pub spot: f64,
        pub horizon: f64,
    }

    impl Default for PutParams {
        fn default() -> Self {
            Self {
                rate: 0.06,
                vol: 0.4,
                strike: 40.0,
                spot: 36.0,
                horizon: 1.0,
            }
        }
    }

    pub fn american_put(p: PutParams) -> ProblemSpec {
        let PutParams {
            rate,
            vol,
            strike,
            spot,
            horizon,
        } = p;
        let payoff = move |x: &[f64]| (strike - x[0]).max(0.0);
        ProblemSpec {
            name: "american_put".into(),
            dim: 1,
            horizon,
            x0: vec![spot],
            driver: Arc::new(move |_, _, y, _| -rate * y),
            drift: Arc::new(move |_, x, out| out[0] = rate * x[0]),
            diffusion: Arc::new(move |_, x, out| out[0] = vol * x[0]),
            obstacle: Some(Arc::new(move |_, x| payoff(x))),
            terminal: Arc::new(payoff),
            field: Arc::new(ZeroField {
                signal_dim: 1,
                state_dim: 1,
            }),
            growth: Growth {
                c: Arc::new(move |y| rate * y.abs()),
                c0: 0.0,
                c_s: f64::INFINITY,
                c_xi: strike,
                c_l: strike,
            },
        }
    }

    /// Standard normal density as terminal value under dS = dW, no driver, no obstacle.
    pub fn heat_kernel(horizon: f64) -> ProblemSpec {
        let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        ProblemSpec {
            name: "heat_kernel".into(),
            dim: 1,
            horizon,
            x0: vec![0.0],
            driver: Arc::new(|_, _, _, _| 0.0),
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(|_, _, out| out[0] = 1.0),
            obstacle: None,
            terminal: Arc::new(move |x| density(x[0])),
            field: Arc::new(ZeroField {
                signal_dim: 1,
                state_dim: 1,
            }),
            growth: Growth::constant(0.0, 0.0, 1.0, density(0.0), 0.0),
        }
    }

    /// ξ = S_T, dS = dW, f ≡ 0, no obstacle: Y = S and Z ≡ 1.
    pub fn martingale(x0: f64, horizon: f64) -> ProblemSpec {
        ProblemSpec {
            name: "martingale".into(),
            dim: 1,
            horizon,
            x0: vec![x0],
            driver: Arc::new(|_, _, _, _| 0.0),
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(|_, _, out| out[0] = 1.0),
            obstacle: None,
            terminal: Arc::new(|x| x[0]),
            field: Arc::new(ZeroField {
                signal_dim: 1,
                state_dim: 1,
            }),
            growth: Growth::constant(0.0, 0.0, 1.0, f64::INFINITY, 0.0),
        }
    }

    /// H(y) = εy, f ≡ 0, ξ ≡ 1, no obstacle: Y_t = exp(ε(X_T − X_t)).
    pub fn linear_flow(eps: f64, horizon: f64) -> ProblemSpec {
        ProblemSpec {
            name: "linear_flow".into(),
            dim: 1,
            horizon,
            x0: vec![0.0],
            driver: Arc::new(|_, _, _, _| 0.0),
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(|_, _, out| out[0] = 1.0),
            obstacle: None,
            terminal: Arc::new(|_| 1.0),
            field: Arc::new(ExprField::parse(&[&format!("({eps})*y")], 1).expect("valid field")),
            growth: Growth::constant(0.0, 0.0, 1.0, 1.0, 0.0),
        }
    }

    /// ξ ≡ L ≡ c, f ≡ 0.
    pub fn constant(c: f64, horizon: f64) -> ProblemSpec {
        ProblemSpec {
            name: "constant".into(),
            dim: 1,
            horizon,
            x0: vec![0.0],
            driver: Arc::new(|_, _, _, _| 0.0),
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(|_, _, out| out[0] = 1.0),
            obstacle: Some(Arc::new(move |_, _| c)),
            terminal: Arc::new(move |_| c),
            field: Arc::new(ZeroField {
                signal_dim: 1,
                state_dim: 1,
            }),
            growth: Growth::constant(0.0, 0.0, 1.0, c.abs(), c.abs()),
        }
    }

    /// Catalog entry by key.
    pub fn by_name(name: &str) -> Result<ProblemSpec> {
        match name {
            "american_put" => Ok(american_put(PutParams::default())),
            "heat_kernel" => Ok(heat_kernel(1.0)),
            "martingale" => Ok(martingale(0.0, 1.0)),
            "linear_flow" => Ok(linear_flow(1.0, 1.0)),
            "constant" => Ok(constant(1.0, 1.0)),
            _ => Err(Error::Invalid(format!(
                "unknown catalog problem '{name}' (known: american_put, heat_kernel, martingale, linear_flow, constant)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;

    fn put_formulas() -> Formulas {
        Formulas {
            dim: 1,
            horizon: 1.0,
            x0: vec![36.0],
            driver: "-0.06*y".into(),
            drift: vec!["0.06*x1".into()],
            diffusion: vec!["0.4*x1".into()],
            obstacle: Some("max(40 - x1, 0)".into()),
            terminal: "max(40 - x1, 0)".into(),
            field: vec![],
            signal_dim: 1,
            growth_c: "0.06*abs(y)".into(),
            c0: 0.0,
            c_s: 1e9,
            c_xi: 40.0,
            c_l: 40.0,
        }
    }

    #[test]
    fn formulas_agree_with_catalog() {
        let a = ProblemSpec::from_formulas("put", &put_formulas()).unwrap();
        let b = american_put(PutParams::default());
        let mut o1 = [0.0];
        let mut o2 = [0.0];
        for x in [10.0, 36.0, 55.5] {
            assert_eq!((a.driver)(0.3, &[x], 2.5, &[0.1]), (b.driver)(0.3, &[x], 2.5, &[0.1]));
            a.diffusion_at(0.0, &[x], &mut o1);
            b.diffusion_at(0.0, &[x], &mut o2);
            assert_eq!(o1, o2);
            assert_eq!(a.obstacle_at(0.5, &[x]), b.obstacle_at(0.5, &[x]));
            assert_eq!(a.terminal_at(&[x]), b.terminal_at(&[x]));
        }
    }

    #[test]
    fn formula_errors() {
        let mut f = put_formulas();
        f.terminal = "max(40 - x2, 0)".into();
        assert!(matches!(ProblemSpec::from_formulas("p", &f), Err(Error::Expr(_))));
        let mut f = put_formulas();
        f.obstacle = Some("y".into());
        assert!(ProblemSpec::from_formulas("p", &f).is_err());
        let mut f = put_formulas();
        f.drift.push("1".into());
        assert!(ProblemSpec::from_formulas("p", &f).is_err());
    }

    #[test]
    fn assumption_checks() {
        let p = american_put(PutParams::default());
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 2.0]).collect();
        let r = p.check_assumptions(&xs);
        assert!(r.terminal_dominates && r.within_declared_bounds);
        let bad = p.shift_obstacle(1.0);
        assert!(!bad.check_assumptions(&xs).terminal_dominates);
    }

    #[test]
    fn penalized_driver() {
        let p = american_put(PutParams::default()).penalized(10.0);
        assert!(p.obstacle.is_none());
        // below the obstacle the penalty pushes up
        assert!(((p.driver)(0.0, &[30.0], 8.0, &[0.0]) - (-0.48 + 20.0)).abs() < 1e-12);
        assert_eq!((p.driver)(0.0, &[30.0], 12.0, &[0.0]), -0.06 * 12.0);
    }
}

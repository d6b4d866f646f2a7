//! The transformed driver f̃ and obstacle ψ(t, x, l) on one flow cell.

use super::{FlowField, FlowSlice};
use crate::error::Result;
use crate::problem::{GrowthFn, ProblemSpec};
use std::sync::Arc;

/// Growth constants of f̃ measured over a sample box:
/// |f̃(t,x,ỹ,z̃)| ≤ c̃(|ỹ|) + C̃_0|z̃|².
#[derive(Clone)]
pub struct TransformedGrowth {
    /// sup 1/D_yφ.
    pub inv_dy: f64,
    /// sup D_yφ.
    pub dy: f64,
    /// sup |φ(t, x, 0)|.
    pub phi0: f64,
    pub sup_dx: f64,
    pub sup_dyy: f64,
    pub sup_dxy: f64,
    pub sup_dxx: f64,
    /// Additive constant in c̃.
    pub c_hat: f64,
    pub c0: f64,
    c: GrowthFn,
}

impl std::fmt::Debug for TransformedGrowth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformedGrowth")
            .field("inv_dy", &self.inv_dy)
            .field("dy", &self.dy)
            .field("phi0", &self.phi0)
            .field("c_hat", &self.c_hat)
            .field("c0", &self.c0)
            .finish()
    }
}

impl TransformedGrowth {
    /// c̃(y) = C'·c(C''y + C''') + Ĉ.
    pub fn c_tilde(&self, y: f64) -> f64 {
        self.inv_dy * (self.c)(self.dy * y.abs() + self.phi0) + self.c_hat
    }

    pub fn bound(&self, y: f64, z_norm: f64) -> f64 {
        self.c_tilde(y) + self.c0 * z_norm * z_norm
    }
}

/// 0·∞ counts as 0: unbounded coefficients do not matter where the flow has no x-dependence.
fn mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// b(t, x) and σ(t, x) at one point.
#[derive(Clone, Debug)]
pub struct PointCoeffs {
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PointCoeffs {
    pub fn new(d: usize) -> Self {
        Self {
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
        }
    }

    pub fn fill(&mut self, spec: &ProblemSpec, t: f64, x: &[f64]) {
        spec.drift_at(t, x, &mut self.b);
        spec.diffusion_at(t, x, &mut self.sigma);
    }
}

/// The classical problem obtained from the flow on one cell.
pub struct TransformedProblem<'a> {
    spec: &'a ProblemSpec,
    field: &'a FlowField,
    growth: Option<TransformedGrowth>,
}

pub fn build_transformed_driver<'a>(spec: &'a ProblemSpec, field: &'a FlowField) -> Result<TransformedProblem<'a>> {
    spec.validate()?;
    if field.state_dim() != spec.dim {
        return Err(crate::Error::Invalid(format!(
            "flow is built for dimension {}, problem has {}",
            field.state_dim(),
            spec.dim
        )));
    }
    Ok(TransformedProblem {
        spec,
        field,
        growth: None,
    })
}

impl<'a> TransformedProblem<'a> {
    pub fn spec(&self) -> &'a ProblemSpec {
        self.spec
    }

    pub fn field(&self) -> &'a FlowField {
        self.field
    }

    pub fn growth(&self) -> Option<&TransformedGrowth> {
        self.growth.as_ref()
    }

    /// f̃(t, x, ỹ, z̃) = (1/D_yφ)·{ f(t,x,φ, D_yφ z̃ + σᵀD_xφ) + (D_xφ)ᵀb
    /// + ½Tr(D²_xxφ σσᵀ) + (D²_xyφ)ᵀσz̃ + ½D²_yyφ|z̃|² }.
    pub fn driver(
        &self,
        slice: &FlowSlice,
        x: &[f64],
        coeffs: &PointCoeffs,
        y: f64,
        z: &[f64],
        zbuf: &mut [f64],
    ) -> Result<f64> {
        let t = slice.time();
        if slice.is_identity() {
            return Ok((self.spec.driver)(t, x, y, z));
        }
        let d = self.spec.dim;
        let p = slice.eval(x, y)?;
        let j = p.dy;
        let full = self.field.depends_on_x();
        let s = &coeffs.sigma;
        for i in 0..d {
            zbuf[i] = j * z[i];
            if full {
                for k in 0..d {
                    zbuf[i] += s[k * d + i] * p.dx[k];
                }
            }
        }
        let mut total = (self.spec.driver)(t, x, p.phi, zbuf);
        let z2: f64 = z.iter().map(|v| v * v).sum();
        total += 0.5 * p.dyy * z2;
        if full {
            for i in 0..d {
                total += p.dx[i] * coeffs.b[i];
                let mut sz = 0.0;
                for k in 0..d {
                    sz += s[i * d + k] * z[k];
                }
                total += p.dxy[i] * sz;
                for jj in 0..d {
                    let mut ss = 0.0;
                    for k in 0..d {
                        ss += s[jj * d + k] * s[i * d + k];
                    }
                    total += 0.5 * p.dxx[i * d + jj] * ss;
                }
            }
        }
        Ok(total / j)
    }

    /// ψ(t, x, l(t, x)); obstacles below the inversion bracket are inactive.
    pub fn obstacle(&self, slice: &FlowSlice, x: &[f64]) -> Result<f64> {
        let l = self.spec.obstacle_at(slice.time(), x);
        self.transform_value(slice, x, l)
    }

    /// ψ(t, x, v) with the −∞ convention below the bracket.
    pub fn transform_value(&self, slice: &FlowSlice, x: &[f64], v: f64) -> Result<f64> {
        if slice.is_identity() {
            return Ok(v);
        }
        if v < -self.field.config().bracket {
            return Ok(f64::NEG_INFINITY);
        }
        slice.invert(x, v)
    }

    /// Y = φ(t, x, ỹ) and Z = D_yφ z̃ + σᵀD_xφ; returns (Y, D_yφ).
    pub fn map_back(
        &self,
        slice: &FlowSlice,
        x: &[f64],
        coeffs: &PointCoeffs,
        y: f64,
        z: &[f64],
        z_out: &mut [f64],
    ) -> Result<(f64, f64)> {
        if slice.is_identity() {
            z_out.copy_from_slice(z);
            return Ok((y, 1.0));
        }
        let d = self.spec.dim;
        let p = slice.eval(x, y)?;
        let full = self.field.depends_on_x();
        for i in 0..d {
            z_out[i] = p.dy * z[i];
            if full {
                for k in 0..d {
                    z_out[i] += coeffs.sigma[k * d + i] * p.dx[k];
                }
            }
        }
        Ok((p.phi, p.dy))
    }

    /// Measure the growth constants of f̃ over `n_t` times of the cell, the
    /// given x samples and ỹ ∈ [−y_max, y_max]. Sups are inflated by 1%.
    pub fn certify_growth(&mut self, xs: &[Vec<f64>], y_max: f64, n_t: usize) -> Result<&TransformedGrowth> {
        let g = &self.spec.growth;
        let mut inv_dy = 1.0f64;
        let mut dy = 1.0f64;
        let (mut phi0, mut sa, mut sb, mut sc, mut se) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !self.field.is_identity() {
            let n_t = n_t.max(2);
            let (a, b) = (self.field.start(), self.field.terminal());
            let n_y = 21;
            for k in 0..n_t {
                let t = a + (b - a) * k as f64 / (n_t - 1) as f64;
                for x in xs {
                    phi0 = phi0.max(self.field.point(t, x, 0.0)?.phi.abs());
                    for m in 0..n_y {
                        let y = -y_max + 2.0 * y_max * m as f64 / (n_y - 1) as f64;
                        let p = self.field.point(t, x, y)?;
                        inv_dy = inv_dy.max(1.0 / p.dy);
                        dy = dy.max(p.dy);
                        sa = sa.max(norm(&p.dx));
                        sb = sb.max(p.dyy.abs());
                        sc = sc.max(norm(&p.dxy));
                        se = se.max(norm(&p.dxx));
                    }
                }
            }
            let up = 1.01;
            inv_dy *= up;
            dy *= up;
            phi0 *= up;
            sa *= up;
            sb *= up;
            sc *= up;
            se *= up;
        }
        let cs = g.c_s;
        let c_hat = inv_dy
            * (mul(2.0 * g.c0, mul(cs * cs, sa * sa))
                + mul(sa, cs)
                + 0.5 * mul(se, cs * cs)
                + 0.5 * mul(sc * sc, cs * cs));
        let c0 = if self.field.is_identity() {
            g.c0
        } else {
            inv_dy * (2.0 * g.c0 * dy * dy + 0.5 + 0.5 * sb)
        };
        self.growth = Some(TransformedGrowth {
            inv_dy,
            dy,
            phi0,
            sup_dx: sa,
            sup_dyy: sb,
            sup_dxy: sc,
            sup_dxx: se,
            c_hat,
            c0,
            c: Arc::clone(&g.c),
        });
        Ok(self.growth.as_ref().expect("just set"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ExprField, FlowConfig, VectorField};
    use crate::problem::catalog;
    use crate::problem::Growth;
    use crate::roughpath::{lift_step2, sample_signal, SampledPath, SignalKind, TimeGrid};
    use rand::{Rng, SeedableRng};

    fn line() -> crate::roughpath::DrivingSignal {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let values = grid.points().to_vec();
        lift_step2(&SampledPath { grid, dim: 1, values }, 1.0).unwrap()
    }

    fn linear_spec(driver: fn(f64, &[f64], f64, &[f64]) -> f64) -> ProblemSpec {
        let mut s = catalog::linear_flow(1.0, 1.0);
        s.driver = Arc::new(driver);
        s.diffusion = Arc::new(|_, _, o| o[0] = 0.0);
        s
    }

    #[test]
    fn identity_flow_leaves_driver_unchanged() {
        let spec = catalog::american_put(Default::default());
        let field = FlowField::new(spec.field.clone(), &line(), 0.0, 1.0, FlowConfig::default()).unwrap();
        let tp = build_transformed_driver(&spec, &field).unwrap();
        let mut stream = field.stream((-1.0, 1.0), None);
        let slice = stream.slice_at(0.4).unwrap();
        let mut c = PointCoeffs::new(1);
        c.fill(&spec, 0.4, &[30.0]);
        let mut zb = [0.0];
        assert_eq!(tp.driver(&slice, &[30.0], &c, 7.5, &[0.3], &mut zb).unwrap(), -0.06 * 7.5);
        assert_eq!(tp.obstacle(&slice, &[30.0]).unwrap(), 10.0);
    }

    #[test]
    fn linear_flow_without_driver_gives_zero() {
        let spec = linear_spec(|_, _, _, _| 0.0);
        let field = FlowField::new(spec.field.clone(), &line(), 0.0, 1.0, FlowConfig::default()).unwrap();
        let tp = build_transformed_driver(&spec, &field).unwrap();
        let mut stream = field.stream((-5.0, 5.0), None);
        let slice = stream.slice_at(0.0).unwrap();
        let c = PointCoeffs::new(1);
        let mut zb = [0.0];
        for (y, z) in [(0.5, 0.2), (-1.0, 3.0)] {
            let v = tp.driver(&slice, &[0.0], &c, y, &[z], &mut zb).unwrap();
            assert!(v.abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn quadratic_driver_picks_up_flow_derivative() {
        let spec = linear_spec(|_, _, _, z| z[0] * z[0]);
        let field = FlowField::new(spec.field.clone(), &line(), 0.0, 1.0, FlowConfig::default()).unwrap();
        let tp = build_transformed_driver(&spec, &field).unwrap();
        let mut stream = field.stream((-5.0, 5.0), None);
        let c = PointCoeffs::new(1);
        let mut zb = [0.0];
        for t in [0.8, 0.5, 0.0] {
            let slice = stream.slice_at(t).unwrap();
            let v = tp.driver(&slice, &[0.0], &c, 0.7, &[1.5], &mut zb).unwrap();
            let want = (1.0 - t).exp() * 2.25;
            assert!((v - want).abs() < 1e-7, "{v} vs {want}");
        }
    }

    #[test]
    fn obstacle_below_bracket_is_inactive() {
        let spec = catalog::linear_flow(1.0, 1.0);
        let field = FlowField::new(spec.field.clone(), &line(), 0.0, 1.0, FlowConfig::default()).unwrap();
        let tp = build_transformed_driver(&spec, &field).unwrap();
        let mut stream = field.stream((-5.0, 5.0), None);
        let slice = stream.slice_at(0.0).unwrap();
        assert_eq!(tp.transform_value(&slice, &[0.0], -1e9).unwrap(), f64::NEG_INFINITY);
        let v = tp.transform_value(&slice, &[0.0], 2.0).unwrap();
        assert!((v - 2.0 / std::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn measured_growth_dominates_driver() {
        // x-dependent field and a quadratic driver
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let sig = sample_signal(&SignalKind::Brownian { dim: 1 }, &grid, 21).unwrap().to_smooth();
        let h: Arc<dyn VectorField> = Arc::new(ExprField::parse(&["0.3*sin(y) + 0.2*sin(x1)"], 1).unwrap());
        let mut spec = catalog::martingale(0.0, 1.0).with_field(h);
        spec.driver = Arc::new(|_, _, y, z| 0.5 * y.sin() + 0.2 * z[0] * z[0]);
        spec.diffusion = Arc::new(|_, x, o| o[0] = 1.0 + 0.5 * x[0].cos());
        spec.drift = Arc::new(|_, x, o| o[0] = 0.3 * x[0].sin());
        spec.growth = Growth::constant(0.5, 0.2, 1.5, 1.0, 0.0);
        let field = FlowField::new(spec.field.clone(), &sig, 0.5, 1.0, FlowConfig::default()).unwrap();
        let mut tp = build_transformed_driver(&spec, &field).unwrap();
        let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
        let g = tp.certify_growth(&xs, 3.0, 6).unwrap().clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut stream = field.stream((-4.0, 4.0), Some((-2.0, 2.0)));
        let mut zb = [0.0];
        let mut c = PointCoeffs::new(1);
        for k in (0..6).rev() {
            let t = 0.5 + 0.1 * k as f64;
            let slice = stream.slice_at(t).unwrap();
            for _ in 0..200 {
                let x = [rng.gen_range(-2.0..2.0)];
                let y = rng.gen_range(-3.0..3.0);
                let z = rng.gen_range(-4.0..4.0);
                c.fill(&spec, t, &x);
                let v = tp.driver(&slice, &x, &c, y, &[z], &mut zb).unwrap();
                assert!(v.abs() <= g.bound(y, z), "|f~| = {} > {}", v.abs(), g.bound(y, z));
            }
        }
    }
}

//! Seeded sampling of driving signals.

use super::{lift_step2, DrivingSignal, SampledPath, TimeGrid};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};

#[derive(Clone, Debug)]
pub enum SignalKind {
    /// Standard Brownian motion in `dim` independent components (p = 2.5).
    Brownian { dim: usize },
    /// Fractional Brownian motion with Hurst exponent in (1/3, 1).
    Fractional { hurst: f64, dim: usize },
    /// One formula in `t` per component (smooth, p = 1).
    Formula(Vec<Expr>),
}

pub fn sample_signal(kind: &SignalKind, grid: &TimeGrid, seed: u64) -> Result<DrivingSignal> {
    let n = grid.len();
    let (dim, values, p) = match kind {
        SignalKind::Brownian { dim } => {
            check_dim(*dim)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut values = vec![0.0; n * dim];
            for k in 1..n {
                let sd = grid.dt(k - 1).sqrt();
                for c in 0..*dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values[k * dim + c] = values[(k - 1) * dim + c] + sd * z;
                }
            }
            (*dim, values, 2.5)
        }
        SignalKind::Fractional { hurst, dim } => {
            check_dim(*dim)?;
            if !(*hurst > 1.0 / 3.0 && *hurst < 1.0) {
                return Err(Error::Range(format!(
                    "Hurst exponent must lie in (1/3, 1) for step-2 lifts, got {hurst}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut values = vec![0.0; n * dim];
            for c in 0..*dim {
                let comp = if grid.is_uniform() {
                    fbm_davies_harte(*hurst, grid, &mut rng)?
                } else {
                    fbm_cholesky(*hurst, grid, &mut rng)?
                };
                for k in 0..n {
                    values[k * dim + c] = comp[k];
                }
            }
            let p = (1.0 / hurst + 0.05).clamp(2.0, 2.99);
            (*dim, values, p)
        }
        SignalKind::Formula(exprs) => {
            check_dim(exprs.len())?;
            let dim = exprs.len();
            let mut values = vec![0.0; n * dim];
            for (k, &t) in grid.points().iter().enumerate() {
                let env = Env {
                    t,
                    ..Env::default()
                };
                for (c, e) in exprs.iter().enumerate() {
                    values[k * dim + c] = e.eval(&env);
                }
            }
            (dim, values, 1.0)
        }
    };
    lift_step2(
        &SampledPath {
            grid: grid.clone(),
            dim,
            values,
        },
        p,
    )
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::Invalid("signal dimension must be positive".into()))
    } else {
        Ok(())
    }
}

/// Exact fBm on a uniform grid by circulant embedding of the increment covariance.
fn fbm_davies_harte(hurst: f64, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = grid.cells();
    let h = grid.horizon() / n as f64;
    let scale = h.powf(hurst);
    let gamma = |k: usize| -> f64 {
        let k = k as f64;
        let e = 2.0 * hurst;
        0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
    };
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let lag = if k <= n { k } else { m - k };
            Complex::new(gamma(lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let max_eig = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let mut w: Vec<Complex<f64>> = Vec::with_capacity(m);
    for c in &row {
        let lam = c.re;
        if lam < -1e-10 * max_eig {
            return Err(Error::Numerical(format!(
                "circulant embedding has a negative eigenvalue {lam:e}"
            )));
        }
        let sd = (lam.max(0.0) / m as f64).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        w.push(Complex::new(sd * a, sd * b));
    }
    fft.process(&mut w);
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for c in w.iter().take(n) {
        acc += scale * c.re;
        out.push(acc);
    }
    Ok(out)
}

/// Exact fBm on an arbitrary grid through the Cholesky factor of its covariance.
fn fbm_cholesky(hurst: f64, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let pts = &grid.points()[1..];
    let n = pts.len();
    let e = 2.0 * hurst;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (s, t) = (pts[i], pts[j]);
        0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("fBm covariance is not positive definite".into()))?;
    let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let x = chol.l() * z;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    out.extend(x.iter());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values_are_exact() {
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let e = Expr::parse("sin(2 * pi * t)").unwrap();
        let s = sample_signal(&SignalKind::Formula(vec![e]), &grid, 0).unwrap();
        for (k, &t) in grid.points().iter().enumerate() {
            assert_eq!(s.value(k)[0], (2.0 * std::f64::consts::PI * t).sin());
        }
        assert!(s.is_smooth());
    }

    #[test]
    fn brownian_is_reproducible() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let a = sample_signal(&SignalKind::Brownian { dim: 2 }, &grid, 7).unwrap();
        let b = sample_signal(&SignalKind::Brownian { dim: 2 }, &grid, 7).unwrap();
        let c = sample_signal(&SignalKind::Brownian { dim: 2 }, &grid, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hurst_range_is_enforced() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        for h in [0.2, 1.0 / 3.0, 1.0] {
            let r = sample_signal(&SignalKind::Fractional { hurst: h, dim: 1 }, &grid, 0);
            assert!(matches!(r, Err(Error::Range(_))));
        }
    }

    fn terminal_variance(grid: &TimeGrid, hurst: f64, samples: u64) -> f64 {
        let kind = SignalKind::Fractional { hurst, dim: 1 };
        let xs: Vec<f64> = (0..samples)
            .map(|seed| *sample_signal(&kind, grid, seed).unwrap().value(grid.cells()).first().unwrap())
            .collect();
        xs.iter().map(|x| x * x).sum::<f64>() / samples as f64
    }

    #[test]
    fn fbm_terminal_variance_matches_covariance() {
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let v = terminal_variance(&grid, 0.4, 10_000);
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn fbm_on_nonuniform_grid() {
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.35, 0.5, 0.8, 1.0]).unwrap();
        let v = terminal_variance(&grid, 0.7, 10_000);
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn fbm_increment_covariance() {
        // Cov(X_{1/2}, X_1) = ½(0.5^{2H} + 1 - 0.5^{2H}) = 0.5
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let kind = SignalKind::Fractional { hurst: 0.4, dim: 1 };
        let m = 10_000;
        let mut acc = 0.0;
        for seed in 0..m {
            let s = sample_signal(&kind, &grid, seed).unwrap();
            acc += s.value(8)[0] * s.value(16)[0];
        }
        assert!((acc / m as f64 - 0.5).abs() < 0.04);
    }
}

//! Least-squares estimates of conditional expectations given the state at one time.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Regression basis for E[· | S_t].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Basis {
    /// Linear fit in each of `bins` equal-population bins of a scalar state.
    LocalLinear { bins: usize },
    /// All monomials of total degree ≤ `degree` in the (standardized) state.
    Polynomial { degree: usize },
    /// Mean over paths sharing exactly the same state; exact on lattices.
    Lattice,
}

impl Basis {
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Basis::LocalLinear { bins: 16 }
        } else {
            Basis::Polynomial { degree: 3 }
        }
    }

    /// Inverse of [`Basis::parse`].
    pub fn describe(&self) -> String {
        match self {
            Basis::LocalLinear { bins } => format!("local-linear:{bins}"),
            Basis::Polynomial { degree } => format!("polynomial:{degree}"),
            Basis::Lattice => "lattice".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |p: &str| -> Result<usize> {
            p.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad regression basis '{s}'")))
        };
        if s == "lattice" {
            Ok(Basis::Lattice)
        } else if let Some(rest) = s.strip_prefix("local-linear:") {
            Ok(Basis::LocalLinear { bins: num(rest)? })
        } else if let Some(rest) = s.strip_prefix("polynomial:") {
            Ok(Basis::Polynomial { degree: num(rest)? })
        } else {
            Err(Error::Invalid(format!(
                "bad regression basis '{s}' (use local-linear:N, polynomial:N or lattice)"
            )))
        }
    }
}

#[derive(Clone, Debug)]
enum Fit {
    /// Per path: bin index and centered state; per bin: mean, variance and member count.
    Local {
        bin_of: Vec<usize>,
        centered: Vec<f64>,
        var: Vec<f64>,
        count: Vec<usize>,
    },
    /// Design matrix rows per active path and the pseudo-inverse of the Gram matrix.
    Global { design: DMatrix<f64>, gram_pinv: DMatrix<f64> },
}

/// A fitted projection for one time step, reusable for several targets.
#[derive(Clone, Debug)]
pub struct Regressor {
    /// Paths taking part in the fit, in increasing order.
    members: Vec<usize>,
    fit: Fit,
    rank: usize,
    columns: usize,
}

fn monomials(d: usize, degree: usize, skip: &[bool]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    let mut frontier = vec![vec![0usize; d]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            let last = m.iter().rposition(|&e| e > 0).unwrap_or(0);
            for (k, &dead) in skip.iter().enumerate().skip(last) {
                if dead {
                    continue;
                }
                let mut e = m.clone();
                e[k] += 1;
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl Regressor {
    /// Fit on states `xs` (row-major paths × d); only paths with `active[p]` take part.
    pub fn fit(basis: Basis, xs: &[f64], d: usize, active: Option<&[bool]>) -> Result<Self> {
        let n = xs.len() / d;
        let members: Vec<usize> = (0..n).filter(|&p| active.is_none_or(|a| a[p])).collect();
        if members.is_empty() {
            return Ok(Self {
                members,
                fit: Fit::Local {
                    bin_of: vec![],
                    centered: vec![],
                    var: vec![],
                    count: vec![],
                },
                rank: 0,
                columns: 0,
            });
        }
        match basis {
            Basis::LocalLinear { bins } => {
                if d != 1 {
                    return Err(Error::Invalid("local-linear regression needs a scalar state".into()));
                }
                Ok(Self::fit_local(xs, members, bins))
            }
            Basis::Polynomial { degree } => Ok(Self::fit_global(xs, d, members, degree)),
            Basis::Lattice => Ok(Self::fit_groups(xs, d, members)),
        }
    }

    fn fit_local(xs: &[f64], members: Vec<usize>, bins: usize) -> Self {
        let m = members.len();
        let bins = bins.clamp(1, (m / 8).max(1));
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| xs[members[a]].total_cmp(&xs[members[b]]).then(a.cmp(&b)));
        let mut bin_of = vec![0; m];
        for (rank, &k) in order.iter().enumerate() {
            bin_of[k] = rank * bins / m;
        }
        let mut mean = vec![0.0; bins];
        let mut count = vec![0usize; bins];
        for k in 0..m {
            mean[bin_of[k]] += xs[members[k]];
            count[bin_of[k]] += 1;
        }
        for b in 0..bins {
            mean[b] /= count[b] as f64;
        }
        let centered: Vec<f64> = (0..m).map(|k| xs[members[k]] - mean[bin_of[k]]).collect();
        let mut var = vec![0.0; bins];
        for k in 0..m {
            var[bin_of[k]] += centered[k] * centered[k];
        }
        let mut rank = 0;
        for b in 0..bins {
            var[b] /= count[b] as f64;
            let scale = 1.0 + mean[b] * mean[b];
            if var[b] <= 1e-24 * scale {
                var[b] = 0.0;
                rank += 1;
            } else {
                rank += 2;
            }
        }
        Self {
            members,
            fit: Fit::Local {
                bin_of,
                centered,
                var,
                count,
            },
            rank,
            columns: 2 * bins,
        }
    }

    fn fit_groups(xs: &[f64], d: usize, members: Vec<usize>) -> Self {
        let m = members.len();
        let row = |k: usize| &xs[members[k] * d..(members[k] + 1) * d];
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            row(a)
                .iter()
                .zip(row(b))
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut bin_of = vec![0; m];
        let mut count = Vec::new();
        for (r, &k) in order.iter().enumerate() {
            if r == 0 || row(k) != row(order[r - 1]) {
                count.push(0);
            }
            bin_of[k] = count.len() - 1;
            *count.last_mut().expect("nonempty") += 1;
        }
        let groups = count.len();
        Self {
            members,
            fit: Fit::Local {
                bin_of,
                centered: vec![0.0; m],
                var: vec![0.0; groups],
                count,
            },
            rank: groups,
            columns: groups,
        }
    }

    fn fit_global(xs: &[f64], d: usize, members: Vec<usize>, degree: usize) -> Self {
        let m = members.len();
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for &p in &members {
            for k in 0..d {
                mean[k] += xs[p * d + k];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for &p in &members {
            for k in 0..d {
                let c = xs[p * d + k] - mean[k];
                sd[k] += c * c;
            }
        }
        let skip: Vec<bool> = (0..d)
            .map(|k| {
                sd[k] = (sd[k] / m as f64).sqrt();
                sd[k] <= 1e-12 * (1.0 + mean[k].abs())
            })
            .collect();
        let monos = monomials(d, degree, &skip);
        let cols = monos.len();
        let mut design = DMatrix::zeros(m, cols);
        for (r, &p) in members.iter().enumerate() {
            for (c, e) in monos.iter().enumerate() {
                let mut v = 1.0;
                for k in 0..d {
                    if e[k] > 0 {
                        v *= ((xs[p * d + k] - mean[k]) / sd[k]).powi(e[k] as i32);
                    }
                }
                design[(r, c)] = v;
            }
        }
        let gram = design.transpose() * &design;
        let svd = gram.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * 1e-12;
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        let gram_pinv = svd.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(cols, cols));
        let full = monomials(d, degree, &vec![false; d]).len();
        if rank < full {
            log::warn!("regression basis reduced from {full} to {rank} columns");
        }
        Self {
            members,
            fit: Fit::Global { design, gram_pinv },
            rank,
            columns: full,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Fitted values of `target` (indexed by path) at every member path; other
    /// entries of `out` are left untouched.
    pub fn project(&self, target: &[f64], out: &mut [f64]) {
        match &self.fit {
            Fit::Local {
                bin_of,
                centered,
                var,
                count,
            } => {
                let bins = var.len();
                let mut mean = vec![0.0; bins];
                let mut cov = vec![0.0; bins];
                for (k, &p) in self.members.iter().enumerate() {
                    mean[bin_of[k]] += target[p];
                }
                for b in 0..bins {
                    mean[b] /= count[b] as f64;
                }
                // Centering the target too keeps constant targets exact.
                for (k, &p) in self.members.iter().enumerate() {
                    cov[bin_of[k]] += (target[p] - mean[bin_of[k]]) * centered[k];
                }
                for b in 0..bins {
                    cov[b] = if var[b] > 0.0 {
                        cov[b] / count[b] as f64 / var[b]
                    } else {
                        0.0
                    };
                }
                for (k, &p) in self.members.iter().enumerate() {
                    let b = bin_of[k];
                    out[p] = mean[b] + cov[b] * centered[k];
                }
            }
            Fit::Global { design, gram_pinv } => {
                let y = DVector::from_iterator(self.members.len(), self.members.iter().map(|&p| target[p]));
                let coef = gram_pinv * (design.transpose() * y);
                let fitted = design * coef;
                for (k, &p) in self.members.iter().enumerate() {
                    out[p] = fitted[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 3, &[false]).len(), 4);
        assert_eq!(monomials(2, 3, &[false, false]).len(), 10);
        assert_eq!(monomials(3, 2, &[false; 3]).len(), 10);
        assert_eq!(monomials(2, 3, &[false, true]).len(), 4);
    }

    #[test]
    fn polynomial_fit_is_exact_on_cubics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 500;
        let xs: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..n)
            .map(|p| {
                let (a, b) = (xs[2 * p], xs[2 * p + 1]);
                1.0 + a - 2.0 * b * b + 0.5 * a * a * b
            })
            .collect();
        let r = Regressor::fit(Basis::Polynomial { degree: 3 }, &xs, 2, None).unwrap();
        let mut out = vec![0.0; n];
        r.project(&target, &mut out);
        for p in 0..n {
            assert!((out[p] - target[p]).abs() < 1e-9);
        }
        assert_eq!(r.rank(), 10);
    }

    #[test]
    fn local_fit_is_exact_on_lines_and_handles_constants() {
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|p| (p as f64 * 0.37).sin()).collect();
        let target: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let r = Regressor::fit(Basis::LocalLinear { bins: 16 }, &xs, 1, None).unwrap();
        let mut out = vec![0.0; n];
        r.project(&target, &mut out);
        for p in 0..n {
            assert!((out[p] - target[p]).abs() < 1e-12);
        }
        // a degenerate state reduces to the sample mean
        let xs = vec![36.0; n];
        let target: Vec<f64> = (0..n).map(|p| p as f64).collect();
        let r = Regressor::fit(Basis::LocalLinear { bins: 16 }, &xs, 1, None).unwrap();
        r.project(&target, &mut out);
        let mean = (n - 1) as f64 / 2.0;
        let avg = out.iter().sum::<f64>() / n as f64;
        assert!((avg - mean).abs() < 1e-9);
        let r = Regressor::fit(Basis::Polynomial { degree: 3 }, &xs, 1, None).unwrap();
        r.project(&target, &mut out);
        assert!(out.iter().all(|v| (v - mean).abs() < 1e-9));
        assert_eq!(r.rank(), 1);
    }

    #[test]
    fn inactive_paths_are_left_alone() {
        let xs: Vec<f64> = (0..100).map(|p| p as f64).collect();
        let active: Vec<bool> = (0..100).map(|p| p % 2 == 0).collect();
        let target: Vec<f64> = xs.iter().map(|x| if (*x as usize).is_multiple_of(2) { *x } else { 1e6 }).collect();
        let r = Regressor::fit(Basis::Polynomial { degree: 1 }, &xs, 1, Some(&active)).unwrap();
        let mut out = vec![-1.0; 100];
        r.project(&target, &mut out);
        for p in 0..100 {
            if p % 2 == 0 {
                assert!((out[p] - p as f64).abs() < 1e-8);
            } else {
                assert_eq!(out[p], -1.0);
            }
        }
    }

    #[test]
    fn basis_parsing() {
        assert_eq!(Basis::parse("local-linear:8").unwrap(), Basis::LocalLinear { bins: 8 });
        assert_eq!(Basis::parse("polynomial:3").unwrap(), Basis::Polynomial { degree: 3 });
        assert!(Basis::parse("spline").is_err());
    }

    #[test]
    fn lattice_basis_averages_identical_states() {
        let xs = [1.0, -1.0, 1.0, -1.0, 3.0];
        let target = [4.0, 1.0, 2.0, 0.0, 7.0];
        let reg = Regressor::fit(Basis::Lattice, &xs, 1, None).unwrap();
        let mut out = [0.0; 5];
        reg.project(&target, &mut out);
        assert_eq!(out, [3.0, 0.5, 3.0, 0.5, 7.0]);
        assert_eq!(reg.rank(), 3);
        assert_eq!(Basis::parse(&Basis::Lattice.describe()).unwrap(), Basis::Lattice);
    }

    proptest! {
        #[test]
        fn projection_is_linear_and_keeps_constants(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            c in -5.0f64..5.0,
            local in any::<bool>(),
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let t1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t2: Vec<f64> = xs.iter().map(|x| x * x).collect();
            let basis = if local { Basis::LocalLinear { bins: 10 } } else { Basis::Polynomial { degree: 3 } };
            let r = Regressor::fit(basis, &xs, 1, None).unwrap();
            let (mut p1, mut p2, mut p12) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            r.project(&t1, &mut p1);
            r.project(&t2, &mut p2);
            let mix: Vec<f64> = t1.iter().zip(&t2).map(|(u, v)| a * u + v).collect();
            r.project(&mix, &mut p12);
            for p in 0..n {
                prop_assert!((p12[p] - (a * p1[p] + p2[p])).abs() <= 1e-9);
            }
            r.project(&vec![c; n], &mut p1);
            prop_assert!(p1.iter().all(|v| (v - c).abs() <= 1e-12 * (1.0 + c.abs())));
        }
    }
}

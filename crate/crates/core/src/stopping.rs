//! Optimal stopping: payoff process, Snell envelope by regression on realized
//! values, hitting times of the reflected solution, and the check that the
//! reflected value equals the value of stopping at the first contact time.

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::rbsde::{
    run_engine, solve_random_terminal, solve_rough_rbsde, ForwardPaths, Mode, SolutionEnsemble, SolverConfig,
};
use crate::roughpath::DrivingSignal;
use std::io::Write;
use std::sync::Arc;

/// L'_s = l(s, S_s) for s < T and g(S_T) at T, indexed `(i * paths + p)`.
pub fn payoff_process(spec: &ProblemSpec, forward: &ForwardPaths) -> Vec<f64> {
    let grid = &forward.grid;
    let n = grid.cells();
    let np = forward.paths;
    let mut out = vec![0.0; (n + 1) * np];
    for i in 0..=n {
        let t = grid.points()[i];
        for p in 0..np {
            let x = forward.point(i, p);
            out[i * np + p] = if i == n { spec.terminal_at(x) } else { spec.obstacle_at(t, x) };
        }
    }
    out
}

/// Discrete Snell envelope over grid stopping times.
#[derive(Clone, Debug)]
pub struct StoppingValue {
    pub forward: Arc<ForwardPaths>,
    /// Continuation-or-payoff value per node.
    pub value: Vec<f64>,
    /// Realized value of following the stopping rule from each node.
    pub realized: Vec<f64>,
    pub payoff: Vec<f64>,
    /// Nodes where the rule stops.
    pub stop: Vec<bool>,
    /// First stopping index from time 0 per path.
    pub d0: Vec<usize>,
}

impl StoppingValue {
    /// Mean realized value at time 0.
    pub fn value0(&self) -> f64 {
        let np = self.forward.paths;
        self.realized[..np].iter().sum::<f64>() / np as f64
    }

    pub fn stderr0(&self) -> f64 {
        let np = self.forward.paths;
        let v = &self.realized[..np];
        let m = self.value0();
        if np < 2 {
            return 0.0;
        }
        let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (np - 1) as f64;
        (var / np as f64).sqrt()
    }
}

/// value_T = L'_T; value_t = max(L'_t, one backward step of the (transformed)
/// equation applied to the realized values at t + Δt).
pub fn snell_envelope(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
) -> Result<StoppingValue> {
    let out = run_engine(spec, signal, forward, cfg, Mode::Snell, None)?;
    let n = forward.grid.cells();
    let np = forward.paths;
    let d0 = (0..np)
        .map(|p| (0..=n).find(|&i| out.stop[i * np + p]).unwrap_or(n))
        .collect();
    Ok(StoppingValue {
        forward: forward.clone(),
        value: out.y,
        realized: out.pathwise,
        payoff: payoff_process(spec, forward),
        stop: out.stop,
        d0,
    })
}

/// D_t: first grid index j ≥ `from` with Y_j − L'_j ≤ max(`floor`, stderr_j), else N.
pub fn hitting_time(run: &SolutionEnsemble, from: usize, floor: f64) -> Vec<usize> {
    let n = run.grid().cells();
    let np = run.paths();
    (0..np)
        .map(|p| {
            (from..=n)
                .find(|&j| {
                    let node = j * np + p;
                    let tol = floor.max(run.stderr[j]);
                    j == n || run.y[node] - run.obstacle[node] <= tol
                })
                .unwrap_or(n)
        })
        .collect()
}

/// Per-path values of L' at given indices.
pub fn payoff_at(payoff: &[f64], paths: usize, index: &[usize]) -> Vec<f64> {
    index.iter().enumerate().map(|(p, &i)| payoff[i * paths + p]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingReport {
    pub reflected: f64,
    pub reflected_stderr: f64,
    pub snell: f64,
    pub snell_stderr: f64,
    /// B_0(D_0, L'_{D_0}).
    pub stopped: f64,
    pub stopped_stderr: f64,
    /// Relative tolerance applied to the scale |reflected|.
    pub rel_tol: f64,
    pub k_stderr: f64,
}

impl StoppingReport {
    /// (label, gap, tolerance) for the three pairs.
    pub fn pairs(&self) -> [(&'static str, f64, f64); 3] {
        let scale = self.rel_tol * self.reflected.abs();
        let tol = |a: f64, b: f64| scale.max(self.k_stderr * a.max(b));
        [
            (
                "reflected-snell",
                (self.reflected - self.snell).abs(),
                tol(self.reflected_stderr, self.snell_stderr),
            ),
            (
                "reflected-stopped",
                (self.reflected - self.stopped).abs(),
                tol(self.reflected_stderr, self.stopped_stderr),
            ),
            (
                "snell-stopped",
                (self.snell - self.stopped).abs(),
                tol(self.snell_stderr, self.stopped_stderr),
            ),
        ]
    }

    pub fn holds(&self) -> bool {
        self.pairs().iter().all(|(_, g, t)| g <= t)
    }
}

/// Reflected Y_0, the Snell value and B_0(D_0, L'_{D_0}) on common noise.
pub fn verify_stopping_identity(
    spec: &ProblemSpec,
    signal: Option<&DrivingSignal>,
    forward: &Arc<ForwardPaths>,
    cfg: &SolverConfig,
    rel_tol: f64,
    k_stderr: f64,
) -> Result<StoppingReport> {
    let reflected = match signal {
        Some(s) => solve_rough_rbsde(spec, s, forward, cfg)?,
        None => crate::rbsde::solve_classical_rbsde(spec, forward, cfg)?,
    };
    let snell = snell_envelope(spec, signal, forward, cfg)?;
    let d0 = hitting_time(&reflected, 0, 1e-8);
    let payoff = payoff_process(spec, forward);
    let values = payoff_at(&payoff, forward.paths, &d0);
    let stopped = solve_random_terminal(spec, signal, forward, cfg, &d0, &values)?;
    Ok(StoppingReport {
        reflected: reflected.y0(),
        reflected_stderr: reflected.y0_stderr(),
        snell: snell.value0(),
        snell_stderr: snell.stderr0(),
        stopped: stopped.y0(),
        stopped_stderr: stopped.y0_stderr(),
        rel_tol,
        k_stderr,
    })
}

/// Rows `t,stopped,x_min,x_q50,x_max` from the first state coordinate of the
/// nodes where the rule stops (before the horizon).
pub fn write_stopping_region_csv<W: Write>(value: &StoppingValue, mut w: W) -> Result<()> {
    let fw = &value.forward;
    let np = fw.paths;
    writeln!(w, "t,stopped,x_min,x_q50,x_max")?;
    for i in 0..fw.grid.cells() {
        let mut xs: Vec<f64> = (0..np)
            .filter(|&p| value.stop[i * np + p])
            .map(|p| fw.point(i, p)[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let t = fw.grid.points()[i];
        if xs.is_empty() {
            writeln!(w, "{t},0,,,")?;
        } else {
            writeln!(w, "{t},{},{},{},{}", xs.len(), xs[0], xs[xs.len() / 2], xs[xs.len() - 1])?;
        }
    }
    Ok(())
}

/// Snell envelope on the symmetric ±1 lattice with `steps` steps started at 0:
/// V_N(k) = payoff(N, k), V_i(k) = max(payoff(i, k), ½(V_{i+1}(k+1) + V_{i+1}(k−1))).
/// Returns V_0(0).
pub fn lattice_snell<F: Fn(usize, i64) -> f64>(steps: usize, payoff: F) -> f64 {
    let mut v: Vec<f64> = (0..=steps).map(|j| payoff(steps, 2 * j as i64 - steps as i64)).collect();
    for i in (0..steps).rev() {
        for j in 0..=i {
            let k = 2 * j as i64 - i as i64;
            v[j] = payoff(i, k).max(0.5 * (v[j] + v[j + 1]));
        }
        v.truncate(i + 1);
    }
    v[0]
}

/// All 2^steps paths of the ±1 lattice as forward paths (state = position),
/// with increments ±√Δt so that the lattice is a Brownian surrogate.
pub fn lattice_paths(steps: usize, horizon: f64) -> Result<ForwardPaths> {
    if steps == 0 || steps > 20 {
        return Err(Error::Range(format!("lattice needs 1..=20 steps, got {steps}")));
    }
    let grid = crate::roughpath::TimeGrid::uniform(horizon, steps)?;
    let np = 1usize << steps;
    let mut s = vec![0.0; (steps + 1) * np];
    let mut dw = vec![0.0; steps * np];
    let sq = (horizon / steps as f64).sqrt();
    for p in 0..np {
        for i in 0..steps {
            let up = (p >> i) & 1 == 1;
            let step = if up { 1.0 } else { -1.0 };
            s[(i + 1) * np + p] = s[i * np + p] + step;
            dw[i * np + p] = step * sq;
        }
    }
    Ok(ForwardPaths {
        grid,
        paths: np,
        dim: 1,
        seed: 0,
        s,
        dw,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use super::*;
    use crate::problem::{catalog, Growth};
    use crate::rbsde::{MonteCarlo, SolverConfig};
    use crate::regression::Basis;

    /// Expected payoff of every Markov stopping rule on the 5-step lattice.
    fn brute_force(payoff: &dyn Fn(usize, i64) -> f64) -> f64 {
        let steps = 5;
        let nodes: Vec<(usize, i64)> = (0..steps)
            .flat_map(|i| (0..=i).map(move |j| (i, 2 * j as i64 - i as i64)))
            .collect();
        assert_eq!(nodes.len(), 15);
        let mut best = f64::NEG_INFINITY;
        for rule in 0u32..(1 << nodes.len()) {
            let stops = |i: usize, k: i64| {
                let idx = nodes.iter().position(|&n| n == (i, k)).unwrap();
                (rule >> idx) & 1 == 1
            };
            let mut total = 0.0;
            for path in 0..(1u32 << steps) {
                let mut k = 0i64;
                let mut got = None;
                for i in 0..steps {
                    if stops(i, k) {
                        got = Some(payoff(i, k));
                        break;
                    }
                    k += if (path >> i) & 1 == 1 { 1 } else { -1 };
                }
                total += got.unwrap_or_else(|| payoff(steps, k));
            }
            best = best.max(total / 32.0);
        }
        best
    }

    fn lattice_spec(payoff: fn(usize, i64) -> f64) -> ProblemSpec {
        let mut spec = catalog::martingale(0.0, 5.0);
        spec.terminal = Arc::new(move |x| payoff(5, x[0].round() as i64));
        spec.obstacle = Some(Arc::new(move |t, x| payoff(t.round() as usize, x[0].round() as i64)));
        spec.growth = Growth::constant(0.0, 0.0, 1.0, 10.0, 10.0);
        spec
    }

    #[test]
    fn lattice_matches_exhaustive_enumeration() {
        let payoffs: [fn(usize, i64) -> f64; 3] = [
            |_, k| (2 - k).max(0) as f64,
            |i, k| (k * k) as f64 - i as f64,
            |i, k| if k == 1 { 3.0 } else { (i as i64 - k).abs() as f64 },
        ];
        for payoff in payoffs {
            let exact = brute_force(&payoff);
            assert_eq!(lattice_snell(5, payoff), exact);
            let fw = Arc::new(lattice_paths(5, 5.0).unwrap());
            let cfg = SolverConfig {
                basis: Some(Basis::Lattice),
                ..Default::default()
            };
            let sv = snell_envelope(&lattice_spec(payoff), None, &fw, &cfg).unwrap();
            assert_eq!(sv.value0(), exact);
        }
    }

    #[test]
    fn deterministic_increasing_payoff_waits() {
        let mut spec = catalog::constant(1.0, 1.0);
        spec.obstacle = Some(Arc::new(|t, _| t));
        let fw = MonteCarlo {
            steps: 10,
            paths: 50,
            seed: 1,
        }
        .simulate(&spec)
        .unwrap();
        let sv = snell_envelope(&spec, None, &fw, &SolverConfig::default()).unwrap();
        assert!(sv.value.iter().all(|&v| v == 1.0));
        assert!(sv.d0.iter().all(|&d| d == 10));
        let p = payoff_process(&spec, &fw);
        assert_eq!(p[9 * 50], 0.9);
        assert_eq!(p[10 * 50], 1.0);
    }

    #[test]
    fn hitting_times_on_extreme_cases() {
        let spec = catalog::constant(2.0, 1.0);
        let fw = MonteCarlo {
            steps: 8,
            paths: 20,
            seed: 2,
        }
        .simulate(&spec)
        .unwrap();
        let run = crate::rbsde::solve_classical_rbsde(&spec, &fw, &SolverConfig::default()).unwrap();
        assert!(hitting_time(&run, 3, 1e-8).iter().all(|&d| d == 3));
        let free = catalog::martingale(0.0, 1.0);
        let fw = MonteCarlo {
            steps: 8,
            paths: 20,
            seed: 2,
        }
        .simulate(&free)
        .unwrap();
        let run = crate::rbsde::solve_classical_rbsde(&free, &fw, &SolverConfig::default()).unwrap();
        assert!(hitting_time(&run, 0, 1e-8).iter().all(|&d| d == 8));
    }

    #[test]
    fn no_obstacle_makes_all_three_agree() {
        let spec = catalog::martingale(0.5, 1.0);
        let fw = MonteCarlo {
            steps: 20,
            paths: 1000,
            seed: 3,
        }
        .simulate(&spec)
        .unwrap();
        let r = verify_stopping_identity(&spec, None, &fw, &SolverConfig::default(), 0.0, 0.0).unwrap();
        assert_eq!(r.reflected, r.stopped);
        assert!((r.snell - r.reflected).abs() < 1e-12);
    }

    #[test]
    fn put_identity_and_suboptimal_rule() {
        let spec = catalog::american_put(Default::default());
        let fw = MonteCarlo {
            steps: 50,
            paths: 20000,
            seed: 4,
        }
        .simulate(&spec)
        .unwrap();
        let cfg = SolverConfig::default();
        let r = verify_stopping_identity(&spec, None, &fw, &cfg, 0.015, 3.0).unwrap();
        assert!(r.holds(), "{r:?}");
        let half = vec![25; fw.paths];
        let pay = payoff_process(&spec, &fw);
        let fixed = solve_random_terminal(&spec, None, &fw, &cfg, &half, &payoff_at(&pay, fw.paths, &half)).unwrap();
        assert!(fixed.y0() <= r.reflected + 2.0 * r.reflected_stderr);
        let sv = snell_envelope(&spec, None, &fw, &cfg).unwrap();
        for (v, l) in sv.value.iter().zip(&sv.payoff) {
            assert!(v >= l);
        }
        let mut csv = Vec::new();
        write_stopping_region_csv(&sv, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 51);
    }

    #[test]
    fn deeper_moneyness_stops_sooner() {
        let mut mean_d0 = Vec::new();
        for strike in [36.0, 40.0, 44.0] {
            let spec = catalog::american_put(catalog::PutParams {
                strike,
                ..Default::default()
            });
            let fw = MonteCarlo {
                steps: 50,
                paths: 5000,
                seed: 5,
            }
            .simulate(&spec)
            .unwrap();
            let run = crate::rbsde::solve_classical_rbsde(&spec, &fw, &SolverConfig::default()).unwrap();
            let d = hitting_time(&run, 0, 1e-8);
            mean_d0.push(d.iter().sum::<usize>() as f64 / d.len() as f64);
        }
        assert!(mean_d0[0] > mean_d0[1] && mean_d0[1] > mean_d0[2], "{mean_d0:?}");
    }

    proptest! {
        #[test]
        fn lattice_value_dominates_and_is_monotone(
            w in prop::collection::vec(-3.0f64..3.0, 7),
            shift in 0.0f64..2.0,
        ) {
            let payoff = |i: usize, k: i64| w[(k + 6) as usize % 7] * (1.0 + 0.1 * i as f64);
            let v = lattice_snell(6, payoff);
            prop_assert!(v >= payoff(0, 0));
            let terminal: f64 = (0..64u32)
                .map(|path| payoff(6, 2 * path.count_ones() as i64 - 6))
                .sum::<f64>()
                / 64.0;
            prop_assert!(v >= terminal - 1e-12);
            let up = lattice_snell(6, |i, k| payoff(i, k) + shift);
            prop_assert!((up - v - shift).abs() <= 1e-12);
        }
    }
}

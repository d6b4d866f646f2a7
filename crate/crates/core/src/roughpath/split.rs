//! Greedy backward splitting of [0, T] into cells of bounded p-variation.

use super::{pvar::p_variation_of_points, DrivingSignal};
use crate::error::{Error, Result};

/// Cut times from the terminal time down to 0, together with the budget used.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalSplit {
    /// Decreasing: `cut_times[0] = T`, last entry `0`.
    pub cut_times: Vec<f64>,
    pub delta: f64,
    pub p: f64,
}

impl IntervalSplit {
    /// A single cell covering [0, T].
    pub fn whole(horizon: f64) -> Self {
        Self {
            cut_times: vec![horizon, 0.0],
            delta: f64::INFINITY,
            p: 1.0,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cut_times.len() - 1
    }

    /// Cells `(start, end)` ordered right to left.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.cut_times.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Cell-count bound ([‖X‖/δ] + 1)^p for a path of total p-variation `total`.
    pub fn count_bound(total: f64, delta: f64, p: f64) -> f64 {
        ((total / delta).floor() + 1.0).powf(p)
    }
}

/// Greedy construction from T: each cell [u, r] is as long as the budget
/// allows, i.e. `u` is the smallest time with p-variation on [u, r] at most `delta`.
/// Cut times may fall strictly inside grid cells.
pub fn split_by_pvar(signal: &DrivingSignal, p: f64, delta: f64) -> Result<IntervalSplit> {
    if !(delta > 0.0) {
        return Err(Error::Range(format!("p-variation budget must be positive, got {delta}")));
    }
    if !(p >= 1.0) {
        return Err(Error::Range(format!("p-variation exponent must be >= 1, got {p}")));
    }
    let l = signal.dim();
    let budget = delta.powf(p);
    // Points to the left of (and including) the current right endpoint.
    let mut times: Vec<f64> = signal.grid().points().to_vec();
    let mut vals: Vec<f64> = signal.values().to_vec();
    let mut cuts = vec![signal.grid().horizon()];
    let dist_p = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            .powf(p)
    };
    loop {
        let r = times.len() - 1;
        // best[i - lo] = p-variation^p on [t_i, t_r]
        let mut best = vec![0.0f64; r + 1];
        let mut cut_at = None;
        for i in (0..r).rev() {
            let xi = &vals[i * l..(i + 1) * l];
            let mut m = 0.0f64;
            for j in i + 1..=r {
                m = m.max(best[j] + dist_p(xi, &vals[j * l..(j + 1) * l]));
            }
            if m > budget {
                cut_at = Some(i);
                break;
            }
            best[i] = m;
        }
        let Some(i) = cut_at else {
            cuts.push(0.0);
            break;
        };
        // The cut lies in (t_i, t_{i+1}]; bisect on the exact variation of [u, t_r].
        let (t0, t1) = (times[i], times[i + 1]);
        let x0 = vals[i * l..(i + 1) * l].to_vec();
        let x1 = vals[(i + 1) * l..(i + 2) * l].to_vec();
        let point = |u: f64| -> Vec<f64> {
            let w = (u - t0) / (t1 - t0);
            x0.iter().zip(&x1).map(|(a, b)| a + w * (b - a)).collect()
        };
        let var_from = |u: f64| -> f64 {
            let xu = point(u);
            (i + 1..=r)
                .map(|j| best[j] + dist_p(&xu, &vals[j * l..(j + 1) * l]))
                .fold(0.0, f64::max)
        };
        let (mut lo, mut hi) = (t0, t1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * signal.grid().horizon() {
                break;
            }
            if var_from(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = hi;
        let xu = point(u);
        times.truncate(i + 1);
        vals.truncate((i + 1) * l);
        if u > t0 {
            times.push(u);
            vals.extend_from_slice(&xu);
        }
        cuts.push(u);
        if u <= 0.0 {
            break;
        }
    }
    Ok(IntervalSplit {
        cut_times: cuts,
        delta,
        p,
    })
}

/// p-variation of the whole path.
#[allow(dead_code)]
pub(crate) fn total_pvar(signal: &DrivingSignal, p: f64) -> f64 {
    p_variation_of_points(signal.values(), signal.dim(), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roughpath::{lift_step2, p_variation_exact, SampledPath, TimeGrid};
    use proptest::prelude::*;

    fn scalar(points: Vec<f64>, values: Vec<f64>) -> DrivingSignal {
        let grid = TimeGrid::new(points).unwrap();
        lift_step2(&SampledPath { grid, dim: 1, values }, 2.0).unwrap()
    }

    #[test]
    fn identity_path_halves() {
        let n = 100;
        let pts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let s = scalar(pts.clone(), pts);
        let sp = split_by_pvar(&s, 2.0, 0.5).unwrap();
        assert_eq!(sp.cut_times.len(), 3);
        assert!((sp.cut_times[1] - 0.5).abs() < 1e-12);
        assert_eq!(sp.cut_times[0], 1.0);
        assert_eq!(sp.cut_times[2], 0.0);
    }

    #[test]
    fn cut_inside_a_single_cell() {
        let s = scalar(vec![0.0, 1.0], vec![0.0, 1.0]);
        let sp = split_by_pvar(&s, 2.0, 0.3).unwrap();
        assert_eq!(sp.cell_count(), 4);
        for (a, b) in sp.cells() {
            assert!(p_variation_exact(&s, 2.0, a, b).unwrap() <= 0.3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn large_budget_gives_one_cell() {
        let s = scalar(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]);
        let sp = split_by_pvar(&s, 2.0, 10.0).unwrap();
        assert_eq!(sp.cut_times, vec![1.0, 0.0]);
        assert!(split_by_pvar(&s, 2.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn cells_respect_budget_and_count_bound(
            vals in prop::collection::vec(-1.0f64..1.0, 2..40),
            p in 2.0f64..2.9,
            delta in 0.05f64..1.5,
        ) {
            let n = vals.len() - 1;
            let pts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let s = scalar(pts, vals);
            let sp = split_by_pvar(&s, p, delta).unwrap();
            prop_assert_eq!(sp.cut_times[0], 1.0);
            prop_assert_eq!(*sp.cut_times.last().unwrap(), 0.0);
            for w in sp.cut_times.windows(2) {
                prop_assert!(w[1] < w[0]);
                let v = p_variation_exact(&s, p, w[1], w[0]).unwrap();
                prop_assert!(v <= delta * (1.0 + 1e-9), "cell variation {} > {}", v, delta);
            }
            let total = total_pvar(&s, p);
            prop_assert!(sp.cell_count() as f64 <= IntervalSplit::count_bound(total, delta, p),
                "{} cells, total {}, bound {}", sp.cell_count(), total, IntervalSplit::count_bound(total, delta, p));
        }
    }
}

//! Adaptive Dormand–Prince 5(4) integration for small dense systems.

/// Step-size control settings.
#[derive(Clone, Copy, Debug)]
pub struct Dopri {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Dopri {
    pub fn new(tol: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            max_steps: 1_000_000,
        }
    }
}

/// Integration failure at time `t`.
#[derive(Clone, Copy, Debug)]
pub struct StepFailure {
    pub t: f64,
}

/// Reusable stage buffers.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y5: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        let mut w = Self::default();
        w.resize(n);
        w
    }

    fn resize(&mut self, n: usize) {
        for k in self.k.iter_mut() {
            k.resize(n, 0.0);
        }
        self.tmp.resize(n, 0.0);
        self.y5.resize(n, 0.0);
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Dopri {
    /// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction) in place.
    /// `h` carries the step-size guess in and the last accepted size out.
    pub fn integrate<F>(
        &self,
        mut f: F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        h: &mut f64,
        ws: &mut Workspace,
    ) -> Result<(), StepFailure>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        ws.resize(n);
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        let mut t = t0;
        let mut step = if *h > 0.0 { h.min(span.abs()) } else { span.abs() };
        let h_min = 1e-14 * span.abs().max(t0.abs()).max(t1.abs()).max(1e-300);
        let Workspace { k, tmp, y5 } = ws;
        f(t, y, &mut k[0]);
        for _ in 0..self.max_steps {
            let remaining = (t1 - t) * dir;
            if remaining <= 0.0 {
                *h = step;
                return Ok(());
            }
            let last = step >= remaining;
            let hs = if last { remaining } else { step } * dir;
            let [k1, k2, k3, k4, k5, k6, k7] = k;
            for i in 0..n {
                tmp[i] = y[i] + hs * A21 * k1[i];
            }
            f(t + C2 * hs, tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * hs, tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * hs, tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * hs, tmp, k5);
            for i in 0..n {
                tmp[i] = y[i]
                    + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + hs, tmp, k6);
            for i in 0..n {
                y5[i] = y[i]
                    + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            let t_new = if last { t1 } else { t + hs };
            f(t_new, y5, k7);
            let mut err = 0.0f64;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
                let r = (e / sc).abs();
                err = if r.is_nan() || !y5[i].is_finite() { f64::INFINITY } else { err.max(r) };
            }
            if !err.is_finite() {
                step *= 0.1;
                if step < h_min {
                    return Err(StepFailure { t });
                }
                continue;
            }
            if err <= 1.0 {
                t = t_new;
                y.copy_from_slice(y5);
                std::mem::swap(k1, k7);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    step *= fac;
                }
                if last {
                    *h = step;
                    return Ok(());
                }
            } else {
                step *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if step < h_min {
                    return Err(StepFailure { t });
                }
            }
        }
        Err(StepFailure { t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_forward_and_backward() {
        let d = Dopri::new(1e-10);
        let mut ws = Workspace::new(1);
        let mut y = [1.0];
        let mut h = 0.0;
        d.integrate(|_, y, dy| dy[0] = y[0], 0.0, 1.0, &mut y, &mut h, &mut ws)
            .unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-9);
        d.integrate(|_, y, dy| dy[0] = y[0], 1.0, 0.0, &mut y, &mut h, &mut ws)
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator() {
        let d = Dopri::new(1e-10);
        let mut ws = Workspace::new(2);
        let mut y = [1.0, 0.0];
        let mut h = 0.0;
        let tau = 2.0 * std::f64::consts::PI;
        d.integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            tau,
            &mut y,
            &mut h,
            &mut ws,
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8);
    }

    #[test]
    fn blow_up_reports_failure() {
        let d = Dopri::new(1e-8);
        let mut ws = Workspace::new(1);
        let mut y = [1.0];
        let mut h = 0.0;
        // y' = y², y(0) = 1 explodes at t = 1
        let r = d.integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, 2.0, &mut y, &mut h, &mut ws);
        assert!(r.is_err());
    }
}

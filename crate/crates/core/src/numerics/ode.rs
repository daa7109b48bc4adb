//! Dormand-Prince 5(4) with step-size control and the standard fourth-order
//! continuous extension.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + th * (self.r[1][i]
                    + th1 * (self.r[2][i] + th * (self.r[3][i] + th1 * self.r[4][i])));
        }
    }
}

/// Piecewise polynomial solution on `[t0, t_end]`.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    steps: Vec<DenseStep>,
    y_end: Vec<f64>,
    t_end: f64,
    pub stats: OdeStats,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(self.t_end, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Step boundaries, including both ends.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        m.push(self.t_end);
        m
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y_end.len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.steps.is_empty() || t >= self.t_end {
            out.copy_from_slice(&self.y_end);
            return;
        }
        let idx = self
            .steps
            .partition_point(|s| s.t0 <= t)
            .saturating_sub(1);
        let step = &self.steps[idx];
        if t == step.t0 {
            out.copy_from_slice(&step.r[0]);
        } else {
            step.eval(t, out);
        }
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end`, landing exactly on every
/// point of `stops` that lies inside the interval.
pub fn solve<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    stops: &[f64],
    opts: OdeOptions,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut stats = OdeStats::default();
    if t_end <= t0 {
        return Ok(DenseSolution {
            steps: Vec::new(),
            y_end: y0.to_vec(),
            t_end: t0,
            stats,
        });
    }
    let mut stops: Vec<f64> = stops
        .iter()
        .copied()
        .filter(|&s| s > t0 && s < t_end)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t_end);
    let mut next_stop = 0;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    rhs(t, &y, &mut k1);
    stats.evaluations += 1;

    let scale = |a: &[f64], b: &[f64], i: usize| opts.atol + opts.rtol * a[i].abs().max(b[i].abs());

    // Initial step from the first-derivative size.
    let d0 = (0..n).map(|i| (y[i] / scale(&y, &y, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..n).map(|i| (k1[i] / scale(&y, &y, i)).powi(2)).sum::<f64>().sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(t_end - t0).max(1e-12 * (t_end - t0));

    let mut steps = Vec::new();
    let mut reject_streak = false;
    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Numeric(format!(
                "ode stepper exceeded {} steps",
                opts.max_steps
            )));
        }
        let target = stops[next_stop];
        let mut landing = false;
        let mut step = h;
        if t + step >= target || (target - t - step) < 1e-12 * step {
            step = target - t;
            landing = true;
        }
        if step < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Stiffness { t });
        }

        axpy(&mut tmp, &y, step, &[(A21, &k1)]);
        rhs(t + C2 * step, &tmp, &mut k2);
        axpy(&mut tmp, &y, step, &[(A31, &k1), (A32, &k2)]);
        rhs(t + C3 * step, &tmp, &mut k3);
        axpy(&mut tmp, &y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        rhs(t + C4 * step, &tmp, &mut k4);
        axpy(
            &mut tmp,
            &y,
            step,
            &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        );
        rhs(t + C5 * step, &tmp, &mut k5);
        axpy(
            &mut tmp,
            &y,
            step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        rhs(t + step, &tmp, &mut k6);
        axpy(
            &mut y1,
            &y,
            step,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        rhs(t + step, &y1, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (e / scale(&y, &y1, i)).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Numeric(format!("ode solution blew up near t = {t}")));
        }

        if err <= 1.0 {
            let r1: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
            let r2: Vec<f64> = (0..n).map(|i| step * k1[i] - r1[i]).collect();
            let r3: Vec<f64> = (0..n).map(|i| r1[i] - step * k7[i] - r2[i]).collect();
            let r4: Vec<f64> = (0..n)
                .map(|i| {
                    step * (D1 * k1[i]
                        + D3 * k3[i]
                        + D4 * k4[i]
                        + D5 * k5[i]
                        + D6 * k6[i]
                        + D7 * k7[i])
                })
                .collect();
            steps.push(DenseStep {
                t0: t,
                h: step,
                r: [y.clone(), r1, r2, r3, r4],
            });
            t = if landing { target } else { t + step };
            if landing {
                next_stop += 1;
            }
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if reject_streak {
                fac = fac.min(1.0);
            }
            reject_streak = false;
            if !landing || step >= h {
                h = step * fac;
            }
        } else {
            stats.rejected += 1;
            reject_streak = true;
            h = step * (0.9 * err.powf(-0.2)).max(0.2);
        }
    }

    Ok(DenseSolution {
        steps,
        y_end: y,
        t_end,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_matches_closed_form() {
        // v' = 0.5 v - 0.5 v^2 from v0 = 0.3.
        let closed = |t: f64| {
            let e = (0.5 * t).exp();
            0.3 * e / (1.0 + 0.3 * (e - 1.0))
        };
        let sol = solve(
            |_, y, dy| dy[0] = 0.5 * y[0] - 0.5 * y[0] * y[0],
            0.0,
            &[0.3],
            5.0,
            &[1.0, 2.5],
            OdeOptions::default(),
        )
        .unwrap();
        assert!((sol.eval(5.0)[0] - closed(5.0)).abs() < 1e-9);
        assert!(sol.mesh().contains(&1.0) && sol.mesh().contains(&2.5));
        for k in 0..=200 {
            let t = 5.0 * k as f64 / 200.0;
            let err = (sol.eval(t)[0] - closed(t)).abs();
            assert!(err < 5e-9, "t = {t}, err = {err:e}");
        }
    }

    #[test]
    fn linear_system_dense_output() {
        // Rotation: y = (cos t, sin t).
        let sol = solve(
            |_, y, dy| {
                dy[0] = -y[1];
                dy[1] = y[0];
            },
            0.0,
            &[1.0, 0.0],
            10.0,
            &[],
            OdeOptions::default(),
        )
        .unwrap();
        for k in 0..=97 {
            let t = 10.0 * k as f64 / 97.0;
            let y = sol.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-8 && (y[1] - t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let r = solve(
            |_, y, dy| dy[0] = y[0] * y[0],
            0.0,
            &[1.0],
            2.0,
            &[],
            OdeOptions::default(),
        );
        assert!(r.is_err());
    }
}

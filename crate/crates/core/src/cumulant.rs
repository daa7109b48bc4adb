//! Cumulant semigroup `V_t(f)` and the exact Laplace functionals of `X` and `Y`.
//!
//! The mild equation for `V_t(f)` is solved in its differential form
//! `d/dt V = L V - beta psi_0(., V)`, `V_0 = f`, and the mild form is checked
//! afterwards by quadrature.

use crate::error::{Error, Result};
use crate::model::{dot, Scenario};
use crate::numerics::{integrate, ode, DenseSolution, OdeOptions, OdeStats};
use crate::spectral::SpectralSystem;

/// Tolerance on the mild-form residual, relative to `max(1, ||T_t |f| ||_inf)`.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// Solver tolerance. The absolute part is scaled by `||f||_inf` so that tiny
/// terminal data (perturbation analysis) keeps full relative accuracy.
pub const SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CumulantSolution {
    pub f: Vec<f64>,
    pub grid: Vec<f64>,
    /// `V_t(f)` at each grid time.
    pub values: Vec<Vec<f64>>,
    pub stats: OdeStats,
    /// Mild-form residual at the final time, relative as in [`RESIDUAL_TOL`].
    pub max_residual: f64,
    dense: DenseSolution,
}

impl CumulantSolution {
    pub fn t_max(&self) -> f64 {
        self.dense.t_end()
    }

    /// `V_t(f)` at any `t` in `[0, t_max]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.dense.eval(t)
    }

    /// `-log E_mu exp(-<f, X_t>) = <mu, V_t(f)>`.
    pub fn log_laplace_x(&self, mu: &[f64], t: f64) -> f64 {
        dot(mu, &self.at(t))
    }

    /// `int_0^t phi(V_s(f)) ds` for the immigration Laplace exponent `phi`.
    pub fn immigration_integral(&self, scenario: &Scenario, t: f64) -> Result<f64> {
        let im = &scenario.immigration;
        if im.is_empty() || t == 0.0 {
            return Ok(0.0);
        }
        let scale = self.f.iter().fold(0.0f64, |m, v| m.max(v.abs())).min(1.0);
        let mut total = 0.0;
        let mut buf = vec![0.0; self.f.len()];
        let mesh = self.dense.mesh();
        for w in mesh.windows(2) {
            let (a, b) = (w[0], w[1].min(t));
            if a >= t {
                break;
            }
            let piece = integrate(
                |s| {
                    self.dense.eval_into(s, &mut buf);
                    im.laplace_exponent(&buf)
                },
                a,
                b,
                1e-8 * scale / mesh.len() as f64,
                1e-12,
            )?;
            total += piece.value;
        }
        Ok(total)
    }

    /// `-log E_mu exp(-<f, Y_t>)`.
    pub fn log_laplace_y(&self, scenario: &Scenario, mu: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_laplace_x(mu, t) + self.immigration_integral(scenario, t)?)
    }
}

fn rhs_fn<'a>(scenario: &'a Scenario) -> impl FnMut(f64, &[f64], &mut [f64]) + 'a {
    let l = scenario.mean_generator();
    let beta = scenario.branching.beta.clone();
    move |_, v, dv| {
        for x in 0..v.len() {
            let lin: f64 = l[x].iter().zip(v).map(|(a, b)| a * b).sum();
            dv[x] = lin - beta[x] * scenario.branching.psi0(x, v[x]);
        }
    }
}

/// Solves for `V_t(f)`, `f >= 0`, on `[0, t_max]`, landing on every grid time.
pub fn solve_cumulant(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t_max: f64,
    grid: &[f64],
) -> Result<CumulantSolution> {
    if f.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::precondition(
            "cumulant terminal data must be finite and nonnegative",
        ));
    }
    solve_cumulant_signed(scenario, sys, f, t_max, grid)
}

/// Same as [`solve_cumulant`] but accepts terminal data of either sign.
/// Meaningful only where the exponential moment exists, e.g. `theta * f`
/// for small `|theta|`.
pub fn solve_cumulant_signed(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t_max: f64,
    grid: &[f64],
) -> Result<CumulantSolution> {
    scenario.check_dimensions()?;
    if f.len() != scenario.n() {
        return Err(Error::Dimension {
            key: "f".into(),
            expected: scenario.n(),
            found: f.len(),
        });
    }
    if !(t_max >= 0.0) || grid.iter().any(|&t| t < 0.0 || t > t_max) {
        return Err(Error::precondition("grid must lie in [0, t_max]"));
    }
    let sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let opts = OdeOptions {
        rtol: SOLVER_TOL,
        atol: SOLVER_TOL * if sup > 0.0 { sup.min(1.0) } else { 1.0 },
        ..OdeOptions::default()
    };
    let dense = ode::solve(rhs_fn(scenario), 0.0, f, t_max, grid, opts)?;
    let values = grid.iter().map(|&t| dense.eval(t)).collect();
    let mut sol = CumulantSolution {
        f: f.to_vec(),
        grid: grid.to_vec(),
        values,
        stats: dense.stats,
        max_residual: 0.0,
        dense,
    };
    sol.max_residual = mild_residual(scenario, sys, &sol, t_max)?;
    if sol.max_residual > RESIDUAL_TOL {
        return Err(Error::Numeric(format!(
            "cumulant mild-form residual {:e} exceeds {RESIDUAL_TOL:e}",
            sol.max_residual
        )));
    }
    Ok(sol)
}

/// `max_x |V_t(x) + int_0^t T_s[beta psi_0(V_{t-s})](x) ds - T_t f(x)|`,
/// relative to `max(1, ||T_t |f| ||_inf)`.
pub fn mild_residual(
    scenario: &Scenario,
    sys: &SpectralSystem,
    sol: &CumulantSolution,
    t: f64,
) -> Result<f64> {
    let n = scenario.n();
    if t == 0.0 {
        return Ok(0.0);
    }
    let beta = &scenario.branching.beta;
    let abs_f: Vec<f64> = sol.f.iter().map(|v| v.abs()).collect();
    let scale = sys
        .semigroup_apply(t, &abs_f)
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let sup = abs_f.iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-300);
    let tf = sys.semigroup_apply(t, &sol.f);
    let vt = sol.at(t);
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; n];
    let mut g = vec![0.0; n];
    for x in 0..n {
        let nonlinear = integrate(
            |s| {
                sol.dense.eval_into(t - s, &mut buf);
                for y in 0..n {
                    g[y] = beta[y] * scenario.branching.psi0(y, buf[y]);
                }
                sys.semigroup_apply(s, &g)[x]
            },
            0.0,
            t,
            1e-11 * scale * sup.min(1.0),
            1e-12,
        )?;
        let r = (vt[x] + nonlinear.value - tf[x]).abs() / scale;
        worst = worst.max(r);
    }
    Ok(worst)
}

/// `E_mu exp(-<f, X_t>) = exp(-<mu, V_t(f)>)`.
pub fn laplace_x(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<f64> {
    let sol = solve_cumulant(scenario, sys, f, t, &[t])?;
    Ok((-sol.log_laplace_x(mu, t)).exp())
}

/// `E_mu exp(-<f, Y_t>) = exp(-<mu, V_t(f)> - int_0^t phi(V_s(f)) ds)`.
pub fn laplace_y(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<f64> {
    let sol = solve_cumulant(scenario, sys, f, t, &[t])?;
    Ok((-sol.log_laplace_y(scenario, mu, t)?).exp())
}

/// `-log E_mu exp(-theta <f, Y_t>)` for a possibly signed `theta * f`.
pub fn log_laplace_y_signed(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    theta: f64,
    t: f64,
    mu: &[f64],
) -> Result<f64> {
    let tf: Vec<f64> = f.iter().map(|v| theta * v).collect();
    let sol = solve_cumulant_signed(scenario, sys, &tf, t, &[t])?;
    sol.log_laplace_y(scenario, mu, t)
}

/// First and second moments of `<f, Y_t>` by central differences of the log
/// Laplace functional in `theta` at 0. The steps `1e-5` and `1e-3` are divided
/// by `max(1, ||T_t |f| ||_inf)` so that `-theta f` stays far from the blow-up
/// of the cumulant equation on fast-growing scenarios.
pub fn laplace_moments(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<(f64, f64)> {
    let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let scale = sys
        .semigroup_apply(t, &abs)
        .iter()
        .fold(1.0f64, |a, v| a.max(v.abs()));
    let ell = |theta: f64| log_laplace_y_signed(scenario, sys, f, theta, t, mu);
    let h1 = 1e-5 / scale;
    let mean = (ell(h1)? - ell(-h1)?) / (2.0 * h1);
    let h2 = 1e-3 / scale;
    let variance = -(ell(h2)? + ell(-h2)?) / (h2 * h2);
    Ok((mean, variance + mean * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonical::{s1, s2, s3};

    #[test]
    fn zero_terminal_data_stays_zero() {
        let s = s3();
        let sys = SpectralSystem::build(&s).unwrap();
        let sol = solve_cumulant(&s, &sys, &[0.0; 3], 2.0, &[1.0, 2.0]).unwrap();
        assert!(sol.values.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(laplace_y(&s, &sys, &[0.0; 3], 1.0, &s.mu0).unwrap(), 1.0);
    }

    #[test]
    fn riccati_fixed_point() {
        // v' = 0.5 v - 0.5 v^2 has v = 1 as a fixed point.
        let s = s1();
        let sys = SpectralSystem::build(&s).unwrap();
        let sol = solve_cumulant(&s, &sys, &[1.0], 1.0, &[0.5, 1.0]).unwrap();
        assert!((sol.values[1][0] - 1.0).abs() < 1e-12);
        assert!(sol.max_residual < RESIDUAL_TOL);
        let lx = laplace_x(&s, &sys, &[1.0], 1.0, &[1.0]).unwrap();
        assert!((lx - (-1.0f64).exp()).abs() < 1e-10);
        let ly = laplace_y(&s, &sys, &[1.0], 1.0, &[1.0]).unwrap();
        assert!((ly - (-1.2f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn riccati_closed_form_off_fixed_point() {
        let s = s1();
        let sys = SpectralSystem::build(&s).unwrap();
        let theta = 2.5;
        let sol = solve_cumulant(&s, &sys, &[theta], 3.0, &[3.0]).unwrap();
        let e = 1.5f64.exp();
        let exact = theta * e / (1.0 + theta * (e - 1.0));
        assert!((sol.values[0][0] - exact).abs() < 1e-9);
    }

    #[test]
    fn linearization_matches_semigroup() {
        let s = s1();
        let sys = SpectralSystem::build(&s).unwrap();
        let eps = 1e-8;
        let sol = solve_cumulant(&s, &sys, &[eps], 1.0, &[1.0]).unwrap();
        let ratio = sol.values[0][0] / eps;
        assert!((ratio / 0.5f64.exp() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bounded_by_mean_semigroup() {
        let s = s3();
        let sys = SpectralSystem::build(&s).unwrap();
        let f = [0.7, 0.1, 1.3];
        let grid = [0.5, 1.0, 2.0];
        let sol = solve_cumulant(&s, &sys, &f, 2.0, &grid).unwrap();
        for (t, v) in grid.iter().zip(&sol.values) {
            let tf = sys.semigroup_apply(*t, &f);
            for (a, b) in v.iter().zip(&tf) {
                assert!(*a >= 0.0 && *a <= *b + 1e-12);
            }
        }
    }

    #[test]
    fn without_immigration_x_and_y_agree() {
        let s = s2(1.0).without_immigration();
        let sys = SpectralSystem::build(&s).unwrap();
        let f = [0.4, 1.1];
        let lx = laplace_x(&s, &sys, &f, 1.5, &s.mu0).unwrap();
        let ly = laplace_y(&s, &sys, &f, 1.5, &s.mu0).unwrap();
        assert_eq!(lx, ly);
    }

    #[test]
    fn branching_property() {
        let s = s3();
        let sys = SpectralSystem::build(&s).unwrap();
        let f = [0.3, 0.9, 0.2];
        let mu1 = [0.4, 0.0, 1.0];
        let mu2 = [0.1, 0.7, 0.3];
        let both: Vec<f64> = mu1.iter().zip(&mu2).map(|(a, b)| a + b).collect();
        let l1 = laplace_x(&s, &sys, &f, 1.2, &mu1).unwrap();
        let l2 = laplace_x(&s, &sys, &f, 1.2, &mu2).unwrap();
        let l12 = laplace_x(&s, &sys, &f, 1.2, &both).unwrap();
        assert!((l12 - l1 * l2).abs() < 1e-10);
    }

    #[test]
    fn negative_terminal_data_rejected() {
        let s = s1();
        let sys = SpectralSystem::build(&s).unwrap();
        assert!(matches!(
            solve_cumulant(&s, &sys, &[-0.1], 1.0, &[]),
            Err(Error::Precondition(_))
        ));
    }
}

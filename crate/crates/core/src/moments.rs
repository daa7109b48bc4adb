//! First and second moments of `<f, Y_t>`, their long-time limits and the
//! constants of the central limit theorem.
//!
//! Every integrand below is a finite sum of products of eigen-exponentials,
//! so the time integrals are evaluated in closed form. The `*_quadrature`
//! functions redo the same integrals numerically and serve as cross-checks.

use crate::error::{Error, Result};
use crate::model::{dot, Scenario};
use crate::numerics::{integrate, integrate_decaying};
use crate::spectral::{FunctionProfile, SpaceClass, SpectralSystem};

/// `int_0^t e^{-r s} ds`.
pub fn e1(r: f64, t: f64) -> f64 {
    if r == 0.0 {
        t
    } else {
        -(-r * t).exp_m1() / r
    }
}

/// `int_0^t e^{-p s - q (t - s)} ds`.
pub fn conv(p: f64, q: f64, t: f64) -> f64 {
    (-p.min(q) * t).exp() * e1((p - q).abs(), t)
}

/// `int_0^t int_0^u e^{-p s - q (u - s)} ds du`, symmetric in `p` and `q`.
pub fn conv2(p: f64, q: f64, t: f64) -> f64 {
    let (small, big) = if p.abs() <= q.abs() { (p, q) } else { (q, p) };
    if big.abs() * t > 0.5 {
        return (e1(small, t) - conv(p, q, t)) / big;
    }
    // sum_n (-1)^n t^{n+2} / (n+2)! h_n(p, q), h_n the complete homogeneous sum.
    let mut total = 0.0;
    let mut h = 1.0;
    let mut small_pow = 1.0;
    let mut coef = t * t / 2.0;
    for n in 0..60 {
        let term = coef * h;
        total += term;
        if term.abs() <= 1e-18 * total.abs() {
            break;
        }
        small_pow *= small;
        h = h * big + small_pow;
        coef *= -t / (n as f64 + 3.0);
    }
    total
}

/// The pieces of the first two moments at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValues {
    pub t: f64,
    pub f: Vec<f64>,
    pub mean: f64,
    pub second: f64,
    pub variance: f64,
    /// `<mu, T_t f>`.
    pub initial_mean: f64,
    /// `int_0^t Gamma(T_s f) ds`.
    pub immigration_mean: f64,
    /// `int_0^t <mu, T_s[A (T_{t-s} f)^2]> ds`.
    pub var_initial: f64,
    /// `int_0^t int_0^u Gamma(T_s[A (T_{u-s} f)^2]) ds du`.
    pub var_immigration: f64,
    /// `sum_j rate_j int_0^t <nu_j, T_s f>^2 ds`.
    pub var_arrivals: f64,
}

/// Eigen-coordinates of one test function and one initial measure, reused
/// across many evaluation times.
#[derive(Debug, Clone)]
pub struct MomentPlan {
    f: Vec<f64>,
    rates: Vec<f64>,
    coeffs: Vec<f64>,
    mu_phi: Vec<f64>,
    gamma_phi: Vec<f64>,
    /// `G[i][j][k] = <A phi_i phi_j, phi_k>_m`, flattened.
    g: Vec<f64>,
    /// Per immigration atom, `(rate, <nu, phi_i>)`.
    atoms: Vec<(f64, Vec<f64>)>,
}

pub(crate) fn triple_products(scenario: &Scenario, sys: &SpectralSystem) -> Vec<f64> {
    let n = sys.n();
    let a = scenario.derived().big_a;
    let m = sys.weights();
    let phi = sys.eigenfunctions();
    let mut g = vec![0.0; n * n * n];
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                let v: f64 = (0..n)
                    .map(|x| a[x] * phi[i][x] * phi[j][x] * phi[k][x] * m[x])
                    .sum();
                for (p, q, r) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                    g[(p * n + q) * n + r] = v;
                }
            }
        }
    }
    g
}

impl MomentPlan {
    pub fn new(scenario: &Scenario, sys: &SpectralSystem, f: &[f64], mu: &[f64]) -> Result<Self> {
        let n = sys.n();
        for (key, v) in [("f", f), ("mu", mu)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    key: key.into(),
                    expected: n,
                    found: v.len(),
                });
            }
        }
        let phi = sys.eigenfunctions();
        let im = &scenario.immigration;
        Ok(MomentPlan {
            f: f.to_vec(),
            rates: sys.rates().to_vec(),
            coeffs: sys.clean_coefficients(f),
            mu_phi: phi.iter().map(|p| dot(mu, p)).collect(),
            gamma_phi: phi.iter().map(|p| im.gamma(p)).collect(),
            g: triple_products(scenario, sys),
            atoms: im
                .h_atoms
                .iter()
                .map(|a| (a.rate, phi.iter().map(|p| dot(&a.nu, p)).collect()))
                .collect(),
        })
    }

    fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| *c != 0.0)
    }

    pub fn mean(&self, t: f64) -> f64 {
        let (a, b) = self.mean_parts(t);
        a + b
    }

    fn mean_parts(&self, t: f64) -> (f64, f64) {
        let mut initial = 0.0;
        let mut immigration = 0.0;
        for (i, c) in self.active() {
            let l = self.rates[i];
            initial += c * self.mu_phi[i] * (-l * t).exp();
            immigration += c * self.gamma_phi[i] * e1(l, t);
        }
        (initial, immigration)
    }

    pub fn values(&self, t: f64) -> Result<MomentValues> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::precondition(format!("time must be nonnegative, got {t}")));
        }
        let n = self.rates.len();
        let (initial_mean, immigration_mean) = self.mean_parts(t);
        let mut var_initial = 0.0;
        let mut var_immigration = 0.0;
        let active: Vec<(usize, f64)> = self.active().collect();
        for &(i, ci) in &active {
            for &(j, cj) in &active {
                let q = self.rates[i] + self.rates[j];
                for k in 0..n {
                    let g = self.g[(i * n + j) * n + k];
                    if g == 0.0 {
                        continue;
                    }
                    let w = ci * cj * g;
                    let p = self.rates[k];
                    if self.mu_phi[k] != 0.0 {
                        var_initial += w * self.mu_phi[k] * conv(p, q, t);
                    }
                    if self.gamma_phi[k] != 0.0 {
                        var_immigration += w * self.gamma_phi[k] * conv2(p, q, t);
                    }
                }
            }
        }
        let mut var_arrivals = 0.0;
        for (rate, nu_phi) in &self.atoms {
            for &(i, ci) in &active {
                for &(j, cj) in &active {
                    var_arrivals += rate
                        * ci
                        * cj
                        * nu_phi[i]
                        * nu_phi[j]
                        * e1(self.rates[i] + self.rates[j], t);
                }
            }
        }
        let mean = initial_mean + immigration_mean;
        let variance = var_initial + var_immigration + var_arrivals;
        Ok(MomentValues {
            t,
            f: self.f.clone(),
            mean,
            second: mean * mean + variance,
            variance,
            initial_mean,
            immigration_mean,
            var_initial,
            var_immigration,
            var_arrivals,
        })
    }
}

/// `E_mu <f, Y_t> = <mu, T_t f> + int_0^t Gamma(T_s f) ds`.
pub fn mean_y(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::precondition(format!("time must be nonnegative, got {t}")));
    }
    Ok(MomentPlan::new(scenario, sys, f, mu)?.mean(t))
}

/// Mean, second moment and variance of `<f, Y_t>` under `P_mu`.
pub fn second_moment_y(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<MomentValues> {
    MomentPlan::new(scenario, sys, f, mu)?.values(t)
}

const QUAD_ABS: f64 = 1e-9;
const QUAD_REL: f64 = 1e-11;

fn squared_flow(sys: &SpectralSystem, a: &[f64], f: &[f64], s: f64) -> Vec<f64> {
    sys.semigroup_apply(s, f)
        .iter()
        .zip(a)
        .map(|(v, a)| a * v * v)
        .collect()
}

/// [`mean_y`] with the immigration integral done by quadrature.
pub fn mean_y_quadrature(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<f64> {
    let im = &scenario.immigration;
    let drift = integrate(|s| im.gamma(&sys.semigroup_apply(s, f)), 0.0, t, QUAD_ABS, QUAD_REL)?;
    Ok(dot(mu, &sys.semigroup_apply(t, f)) + drift.value)
}

/// [`second_moment_y`] with every time integral done by adaptive quadrature.
pub fn second_moment_y_quadrature(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &[f64],
    t: f64,
    mu: &[f64],
) -> Result<MomentValues> {
    let a = scenario.derived().big_a;
    let im = &scenario.immigration;
    let mean = mean_y_quadrature(scenario, sys, f, t, mu)?;
    let initial_mean = dot(mu, &sys.semigroup_apply(t, f));
    let var_initial = integrate(
        |s| dot(mu, &sys.semigroup_apply(s, &squared_flow(sys, &a, f, t - s))),
        0.0,
        t,
        QUAD_ABS,
        QUAD_REL,
    )?
    .value;
    let mut inner_err = None;
    let var_immigration = if im.is_empty() {
        0.0
    } else {
        integrate(
            |u| {
                let r = integrate(
                    |s| im.gamma(&sys.semigroup_apply(s, &squared_flow(sys, &a, f, u - s))),
                    0.0,
                    u,
                    0.1 * QUAD_ABS,
                    QUAD_REL,
                );
                match r {
                    Ok(v) => v.value,
                    Err(e) => {
                        inner_err.get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            t,
            QUAD_ABS,
            QUAD_REL,
        )?
        .value
    };
    if let Some(e) = inner_err {
        return Err(e);
    }
    let mut var_arrivals = 0.0;
    for atom in &im.h_atoms {
        var_arrivals += atom.rate
            * integrate(
                |s| dot(&atom.nu, &sys.semigroup_apply(s, f)).powi(2),
                0.0,
                t,
                QUAD_ABS,
                QUAD_REL,
            )?
            .value;
    }
    let variance = var_initial + var_immigration + var_arrivals;
    Ok(MomentValues {
        t,
        f: f.to_vec(),
        mean,
        second: mean * mean + variance,
        variance,
        initial_mean,
        immigration_mean: mean - initial_mean,
        var_initial,
        var_immigration,
        var_arrivals,
    })
}

/// The two immigration integrability integrals `m(t0) = int_0^t0 Gamma(a_2s^{1/2}) ds`
/// and `n(t0) = sum_j rate_j int_0^t0 <nu_j, a_2s^{1/2}>^2 ds`.
pub fn immigration_integrals(scenario: &Scenario, sys: &SpectralSystem, t0: f64) -> Result<(f64, f64)> {
    if !(t0 > 0.0) {
        return Err(Error::precondition(format!("t0 must be positive, got {t0}")));
    }
    let root = |s: f64| -> Vec<f64> {
        sys.diagonal_kernel(2.0 * s)
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    };
    let im = &scenario.immigration;
    let m = integrate(|s| im.gamma(&root(s)), 0.0, t0, QUAD_ABS, QUAD_REL)?.value;
    let mut n = 0.0;
    for atom in &im.h_atoms {
        n += atom.rate
            * integrate(|s| dot(&atom.nu, &root(s)).powi(2), 0.0, t0, QUAD_ABS, QUAD_REL)?.value;
    }
    Ok((m, n))
}

fn require_supercritical(sys: &SpectralSystem) -> Result<()> {
    if sys.lambda1() < 0.0 {
        Ok(())
    } else {
        Err(Error::precondition(format!(
            "scenario is not supercritical (lambda_1 = {})",
            sys.lambda1()
        )))
    }
}

fn require_class(p: &FunctionProfile, class: SpaceClass, what: &str) -> Result<()> {
    if p.class == class {
        Ok(())
    } else {
        Err(Error::precondition(format!(
            "{what} must lie in {class}, got {}",
            p.class
        )))
    }
}

/// `sum_{i,j} c_i c_j G_ij1 w(l_i + l_j)` over the active coefficients.
fn principal_pair_sum(
    sys: &SpectralSystem,
    g: &[f64],
    coeffs: &[f64],
    weight: impl Fn(f64) -> f64,
) -> f64 {
    let n = sys.n();
    let l = sys.rates();
    let mut total = 0.0;
    for i in 0..n {
        if coeffs[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if coeffs[j] == 0.0 {
                continue;
            }
            total += coeffs[i] * coeffs[j] * g[(i * n + j) * n] * weight(l[i] + l[j]);
        }
    }
    total
}

/// `sigma_f^2 = int_0^inf e^{lambda_1 s} <A (T_s f)^2, phi_1>_m ds` for `f` in `C_s`.
pub fn sigma2(scenario: &Scenario, sys: &SpectralSystem, f: &FunctionProfile) -> Result<f64> {
    require_class(f, SpaceClass::Small, "f")?;
    let g = triple_products(scenario, sys);
    let l1 = sys.lambda1();
    Ok(principal_pair_sum(sys, &g, &f.coeffs, |q| 1.0 / (q - l1)))
}

/// `beta_g^2 = int_0^inf e^{-lambda_1 s} <A (I_s g)^2, phi_1>_m ds` for `g` in `C_l`.
pub fn beta2(scenario: &Scenario, sys: &SpectralSystem, g: &FunctionProfile) -> Result<f64> {
    require_class(g, SpaceClass::Large, "g")?;
    let tp = triple_products(scenario, sys);
    let l1 = sys.lambda1();
    Ok(principal_pair_sum(sys, &tp, &g.coeffs, |q| 1.0 / (l1 - q)))
}

/// `rho_h^2 = <A h^2, phi_1>_m` for `h` in `C_c`.
pub fn rho2(scenario: &Scenario, sys: &SpectralSystem, h: &FunctionProfile) -> Result<f64> {
    require_class(h, SpaceClass::Critical, "h")?;
    let a = scenario.derived().big_a;
    let ah2: Vec<f64> = h.leading.iter().zip(&a).map(|(v, a)| a * v * v).collect();
    Ok(sys.inner_m(&ah2, sys.phi1()))
}

/// [`sigma2`] by quadrature of its defining integral.
pub fn sigma2_quadrature(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &FunctionProfile,
) -> Result<f64> {
    require_class(f, SpaceClass::Small, "f")?;
    let a = scenario.derived().big_a;
    let l1 = sys.lambda1();
    let r = integrate_decaying(
        |s| (l1 * s).exp() * sys.inner_m(&squared_flow(sys, &a, &f.f, s), sys.phi1()),
        0.0,
        f.margin,
        1e-12,
        1e-12,
    )?;
    Ok(r.value)
}

/// [`beta2`] by quadrature of its defining integral.
pub fn beta2_quadrature(
    scenario: &Scenario,
    sys: &SpectralSystem,
    g: &FunctionProfile,
) -> Result<f64> {
    require_class(g, SpaceClass::Large, "g")?;
    let a = scenario.derived().big_a;
    let l1 = sys.lambda1();
    let r = integrate_decaying(
        |s| {
            let flow = sys.leading_flow(g, s).expect("class checked");
            let sq: Vec<f64> = flow.iter().zip(&a).map(|(v, a)| a * v * v).collect();
            (-l1 * s).exp() * sys.inner_m(&sq, sys.phi1())
        },
        0.0,
        -g.margin,
        1e-12,
        1e-12,
    )?;
    Ok(r.value)
}

/// Long-time limit of the second-moment growth, by class of `f`:
///
/// * `C_s`: `lim e^{lambda_1 t} E_mu <f, Y_t>^2`
/// * `C_c`: `lim t^{-1} e^{lambda_1 t} Var_mu <f, Y_t>`
/// * `C_l`: `lim e^{2 lambda_gamma t} Var_mu <f, Y_t>`
pub fn variance_limits(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: &FunctionProfile,
    mu: &[f64],
) -> Result<f64> {
    require_supercritical(sys)?;
    let l1 = sys.lambda1();
    let phi1 = sys.phi1();
    let im = &scenario.immigration;
    let growth = dot(mu, phi1) + im.gamma(phi1) / (-l1);
    match f.class {
        SpaceClass::Zero => Ok(0.0),
        SpaceClass::Mixed => Err(Error::precondition(
            "f mixes the C_l, C_c and C_s regimes; project it onto one class first",
        )),
        SpaceClass::Small => Ok(sigma2(scenario, sys, f)? * growth),
        SpaceClass::Critical => {
            let a = scenario.derived().big_a;
            let sq: Vec<f64> = f.leading.iter().zip(&a).map(|(v, a)| a * v * v).collect();
            Ok(growth * sys.inner_m(&sq, phi1))
        }
        SpaceClass::Large => {
            let gamma = f.gamma.expect("nonzero profile");
            let two = 2.0 * sys.clusters()[gamma].lambda;
            let a = scenario.derived().big_a;
            let sq: Vec<f64> = f.leading.iter().zip(&a).map(|(v, a)| a * v * v).collect();
            let proj = sys.coefficients(&sq);
            let mut initial = 0.0;
            let mut v_inf = vec![0.0; sys.n()];
            for (k, phi) in sys.eigenfunctions().iter().enumerate() {
                let w = proj[k] / (sys.rates()[k] - two);
                initial += w * dot(mu, phi);
                for (v, p) in v_inf.iter_mut().zip(phi) {
                    *v += w * p;
                }
            }
            let drift = im.gamma(&v_inf) / (-two);
            let arrivals: f64 = im
                .h_atoms
                .iter()
                .map(|atom| atom.rate * dot(&atom.nu, &f.leading).powi(2))
                .sum::<f64>()
                / (-two);
            Ok(initial + drift + arrivals)
        }
    }
}

/// Constants of the joint central limit theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct CltConstants {
    pub sigma2_f: Option<f64>,
    pub rho2_h: Option<f64>,
    pub beta2_g: Option<f64>,
    /// `lim Var e^{lambda_1 t} <phi_1, Y_t>`.
    pub var_wtilde: f64,
    /// `<mu, phi_1> + Gamma(phi_1) / (-lambda_1)`.
    pub mean_wtilde: f64,
    pub gamma_phi: f64,
}

pub fn clt_constants(
    scenario: &Scenario,
    sys: &SpectralSystem,
    f: Option<&FunctionProfile>,
    h: Option<&FunctionProfile>,
    g: Option<&FunctionProfile>,
) -> Result<CltConstants> {
    require_supercritical(sys)?;
    let phi1 = sys.phi1().to_vec();
    let im = &scenario.immigration;
    let gamma_phi = im.gamma(&phi1);
    let mu = &scenario.mu0;
    let p1 = sys.profile(&phi1);
    Ok(CltConstants {
        sigma2_f: f.map(|p| sigma2(scenario, sys, p)).transpose()?,
        rho2_h: h.map(|p| rho2(scenario, sys, p)).transpose()?,
        beta2_g: g.map(|p| beta2(scenario, sys, p)).transpose()?,
        var_wtilde: variance_limits(scenario, sys, &p1, mu)?,
        mean_wtilde: dot(mu, &phi1) + gamma_phi / (-sys.lambda1()),
        gamma_phi,
    })
}

/// Expectations attached to `H_t^{k,j}` and its limit `W_inf^{k,j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleConstants {
    /// `E H_t = <mu, phi>` for every `t`.
    pub expected_h: f64,
    /// `Gamma(phi)`.
    pub gamma: f64,
    pub lambda: f64,
    /// `E W_inf = <mu, phi> + Gamma(phi) / (-lambda_k)`.
    pub expected_w: f64,
}

/// Constants for eigenfunction `j` of cluster `k`, both zero-based.
pub fn martingale_constants(
    scenario: &Scenario,
    sys: &SpectralSystem,
    k: usize,
    j: usize,
    mu: &[f64],
) -> Result<MartingaleConstants> {
    let phi = sys
        .eigenfunction(k, j)
        .ok_or_else(|| Error::precondition(format!("no eigenfunction ({}, {})", k + 1, j + 1)))?;
    let lambda = sys.clusters()[k].lambda;
    if !(sys.lambda1() > 2.0 * lambda) {
        return Err(Error::precondition(format!(
            "martingale limit needs lambda_1 > 2 lambda_k, got lambda_1 = {}, lambda_k = {lambda}",
            sys.lambda1()
        )));
    }
    let gamma = scenario.immigration.gamma(phi);
    let expected_h = dot(mu, phi);
    Ok(MartingaleConstants {
        expected_h,
        gamma,
        lambda,
        expected_w: expected_h + gamma / (-lambda),
    })
}

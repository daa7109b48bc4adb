//! Brute-force reference computations, independent of the library's
//! eigen-expansions and closed forms: Taylor matrix exponentials, Jacobi
//! rotations and Gauss-Legendre quadrature straight from the model fields.

#![allow(dead_code)]

use superclt::Scenario;

pub type Mat = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn mat_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// `exp(t a)` by scaling, a 30-term Taylor series and squaring.
pub fn expm(a: &Mat, t: f64) -> Mat {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = t / 2f64.powi(squarings as i32);
    let mut term = identity(n);
    let mut sum = identity(n);
    for k in 1..=30 {
        term = mat_mul(&term, a);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x *= scale / k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// Eigenvalues (ascending) and column eigenvectors of a symmetric matrix by
/// cyclic Jacobi rotations.
pub fn jacobi_eigen(sym: &Mat) -> (Vec<f64>, Mat) {
    let n = sym.len();
    let mut a = sym.clone();
    let mut v = identity(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite 20-point Gauss-Legendre rule over `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Adaptive Simpson rule with Richardson correction.
pub fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// The mean generator `Q + diag(beta a)`, read directly from the fields.
pub fn generator(s: &Scenario) -> Mat {
    let mut l = s.generator.q.clone();
    for (x, row) in l.iter_mut().enumerate() {
        row[x] += s.branching.beta[x] * s.branching.a[x];
    }
    l
}

/// `A(x) = beta (2 b + sum r y^2)`.
pub fn big_a(s: &Scenario) -> Vec<f64> {
    let br = &s.branching;
    (0..s.n())
        .map(|x| {
            let jumps: f64 = br
                .jump_atoms
                .iter()
                .filter(|j| j.site == x)
                .map(|j| j.rate * j.size * j.size)
                .sum();
            br.beta[x] * (2.0 * br.b[x] + jumps)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn gamma(s: &Scenario, f: &[f64]) -> f64 {
    let im = &s.immigration;
    dot(&im.eta, f) + im.h_atoms.iter().map(|h| h.rate * dot(&h.nu, f)).sum::<f64>()
}

pub fn semigroup(s: &Scenario, t: f64, f: &[f64]) -> Vec<f64> {
    mat_vec(&expm(&generator(s), t), f)
}

/// `<mu, T_t f> + int_0^t Gamma(T_s f) ds`.
pub fn mean(s: &Scenario, f: &[f64], t: f64) -> f64 {
    let panels = (2.0 * t).ceil().max(8.0) as usize;
    dot(&s.mu0, &semigroup(s, t, f)) + integrate(|u| gamma(s, &semigroup(s, u, f)), 0.0, t, panels)
}

/// `T_s[A (T_r f)^2]`.
fn a_square(s: &Scenario, a: &[f64], sgs: f64, r: f64, f: &[f64]) -> Vec<f64> {
    let tf = semigroup(s, r, f);
    let g: Vec<f64> = a.iter().zip(&tf).map(|(a, v)| a * v * v).collect();
    semigroup(s, sgs, &g)
}

/// Second moment of `<f, Y_t>` from the four-term formula, every integral by
/// brute-force quadrature.
pub fn second_moment(s: &Scenario, f: &[f64], t: f64) -> f64 {
    let a = big_a(s);
    let m = mean(s, f, t);
    let panels = (2.0 * t).ceil().max(8.0) as usize;
    let initial = integrate(|u| dot(&s.mu0, &a_square(s, &a, u, t - u, f)), 0.0, t, panels);
    let immigration = integrate(
        |u| integrate(|v| gamma(s, &a_square(s, &a, v, u - v, f)), 0.0, u, panels / 2),
        0.0,
        t,
        panels,
    );
    let arrivals: f64 = s
        .immigration
        .h_atoms
        .iter()
        .map(|h| h.rate * integrate(|u| dot(&h.nu, &semigroup(s, u, f)).powi(2), 0.0, t, panels))
        .sum();
    m * m + initial + immigration + arrivals
}

/// Principal decay rate and eigenfunction, m-normalized and positive.
pub fn principal(s: &Scenario) -> (f64, Vec<f64>) {
    let l = generator(s);
    let m = &s.space.m;
    let n = s.n();
    let sym: Mat = (0..n)
        .map(|i| (0..n).map(|j| m[i].sqrt() * l[i][j] / m[j].sqrt()).collect())
        .collect();
    let (values, vectors) = jacobi_eigen(&sym);
    let top = n - 1;
    let mut phi: Vec<f64> = (0..n).map(|x| vectors[x][top] / m[x].sqrt()).collect();
    if phi.iter().sum::<f64>() < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    (-values[top], phi)
}

/// `int_0^inf g(s) ds` for `g` decaying at least like `e^{-rate s}`, cut
/// where the tail falls below `e^{-40}`.
pub fn integrate_decaying(g: impl Fn(f64) -> f64, rate: f64) -> f64 {
    let horizon = 40.0 / rate;
    integrate(g, 0.0, horizon, 80)
}

/// `int_0^inf e^{lambda_1 s} <A (T_s f)^2, phi_1>_m ds` for `f` in the small class.
pub fn sigma2(s: &Scenario, f: &[f64], margin: f64) -> f64 {
    let (l1, phi1) = principal(s);
    let a = big_a(s);
    integrate_decaying(
        |u| {
            let tf = semigroup(s, u, f);
            let w: f64 = (0..s.n()).map(|x| a[x] * tf[x] * tf[x] * phi1[x] * s.space.m[x]).sum();
            (l1 * u).exp() * w
        },
        margin,
    )
}

/// `int_0^inf e^{-lambda_1 s} <A (T_{-s} g)^2, phi_1>_m ds` for `g` spanned by
/// eigenfunctions with `2 lambda < lambda_1`.
pub fn beta2(s: &Scenario, g: &[f64], margin: f64) -> f64 {
    let (l1, phi1) = principal(s);
    let a = big_a(s);
    integrate_decaying(
        |u| {
            let back = semigroup(s, -u, g);
            let w: f64 = (0..s.n()).map(|x| a[x] * back[x] * back[x] * phi1[x] * s.space.m[x]).sum();
            (-l1 * u).exp() * w
        },
        -margin,
    )
}

/// Second eigenfunction of a two-site scenario, with a positive first entry.
pub fn second_eigenfunction(s: &Scenario) -> Vec<f64> {
    let l = generator(s);
    let m = &s.space.m;
    let sym: Mat = (0..2)
        .map(|i| (0..2).map(|j| m[i].sqrt() * l[i][j] / m[j].sqrt()).collect())
        .collect();
    let (_, vectors) = jacobi_eigen(&sym);
    let mut phi: Vec<f64> = (0..2).map(|x| vectors[x][0] / m[x].sqrt()).collect();
    if phi[0] < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    phi
}

/// `psi_0(x, l) = b l^2 + sum r (e^{-l y} - 1 + l y)`, straight from the fields.
pub fn psi0(s: &Scenario, x: usize, l: f64) -> f64 {
    let br = &s.branching;
    let jumps: f64 = br
        .jump_atoms
        .iter()
        .filter(|j| j.site == x)
        .map(|j| j.rate * ((-l * j.size).exp() - 1.0 + l * j.size))
        .sum();
    br.b[x] * l * l + jumps
}

/// `-log E_mu exp(-<f, Y_t>)` by classical RK4 on the cumulant equation with
/// the immigration exponent carried as an extra component.
pub fn log_laplace_y(s: &Scenario, f: &[f64], t: f64, steps: usize) -> f64 {
    let n = s.n();
    let l = generator(s);
    let im = &s.immigration;
    let rhs = |v: &[f64]| -> Vec<f64> {
        let mut d: Vec<f64> = (0..n)
            .map(|x| dot(&l[x], &v[..n]) - s.branching.beta[x] * psi0(s, x, v[x]))
            .collect();
        let arrivals: f64 = im.h_atoms.iter().map(|h| h.rate * (1.0 - (-dot(&h.nu, &v[..n])).exp())).sum();
        d.push(dot(&im.eta, &v[..n]) + arrivals);
        d
    };
    let mut v: Vec<f64> = f.to_vec();
    v.push(0.0);
    let h = t / steps as f64;
    let axpy = |v: &[f64], k: &[f64], c: f64| -> Vec<f64> { v.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for _ in 0..steps {
        let k1 = rhs(&v);
        let k2 = rhs(&axpy(&v, &k1, 0.5 * h));
        let k3 = rhs(&axpy(&v, &k2, 0.5 * h));
        let k4 = rhs(&axpy(&v, &k3, h));
        for i in 0..=n {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    dot(&s.mu0, &v[..n]) + v[n]
}

//! Eigen-expansion of the mean semigroup `T_t = exp(t L)`, `L = Q + diag(alpha)`.
//!
//! `L` is self-adjoint in `l2(m)`, so it is diagonalised through the symmetric
//! matrix `D^{1/2} L D^{-1/2}` with `D = diag(m)`. The generator spectrum is
//! `-lambda_1 > -lambda_2 > ...`; everything here is stored in terms of the
//! decay rates `lambda_k`, sorted ascending, with `lambda_1 < 0` in the
//! supercritical regime.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::Scenario;

/// Eigenvalues closer than this (relative to `max(1, |lambda|)`) are pooled.
pub const CLUSTER_TOL: f64 = 1e-9;

/// A coefficient is treated as zero below this fraction of `||f||_m`.
pub const COEFF_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Decay rate `lambda_k` (the generator eigenvalue is `-lambda_k`).
    pub lambda: f64,
    /// Indices of the member eigenfunctions in [`SpectralSystem::eigenfunctions`].
    pub members: std::ops::Range<usize>,
}

impl Cluster {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone)]
pub struct SpectralSystem {
    m: Vec<f64>,
    /// Decay rate of each eigenfunction (pooled within clusters).
    rates: Vec<f64>,
    /// m-orthonormal eigenfunctions, ordered by increasing decay rate.
    vectors: Vec<Vec<f64>>,
    clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceClass {
    /// Only eigenspaces with `2 lambda_k < lambda_1`.
    Large,
    /// Only the eigenspace with `2 lambda_k = lambda_1`.
    Critical,
    /// `lambda_1 < 2 lambda_{gamma(f)}`.
    Small,
    Mixed,
    Zero,
}

impl SpaceClass {
    pub fn label(self) -> &'static str {
        match self {
            SpaceClass::Large => "C_l",
            SpaceClass::Critical => "C_c",
            SpaceClass::Small => "C_s",
            SpaceClass::Mixed => "mixed",
            SpaceClass::Zero => "zero",
        }
    }
}

impl fmt::Display for SpaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A test function together with its eigen-expansion.
#[derive(Debug, Clone)]
pub struct FunctionProfile {
    pub f: Vec<f64>,
    /// `<f, phi_i>_m` for every eigenfunction, in eigenfunction order.
    pub coeffs: Vec<f64>,
    /// Zero-based cluster index of the first nonzero projection; `None` for `f = 0`.
    pub gamma: Option<usize>,
    /// The leading projection `f_1`.
    pub leading: Vec<f64>,
    pub class: SpaceClass,
    /// `2 lambda_gamma - lambda_1`: positive for `C_s`, zero for `C_c`.
    pub margin: f64,
}

impl FunctionProfile {
    /// The index `gamma(f)`, counting clusters from 1.
    pub fn gamma_k(&self) -> Option<usize> {
        self.gamma.map(|g| g + 1)
    }
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CLUSTER_TOL * a.abs().max(b.abs()).max(1.0)
}

impl SpectralSystem {
    pub fn build(scenario: &Scenario) -> Result<SpectralSystem> {
        scenario.check_dimensions()?;
        let n = scenario.n();
        let m = scenario.space.m.clone();
        let l = scenario.mean_generator();
        let sq: Vec<f64> = m.iter().map(|w| w.sqrt()).collect();

        let mut sym = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s_ij = sq[i] * l[i][j] / sq[j];
                let s_ji = sq[j] * l[j][i] / sq[i];
                sym[(i, j)] = 0.5 * (s_ij + s_ji);
            }
        }
        if sym.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("generator has non-finite entries".into()));
        }
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;

        // Decay rate is minus the generator eigenvalue.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| (-eig.eigenvalues[a]).total_cmp(&-eig.eigenvalues[b]));

        let mut rates = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for &idx in &order {
            rates.push(-eig.eigenvalues[idx]);
            let col = eig.eigenvectors.column(idx);
            vectors.push((0..n).map(|x| col[x] / sq[x]).collect::<Vec<f64>>());
        }

        let mut clusters: Vec<Cluster> = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || !rel_close(rates[i], rates[start]) {
                let lambda = rates[start..i].iter().sum::<f64>() / (i - start) as f64;
                for r in &mut rates[start..i] {
                    *r = lambda;
                }
                clusters.push(Cluster {
                    lambda,
                    members: start..i,
                });
                start = i;
            }
        }

        if clusters[0].multiplicity() != 1 {
            return Err(Error::Numeric(format!(
                "principal eigenvalue is not simple (multiplicity {}); the generator is reducible",
                clusters[0].multiplicity()
            )));
        }
        let phi1 = &mut vectors[0];
        let (imax, _) = phi1
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("n >= 1");
        if phi1[imax] < 0.0 {
            phi1.iter_mut().for_each(|v| *v = -*v);
        }
        if phi1.iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("principal eigenfunction not positive".into()));
        }
        // Deterministic signs for the rest: the first non-negligible entry is positive.
        for phi in vectors.iter_mut().skip(1) {
            let big = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if let Some(first) = phi.iter().find(|v| v.abs() > 1e-9 * big) {
                if *first < 0.0 {
                    phi.iter_mut().for_each(|v| *v = -*v);
                }
            }
        }

        Ok(SpectralSystem {
            m,
            rates,
            vectors,
            clusters,
        })
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.m
    }

    pub fn lambda1(&self) -> f64 {
        self.clusters[0].lambda
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Distinct decay rates `lambda_1 < lambda_2 < ...`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.lambda).collect()
    }

    /// Decay rate attached to each eigenfunction.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn phi1(&self) -> &[f64] {
        &self.vectors[0]
    }

    /// Eigenfunction `j` (zero-based) of cluster `k` (zero-based).
    pub fn eigenfunction(&self, k: usize, j: usize) -> Option<&[f64]> {
        let c = self.clusters.get(k)?;
        let idx = c.members.start + j;
        (idx < c.members.end).then(|| self.vectors[idx].as_slice())
    }

    /// Cluster index of eigenfunction `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.clusters
            .iter()
            .position(|c| c.members.contains(&i))
            .expect("eigenfunction index in range")
    }

    pub fn inner_m(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.m)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// `<f, phi_i>_m` for every eigenfunction.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|phi| self.inner_m(f, phi)).collect()
    }

    /// [`Self::coefficients`] with projections below `COEFF_TOL` of the norm set
    /// to zero, as in [`Self::profile`]. Long horizons amplify rounding noise in
    /// a projection that should vanish by `e^{-lambda t}`.
    pub fn clean_coefficients(&self, f: &[f64]) -> Vec<f64> {
        let mut coeffs = self.coefficients(f);
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in coeffs.iter_mut() {
            if c.abs() <= COEFF_TOL * norm {
                *c = 0.0;
            }
        }
        coeffs
    }

    /// Sums `sum_i w_i phi_i`.
    pub fn synthesize(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (w, phi) in weights.iter().zip(&self.vectors) {
            if *w != 0.0 {
                for (o, p) in out.iter_mut().zip(phi) {
                    *o += w * p;
                }
            }
        }
        out
    }

    /// `T_t f = sum_k e^{-lambda_k t} sum_j a_j^k phi_j^(k)`.
    pub fn semigroup_apply(&self, t: f64, f: &[f64]) -> Vec<f64> {
        if t == 0.0 {
            return f.to_vec();
        }
        let c: Vec<f64> = self
            .coefficients(f)
            .iter()
            .zip(&self.rates)
            .map(|(a, l)| a * (-l * t).exp())
            .collect();
        self.synthesize(&c)
    }

    /// Heat kernel `q_t(x, y)` with respect to `m`: `T_t f(x) = sum_y q_t(x,y) f(y) m_y`.
    pub fn heat_kernel(&self, t: f64) -> Vec<Vec<f64>> {
        let n = self.n();
        let decay: Vec<f64> = self.rates.iter().map(|l| (-l * t).exp()).collect();
        let mut q = vec![vec![0.0; n]; n];
        for x in 0..n {
            for y in x..n {
                let v: f64 = self
                    .vectors
                    .iter()
                    .zip(&decay)
                    .map(|(phi, e)| e * phi[x] * phi[y])
                    .sum();
                q[x][y] = v;
                q[y][x] = v;
            }
        }
        q
    }

    /// Diagonal of the heat kernel, `a_t(x) = q_t(x, x)`.
    pub fn diagonal_kernel(&self, t: f64) -> Vec<f64> {
        (0..self.n())
            .map(|x| {
                self.vectors
                    .iter()
                    .zip(&self.rates)
                    .map(|(phi, l)| (-l * t).exp() * phi[x] * phi[x])
                    .sum()
            })
            .collect()
    }

    /// `sum_x a_t(x) m_x`, the trace of `T_t`.
    pub fn trace(&self, t: f64) -> f64 {
        self.rates.iter().map(|l| (-l * t).exp()).sum()
    }

    /// Transition matrix of the linear mass flow on measures over time `h`:
    /// `P[x][y] = m_x q_h(x, y)` so that `(mu P^T)(x) = sum_y P[x][y] mu_y`.
    /// Entries are clamped at zero to remove eigen-expansion roundoff.
    pub fn measure_flow(&self, h: f64) -> Vec<Vec<f64>> {
        let q = self.heat_kernel(h);
        q.iter()
            .enumerate()
            .map(|(x, row)| row.iter().map(|v| (self.m[x] * v).max(0.0)).collect())
            .collect()
    }

    pub fn profile(&self, f: &[f64]) -> FunctionProfile {
        let coeffs = self.coefficients(f);
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let active: Vec<usize> = self
            .clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                norm > 0.0 && coeffs[c.members.clone()].iter().any(|a| a.abs() > COEFF_TOL * norm)
            })
            .map(|(k, _)| k)
            .collect();

        let Some(&gamma) = active.first() else {
            return FunctionProfile {
                f: f.to_vec(),
                coeffs,
                gamma: None,
                leading: vec![0.0; self.n()],
                class: SpaceClass::Zero,
                margin: f64::INFINITY,
            };
        };

        let l1 = self.lambda1();
        let regime = |k: usize| -> std::cmp::Ordering {
            let two = 2.0 * self.clusters[k].lambda;
            if rel_close(two, l1) {
                std::cmp::Ordering::Equal
            } else {
                two.total_cmp(&l1)
            }
        };
        use std::cmp::Ordering::*;
        let class = match regime(gamma) {
            Greater => SpaceClass::Small,
            Equal if active.len() == 1 => SpaceClass::Critical,
            Less if active.iter().all(|&k| regime(k) == Less) => SpaceClass::Large,
            _ => SpaceClass::Mixed,
        };

        let members = self.clusters[gamma].members.clone();
        let mut lead_w = vec![0.0; coeffs.len()];
        lead_w[members.clone()].copy_from_slice(&coeffs[members]);
        FunctionProfile {
            f: f.to_vec(),
            leading: self.synthesize(&lead_w),
            coeffs,
            gamma: Some(gamma),
            class,
            margin: 2.0 * self.clusters[gamma].lambda - l1,
        }
    }

    /// `I_s g = sum_{2 lambda_k < lambda_1} e^{lambda_k s} a_j^k phi_j^(k)` for `g` in `C_l`.
    pub fn leading_flow(&self, g: &FunctionProfile, s: f64) -> Result<Vec<f64>> {
        if g.class != SpaceClass::Large {
            return Err(Error::precondition(format!(
                "leading flow needs a C_l function, got class {}",
                g.class
            )));
        }
        let w: Vec<f64> = g
            .coeffs
            .iter()
            .zip(&self.rates)
            .map(|(a, l)| a * (l * s).exp())
            .collect();
        Ok(self.synthesize(&w))
    }

    /// `max |<phi_i, phi_j>_m - delta_ij|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                let v = self.inner_m(&self.vectors[i], &self.vectors[j]);
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// `max |sum_i phi_i(x) phi_i(y) m_y - delta_xy|`.
    pub fn completeness_residual(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for x in 0..n {
            for y in 0..n {
                let target = if x == y { 1.0 } else { 0.0 };
                let v: f64 = self.vectors.iter().map(|phi| phi[x] * phi[y]).sum::<f64>() * self.m[y];
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonical::{s1, s2};

    const RT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn one_site_system() {
        let sys = SpectralSystem::build(&s1()).unwrap();
        assert!((sys.lambda1() + 0.5).abs() < 1e-15);
        assert!((sys.phi1()[0] - 1.0).abs() < 1e-15);
        let t1 = sys.semigroup_apply(1.0, &[1.0]);
        assert!((t1[0] - 0.5f64.exp()).abs() < 1e-14);
        let q = sys.heat_kernel(1.0);
        assert!((q[0][0] - 1.648_721_270_700_128).abs() < 1e-12);
    }

    #[test]
    fn two_site_eigensystem() {
        for alpha in [1.0, 4.0, 5.0] {
            let sys = SpectralSystem::build(&s2(alpha)).unwrap();
            let l = sys.lambdas();
            assert!((l[0] + alpha).abs() < 1e-12);
            assert!((l[1] - (2.0 - alpha)).abs() < 1e-12);
            assert!(close(sys.phi1(), &[RT2, RT2], 1e-14));
            let phi2 = sys.eigenfunction(1, 0).unwrap();
            assert!(close(phi2, &[RT2, -RT2], 1e-14) || close(phi2, &[-RT2, RT2], 1e-14));
        }
    }

    fn phi2_positive_first(sys: &SpectralSystem) -> Vec<f64> {
        let p = sys.eigenfunction(1, 0).unwrap().to_vec();
        if p[0] < 0.0 {
            p.iter().map(|v| -v).collect()
        } else {
            p
        }
    }

    #[test]
    fn eigenfunction_flows_exponentially() {
        let sys = SpectralSystem::build(&s2(1.0)).unwrap();
        let phi2 = phi2_positive_first(&sys);
        let got = sys.semigroup_apply(0.7, &phi2);
        let want: Vec<f64> = phi2.iter().map(|p| (-0.7f64).exp() * p).collect();
        assert!(close(&got, &want, 1e-14));
        let f = [0.3, -2.0];
        assert_eq!(sys.semigroup_apply(0.0, &f), f.to_vec());
    }

    #[test]
    fn heat_kernel_leading_term() {
        let sys = SpectralSystem::build(&s2(1.0)).unwrap();
        let t = 20.0;
        let q = sys.heat_kernel(t);
        for row in &q {
            for v in row {
                assert!(((sys.lambda1() * t).exp() * v - 0.5).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn classification_follows_alpha() {
        let expect = [
            (1.0, SpaceClass::Small, 3.0),
            (4.0, SpaceClass::Critical, 0.0),
            (5.0, SpaceClass::Large, -1.0),
        ];
        for (alpha, class, margin) in expect {
            let sys = SpectralSystem::build(&s2(alpha)).unwrap();
            let phi2 = phi2_positive_first(&sys);
            let p = sys.profile(&phi2);
            assert_eq!(p.gamma_k(), Some(2));
            assert_eq!(p.class, class, "alpha = {alpha}");
            assert!((p.margin - margin).abs() < 1e-12, "margin {}", p.margin);
            assert!(close(&p.leading, &phi2, 1e-14));
        }
    }

    #[test]
    fn zero_and_mixed_profiles() {
        let sys = SpectralSystem::build(&s2(1.0)).unwrap();
        let p = sys.profile(&[0.0, 0.0]);
        assert_eq!(p.class, SpaceClass::Zero);
        assert_eq!(p.gamma, None);
        // 1 = sqrt(2) phi1 lives in C_l; (1, 0) also has a C_s component.
        assert_eq!(sys.profile(&[1.0, 1.0]).class, SpaceClass::Large);
        assert_eq!(sys.profile(&[1.0, 0.0]).class, SpaceClass::Mixed);
    }

    #[test]
    fn leading_flow_values() {
        let sys = SpectralSystem::build(&s2(5.0)).unwrap();
        let phi2 = phi2_positive_first(&sys);
        let p = sys.profile(&phi2);
        assert_eq!(p.class, SpaceClass::Large);
        assert!(close(&sys.leading_flow(&p, 0.0).unwrap(), &p.f, 1e-15));
        let s = 0.4;
        let got = sys.leading_flow(&p, s).unwrap();
        let want: Vec<f64> = phi2.iter().map(|v| (-3.0 * s).exp() * v).collect();
        assert!(close(&got, &want, 1e-14));

        let phi1 = sys.phi1().to_vec();
        let p1 = sys.profile(&phi1);
        let got = sys.leading_flow(&p1, 1.3).unwrap();
        let want: Vec<f64> = phi1.iter().map(|v| (-5.0 * 1.3f64).exp() * v).collect();
        assert!(close(&got, &want, 1e-15));

        let small = SpectralSystem::build(&s2(1.0)).unwrap();
        let ps = small.profile(&phi2_positive_first(&small));
        assert!(small.leading_flow(&ps, 1.0).is_err());
    }

    #[test]
    fn reducible_generator_is_rejected() {
        let mut s = s2(1.0);
        s.generator.q = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let err = SpectralSystem::build(&s).unwrap_err();
        assert!(err.to_string().contains("not simple"), "{err}");
    }
}

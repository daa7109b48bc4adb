//! Finite-state scenario: spatial chain, branching law, immigration law and
//! initial measure, plus validation and the TOML file format.
//!
//! Sites are numbered `1..=n` in files and messages and `0..n` in code.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralSystem;

pub mod canonical;

/// Relative tolerance for the structural checks on `Q` (row sums, symmetry).
const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    /// Symmetrizing weights, one per site, all positive.
    pub m: Vec<f64>,
}

impl StateSpace {
    pub fn n(&self) -> usize {
        self.m.len()
    }
}

/// Jump-rate matrix of the spatial chain. A negative row sum is killing.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    /// Zero-based site index.
    pub site: usize,
    /// Offspring mass `y > 0`.
    pub size: f64,
    /// Rate `r >= 0` of the atom `r * delta_y` in the Levy kernel.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchingLaw {
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub jump_atoms: Vec<JumpAtom>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationAtom {
    pub nu: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationLaw {
    pub eta: Vec<f64>,
    pub h_atoms: Vec<ImmigrationAtom>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub space: StateSpace,
    pub generator: Generator,
    pub branching: BranchingLaw,
    pub immigration: ImmigrationLaw,
    pub mu0: Vec<f64>,
}

/// `alpha = beta * a`, `A = beta * (2b + sum r y^2)` and `M = max(|alpha| + A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoefficients {
    pub alpha: Vec<f64>,
    pub big_a: Vec<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub bound: f64,
    /// Total immigration mass rate `Gamma(1)`.
    pub gamma_total: f64,
    /// `sum_j rate_j * nu_j(1)^2`.
    pub h_second_moment: f64,
    pub lambda1: Option<f64>,
    pub supercritical: Option<bool>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            writeln!(f, "status: pass")?;
        } else {
            writeln!(f, "status: FAIL")?;
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "M = {}", self.bound)?;
        writeln!(f, "Gamma(1) = {}", self.gamma_total)?;
        writeln!(f, "H second moment = {}", self.h_second_moment)?;
        match (self.lambda1, self.supercritical) {
            (Some(l), Some(sc)) => write!(
                f,
                "lambda1 = {l} ({})",
                if sc { "supercritical" } else { "not supercritical" }
            ),
            _ => write!(f, "lambda1 = n/a"),
        }
    }
}

/// `e^{-x} - 1 + x`, accurate for small `x`.
pub(crate) fn compensated_exp(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0)
    } else {
        (-x).exp_m1() + x
    }
}

impl BranchingLaw {
    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn atoms_at(&self, site: usize) -> impl Iterator<Item = &JumpAtom> {
        self.jump_atoms.iter().filter(move |j| j.site == site)
    }

    /// `psi_0(x, lambda) = b(x) lambda^2 + sum_k r_k (e^{-lambda y_k} - 1 + lambda y_k)`.
    pub fn psi0(&self, site: usize, lambda: f64) -> f64 {
        let jumps: f64 = self
            .atoms_at(site)
            .map(|j| j.rate * compensated_exp(lambda * j.size))
            .sum();
        self.b[site] * lambda * lambda + jumps
    }

    pub fn derived(&self) -> DerivedCoefficients {
        let n = self.n();
        let mut jump_second = vec![0.0; n];
        for j in &self.jump_atoms {
            jump_second[j.site] += j.rate * j.size * j.size;
        }
        let alpha: Vec<f64> = (0..n).map(|i| self.beta[i] * self.a[i]).collect();
        let big_a: Vec<f64> = (0..n)
            .map(|i| self.beta[i] * (2.0 * self.b[i] + jump_second[i]))
            .collect();
        let bound = alpha
            .iter()
            .zip(&big_a)
            .map(|(al, aa)| al.abs() + aa)
            .fold(0.0, f64::max);
        DerivedCoefficients {
            alpha,
            big_a,
            bound,
        }
    }

    /// Mean jump mass per unit branching rate at each site, `sum_k r_k y_k`.
    pub fn jump_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for j in &self.jump_atoms {
            out[j.site] += j.rate * j.size;
        }
        out
    }
}

impl ImmigrationLaw {
    pub fn is_empty(&self) -> bool {
        self.eta.iter().all(|&e| e == 0.0) && self.h_atoms.is_empty()
    }

    /// The measure `Gamma = eta + sum_j rate_j nu_j`.
    pub fn gamma_measure(&self) -> Vec<f64> {
        let mut out = self.eta.clone();
        for atom in &self.h_atoms {
            for (o, v) in out.iter_mut().zip(&atom.nu) {
                *o += atom.rate * v;
            }
        }
        out
    }

    /// `Gamma(f) = eta(f) + sum_j rate_j nu_j(f)`.
    pub fn gamma(&self, f: &[f64]) -> f64 {
        let mut total = dot(&self.eta, f);
        for atom in &self.h_atoms {
            total += atom.rate * dot(&atom.nu, f);
        }
        total
    }

    /// Immigration Laplace exponent `phi(g) = eta(g) + sum_j rate_j (1 - e^{-nu_j(g)})`.
    pub fn laplace_exponent(&self, g: &[f64]) -> f64 {
        let mut total = dot(&self.eta, g);
        for atom in &self.h_atoms {
            total -= atom.rate * (-dot(&atom.nu, g)).exp_m1();
        }
        total
    }

    pub fn h_first_moment(&self) -> f64 {
        self.h_atoms
            .iter()
            .fold(0.0, |acc, a| acc + a.rate * a.nu.iter().sum::<f64>())
    }

    pub fn h_second_moment(&self) -> f64 {
        self.h_atoms
            .iter()
            .fold(0.0, |acc, a| {
                let mass: f64 = a.nu.iter().sum();
                acc + a.rate * mass * mass
            })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.space.n()
    }

    /// Hard dimension checks. Anything that fails here cannot be validated.
    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.space.n();
        if n == 0 {
            return Err(Error::Dimension {
                key: "space.m".into(),
                expected: 1,
                found: 0,
            });
        }
        let expect = |key: &str, len: usize| -> Result<()> {
            if len == n {
                Ok(())
            } else {
                Err(Error::Dimension {
                    key: key.into(),
                    expected: n,
                    found: len,
                })
            }
        };
        expect("generator.Q", self.generator.q.len())?;
        for row in &self.generator.q {
            expect("generator.Q row", row.len())?;
        }
        expect("branching.beta", self.branching.beta.len())?;
        expect("branching.a", self.branching.a.len())?;
        expect("branching.b", self.branching.b.len())?;
        for atom in &self.branching.jump_atoms {
            if atom.site >= n {
                return Err(Error::Dimension {
                    key: "branching.jump_atoms site".into(),
                    expected: n,
                    found: atom.site + 1,
                });
            }
        }
        expect("immigration.eta", self.immigration.eta.len())?;
        for atom in &self.immigration.h_atoms {
            expect("immigration.H_atoms nu", atom.nu.len())?;
        }
        expect("initial.mu", self.mu0.len())?;
        Ok(())
    }

    pub fn derived(&self) -> DerivedCoefficients {
        self.branching.derived()
    }

    /// The generator of the mean semigroup, `L = Q + diag(alpha)`, row-major.
    pub fn mean_generator(&self) -> Vec<Vec<f64>> {
        let alpha = self.derived().alpha;
        let mut l = self.generator.q.clone();
        for (i, row) in l.iter_mut().enumerate() {
            row[i] += alpha[i];
        }
        l
    }

    /// Returns a copy with a different initial measure.
    pub fn with_initial(&self, mu: Vec<f64>) -> Scenario {
        Scenario {
            mu0: mu,
            ..self.clone()
        }
    }

    /// Returns a copy with immigration switched off.
    pub fn without_immigration(&self) -> Scenario {
        let n = self.n();
        Scenario {
            immigration: ImmigrationLaw {
                eta: vec![0.0; n],
                h_atoms: Vec::new(),
            },
            ..self.clone()
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Scenario> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        file.into_scenario()
    }

    pub fn to_toml_string(&self) -> String {
        let file = ScenarioFile::from(self);
        toml::to_string(&file).expect("scenario fields are always representable in TOML")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml_str(&text, path)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario.to_toml_string()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn derived_coefficients(scenario: &Scenario) -> DerivedCoefficients {
    scenario.derived()
}

/// Checks every structural invariant. Malformed dimensions are a hard error;
/// everything else is reported as a violation.
pub fn validate(scenario: &Scenario) -> Result<ValidationReport> {
    scenario.check_dimensions()?;
    let n = scenario.n();
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    let all_finite = scenario.space.m.iter().all(|x| x.is_finite())
        && scenario.generator.q.iter().flatten().all(|x| x.is_finite())
        && scenario.branching.beta.iter().all(|x| x.is_finite())
        && scenario.branching.a.iter().all(|x| x.is_finite())
        && scenario.branching.b.iter().all(|x| x.is_finite())
        && scenario
            .branching
            .jump_atoms
            .iter()
            .all(|j| j.size.is_finite() && j.rate.is_finite())
        && scenario.immigration.eta.iter().all(|x| x.is_finite())
        && scenario
            .immigration
            .h_atoms
            .iter()
            .all(|h| h.rate.is_finite() && h.nu.iter().all(|x| x.is_finite()))
        && scenario.mu0.iter().all(|x| x.is_finite());
    if !all_finite {
        violations.push("all parameters must be finite".to_string());
    }

    let m = &scenario.space.m;
    if m.iter().any(|&w| w <= 0.0) {
        violations.push("m must be strictly positive at every site".into());
    }

    let q = &scenario.generator.q;
    for i in 0..n {
        let scale = q[i].iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
        for j in 0..n {
            if i != j && q[i][j] < 0.0 {
                violations.push(format!(
                    "off-diagonal rate Q({},{}) must be nonnegative",
                    i + 1,
                    j + 1
                ));
            }
        }
        let row_sum: f64 = q[i].iter().sum();
        if row_sum > STRUCTURE_TOL * scale {
            violations.push(format!("row {} of Q has positive sum {row_sum}", i + 1));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let lhs = m[i] * q[i][j];
            let rhs = m[j] * q[j][i];
            let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
            if (lhs - rhs).abs() > STRUCTURE_TOL * scale.max(1.0) {
                violations.push(format!("m-symmetry failed at ({},{})", i + 1, j + 1));
            }
        }
    }

    let br = &scenario.branching;
    if br.beta.iter().any(|&x| x < 0.0) {
        violations.push("beta must be nonnegative".into());
    }
    if br.b.iter().any(|&x| x < 0.0) {
        violations.push("b must be nonnegative".into());
    }
    for atom in &br.jump_atoms {
        if atom.size <= 0.0 {
            violations.push(format!(
                "jump atom at site {} must have positive size",
                atom.site + 1
            ));
        }
        if atom.rate < 0.0 {
            violations.push(format!(
                "jump atom at site {} must have nonnegative rate",
                atom.site + 1
            ));
        }
    }

    let im = &scenario.immigration;
    if im.eta.iter().any(|&x| x < 0.0) {
        violations.push("eta must be nonnegative".into());
    }
    for (k, atom) in im.h_atoms.iter().enumerate() {
        if atom.rate <= 0.0 {
            violations.push(format!("H atom {} must have positive rate", k + 1));
        }
        if atom.nu.iter().any(|&x| x < 0.0) {
            violations.push(format!("H atom {} must be a nonnegative measure", k + 1));
        }
        if atom.nu.iter().all(|&x| x == 0.0) {
            violations.push(format!("H atom {} is the null measure", k + 1));
        }
    }
    if scenario.mu0.iter().any(|&x| x < 0.0) {
        violations.push("mu must be nonnegative".into());
    }

    let derived = scenario.derived();
    let mut lambda1 = None;
    let mut supercritical = None;
    if violations.is_empty() {
        match SpectralSystem::build(scenario) {
            Ok(sys) => {
                let l1 = sys.lambda1();
                lambda1 = Some(l1);
                let sc = l1 < 0.0;
                supercritical = Some(sc);
                if !sc {
                    warnings.push(format!(
                        "scenario is not supercritical (lambda1 = {l1}); limit-theorem tests will refuse it"
                    ));
                }
            }
            Err(e) => violations.push(format!("spectral decomposition failed: {e}")),
        }
    }

    Ok(ValidationReport {
        violations,
        warnings,
        bound: derived.bound,
        gamma_total: im.gamma(&vec![1.0; n]),
        h_second_moment: im.h_second_moment(),
        lambda1,
        supercritical,
    })
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    space: SpaceSection,
    generator: GeneratorSection,
    branching: BranchingSection,
    immigration: ImmigrationSection,
    initial: InitialSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceSection {
    n: usize,
    m: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorSection {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchingSection {
    beta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// `[site, y, rate]` with 1-based site.
    #[serde(default)]
    jump_atoms: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImmigrationSection {
    eta: Vec<f64>,
    #[serde(rename = "H_atoms", default)]
    h_atoms: Vec<HAtomEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HAtomEntry {
    nu: Vec<f64>,
    rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    mu: Vec<f64>,
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let n = self.space.n;
        if self.space.m.len() != n {
            return Err(Error::Dimension {
                key: "space.m".into(),
                expected: n,
                found: self.space.m.len(),
            });
        }
        let mut jump_atoms = Vec::with_capacity(self.branching.jump_atoms.len());
        for (site, size, rate) in self.branching.jump_atoms {
            if site == 0 || site > n {
                return Err(Error::Dimension {
                    key: "branching.jump_atoms site".into(),
                    expected: n,
                    found: site,
                });
            }
            jump_atoms.push(JumpAtom {
                site: site - 1,
                size,
                rate,
            });
        }
        let scenario = Scenario {
            space: StateSpace { m: self.space.m },
            generator: Generator { q: self.generator.q },
            branching: BranchingLaw {
                beta: self.branching.beta,
                a: self.branching.a,
                b: self.branching.b,
                jump_atoms,
            },
            immigration: ImmigrationLaw {
                eta: self.immigration.eta,
                h_atoms: self
                    .immigration
                    .h_atoms
                    .into_iter()
                    .map(|h| ImmigrationAtom {
                        nu: h.nu,
                        rate: h.rate,
                    })
                    .collect(),
            },
            mu0: self.initial.mu,
        };
        scenario.check_dimensions()?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            space: SpaceSection {
                n: s.n(),
                m: s.space.m.clone(),
            },
            generator: GeneratorSection {
                q: s.generator.q.clone(),
            },
            branching: BranchingSection {
                beta: s.branching.beta.clone(),
                a: s.branching.a.clone(),
                b: s.branching.b.clone(),
                jump_atoms: s
                    .branching
                    .jump_atoms
                    .iter()
                    .map(|j| (j.site + 1, j.size, j.rate))
                    .collect(),
            },
            immigration: ImmigrationSection {
                eta: s.immigration.eta.clone(),
                h_atoms: s
                    .immigration
                    .h_atoms
                    .iter()
                    .map(|h| HAtomEntry {
                        nu: h.nu.clone(),
                        rate: h.rate,
                    })
                    .collect(),
            },
            initial: InitialSection {
                mu: s.mu0.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use canonical::{s1, s2};

    #[test]
    fn s1_validates_with_expected_summary() {
        let report = validate(&s1()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.bound, 1.5);
        assert!((report.lambda1.unwrap() + 0.5).abs() < 1e-14);
        assert_eq!(report.supercritical, Some(true));
        assert!((report.gamma_total - 0.2).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_generator_is_a_violation() {
        let mut s = s2(1.0);
        s.generator.q = vec![vec![-1.0, 2.0], vec![1.0, -2.0]];
        let report = validate(&s).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v == "m-symmetry failed at (1,2)"));
    }

    #[test]
    fn negative_quadratic_coefficient_is_a_violation() {
        let mut s = s1();
        s.branching.b = vec![-0.1];
        let report = validate(&s).unwrap();
        assert!(report.violations.iter().any(|v| v == "b must be nonnegative"));
    }

    #[test]
    fn wrong_dimension_is_a_hard_error() {
        let mut s = s2(1.0);
        s.branching.beta = vec![1.0, 1.0, 1.0];
        assert!(matches!(validate(&s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn subcritical_scenario_is_flagged_not_rejected() {
        let mut s = s1();
        s.branching.a = vec![-0.5];
        let report = validate(&s).unwrap();
        assert!(report.passed());
        assert_eq!(report.supercritical, Some(false));
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn derived_coefficients_match_hand_values() {
        let d = derived_coefficients(&s1());
        assert_eq!(d.alpha, vec![0.5]);
        assert_eq!(d.big_a, vec![1.0]);
        assert_eq!(d.bound, 1.5);

        let mut s = s1();
        s.branching.beta = vec![0.0];
        let d = s.derived();
        assert_eq!((d.alpha[0], d.big_a[0], d.bound), (0.0, 0.0, 0.0));

        let mut s = s1();
        s.branching.a = vec![0.0];
        s.branching.b = vec![0.0];
        s.branching.jump_atoms = vec![JumpAtom {
            site: 0,
            size: 2.0,
            rate: 0.25,
        }];
        assert_eq!(s.derived().big_a, vec![1.0]);
    }

    #[test]
    fn psi0_small_argument_is_accurate() {
        let mut s = s1();
        s.branching.jump_atoms = vec![JumpAtom {
            site: 0,
            size: 1.0,
            rate: 1.0,
        }];
        let lam: f64 = 1e-6;
        let expected = 0.5 * lam * lam + (lam * lam / 2.0 - lam.powi(3) / 6.0);
        let got = s.branching.psi0(0, lam);
        assert!((got - expected).abs() / expected < 1e-12);
        let lam: f64 = 0.7;
        let expected = 0.5 * lam * lam + ((-lam).exp() - 1.0 + lam);
        assert!((s.branching.psi0(0, lam) - expected).abs() < 1e-15);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        for s in [s1(), s2(1.0), canonical::s3()] {
            let path = dir.path().join("s.toml");
            save_scenario(&s, &path).unwrap();
            let back = load_scenario(&path).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn missing_key_is_named() {
        let text = s1().to_toml_string().replace("m = [1.0]\n", "");
        let err = Scenario::from_toml_str(&text, Path::new("x.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`m`"), "{msg}");
    }

    #[test]
    fn short_vector_is_a_dimension_error() {
        let text = s2(1.0)
            .to_toml_string()
            .replace("beta = [1.0, 1.0]", "beta = [1.0, 1.0, 1.0]");
        let err = Scenario::from_toml_str(&text, Path::new("x.toml")).unwrap_err();
        match err {
            Error::Dimension { key, expected, found } => {
                assert_eq!(key, "branching.beta");
                assert_eq!((expected, found), (2, 3));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn gamma_functional_matches_measure() {
        let s = canonical::s3();
        let f = [0.3, -1.2, 2.0];
        let via_measure = dot(&s.immigration.gamma_measure(), &f);
        assert!((via_measure - s.immigration.gamma(&f)).abs() < 1e-14);
    }
}

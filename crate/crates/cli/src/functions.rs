//! Test functions named on the command line: `one`, `phiK` or a literal vector.

use superclt::SpectralSystem;

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSpec {
    One,
    /// `phiK`: the K-th eigenfunction (1-based, counted with multiplicity).
    Phi(usize),
    Literal(Vec<f64>),
}

impl FunctionSpec {
    pub fn parse(s: &str) -> Result<FunctionSpec, String> {
        let s = s.trim();
        if s == "one" || s == "1" {
            return Ok(FunctionSpec::One);
        }
        if let Some(k) = s.strip_prefix("phi") {
            return match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(FunctionSpec::Phi(k)),
                _ => Err(format!("bad eigenfunction name `{s}` (expected phi1, phi2, ...)")),
            };
        }
        let body = s.trim_start_matches('[').trim_end_matches(']');
        let values: Result<Vec<f64>, _> = body.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match values {
            Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(FunctionSpec::Literal(v)),
            _ => Err(format!("cannot read `{s}` as one, phiK or a comma-separated vector")),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FunctionSpec::One => "one".into(),
            FunctionSpec::Phi(k) => format!("phi{k}"),
            FunctionSpec::Literal(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                format!("[{}]", parts.join(";"))
            }
        }
    }

    pub fn resolve(&self, sys: &SpectralSystem) -> Result<Vec<f64>, String> {
        let n = sys.n();
        match self {
            FunctionSpec::One => Ok(vec![1.0; n]),
            FunctionSpec::Phi(k) => sys
                .eigenfunctions()
                .get(k - 1)
                .cloned()
                .ok_or_else(|| format!("phi{k} does not exist: the scenario has {n} sites")),
            FunctionSpec::Literal(v) if v.len() == n => Ok(v.clone()),
            FunctionSpec::Literal(v) => Err(format!(
                "function vector has {} entries, the scenario has {n} sites",
                v.len()
            )),
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot read `{}` as a number", v.trim()))
        })
        .collect()
}

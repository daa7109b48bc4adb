#![allow(dead_code)]

pub mod oracle;

use proptest::prelude::*;
use superclt::model::{
    BranchingLaw, Generator, ImmigrationAtom, ImmigrationLaw, JumpAtom, StateSpace,
};
use superclt::Scenario;

/// Builds an m-symmetric scenario from raw draws. `k` holds the upper
/// triangle of the symmetric flux matrix `m_i Q_ij`, row by row.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    m: Vec<f64>,
    k: &[f64],
    killing: &[f64],
    a: Vec<f64>,
    b: Vec<f64>,
    jumps: &[(f64, f64)],
    eta: Vec<f64>,
    nu: Vec<f64>,
    nu_rate: f64,
    mu: Vec<f64>,
) -> Scenario {
    let n = m.len();
    let mut q = vec![vec![0.0; n]; n];
    let mut idx = 0;
    for i in 0..n {
        for j in i + 1..n {
            q[i][j] = k[idx] / m[i];
            q[j][i] = k[idx] / m[j];
            idx += 1;
        }
    }
    for i in 0..n {
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| q[i][j]).sum();
        q[i][i] = -out - killing[i];
    }
    let jump_atoms = jumps
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| *r > 0.0)
        .map(|(site, &(size, rate))| JumpAtom { site, size, rate })
        .collect();
    let h_atoms = if nu_rate > 0.0 {
        vec![ImmigrationAtom { nu, rate: nu_rate }]
    } else {
        Vec::new()
    };
    Scenario {
        space: StateSpace { m },
        generator: Generator { q },
        branching: BranchingLaw {
            beta: vec![1.0; n],
            a,
            b,
            jump_atoms,
        },
        immigration: ImmigrationLaw { eta, h_atoms },
        mu0: mu,
    }
}

/// Valid irreducible scenarios on one to three sites with every model term
/// switched on at random.
pub fn scenarios() -> impl Strategy<Value = Scenario> {
    (1usize..=3).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (
            prop::collection::vec(0.5..2.0f64, n),
            prop::collection::vec(0.1..1.0f64, pairs),
            prop::collection::vec(0.0..0.5f64, n),
            prop::collection::vec(-0.5..1.0f64, n),
            prop::collection::vec(0.0..1.0f64, n),
            prop::collection::vec((0.1..1.0f64, prop_oneof![Just(0.0), 0.1..1.0f64]), n),
            prop::collection::vec(0.0..0.5f64, n),
            prop::collection::vec(0.1..1.0f64, n),
            prop_oneof![Just(0.0), 0.1..0.5f64],
            prop::collection::vec(0.0..2.0f64, n),
        )
            .prop_map(|(m, k, kill, a, b, jumps, eta, nu, rate, mu)| {
                assemble(m, &k, &kill, a, b, &jumps, eta, nu, rate, mu)
            })
    })
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

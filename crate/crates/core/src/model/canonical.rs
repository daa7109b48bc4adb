//! Reference scenarios used throughout the test batteries.

use super::{
    BranchingLaw, Generator, ImmigrationAtom, ImmigrationLaw, JumpAtom, Scenario, StateSpace,
};

/// One site, quadratic branching, drift immigration:
/// `beta = 1, a = 0.5, b = 0.5, eta = 0.2, mu = delta`.
pub fn s1() -> Scenario {
    Scenario {
        space: StateSpace { m: vec![1.0] },
        generator: Generator { q: vec![vec![0.0]] },
        branching: BranchingLaw {
            beta: vec![1.0],
            a: vec![0.5],
            b: vec![0.5],
            jump_atoms: Vec::new(),
        },
        immigration: ImmigrationLaw {
            eta: vec![0.2],
            h_atoms: Vec::new(),
        },
        mu0: vec![1.0],
    }
}

/// Two symmetric sites swapping at rate 1 with linear coefficient `alpha_hat`
/// everywhere. `lambda_1 = -alpha_hat`, `lambda_2 = 2 - alpha_hat`.
pub fn s2(alpha_hat: f64) -> Scenario {
    Scenario {
        space: StateSpace { m: vec![1.0, 1.0] },
        generator: Generator {
            q: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
        },
        branching: BranchingLaw {
            beta: vec![1.0, 1.0],
            a: vec![alpha_hat, alpha_hat],
            b: vec![0.5, 0.5],
            jump_atoms: Vec::new(),
        },
        immigration: ImmigrationLaw {
            eta: vec![0.2, 0.2],
            h_atoms: Vec::new(),
        },
        mu0: vec![1.0, 0.0],
    }
}

/// S2(1) with all noise removed and no immigration: the mean flow is the path.
pub fn deterministic() -> Scenario {
    let mut s = s2(1.0);
    s.branching.b = vec![0.0, 0.0];
    s.immigration.eta = vec![0.0, 0.0];
    s.mu0 = vec![1.0, 1.0];
    s
}

/// Three sites with uneven weights, killing at site 2, jump atoms and
/// measure-valued immigration. Exercises every term of the model.
pub fn s3() -> Scenario {
    // m_i Q_ij = K_ij with K12 = 0.6, K13 = 0.3, K23 = 0.4; site 2 kills at rate 0.1.
    Scenario {
        space: StateSpace {
            m: vec![1.0, 2.0, 0.5],
        },
        generator: Generator {
            q: vec![
                vec![-0.9, 0.6, 0.3],
                vec![0.3, -0.6, 0.2],
                vec![0.6, 0.8, -1.4],
            ],
        },
        branching: BranchingLaw {
            beta: vec![1.0, 0.5, 2.0],
            a: vec![0.8, 0.6, 0.3],
            b: vec![0.3, 0.5, 0.2],
            jump_atoms: vec![
                JumpAtom {
                    site: 0,
                    size: 0.5,
                    rate: 0.4,
                },
                JumpAtom {
                    site: 2,
                    size: 1.0,
                    rate: 0.2,
                },
                JumpAtom {
                    site: 2,
                    size: 0.2,
                    rate: 1.0,
                },
            ],
        },
        immigration: ImmigrationLaw {
            eta: vec![0.1, 0.0, 0.05],
            h_atoms: vec![
                ImmigrationAtom {
                    nu: vec![0.5, 0.2, 0.0],
                    rate: 0.3,
                },
                ImmigrationAtom {
                    nu: vec![0.0, 0.0, 1.0],
                    rate: 0.1,
                },
            ],
        },
        mu0: vec![0.5, 1.0, 0.2],
    }
}

/// Looks up a reference scenario by its short name (`S1`, `S2a1`, `S2a4`, ...).
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "S1" => Some(s1()),
        "S2a1" => Some(s2(1.0)),
        "S2a4" => Some(s2(4.0)),
        "S2a5" => Some(s2(5.0)),
        "S3" => Some(s3()),
        "DET" => Some(deterministic()),
        _ => None,
    }
}

pub const NAMES: [&str; 6] = ["S1", "S2a1", "S2a4", "S2a5", "S3", "DET"];

//! Standard-form semidefinite programming: problem container and an embedded
//! primal-dual interior-point solver.
//!
//! The primal form is
//!
//! ```text
//! minimize    sum_j <C_j, X_j> + d'u
//! subject to  sum_j <A_ij, X_j> + B_i'u = b_i     i = 1..m
//!             X_j >= 0 (PSD),  u free
//! ```
//!
//! The solver returns a three-way verdict: `Feasible` with PSD block values
//! and residuals, `Infeasible` only when a dual improving ray (Farkas
//! certificate) with violation margin above the feasibility tolerance has
//! been found, or `NumericalFailure` when the iteration cap is reached with
//! neither certificate. Callers that gate decisions on feasibility must treat
//! `NumericalFailure` conservatively.

mod solver;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A coefficient on one entry of a symmetric PSD block. Entries are stored
/// with `row <= col`; the inner product contribution is
/// `coeff * X[row][col] * (2 if row < col else 1)`, i.e. coefficients are
/// symmetrized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

/// One affine equality constraint `sum <A_j, X_j> + B'u = rhs`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Constraint {
    pub entries: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Linear objective, minimized.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Objective {
    pub entries: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
}

/// A standard-form SDP with PSD variable blocks and free scalar variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub num_free: usize,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Solver verdict. `Infeasible` is certificate-backed; numerical trouble is
/// reported as `NumericalFailure`, never as infeasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

/// Solution (or failure evidence) of an SDP solve.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub block_values: Vec<DMatrix<f64>>,
    pub free_values: Vec<f64>,
    /// `||A(X) + Bu - b||_inf` at the returned point (feasible status only).
    pub primal_residual: f64,
    /// `max_j ||A*(y) + S_j - C_j||_max`, plus the free-variable dual residual.
    pub dual_residual: f64,
    /// `|pobj - dobj| / (1 + |pobj| + |dobj|)`.
    pub duality_gap: f64,
    /// Minimum eigenvalue over all returned PSD blocks.
    pub min_block_eigenvalue: f64,
    pub iterations: usize,
    /// Farkas dual ray `y` (normalized to `b'y = 1`) when status is
    /// `Infeasible`.
    pub infeasibility_certificate: Option<Vec<f64>>,
    pub message: String,
}

/// Interior-point settings. Defaults match the documented tolerances:
/// feasibility 1e-7, gap 1e-7, PSD slack 1e-8, 200 iterations, and steps of
/// 0.98 of the distance to the cone boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub psd_tol: f64,
    pub step_frac: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: 200,
            feas_tol: 1e-7,
            gap_tol: 1e-7,
            psd_tol: 1e-8,
            step_frac: 0.98,
        }
    }
}

impl SdpProblem {
    pub fn new(block_dims: Vec<usize>, num_free: usize) -> Self {
        SdpProblem {
            block_dims,
            num_free,
            constraints: Vec::new(),
            objective: Objective::default(),
        }
    }

    pub fn add_constraint(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Checks index ranges and canonicalizes entry storage (row <= col,
    /// duplicates merged, deterministic order).
    pub fn validate(&mut self) -> Result<(), SdpError> {
        let dims = self.block_dims.clone();
        let nf = self.num_free;
        let canon = |entries: &mut Vec<BlockEntry>, what: &str| -> Result<(), SdpError> {
            for e in entries.iter_mut() {
                if e.block >= dims.len() {
                    return Err(SdpError::DimensionMismatch(format!(
                        "{what}: block index {} out of range",
                        e.block
                    )));
                }
                let n = dims[e.block];
                if e.row >= n || e.col >= n {
                    return Err(SdpError::DimensionMismatch(format!(
                        "{what}: entry ({},{}) outside {n}x{n} block {}",
                        e.row, e.col, e.block
                    )));
                }
                if e.row > e.col {
                    std::mem::swap(&mut e.row, &mut e.col);
                }
            }
            entries.sort_by_key(|e| (e.block, e.row, e.col));
            entries.dedup_by(|b, a| {
                if a.block == b.block && a.row == b.row && a.col == b.col {
                    a.coeff += b.coeff;
                    true
                } else {
                    false
                }
            });
            entries.retain(|e| e.coeff != 0.0);
            Ok(())
        };
        let canon_free = |free: &mut Vec<(usize, f64)>, what: &str| -> Result<(), SdpError> {
            for (i, _) in free.iter() {
                if *i >= nf {
                    return Err(SdpError::DimensionMismatch(format!(
                        "{what}: free variable index {i} out of range (have {nf})"
                    )));
                }
            }
            free.sort_by_key(|(i, _)| *i);
            free.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            free.retain(|(_, c)| *c != 0.0);
            Ok(())
        };
        for (i, c) in self.constraints.iter_mut().enumerate() {
            canon(&mut c.entries, &format!("constraint {i}"))?;
            canon_free(&mut c.free, &format!("constraint {i}"))?;
        }
        canon(&mut self.objective.entries, "objective")?;
        canon_free(&mut self.objective.free, "objective")?;
        Ok(())
    }

    /// Plain-text sparse triplet dump (`block row col constraint coeff`) for
    /// cross-checking against external solvers. Constraint index `-1` denotes
    /// the objective; `rhs` and `freevar` lines carry the remaining data.
    pub fn dump_triplets(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "# sdp triplet dump").unwrap();
        writeln!(
            out,
            "# blocks {}",
            self.block_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        )
        .unwrap();
        writeln!(out, "# free {}", self.num_free).unwrap();
        writeln!(out, "# columns: block row col constraint coeff").unwrap();
        for e in &self.objective.entries {
            writeln!(out, "{} {} {} -1 {:?}", e.block, e.row, e.col, e.coeff).unwrap();
        }
        for (i, c) in self.objective.free.iter() {
            writeln!(out, "freevar {i} -1 {c:?}").unwrap();
        }
        for (ci, con) in self.constraints.iter().enumerate() {
            for e in &con.entries {
                writeln!(out, "{} {} {} {ci} {:?}", e.block, e.row, e.col, e.coeff).unwrap();
            }
            for (i, c) in con.free.iter() {
                writeln!(out, "freevar {i} {ci} {c:?}").unwrap();
            }
            writeln!(out, "rhs {ci} {:?}", con.rhs).unwrap();
        }
        out
    }
}

/// Solves the SDP. The problem is validated and split into structurally
/// independent components (constraints coupled through shared blocks or free
/// variables), each solved by the interior-point engine; verdicts merge
/// conservatively (any infeasible component makes the whole problem
/// infeasible, otherwise any numerical failure dominates).
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    let mut p = problem.clone();
    p.validate()?;
    solver::solve_validated(&p, settings)
}

/// Nearest (Frobenius) PSD matrix: eigenvalues clipped at zero.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(m.nrows(), m.ncols(), "psd_project needs a square matrix");
    let sym = (m + m.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() * lam;
        }
    }
    // Exact symmetry for downstream consumers.
    (&out + out.transpose()).scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_entry(block: usize, row: usize, col: usize, coeff: f64) -> BlockEntry {
        BlockEntry {
            block,
            row,
            col,
            coeff,
        }
    }

    #[test]
    fn psd_project_clips_negative_eigenvalue() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.5]));
        let p = psd_project(&m);
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn psd_project_identity_on_cone() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.7]);
        let m = &r * r.transpose();
        let p = psd_project(&m);
        assert!((&p - &m).amax() <= 1e-12);
    }

    #[test]
    fn psd_project_rank_one_half() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = psd_project(&m);
        for (i, j, want) in [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)] {
            assert_relative_eq!(p[(i, j)], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn feasibility_one_by_one() {
        let mut p = SdpProblem::new(vec![1], 0);
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 0, 1.0)],
            free: vec![],
            rhs: 1.0,
        });
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert_relative_eq!(sol.block_values[0][(0, 0)], 1.0, epsilon = 1e-6);
        assert!(sol.primal_residual <= 1e-7);
        assert!(sol.min_block_eigenvalue >= -1e-8);
    }

    /// minimize t subject to [[t, 1], [1, t]] >= 0  =>  t* = 1.
    #[test]
    fn minimize_t_toeplitz() {
        let mut p = SdpProblem::new(vec![2], 1);
        // Z11 - t = 0, Z22 - t = 0, Z12 = 1
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 0, 1.0)],
            free: vec![(0, -1.0)],
            rhs: 0.0,
        });
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 1, 1, 1.0)],
            free: vec![(0, -1.0)],
            rhs: 0.0,
        });
        // Off-diagonal entries are symmetrized: coeff 0.5 pins Z12 itself.
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 1, 0.5)],
            free: vec![],
            rhs: 1.0,
        });
        p.objective.free = vec![(0, 1.0)];
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert_relative_eq!(sol.free_values[0], 1.0, epsilon = 1e-5);
        assert!(sol.duality_gap <= 1e-7, "gap {}", sol.duality_gap);
    }

    /// [[t, 2], [2, t]] >= 0 with t = 1 is infeasible (needs t >= 2).
    #[test]
    fn off_diagonal_infeasible() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 0, 1.0)],
            free: vec![],
            rhs: 1.0,
        });
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 1, 1, 1.0)],
            free: vec![],
            rhs: 1.0,
        });
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 1, 0.5)],
            free: vec![],
            rhs: 2.0,
        });
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(sol.infeasibility_certificate.is_some());
    }

    #[test]
    fn deterministic_repeat_runs() {
        let mut p = SdpProblem::new(vec![2], 1);
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 0, 1.0), unit_entry(0, 0, 1, 0.5)],
            free: vec![(0, 1.0)],
            rhs: 2.0,
        });
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 1, 1, 1.0)],
            free: vec![(0, -0.25)],
            rhs: 1.0,
        });
        p.objective.entries = vec![unit_entry(0, 0, 0, 1.0), unit_entry(0, 1, 1, 1.0)];
        let a = solve(&p, &SolverSettings::default()).unwrap();
        let b = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(format!("{:?}", a.block_values), format!("{:?}", b.block_values));
        assert_eq!(a.primal_residual.to_bits(), b.primal_residual.to_bits());
        assert_eq!(a.duality_gap.to_bits(), b.duality_gap.to_bits());
    }

    #[test]
    fn random_known_feasible_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let n = rng.gen_range(2..5);
            let m = rng.gen_range(1..6);
            // Feasible point X0 = R R'.
            let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let x0 = &r * r.transpose();
            let mut p = SdpProblem::new(vec![n], 0);
            for _ in 0..m {
                let mut entries = Vec::new();
                let mut amat = DMatrix::zeros(n, n);
                for row in 0..n {
                    for col in row..n {
                        if rng.gen_bool(0.5) {
                            let c: f64 = rng.gen_range(-1.0..1.0);
                            entries.push(unit_entry(0, row, col, c));
                            amat[(row, col)] = c;
                            amat[(col, row)] = c;
                        }
                    }
                }
                let rhs = (&amat * &x0).trace();
                p.add_constraint(Constraint {
                    entries,
                    free: vec![],
                    rhs,
                });
            }
            let sol = solve(&p, &SolverSettings::default()).unwrap();
            assert_eq!(
                sol.status,
                SdpStatus::Feasible,
                "trial {trial}: {}",
                sol.message
            );
            assert!(sol.primal_residual <= 1e-7, "trial {trial}");
            assert!(sol.min_block_eigenvalue >= -1e-8, "trial {trial}");
        }
    }

    #[test]
    fn validate_rejects_bad_indices() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 2, 0, 1.0)],
            free: vec![],
            rhs: 0.0,
        });
        assert!(matches!(
            solve(&p, &SolverSettings::default()),
            Err(SdpError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn triplet_dump_round_numbers() {
        let mut p = SdpProblem::new(vec![2], 1);
        p.add_constraint(Constraint {
            entries: vec![unit_entry(0, 0, 1, 0.5)],
            free: vec![(0, -1.0)],
            rhs: 1.5,
        });
        let dump = p.dump_triplets();
        assert!(dump.contains("0 0 1 0 0.5"));
        assert!(dump.contains("rhs 0 1.5"));
    }
}

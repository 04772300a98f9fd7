use nalgebra::DMatrix;
use stabreg::sdp::{solve, BlockEntry, Constraint, SdpProblem, SolverSettings};

fn e(block: usize, row: usize, col: usize, coeff: f64) -> BlockEntry {
    BlockEntry {
        block,
        row,
        col,
        coeff,
    }
}

fn main() {
    let mut p = SdpProblem::new(vec![2], 1);
    p.add_constraint(Constraint {
        entries: vec![e(0, 0, 0, 1.0)],
        free: vec![(0, -1.0)],
        rhs: 0.0,
    });
    p.add_constraint(Constraint {
        entries: vec![e(0, 1, 1, 1.0)],
        free: vec![(0, -1.0)],
        rhs: 0.0,
    });
    p.add_constraint(Constraint {
        entries: vec![e(0, 0, 1, 1.0)],
        free: vec![],
        rhs: 1.0,
    });
    p.objective.free = vec![(0, 1.0)];
    let sol = solve(&p, &SolverSettings::default()).unwrap();
    println!(
        "status={:?} iters={} msg={} t={:?}",
        sol.status, sol.iterations, sol.message, sol.free_values
    );
    println!(
        "pres={:.3e} dres={:.3e} gap={:.3e}",
        sol.primal_residual, sol.dual_residual, sol.duality_gap
    );
    println!("X = {}", sol.block_values[0]);

    // infeasible instance
    let mut p2 = SdpProblem::new(vec![2], 0);
    for (r, c, rhs) in [(0usize, 0usize, 1.0), (1, 1, 1.0), (0, 1, 2.0)] {
        p2.add_constraint(Constraint {
            entries: vec![e(0, r, c, 1.0)],
            free: vec![],
            rhs,
        });
    }
    let sol2 = solve(&p2, &SolverSettings::default()).unwrap();
    println!(
        "infeas test: status={:?} iters={} msg={}",
        sol2.status, sol2.iterations, sol2.message
    );

    // random feasible trial 5 style
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let n = rng.gen_range(2..5);
        let m = rng.gen_range(1..6);
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
                        entries.push(e(0, row, col, c));
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
        println!(
            "trial {trial}: n={n} m={m} status={:?} iters={} pres={:.2e} dres={:.2e} gap={:.2e} mineig={:.2e} msg={}",
            sol.status,
            sol.iterations,
            sol.primal_residual,
            sol.dual_residual,
            sol.duality_gap,
            sol.min_block_eigenvalue,
            sol.message
        );
    }
}

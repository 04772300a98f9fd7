//! Homogeneous self-dual interior-point engine with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector step.
//!
//! The homogeneous embedding solves
//!
//! ```text
//! A(X) + Bu - b tau            = 0
//! -A*(y) - S + C tau           = 0
//! -B'y + d tau                 = 0
//! b'y - <C,X> - d'u - kappa    = 0
//! X, S PSD;  tau, kappa >= 0
//! ```
//!
//! Convergence with `tau` bounded away from zero yields a primal-dual optimal
//! pair; convergence with `kappa` dominant yields a Farkas infeasibility ray.
//! Problems are first split into structurally independent components.

use nalgebra::{DMatrix, DVector};

use super::{Constraint, Objective, SdpProblem, SdpSolution, SdpStatus, SolverSettings};

/// Static regularization added to the reduced KKT system; keeps the solve
/// well-posed under redundant constraint rows without affecting the verified
/// residuals.
const STATIC_REG: f64 = 1e-12;

pub(super) fn solve_validated(
    problem: &SdpProblem,
    settings: &SolverSettings,
) -> Result<SdpSolution, super::SdpError> {
    // Objective coefficients on completely unconstrained free variables make
    // the problem trivially unbounded; reject early.
    let mut free_touched = vec![false; problem.num_free];
    for c in &problem.constraints {
        for (i, _) in &c.free {
            free_touched[*i] = true;
        }
    }
    for (i, coeff) in &problem.objective.free {
        if *coeff != 0.0 && !free_touched[*i] {
            return Err(super::SdpError::DimensionMismatch(format!(
                "objective references free variable {i} that no constraint touches"
            )));
        }
    }

    let comps = split_components(problem, settings);
    let (comps, early_infeasible) = match comps {
        Ok(c) => c,
        Err(sol) => return Ok(sol),
    };
    if let Some(sol) = early_infeasible {
        return Ok(sol);
    }

    // Solve components independently (deterministic merge by index).
    use rayon::prelude::*;
    let locals: Vec<LocalOutcome> = comps
        .par_iter()
        .map(|c| solve_component(c, settings))
        .collect();

    // Merge.
    let mut block_values: Vec<DMatrix<f64>> = problem
        .block_dims
        .iter()
        .map(|&n| DMatrix::zeros(n, n))
        .collect();
    let mut free_values = vec![0.0; problem.num_free];
    let mut status = SdpStatus::Feasible;
    let mut message = String::new();
    let mut primal_residual: f64 = 0.0;
    let mut dual_residual: f64 = 0.0;
    let mut duality_gap: f64 = 0.0;
    let mut iterations = 0;
    let mut certificate: Option<Vec<f64>> = None;

    for (comp, local) in comps.iter().zip(&locals) {
        iterations = iterations.max(local.iterations);
        match local.status {
            SdpStatus::Infeasible => {
                status = SdpStatus::Infeasible;
                let mut y = vec![0.0; problem.constraints.len()];
                for (li, gi) in comp.constraint_ids.iter().enumerate() {
                    y[*gi] = local.certificate.as_ref().map_or(0.0, |c| c[li]);
                }
                certificate = Some(y);
                message = local.message.clone();
                primal_residual = local.primal_residual;
                dual_residual = local.dual_residual;
                duality_gap = local.duality_gap;
                break;
            }
            SdpStatus::NumericalFailure => {
                if status != SdpStatus::Infeasible {
                    status = SdpStatus::NumericalFailure;
                    message = local.message.clone();
                }
            }
            SdpStatus::Feasible => {
                for (lb, gb) in comp.block_ids.iter().enumerate() {
                    block_values[*gb] = local.block_values[lb].clone();
                }
                for (lf, gf) in comp.free_ids.iter().enumerate() {
                    free_values[*gf] = local.free_values[lf];
                }
            }
        }
        primal_residual = primal_residual.max(local.primal_residual);
        dual_residual = dual_residual.max(local.dual_residual);
        duality_gap = duality_gap.max(local.duality_gap);
    }

    let min_block_eigenvalue = if status == SdpStatus::Feasible {
        block_values
            .iter()
            .filter(|b| b.nrows() > 0)
            .map(|b| min_eig(b))
            .fold(f64::INFINITY, f64::min)
            .min(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    let min_block_eigenvalue = if min_block_eigenvalue.is_finite() {
        min_block_eigenvalue
    } else {
        0.0
    };

    Ok(SdpSolution {
        status,
        block_values,
        free_values,
        primal_residual,
        dual_residual,
        duality_gap,
        min_block_eigenvalue,
        iterations,
        infeasibility_certificate: certificate,
        message,
    })
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, b| a.min(*b))
}

/// One structurally independent sub-problem, with maps back to global ids.
struct Component {
    block_ids: Vec<usize>,
    free_ids: Vec<usize>,
    constraint_ids: Vec<usize>,
    problem: SdpProblem,
}

struct LocalOutcome {
    status: SdpStatus,
    block_values: Vec<DMatrix<f64>>,
    free_values: Vec<f64>,
    primal_residual: f64,
    dual_residual: f64,
    duality_gap: f64,
    iterations: usize,
    certificate: Option<Vec<f64>>,
    message: String,
}

/// Union-find split of constraints over shared blocks / free variables.
/// Void constraints (no coefficients) are dropped when their right-hand side
/// is negligible; otherwise they constitute a one-line Farkas certificate.
#[allow(clippy::type_complexity)]
fn split_components(
    problem: &SdpProblem,
    settings: &SolverSettings,
) -> Result<(Vec<Component>, Option<SdpSolution>), SdpSolution> {
    let nb = problem.block_dims.len();
    let nf = problem.num_free;
    let mut parent: Vec<usize> = (0..nb + nf).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = i;
        while parent[c] != c {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };

    for c in &problem.constraints {
        let mut first: Option<usize> = None;
        for e in &c.entries {
            match first {
                None => first = Some(e.block),
                Some(f) => union(&mut parent, f, e.block),
            }
        }
        for (i, _) in &c.free {
            let node = nb + i;
            match first {
                None => first = Some(node),
                Some(f) => union(&mut parent, f, node),
            }
        }
        if first.is_none() && c.rhs.abs() > settings.feas_tol {
            // 0 = rhs with rhs != 0: certificate y = e_i / rhs.
            let gi = problem
                .constraints
                .iter()
                .position(|cc| std::ptr::eq(cc, c))
                .unwrap_or(0);
            let mut y = vec![0.0; problem.constraints.len()];
            y[gi] = 1.0 / c.rhs;
            return Ok((
                Vec::new(),
                Some(SdpSolution {
                    status: SdpStatus::Infeasible,
                    block_values: problem
                        .block_dims
                        .iter()
                        .map(|&n| DMatrix::zeros(n, n))
                        .collect(),
                    free_values: vec![0.0; problem.num_free],
                    primal_residual: 0.0,
                    dual_residual: 0.0,
                    duality_gap: 0.0,
                    min_block_eigenvalue: 0.0,
                    iterations: 0,
                    infeasibility_certificate: Some(y),
                    message: format!(
                        "constraint {gi} has no variables but right-hand side {}",
                        c.rhs
                    ),
                }),
            ));
        }
    }

    // Group constraints by root.
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ci, c) in problem.constraints.iter().enumerate() {
        let node = if let Some(e) = c.entries.first() {
            e.block
        } else if let Some((i, _)) = c.free.first() {
            nb + i
        } else {
            continue; // void constraint with ~zero rhs
        };
        let root = find(&mut parent, node);
        groups.entry(root).or_default().push(ci);
    }

    let mut comps = Vec::new();
    for (_root, constraint_ids) in groups {
        let mut block_set: Vec<usize> = Vec::new();
        let mut free_set: Vec<usize> = Vec::new();
        for &ci in &constraint_ids {
            for e in &problem.constraints[ci].entries {
                if !block_set.contains(&e.block) {
                    block_set.push(e.block);
                }
            }
            for (i, _) in &problem.constraints[ci].free {
                if !free_set.contains(i) {
                    free_set.push(*i);
                }
            }
        }
        block_set.sort_unstable();
        free_set.sort_unstable();
        let bmap: BTreeMap<usize, usize> =
            block_set.iter().enumerate().map(|(l, g)| (*g, l)).collect();
        let fmap: BTreeMap<usize, usize> =
            free_set.iter().enumerate().map(|(l, g)| (*g, l)).collect();

        let mut local = SdpProblem::new(
            block_set.iter().map(|&g| problem.block_dims[g]).collect(),
            free_set.len(),
        );
        for &ci in &constraint_ids {
            let c = &problem.constraints[ci];
            local.constraints.push(Constraint {
                entries: c
                    .entries
                    .iter()
                    .map(|e| super::BlockEntry {
                        block: bmap[&e.block],
                        ..*e
                    })
                    .collect(),
                free: c.free.iter().map(|(i, v)| (fmap[i], *v)).collect(),
                rhs: c.rhs,
            });
        }
        local.objective = Objective {
            entries: problem
                .objective
                .entries
                .iter()
                .filter(|e| bmap.contains_key(&e.block))
                .map(|e| super::BlockEntry {
                    block: bmap[&e.block],
                    ..*e
                })
                .collect(),
            free: problem
                .objective
                .free
                .iter()
                .filter(|(i, _)| fmap.contains_key(i))
                .map(|(i, v)| (fmap[i], *v))
                .collect(),
        };
        comps.push(Component {
            block_ids: block_set,
            free_ids: free_set,
            constraint_ids,
            problem: local,
        });
    }
    Ok((comps, None))
}

fn solve_component(comp: &Component, settings: &SolverSettings) -> LocalOutcome {
    if comp.problem.block_dims.is_empty() {
        solve_linear_only(&comp.problem, settings)
    } else {
        hsd_solve(&comp.problem, settings)
    }
}

/// Pure linear equality system `Bu = b`: solved by least squares. The
/// residual direction doubles as an exact Farkas certificate when the system
/// is inconsistent (`B'r = 0`, `b'r = ||r||^2 > 0`).
fn solve_linear_only(p: &SdpProblem, settings: &SolverSettings) -> LocalOutcome {
    let m = p.constraints.len();
    let f = p.num_free;
    let mut bmat = DMatrix::zeros(m, f);
    let mut b = DVector::zeros(m);
    for (i, c) in p.constraints.iter().enumerate() {
        for (j, v) in &c.free {
            bmat[(i, *j)] = *v;
        }
        b[i] = c.rhs;
    }
    let svd = bmat.clone().svd(true, true);
    let u = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(f));
    let r = &b - &bmat * &u;
    let res = r.amax();
    let scale = 1.0 + b.amax();
    if res <= settings.feas_tol * scale {
        LocalOutcome {
            status: SdpStatus::Feasible,
            block_values: Vec::new(),
            free_values: u.iter().copied().collect(),
            primal_residual: res,
            dual_residual: 0.0,
            duality_gap: 0.0,
            iterations: 1,
            certificate: None,
            message: "linear subsystem".to_string(),
        }
    } else {
        let bty = b.dot(&r);
        let cert: Vec<f64> = r.iter().map(|v| v / bty).collect();
        LocalOutcome {
            status: SdpStatus::Infeasible,
            block_values: Vec::new(),
            free_values: vec![0.0; f],
            primal_residual: res,
            dual_residual: (bmat.transpose() * &r).amax() / bty.abs().max(1e-300),
            duality_gap: 0.0,
            iterations: 1,
            certificate: Some(cert),
            message: "inconsistent linear subsystem".to_string(),
        }
    }
}

struct Scaling {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    t: DMatrix<f64>,
    v: DVector<f64>,
}

fn hsd_solve(p: &SdpProblem, settings: &SolverSettings) -> LocalOutcome {
    let dims = p.block_dims.clone();
    let nblocks = dims.len();
    let m = p.constraints.len();
    let f = p.num_free;
    let nu: f64 = dims.iter().map(|&n| n as f64).sum();

    // Dense objective matrices and vectors.
    let cmats: Vec<DMatrix<f64>> = (0..nblocks)
        .map(|j| {
            let mut c = DMatrix::zeros(dims[j], dims[j]);
            for e in p.objective.entries.iter().filter(|e| e.block == j) {
                c[(e.row, e.col)] = e.coeff;
                c[(e.col, e.row)] = e.coeff;
            }
            c
        })
        .collect();
    let mut d = DVector::zeros(f);
    for (i, v) in &p.objective.free {
        d[*i] = *v;
    }
    let mut b = DVector::zeros(m);
    for (i, c) in p.constraints.iter().enumerate() {
        b[i] = c.rhs;
    }
    // Per-block sparse constraint views: (constraint, entries within block).
    let block_cons: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = (0..nblocks)
        .map(|j| {
            let mut v = Vec::new();
            for (ci, c) in p.constraints.iter().enumerate() {
                let es: Vec<(usize, usize, f64)> = c
                    .entries
                    .iter()
                    .filter(|e| e.block == j)
                    .map(|e| (e.row, e.col, e.coeff))
                    .collect();
                if !es.is_empty() {
                    v.push((ci, es));
                }
            }
            v
        })
        .collect();

    let sparse_dot = |entries: &[(usize, usize, f64)], mat: &DMatrix<f64>| -> f64 {
        entries
            .iter()
            .map(|&(r, c, v)| {
                let w = if r == c { 1.0 } else { 2.0 };
                v * w * mat[(r, c)]
            })
            .sum()
    };

    // a_apply: <A_i, mats> for all i.
    let a_apply = |mats: &[DMatrix<f64>]| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for j in 0..nblocks {
            for (ci, es) in &block_cons[j] {
                out[*ci] += sparse_dot(es, &mats[j]);
            }
        }
        out
    };
    // A*(y) per block.
    let a_star = |y: &DVector<f64>| -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for j in 0..nblocks {
            for (ci, es) in &block_cons[j] {
                let yi = y[*ci];
                if yi == 0.0 {
                    continue;
                }
                for &(r, c, v) in es {
                    out[j][(r, c)] += yi * v;
                    if r != c {
                        out[j][(c, r)] += yi * v;
                    }
                }
            }
        }
        out
    };
    let bt_apply = |y: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(f);
        for (ci, c) in p.constraints.iter().enumerate() {
            for (i, v) in &c.free {
                out[*i] += v * y[ci];
            }
        }
        out
    };
    let b_apply = |u: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (ci, c) in p.constraints.iter().enumerate() {
            for (i, v) in &c.free {
                out[ci] += v * u[*i];
            }
        }
        out
    };
    let frob = |a: &DMatrix<f64>, bm: &DMatrix<f64>| -> f64 { a.dot(bm) };

    // Iterates.
    let mut xs: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
    let mut ss: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
    let mut y = DVector::zeros(m);
    let mut u = DVector::zeros(f);
    let mut tau: f64 = 1.0;
    let mut kappa: f64 = 1.0;

    let fail = |iters: usize, msg: String| LocalOutcome {
        status: SdpStatus::NumericalFailure,
        block_values: dims.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
        free_values: vec![0.0; f],
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        duality_gap: f64::INFINITY,
        iterations: iters,
        certificate: None,
        message: msg,
    };

    for iter in 0..settings.max_iter {
        // Residuals of the homogeneous system.
        let ax = a_apply(&xs);
        let astar_y = a_star(&y);
        let g1 = &ax + b_apply(&u) - &b * tau;
        let g2: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| &cmats[j] * tau - &astar_y[j] - &ss[j])
            .collect();
        let g3 = &d * tau - bt_apply(&y);
        let cx: f64 = (0..nblocks).map(|j| frob(&cmats[j], &xs[j])).sum();
        let du = d.dot(&u);
        let by = b.dot(&y);
        let g4 = by - cx - du - kappa;
        let xs_dot: f64 = (0..nblocks).map(|j| frob(&xs[j], &ss[j])).sum();
        let mu = (xs_dot + tau * kappa) / (nu + 1.0);

        // Optimality test on the de-homogenized candidate.
        let pres = g1.amax() / tau;
        let dres = g2
            .iter()
            .map(|g| g.amax())
            .fold(0.0, f64::max)
            .max(g3.amax())
            / tau;
        let pobj = (cx + du) / tau;
        let dobj = by / tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if pres <= settings.feas_tol && dres <= settings.feas_tol && gap <= settings.gap_tol {
            let block_values: Vec<DMatrix<f64>> = xs
                .iter()
                .map(|x| {
                    let xv = x / tau;
                    (&xv + xv.transpose()).scale(0.5)
                })
                .collect();
            return LocalOutcome {
                status: SdpStatus::Feasible,
                free_values: (&u / tau).iter().copied().collect(),
                primal_residual: pres,
                dual_residual: dres,
                duality_gap: gap,
                iterations: iter,
                certificate: None,
                message: "optimal".to_string(),
                block_values,
            };
        }

        // Infeasibility test: Farkas ray y with A*(y) <= 0, B'y = 0, b'y = 1.
        if by > settings.feas_tol {
            let cert_res = (0..nblocks)
                .map(|j| (&astar_y[j] + &ss[j]).amax())
                .fold(0.0, f64::max)
                .max(bt_apply(&y).amax())
                / by;
            if cert_res <= settings.feas_tol {
                let cert: Vec<f64> = y.iter().map(|v| v / by).collect();
                return LocalOutcome {
                    status: SdpStatus::Infeasible,
                    block_values: dims.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
                    free_values: vec![0.0; f],
                    primal_residual: cert_res,
                    dual_residual: cert_res,
                    duality_gap: 0.0,
                    iterations: iter,
                    certificate: Some(cert),
                    message: "primal infeasibility certificate".to_string(),
                };
            }
        }
        if mu < 1e-18 || !mu.is_finite() {
            return fail(iter, format!("central path collapsed (mu = {mu:.3e})"));
        }

        // Nesterov-Todd scaling per block.
        let mut scalings: Vec<Scaling> = Vec::with_capacity(nblocks);
        for j in 0..nblocks {
            match nt_scaling(&xs[j], &ss[j]) {
                Some(s) => scalings.push(s),
                None => return fail(iter, format!("NT scaling failed on block {j}")),
            }
        }

        // Schur complement M = A(T A*(.) T), q = A(TCT), rho_c = <C,TCT>.
        let tct: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| &scalings[j].t * &cmats[j] * &scalings[j].t)
            .collect();
        let mut q = DVector::zeros(m);
        for j in 0..nblocks {
            for (ci, es) in &block_cons[j] {
                q[*ci] += sparse_dot(es, &tct[j]);
            }
        }
        let rho_c: f64 = (0..nblocks).map(|j| frob(&cmats[j], &tct[j])).sum();

        let mut kmat = DMatrix::zeros(m + f + 1, m + f + 1);
        for j in 0..nblocks {
            let t = &scalings[j].t;
            // Dense T A_k T per touching constraint, then sparse inner products.
            let tats: Vec<(usize, DMatrix<f64>)> = block_cons[j]
                .iter()
                .map(|(ci, es)| {
                    let n = dims[j];
                    let mut tat = DMatrix::zeros(n, n);
                    for &(r, c, v) in es {
                        let tr = t.column(r);
                        let tc = t.column(c);
                        if r == c {
                            tat += &(&tr * tc.transpose()) * v;
                        } else {
                            tat += &(&tr * tc.transpose()) * v;
                            tat += &(&tc * tr.transpose()) * v;
                        }
                    }
                    (*ci, tat)
                })
                .collect();
            for (ci, es) in &block_cons[j] {
                for (ck, tat) in &tats {
                    kmat[(*ci, *ck)] += sparse_dot(es, tat);
                }
            }
        }
        for i in 0..m {
            kmat[(i, i)] += STATIC_REG;
        }
        // Free-variable coupling and tau column/rows.
        for (ci, c) in p.constraints.iter().enumerate() {
            for (i, v) in &c.free {
                kmat[(ci, m + i)] = *v;
                kmat[(m + i, ci)] = -*v;
            }
        }
        for i in 0..f {
            kmat[(m + i, m + i)] -= STATIC_REG;
            kmat[(m + i, m + f)] = d[i];
            kmat[(m + f, m + i)] = -d[i];
        }
        for i in 0..m {
            let (qi, bi): (f64, f64) = (q[i], b[i]);
            kmat[(i, m + f)] = -(qi + bi);
            kmat[(m + f, i)] = bi - qi;
        }
        kmat[(m + f, m + f)] = rho_c + kappa / tau + STATIC_REG;

        let lu = nalgebra::linalg::LU::new(kmat);

        // Direction solve shared by predictor and corrector.
        let solve_dir = |r1: &DVector<f64>,
                         r2: &[DMatrix<f64>],
                         r3: &DVector<f64>,
                         r4: f64,
                         rhs_c: &[DMatrix<f64>],
                         rc_tau: f64|
         -> Option<Direction> {
            // W-tilde per block from the Lyapunov-diagonal solve, then RWR'.
            let mut rwr: Vec<DMatrix<f64>> = Vec::with_capacity(nblocks);
            let mut tr2t: Vec<DMatrix<f64>> = Vec::with_capacity(nblocks);
            for j in 0..nblocks {
                let sc = &scalings[j];
                let n = dims[j];
                let mut w = DMatrix::zeros(n, n);
                for a in 0..n {
                    for bb in 0..n {
                        w[(a, bb)] = 2.0 * rhs_c[j][(a, bb)] / (sc.v[a] + sc.v[bb]);
                    }
                }
                rwr.push(&sc.r * w * sc.r.transpose());
                tr2t.push(&sc.t * &r2[j] * &sc.t);
            }
            let mut rhs = DVector::zeros(m + f + 1);
            let a_rwr = a_apply(&rwr);
            let a_tr2t = a_apply(&tr2t);
            for i in 0..m {
                rhs[i] = r1[i] - a_rwr[i] - a_tr2t[i];
            }
            for i in 0..f {
                rhs[m + i] = r3[i];
            }
            let c_rwr: f64 = (0..nblocks).map(|j| frob(&cmats[j], &rwr[j])).sum();
            let c_tr2t: f64 = (0..nblocks).map(|j| frob(&cmats[j], &tr2t[j])).sum();
            rhs[m + f] = r4 + c_rwr + c_tr2t + rc_tau / tau;

            let sol = lu.solve(&rhs)?;
            let dy = DVector::from_iterator(m, (0..m).map(|i| sol[i]));
            let du_v = DVector::from_iterator(f, (0..f).map(|i| sol[m + i]));
            let dtau = sol[m + f];
            let astar_dy = a_star(&dy);
            let mut dss: Vec<DMatrix<f64>> = Vec::with_capacity(nblocks);
            let mut dxs: Vec<DMatrix<f64>> = Vec::with_capacity(nblocks);
            for j in 0..nblocks {
                let ds = -&astar_dy[j] + &cmats[j] * dtau - &r2[j];
                let dx = &rwr[j] - &scalings[j].t * &ds * &scalings[j].t;
                dss.push((&ds + ds.transpose()).scale(0.5));
                dxs.push((&dx + dx.transpose()).scale(0.5));
            }
            let dkappa = (rc_tau - kappa * dtau) / tau;
            Some(Direction {
                dxs,
                dss,
                dy,
                du: du_v,
                dtau,
                dkappa,
            })
        };

        // Predictor (affine) direction: full residual reduction, gamma = 0.
        let r1 = -&g1;
        let r2: Vec<DMatrix<f64>> = g2.iter().map(|g| -g).collect();
        let r3 = -&g3;
        let r4 = -g4;
        let rhs_c_aff: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| DMatrix::from_diagonal(&scalings[j].v.map(|v| -(v * v))))
            .collect();
        let aff = match solve_dir(&r1, &r2, &r3, r4, &rhs_c_aff, -tau * kappa) {
            Some(d) => d,
            None => return fail(iter, "KKT solve failed (affine)".to_string()),
        };
        let alpha_aff = max_step(&xs, &ss, tau, kappa, &aff, 1.0);

        // Centering parameter from the affine trial point.
        let mut dot_aff = 0.0;
        for j in 0..nblocks {
            dot_aff += frob(
                &(&xs[j] + &aff.dxs[j] * alpha_aff),
                &(&ss[j] + &aff.dss[j] * alpha_aff),
            );
        }
        let mu_aff = (dot_aff
            + (tau + alpha_aff * aff.dtau) * (kappa + alpha_aff * aff.dkappa))
            / (nu + 1.0);
        let gamma = ((mu_aff / mu).max(0.0).powi(3)).min(1.0);

        // Corrector: scaled second-order term sym(dX~ dS~).
        let rhs_c_comb: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| {
                let sc = &scalings[j];
                let dxt = &sc.r_inv * &aff.dxs[j] * sc.r_inv.transpose();
                let dst = sc.r.transpose() * &aff.dss[j] * &sc.r;
                let corr = (&dxt * &dst + &dst * &dxt).scale(0.5);
                let mut rhs = -corr;
                for a in 0..dims[j] {
                    rhs[(a, a)] += gamma * mu - sc.v[a] * sc.v[a];
                }
                rhs
            })
            .collect();
        let eta = 1.0 - gamma;
        let r1c = &r1 * eta;
        let r2c: Vec<DMatrix<f64>> = r2.iter().map(|g| g * eta).collect();
        let r3c = &r3 * eta;
        let r4c = r4 * eta;
        let rc_tau = gamma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let dir = match solve_dir(&r1c, &r2c, &r3c, r4c, &rhs_c_comb, rc_tau) {
            Some(d) => d,
            None => return fail(iter, "KKT solve failed (corrector)".to_string()),
        };
        let alpha = settings.step_frac * max_step(&xs, &ss, tau, kappa, &dir, 10.0);
        let alpha = alpha.min(1.0);
        if alpha < 1e-12 {
            return fail(iter, "step length collapsed".to_string());
        }

        for j in 0..nblocks {
            xs[j] += &dir.dxs[j] * alpha;
            ss[j] += &dir.dss[j] * alpha;
            xs[j] = (&xs[j] + xs[j].transpose()).scale(0.5);
            ss[j] = (&ss[j] + ss[j].transpose()).scale(0.5);
        }
        y += &dir.dy * alpha;
        u += &dir.du * alpha;
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
    }

    fail(
        settings.max_iter,
        "iteration limit reached without optimality or infeasibility certificate".to_string(),
    )
}

struct Direction {
    dxs: Vec<DMatrix<f64>>,
    dss: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    du: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Largest step keeping all PSD blocks and (tau, kappa) in the cone.
fn max_step(
    xs: &[DMatrix<f64>],
    ss: &[DMatrix<f64>],
    tau: f64,
    kappa: f64,
    dir: &Direction,
    cap: f64,
) -> f64 {
    let mut alpha = cap;
    for (x, dx) in xs.iter().zip(&dir.dxs) {
        alpha = alpha.min(psd_max_step(x, dx));
    }
    for (s, ds) in ss.iter().zip(&dir.dss) {
        alpha = alpha.min(psd_max_step(s, ds));
    }
    if dir.dtau < 0.0 {
        alpha = alpha.min(-tau / dir.dtau);
    }
    if dir.dkappa < 0.0 {
        alpha = alpha.min(-kappa / dir.dkappa);
    }
    alpha
}

fn psd_max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let chol = match cholesky_with_jitter(x) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    // W = L^-1 dX L^-T
    let z = l.solve_lower_triangular(dx).unwrap_or(DMatrix::zeros(n, n));
    let zt = z.transpose();
    let w = l
        .solve_lower_triangular(&zt)
        .unwrap_or(DMatrix::zeros(n, n))
        .transpose();
    let wsym = (&w + w.transpose()).scale(0.5);
    let lam_min = wsym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, b| a.min(*b));
    if lam_min >= -1e-14 {
        f64::INFINITY
    } else {
        -1.0 / lam_min
    }
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = nalgebra::linalg::Cholesky::new(m.clone()) {
        return Some(c);
    }
    let n = m.nrows();
    let scale = m.trace().abs().max(1.0) / n as f64;
    for jitter in [1e-14, 1e-12, 1e-10] {
        let mm = m + DMatrix::identity(n, n) * (jitter * scale);
        if let Some(c) = nalgebra::linalg::Cholesky::new(mm) {
            return Some(c);
        }
    }
    None
}

/// Nesterov-Todd scaling for one block: a factor `R` with
/// `R^-1 X R^-T = R^T S R = V = diag(v)`, `T = R R^T`.
fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let n = x.nrows();
    let chol = cholesky_with_jitter(x)?;
    let l = chol.l();
    let a = l.transpose() * s * &l;
    let a = (&a + a.transpose()).scale(0.5);
    let eig = a.symmetric_eigen();
    let mut lam = eig.eigenvalues.clone();
    for v in lam.iter_mut() {
        if *v < 1e-300 {
            return None;
        }
    }
    let q = &eig.eigenvectors;
    let lam_m4 = DMatrix::from_diagonal(&lam.map(|v| v.powf(-0.25)));
    let lam_p4 = DMatrix::from_diagonal(&lam.map(|v| v.powf(0.25)));
    let r = &l * q * &lam_m4;
    // R^-1 = lam^{1/4} Q^T L^-1
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))?;
    let r_inv = &lam_p4 * q.transpose() * &linv;
    let t = &r * r.transpose();
    let v = lam.map(|x| x.sqrt());
    Some(Scaling { r, r_inv, t, v })
}

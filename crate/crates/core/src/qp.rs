//! Simplex-constrained convex quadratic programming.
//!
//! Solves min αᵀRα − 2αᵀp subject to Σα = 1, α ≥ lo with a primal
//! active-set method. R is symmetric positive semidefinite (a Gram matrix of
//! basis samples), dimensions are tiny (five weights), and the optimality
//! contract is the projected-gradient (natural) residual, not the algorithm.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Lower bound standing in for the strict constraint α > 0.
pub const ALPHA_MIN: f64 = 1e-4;
/// Required natural-residual accuracy on the scale-normalized problem.
pub const KKT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("non-finite entries in QP data")]
    NonFinite,
    #[error("lower bound {lo} infeasible for dimension {n}")]
    InfeasibleBound { lo: f64, n: usize },
    #[error("active-set iteration budget exhausted (residual {residual:.3e})")]
    NotConverged { residual: f64 },
}

/// Project `v` onto {x : Σx = 1, x ≥ lo}. Sort-and-threshold algorithm on
/// the shifted nonnegative simplex.
pub fn project_to_simplex(v: &DVector<f64>, lo: f64) -> DVector<f64> {
    let n = v.len();
    let target = 1.0 - lo * n as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - lo).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - target) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    DVector::from_iterator(n, shifted.iter().map(|&y| (y - theta).max(0.0) + lo))
}

/// ∞-norm natural residual ‖α − Π(α − ∇q(α))‖ of the simplex QP at `alpha`,
/// measured after normalizing R and p to unit scale so the test is
/// meaningful for Gram matrices of any magnitude.
pub fn kkt_residual(r: &DMatrix<f64>, p: &DVector<f64>, alpha: &DVector<f64>, lo: f64) -> f64 {
    let scale = problem_scale(r, p);
    let grad = (r * alpha - p) * (2.0 / scale);
    let projected = project_to_simplex(&(alpha - grad), lo);
    (alpha - projected).amax()
}

fn problem_scale(r: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    r.amax().max(p.amax()).max(1e-12)
}

/// Minimize αᵀRα − 2αᵀp over the lower-bounded simplex.
///
/// Primal active-set iteration: start at the uniform feasible point, solve
/// the equality-constrained subproblem on the free variables, step to the
/// first blocking bound, and release the bound with the most negative
/// multiplier until the KKT conditions hold. Singular subproblems (rank
/// deficient R early in a trial) fall back to a small ridge, which selects
/// the minimum-norm spread over the free set.
pub fn solve_simplex_qp(
    r: &DMatrix<f64>,
    p: &DVector<f64>,
    lo: f64,
) -> Result<DVector<f64>, QpError> {
    let n = p.len();
    assert_eq!(r.nrows(), n);
    assert_eq!(r.ncols(), n);
    if r.iter().any(|x| !x.is_finite()) || p.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite);
    }
    if lo * n as f64 >= 1.0 {
        return Err(QpError::InfeasibleBound { lo, n });
    }

    // Work on the normalized, shifted problem: β = α − lo ≥ 0, Σβ = target.
    let scale = problem_scale(r, p);
    let rn = r / scale;
    let pn = p / scale;
    let target = 1.0 - lo * n as f64;
    let p_shift = &pn - &rn * DVector::from_element(n, lo);

    let mut beta = DVector::from_element(n, target / n as f64);
    let mut active = vec![false; n];
    let budget = 100 + 20 * n;
    for _ in 0..budget {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let (beta_free, lambda) = solve_equality_qp(&rn, &p_shift, &free, target)?;
        let mut candidate = DVector::zeros(n);
        for (k, &i) in free.iter().enumerate() {
            candidate[i] = beta_free[k];
        }

        if free.iter().all(|&i| candidate[i] >= -1e-12) {
            for &i in &free {
                candidate[i] = candidate[i].max(0.0);
            }
            beta = candidate;
            // Bound multipliers μ = ∇q + λ1 on the active set must be ≥ 0.
            let grad = (&rn * &beta - &p_shift) * 2.0;
            let violator = (0..n)
                .filter(|&i| active[i])
                .map(|i| (i, grad[i] + lambda))
                .filter(|&(_, mu)| mu < -1e-10)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            match violator {
                Some((i, _)) => active[i] = false,
                None => {
                    let alpha = beta.add_scalar(lo);
                    let residual = kkt_residual(r, p, &alpha, lo);
                    if residual <= KKT_TOLERANCE {
                        return Ok(alpha);
                    }
                    return Err(QpError::NotConverged { residual });
                }
            }
        } else {
            // Step toward the subproblem solution until a bound blocks.
            let mut step = 1.0f64;
            let mut blocking = None;
            for &i in &free {
                let d = candidate[i] - beta[i];
                if d < -1e-15 {
                    let t = beta[i] / -d;
                    if t < step {
                        step = t;
                        blocking = Some(i);
                    }
                }
            }
            let direction = &candidate - &beta;
            beta += direction * step;
            if let Some(i) = blocking {
                beta[i] = 0.0;
                active[i] = true;
            }
        }
    }
    let alpha = beta.add_scalar(lo);
    Err(QpError::NotConverged {
        residual: kkt_residual(r, p, &alpha, lo),
    })
}

/// Solve the equality-constrained subproblem on the free index set:
/// min βᵀRβ − 2βᵀp with Σβ = target, via the bordered KKT system. A ridge
/// is escalated if the system is singular.
fn solve_equality_qp(
    r: &DMatrix<f64>,
    p: &DVector<f64>,
    free: &[usize],
    target: f64,
) -> Result<(DVector<f64>, f64), QpError> {
    let m = free.len();
    let mut system = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            system[(a, b)] = 2.0 * r[(i, j)];
        }
        system[(a, m)] = 1.0;
        system[(m, a)] = 1.0;
        rhs[a] = 2.0 * p[i];
    }
    rhs[m] = target;

    let mut ridge = 0.0;
    loop {
        let mut regularized = system.clone();
        for a in 0..m {
            regularized[(a, a)] += 2.0 * ridge;
        }
        if let Some(solution) = regularized.lu().solve(&rhs) {
            let finite = solution.iter().all(|x| x.is_finite());
            if finite {
                let beta = solution.rows(0, m).into_owned();
                return Ok((beta, solution[m]));
            }
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
        if ridge > 1e-4 {
            return Err(QpError::NotConverged { residual: f64::NAN });
        }
    }
}

//! Linear solvers: preconditioned conjugate gradients for the large
//! symmetric positive (semi)definite systems, dense factorization for
//! oracle-scale problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric operator usable by the matrix-free solver.
///
/// `apply` takes `&mut self` so implementations can reuse internal scratch
/// buffers across iterations.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, x: &[f64], y: &mut [f64]);
    /// Operator diagonal, used by the Jacobi preconditioner.
    fn diagonal(&self) -> Vec<f64>;
}

/// Dense operator for tests and oracle-scale systems.
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let xv = DVector::from_column_slice(x);
        let mut yv = DVector::zeros(y.len());
        self.matrix.mul_to(&xv, &mut yv);
        y.copy_from_slice(yv.as_slice());
    }

    fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().as_slice().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Preconditioner::None),
            "jacobi" => Ok(Preconditioner::Jacobi),
            other => Err(Error::BadDescriptor(format!(
                "unknown preconditioner '{other}' (expected none|jacobi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual target, ||r|| / ||rhs||.
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            max_iterations: 50_000,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance < 1.0) {
            return Err(Error::BadDescriptor(format!(
                "rel_tolerance must lie in (0, 1), got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::BadDescriptor("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-solve report serialized into result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_rel: f64,
    pub converged: bool,
    /// Per-iteration decrements of the squared energy-norm error; CG
    /// guarantees every entry is non-negative in exact arithmetic.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub energy_decrements: Vec<f64>,
}

/// Preconditioned conjugate gradients.
///
/// A reached iteration cap is reported, not silently accepted; non-finite
/// residuals abort with a divergence error carrying the iteration index.
pub fn solve_cg<O: LinearOperator + ?Sized>(
    op: &mut O,
    rhs: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = op.dim();
    assert_eq!(rhs.len(), n, "rhs length must match operator dim");

    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                final_residual_rel: 0.0,
                converged: true,
                energy_decrements: Vec::new(),
            },
        ));
    }
    if !rhs_norm.is_finite() {
        return Err(Error::SolverDiverged { iteration: 0 });
    }

    let inv_diag: Option<Vec<f64>> = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(
            op.diagonal()
                .into_iter()
                .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        ),
    };

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = match &inv_diag {
        Some(m) => r.iter().zip(m).map(|(ri, mi)| ri * mi).collect(),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let rz_rhs = rz;
    let mut decrements = Vec::new();

    // Converge both the plain residual (the reported contract) and the
    // preconditioned one: penalty terms inflate the 2-norm of the rhs, and
    // the plain criterion alone can stop while the elastic rows are far
    // from solved.
    let mut iterations = 0;
    let mut res_rel = 1.0;
    let mut res_rel_precond = 1.0;
    while (res_rel > cfg.rel_tolerance || res_rel_precond > cfg.rel_tolerance)
        && iterations < cfg.max_iterations
    {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || !rz.is_finite() {
            return Err(Error::SolverDiverged {
                iteration: iterations,
            });
        }
        if pap <= 0.0 {
            // Semidefinite breakdown: stop with the current iterate.
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // ||e_k||_A^2 - ||e_{k+1}||_A^2 = alpha * (r_k, z_k)
        decrements.push(alpha * rz);
        match &inv_diag {
            Some(m) => {
                for i in 0..n {
                    z[i] = r[i] * m[i];
                }
            }
            None => z.copy_from_slice(&r),
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
        iterations += 1;
        res_rel = norm(&r) / rhs_norm;
        res_rel_precond = if rz_rhs > 0.0 {
            (rz.max(0.0) / rz_rhs).sqrt()
        } else {
            res_rel
        };
        if !res_rel.is_finite() {
            return Err(Error::SolverDiverged {
                iteration: iterations,
            });
        }
    }

    Ok((
        x,
        SolveReport {
            iterations,
            final_residual_rel: res_rel,
            converged: res_rel <= cfg.rel_tolerance && res_rel_precond <= cfg.rel_tolerance,
            energy_decrements: decrements,
        },
    ))
}

/// Dense direct solve via LU with full pivoting; rank deficiency is an
/// explicit error unless `least_squares` is requested, in which case the
/// SVD pseudoinverse solution is returned.
pub fn solve_dense(
    matrix: &DMatrix<f64>,
    rhs: &DVector<f64>,
    least_squares: bool,
) -> Result<DVector<f64>> {
    let n = matrix.nrows();
    assert_eq!(matrix.ncols(), n, "matrix must be square");
    assert_eq!(rhs.len(), n);
    let lu = matrix.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max_piv = diag.iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
    let rank = diag
        .iter()
        .filter(|d| d.abs() > 1e-14 * max_piv.max(1e-300))
        .count();
    if rank < n {
        if !least_squares {
            return Err(Error::RankDeficient { rank, dim: n });
        }
        let svd = matrix.clone().svd(true, true);
        return svd
            .solve(rhs, 1e-12 * max_piv.max(1e-300))
            .map_err(|e| Error::BadDescriptor(e.to_string()));
    }
    lu.solve(rhs).ok_or(Error::RankDeficient { rank, dim: n })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

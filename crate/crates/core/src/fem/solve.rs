//! Preconditioned Krylov solvers.
//!
//! Symmetric positive (semi)definite systems use conjugate gradients; when
//! constants lie in the kernel the iteration runs on the zero-sum subspace by
//! projecting the right-hand side, residuals and preconditioned residuals.
//! Nonsymmetric systems use BiCGStab. All reductions are sequential, so
//! results are bitwise reproducible.

use super::sparse::{CsrMatrix, SparseOperator};
use crate::error::{Error, Result};

/// Threshold for `|Σb| / (√n ‖b‖)` above which a singular system is rejected.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }
}

pub trait Preconditioner {
    /// `z = M⁻¹ r`
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal (Jacobi) preconditioner.
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(matrix: &CsrMatrix) -> Self {
        let inv_diag = matrix
            .diag()
            .into_iter()
            .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Jacobi { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Block-diagonal preconditioner with dense 3×3 blocks (node-interleaved
/// vector unknowns).
pub struct BlockJacobi3 {
    inv_blocks: Vec<[[f64; 3]; 3]>,
}

impl BlockJacobi3 {
    /// Inverts each block; singular blocks fall back to the identity.
    pub fn new(blocks: &[[[f64; 3]; 3]]) -> Self {
        let inv_blocks = blocks
            .iter()
            .map(|b| {
                let (det, inv) = super::mesh::invert(b, 3);
                if det.is_finite() && det.abs() > 1e-300 {
                    inv
                } else {
                    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
                }
            })
            .collect();
        BlockJacobi3 { inv_blocks }
    }
}

impl Preconditioner for BlockJacobi3 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for (i, b) in self.inv_blocks.iter().enumerate() {
            let ri = &r[3 * i..3 * i + 3];
            for k in 0..3 {
                z[3 * i + k] = b[k][0] * ri[0] + b[k][1] * ri[1] + b[k][2] * ri[2];
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Scaled defect `|Σb| / (√n ‖b‖)` of a right-hand side against the
/// constant kernel; zero for the zero vector.
pub fn compatibility_defect(b: &[f64]) -> f64 {
    let nb = norm(b);
    if nb == 0.0 {
        return 0.0;
    }
    b.iter().sum::<f64>().abs() / ((b.len() as f64).sqrt() * nb)
}

/// Preconditioned conjugate gradients, starting from the contents of `x`.
///
/// With `zero_mean` the iteration is confined to vectors with zero sum and
/// the right-hand side is projected first; the caller is responsible for
/// checking compatibility beforehand.
pub fn cg<A, P>(
    a: &A,
    precond: &P,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
    zero_mean: bool,
) -> Result<SolveReport>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = a.dim();
    let mut rhs = b.to_vec();
    if zero_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport::default());
    }
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&rhs) {
        *ri = bi - *ri;
    }
    if zero_mean {
        remove_mean(&mut r);
    }
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    if zero_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = norm(&r) / bnorm;
    let mut history = vec![res];
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter || !res.is_finite() {
            return Err(Error::LinearSolver {
                iterations: it,
                residual: res,
                history,
            });
        }
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            // breakdown: operator not positive on the search direction
            return Err(Error::LinearSolver {
                iterations: it,
                residual: res,
                history,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if zero_mean {
            remove_mean(&mut r);
        }
        precond.apply(&r, &mut z);
        if zero_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        res = norm(&r) / bnorm;
        history.push(res);
    }
    if zero_mean {
        remove_mean(x);
    }
    Ok(SolveReport {
        iterations: it,
        residual: res,
        history,
    })
}

/// Right-preconditioned BiCGStab, starting from the contents of `x`.
pub fn bicgstab<A, P>(a: &A, precond: &P, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveReport>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport::default());
    }
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let r_hat = r.clone();
    let mut res = norm(&r) / bnorm;
    let mut history = vec![res];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;
    let fail = |it, res, history| {
        Err(Error::LinearSolver {
            iterations: it,
            residual: res,
            history,
        })
    };
    while res > opts.tol {
        if it >= opts.max_iter || !res.is_finite() {
            return fail(it, res, history);
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return fail(it, res, history);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut y);
        a.apply(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return fail(it, res, history);
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        it += 1;
        let sres = norm(&s) / bnorm;
        if sres <= opts.tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            res = sres;
            history.push(res);
            break;
        }
        precond.apply(&s, &mut zs);
        a.apply(&zs, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        history.push(res);
    }
    Ok(SolveReport {
        iterations: it,
        residual: res,
        history,
    })
}

/// Solves `A x = b` for an assembled operator.
///
/// Symmetric operators use Jacobi-preconditioned CG, others BiCGStab. For
/// an operator with constant kernel, `zero_mean` must be set and `b` must be
/// orthogonal to constants; the result then has zero mean.
pub fn solve_linear(a: &SparseOperator, b: &[f64], tol: f64, zero_mean: bool) -> Result<Vec<f64>> {
    solve_linear_with(
        a,
        b,
        &SolverOptions {
            tol,
            ..Default::default()
        },
        zero_mean,
    )
    .map(|(x, _)| x)
}

/// As [`solve_linear`] but with explicit options, also returning the report.
pub fn solve_linear_with(
    a: &SparseOperator,
    b: &[f64],
    opts: &SolverOptions,
    zero_mean: bool,
) -> Result<(Vec<f64>, SolveReport)> {
    if b.len() != a.dim() {
        return Err(Error::Consistency(format!(
            "right-hand side has length {} but operator has dimension {}",
            b.len(),
            a.dim()
        )));
    }
    if a.constant_nullspace {
        if !zero_mean {
            return Err(Error::Config(
                "singular operator requires the zero-mean constraint".into(),
            ));
        }
        let defect = compatibility_defect(b);
        if defect > COMPATIBILITY_TOL {
            return Err(Error::Compatibility { defect });
        }
    }
    let mut x = vec![0.0; a.dim()];
    let pre = Jacobi::new(&a.matrix);
    let report = if a.symmetric {
        cg(a, &pre, b, &mut x, opts, zero_mean)?
    } else {
        let r = bicgstab(a, &pre, b, &mut x, opts)?;
        if zero_mean {
            remove_mean(&mut x);
        }
        r
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_stiffness, identity_tensor};
    use crate::fem::mesh::{BoundaryKind, StructuredMesh};

    #[test]
    fn identity_system() {
        let op = SparseOperator {
            matrix: CsrMatrix::identity(5),
            symmetric: true,
            constant_nullspace: false,
        };
        let b = [1.0, -2.0, 3.5, 0.0, 7.0];
        let x = solve_linear(&op, &b, 1e-12, false).unwrap();
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn singular_zero_rhs() {
        let mesh = StructuredMesh::new(2, 4, BoundaryKind::Periodic).unwrap();
        let a = assemble_stiffness(&mesh, |_| identity_tensor()).unwrap();
        let x = solve_linear(&a, &vec![0.0; mesh.n_dofs()], 1e-10, true).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incompatible_rhs_rejected() {
        let mesh = StructuredMesh::new(2, 4, BoundaryKind::Periodic).unwrap();
        let a = assemble_stiffness(&mesh, |_| identity_tensor()).unwrap();
        let b = vec![1.0; mesh.n_dofs()];
        assert!(matches!(
            solve_linear(&a, &b, 1e-10, true),
            Err(Error::Compatibility { .. })
        ));
        let mut c = vec![0.0; mesh.n_dofs()];
        c[0] = 1.0;
        c[1] = -1.0;
        assert!(matches!(solve_linear(&a, &c, 1e-10, false), Err(Error::Config(_))));
    }

    #[test]
    fn bicgstab_nonsymmetric() {
        // convection-like tridiagonal system
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -2.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let op = SparseOperator {
            matrix: CsrMatrix::from_triplets(n, n, t),
            symmetric: false,
            constant_nullspace: false,
        };
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = op.apply(&xs);
        let x = solve_linear(&op, &b, 1e-12, false).unwrap();
        for (a, e) in x.iter().zip(&xs) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn iteration_cap_reports_history() {
        let mesh = StructuredMesh::new(2, 16, BoundaryKind::Periodic).unwrap();
        let a = assemble_stiffness(&mesh, |_| identity_tensor()).unwrap();
        let mut b: Vec<f64> = (0..mesh.n_dofs()).map(|i| ((i * 7) % 11) as f64).collect();
        remove_mean(&mut b);
        let opts = SolverOptions {
            tol: 1e-14,
            max_iter: 3,
        };
        match solve_linear_with(&a, &b, &opts, true) {
            Err(Error::LinearSolver {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

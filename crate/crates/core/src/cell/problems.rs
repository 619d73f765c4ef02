//! First- and second-order cell problems and homogenized coefficients.
//!
//! All cell problems share the periodic stiffness `K` of `−div(a∇·)`. Each
//! is solved in weak form with divergence sources integrated by parts, and
//! every right-hand side is checked for orthogonality to constants before
//! the singular solve. Averages use the same degree-2 quadrature as the load
//! vectors so that discrete sources sum to zero exactly.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use super::coeffs::PeriodicCoefficientSet;
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_gradient_load, assemble_load, assemble_stiffness, Quadrature};
use crate::fem::solve::{compatibility_defect, solve_linear_with, SolverOptions, COMPATIBILITY_TOL};
use crate::fem::{BoundaryKind, NodalVectorField, SparseOperator, StructuredMesh};

/// Default cell resolution per side.
pub fn default_cell_n(dim: usize) -> usize {
    if dim == 2 {
        128
    } else {
        32
    }
}

/// Solutions of the cell problems on a periodic cell mesh.
///
/// Multi-index fields are stored as multi-component fields: `chi` has `dim`
/// components, `theta` and `lambda` have `dim²` with `(i, j)` at `i*dim + j`.
#[derive(Clone, Debug)]
pub struct CellSolutions {
    pub mesh: Arc<StructuredMesh>,
    pub chi: NodalVectorField,
    pub ustar: NodalVectorField,
    pub second: Option<SecondOrderCell>,
    coeff_tag: String,
}

#[derive(Clone, Debug)]
pub struct SecondOrderCell {
    pub theta: NodalVectorField,
    pub rho: NodalVectorField,
    pub lambda: NodalVectorField,
    pub kappa: NodalVectorField,
    /// Only present in two dimensions.
    pub beta: Option<NodalVectorField>,
}

/// Cell averages entering the homogenized equation.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogenizedCoefficients {
    pub dim: usize,
    pub a0: [[f64; 3]; 3],
    pub mu0: f64,
    pub k0: f64,
    pub m0: f64,
    /// `∫ μ M_s`
    pub mt0: f64,
    pub hd0: [[f64; 3]; 3],
}

impl HomogenizedCoefficients {
    /// Flat `key value` listing with 1-based tensor indices.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let _ = writeln!(s, "a0_{}{} {:.16e}", i + 1, j + 1, self.a0[i][j]);
            }
        }
        let _ = writeln!(s, "mu0 {:.16e}", self.mu0);
        let _ = writeln!(s, "K0 {:.16e}", self.k0);
        let _ = writeln!(s, "M0 {:.16e}", self.m0);
        let _ = writeln!(s, "Mt0 {:.16e}", self.mt0);
        for i in 0..d {
            for j in 0..d {
                let _ = writeln!(s, "Hd0_{}{} {:.16e}", i + 1, j + 1, self.hd0[i][j]);
            }
        }
        s
    }

    /// Sorted eigenvalues of the leading block of `a0` (Jacobi rotations).
    pub fn a0_eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.a0, self.dim)
    }
}

/// Shared state for a family of cell solves.
pub struct CellSolver<'a> {
    coeffs: &'a PeriodicCoefficientSet,
    mesh: Arc<StructuredMesh>,
    stiffness: SparseOperator,
    /// exchange coefficient at element centroids
    a_elem: Vec<f64>,
    quad: Quadrature,
    opts: SolverOptions,
}

impl<'a> CellSolver<'a> {
    pub fn new(coeffs: &'a PeriodicCoefficientSet, cell_n: usize) -> Result<Self> {
        coeffs.validate()?;
        let mesh = Arc::new(StructuredMesh::new(coeffs.dim, cell_n, BoundaryKind::Periodic)?);
        let stiffness = assemble_stiffness(&mesh, |y| coeffs.a(y))?;
        let a_elem = (0..mesh.n_elements())
            .map(|e| coeffs.a_scalar(&mesh.centroid(e)))
            .collect();
        Ok(CellSolver {
            coeffs,
            quad: Quadrature::degree2(coeffs.dim),
            mesh,
            stiffness,
            a_elem,
            opts: SolverOptions {
                tol: 1e-10,
                max_iter: 20_000,
            },
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    /// Typical load-vector norm for an O(1) source; used to recognise
    /// right-hand sides that vanish up to round-off.
    fn load_scale(&self) -> f64 {
        let n = self.mesh.n_dofs() as f64;
        let (_, amax) = self.coeffs.a_bounds();
        n.sqrt() * amax.max(1.0) / n
    }

    /// Solves `K x = b` for a named problem after the solvability check.
    fn solve(&self, name: &str, b: Vec<f64>) -> Result<Vec<f64>> {
        let n = b.len();
        let bn = crate::fem::solve::norm(&b);
        if bn <= 1e-13 * self.load_scale() {
            return Ok(vec![0.0; n]);
        }
        let defect = compatibility_defect(&b);
        if defect > COMPATIBILITY_TOL {
            return Err(Error::Solvability {
                problem: name.to_string(),
                defect,
            });
        }
        let (x, report) = solve_linear_with(&self.stiffness, &b, &self.opts, true)?;
        log::debug!("cell problem {name}: {} CG iterations", report.iterations);
        Ok(x)
    }

    fn average<F: Fn(&[f64; 3]) -> f64 + Sync>(&self, f: F) -> f64 {
        crate::fem::integrate(&self.mesh, &self.quad, |_, y| f(y))
    }

    pub fn chi(&self) -> Result<NodalVectorField> {
        let d = self.coeffs.dim;
        let comps: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|j| {
                // K χ_j = −∫ a e_j · ∇v
                let b = assemble_gradient_load(&self.mesh, |e| {
                    let mut g = [0.0; 3];
                    g[j] = -self.a_elem[e];
                    g
                });
                self.solve(&format!("chi_{}", j + 1), b)
            })
            .collect::<Result<_>>()?;
        NodalVectorField::from_components(self.mesh.clone(), &comps)
    }

    pub fn ustar(&self) -> Result<NodalVectorField> {
        let m0 = self.average(|y| self.coeffs.ms(y));
        // K U* = ∫ (M_s − M⁰) v
        let b = assemble_load(&self.mesh, &self.quad, |_, y| self.coeffs.ms(y) - m0);
        let scale = crate::fem::solve::norm(&assemble_load(&self.mesh, &self.quad, |_, y| self.coeffs.ms(y).abs()));
        if self.coeffs.ms.is_constant() || crate::fem::solve::norm(&b) <= 1e-12 * scale {
            return NodalVectorField::scalar(self.mesh.clone(), vec![0.0; b.len()]);
        }
        NodalVectorField::scalar(self.mesh.clone(), self.solve("U*", b)?)
    }

    pub fn first_order(&self) -> Result<CellSolutions> {
        Ok(CellSolutions {
            mesh: self.mesh.clone(),
            chi: self.chi()?,
            ustar: self.ustar()?,
            second: None,
            coeff_tag: format!("{:?}", self.coeffs),
        })
    }

    pub fn homogenize(&self, sol: &CellSolutions) -> Result<HomogenizedCoefficients> {
        check_tag(self.coeffs, sol)?;
        let d = self.coeffs.dim;
        let mut a0 = [[0.0; 3]; 3];
        let mut hd0 = [[0.0; 3]; 3];
        let c = self.coeffs;
        for e in 0..self.mesh.n_elements() {
            let vol = self.mesh.volume(e);
            let gchi = sol.chi.element_gradient(e);
            let gu = sol.ustar.element_gradient(e)[0];
            // ∫_T ∂_i μ by the degree-2 rule
            let mut dmu = [0.0; 3];
            for (p, w) in self.quad.points.iter().zip(&self.quad.weights) {
                let g = c.grad_mu(&self.mesh.map_point(e, p));
                for i in 0..d {
                    dmu[i] += w * g[i];
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    a0[i][j] += vol * self.a_elem[e] * (delta + gchi[j][i]);
                    hd0[i][j] -= vol * dmu[i] * gu[j];
                }
            }
        }
        Ok(HomogenizedCoefficients {
            dim: d,
            a0,
            mu0: self.average(|y| c.mu(y)),
            k0: self.average(|y| c.k(y)),
            m0: self.average(|y| c.ms(y)),
            mt0: self.average(|y| c.mu(y) * c.ms(y)),
            hd0,
        })
    }

    /// Energy form `∫ a(∇χ_j + e_j)·(∇χ_i + e_i)` of the effective tensor.
    pub fn energy_a0(&self, sol: &CellSolutions) -> [[f64; 3]; 3] {
        let d = self.coeffs.dim;
        let mut out = [[0.0; 3]; 3];
        for e in 0..self.mesh.n_elements() {
            let g = sol.chi.element_gradient(e);
            let vol = self.mesh.volume(e) * self.a_elem[e];
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        let ti = g[i][k] + if k == i { 1.0 } else { 0.0 };
                        let tj = g[j][k] + if k == j { 1.0 } else { 0.0 };
                        s += ti * tj;
                    }
                    out[i][j] += vol * s;
                }
            }
        }
        out
    }

    /// Right-hand side of the `θ_ij` problem:
    /// `K θ = −(∫ g v + ∫ a χ_j ∂_i v)` with
    /// `g = a⁰_ij − a(δ_ij + ∂_i χ_j)`.
    pub fn theta_rhs(&self, sol: &CellSolutions, homog: &HomogenizedCoefficients, i: usize, j: usize) -> Vec<f64> {
        let d = self.coeffs.dim;
        let mesh = &self.mesh;
        let mut b = vec![0.0; mesh.n_dofs()];
        let share = 1.0 / (d + 1) as f64;
        for e in 0..mesh.n_elements() {
            let vol = mesh.volume(e);
            let a = self.a_elem[e];
            let gchi = sol.chi.element_gradient(e);
            let delta = if i == j { 1.0 } else { 0.0 };
            let g = homog.a0[i][j] - a * (delta + gchi[j][i]);
            let dofs = mesh.element_dofs(e);
            let chi_c: f64 = dofs[..=d].iter().map(|&n| sol.chi.at(n)[j]).sum::<f64>() * share;
            let grads = mesh.basis_gradients(e);
            for k in 0..=d {
                b[dofs[k]] -= vol * (g * share + a * chi_c * grads[k][i]);
            }
        }
        b
    }

    /// Right-hand side of the `Λ_ij` problem:
    /// `K Λ = ∫ ∂_j U* (∂_i μ v + μ ∂_i v) + H⁰_ij ∫ v`.
    pub fn lambda_rhs(&self, sol: &CellSolutions, homog: &HomogenizedCoefficients, i: usize, j: usize) -> Vec<f64> {
        let d = self.coeffs.dim;
        let mesh = &self.mesh;
        let c = self.coeffs;
        let mut b = vec![0.0; mesh.n_dofs()];
        for e in 0..mesh.n_elements() {
            let vol = mesh.volume(e);
            let du = sol.ustar.element_gradient(e)[0][j];
            let dofs = mesh.element_dofs(e);
            let grads = mesh.basis_gradients(e);
            for (p, w) in self.quad.points.iter().zip(&self.quad.weights) {
                let y = mesh.map_point(e, p);
                let dmu = c.grad_mu(&y)[i];
                let mu = c.mu(&y);
                for k in 0..=d {
                    b[dofs[k]] += vol * w * (du * (dmu * p[k] + mu * grads[k][i]) + homog.hd0[i][j] * p[k]);
                }
            }
        }
        b
    }

    /// Load `−∫ (f − f̄) v` for the scalar second-order problems.
    fn mean_free_rhs<F: Fn(&[f64; 3]) -> f64>(&self, f: F, mean: f64) -> Vec<f64> {
        assemble_load(&self.mesh, &self.quad, |_, y| -(f(y) - mean))
    }

    pub fn second_order(&self, sol: &CellSolutions, homog: &HomogenizedCoefficients) -> Result<SecondOrderCell> {
        check_tag(self.coeffs, sol)?;
        let d = self.coeffs.dim;
        let c = self.coeffs;
        // problem list: θ_ij, Λ_ij, ρ, κ, β
        let mut jobs: Vec<(String, Box<dyn Fn() -> Vec<f64> + Send + Sync + '_>)> = Vec::new();
        for i in 0..d {
            for j in 0..d {
                jobs.push((
                    format!("theta_{}{}", i + 1, j + 1),
                    Box::new(move || self.theta_rhs(sol, homog, i, j)),
                ));
            }
        }
        for i in 0..d {
            for j in 0..d {
                jobs.push((
                    format!("Lambda_{}{}", i + 1, j + 1),
                    Box::new(move || self.lambda_rhs(sol, homog, i, j)),
                ));
            }
        }
        jobs.push((
            "rho".into(),
            Box::new(move || self.mean_free_rhs(|y| c.mu(y), homog.mu0)),
        ));
        jobs.push((
            "kappa".into(),
            Box::new(move || self.mean_free_rhs(|y| c.k(y), homog.k0)),
        ));
        if d == 2 {
            jobs.push((
                "beta".into(),
                Box::new(move || self.mean_free_rhs(|y| c.mu(y) * c.ms(y), homog.mt0)),
            ));
        }
        let mut results: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|(name, rhs)| self.solve(name, rhs()))
            .collect::<Result<_>>()?;
        let m = &self.mesh;
        let beta = if d == 2 {
            Some(NodalVectorField::scalar(m.clone(), results.pop().unwrap())?)
        } else {
            None
        };
        let kappa = NodalVectorField::scalar(m.clone(), results.pop().unwrap())?;
        let rho = NodalVectorField::scalar(m.clone(), results.pop().unwrap())?;
        let lambda = NodalVectorField::from_components(m.clone(), &results[d * d..])?;
        let theta = NodalVectorField::from_components(m.clone(), &results[..d * d])?;
        Ok(SecondOrderCell {
            theta,
            rho,
            lambda,
            kappa,
            beta,
        })
    }
}

fn check_tag(coeffs: &PeriodicCoefficientSet, sol: &CellSolutions) -> Result<()> {
    if sol.coeff_tag != format!("{coeffs:?}") || sol.mesh.dim() != coeffs.dim {
        return Err(Error::Consistency(
            "cell solutions were computed for different coefficients".into(),
        ));
    }
    Ok(())
}

/// First-order correctors `χ_j` on an `N^dim` periodic cell mesh.
pub fn solve_chi(coeffs: &PeriodicCoefficientSet, cell_n: usize) -> Result<NodalVectorField> {
    CellSolver::new(coeffs, cell_n)?.chi()
}

/// Stray-field cell potential `U*`.
pub fn solve_ustar(coeffs: &PeriodicCoefficientSet, cell_n: usize) -> Result<NodalVectorField> {
    CellSolver::new(coeffs, cell_n)?.ustar()
}

pub fn homogenize(coeffs: &PeriodicCoefficientSet, sol: &CellSolutions) -> Result<HomogenizedCoefficients> {
    CellSolver::new(coeffs, sol.mesh.cells())?.homogenize(sol)
}

pub fn solve_second_order(
    coeffs: &PeriodicCoefficientSet,
    sol: &CellSolutions,
    homog: &HomogenizedCoefficients,
) -> Result<SecondOrderCell> {
    CellSolver::new(coeffs, sol.mesh.cells())?.second_order(sol, homog)
}

/// Runs every cell problem once and returns the full solution set.
pub fn solve_all(
    coeffs: &PeriodicCoefficientSet,
    cell_n: usize,
    second: bool,
) -> Result<(CellSolutions, HomogenizedCoefficients)> {
    let solver = CellSolver::new(coeffs, cell_n)?;
    let mut sol = solver.first_order()?;
    let homog = solver.homogenize(&sol)?;
    if second {
        sol.second = Some(solver.second_order(&sol, &homog)?);
    }
    Ok((sol, homog))
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &[[f64; 3]; 3], dim: usize) -> Vec<f64> {
    let mut a = *m;
    for _ in 0..50 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in p + 1..dim {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..dim).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_known_matrix() {
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let ev = symmetric_eigenvalues(&m, 3);
        for (a, b) in ev.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(symmetric_eigenvalues(&m, 2).len(), 2);
    }

    #[test]
    fn kv_output_has_all_keys() {
        let h = HomogenizedCoefficients {
            dim: 2,
            a0: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]],
            mu0: 1.0,
            k0: 0.0,
            m0: 1.0,
            mt0: 1.0,
            hd0: [[0.0; 3]; 3],
        };
        let s = h.to_kv_string();
        for key in [
            "a0_11", "a0_12", "a0_21", "a0_22", "mu0", "K0", "M0", "Mt0", "Hd0_11", "Hd0_22",
        ] {
            assert!(s.lines().any(|l| l.starts_with(&format!("{key} "))), "{key}");
        }
    }
}

//! Correctors and the two-scale approximation `m₀ + εm₁ + ε²m₂`.

use std::sync::Arc;

use crate::cell::{CellSolutions, HomogenizedCoefficients, PeriodicCoefficientSet};
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_gradient_load, assemble_stiffness};
use crate::fem::solve::{solve_linear_with, SolverOptions};
use crate::fem::{BoundaryKind, NodalVectorField, StructuredMesh};
use crate::llg::Terms;

/// Position in the unit cell of the fast variable `y = x/ε`, unwrapped.
pub fn cell_point(x: &[f64; 3], n_periods: usize) -> [f64; 3] {
    let s = n_periods as f64;
    [s * x[0], s * x[1], s * x[2]]
}

/// Boundary-adapted corrector `Φ^ε` of a Neumann problem.
#[derive(Clone, Debug)]
pub struct NeumannCorrector {
    /// `Φ_i`, one component per space direction.
    pub phi: NodalVectorField,
    /// `ψ_i = Φ_i − x_i`, shifted to integral mean zero.
    pub psi: NodalVectorField,
    pub n_periods: usize,
    /// Constants subtracted from the raw solutions to reach zero mean.
    pub shift: Vec<f64>,
}

/// Solves `∫a^ε∇Φ_i·∇v = ∫a⁰e_i·∇v` for every `v`.
///
/// The unknown is `ψ_i = Φ_i − x_i`, for which the equation reads
/// `∫a^ε∇ψ_i·∇v = ∫(a⁰ − a^ε)e_i·∇v`.
pub fn neumann_corrector(
    mesh: Arc<StructuredMesh>,
    coeffs: &PeriodicCoefficientSet,
    homog: &HomogenizedCoefficients,
    n_periods: usize,
) -> Result<NeumannCorrector> {
    if mesh.bc() != BoundaryKind::Neumann {
        return Err(Error::Config("the Neumann corrector needs a Neumann mesh".into()));
    }
    if n_periods == 0 {
        return Err(Error::Config("n_periods must be at least 1".into()));
    }
    let d = mesh.dim();
    let a_elem: Vec<f64> = (0..mesh.n_elements())
        .map(|e| coeffs.a_scalar(&cell_point(&mesh.centroid(e), n_periods)))
        .collect();
    let k = assemble_stiffness(&mesh, |x| coeffs.a(&cell_point(x, n_periods)))?;
    let weights = mesh.lumped_weights();
    let opts = SolverOptions {
        tol: 1e-11,
        max_iter: 20 * mesh.n_dofs().max(100),
    };
    let mut psi = Vec::with_capacity(d);
    let mut phi = Vec::with_capacity(d);
    let mut shift = Vec::with_capacity(d);
    for i in 0..d {
        let b = assemble_gradient_load(&mesh, |e| {
            let mut g = [0.0; 3];
            for (r, gr) in g.iter_mut().enumerate().take(d) {
                *gr = homog.a0[r][i] - if r == i { a_elem[e] } else { 0.0 };
            }
            g
        });
        let (mut p, _) = solve_linear_with(&k, &b, &opts, true)?;
        let mean = p.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / mesh.total_volume();
        p.iter_mut().for_each(|v| *v -= mean);
        shift.push(mean);
        phi.push((0..p.len()).map(|dof| p[dof] + mesh.dof_coords(dof)[i]).collect());
        psi.push(p);
    }
    Ok(NeumannCorrector {
        phi: NodalVectorField::from_components(mesh.clone(), &phi)?,
        psi: NodalVectorField::from_components(mesh, &psi)?,
        n_periods,
        shift,
    })
}

/// Recovered nodal gradient of a 3-vector field as `g[c][k] = ∂_k m_c`.
pub fn nodal_gradients(m: &NodalVectorField) -> Vec<[[f64; 3]; 3]> {
    let d = m.mesh().dim();
    let g = m.recover_gradient();
    (0..m.n_dofs())
        .map(|dof| {
            let v = g.at(dof);
            let mut out = [[0.0; 3]; 3];
            for (c, row) in out.iter_mut().enumerate().take(m.components().min(3)) {
                row[..d].copy_from_slice(&v[c * d..c * d + d]);
            }
            out
        })
        .collect()
}

/// Second derivatives `h[c][i][j] = ∂_i∂_j m_c` by recovering the recovered
/// gradient, symmetrized in `(i, j)`.
pub fn nodal_hessians(m: &NodalVectorField) -> Result<Vec<[[[f64; 3]; 3]; 3]>> {
    let mesh = m.mesh().clone();
    let d = mesh.dim();
    let g = m.recover_gradient();
    let mut out = vec![[[[0.0; 3]; 3]; 3]; m.n_dofs()];
    for c in 0..m.components().min(3) {
        let comps: Vec<Vec<f64>> = (0..d).map(|k| g.component(c * d + k)).collect();
        let gc = NodalVectorField::from_components(mesh.clone(), &comps)?.recover_gradient();
        for (dof, h) in out.iter_mut().enumerate() {
            let v = gc.at(dof);
            for i in 0..d {
                for j in 0..d {
                    h[c][i][j] = 0.5 * (v[j * d + i] + v[i * d + j]);
                }
            }
        }
    }
    Ok(out)
}

/// Values of a cell field at `x/ε` for every dof of `mesh`.
fn sample_cell_field(field: &NodalVectorField, mesh: &StructuredMesh, n_periods: usize) -> Result<Vec<[f64; 9]>> {
    (0..mesh.n_dofs())
        .map(|dof| field.value_at(&cell_point(&mesh.dof_coords(dof), n_periods), true))
        .collect()
}

/// First-order corrector `m₁ = Σ_j χ_j(x/ε) ∂_j m₀(x)` (without the factor ε).
pub fn first_order(m0: &NodalVectorField, chi: &NodalVectorField, n_periods: usize) -> Result<NodalVectorField> {
    let mesh = m0.mesh().clone();
    let d = mesh.dim();
    if chi.components() != d || chi.mesh().dim() != d {
        return Err(Error::Consistency(
            "corrector does not match the field dimension".into(),
        ));
    }
    let grads = nodal_gradients(m0);
    let chis = sample_cell_field(chi, &mesh, n_periods)?;
    let mut values = vec![0.0; 3 * mesh.n_dofs()];
    for dof in 0..mesh.n_dofs() {
        for c in 0..3 {
            values[3 * dof + c] = (0..d).map(|j| chis[dof][j] * grads[dof][c][j]).sum();
        }
    }
    NodalVectorField::new(mesh, 3, values)
}

/// Neumann corrector term `(Φ^ε − x)·∇m₀`; already carries the ε scale.
pub fn neumann_first_order(m0: &NodalVectorField, corrector: &NeumannCorrector) -> Result<NodalVectorField> {
    m0.check_compatible(&NodalVectorField::zeros(corrector.psi.mesh().clone(), 3))?;
    let d = m0.mesh().dim();
    let grads = nodal_gradients(m0);
    let mut values = vec![0.0; 3 * m0.n_dofs()];
    for dof in 0..m0.n_dofs() {
        let psi = corrector.psi.at(dof);
        for c in 0..3 {
            values[3 * dof + c] = (0..d).map(|j| psi[j] * grads[dof][c][j]).sum();
        }
    }
    NodalVectorField::new(m0.mesh().clone(), 3, values)
}

/// Second-order corrector
///
/// ```text
/// m₂ = Σθ_ij ∂_i∂_j m₀ + (Σ(θ_ij − ½χ_iχ_j) ∂_i m₀·∂_j m₀) m₀ + (I − m₀⊗m₀) T_low
/// ```
///
/// which satisfies `m₀·m₂ = −½|m₁|²` for unit `m₀`. `T_low` collects
/// `−κ(m₀·u)u`, `β(m₀·e₃)e₃` and `m₀·Λ` (2D stray), and `U* h_a` (Zeeman).
/// The term `ρ∇U₀` needs the whole-space stray potential and is dropped.
pub fn second_order(
    m0: &NodalVectorField,
    cell: &CellSolutions,
    coeffs: &PeriodicCoefficientSet,
    n_periods: usize,
    terms: Terms,
) -> Result<NodalVectorField> {
    let second = cell
        .second
        .as_ref()
        .ok_or_else(|| Error::Config("second-order corrector needs the second-order cell solutions".into()))?;
    let mesh = m0.mesh().clone();
    let d = mesh.dim();
    if cell.mesh.dim() != d {
        return Err(Error::Consistency("cell and field dimensions differ".into()));
    }
    let grads = nodal_gradients(m0);
    let hess = nodal_hessians(m0)?;
    let chi = sample_cell_field(&cell.chi, &mesh, n_periods)?;
    let theta = sample_cell_field(&second.theta, &mesh, n_periods)?;
    let kappa = sample_cell_field(&second.kappa, &mesh, n_periods)?;
    let lambda = sample_cell_field(&second.lambda, &mesh, n_periods)?;
    let beta = match &second.beta {
        Some(b) if terms.stray2d => Some(sample_cell_field(b, &mesh, n_periods)?),
        _ => None,
    };
    let ustar = sample_cell_field(&cell.ustar, &mesh, n_periods)?;
    let u = coeffs.easy_axis;
    let ha = coeffs.applied_field;
    let mut values = vec![0.0; 3 * mesh.n_dofs()];
    for dof in 0..mesh.n_dofs() {
        let m = m0.vec3(dof);
        let g = &grads[dof];
        let mut out = [0.0; 3];
        let mut radial = 0.0;
        for i in 0..d {
            for j in 0..d {
                let th = theta[dof][i * d + j];
                for (c, o) in out.iter_mut().enumerate() {
                    *o += th * hess[dof][c][i][j];
                }
                let gij: f64 = (0..3).map(|c| g[c][i] * g[c][j]).sum();
                radial += (th - 0.5 * chi[dof][i] * chi[dof][j]) * gij;
            }
        }
        let mut low = [0.0; 3];
        if terms.anisotropy {
            let mu: f64 = (0..3).map(|c| m[c] * u[c]).sum();
            for c in 0..3 {
                low[c] -= kappa[dof][0] * mu * u[c];
            }
        }
        if let Some(b) = &beta {
            low[2] += b[dof][0] * m[2];
        }
        if terms.stray2d {
            for j in 0..d {
                low[j] += (0..d).map(|i| m[i] * lambda[dof][i * d + j]).sum::<f64>();
            }
        }
        if terms.zeeman {
            for c in 0..3 {
                low[c] += ustar[dof][0] * ha[c];
            }
        }
        let ml: f64 = (0..3).map(|c| m[c] * low[c]).sum();
        for c in 0..3 {
            values[3 * dof + c] = out[c] + radial * m[c] + low[c] - ml * m[c];
        }
    }
    NodalVectorField::new(mesh, 3, values)
}

/// Truncated two-scale sum `m₀ + εm₁ + ε²m₂` up to `order`.
pub fn assemble(
    m0: &NodalVectorField,
    m1: Option<&NodalVectorField>,
    m2: Option<&NodalVectorField>,
    eps: f64,
    order: usize,
) -> Result<NodalVectorField> {
    if order > 2 {
        return Err(Error::Config(format!("reconstruction order {order} must be 0, 1 or 2")));
    }
    let mut out = m0.clone();
    if order >= 1 {
        let m1 = m1.ok_or_else(|| Error::Config("order ≥ 1 needs the first-order corrector".into()))?;
        out = out.combine(1.0, m1, eps)?;
    }
    if order == 2 {
        let m2 = m2.ok_or_else(|| Error::Config("order 2 needs the second-order corrector".into()))?;
        out = out.combine(1.0, m2, eps * eps)?;
    }
    Ok(out)
}

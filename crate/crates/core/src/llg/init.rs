//! Initial data: the bubble profile and its multiscale adaptations.

use crate::cell::{HomogenizedCoefficients, PeriodicCoefficientSet};
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_stiffness, identity_tensor, Tensor};
use crate::fem::solve::{cg, Jacobi, SolverOptions};
use crate::fem::{BoundaryKind, NodalVectorField};
use crate::reconstruct::{cell_point, first_order, neumann_first_order, NeumannCorrector};

use super::model::{apply_stiffness3, lumped_norm};
use super::step::IterationStats;

/// Bubble profile centred in the unit square. In 3D it is extended
/// constantly along `x₃`.
///
/// With `x̃ = x − (½,½)` and `A = (1−2|x̃|)⁴` it equals
/// `(2x̃₁A, 2x̃₂A, A²−|x̃|²)/(A²+|x̃|²)` for `|x̃| < ½` and `(0,0,−1)` outside.
pub fn bubble(x: &[f64; 3]) -> [f64; 3] {
    let (t1, t2) = (x[0] - 0.5, x[1] - 0.5);
    let r2 = t1 * t1 + t2 * t2;
    let r = r2.sqrt();
    if r >= 0.5 {
        return [0.0, 0.0, -1.0];
    }
    let a = (1.0 - 2.0 * r).powi(4);
    let d = a * a + r2;
    [2.0 * t1 * a / d, 2.0 * t2 * a / d, (a * a - r2) / d]
}

pub fn bubble_field(mesh: std::sync::Arc<crate::fem::StructuredMesh>) -> NodalVectorField {
    NodalVectorField::from_fn(mesh, bubble)
}

/// Expansion method: `m0 + εχ(x/ε)·∇m0` on periodic meshes and
/// `m0 + (Φ^ε − x)·∇m0` on Neumann meshes. The result is not renormalized.
pub fn initial_expansion(
    m0: &NodalVectorField,
    chi: Option<(&NodalVectorField, usize)>,
    neumann: Option<&NeumannCorrector>,
) -> Result<NodalVectorField> {
    let term = match m0.mesh().bc() {
        BoundaryKind::Periodic => {
            let (chi, n) = chi.ok_or_else(|| Error::Config("periodic expansion needs the cell correctors".into()))?;
            first_order(m0, chi, n)?.scaled(1.0 / n as f64)
        }
        BoundaryKind::Neumann => {
            let nc = neumann.ok_or_else(|| Error::Config("Neumann expansion needs the Neumann corrector".into()))?;
            neumann_first_order(m0, nc)?
        }
    };
    m0.combine(1.0, &term, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionOptions {
    /// Stop when successive iterates differ by at most this in discrete H¹.
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            tol: 1e-8,
            max_iter: 200,
            linear_tol: 1e-11,
        }
    }
}

/// Projection method: Picard iteration for `m` with `|m| = 1` solving
///
/// ```text
/// (a^ε∇m^{k+1}, ∇v) = (a⁰∇m0, ∇v) − (m^k·A⁰m0) m^k + (m^k·A^ε m^k) m^k
/// ```
///
/// in lumped nodal form. The equation fixes each component only up to a
/// constant, which is taken from the integral mean of `m0`; every iterate
/// is then renormalized nodewise. When `a^ε = a⁰`
/// the unit field `m0` is a fixed point.
///
/// Returns the field and the number of iterations.
pub fn initial_projection(
    m0: &NodalVectorField,
    guess: &NodalVectorField,
    coeffs: &PeriodicCoefficientSet,
    homog: &HomogenizedCoefficients,
    n_periods: usize,
    opts: &ProjectionOptions,
) -> Result<(NodalVectorField, usize)> {
    m0.check_compatible(guess)?;
    if m0.components() != 3 {
        return Err(Error::Consistency("projection needs a 3-vector field".into()));
    }
    let mesh = m0.mesh().clone();
    let n = mesh.n_dofs();
    let a_eps = assemble_stiffness(&mesh, |x| coeffs.a(&cell_point(x, n_periods)))?;
    let a_hom = assemble_stiffness(&mesh, |_| homog.a0)?.matrix;
    let lap = assemble_stiffness(&mesh, |_| identity_tensor())?.matrix;
    let w = mesh.lumped_weights();
    let vol = mesh.total_volume();
    let pre = Jacobi::new(&a_eps.matrix);
    let lin = SolverOptions {
        tol: opts.linear_tol,
        max_iter: 20 * n.max(100),
    };
    let mut f0 = vec![0.0; 3 * n];
    apply_stiffness3(&a_hom, m0.values(), &mut f0);
    let mut m: Vec<f64> = guess.values().to_vec();
    normalize_nodes(&mut m);
    let mut am = vec![0.0; 3 * n];
    let mut stats = IterationStats::default();
    for it in 1..=opts.max_iter {
        apply_stiffness3(&a_eps.matrix, &m, &mut am);
        let mut next = vec![0.0; 3 * n];
        for c in 0..3 {
            let mut b: Vec<f64> = (0..n)
                .map(|i| {
                    let mi = &m[3 * i..3 * i + 3];
                    let pf: f64 = (0..3).map(|k| mi[k] * f0[3 * i + k]).sum();
                    let pa: f64 = (0..3).map(|k| mi[k] * am[3 * i + k]).sum();
                    f0[3 * i + c] - pf * mi[c] + pa * mi[c]
                })
                .collect();
            let mean_b = b.iter().sum::<f64>() / n as f64;
            b.iter_mut().for_each(|v| *v -= mean_b);
            let mut x: Vec<f64> = (0..n).map(|i| m[3 * i + c]).collect();
            cg(&a_eps, &pre, &b, &mut x, &lin, true)?;
            let target: f64 = (0..n).map(|i| w[i] * m0.values()[3 * i + c]).sum::<f64>() / vol;
            let have: f64 = (0..n).map(|i| w[i] * x[i]).sum::<f64>() / vol;
            for i in 0..n {
                next[3 * i + c] = x[i] + target - have;
            }
        }
        normalize_nodes(&mut next);
        let d: Vec<f64> = next.iter().zip(&m).map(|(a, b)| a - b).collect();
        let mut ld = vec![0.0; 3 * n];
        apply_stiffness3(&lap, &d, &mut ld);
        let semi: f64 = d.iter().zip(&ld).map(|(a, b)| a * b).sum();
        let diff = (semi.max(0.0) + lumped_norm(&w, &d).powi(2)).sqrt();
        m = next;
        stats.iterations = it;
        stats.residual = diff;
        stats.history.push(diff);
        if !diff.is_finite() {
            break;
        }
        if diff <= opts.tol {
            stats.converged = true;
            log::debug!("projection converged in {it} iterations");
            return Ok((NodalVectorField::new(mesh, 3, m)?, it));
        }
    }
    Err(Error::NonConvergence(stats))
}

fn normalize_nodes(m: &mut [f64]) {
    for v in m.chunks_mut(3) {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 0.0 {
            v.iter_mut().for_each(|x| *x /= r);
        }
    }
}

/// Boundary flux mismatch `‖ν·a^ε∇m − ν·a⁰∇m0‖_{L²(∂Ω)}` with elementwise
/// gradients of the boundary elements and `a^ε` sampled at their centroids.
pub fn boundary_flux_residual(
    m: &NodalVectorField,
    m0: &NodalVectorField,
    a_eps: impl Fn(&[f64; 3]) -> Tensor,
    a0: &Tensor,
) -> Result<f64> {
    m.check_compatible(m0)?;
    let mesh = m.mesh();
    let d = mesh.dim();
    let mut acc = 0.0;
    for f in mesh.boundary_facets() {
        let e = f.element;
        let ae = a_eps(&mesh.centroid(e));
        let (g, g0) = (m.element_gradient(e), m0.element_gradient(e));
        for c in 0..m.components().min(3) {
            let mut flux = 0.0;
            for i in 0..d {
                for j in 0..d {
                    flux += f.normal[i] * (ae[i][j] * g[c][j] - a0[i][j] * g0[c][j]);
                }
            }
            acc += f.measure * flux * flux;
        }
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_all;
    use crate::fem::StructuredMesh;
    use crate::reconstruct::neumann_corrector;
    use std::sync::Arc;

    fn mesh(dim: usize, n: usize, bc: BoundaryKind) -> Arc<StructuredMesh> {
        Arc::new(StructuredMesh::new(dim, n, bc).unwrap())
    }

    #[test]
    fn bubble_is_unit_and_flat_outside() {
        for i in 0..=40 {
            for j in 0..=40 {
                let x = [i as f64 / 40.0, j as f64 / 40.0, 0.3];
                let m = bubble(&x);
                let r: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((r - 1.0).abs() < 1e-12);
                if ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() >= 0.5 {
                    assert_eq!(m, [0.0, 0.0, -1.0]);
                }
            }
        }
        assert_eq!(bubble(&[0.5, 0.5, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn expansion_of_constant_field_is_identity() {
        let cosine = PeriodicCoefficientSet::cosine_product(2);
        let (cell, _) = solve_all(&cosine, 16, false).unwrap();
        let m = mesh(2, 12, BoundaryKind::Periodic);
        let konst = NodalVectorField::from_fn(m, |_| [0.6, 0.0, 0.8]);
        let out = initial_expansion(&konst, Some((&cell.chi, 3)), None).unwrap();
        assert_eq!(out, konst);
        assert!(initial_expansion(&konst, None, None).is_err());
    }

    #[test]
    fn expansion_norm_identity() {
        let cosine = PeriodicCoefficientSet::cosine_product(2);
        let (cell, _) = solve_all(&cosine, 32, false).unwrap();
        let m = mesh(2, 40, BoundaryKind::Periodic);
        let m0 = bubble_field(m);
        let out = initial_expansion(&m0, Some((&cell.chi, 4)), None).unwrap();
        let mut worst: f64 = 0.0;
        for dof in 0..out.n_dofs() {
            let v = out.vec3(dof);
            let c: Vec<f64> = (0..3).map(|k| v[k] - m0.vec3(dof)[k]).collect();
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c2: f64 = c.iter().map(|x| x * x).sum();
            // |m0 + c|² = 1 + 2 m0·c + |c|², with m0·c = O(h) from gradient recovery
            let m0c: f64 = (0..3).map(|k| m0.vec3(dof)[k] * c[k]).sum();
            assert!(((r - 1.0) - (2.0 * m0c + c2) / (r + 1.0)).abs() < 1e-12);
            worst = worst.max((r - 1.0).abs());
        }
        assert!(worst > 0.0 && worst < 0.5);
    }

    #[test]
    fn projection_fixed_point_for_consistent_coefficients() {
        let c = PeriodicCoefficientSet::constant(2, 1.3);
        let (_, homog) = solve_all(&c, 8, false).unwrap();
        let m = mesh(2, 16, BoundaryKind::Neumann);
        let m0 = bubble_field(m);
        let (out, it) = initial_projection(&m0, &m0, &c, &homog, 3, &ProjectionOptions::default()).unwrap();
        assert!(it <= 2);
        assert!(out.combine(1.0, &m0, -1.0).unwrap().max_norm() < 1e-8);
    }

    #[test]
    fn projection_reduces_boundary_flux_mismatch() {
        let c = PeriodicCoefficientSet::layered(2, 1.1, 0.5);
        let (_, homog) = solve_all(&c, 64, false).unwrap();
        let n = 4;
        let m = mesh(2, 48, BoundaryKind::Neumann);
        let m0 = NodalVectorField::from_fn(m.clone(), |x| {
            let v = [x[0] - 0.3, x[1] - 0.6, 0.5];
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            [v[0] / r, v[1] / r, v[2] / r]
        });
        let nc = neumann_corrector(m.clone(), &c, &homog, n).unwrap();
        let guess = initial_expansion(&m0, None, Some(&nc)).unwrap();
        let (out, _) = initial_projection(&m0, &guess, &c, &homog, n, &ProjectionOptions::default()).unwrap();
        for dof in 0..out.n_dofs() {
            let r: f64 = out.at(dof).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-14);
        }
        let a = |x: &[f64; 3]| c.a(&cell_point(x, n));
        let raw = boundary_flux_residual(&m0, &m0, a, &homog.a0).unwrap();
        let proj = boundary_flux_residual(&out, &m0, a, &homog.a0).unwrap();
        assert!(proj < raw, "projected {proj} vs raw {raw}");
    }
}

//! P1 assembly: stiffness, mass and load vectors.

use super::mesh::StructuredMesh;
use super::sparse::{CsrMatrix, SparseOperator};
use crate::error::{Error, Result};

/// Symmetric coefficient tensor; only the leading `dim`×`dim` block is used.
pub type Tensor = [[f64; 3]; 3];

pub fn identity_tensor() -> Tensor {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn scaled_identity(s: f64) -> Tensor {
    [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]
}

/// Quadrature rule on a simplex in barycentric coordinates; weights sum to 1.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// One-point centroid rule.
    pub fn midpoint(dim: usize) -> Self {
        let w = 1.0 / (dim + 1) as f64;
        let mut p = [0.0; 4];
        p.iter_mut().take(dim + 1).for_each(|v| *v = w);
        Quadrature {
            points: vec![p],
            weights: vec![1.0],
        }
    }

    /// Degree-2 rule: 3 points on triangles, 4 points on tetrahedra.
    pub fn degree2(dim: usize) -> Self {
        if dim == 2 {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            Quadrature {
                points: vec![[a, b, b, 0.0], [b, a, b, 0.0], [b, b, a, 0.0]],
                weights: vec![1.0 / 3.0; 3],
            }
        } else {
            let a = 0.585_410_196_624_968_5;
            let b = 0.138_196_601_125_010_5;
            Quadrature {
                points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
                weights: vec![0.25; 4],
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// True when the leading `dim` block of `a` is symmetric positive definite.
pub fn is_spd(a: &Tensor, dim: usize) -> bool {
    for i in 0..dim {
        for j in 0..i {
            let s = a[i][j].abs().max(a[j][i].abs()).max(1.0);
            if (a[i][j] - a[j][i]).abs() > 1e-12 * s {
                return false;
            }
        }
    }
    let m1 = a[0][0];
    let m2 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if dim == 2 {
        return m1 > 0.0 && m2 > 0.0;
    }
    let m3 = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    m1 > 0.0 && m2 > 0.0 && m3 > 0.0
}

/// Element stiffness `|T| a ∇φ_j·∇φ_i` with `a` sampled once per element.
pub fn element_stiffness(mesh: &StructuredMesh, e: usize, a: &Tensor) -> [[f64; 4]; 4] {
    let d = mesh.dim();
    let g = mesh.basis_gradients(e);
    let vol = mesh.volume(e);
    let mut k = [[0.0; 4]; 4];
    for i in 0..=d {
        // a ∇φ_i
        let mut ag = [0.0; 3];
        for r in 0..d {
            for c in 0..d {
                ag[r] += a[r][c] * g[i][c];
            }
        }
        for j in 0..=d {
            let mut s = 0.0;
            for r in 0..d {
                s += ag[r] * g[j][r];
            }
            k[i][j] = vol * s;
        }
    }
    k
}

/// Assembles `A_ij = ∫ a(x) ∇φ_j·∇φ_i dx` over dofs, sampling the coefficient
/// at element centroids.
pub fn assemble_stiffness<F>(mesh: &StructuredMesh, coeff: F) -> Result<SparseOperator>
where
    F: Fn(&[f64; 3]) -> Tensor,
{
    let d = mesh.dim();
    let n = mesh.n_dofs();
    let nloc = d + 1;
    let mut triplets = Vec::with_capacity(mesh.n_elements() * nloc * nloc);
    for e in 0..mesh.n_elements() {
        let c = mesh.centroid(e);
        let a = coeff(&c);
        if !is_spd(&a, d) {
            return Err(Error::Coefficient { point: c });
        }
        let k = element_stiffness(mesh, e, &a);
        let dofs = mesh.element_dofs(e);
        for i in 0..nloc {
            for j in 0..nloc {
                triplets.push((dofs[i], dofs[j], k[i][j]));
            }
        }
    }
    Ok(SparseOperator {
        matrix: CsrMatrix::from_triplets(n, n, triplets),
        symmetric: true,
        constant_nullspace: true,
    })
}

/// Mass matrix: consistent P1 mass, or its row-sum lumped diagonal.
pub fn assemble_mass(mesh: &StructuredMesh, lumped: bool) -> SparseOperator {
    let n = mesh.n_dofs();
    let matrix = if lumped {
        CsrMatrix::diagonal(&mesh.lumped_weights())
    } else {
        let d = mesh.dim();
        let nloc = d + 1;
        // ∫ λ_i λ_j = |T| (1 + δ_ij) d! / (d + 2)!
        let (diag, off) = if d == 2 {
            (1.0 / 6.0, 1.0 / 12.0)
        } else {
            (1.0 / 10.0, 1.0 / 20.0)
        };
        let mut triplets = Vec::with_capacity(mesh.n_elements() * nloc * nloc);
        for e in 0..mesh.n_elements() {
            let vol = mesh.volume(e);
            let dofs = mesh.element_dofs(e);
            for i in 0..nloc {
                for j in 0..nloc {
                    let v = if i == j { diag } else { off };
                    triplets.push((dofs[i], dofs[j], vol * v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, triplets)
    };
    SparseOperator {
        matrix,
        symmetric: true,
        constant_nullspace: false,
    }
}

/// Load vector `b_i = ∫ f φ_i` with the given quadrature. `f` receives the
/// element index and the physical quadrature point.
pub fn assemble_load<F>(mesh: &StructuredMesh, quad: &Quadrature, f: F) -> Vec<f64>
where
    F: Fn(usize, &[f64; 3]) -> f64,
{
    let d = mesh.dim();
    let mut b = vec![0.0; mesh.n_dofs()];
    for e in 0..mesh.n_elements() {
        let vol = mesh.volume(e);
        let dofs = mesh.element_dofs(e);
        for (p, &w) in quad.points.iter().zip(&quad.weights) {
            let x = mesh.map_point(e, p);
            let fx = f(e, &x) * w * vol;
            for k in 0..=d {
                b[dofs[k]] += fx * p[k];
            }
        }
    }
    b
}

/// Load vector `b_i = ∫ g·∇φ_i` for a field `g` that is constant per element.
pub fn assemble_gradient_load<F>(mesh: &StructuredMesh, g: F) -> Vec<f64>
where
    F: Fn(usize) -> [f64; 3],
{
    let d = mesh.dim();
    let mut b = vec![0.0; mesh.n_dofs()];
    for e in 0..mesh.n_elements() {
        let ge = g(e);
        let vol = mesh.volume(e);
        let grads = mesh.basis_gradients(e);
        let dofs = mesh.element_dofs(e);
        for k in 0..=d {
            let mut s = 0.0;
            for c in 0..d {
                s += ge[c] * grads[k][c];
            }
            b[dofs[k]] += vol * s;
        }
    }
    b
}

/// `∫ f dx` with the given quadrature.
pub fn integrate<F>(mesh: &StructuredMesh, quad: &Quadrature, f: F) -> f64
where
    F: Fn(usize, &[f64; 3]) -> f64,
{
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let vol = mesh.volume(e);
        let mut s = 0.0;
        for (p, &w) in quad.points.iter().zip(&quad.weights) {
            s += w * f(e, &mesh.map_point(e, p));
        }
        total += vol * s;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::BoundaryKind;

    fn cosine_a(x: &[f64; 3]) -> Tensor {
        let f = |y: f64| 1.1 + 0.25 * (2.0 * std::f64::consts::PI * (y - 0.5)).cos();
        scaled_identity(f(x[0]) * f(x[1]))
    }

    #[test]
    fn constants_in_kernel() {
        for (dim, bc) in [
            (2, BoundaryKind::Periodic),
            (2, BoundaryKind::Neumann),
            (3, BoundaryKind::Periodic),
        ] {
            let mesh = StructuredMesh::new(dim, 5, bc).unwrap();
            let a = assemble_stiffness(&mesh, |_| identity_tensor()).unwrap();
            let r = a.apply(&vec![1.0; mesh.n_dofs()]);
            assert!(r.iter().all(|v| v.abs() < 1e-10));
            assert!(a.matrix.asymmetry() <= 1e-12 * a.matrix.max_abs());
        }
    }

    #[test]
    fn unit_right_triangle_stiffness() {
        // first element of the 1x1 mesh is (0,0),(1,0),(1,1)
        let mesh = StructuredMesh::new(2, 1, BoundaryKind::Neumann).unwrap();
        let k = element_stiffness(&mesh, 0, &identity_tensor());
        // λ0 = 1 - x, λ1 = x - y, λ2 = y; area 1/2
        let grads = [[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                let expect = 0.5 * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                assert!((k[i][j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn variable_coefficient_matches_dense_oracle() {
        let mesh = StructuredMesh::new(2, 8, BoundaryKind::Periodic).unwrap();
        let a = assemble_stiffness(&mesh, cosine_a).unwrap();
        // dense brute force: loop over every element and every dof pair
        let n = mesh.n_dofs();
        let mut dense = vec![vec![0.0; n]; n];
        for e in 0..mesh.n_elements() {
            let c = mesh.centroid(e);
            let s = cosine_a(&c)[0][0];
            let g = mesh.basis_gradients(e);
            let dofs = mesh.element_dofs(e);
            for i in 0..3 {
                for j in 0..3 {
                    dense[dofs[i]][dofs[j]] += mesh.volume(e) * s * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        let sparse = a.matrix.to_dense();
        for i in 0..n {
            for j in 0..n {
                assert!((sparse[i][j] - dense[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_in_coefficient() {
        let mesh = StructuredMesh::new(3, 3, BoundaryKind::Neumann).unwrap();
        let a1 = assemble_stiffness(&mesh, |_| identity_tensor()).unwrap();
        let a3 = assemble_stiffness(&mesh, |_| scaled_identity(3.7)).unwrap();
        let d1 = a1.matrix.scaled(3.7).to_dense();
        let d3 = a3.matrix.to_dense();
        for (r1, r3) in d1.iter().zip(&d3) {
            for (x, y) in r1.iter().zip(r3) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indefinite_coefficient() {
        let mesh = StructuredMesh::new(2, 2, BoundaryKind::Neumann).unwrap();
        let err = assemble_stiffness(&mesh, |_| scaled_identity(-1.0)).unwrap_err();
        assert!(matches!(err, Error::Coefficient { .. }));
    }

    #[test]
    fn lumped_mass_properties() {
        let mesh = StructuredMesh::new(2, 1, BoundaryKind::Neumann).unwrap();
        let ml = assemble_mass(&mesh, true);
        assert!((ml.matrix.diag().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for dim in [2, 3] {
            let mesh = StructuredMesh::new(dim, 4, BoundaryKind::Periodic).unwrap();
            let mc = assemble_mass(&mesh, false);
            let ml = assemble_mass(&mesh, true);
            for (a, b) in mc.matrix.row_sums().iter().zip(ml.matrix.diag()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consistent_mass_of_unit_triangle() {
        let mesh = StructuredMesh::new(2, 1, BoundaryKind::Neumann).unwrap();
        // element 0 = nodes 0, 1, 3; exact ∫λiλj over the triangle by degree-2 quadrature
        let q = Quadrature::degree2(2);
        let area = mesh.volume(0);
        let mc = assemble_mass(&mesh, false).matrix;
        let el = mesh.element(0).to_vec();
        for i in 0..3 {
            for j in 0..3 {
                let exact: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(p, w)| w * p[i] * p[j])
                    .sum::<f64>()
                    * area;
                let analytic = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((exact - analytic).abs() < 1e-15);
                // node 0 and node 3 are shared with element 1; compare only the private pair
                if (el[i] == 1 || el[j] == 1) && i != j {
                    assert!((mc.get(el[i], el[j]) - analytic).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn degree2_rule_integrates_quadratics() {
        for dim in [2, 3] {
            let mesh = StructuredMesh::new(dim, 3, BoundaryKind::Neumann).unwrap();
            let q = Quadrature::degree2(dim);
            let v = integrate(&mesh, &q, |_, x| x[0] * x[0] + x[0] * x[1]);
            assert!((v - (1.0 / 3.0 + 0.25)).abs() < 1e-13);
        }
    }
}

//! P1 fields stored per degree of freedom.

use std::sync::Arc;

use super::mesh::StructuredMesh;
use crate::error::{Error, Result};

/// A continuous P1 field with `components` values per dof.
///
/// Values are interleaved: component `c` of dof `i` lives at
/// `values[i * components + c]`. For periodic meshes a dof stands for every
/// geometric node identified with it.
#[derive(Clone, Debug)]
pub struct NodalVectorField {
    mesh: Arc<StructuredMesh>,
    components: usize,
    values: Vec<f64>,
}

impl PartialEq for NodalVectorField {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.values == other.values && same_mesh(&self.mesh, &other.mesh)
    }
}

fn same_mesh(a: &StructuredMesh, b: &StructuredMesh) -> bool {
    a.dim() == b.dim() && a.cells() == b.cells() && a.bc() == b.bc()
}

impl NodalVectorField {
    pub fn new(mesh: Arc<StructuredMesh>, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != mesh.n_dofs() * components {
            return Err(Error::Consistency(format!(
                "{} values for {} dofs with {} components",
                values.len(),
                mesh.n_dofs(),
                components
            )));
        }
        Ok(NodalVectorField {
            mesh,
            components,
            values,
        })
    }

    pub fn zeros(mesh: Arc<StructuredMesh>, components: usize) -> Self {
        let values = vec![0.0; mesh.n_dofs() * components];
        NodalVectorField {
            mesh,
            components,
            values,
        }
    }

    pub fn scalar(mesh: Arc<StructuredMesh>, values: Vec<f64>) -> Result<Self> {
        Self::new(mesh, 1, values)
    }

    /// Nodal interpolant of a vector function.
    pub fn from_fn<F>(mesh: Arc<StructuredMesh>, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> [f64; 3],
    {
        let mut values = Vec::with_capacity(3 * mesh.n_dofs());
        for d in 0..mesh.n_dofs() {
            values.extend_from_slice(&f(&mesh.dof_coords(d)));
        }
        NodalVectorField {
            mesh,
            components: 3,
            values,
        }
    }

    /// Nodal interpolant of a scalar function.
    pub fn from_scalar_fn<F>(mesh: Arc<StructuredMesh>, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> f64,
    {
        let values = (0..mesh.n_dofs()).map(|d| f(&mesh.dof_coords(d))).collect();
        NodalVectorField {
            mesh,
            components: 1,
            values,
        }
    }

    /// Interleaves separate component vectors.
    pub fn from_components(mesh: Arc<StructuredMesh>, comps: &[Vec<f64>]) -> Result<Self> {
        let n = mesh.n_dofs();
        if comps.is_empty() || comps.iter().any(|c| c.len() != n) {
            return Err(Error::Consistency("component length mismatch".into()));
        }
        let k = comps.len();
        let mut values = vec![0.0; n * k];
        for (c, comp) in comps.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                values[i * k + c] = *v;
            }
        }
        Ok(NodalVectorField {
            mesh,
            components: k,
            values,
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, dof: usize) -> &[f64] {
        &self.values[dof * self.components..(dof + 1) * self.components]
    }

    /// Value at a dof padded to three components.
    pub fn vec3(&self, dof: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, v) in out.iter_mut().zip(self.at(dof)) {
            *o = *v;
        }
        out
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.components).copied().collect()
    }

    /// Checks that `other` lives on the same mesh with the same layout.
    pub fn check_compatible(&self, other: &NodalVectorField) -> Result<()> {
        if self.components != other.components || !same_mesh(&self.mesh, &other.mesh) {
            return Err(Error::Consistency(format!(
                "fields on {}^{} ({}) x{} and {}^{} ({}) x{}",
                self.mesh.cells(),
                self.mesh.dim(),
                self.mesh.bc(),
                self.components,
                other.mesh.cells(),
                other.mesh.dim(),
                other.mesh.bc(),
                other.components
            )));
        }
        Ok(())
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &NodalVectorField, b: f64) -> Result<NodalVectorField> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(NodalVectorField {
            mesh: self.mesh.clone(),
            components: self.components,
            values,
        })
    }

    pub fn scaled(&self, s: f64) -> NodalVectorField {
        NodalVectorField {
            mesh: self.mesh.clone(),
            components: self.components,
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    /// Largest Euclidean norm of the per-dof values.
    pub fn max_norm(&self) -> f64 {
        (0..self.n_dofs())
            .map(|d| self.at(d).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn eval_in(&self, e: usize, bary: &[f64; 4]) -> [f64; 9] {
        let dofs = self.mesh.element_dofs(e);
        let mut out = [0.0; 9];
        for k in 0..=self.mesh.dim() {
            let v = self.at(dofs[k]);
            for (o, x) in out.iter_mut().zip(v) {
                *o += bary[k] * x;
            }
        }
        out
    }

    /// Value at a physical point. With `periodic_wrap` the point is first
    /// mapped into the unit cell by taking fractional parts.
    pub fn value_at(&self, x: &[f64; 3], periodic_wrap: bool) -> Result<[f64; 9]> {
        let p = if periodic_wrap { wrap(x, self.mesh.dim()) } else { *x };
        let (e, bary) = self.mesh.locate(&p)?;
        Ok(self.eval_in(e, &bary))
    }

    /// Value inside a known element at barycentric coordinates.
    pub fn value_in(&self, e: usize, bary: &[f64; 4]) -> [f64; 9] {
        self.eval_in(e, bary)
    }

    /// P1 interpolation at a list of points.
    pub fn interpolate(&self, targets: &[[f64; 3]], periodic_wrap: bool) -> Result<Vec<Vec<f64>>> {
        targets
            .iter()
            .map(|x| self.value_at(x, periodic_wrap).map(|v| v[..self.components].to_vec()))
            .collect()
    }

    /// Nodal interpolant of this field on another mesh.
    pub fn transfer(&self, target: Arc<StructuredMesh>, periodic_wrap: bool) -> Result<NodalVectorField> {
        let k = self.components;
        let mut values = Vec::with_capacity(target.n_dofs() * k);
        for d in 0..target.n_dofs() {
            let v = self.value_at(&target.dof_coords(d), periodic_wrap)?;
            values.extend_from_slice(&v[..k]);
        }
        NodalVectorField::new(target, k, values)
    }

    /// Gradient on element `e`: `g[c][k] = ∂_k u_c` (first 3 components).
    pub fn element_gradient(&self, e: usize) -> [[f64; 3]; 3] {
        let d = self.mesh.dim();
        let grads = self.mesh.basis_gradients(e);
        let dofs = self.mesh.element_dofs(e);
        let mut g = [[0.0; 3]; 3];
        for (loc, gphi) in grads.iter().enumerate() {
            let v = self.at(dofs[loc]);
            for (c, vc) in v.iter().enumerate().take(3) {
                for k in 0..d {
                    g[c][k] += vc * gphi[k];
                }
            }
        }
        g
    }

    /// Per-element constant gradients of every component.
    pub fn element_gradients(&self) -> Vec<[[f64; 3]; 3]> {
        (0..self.mesh.n_elements()).map(|e| self.element_gradient(e)).collect()
    }

    /// Volume-weighted average of the adjacent element gradients at each dof.
    ///
    /// The result has `components * dim` components, ordered so that
    /// `∂_k u_c` sits at index `c * dim + k`. Works for up to 3 components.
    pub fn recover_gradient(&self) -> NodalVectorField {
        let d = self.mesh.dim();
        let k = self.components.min(3);
        let n = self.n_dofs();
        let mut acc = vec![0.0; n * k * d];
        let mut wsum = vec![0.0; n];
        for e in 0..self.mesh.n_elements() {
            let g = self.element_gradient(e);
            let vol = self.mesh.volume(e);
            let mut seen = [usize::MAX; 4];
            for (loc, &dof) in self.mesh.element_dofs(e).iter().take(d + 1).enumerate() {
                // an element can touch the same periodic dof only once on
                // meshes with at least two cells per side, but guard anyway
                if seen[..loc].contains(&dof) {
                    continue;
                }
                seen[loc] = dof;
                wsum[dof] += vol;
                for c in 0..k {
                    for j in 0..d {
                        acc[dof * k * d + c * d + j] += vol * g[c][j];
                    }
                }
            }
        }
        for dof in 0..n {
            let w = wsum[dof];
            for v in &mut acc[dof * k * d..(dof + 1) * k * d] {
                *v /= w;
            }
        }
        NodalVectorField {
            mesh: self.mesh.clone(),
            components: k * d,
            values: acc,
        }
    }
}

/// Fractional part of each of the first `dim` coordinates.
pub fn wrap(x: &[f64; 3], dim: usize) -> [f64; 3] {
    let mut p = *x;
    for v in p.iter_mut().take(dim) {
        *v -= v.floor();
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::BoundaryKind;

    fn mesh(dim: usize, n: usize, bc: BoundaryKind) -> Arc<StructuredMesh> {
        Arc::new(StructuredMesh::new(dim, n, bc).unwrap())
    }

    #[test]
    fn linear_fields_reproduced() {
        for dim in [2, 3] {
            let m = mesh(dim, 5, BoundaryKind::Neumann);
            let f = |x: &[f64; 3]| [1.0 + 2.0 * x[0] - x[1], 0.5 * x[1] + 3.0 * x[2], -x[0]];
            let u = NodalVectorField::from_fn(m.clone(), f);
            for mut p in [[0.123, 0.456, 0.789], [0.999, 0.001, 0.5], [1.0, 1.0, 1.0]] {
                if dim == 2 {
                    p[2] = 0.0;
                }
                let v = u.value_at(&p, false).unwrap();
                let e = f(&p);
                for c in 0..3 {
                    assert!((v[c] - e[c]).abs() < 1e-12);
                }
            }
            for e in 0..m.n_elements() {
                let g = u.element_gradient(e);
                assert!((g[0][0] - 2.0).abs() < 1e-12 && (g[0][1] + 1.0).abs() < 1e-12);
                assert!((g[2][0] + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let m = mesh(2, 4, BoundaryKind::Periodic);
        let u = NodalVectorField::from_fn(m, |_| [0.3, -0.2, 0.9]);
        let r = u.recover_gradient();
        assert!(r.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn wrap_is_periodic() {
        let m = mesh(2, 8, BoundaryKind::Periodic);
        let u =
            NodalVectorField::from_scalar_fn(m, |x| (2.0 * std::f64::consts::PI * x[0]).sin() + x[1] * (1.0 - x[1]));
        let a = u.value_at(&[1.25, 0.3, 0.0], true).unwrap();
        let b = u.value_at(&[0.25, 0.3, 0.0], false).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-14);
        assert!(matches!(
            u.value_at(&[1.25, 0.3, 0.0], false),
            Err(Error::Location { .. })
        ));
    }

    #[test]
    fn transfer_matches_exhaustive_search() {
        let coarse = mesh(2, 24, BoundaryKind::Neumann);
        let fine = mesh(2, 30, BoundaryKind::Neumann);
        let u = NodalVectorField::from_scalar_fn(coarse.clone(), |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let v = u.transfer(fine.clone(), false).unwrap();
        for d in (0..fine.n_dofs()).step_by(37) {
            let x = fine.dof_coords(d);
            let e = (0..coarse.n_elements())
                .find(|&e| coarse.barycentric(e, &x).iter().take(3).all(|&l| l > -1e-12))
                .unwrap();
            let b = coarse.barycentric(e, &x);
            let dofs = coarse.element_dofs(e);
            let oracle: f64 = (0..3).map(|k| b[k] * u.values()[dofs[k]]).sum();
            assert!((v.values()[d] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn recovered_gradient_first_order() {
        let f = |x: &[f64; 3]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let m = mesh(2, n, BoundaryKind::Neumann);
            let g = NodalVectorField::from_scalar_fn(m.clone(), f).recover_gradient();
            let mut worst: f64 = 0.0;
            for d in 0..m.n_dofs() {
                let x = m.dof_coords(d);
                let ex = [2.0 * x[0] + 3.0 * x[1], 3.0 * x[0]];
                let v = g.at(d);
                worst = worst.max((v[0] - ex[0]).abs()).max((v[1] - ex[1]).abs());
            }
            errs.push(worst);
        }
        let slope = (errs[0] / errs[2]).log2() / 2.0;
        assert!(slope > 0.9, "slope {slope} errs {errs:?}");
    }

    #[test]
    fn rejects_wrong_length() {
        let m = mesh(2, 2, BoundaryKind::Neumann);
        assert!(NodalVectorField::new(m, 3, vec![0.0; 5]).is_err());
    }
}

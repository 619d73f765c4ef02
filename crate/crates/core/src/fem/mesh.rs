//! Uniform simplicial meshes of the unit square and unit cube.
//!
//! Squares are split along the diagonal from the lower-left to the upper-right
//! corner; cubes use the six-tetrahedron (Kuhn) split around the main
//! diagonal. Both splits are translation invariant, so the same mesh serves as
//! a periodic mesh once the nodes on the max-coordinate faces are identified
//! with their images on the opposite faces.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Boundary treatment of a mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Periodic,
    Neumann,
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryKind::Periodic => "periodic",
            BoundaryKind::Neumann => "neumann",
        })
    }
}

impl FromStr for BoundaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "periodic" => Ok(BoundaryKind::Periodic),
            "neumann" => Ok(BoundaryKind::Neumann),
            other => Err(Error::Config(format!("unknown boundary kind `{other}`"))),
        }
    }
}

/// A boundary facet (edge in 2D, triangle in 3D) with its outward normal.
#[derive(Clone, Debug)]
pub struct BoundaryFacet {
    /// Geometric node indices of the facet.
    pub nodes: Vec<usize>,
    /// Element owning the facet.
    pub element: usize,
    pub normal: [f64; 3],
    pub measure: f64,
}

/// Uniform simplicial mesh of `[0,1]^dim`.
///
/// Geometric nodes are numbered lexicographically with the first coordinate
/// running fastest. Finite-element unknowns ("dofs") coincide with nodes for
/// Neumann meshes; for periodic meshes every node on a max-coordinate face is
/// mapped onto its master on the opposite face.
#[derive(Clone, Debug)]
pub struct StructuredMesh {
    dim: usize,
    cells: usize,
    bc: BoundaryKind,
    coords: Vec<[f64; 3]>,
    elements: Vec<[usize; 4]>,
    periodic_map: Option<Vec<usize>>,
    node_dof: Vec<usize>,
    dof_node: Vec<usize>,
    grads: Vec<[[f64; 3]; 4]>,
    volumes: Vec<f64>,
    boundary_facets: Vec<BoundaryFacet>,
}

impl StructuredMesh {
    pub fn new(dim: usize, cells: usize, bc: BoundaryKind) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Mesh(format!("dimension must be 2 or 3, got {dim}")));
        }
        if cells == 0 {
            return Err(Error::Mesh("at least one cell per side is required".into()));
        }
        let np = cells + 1;
        let h = 1.0 / cells as f64;
        let n_nodes = np.pow(dim as u32);

        let mut coords = Vec::with_capacity(n_nodes);
        for node in 0..n_nodes {
            let idx = unravel(node, np, dim);
            let mut x = [0.0; 3];
            for k in 0..dim {
                // exact 1.0 on the max face
                x[k] = if idx[k] == cells { 1.0 } else { idx[k] as f64 * h };
            }
            coords.push(x);
        }

        let elements = if dim == 2 {
            split_squares(cells)
        } else {
            split_cubes(cells)
        };

        let (periodic_map, node_dof, dof_node) = match bc {
            BoundaryKind::Neumann => {
                let ids: Vec<usize> = (0..n_nodes).collect();
                (None, ids.clone(), ids)
            }
            BoundaryKind::Periodic => {
                let mut master = vec![0; n_nodes];
                let mut node_dof = vec![0; n_nodes];
                let mut dof_node = Vec::with_capacity(cells.pow(dim as u32));
                for node in 0..n_nodes {
                    let mut idx = unravel(node, np, dim);
                    let mut d = 0;
                    let mut stride = 1;
                    for item in idx.iter_mut().take(dim) {
                        *item %= cells;
                        d += *item * stride;
                        stride *= cells;
                    }
                    master[node] = ravel(&idx, np, dim);
                    node_dof[node] = d;
                }
                for node in 0..n_nodes {
                    if master[node] == node {
                        dof_node.push(node);
                    }
                }
                debug_assert_eq!(dof_node.len(), cells.pow(dim as u32));
                // dof numbering above is lexicographic over masters, which
                // matches the order masters are visited here
                (Some(master), node_dof, dof_node)
            }
        };

        let mut mesh = StructuredMesh {
            dim,
            cells,
            bc,
            coords,
            elements,
            periodic_map,
            node_dof,
            dof_node,
            grads: Vec::new(),
            volumes: Vec::new(),
            boundary_facets: Vec::new(),
        };
        mesh.compute_geometry()?;
        mesh.boundary_facets = mesh.find_boundary_facets();
        Ok(mesh)
    }

    fn compute_geometry(&mut self) -> Result<()> {
        let d = self.dim;
        self.grads = Vec::with_capacity(self.elements.len());
        self.volumes = Vec::with_capacity(self.elements.len());
        for (e, el) in self.elements.iter().enumerate() {
            let x0 = self.coords[el[0]];
            // rows of the Jacobian are edge vectors x_k - x_0
            let mut jac = [[0.0; 3]; 3];
            for k in 0..d {
                let xk = self.coords[el[k + 1]];
                for c in 0..d {
                    jac[k][c] = xk[c] - x0[c];
                }
            }
            let (det, inv) = invert(&jac, d);
            let fact = if d == 2 { 2.0 } else { 6.0 };
            let vol = det / fact;
            if vol <= 0.0 {
                return Err(Error::Mesh(format!("element {e} has non-positive volume {vol}")));
            }
            // gradient of barycentric lambda_{k+1} is the k-th column of J^{-1}
            let mut g = [[0.0; 3]; 4];
            for k in 0..d {
                for c in 0..d {
                    g[k + 1][c] = inv[c][k];
                    g[0][c] -= inv[c][k];
                }
            }
            self.grads.push(g);
            self.volumes.push(vol);
        }
        Ok(())
    }

    fn find_boundary_facets(&self) -> Vec<BoundaryFacet> {
        let d = self.dim;
        let mut facets = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            for skip in 0..=d {
                let nodes: Vec<usize> = (0..=d).filter(|&k| k != skip).map(|k| el[k]).collect();
                for axis in 0..d {
                    for &(side, sign) in &[(0.0, -1.0), (1.0, 1.0)] {
                        if nodes.iter().all(|&n| self.coords[n][axis] == side) {
                            let mut normal = [0.0; 3];
                            normal[axis] = sign;
                            let h = 1.0 / self.cells as f64;
                            let measure = if d == 2 { h } else { 0.5 * h * h };
                            facets.push(BoundaryFacet {
                                nodes: nodes.clone(),
                                element: e,
                                normal,
                                measure,
                            });
                        }
                    }
                }
            }
        }
        facets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per side.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Number of independent unknowns after periodic identification.
    pub fn n_dofs(&self) -> usize {
        self.dof_node.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn node_coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    /// Geometric node indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e][..=self.dim]
    }

    /// Dof indices of element `e`.
    pub fn element_dofs(&self, e: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for (k, &n) in self.element(e).iter().enumerate() {
            out[k] = self.node_dof[n];
        }
        out
    }

    /// Gradients of the barycentric basis functions on element `e`.
    pub fn basis_gradients(&self, e: usize) -> &[[f64; 3]] {
        &self.grads[e][..=self.dim]
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    pub fn centroid(&self, e: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        let w = 1.0 / (self.dim + 1) as f64;
        for &n in self.element(e) {
            for k in 0..3 {
                c[k] += w * self.coords[n][k];
            }
        }
        c
    }

    /// Physical point of barycentric coordinates `bary` in element `e`.
    pub fn map_point(&self, e: usize, bary: &[f64]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (k, &n) in self.element(e).iter().enumerate() {
            for c in 0..3 {
                x[c] += bary[k] * self.coords[n][c];
            }
        }
        x
    }

    pub fn periodic_map(&self) -> Option<&[usize]> {
        self.periodic_map.as_deref()
    }

    pub fn node_dof(&self, node: usize) -> usize {
        self.node_dof[node]
    }

    /// Representative geometric node of a dof (the min-coordinate copy).
    pub fn dof_node(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn dof_coords(&self, dof: usize) -> [f64; 3] {
        self.coords[self.dof_node[dof]]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Locates the element containing `x` and the barycentric coordinates
    /// of `x` in it. Points on shared faces resolve to one of the owners.
    pub fn locate(&self, x: &[f64; 3]) -> Result<(usize, [f64; 4])> {
        const SLACK: f64 = 1e-12;
        let d = self.dim;
        let n = self.cells;
        let mut cell = [0usize; 3];
        let mut local = [0.0; 3];
        for k in 0..d {
            let xk = x[k];
            if !(-SLACK..=1.0 + SLACK).contains(&xk) {
                return Err(Error::Location { point: *x });
            }
            let s = xk.clamp(0.0, 1.0) * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            cell[k] = i;
            local[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        let e = if d == 2 {
            let base = 2 * (cell[0] + n * cell[1]);
            if local[0] >= local[1] {
                base
            } else {
                base + 1
            }
        } else {
            let base = 6 * (cell[0] + n * (cell[1] + n * cell[2]));
            base + kuhn_index(&local)
        };
        Ok((e, self.barycentric(e, x)))
    }

    /// Barycentric coordinates of `x` with respect to element `e`
    /// (may be negative if `x` is outside).
    pub fn barycentric(&self, e: usize, x: &[f64; 3]) -> [f64; 4] {
        let g = &self.grads[e];
        let x0 = self.coords[self.elements[e][0]];
        let mut b = [0.0; 4];
        let mut rest = 1.0;
        for k in 1..=self.dim {
            let mut v = 0.0;
            for c in 0..self.dim {
                v += g[k][c] * (x[c] - x0[c]);
            }
            b[k] = v;
            rest -= v;
        }
        b[0] = rest;
        b
    }

    /// Lumped (row-sum) mass per dof: the measure of the dual cell.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_dofs()];
        let share = 1.0 / (self.dim + 1) as f64;
        for e in 0..self.n_elements() {
            let v = self.volumes[e] * share;
            for &n in self.element(e) {
                w[self.node_dof[n]] += v;
            }
        }
        w
    }
}

fn unravel(mut node: usize, np: usize, dim: usize) -> [usize; 3] {
    let mut idx = [0; 3];
    for item in idx.iter_mut().take(dim) {
        *item = node % np;
        node /= np;
    }
    idx
}

fn ravel(idx: &[usize; 3], np: usize, dim: usize) -> usize {
    let mut node = 0;
    let mut stride = 1;
    for &i in idx.iter().take(dim) {
        node += i * stride;
        stride *= np;
    }
    node
}

fn split_squares(n: usize) -> Vec<[usize; 4]> {
    let np = n + 1;
    let mut out = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = i + np * j;
            let b = a + 1;
            let c = a + 1 + np;
            let d = a + np;
            out.push([a, b, c, 0]);
            out.push([a, c, d, 0]);
        }
    }
    out
}

/// Axis orderings for the six Kuhn tetrahedra, in the order used by
/// [`kuhn_index`].
const KUHN_PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn kuhn_index(local: &[f64; 3]) -> usize {
    let mut order = [0usize, 1, 2];
    // stable sort descending keeps the lowest axis first on ties
    order.sort_by(|&a, &b| local[b].partial_cmp(&local[a]).unwrap_or(std::cmp::Ordering::Equal));
    KUHN_PERMS.iter().position(|p| *p == order).unwrap_or(0)
}

fn split_cubes(n: usize) -> Vec<[usize; 4]> {
    let np = n + 1;
    let id = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut out = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in KUHN_PERMS.iter() {
                    let mut v = [i, j, k];
                    let mut tet = [id(i, j, k), 0, 0, 0];
                    for (slot, &axis) in perm.iter().enumerate() {
                        v[axis] += 1;
                        tet[slot + 1] = id(v[0], v[1], v[2]);
                    }
                    // odd permutations are negatively oriented
                    let parity = perm_parity(perm);
                    if parity {
                        tet.swap(2, 3);
                    }
                    out.push(tet);
                }
            }
        }
    }
    out
}

fn perm_parity(p: &[usize; 3]) -> bool {
    let mut inv = 0;
    for a in 0..3 {
        for b in a + 1..3 {
            if p[a] > p[b] {
                inv += 1;
            }
        }
    }
    inv % 2 == 1
}

/// Determinant and inverse of the leading `d`×`d` block.
pub(crate) fn invert(m: &[[f64; 3]; 3], d: usize) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    if d == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
        (det, inv)
    } else {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        for r in 0..3 {
            for c in 0..3 {
                // cofactor transpose
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
            }
        }
        (det, inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_square() {
        let m = StructuredMesh::new(2, 1, BoundaryKind::Neumann).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_nodes(), 4);
        assert!((m.total_volume() - 1.0).abs() < 1e-15);
        assert!(m.periodic_map().is_none());
    }

    #[test]
    fn fine_resolution_periodic_counts() {
        let m = StructuredMesh::new(2, 180, BoundaryKind::Periodic).unwrap();
        assert_eq!(m.n_elements(), 180 * 180 * 2);
        assert_eq!(m.n_dofs(), 180 * 180);
    }

    #[test]
    fn cube_volumes_sum_to_one() {
        let m = StructuredMesh::new(3, 4, BoundaryKind::Neumann).unwrap();
        assert_eq!(m.n_elements(), 6 * 64);
        // independent check: |det| of edge vectors over 6
        let mut total = 0.0;
        for e in 0..m.n_elements() {
            let el = m.element(e);
            let p = |k: usize| m.node_coords()[el[k]];
            let (a, b, c, d) = (p(0), p(1), p(2), p(3));
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
            let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
                + u[2] * (v[0] * w[1] - v[1] * w[0]);
            assert!(det > 0.0);
            total += det / 6.0;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_masters_lie_on_opposite_face() {
        for dim in [2, 3] {
            let m = StructuredMesh::new(dim, 3, BoundaryKind::Periodic).unwrap();
            let map = m.periodic_map().unwrap();
            for (node, &master) in map.iter().enumerate() {
                let x = m.node_coords()[node];
                let y = m.node_coords()[master];
                for k in 0..dim {
                    if x[k] == 1.0 {
                        assert_eq!(y[k], 0.0);
                    } else {
                        assert_eq!(x[k], y[k]);
                    }
                }
                assert_eq!(map[master], master);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(StructuredMesh::new(1, 4, BoundaryKind::Neumann).is_err());
        assert!(StructuredMesh::new(2, 0, BoundaryKind::Neumann).is_err());
    }

    #[test]
    fn locate_matches_exhaustive_search() {
        for dim in [2, 3] {
            let m = StructuredMesh::new(dim, 3, BoundaryKind::Neumann).unwrap();
            let pts = [[0.13, 0.71, 0.42], [0.5, 0.5, 0.5], [0.99, 0.01, 0.66], [1.0, 1.0, 1.0]];
            for p in pts {
                let (e, b) = m.locate(&p).unwrap();
                assert!(b.iter().take(dim + 1).all(|&l| l > -1e-12), "{p:?} {b:?}");
                let owners: Vec<usize> = (0..m.n_elements())
                    .filter(|&f| m.barycentric(f, &p).iter().take(dim + 1).all(|&l| l > -1e-12))
                    .collect();
                assert!(owners.contains(&e));
            }
        }
    }

    #[test]
    fn boundary_facets_cover_boundary() {
        let m = StructuredMesh::new(2, 4, BoundaryKind::Neumann).unwrap();
        let len: f64 = m.boundary_facets().iter().map(|f| f.measure).sum();
        assert!((len - 4.0).abs() < 1e-12);
        let m3 = StructuredMesh::new(3, 2, BoundaryKind::Neumann).unwrap();
        let area: f64 = m3.boundary_facets().iter().map(|f| f.measure).sum();
        assert!((area - 6.0).abs() < 1e-12);
    }
}

//! Model description, effective field and discrete energy.

use std::sync::Arc;

use crate::cell::{HomogenizedCoefficients, PeriodicCoefficientSet};
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_stiffness, scaled_identity};
use crate::fem::{CsrMatrix, NodalVectorField, StructuredMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Oscillating coefficients `f(x/ε)` with `ε = 1/n_periods`.
    Multiscale {
        n_periods: usize,
    },
    Homogenized,
}

impl Scale {
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Scale::Multiscale { n_periods } => Some(1.0 / *n_periods as f64),
            Scale::Homogenized => None,
        }
    }
}

/// Which contributions enter the effective field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub exchange: bool,
    pub anisotropy: bool,
    pub zeeman: bool,
    pub stray2d: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Terms {
            exchange: true,
            anisotropy: false,
            zeeman: false,
            stray2d: false,
        }
    }
}

impl Terms {
    pub fn exchange_only() -> Self {
        Self::default()
    }

    /// Parses a comma-separated list such as `exchange,stray2d`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut t = Terms {
            exchange: false,
            anisotropy: false,
            zeeman: false,
            stray2d: false,
        };
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item {
                "exchange" => t.exchange = true,
                "anisotropy" => t.anisotropy = true,
                "zeeman" => t.zeeman = true,
                "stray2d" => t.stray2d = true,
                other => return Err(Error::Config(format!("unknown field term `{other}`"))),
            }
        }
        Ok(t)
    }

    pub fn to_list(&self) -> String {
        let mut v = Vec::new();
        if self.exchange {
            v.push("exchange");
        }
        if self.anisotropy {
            v.push("anisotropy");
        }
        if self.zeeman {
            v.push("zeeman");
        }
        if self.stray2d {
            v.push("stray2d");
        }
        v.join(",")
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub scale: Scale,
    pub terms: Terms,
    pub alpha: f64,
    pub dim: usize,
    pub coeffs: PeriodicCoefficientSet,
    /// Required for the homogenized scale.
    pub homog: Option<HomogenizedCoefficients>,
}

/// A model discretized on a mesh: exchange stiffness, lumped weights and
/// nodal lower-order coefficients.
///
/// Vector fields are handled as interleaved `3·n_dofs` slices.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    mesh: Arc<StructuredMesh>,
    stiffness: CsrMatrix,
    weights: Vec<f64>,
    aniso: Option<Vec<f64>>,
    stray: Option<Vec<f64>>,
    zeeman: Option<Vec<f64>>,
}

impl Model {
    pub fn new(spec: ModelSpec, mesh: Arc<StructuredMesh>) -> Result<Self> {
        if spec.dim != mesh.dim() || spec.coeffs.dim != mesh.dim() {
            return Err(Error::Consistency(format!(
                "model dimension {} does not match mesh dimension {}",
                spec.dim,
                mesh.dim()
            )));
        }
        if !(spec.alpha > 0.0) {
            return Err(Error::Config(format!(
                "damping alpha must be positive, got {}",
                spec.alpha
            )));
        }
        if spec.terms.stray2d && spec.dim != 2 {
            return Err(Error::Config("the degenerate stray field is only valid in 2D".into()));
        }
        spec.coeffs.validate()?;
        let c = &spec.coeffs;
        let n = mesh.n_dofs();
        let node_sample = |f: &dyn Fn(&[f64; 3]) -> f64, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|d| {
                    let x = mesh.dof_coords(d);
                    f(&[scale * x[0], scale * x[1], scale * x[2]])
                })
                .collect()
        };
        let t = spec.terms;
        let (stiffness, aniso, stray, zeeman) = match spec.scale {
            Scale::Multiscale { n_periods } => {
                if n_periods == 0 {
                    return Err(Error::Config("n_periods must be at least 1".into()));
                }
                let s = n_periods as f64;
                let a = if t.exchange {
                    assemble_stiffness(&mesh, |x| c.a(&[s * x[0], s * x[1], s * x[2]]))?.matrix
                } else {
                    CsrMatrix::from_triplets(n, n, Vec::new())
                };
                (
                    a,
                    t.anisotropy.then(|| node_sample(&|y| c.k(y), s)),
                    t.stray2d.then(|| node_sample(&|y| c.mu(y) * c.ms(y), s)),
                    t.zeeman.then(|| node_sample(&|y| c.ms(y), s)),
                )
            }
            Scale::Homogenized => {
                let h = spec
                    .homog
                    .as_ref()
                    .ok_or_else(|| Error::Config("homogenized scale requires homogenized coefficients".into()))?;
                let a = if t.exchange {
                    assemble_stiffness(&mesh, |_| h.a0)?.matrix
                } else {
                    CsrMatrix::from_triplets(n, n, Vec::new())
                };
                (
                    a,
                    t.anisotropy.then(|| vec![h.k0; n]),
                    t.stray2d.then(|| vec![h.mt0; n]),
                    t.zeeman.then(|| vec![h.m0; n]),
                )
            }
        };
        let weights = mesh.lumped_weights();
        Ok(Model {
            spec,
            mesh,
            stiffness,
            weights,
            aniso,
            stray,
            zeeman,
        })
    }

    /// Homogenized model with a constant isotropic exchange `a·I` and no
    /// other terms; convenient for tests.
    pub fn constant_exchange(mesh: Arc<StructuredMesh>, a: f64, alpha: f64) -> Result<Self> {
        let dim = mesh.dim();
        let homog = HomogenizedCoefficients {
            dim,
            a0: scaled_identity(a),
            mu0: 1.0,
            k0: 0.0,
            m0: 1.0,
            mt0: 1.0,
            hd0: [[0.0; 3]; 3],
        };
        let spec = ModelSpec {
            scale: Scale::Homogenized,
            terms: Terms::exchange_only(),
            alpha,
            dim,
            coeffs: PeriodicCoefficientSet::constant(dim, a),
            homog: Some(homog),
        };
        Model::new(spec, mesh)
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_dofs(&self) -> usize {
        self.weights.len()
    }

    pub fn easy_axis(&self) -> [f64; 3] {
        self.spec.coeffs.easy_axis
    }

    /// Diagonal of the linear field operator at node `i`:
    /// `D_i = −(A_ii/w_i) I − K_i u uᵀ + S_i e₃e₃ᵀ`.
    pub fn diag_block(&self, i: usize) -> [[f64; 3]; 3] {
        let mut d = [[0.0; 3]; 3];
        let aii = -self.stiffness.get(i, i) / self.weights[i];
        for (k, row) in d.iter_mut().enumerate() {
            row[k] = aii;
        }
        if let Some(kk) = &self.aniso {
            let u = self.easy_axis();
            for r in 0..3 {
                for c in 0..3 {
                    d[r][c] -= kk[i] * u[r] * u[c];
                }
            }
        }
        if let Some(s) = &self.stray {
            d[2][2] += s[i];
        }
        d
    }

    /// Linear part of the effective field, `out = H m`.
    pub fn linear_field(&self, m: &[f64], out: &mut [f64]) {
        apply_stiffness3(&self.stiffness, m, out);
        for (i, w) in self.weights.iter().enumerate() {
            for k in 0..3 {
                out[3 * i + k] /= -w;
            }
        }
        if let Some(kk) = &self.aniso {
            let u = self.easy_axis();
            for i in 0..self.n_dofs() {
                let mu = m[3 * i] * u[0] + m[3 * i + 1] * u[1] + m[3 * i + 2] * u[2];
                for k in 0..3 {
                    out[3 * i + k] -= kk[i] * mu * u[k];
                }
            }
        }
        if let Some(s) = &self.stray {
            for i in 0..self.n_dofs() {
                out[3 * i + 2] += s[i] * m[3 * i + 2];
            }
        }
    }

    /// Constant part of the effective field, `M h_a` per node.
    pub fn zeeman_field(&self) -> Vec<f64> {
        let mut z = vec![0.0; 3 * self.n_dofs()];
        if let Some(ms) = &self.zeeman {
            let ha = self.spec.coeffs.applied_field;
            for i in 0..self.n_dofs() {
                for k in 0..3 {
                    z[3 * i + k] = ms[i] * ha[k];
                }
            }
        }
        z
    }

    pub fn has_zeeman(&self) -> bool {
        self.zeeman.is_some()
    }

    /// Nodal effective field `h = −W⁻¹ A m − K(m·u)u + S(m·e₃)e₃ + M h_a`.
    pub fn effective_field_values(&self, m: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; m.len()];
        self.linear_field(m, &mut h);
        for (hi, zi) in h.iter_mut().zip(self.zeeman_field()) {
            *hi += zi;
        }
        h
    }

    pub fn effective_field(&self, m: &NodalVectorField) -> Result<NodalVectorField> {
        self.check_field(m)?;
        NodalVectorField::new(self.mesh.clone(), 3, self.effective_field_values(m.values()))
    }

    /// `E = ½ mᵀAm + ½Σ w K (m·u)² − ½Σ w S (m·e₃)² − Σ w M h_a·m`; the
    /// lower-order terms use the same vertex quadrature as the field.
    pub fn energy_values(&self, m: &[f64]) -> f64 {
        let mut am = vec![0.0; m.len()];
        apply_stiffness3(&self.stiffness, m, &mut am);
        let mut e = 0.5 * m.iter().zip(&am).map(|(a, b)| a * b).sum::<f64>();
        let u = self.easy_axis();
        let ha = self.spec.coeffs.applied_field;
        for (i, w) in self.weights.iter().enumerate() {
            let mi = &m[3 * i..3 * i + 3];
            if let Some(kk) = &self.aniso {
                let mu = mi[0] * u[0] + mi[1] * u[1] + mi[2] * u[2];
                e += 0.5 * w * kk[i] * mu * mu;
            }
            if let Some(s) = &self.stray {
                e -= 0.5 * w * s[i] * mi[2] * mi[2];
            }
            if let Some(ms) = &self.zeeman {
                e -= w * ms[i] * (ha[0] * mi[0] + ha[1] * mi[1] + ha[2] * mi[2]);
            }
        }
        e
    }

    pub fn discrete_energy(&self, m: &NodalVectorField) -> Result<f64> {
        self.check_field(m)?;
        Ok(self.energy_values(m.values()))
    }

    /// `‖v‖_h` for an interleaved vector field.
    pub fn lumped_norm(&self, v: &[f64]) -> f64 {
        lumped_norm(&self.weights, v)
    }

    pub fn check_field(&self, m: &NodalVectorField) -> Result<()> {
        let fm = m.mesh();
        if m.components() != 3
            || fm.dim() != self.mesh.dim()
            || fm.cells() != self.mesh.cells()
            || fm.bc() != self.mesh.bc()
        {
            return Err(Error::Consistency(
                "magnetization does not live on the model mesh".into(),
            ));
        }
        Ok(())
    }
}

/// `out = (A ⊗ I₃) m` for an interleaved vector field.
pub fn apply_stiffness3(a: &CsrMatrix, m: &[f64], out: &mut [f64]) {
    for r in 0..a.nrows() {
        let (cols, vals) = a.row(r);
        let mut s = [0.0; 3];
        for (&c, &v) in cols.iter().zip(vals) {
            s[0] += v * m[3 * c];
            s[1] += v * m[3 * c + 1];
            s[2] += v * m[3 * c + 2];
        }
        out[3 * r..3 * r + 3].copy_from_slice(&s);
    }
}

pub fn lumped_norm(weights: &[f64], v: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * (v[3 * i] * v[3 * i] + v[3 * i + 1] * v[3 * i + 1] + v[3 * i + 2] * v[3 * i + 2]))
        .sum::<f64>()
        .sqrt()
}

pub fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

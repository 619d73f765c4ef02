//! Error norms between multiscale and homogenized solutions and order fits.
//!
//! All norms are integrated with the degree-2 rule on the reference
//! (multiscale) mesh; fields living on other meshes are evaluated by point
//! location. Vector norms sum the squares of the components.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fem::assembly::Quadrature;
use crate::fem::field::wrap;
use crate::fem::{NodalVectorField, StructuredMesh};
use crate::reconstruct::{cell_point, nodal_hessians, NeumannCorrector};

/// Whether the `ε χ ∇∇m₀` part of the corrector gradient enters `e₁`/`e₂`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HessianTerm {
    #[default]
    Omit,
    /// Second derivatives from double gradient recovery.
    Recovered,
}

/// First-order corrector used in the `H¹` error.
#[derive(Clone, Copy, Debug)]
pub enum Corrector<'a> {
    None,
    /// `εχ(x/ε)·∇m₀` with cell correctors on the periodic cell mesh.
    Chi {
        chi: &'a NodalVectorField,
        n_periods: usize,
    },
    /// `(Φ^ε − x)·∇m₀`.
    Neumann(&'a NeumannCorrector),
}

/// Errors of one `(n_periods, step)` pair. Missing entries are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorRecord {
    pub n_periods: usize,
    pub step: usize,
    pub e0: Option<f64>,
    pub re0: Option<f64>,
    pub e1: Option<f64>,
    pub re1: Option<f64>,
    pub e2: Option<f64>,
    pub re2: Option<f64>,
}

impl ErrorRecord {
    pub fn epsilon(&self) -> f64 {
        1.0 / self.n_periods as f64
    }
}

fn same_mesh(a: &StructuredMesh, b: &StructuredMesh) -> bool {
    a.dim() == b.dim() && a.cells() == b.cells() && a.bc() == b.bc()
}

fn check_domains(a: &NodalVectorField, b: &NodalVectorField) -> Result<()> {
    if a.mesh().dim() != b.mesh().dim() || a.components() != b.components() {
        return Err(Error::Consistency(format!(
            "cannot compare a {}-component field in {}D with a {}-component field in {}D",
            a.components(),
            a.mesh().dim(),
            b.components(),
            b.mesh().dim()
        )));
    }
    Ok(())
}

/// Value and element gradient of a field at a point of the reference mesh.
struct Probe<'a> {
    field: &'a NodalVectorField,
    same: bool,
}

impl<'a> Probe<'a> {
    fn new(field: &'a NodalVectorField, reference: &StructuredMesh) -> Self {
        Probe {
            field,
            same: same_mesh(field.mesh(), reference),
        }
    }

    /// Element and barycentrics of `x` in the probed field's mesh.
    fn locate(&self, e: usize, bary: &[f64; 4], x: &[f64; 3]) -> Result<(usize, [f64; 4])> {
        if self.same {
            Ok((e, *bary))
        } else {
            self.field.mesh().locate(x)
        }
    }
}

/// Visits every quadrature point of the reference mesh with
/// `(element, barycentrics, point, weight)`.
fn for_each_point<F>(mesh: &StructuredMesh, mut f: F) -> Result<()>
where
    F: FnMut(usize, &[f64; 4], &[f64; 3], f64) -> Result<()>,
{
    let quad = Quadrature::degree2(mesh.dim());
    for e in 0..mesh.n_elements() {
        let vol = mesh.volume(e);
        for (p, w) in quad.points.iter().zip(&quad.weights) {
            let x = mesh.map_point(e, p);
            f(e, p, &x, vol * w)?;
        }
    }
    Ok(())
}

/// `‖reference − approx‖_{L²}` on the reference mesh.
pub fn error_l2(reference: &NodalVectorField, approx: &NodalVectorField) -> Result<f64> {
    check_domains(reference, approx)?;
    let k = reference.components();
    let probe = Probe::new(approx, reference.mesh());
    let mut acc = 0.0;
    for_each_point(reference.mesh(), |e, bary, x, w| {
        let r = reference.value_in(e, bary);
        let (ea, ba) = probe.locate(e, bary, x)?;
        let a = approx.value_in(ea, &ba);
        acc += w * (0..k).map(|c| (r[c] - a[c]).powi(2)).sum::<f64>();
        Ok(())
    })?;
    Ok(acc.sqrt())
}

pub fn norm_l2(field: &NodalVectorField) -> f64 {
    let k = field.components();
    let mut acc = 0.0;
    for_each_point(field.mesh(), |e, bary, _, w| {
        let v = field.value_in(e, bary);
        acc += w * (0..k).map(|c| v[c] * v[c]).sum::<f64>();
        Ok(())
    })
    .expect("integration on the field's own mesh cannot fail");
    acc.sqrt()
}

pub fn norm_h1(field: &NodalVectorField) -> f64 {
    let mesh = field.mesh();
    let k = field.components().min(3);
    let semi: f64 = (0..mesh.n_elements())
        .map(|e| {
            let g = field.element_gradient(e);
            mesh.volume(e) * (0..k).map(|c| g[c].iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
        })
        .sum();
    (norm_l2(field).powi(2) + semi).sqrt()
}

/// `‖m^ε − m₀ − corrector·∇m₀‖_{H¹}` on the reference mesh.
///
/// The gradient of the corrector term uses the chain rule:
/// `(∇_yχ)(x/ε)·∇m₀`, or `∇(Φ−x)·∇m₀` for the Neumann corrector, plus the
/// optional second-derivative part. `∇m₀` inside the corrector is the
/// recovered nodal gradient; the `−∇m₀` term uses the element gradient.
pub fn error_h1_corrected(
    reference: &NodalVectorField,
    m0: &NodalVectorField,
    corrector: Corrector<'_>,
    hessian: HessianTerm,
) -> Result<f64> {
    check_domains(reference, m0)?;
    if reference.components() != 3 {
        return Err(Error::Consistency("H¹ errors are defined for 3-vector fields".into()));
    }
    let mesh = reference.mesh();
    let d = mesh.dim();
    let p0 = Probe::new(m0, mesh);
    let rec = m0.recover_gradient();
    let hess = match (hessian, corrector) {
        (HessianTerm::Recovered, Corrector::Chi { .. } | Corrector::Neumann(_)) => Some(nodal_hessians(m0)?),
        _ => None,
    };
    let (psi_probe, chi_dim) = match corrector {
        Corrector::Neumann(nc) => {
            if nc.psi.mesh().dim() != d {
                return Err(Error::Consistency("Neumann corrector dimension differs".into()));
            }
            (Some(Probe::new(&nc.psi, mesh)), d)
        }
        Corrector::Chi { chi, .. } => {
            if chi.components() != d || chi.mesh().dim() != d {
                return Err(Error::Consistency("cell corrector dimension differs".into()));
            }
            (None, d)
        }
        Corrector::None => (None, 0),
    };
    let mut acc = 0.0;
    for_each_point(mesh, |e, bary, x, w| {
        let m = reference.value_in(e, bary);
        let gm = reference.element_gradient(e);
        let (e0, b0) = p0.locate(e, bary, x)?;
        let v0 = m0.value_in(e0, &b0);
        let g0 = m0.element_gradient(e0);
        // r[c][j] = recovered ∂_j m0_c at x
        let rv = rec.value_in(e0, &b0);
        let r = |c: usize, j: usize| rv[c * d + j];
        let h = |c: usize, j: usize, k: usize| -> f64 {
            match &hess {
                Some(hs) => {
                    let dofs = m0.mesh().element_dofs(e0);
                    (0..=d).map(|l| b0[l] * hs[dofs[l]][c][j][k]).sum()
                }
                None => 0.0,
            }
        };
        // corrector values s[j] and gradients gs[j][k] of the scalar weights
        // multiplying ∂_j m0, plus the scale applied to the Hessian part
        let mut s = [0.0; 3];
        let mut gs = [[0.0; 3]; 3];
        match corrector {
            Corrector::None => {}
            Corrector::Chi { chi, n_periods } => {
                let eps = 1.0 / n_periods as f64;
                let y = wrap(&cell_point(x, n_periods), d);
                let (ce, cb) = chi.mesh().locate(&y)?;
                let cv = chi.value_in(ce, &cb);
                let cg = chi.element_gradient(ce);
                for j in 0..chi_dim {
                    s[j] = eps * cv[j];
                    gs[j] = cg[j];
                }
            }
            Corrector::Neumann(nc) => {
                let probe = psi_probe.as_ref().expect("probe set for Neumann corrector");
                let (pe, pb) = probe.locate(e, bary, x)?;
                let pv = nc.psi.value_in(pe, &pb);
                let pg = nc.psi.element_gradient(pe);
                s[..chi_dim].copy_from_slice(&pv[..chi_dim]);
                gs[..chi_dim].copy_from_slice(&pg[..chi_dim]);
            }
        }
        let mut sq = 0.0;
        for c in 0..3 {
            let corr: f64 = (0..chi_dim).map(|j| s[j] * r(c, j)).sum();
            sq += (m[c] - v0[c] - corr).powi(2);
            for k in 0..d {
                let mut gc: f64 = (0..chi_dim).map(|j| gs[j][k] * r(c, j)).sum();
                if hess.is_some() {
                    gc += (0..chi_dim).map(|j| s[j] * h(c, j, k)).sum::<f64>();
                }
                sq += (gm[c][k] - g0[c][k] - gc).powi(2);
            }
        }
        acc += w * sq;
        Ok(())
    })?;
    Ok(acc.sqrt())
}

/// Least-squares slope of `ln(err)` against `ln(ε)`.
pub fn fit_order(records: &[(f64, f64)]) -> Result<f64> {
    if records
        .iter()
        .any(|&(e, r)| !(e > 0.0 && e.is_finite() && r > 0.0 && r.is_finite()))
    {
        return Err(Error::Fit("all ε and errors must be positive and finite".into()));
    }
    let xs: Vec<f64> = records.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if xs.len() < 2 || sxx <= 1e-24 {
        return Err(Error::Fit("need at least two distinct ε values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slopes per step index and quantity (`e0`, `e1`, `e2`) over the records.
pub fn fit_orders(records: &[ErrorRecord]) -> Vec<(usize, &'static str, f64)> {
    let mut steps: Vec<usize> = records.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let mut out = Vec::new();
    for j in steps {
        let at: Vec<&ErrorRecord> = records.iter().filter(|r| r.step == j).collect();
        let pick: [(&'static str, fn(&ErrorRecord) -> Option<f64>); 3] =
            [("e0", |r| r.e0), ("e1", |r| r.e1), ("e2", |r| r.e2)];
        for (name, get) in pick {
            let pts: Vec<(f64, f64)> = at.iter().filter_map(|r| get(r).map(|v| (r.epsilon(), v))).collect();
            if let Ok(slope) = fit_order(&pts) {
                out.push((j, name, slope));
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

pub fn write_errors_csv<W: Write>(mut w: W, records: &[ErrorRecord]) -> Result<()> {
    writeln!(w, "n,j,e0,re0,e1,re1,e2,re2")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n_periods,
            r.step,
            opt(r.e0),
            opt(r.re0),
            opt(r.e1),
            opt(r.re1),
            opt(r.e2),
            opt(r.re2)
        )?;
    }
    Ok(())
}

pub fn write_orders_csv<W: Write>(mut w: W, orders: &[(usize, &str, f64)]) -> Result<()> {
    writeln!(w, "j,quantity,slope")?;
    for (j, q, s) in orders {
        writeln!(w, "{j},{q},{s:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_mass, assemble_stiffness, identity_tensor};
    use crate::fem::BoundaryKind;
    use std::sync::Arc;

    fn mesh(dim: usize, n: usize, bc: BoundaryKind) -> Arc<StructuredMesh> {
        Arc::new(StructuredMesh::new(dim, n, bc).unwrap())
    }

    fn smooth(m: Arc<StructuredMesh>) -> NodalVectorField {
        NodalVectorField::from_fn(m, |x| [(3.0 * x[0]).sin(), x[0] * x[1], (2.0 * x[1]).cos()])
    }

    #[test]
    fn trivial_l2_cases() {
        let m = mesh(2, 10, BoundaryKind::Neumann);
        let u = smooth(m.clone());
        assert_eq!(error_l2(&u, &u).unwrap(), 0.0);
        let shifted = NodalVectorField::from_fn(m, |x| {
            let v = [(3.0 * x[0]).sin(), x[0] * x[1], (2.0 * x[1]).cos()];
            [v[0] + 0.3, v[1], v[2]]
        });
        assert!((error_l2(&u, &shifted).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn transfer_to_own_mesh_is_exact() {
        let m = mesh(2, 9, BoundaryKind::Periodic);
        let u = NodalVectorField::from_fn(m.clone(), |x| {
            let t = std::f64::consts::TAU;
            [(t * x[0]).sin(), (t * x[1]).cos(), 0.0]
        });
        let v = u.transfer(m, false).unwrap();
        assert!(error_l2(&u, &v).unwrap() < 1e-12);
    }

    #[test]
    fn h1_without_corrector_matches_quadratic_forms() {
        let m = mesh(2, 8, BoundaryKind::Neumann);
        let u = smooth(m.clone());
        let v = NodalVectorField::from_fn(m.clone(), |x| [x[0], x[1] * x[1], 0.5]);
        let e = error_h1_corrected(&u, &v, Corrector::None, HessianTerm::Omit).unwrap();
        let k = assemble_stiffness(&m, |_| identity_tensor()).unwrap().matrix;
        let mass = assemble_mass(&m, false).matrix;
        let d = u.combine(1.0, &v, -1.0).unwrap();
        let mut total = 0.0;
        for c in 0..3 {
            let dc = d.component(c);
            total += k.quadratic_form(&dc) + mass.quadratic_form(&dc);
        }
        assert!((e - total.sqrt()).abs() < 1e-10);
        assert_eq!(
            error_h1_corrected(&u, &u, Corrector::None, HessianTerm::Recovered).unwrap(),
            0.0
        );
    }

    #[test]
    fn cross_mesh_comparison() {
        let fine = smooth(mesh(2, 30, BoundaryKind::Neumann));
        let coarse = smooth(mesh(2, 24, BoundaryKind::Neumann));
        let e = error_l2(&fine, &coarse).unwrap();
        assert!(e > 0.0 && e < 1e-2);
        let three = smooth(mesh(3, 4, BoundaryKind::Neumann));
        assert!(error_l2(&fine, &three).is_err());
    }

    #[test]
    fn fit_exact_power_laws() {
        let eps: Vec<f64> = (2..=6).map(|n| 1.0 / n as f64).collect();
        let lin: Vec<(f64, f64)> = eps.iter().map(|&e| (e, e)).collect();
        assert!((fit_order(&lin).unwrap() - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = eps.iter().map(|&e| (e, 0.7)).collect();
        assert!(fit_order(&flat).unwrap().abs() < 1e-12);
        assert!(fit_order(&[(0.5, 1.0)]).is_err());
        assert!(fit_order(&[(0.5, 1.0), (0.5, 2.0)]).is_err());
        assert!(fit_order(&[(0.5, 1.0), (0.25, 0.0)]).is_err());
    }

    #[test]
    fn csv_layout() {
        let recs = vec![ErrorRecord {
            n_periods: 2,
            step: 10,
            e0: Some(0.1),
            re0: Some(0.1),
            ..Default::default()
        }];
        let mut buf = Vec::new();
        write_errors_csv(&mut buf, &recs).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "n,j,e0,re0,e1,re1,e2,re2");
        assert!(s.lines().nth(1).unwrap().ends_with(",,,,"));
    }
}

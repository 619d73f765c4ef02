//! Implicit midpoint time stepping with two inner fixed-point iterations.
//!
//! Each inner iterate solves one nonsymmetric `3N×3N` system (divided by
//! the lumped weights, so it acts nodewise):
//!
//! ```text
//! original:  m − α mʲ×m + τ[m×(h(mˡ) + h(mʲ)) + mʲ×Hm]
//! improved:  m − α mʲ×m + τ[mˡ×Hm + m×h(mʲ) + mʲ×Hm]
//! ```
//!
//! with `τ = (1+α²)Δt/4` and `h(m) = Hm + z` split into its linear part and
//! the constant Zeeman part `z`. The improved form puts the stiff exchange
//! operator on the unknown in both cross terms, which is what makes its
//! inner iteration contract for large steps.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use super::model::{cross, Model};
use crate::error::{Error, Result};
use crate::fem::solve::{bicgstab, BlockJacobi3, LinearOperator, SolverOptions};
use crate::fem::NodalVectorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Original,
    Improved,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Original => "original",
            Scheme::Improved => "improved",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "original" => Ok(Scheme::Original),
            "improved" => Ok(Scheme::Improved),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Outcome of the inner iteration of one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats {
    /// Number of linear solves performed.
    pub iterations: usize,
    /// Last increment `‖mˡ⁺¹ − mˡ‖_h`.
    pub residual: f64,
    pub wall_ms: f64,
    pub converged: bool,
    pub history: Vec<f64>,
    /// Krylov iterations summed over the inner solves.
    pub krylov_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub threshold: f64,
    pub max_iter: usize,
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
    /// Increments above this are treated as divergence.
    pub divergence_limit: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            threshold: 1e-8,
            max_iter: 100,
            krylov_tol: 1e-10,
            krylov_max_iter: 3000,
            divergence_limit: 1e3,
        }
    }
}

struct InnerOperator<'a> {
    model: &'a Model,
    alpha: f64,
    tau: f64,
    mj: &'a [f64],
    /// field crossed with the unknown: `h(mˡ)+h(mʲ)` or `h(mʲ)`
    hsum: Vec<f64>,
    /// vector crossed with `H m`: `mʲ` or `mˡ + mʲ`
    cvec: Vec<f64>,
    scratch: RefCell<Vec<f64>>,
}

impl LinearOperator for InnerOperator<'_> {
    fn dim(&self) -> usize {
        self.mj.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut hx = self.scratch.borrow_mut();
        self.model.linear_field(x, &mut hx);
        for i in 0..x.len() / 3 {
            let s = 3 * i..3 * i + 3;
            let xi = &x[s.clone()];
            let a = cross(&self.mj[s.clone()], xi);
            let b = cross(xi, &self.hsum[s.clone()]);
            let c = cross(&self.cvec[s.clone()], &hx[s.clone()]);
            for k in 0..3 {
                y[3 * i + k] = xi[k] - self.alpha * a[k] + self.tau * (b[k] + c[k]);
            }
        }
    }
}

impl InnerOperator<'_> {
    fn preconditioner(&self) -> BlockJacobi3 {
        let n = self.mj.len() / 3;
        let blocks: Vec<[[f64; 3]; 3]> = (0..n)
            .map(|i| {
                let s = 3 * i..3 * i + 3;
                let mj = skew(&self.mj[s.clone()]);
                let hs = skew(&self.hsum[s.clone()]);
                let cv = skew(&self.cvec[s]);
                let d = self.model.diag_block(i);
                let cd = matmul(&cv, &d);
                let mut b = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        let id = if r == c { 1.0 } else { 0.0 };
                        b[r][c] = id - self.alpha * mj[r][c] + self.tau * (-hs[r][c] + cd[r][c]);
                    }
                }
                b
            })
            .collect();
        BlockJacobi3::new(&blocks)
    }
}

/// Matrix of `x ↦ a × x`.
fn skew(a: &[f64]) -> [[f64; 3]; 3] {
    [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            for l in 0..3 {
                c[r][k] += a[r][l] * b[l][k];
            }
        }
    }
    c
}

/// Largest step for which the original iteration is known to be uniquely
/// solvable, `h² / (10(1+α²))`.
pub fn original_step_bound(h: f64, alpha: f64) -> f64 {
    h * h / (10.0 * (1.0 + alpha * alpha))
}

/// One implicit midpoint step on interleaved nodal values.
///
/// On failure returns [`Error::NonConvergence`] carrying the statistics.
pub fn step_values(
    model: &Model,
    mj: &[f64],
    dt: f64,
    scheme: Scheme,
    opts: &StepOptions,
) -> Result<(Vec<f64>, IterationStats)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let start = Instant::now();
    let n3 = mj.len();
    let alpha = model.alpha();
    let tau = (1.0 + alpha * alpha) * dt / 4.0;
    let z = model.zeeman_field();
    let hj = model.effective_field_values(mj);
    let mut ml = mj.to_vec();
    let mut stats = IterationStats::default();
    let krylov = SolverOptions {
        tol: opts.krylov_tol,
        max_iter: opts.krylov_max_iter,
    };
    let finish = |mut stats: IterationStats, converged: bool| {
        stats.converged = converged;
        stats.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        stats
    };
    for _ in 0..opts.max_iter {
        let (hsum, cvec) = match scheme {
            Scheme::Original => {
                let hl = model.effective_field_values(&ml);
                (hl.iter().zip(&hj).map(|(a, b)| a + b).collect(), mj.to_vec())
            }
            Scheme::Improved => (hj.clone(), ml.iter().zip(mj).map(|(a, b)| a + b).collect()),
        };
        // rhs = mʲ − τ mʲ×h(mʲ) − τ c×z
        let mut rhs = vec![0.0; n3];
        for i in 0..n3 / 3 {
            let s = 3 * i..3 * i + 3;
            let a = cross(&mj[s.clone()], &hj[s.clone()]);
            let b = cross(&cvec[s.clone()], &z[s.clone()]);
            for k in 0..3 {
                rhs[3 * i + k] = mj[3 * i + k] - tau * (a[k] + b[k]);
            }
        }
        let op = InnerOperator {
            model,
            alpha,
            tau,
            mj,
            hsum,
            cvec,
            scratch: RefCell::new(vec![0.0; n3]),
        };
        let pre = op.preconditioner();
        // solve for the update so the Krylov tolerance is relative to the
        // current fixed-point residual rather than to the whole right-hand side
        let mut res = vec![0.0; n3];
        op.apply(&ml, &mut res);
        for (r, b) in res.iter_mut().zip(&rhs) {
            *r = b - *r;
        }
        let mut delta = vec![0.0; n3];
        stats.iterations += 1;
        match bicgstab(&op, &pre, &res, &mut delta, &krylov) {
            Ok(r) => stats.krylov_iterations += r.iterations,
            Err(e) => {
                log::debug!("inner linear solve failed: {e}");
                stats.residual = f64::INFINITY;
                return Err(Error::NonConvergence(finish(stats, false)));
            }
        }
        let inc = model.lumped_norm(&delta);
        stats.history.push(inc);
        stats.residual = inc;
        for (m, d) in ml.iter_mut().zip(&delta) {
            *m += d;
        }
        if !inc.is_finite() || inc > opts.divergence_limit {
            return Err(Error::NonConvergence(finish(stats, false)));
        }
        if inc <= opts.threshold {
            return Ok((ml, finish(stats, true)));
        }
    }
    Err(Error::NonConvergence(finish(stats, false)))
}

/// One implicit midpoint step of a magnetization field.
pub fn step(
    model: &Model,
    mj: &NodalVectorField,
    dt: f64,
    scheme: Scheme,
    opts: &StepOptions,
) -> Result<(NodalVectorField, IterationStats)> {
    model.check_field(mj)?;
    warn_step_bound(model, dt, scheme);
    let (v, stats) = step_values(model, mj.values(), dt, scheme, opts)?;
    Ok((NodalVectorField::new(mj.mesh().clone(), 3, v)?, stats))
}

fn warn_step_bound(model: &Model, dt: f64, scheme: Scheme) {
    if scheme == Scheme::Original {
        let bound = original_step_bound(model.mesh().h(), model.alpha());
        if dt > bound {
            log::warn!("time step {dt:e} exceeds the original scheme's solvability bound {bound:e}");
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub dt: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub step: StepOptions,
    /// Keep every `snapshot_stride`-th field (0 keeps only the initial one).
    pub snapshot_stride: usize,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// `(step index, field)` pairs, starting with step 0.
    pub snapshots: Vec<(usize, NodalVectorField)>,
    pub stats: Vec<IterationStats>,
    pub final_field: NodalVectorField,
}

impl Trajectory {
    pub fn mean_iterations(&self) -> f64 {
        if self.stats.is_empty() {
            return 0.0;
        }
        self.stats.iter().map(|s| s.iterations as f64).sum::<f64>() / self.stats.len() as f64
    }

    pub fn wall_ms(&self) -> f64 {
        self.stats.iter().map(|s| s.wall_ms).sum()
    }
}

/// Time loop calling `visit(j, m_j)` for `j = 0..=steps`.
pub fn run_with<F>(
    m_init: &NodalVectorField,
    model: &Model,
    opts: &RunOptions,
    mut visit: F,
) -> Result<(NodalVectorField, Vec<IterationStats>)>
where
    F: FnMut(usize, &NodalVectorField) -> Result<()>,
{
    model.check_field(m_init)?;
    warn_step_bound(model, opts.dt, opts.scheme);
    let mesh = m_init.mesh().clone();
    let mut m = m_init.values().to_vec();
    visit(0, m_init)?;
    let mut all = Vec::with_capacity(opts.steps);
    for j in 1..=opts.steps {
        let (next, stats) = step_values(model, &m, opts.dt, opts.scheme, &opts.step).map_err(|e| Error::Step {
            step: j,
            source: Box::new(e),
        })?;
        log::trace!("step {j}: {} inner iterations", stats.iterations);
        all.push(stats);
        m = next;
        let f = NodalVectorField::new(mesh.clone(), 3, m.clone())?;
        visit(j, &f)?;
    }
    Ok((NodalVectorField::new(mesh, 3, m)?, all))
}

/// Time loop keeping snapshots at the configured stride.
pub fn run(m_init: &NodalVectorField, model: &Model, opts: &RunOptions) -> Result<Trajectory> {
    let mut snapshots = Vec::new();
    let stride = opts.snapshot_stride;
    let (final_field, stats) = run_with(m_init, model, opts, |j, m| {
        if j == 0 || (stride > 0 && j % stride == 0) {
            snapshots.push((j, m.clone()));
        }
        Ok(())
    })?;
    Ok(Trajectory {
        snapshots,
        stats,
        final_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{HomogenizedCoefficients, PeriodicCoefficientSet};
    use crate::fem::assembly::scaled_identity;
    use crate::fem::{BoundaryKind, StructuredMesh};
    use crate::llg::init::bubble;
    use crate::llg::model::{ModelSpec, Scale, Terms};
    use std::sync::Arc;

    fn mesh(n: usize, bc: BoundaryKind) -> Arc<StructuredMesh> {
        Arc::new(StructuredMesh::new(2, n, bc).unwrap())
    }

    fn zeeman_model(ha: [f64; 3], alpha: f64) -> Model {
        let mut coeffs = PeriodicCoefficientSet::constant(2, 1.0);
        coeffs.applied_field = ha;
        let homog = HomogenizedCoefficients {
            dim: 2,
            a0: scaled_identity(1.0),
            mu0: 1.0,
            k0: 0.0,
            m0: 1.0,
            mt0: 1.0,
            hd0: [[0.0; 3]; 3],
        };
        let spec = ModelSpec {
            scale: Scale::Homogenized,
            terms: Terms {
                zeeman: true,
                ..Terms::exchange_only()
            },
            alpha,
            dim: 2,
            coeffs,
            homog: Some(homog),
        };
        Model::new(spec, mesh(4, BoundaryKind::Neumann)).unwrap()
    }

    fn macrospin_rhs(m: &[f64; 3], h: &[f64; 3], alpha: f64) -> [f64; 3] {
        let mh = cross(m, h);
        let mmh = cross(m, &mh);
        [0, 1, 2].map(|k| -mh[k] - alpha * mmh[k])
    }

    fn rk4(mut m: [f64; 3], h: &[f64; 3], alpha: f64, t: f64, steps: usize) -> [f64; 3] {
        let dt = t / steps as f64;
        for _ in 0..steps {
            let k1 = macrospin_rhs(&m, h, alpha);
            let k2 = macrospin_rhs(&[0, 1, 2].map(|i| m[i] + 0.5 * dt * k1[i]), h, alpha);
            let k3 = macrospin_rhs(&[0, 1, 2].map(|i| m[i] + 0.5 * dt * k2[i]), h, alpha);
            let k4 = macrospin_rhs(&[0, 1, 2].map(|i| m[i] + dt * k3[i]), h, alpha);
            m = [0, 1, 2].map(|i| m[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        m
    }

    #[test]
    fn constant_field_is_a_fixed_point() {
        let model = Model::constant_exchange(mesh(8, BoundaryKind::Neumann), 1.0, 1.0).unwrap();
        let m = NodalVectorField::from_fn(model.mesh().clone(), |_| [0.0, 0.6, 0.8]);
        for scheme in [Scheme::Original, Scheme::Improved] {
            let (next, stats) = step(&model, &m, 1e-3, scheme, &StepOptions::default()).unwrap();
            assert_eq!(stats.iterations, 1);
            assert!(stats.converged);
            assert!(next.combine(1.0, &m, -1.0).unwrap().max_norm() < 1e-14);
        }
    }

    #[test]
    fn macrospin_matches_reference() {
        let (ha, alpha, dt, steps) = ([0.3, 0.0, 1.0], 0.5, 1e-3, 100);
        let model = zeeman_model(ha, alpha);
        let m0 = [0.8, 0.0, -0.6];
        let init = NodalVectorField::from_fn(model.mesh().clone(), |_| m0);
        let reference = rk4(m0, &ha, alpha, dt * steps as f64, 20000);
        let opts = RunOptions {
            dt,
            steps,
            scheme: Scheme::Improved,
            step: StepOptions {
                threshold: 1e-13,
                ..Default::default()
            },
            snapshot_stride: 0,
        };
        let traj = run(&init, &model, &opts).unwrap();
        let m = traj.final_field.vec3(5);
        let err = (0..3).map(|k| (m[k] - reference[k]).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-4, "macrospin error {err}");
    }

    #[test]
    fn damping_aligns_with_applied_field() {
        let ha = [0.0, 0.0, 2.0];
        let model = zeeman_model(ha, 1.0);
        let init = NodalVectorField::from_fn(model.mesh().clone(), |_| [1.0, 0.0, 0.0]);
        let mut last = f64::INFINITY;
        let opts = RunOptions {
            dt: 0.05,
            steps: 40,
            scheme: Scheme::Improved,
            step: StepOptions::default(),
            snapshot_stride: 0,
        };
        run_with(&init, &model, &opts, |_, m| {
            let v = m.vec3(0);
            let angle = (v[2] / v.iter().map(|x| x * x).sum::<f64>().sqrt()).acos();
            assert!(angle <= last + 1e-12);
            last = angle;
            Ok(())
        })
        .unwrap();
        assert!(last < 0.2);
    }

    #[test]
    fn schemes_agree_at_tight_threshold() {
        let model = Model::constant_exchange(mesh(16, BoundaryKind::Neumann), 1.0, 1.0).unwrap();
        let m = NodalVectorField::from_fn(model.mesh().clone(), bubble);
        let opts = StepOptions {
            threshold: 1e-12,
            krylov_tol: 1e-13,
            ..Default::default()
        };
        let dt = 1e-4;
        let (a, sa) = step(&model, &m, dt, Scheme::Original, &opts).unwrap();
        let (b, sb) = step(&model, &m, dt, Scheme::Improved, &opts).unwrap();
        assert!(sa.converged && sb.converged);
        let d = a.combine(1.0, &b, -1.0).unwrap();
        assert!(model.lumped_norm(d.values()) < 1e-8);
    }

    #[test]
    fn norms_conserved_and_energy_decays() {
        let model = Model::constant_exchange(mesh(16, BoundaryKind::Neumann), 1.0, 1.0).unwrap();
        let m = NodalVectorField::from_fn(model.mesh().clone(), bubble);
        let opts = RunOptions {
            dt: 1e-3,
            steps: 10,
            scheme: Scheme::Improved,
            step: StepOptions::default(),
            snapshot_stride: 0,
        };
        let mut prev: Option<NodalVectorField> = None;
        run_with(&m, &model, &opts, |_, cur| {
            if let Some(p) = &prev {
                for dof in 0..cur.n_dofs() {
                    let r = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!((r(cur.vec3(dof)) - r(p.vec3(dof))).abs() <= 10.0 * opts.step.threshold);
                }
                let (e0, e1) = (model.discrete_energy(p)?, model.discrete_energy(cur)?);
                assert!(e1 <= e0 + 10.0 * opts.step.threshold, "{e1} > {e0}");
            }
            prev = Some(cur.clone());
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn zero_steps_return_initial_field() {
        let model = Model::constant_exchange(mesh(4, BoundaryKind::Periodic), 1.0, 1.0).unwrap();
        let m = NodalVectorField::from_fn(model.mesh().clone(), bubble);
        let opts = RunOptions {
            dt: 1e-3,
            steps: 0,
            scheme: Scheme::Improved,
            step: StepOptions::default(),
            snapshot_stride: 1,
        };
        let t = run(&m, &model, &opts).unwrap();
        assert_eq!(t.final_field, m);
        assert_eq!(t.snapshots.len(), 1);
        assert!(t.stats.is_empty());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("improved".parse::<Scheme>().unwrap(), Scheme::Improved);
        assert_eq!(Scheme::Original.to_string(), "original");
        assert!("midpoint".parse::<Scheme>().is_err());
    }

    #[test]
    fn iteration_cap_reports_stats() {
        let model = Model::constant_exchange(mesh(16, BoundaryKind::Neumann), 1.0, 1.0).unwrap();
        let m = NodalVectorField::from_fn(model.mesh().clone(), bubble);
        let opts = StepOptions {
            max_iter: 2,
            threshold: 1e-14,
            ..Default::default()
        };
        match step(&model, &m, 1e-2, Scheme::Original, &opts) {
            Err(Error::NonConvergence(s)) => {
                assert!(!s.converged && s.iterations <= 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}

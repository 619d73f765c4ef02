//! Experiment drivers: convergence study, scheme benchmark, Algorithm 1
//! and single runs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, InitMethod, RunScale};
use crate::analysis::{
    error_h1_corrected, error_l2, fit_orders, norm_h1, norm_l2, write_errors_csv, write_orders_csv, Corrector,
    ErrorRecord,
};
use crate::cell::{solve_all, CellSolutions, HomogenizedCoefficients, PeriodicCoefficientSet};
use crate::error::{Error, Result};
use crate::fem::snapshot::save_snapshot;
use crate::fem::{BoundaryKind, NodalVectorField, StructuredMesh};
use crate::llg::{
    bubble_field, initial_expansion, initial_projection, run_with, step, IterationStats, Model, ModelSpec,
    ProjectionOptions, RunOptions, Scale, Scheme, StepOptions,
};
use crate::reconstruct::{self, neumann_corrector, NeumannCorrector};

/// Cell solutions and homogenized coefficients shared by all stages.
#[derive(Clone, Debug)]
pub struct CellStage {
    pub coeffs: PeriodicCoefficientSet,
    pub cell: CellSolutions,
    pub homog: HomogenizedCoefficients,
}

pub fn cell_stage(cfg: &ExperimentConfig, second: bool) -> Result<CellStage> {
    let coeffs = cfg.coefficient_set()?;
    let (cell, homog) = solve_all(&coeffs, cfg.cell_n, second).map_err(|e| e.in_stage("cell problems"))?;
    log::info!(
        "homogenized coefficients: a0 diagonal {:?}",
        (0..cfg.dim).map(|i| homog.a0[i][i]).collect::<Vec<_>>()
    );
    Ok(CellStage { coeffs, cell, homog })
}

fn mesh(cfg: &ExperimentConfig, cells: usize) -> Result<Arc<StructuredMesh>> {
    Ok(Arc::new(StructuredMesh::new(cfg.dim, cells, cfg.bc)?))
}

fn model(cfg: &ExperimentConfig, stage: &CellStage, scale: Scale, mesh: Arc<StructuredMesh>) -> Result<Model> {
    let spec = ModelSpec {
        scale,
        terms: cfg.terms,
        alpha: cfg.alpha,
        dim: cfg.dim,
        coeffs: stage.coeffs.clone(),
        homog: Some(stage.homog.clone()),
    };
    Model::new(spec, mesh)
}

fn run_options(cfg: &ExperimentConfig, steps: usize) -> RunOptions {
    RunOptions {
        dt: cfg.dt,
        steps,
        scheme: cfg.scheme,
        step: StepOptions {
            threshold: cfg.threshold,
            max_iter: cfg.max_iter,
            ..Default::default()
        },
        snapshot_stride: 0,
    }
}

/// Runs `model` from `init` and keeps the fields at the checkpoints.
fn checkpoint_run(
    cfg: &ExperimentConfig,
    model: &Model,
    init: &NodalVectorField,
) -> Result<(Vec<(usize, NodalVectorField)>, Vec<IterationStats>)> {
    let last = *cfg.checkpoints.last().expect("validated non-empty");
    let mut out = Vec::new();
    let (_, stats) = run_with(init, model, &run_options(cfg, last), |j, m| {
        if cfg.checkpoints.contains(&j) {
            out.push((j, m.clone()));
        }
        Ok(())
    })?;
    Ok((out, stats))
}

/// Homogenized solution at the checkpoints, started from the bubble.
pub fn homogenized_checkpoints(cfg: &ExperimentConfig, stage: &CellStage) -> Result<Vec<(usize, NodalVectorField)>> {
    let mesh = mesh(cfg, cfg.hom_cells)?;
    let model = model(cfg, stage, Scale::Homogenized, mesh.clone())?;
    let init = bubble_field(mesh);
    checkpoint_run(cfg, &model, &init)
        .map(|r| r.0)
        .map_err(|e| e.in_stage("homogenized run"))
}

/// Multiscale initial data on the reference mesh, with the Neumann
/// corrector when the boundary requires one.
pub fn reference_initial(
    cfg: &ExperimentConfig,
    stage: &CellStage,
    n: usize,
) -> Result<(NodalVectorField, Option<NeumannCorrector>)> {
    let mesh = mesh(cfg, cfg.ref_cells)?;
    let m0 = bubble_field(mesh.clone());
    let nc = match cfg.bc {
        BoundaryKind::Neumann => Some(neumann_corrector(mesh, &stage.coeffs, &stage.homog, n)?),
        BoundaryKind::Periodic => None,
    };
    let expanded = initial_expansion(&m0, Some((&stage.cell.chi, n)), nc.as_ref())?;
    let init = match cfg.init {
        InitMethod::Expansion => expanded,
        InitMethod::Projection => {
            initial_projection(
                &m0,
                &expanded,
                &stage.coeffs,
                &stage.homog,
                n,
                &ProjectionOptions::default(),
            )?
            .0
        }
    };
    Ok((init, nc))
}

fn error_record(
    cfg: &ExperimentConfig,
    stage: &CellStage,
    n: usize,
    j: usize,
    reference: &NodalVectorField,
    m0: &NodalVectorField,
    nc: Option<&NeumannCorrector>,
) -> Result<ErrorRecord> {
    let e0 = error_l2(reference, m0)?;
    let l2 = norm_l2(reference);
    let h1 = norm_h1(reference);
    let mut rec = ErrorRecord {
        n_periods: n,
        step: j,
        e0: Some(e0),
        re0: Some(e0 / l2),
        ..Default::default()
    };
    match nc {
        Some(nc) => {
            let e2 = error_h1_corrected(reference, m0, Corrector::Neumann(nc), cfg.hessian)?;
            rec.e2 = Some(e2);
            rec.re2 = Some(e2 / h1);
        }
        None => {
            let corr = Corrector::Chi {
                chi: &stage.cell.chi,
                n_periods: n,
            };
            let e1 = error_h1_corrected(reference, m0, corr, cfg.hessian)?;
            rec.e1 = Some(e1);
            rec.re1 = Some(e1 / h1);
        }
    }
    Ok(rec)
}

/// Reference run for one `n` and its errors at every checkpoint.
pub fn reference_errors(
    cfg: &ExperimentConfig,
    stage: &CellStage,
    n: usize,
    hom: &[(usize, NodalVectorField)],
) -> Result<Vec<ErrorRecord>> {
    let (init, nc) = reference_initial(cfg, stage, n).map_err(|e| e.in_stage("initial data"))?;
    let model = model(cfg, stage, Scale::Multiscale { n_periods: n }, init.mesh().clone())?;
    let last = *cfg.checkpoints.last().expect("validated non-empty");
    let mut records = Vec::new();
    run_with(&init, &model, &run_options(cfg, last), |j, m| {
        if let Some((_, m0)) = hom.iter().find(|(k, _)| *k == j) {
            records.push(error_record(cfg, stage, n, j, m, m0, nc.as_ref())?);
        }
        Ok(())
    })
    .map_err(|e| e.in_stage("reference run"))?;
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub homog: HomogenizedCoefficients,
    pub records: Vec<ErrorRecord>,
    pub orders: Vec<(usize, &'static str, f64)>,
    /// `(n, message)` for reference runs that did not converge.
    pub failures: Vec<(usize, String)>,
}

/// Errors for every `n` and checkpoint and the fitted orders.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let stage = cell_stage(cfg, false)?;
    let hom = homogenized_checkpoints(cfg, &stage)?;
    let per_n: Vec<(usize, Result<Vec<ErrorRecord>>)> = cfg
        .n_periods
        .par_iter()
        .map(|&n| (n, reference_errors(cfg, &stage, n, &hom)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in per_n {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) if e.is_non_convergence() => {
                log::warn!("reference run for n = {n} failed: {e}");
                failures.push((n, e.to_string()));
                records.push(ErrorRecord {
                    n_periods: n,
                    ..Default::default()
                });
            }
            Err(e) => return Err(e),
        }
    }
    let good: Vec<ErrorRecord> = records.iter().filter(|r| r.e0.is_some()).cloned().collect();
    let orders = fit_orders(&good);
    Ok(StudyResult {
        homog: stage.homog,
        records,
        orders,
        failures,
    })
}

pub fn write_study(out: &Path, study: &StudyResult) -> Result<()> {
    fs::create_dir_all(out)?;
    write_errors_csv(BufWriter::new(File::create(out.join("errors.csv"))?), &study.records)?;
    write_orders_csv(BufWriter::new(File::create(out.join("orders.csv"))?), &study.orders)?;
    fs::write(out.join("coeffs.txt"), study.homog.to_kv_string())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub dt: f64,
    pub scheme: Scheme,
    pub converged: bool,
    /// Steps completed before the first failure.
    pub steps: usize,
    pub mean_iterations: f64,
    pub wall_ms: f64,
}

/// Both inner iterations at every benchmark step size on the multiscale
/// model with the first configured `n`, starting from the bubble.
pub fn run_scheme_benchmark(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let stage = cell_stage(cfg, false)?;
    let mesh = mesh(cfg, cfg.ref_cells)?;
    let model = model(
        cfg,
        &stage,
        Scale::Multiscale {
            n_periods: cfg.n_periods[0],
        },
        mesh.clone(),
    )?;
    let init = bubble_field(mesh);
    let opts = StepOptions {
        threshold: cfg.bench_threshold,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &dt in &cfg.bench_dts {
        for scheme in [Scheme::Original, Scheme::Improved] {
            let mut m = init.clone();
            let mut iters = Vec::new();
            let mut wall = 0.0;
            let mut converged = true;
            for _ in 0..cfg.bench_steps {
                match step(&model, &m, dt, scheme, &opts) {
                    Ok((next, s)) => {
                        iters.push(s.iterations as f64);
                        wall += s.wall_ms;
                        m = next;
                    }
                    Err(Error::NonConvergence(s)) => {
                        wall += s.wall_ms;
                        converged = false;
                        break;
                    }
                    Err(e) => return Err(e.in_stage("scheme benchmark")),
                }
            }
            let mean = if iters.is_empty() {
                f64::NAN
            } else {
                iters.iter().sum::<f64>() / iters.len() as f64
            };
            log::info!("dt {dt:e} {scheme}: converged {converged}, mean iterations {mean}");
            rows.push(BenchRow {
                dt,
                scheme,
                converged,
                steps: iters.len(),
                mean_iterations: mean,
                wall_ms: wall,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "dt,scheme,converged,steps,mean_iters,wall_ms")?;
    for r in rows {
        let mean = if r.mean_iterations.is_finite() {
            format!("{:.3}", r.mean_iterations)
        } else {
            String::new()
        };
        writeln!(
            w,
            "{:e},{},{},{},{},{:.1}",
            r.dt, r.scheme, r.converged, r.steps, mean, r.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Algorithm1Output {
    pub stage: CellStage,
    pub n_periods: usize,
    /// Multiscale initial data from the expansion method.
    pub initial: NodalVectorField,
    /// `(j, m₀ʲ, m̃^{ε,j})` at each checkpoint.
    pub fields: Vec<(usize, NodalVectorField, NodalVectorField)>,
    /// Errors of the multiscale reference against `m₀` at the checkpoints.
    pub records: Vec<ErrorRecord>,
}

/// Cell problems once, homogenized time loop, correctors and the
/// second-order reconstruction for the first configured `n`, plus the
/// reference comparison.
pub fn run_algorithm1(cfg: &ExperimentConfig) -> Result<Algorithm1Output> {
    cfg.validate()?;
    let n = cfg.n_periods[0];
    let eps = 1.0 / n as f64;
    let stage = cell_stage(cfg, true)?;
    let (initial, _) = reference_initial(cfg, &stage, n).map_err(|e| e.in_stage("initial data"))?;
    let hom = homogenized_checkpoints(cfg, &stage)?;
    let mut fields = Vec::new();
    for (j, m0) in &hom {
        let build = || -> Result<NodalVectorField> {
            let m1 = reconstruct::first_order(m0, &stage.cell.chi, n)?;
            let m2 = reconstruct::second_order(m0, &stage.cell, &stage.coeffs, n, cfg.terms)?;
            reconstruct::assemble(m0, Some(&m1), Some(&m2), eps, 2)
        };
        let mt = build().map_err(|e| e.in_stage("reconstruction"))?;
        fields.push((*j, m0.clone(), mt));
    }
    let records = reference_errors(cfg, &stage, n, &hom)?;
    Ok(Algorithm1Output {
        stage,
        n_periods: n,
        initial,
        fields,
        records,
    })
}

pub fn write_algorithm1(out: &Path, result: &Algorithm1Output) -> Result<()> {
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    fs::write(out.join("coeffs.txt"), result.stage.homog.to_kv_string())?;
    save_snapshot(&snaps.join("init_multiscale.txt"), &result.initial)?;
    for (j, m0, mt) in &result.fields {
        save_snapshot(&snaps.join(format!("m0_j{j}.txt")), m0)?;
        save_snapshot(&snaps.join(format!("mtilde_j{j}.txt")), mt)?;
    }
    write_errors_csv(BufWriter::new(File::create(out.join("errors.csv"))?), &result.records)?;
    Ok(())
}

/// A single time integration at the configured scale, writing snapshots
/// every `snapshot_stride` steps and `stats.csv`.
pub fn run_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<IterationStats>> {
    cfg.validate()?;
    let stage = cell_stage(cfg, false)?;
    let (scale, init) = match cfg.scale {
        RunScale::Homogenized => {
            let mesh = mesh(cfg, cfg.hom_cells)?;
            (Scale::Homogenized, bubble_field(mesh))
        }
        RunScale::Multiscale => {
            let n = cfg.n_periods[0];
            let (init, _) = reference_initial(cfg, &stage, n).map_err(|e| e.in_stage("initial data"))?;
            (Scale::Multiscale { n_periods: n }, init)
        }
    };
    let model = model(cfg, &stage, scale, init.mesh().clone())?;
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let stride = cfg.snapshot_stride;
    let mut opts = run_options(cfg, cfg.steps);
    opts.snapshot_stride = stride;
    let (_, stats) = run_with(&init, &model, &opts, |j, m| {
        if j == 0 || (stride > 0 && j % stride == 0) {
            save_snapshot(&snaps.join(format!("m_{j:06}.txt")), m)?;
        }
        Ok(())
    })?;
    let mut w = BufWriter::new(File::create(out.join("stats.csv"))?);
    writeln!(w, "step,iters,residual,wall_ms")?;
    for (i, s) in stats.iter().enumerate() {
        writeln!(w, "{},{},{:.6e},{:.3}", i + 1, s.iterations, s.residual, s.wall_ms)?;
    }
    w.flush()?;
    Ok(stats)
}

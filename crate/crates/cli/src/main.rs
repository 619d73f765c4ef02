use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use homollg::fem::snapshot::save_snapshot;
use homollg::fem::{BoundaryKind, StructuredMesh};
use homollg::harness::{
    cell_stage, parse_config, parse_config_str, run_algorithm1, run_convergence_study, run_scheme_benchmark, run_solve,
    write_algorithm1, write_bench_csv, write_study, ExperimentConfig,
};
use homollg::reconstruct::neumann_corrector;

#[derive(Parser)]
#[command(name = "homollg", version, about = "Multiscale LLG homogenization experiments")]
struct Cli {
    /// Experiment configuration file; the periodic2d preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the full-resolution preset parameters.
    #[arg(long, global = true)]
    full: bool,
    /// Output directory, overriding `out_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write the homogenized coefficients.
    Cell,
    /// Write the first-order correctors on the reference mesh.
    Corrector,
    /// Integrate one LLG trajectory at the configured scale.
    Solve,
    /// Convergence study against the homogenized solution.
    Converge,
    /// Inner-iteration counts of both fixed-point schemes.
    BenchIter,
    /// Homogenized solve with second-order reconstruction.
    Algo1,
}

fn load_config(cli: &Cli) -> homollg::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path, cli.full)?,
        None => parse_config_str("experiment = periodic2d\n", cli.full)?,
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn cell(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let stage = cell_stage(cfg, false)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("coeffs.txt"), stage.homog.to_kv_string())?;
    save_snapshot(&out.join("chi.txt"), &stage.cell.chi)?;
    save_snapshot(&out.join("ustar.txt"), &stage.cell.ustar)?;
    print!("{}", stage.homog.to_kv_string());
    Ok(())
}

fn corrector(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let stage = cell_stage(cfg, false)?;
    fs::create_dir_all(out)?;
    match cfg.bc {
        BoundaryKind::Periodic => {
            save_snapshot(&out.join("chi.txt"), &stage.cell.chi)?;
            log::info!("periodic boundary: the cell corrector chi is the first-order corrector");
        }
        BoundaryKind::Neumann => {
            let mesh = Arc::new(StructuredMesh::new(cfg.dim, cfg.ref_cells, cfg.bc)?);
            for &n in &cfg.n_periods {
                let nc = neumann_corrector(mesh.clone(), &stage.coeffs, &stage.homog, n)?;
                save_snapshot(&out.join(format!("psi_n{n}.txt")), &nc.psi)?;
            }
        }
    }
    Ok(())
}

fn converge(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let study = run_convergence_study(cfg)?;
    write_study(out, &study)?;
    for (j, q, s) in &study.orders {
        println!("j = {j}: {q} slope {s:.3}");
    }
    if study.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (n, msg) in &study.failures {
            eprintln!("n = {n}: {msg}");
        }
        Ok(ExitCode::from(3))
    }
}

fn bench_iter(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let rows = run_scheme_benchmark(cfg)?;
    fs::create_dir_all(out)?;
    write_bench_csv(BufWriter::new(File::create(out.join("bench.csv"))?), &rows)?;
    write_bench_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Cell => cell(&cfg, &out)?,
        Command::Corrector => corrector(&cfg, &out)?,
        Command::Solve => {
            let stats = run_solve(&cfg, &out)?;
            let total: usize = stats.iter().map(|s| s.iterations).sum();
            println!("{} steps, {total} inner iterations", stats.len());
        }
        Command::Converge => return converge(&cfg, &out),
        Command::BenchIter => bench_iter(&cfg, &out)?,
        Command::Algo1 => {
            let result = run_algorithm1(&cfg)?;
            write_algorithm1(&out, &result).context("writing algorithm outputs")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<homollg::Error>() {
        Some(e) if e.is_validation() => ExitCode::from(2),
        Some(e) if e.is_non_convergence() => ExitCode::from(3),
        _ => ExitCode::FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

//! Line-oriented `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::HessianTerm;
use crate::cell::{PeriodicCoefficientSet, Profile};
use crate::error::{Error, Result};
use crate::fem::BoundaryKind;
use crate::llg::{Scheme, Terms};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Periodic2d,
    Neumann2d,
    Periodic2dStray,
    Periodic3d,
    Custom,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Periodic2d => "periodic2d",
            Experiment::Neumann2d => "neumann2d",
            Experiment::Periodic2dStray => "periodic2d_stray",
            Experiment::Periodic3d => "periodic3d",
            Experiment::Custom => "custom",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic2d" => Ok(Experiment::Periodic2d),
            "neumann2d" => Ok(Experiment::Neumann2d),
            "periodic2d_stray" => Ok(Experiment::Periodic2dStray),
            "periodic3d" => Ok(Experiment::Periodic3d),
            "custom" => Ok(Experiment::Custom),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// How the multiscale initial data is built from the bubble profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Expansion,
    Projection,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Expansion => "expansion",
            InitMethod::Projection => "projection",
        })
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expansion" => Ok(InitMethod::Expansion),
            "projection" => Ok(InitMethod::Projection),
            other => Err(Error::Config(format!("unknown initial-data method `{other}`"))),
        }
    }
}

/// Scale of the single run driven by the `solve` command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunScale {
    Multiscale,
    Homogenized,
}

impl fmt::Display for RunScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunScale::Multiscale => "multiscale",
            RunScale::Homogenized => "homogenized",
        })
    }
}

impl FromStr for RunScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiscale" => Ok(RunScale::Multiscale),
            "homogenized" => Ok(RunScale::Homogenized),
            other => Err(Error::Config(format!("unknown scale `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub full: bool,
    pub dim: usize,
    pub bc: BoundaryKind,
    pub n_periods: Vec<usize>,
    /// Cells per side of the reference (multiscale) mesh, `1/h_ref`.
    pub ref_cells: usize,
    /// Cells per side of the homogenized mesh, `1/h_hom`.
    pub hom_cells: usize,
    pub cell_n: usize,
    pub dt: f64,
    pub checkpoints: Vec<usize>,
    pub alpha: f64,
    pub scheme: Scheme,
    pub threshold: f64,
    pub max_iter: usize,
    pub coeffs: String,
    /// Overrides of the preset's exchange base value and amplitude.
    pub exchange_base: Option<f64>,
    pub exchange_amp: Option<f64>,
    /// Constant anisotropy coefficient replacing the preset's.
    pub anisotropy_k: Option<f64>,
    pub terms: Terms,
    pub init: InitMethod,
    pub hessian: HessianTerm,
    pub scale: RunScale,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub bench_dts: Vec<f64>,
    pub bench_steps: usize,
    pub bench_threshold: f64,
    pub out_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "experiment",
    "full",
    "dim",
    "bc",
    "n_periods",
    "h_ref",
    "h_hom",
    "cell_n",
    "dt",
    "checkpoints",
    "alpha",
    "scheme",
    "threshold",
    "max_iter",
    "coeffs",
    "exchange_base",
    "exchange_amp",
    "anisotropy_k",
    "terms",
    "init",
    "hessian",
    "scale",
    "steps",
    "snapshot_stride",
    "bench_dts",
    "bench_steps",
    "bench_threshold",
    "out_dir",
];

/// Keys a `custom` experiment must set explicitly.
const REQUIRED_CUSTOM: &[&str] = &[
    "dim",
    "bc",
    "n_periods",
    "h_ref",
    "h_hom",
    "dt",
    "checkpoints",
    "coeffs",
];

impl ExperimentConfig {
    /// Defaults of a named experiment. Without `full` the meshes and period
    /// sweeps are reduced so that a run takes minutes.
    pub fn preset(experiment: Experiment, full: bool) -> Self {
        let base = ExperimentConfig {
            experiment,
            full,
            dim: 2,
            bc: BoundaryKind::Periodic,
            n_periods: if full { vec![2, 3, 4, 5, 6] } else { vec![2, 3, 4] },
            ref_cells: if full { 180 } else { 90 },
            hom_cells: if full { 180 } else { 90 },
            cell_n: 128,
            dt: 1e-6,
            checkpoints: if full { vec![10, 100, 1000] } else { vec![10, 100] },
            alpha: 1.0,
            scheme: Scheme::Improved,
            threshold: 1e-8,
            max_iter: 100,
            coeffs: "paper2d".into(),
            exchange_base: None,
            exchange_amp: None,
            anisotropy_k: None,
            terms: Terms::exchange_only(),
            init: InitMethod::Expansion,
            hessian: HessianTerm::Omit,
            scale: RunScale::Homogenized,
            steps: 10,
            snapshot_stride: 10,
            bench_dts: vec![1e-4, 1e-5, 1e-6],
            bench_steps: 3,
            bench_threshold: 1e-14,
            out_dir: PathBuf::from("out"),
        };
        match experiment {
            Experiment::Periodic2d | Experiment::Custom => base,
            Experiment::Neumann2d => ExperimentConfig {
                bc: BoundaryKind::Neumann,
                ..base
            },
            Experiment::Periodic2dStray => ExperimentConfig {
                terms: Terms {
                    stray2d: true,
                    ..Terms::exchange_only()
                },
                ..base
            },
            Experiment::Periodic3d => ExperimentConfig {
                dim: 3,
                n_periods: if full { vec![2, 3, 5] } else { vec![2, 3] },
                ref_cells: if full { 30 } else { 12 },
                hom_cells: if full { 24 } else { 12 },
                cell_n: 32,
                dt: 5e-5,
                checkpoints: if full { vec![10, 100] } else { vec![10] },
                coeffs: "paper3d".into(),
                ..base
            },
        }
    }

    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim != 2 && self.dim != 3 {
            return fail(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.n_periods.is_empty() || self.n_periods.iter().any(|&n| n < 2) {
            return fail("n_periods must be a non-empty list of integers ≥ 2".into());
        }
        if self.ref_cells < self.hom_cells {
            return fail(format!(
                "reference mesh 1/{} must be at least as fine as the homogenized mesh 1/{}",
                self.ref_cells, self.hom_cells
            ));
        }
        if self.hom_cells < 2 || self.cell_n < 2 {
            return fail("meshes need at least two cells per side".into());
        }
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return fail("checkpoints must be a non-empty strictly ascending list".into());
        }
        if !(self.dt > 0.0) || !(self.alpha > 0.0) || !(self.threshold > 0.0) || !(self.bench_threshold > 0.0) {
            return fail("dt, alpha and thresholds must be positive".into());
        }
        if self.max_iter == 0 {
            return fail("max_iter must be positive".into());
        }
        if self.terms.stray2d && self.dim != 2 {
            return fail("the degenerate stray field is only available in 2D".into());
        }
        if self.bench_dts.iter().any(|&d| !(d > 0.0)) {
            return fail("bench_dts must be positive".into());
        }
        self.coefficient_set()?;
        Ok(())
    }

    /// The named coefficient preset in the configured dimension.
    pub fn coefficient_set(&self) -> Result<PeriodicCoefficientSet> {
        let mut c = match self.coeffs.as_str() {
            "constant" => PeriodicCoefficientSet::constant(self.dim, 1.0),
            "layered" => PeriodicCoefficientSet::layered(self.dim, 1.1, 0.5),
            name => PeriodicCoefficientSet::preset(name)?,
        };
        if c.dim != self.dim {
            return Err(Error::Config(format!(
                "coefficient preset `{}` is {}D",
                self.coeffs, c.dim
            )));
        }
        match &mut c.exchange {
            Profile::Product { base, amp, .. } | Profile::Layered { base, amp, .. } => {
                *base = self.exchange_base.unwrap_or(*base);
                *amp = self.exchange_amp.unwrap_or(*amp);
            }
            Profile::Constant(a) => {
                if self.exchange_amp.is_some() {
                    return Err(Error::Config(format!(
                        "coefficient preset `{}` has no exchange amplitude",
                        self.coeffs
                    )));
                }
                *a = self.exchange_base.unwrap_or(*a);
            }
            Profile::Fourier { .. } => unreachable!("presets do not use Fourier profiles"),
        }
        if let Some(k) = self.anisotropy_k {
            c.anisotropy = Profile::Constant(k);
        }
        c.validate()?;
        Ok(c)
    }

    /// Canonical serialization, one `key = value` line per set key.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.value_of(key);
            if value.is_empty() {
                continue;
            }
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        match key {
            "experiment" => self.experiment.to_string(),
            "full" => self.full.to_string(),
            "dim" => self.dim.to_string(),
            "bc" => self.bc.to_string(),
            "n_periods" => list(&self.n_periods),
            "h_ref" => format!("1/{}", self.ref_cells),
            "h_hom" => format!("1/{}", self.hom_cells),
            "cell_n" => self.cell_n.to_string(),
            "dt" => format!("{:e}", self.dt),
            "checkpoints" => list(&self.checkpoints),
            "alpha" => format!("{:e}", self.alpha),
            "scheme" => self.scheme.to_string(),
            "threshold" => format!("{:e}", self.threshold),
            "max_iter" => self.max_iter.to_string(),
            "coeffs" => self.coeffs.clone(),
            "exchange_base" => self.exchange_base.map(|x| format!("{x:e}")).unwrap_or_default(),
            "exchange_amp" => self.exchange_amp.map(|x| format!("{x:e}")).unwrap_or_default(),
            "anisotropy_k" => self.anisotropy_k.map(|x| format!("{x:e}")).unwrap_or_default(),
            "terms" => self.terms.to_list(),
            "init" => self.init.to_string(),
            "hessian" => match self.hessian {
                HessianTerm::Omit => "omit".into(),
                HessianTerm::Recovered => "recovered".into(),
            },
            "scale" => self.scale.to_string(),
            "steps" => self.steps.to_string(),
            "snapshot_stride" => self.snapshot_stride.to_string(),
            "bench_dts" => self
                .bench_dts
                .iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(", "),
            "bench_steps" => self.bench_steps.to_string(),
            "bench_threshold" => format!("{:e}", self.bench_threshold),
            "out_dir" => self.out_dir.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let perr = |msg: String| Error::Parse { line, msg };
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| perr(format!("`{key}` expects a number, got `{v}`")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| perr(format!("`{key}` expects a non-negative integer, got `{v}`")))
        };
        let ints = |v: &str| -> Result<Vec<usize>> { v.split(',').map(|s| int(s.trim())).collect() };
        let mesh_size = |v: &str| -> Result<usize> {
            let cells = if let Some(den) = v.strip_prefix("1/") {
                int(den.trim())?
            } else {
                let h = num(v)?;
                if !(h > 0.0 && h <= 1.0) {
                    return Err(perr(format!("`{key}` must lie in (0, 1], got {h}")));
                }
                let n = (1.0 / h).round();
                if ((1.0 / h) - n).abs() > 1e-6 * n {
                    return Err(perr(format!("`{key}` = {h} is not the reciprocal of an integer")));
                }
                n as usize
            };
            if cells == 0 {
                return Err(perr(format!("`{key}` must be positive")));
            }
            Ok(cells)
        };
        let wrap = |e: Error| match e {
            Error::Config(msg) => perr(msg),
            other => other,
        };
        match key {
            "experiment" => self.experiment = value.parse().map_err(wrap)?,
            "full" => {
                self.full = value
                    .parse()
                    .map_err(|_| perr(format!("`full` expects true or false, got `{value}`")))?
            }
            "dim" => self.dim = int(value)?,
            "bc" => self.bc = value.parse().map_err(wrap)?,
            "n_periods" => self.n_periods = ints(value)?,
            "h_ref" => self.ref_cells = mesh_size(value)?,
            "h_hom" => self.hom_cells = mesh_size(value)?,
            "cell_n" => self.cell_n = int(value)?,
            "dt" => self.dt = num(value)?,
            "checkpoints" => self.checkpoints = ints(value)?,
            "alpha" => self.alpha = num(value)?,
            "scheme" => self.scheme = value.parse().map_err(wrap)?,
            "threshold" => self.threshold = num(value)?,
            "max_iter" => self.max_iter = int(value)?,
            "coeffs" => {
                if !["paper2d", "paper3d", "layered", "constant"].contains(&value) {
                    return Err(perr(format!("unknown coefficient preset `{value}`")));
                }
                self.coeffs = value.to_string()
            }
            "exchange_base" => self.exchange_base = Some(num(value)?),
            "exchange_amp" => self.exchange_amp = Some(num(value)?),
            "anisotropy_k" => self.anisotropy_k = Some(num(value)?),
            "terms" => self.terms = Terms::parse(value).map_err(wrap)?,
            "init" => self.init = value.parse().map_err(wrap)?,
            "hessian" => {
                self.hessian = match value {
                    "omit" => HessianTerm::Omit,
                    "recovered" => HessianTerm::Recovered,
                    other => return Err(perr(format!("`hessian` must be omit or recovered, got `{other}`"))),
                }
            }
            "scale" => self.scale = value.parse().map_err(wrap)?,
            "steps" => self.steps = int(value)?,
            "snapshot_stride" => self.snapshot_stride = int(value)?,
            "bench_dts" => self.bench_dts = value.split(',').map(|s| num(s.trim())).collect::<Result<_>>()?,
            "bench_steps" => self.bench_steps = int(value)?,
            "bench_threshold" => self.bench_threshold = num(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(perr(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// Parses configuration text. `experiment` selects the preset that the
/// remaining keys override; `force_full` switches to the full-size preset
/// regardless of the file.
pub fn parse_config_str(text: &str, force_full: bool) -> Result<ExperimentConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{body}`"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key `{k}`"),
            });
        }
        if let Some(prev) = seen.insert(k.clone(), line) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key `{k}` (first set on line {prev})"),
            });
        }
        entries.push((line, k, v));
    }
    let lookup = |key: &str| entries.iter().find(|(_, k, _)| k == key);
    let experiment = match lookup("experiment") {
        Some((line, _, v)) => v.parse::<Experiment>().map_err(|e| Error::Parse {
            line: *line,
            msg: e.to_string(),
        })?,
        None => Experiment::Custom,
    };
    let mut full = force_full;
    if let Some((line, _, v)) = lookup("full") {
        full |= v.parse::<bool>().map_err(|_| Error::Parse {
            line: *line,
            msg: format!("`full` expects true or false, got `{v}`"),
        })?;
    }
    if experiment == Experiment::Custom {
        let missing: Vec<&str> = REQUIRED_CUSTOM
            .iter()
            .copied()
            .filter(|k| lookup(k).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "custom experiment is missing required keys: {}",
                missing.join(", ")
            )));
        }
    }
    let mut cfg = ExperimentConfig::preset(experiment, full);
    for (line, k, v) in &entries {
        if k != "experiment" && k != "full" {
            cfg.set(k, v, *line)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, force_full: bool) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, force_full)
}

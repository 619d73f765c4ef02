//! Analytic Y-periodic material functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::assembly::{scaled_identity, Tensor};

const TAU: f64 = 2.0 * PI;

/// A single cosine mode `amp · cos(2π(k·y − phase))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMode {
    pub amp: f64,
    pub wave: [i32; 3],
    pub phase: f64,
}

/// Scalar 1-periodic profile with an analytic gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `Π_k (base + amp·cos(2π(y_k − phase)))` over the first `dim` axes.
    Product {
        base: f64,
        amp: f64,
        phase: f64,
    },
    /// `base + amp·cos(2π(y_axis − phase))`.
    Layered {
        base: f64,
        amp: f64,
        phase: f64,
        axis: usize,
    },
    /// `mean + Σ modes`.
    Fourier {
        mean: f64,
        modes: Vec<FourierMode>,
    },
}

impl Profile {
    pub fn value(&self, y: &[f64; 3], dim: usize) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Product { base, amp, phase } => {
                (0..dim).map(|k| base + amp * (TAU * (y[k] - phase)).cos()).product()
            }
            Profile::Layered { base, amp, phase, axis } => base + amp * (TAU * (y[*axis] - phase)).cos(),
            Profile::Fourier { mean, modes } => {
                mean + modes
                    .iter()
                    .map(|m| m.amp * (TAU * (dot_wave(&m.wave, y, dim) - m.phase)).cos())
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, y: &[f64; 3], dim: usize) -> [f64; 3] {
        let mut g = [0.0; 3];
        match self {
            Profile::Constant(_) => {}
            Profile::Product { base, amp, phase } => {
                let f: Vec<f64> = (0..dim).map(|k| base + amp * (TAU * (y[k] - phase)).cos()).collect();
                for k in 0..dim {
                    let df = -amp * TAU * (TAU * (y[k] - phase)).sin();
                    let rest: f64 = (0..dim).filter(|&l| l != k).map(|l| f[l]).product();
                    g[k] = df * rest;
                }
            }
            Profile::Layered { amp, phase, axis, .. } => {
                g[*axis] = -amp * TAU * (TAU * (y[*axis] - phase)).sin();
            }
            Profile::Fourier { modes, .. } => {
                for m in modes {
                    let s = -m.amp * TAU * (TAU * (dot_wave(&m.wave, y, dim) - m.phase)).sin();
                    for k in 0..dim {
                        g[k] += s * m.wave[k] as f64;
                    }
                }
            }
        }
        g
    }

    /// Exact cell average.
    pub fn mean(&self, dim: usize) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Product { base, .. } => base.powi(dim as i32),
            Profile::Layered { base, .. } => *base,
            Profile::Fourier { mean, modes } => {
                mean + modes
                    .iter()
                    .filter(|m| m.wave[..dim].iter().all(|&k| k == 0))
                    .map(|m| m.amp * (TAU * m.phase).cos())
                    .sum::<f64>()
            }
        }
    }

    /// Lower and upper bounds of the profile over the cell.
    pub fn range(&self, dim: usize) -> (f64, f64) {
        match self {
            Profile::Constant(c) => (*c, *c),
            Profile::Product { base, amp, .. } => {
                let (lo, hi) = (base - amp.abs(), base + amp.abs());
                if lo >= 0.0 {
                    (lo.powi(dim as i32), hi.powi(dim as i32))
                } else {
                    let m = lo.abs().max(hi.abs()).powi(dim as i32);
                    (-m, m)
                }
            }
            Profile::Layered { base, amp, .. } => (base - amp.abs(), base + amp.abs()),
            Profile::Fourier { mean, modes } => {
                let s: f64 = modes.iter().map(|m| m.amp.abs()).sum();
                (mean - s, mean + s)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Profile::Constant(_) => true,
            Profile::Product { amp, .. } | Profile::Layered { amp, .. } => *amp == 0.0,
            Profile::Fourier { modes, .. } => modes.iter().all(|m| m.amp == 0.0),
        }
    }
}

fn dot_wave(k: &[i32; 3], y: &[f64; 3], dim: usize) -> f64 {
    (0..dim).map(|i| k[i] as f64 * y[i]).sum()
}

/// Material functions of the unit cell. The exchange tensor is isotropic,
/// `a(y) = exchange(y)·I`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicCoefficientSet {
    pub dim: usize,
    pub exchange: Profile,
    pub anisotropy: Profile,
    pub mu: Profile,
    pub ms: Profile,
    pub easy_axis: [f64; 3],
    pub applied_field: [f64; 3],
}

impl PeriodicCoefficientSet {
    /// All functions equal to constants; `a = c·I`.
    pub fn constant(dim: usize, a: f64) -> Self {
        PeriodicCoefficientSet {
            dim,
            exchange: Profile::Constant(a),
            anisotropy: Profile::Constant(0.0),
            mu: Profile::Constant(1.0),
            ms: Profile::Constant(1.0),
            easy_axis: [1.0, 0.0, 0.0],
            applied_field: [0.0; 3],
        }
    }

    /// Two-mode cosine exchange `Π(1.1 + 0.25cos(2π(y_k − 1/2)))·I` with the
    /// sine-product stray coefficient.
    pub fn cosine_product(dim: usize) -> Self {
        PeriodicCoefficientSet {
            exchange: Profile::Product {
                base: 1.1,
                amp: 0.25,
                phase: 0.5,
            },
            mu: stray_mu(),
            ..Self::constant(dim, 1.0)
        }
    }

    /// Exchange varying along the last axis only.
    pub fn layered(dim: usize, base: f64, amp: f64) -> Self {
        PeriodicCoefficientSet {
            exchange: Profile::Layered {
                base,
                amp,
                phase: 0.0,
                axis: dim - 1,
            },
            ..Self::constant(dim, 1.0)
        }
    }

    /// Looks up a named preset: `paper2d`, `paper3d`, `layered`, `constant`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper2d" => Ok(Self::cosine_product(2)),
            "paper3d" => Ok(Self::cosine_product(3)),
            "layered" => Ok(Self::layered(2, 1.1, 0.5)),
            "constant" => Ok(Self::constant(2, 1.0)),
            other => Err(Error::Config(format!("unknown coefficient preset `{other}`"))),
        }
    }

    pub fn a(&self, y: &[f64; 3]) -> Tensor {
        scaled_identity(self.exchange.value(y, self.dim))
    }

    pub fn a_scalar(&self, y: &[f64; 3]) -> f64 {
        self.exchange.value(y, self.dim)
    }

    pub fn k(&self, y: &[f64; 3]) -> f64 {
        self.anisotropy.value(y, self.dim)
    }

    pub fn mu(&self, y: &[f64; 3]) -> f64 {
        self.mu.value(y, self.dim)
    }

    pub fn grad_mu(&self, y: &[f64; 3]) -> [f64; 3] {
        self.mu.gradient(y, self.dim)
    }

    pub fn ms(&self, y: &[f64; 3]) -> f64 {
        self.ms.value(y, self.dim)
    }

    /// Eigenvalue bounds `(a_min, a_max)` of the exchange tensor.
    pub fn a_bounds(&self) -> (f64, f64) {
        self.exchange.range(self.dim)
    }

    /// Checks coercivity, non-negative anisotropy and a unit easy axis.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!(
                "coefficient dimension {} must be 2 or 3",
                self.dim
            )));
        }
        if let Profile::Layered { axis, .. } = self.exchange {
            if axis >= self.dim {
                return Err(Error::Config(format!("layer axis {axis} out of range")));
            }
        }
        let (lo, hi) = self.a_bounds();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::Config(format!(
                "exchange coefficient not coercive: bounds [{lo}, {hi}]"
            )));
        }
        if self.anisotropy.range(self.dim).0 < 0.0 {
            return Err(Error::Config("anisotropy coefficient must be non-negative".into()));
        }
        if self.mu.range(self.dim).0 <= 0.0 {
            return Err(Error::Config("stray coefficient mu must be positive".into()));
        }
        let n: f64 = self.easy_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("easy axis must be a unit vector (norm {n})")));
        }
        Ok(())
    }
}

/// `(1.1 + 0.25 sin 2πy₁)(1.1 + 0.25 sin 2πy₂)`.
pub fn stray_mu() -> Profile {
    Profile::Product {
        base: 1.1,
        amp: 0.25,
        phase: 0.25,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for i in 0..7 {
            for j in 0..5 {
                out.push([i as f64 / 7.0 + 0.013, j as f64 / 5.0 + 0.071, 0.37 * i as f64]);
            }
        }
        out
    }

    fn all_profiles() -> Vec<Profile> {
        vec![
            Profile::Constant(2.0),
            Profile::Product {
                base: 1.1,
                amp: 0.25,
                phase: 0.5,
            },
            Profile::Layered {
                base: 1.0,
                amp: 0.3,
                phase: 0.1,
                axis: 1,
            },
            Profile::Fourier {
                mean: 0.5,
                modes: vec![
                    FourierMode {
                        amp: 1.0,
                        wave: [1, 0, 0],
                        phase: 0.25,
                    },
                    FourierMode {
                        amp: 0.5,
                        wave: [1, 2, 1],
                        phase: 0.0,
                    },
                ],
            },
        ]
    }

    #[test]
    fn profiles_are_periodic() {
        for p in all_profiles() {
            for dim in [2, 3] {
                for y in samples() {
                    for k in 0..dim {
                        let mut z = y;
                        z[k] += 1.0;
                        assert!((p.value(&y, dim) - p.value(&z, dim)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = 1e-6;
        for p in all_profiles() {
            for dim in [2, 3] {
                for y in samples() {
                    let g = p.gradient(&y, dim);
                    for k in 0..dim {
                        let (mut a, mut b) = (y, y);
                        a[k] += d;
                        b[k] -= d;
                        let fd = (p.value(&a, dim) - p.value(&b, dim)) / (2.0 * d);
                        assert!((fd - g[k]).abs() < 1e-6, "{p:?} {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn stray_mu_is_sine_product() {
        let y = [0.1, 0.7, 0.0];
        let expect = (1.1 + 0.25 * (TAU * 0.1).sin()) * (1.1 + 0.25 * (TAU * 0.7).sin());
        assert!((stray_mu().value(&y, 2) - expect).abs() < 1e-14);
    }

    #[test]
    fn cosine_coefficients_are_coercive() {
        let c = PeriodicCoefficientSet::cosine_product(2);
        c.validate().unwrap();
        let (lo, hi) = c.a_bounds();
        assert!((lo - 0.85 * 0.85).abs() < 1e-12 && (hi - 1.35 * 1.35).abs() < 1e-12);
        for y in samples() {
            let a = c.a_scalar(&y);
            assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
        }
        assert!(PeriodicCoefficientSet::preset("nope").is_err());
        let mut bad = c.clone();
        bad.exchange = Profile::Constant(-1.0);
        assert!(bad.validate().is_err());
    }
}

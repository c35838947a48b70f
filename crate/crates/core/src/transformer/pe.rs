use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, PeMode};
use crate::error::{Error, Result};
use crate::geometry::bounds_of;
use crate::numerics::{MlpSpec, Ops, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    pub bands: usize,
    pub max_freq: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self { bands: 16, max_freq: 64.0 }
    }
}

impl FourierConfig {
    pub fn dim(&self) -> usize {
        6 * self.bands
    }

    /// Log-spaced frequencies from 1 to `max_freq`.
    pub fn frequencies(&self) -> Vec<f64> {
        if self.bands == 1 {
            return vec![1.0];
        }
        let last = (self.bands - 1) as f64;
        (0..self.bands).map(|b| self.max_freq.powf(b as f64 / last)).collect()
    }
}

/// Axis-aligned scene extents used to normalize coordinates to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl SceneBounds {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64; 3]>) -> Result<Self> {
        let (lo, hi) = bounds_of(points.into_iter().copied()).ok_or(Error::EmptyScene)?;
        Ok(Self { lo, hi })
    }

    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.lo[a]) / (self.hi[a] - self.lo[a]).max(1e-6))
    }
}

/// Per axis: `sin(2π f_b x)` for every band, then `cos(2π f_b x)` for every
/// band. Input coordinates are expected in normalized units.
pub fn fourier_pe(coords: &[[f64; 3]], cfg: &FourierConfig) -> Result<Tensor> {
    if cfg.bands == 0 {
        return Err(Error::Config("fourier embedding needs at least one band".into()));
    }
    let freqs = cfg.frequencies();
    let dim = cfg.dim();
    let mut data = Vec::with_capacity(coords.len() * dim);
    for c in coords {
        for x in c {
            data.extend(freqs.iter().map(|f| (TAU * f * x).sin()));
            data.extend(freqs.iter().map(|f| (TAU * f * x).cos()));
        }
    }
    Tensor::matrix(coords.len(), dim, data)
}

pub(crate) fn pe_mlp_spec(cfg: &ModelConfig) -> MlpSpec {
    MlpSpec::head(vec![cfg.fourier.dim(), cfg.model_dim(), cfg.model_dim()])
}

/// Positional embedding of world coordinates for the encoder input.
pub fn positional_embedding<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    coords: &[[f64; 3]],
    bounds: &SceneBounds,
) -> Result<O::V> {
    let d = cfg.model_dim();
    let normalized: Vec<[f64; 3]> = coords.iter().map(|c| bounds.normalize(*c)).collect();
    match cfg.encoder.pe_mode {
        PeMode::None => Ok(ops.constant(Tensor::zeros(&[coords.len(), d]))),
        PeMode::Fourier => {
            let f = fourier_pe(&normalized, &cfg.fourier)?;
            let k = f.cols();
            if k > d {
                return Err(Error::Config(format!("fourier width {k} exceeds model width {d}")));
            }
            let mut padded = Tensor::zeros(&[coords.len(), d]);
            for r in 0..coords.len() {
                padded.row_mut(r)[..k].copy_from_slice(f.row(r));
            }
            Ok(ops.constant(padded))
        }
        PeMode::MlpFourier => {
            let f = ops.constant(fourier_pe(&normalized, &cfg.fourier)?);
            pe_mlp_spec(cfg).forward(ops, &f, "encoder.pos_mlp")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let cfg = FourierConfig::default();
        let e = fourier_pe(&[[0.0; 3]], &cfg).unwrap();
        for a in 0..3 {
            let base = a * 2 * cfg.bands;
            assert!(e.row(0)[base..base + cfg.bands].iter().all(|v| *v == 0.0));
            assert!(e.row(0)[base + cfg.bands..base + 2 * cfg.bands].iter().all(|v| *v == 1.0));
        }
        let twice = fourier_pe(&[[0.3, 0.1, 0.9], [0.3, 0.1, 0.9]], &cfg).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
    }

    #[test]
    fn two_bands_by_hand() {
        // bands 2, max 4: frequencies 1 and 4; x = 0.25
        // sin(2π·0.25)=1, sin(2π·1)=0, cos(2π·0.25)=0, cos(2π·1)=1
        let cfg = FourierConfig { bands: 2, max_freq: 4.0 };
        let e = fourier_pe(&[[0.25, 0.0, 0.0]], &cfg).unwrap();
        let x = &e.row(0)[..4];
        let expect = [1.0, 0.0, 0.0, 1.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{x:?}");
        }
        assert_eq!(cfg.frequencies(), vec![1.0, 4.0]);
    }

    #[test]
    fn normalization_maps_bounds_to_unit() {
        let b = SceneBounds::from_points(&[[1.0, 2.0, 3.0], [3.0, 6.0, 4.0]]).unwrap();
        assert_eq!(b.normalize([1.0, 2.0, 3.0]), [0.0; 3]);
        assert_eq!(b.normalize([3.0, 6.0, 4.0]), [1.0; 3]);
        assert!(SceneBounds::from_points(&[]).is_err());
    }
}

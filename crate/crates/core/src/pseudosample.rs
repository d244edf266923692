//! Phase-preserving pseudo-sample generation.
//!
//! Both operators keep the phase spectrum and the low-frequency amplitudes
//! inside an anchor radius, and perturb only the amplitudes outside it:
//!
//! - noise perturbation (PPNP): anchor radius `R ~ U(r1, r2)` drawn per
//!   sample, outside amplitudes multiplied by a centrosymmetric mean-one field
//!   `Z ~ U(1 - z_delta, 1 + z_delta)`;
//! - mask perturbation (PPMP): fixed anchor radius `r1`, outside amplitudes
//!   multiplied by a centrosymmetric `Bernoulli(beta)` mask.
//!
//! Radii are in units of the per-axis Nyquist frequency (see
//! [`radial_field`]).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{write_tensor_with_meta, Dtype, Grid2D};
use crate::rng::RngStream;
use crate::spectrum::{
    centrosymmetric_bernoulli, centrosymmetric_uniform, forward_dft_with, inverse_dft_with,
    radial_field, Dft2d, RadialField, Spectrum,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub r1: f64,
    pub r2: f64,
    pub beta: f64,
    pub z_delta: f64,
    pub n: usize,
    pub clamp_t: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            r1: 0.5,
            r2: 0.6,
            beta: 0.5,
            z_delta: 0.8,
            n: 4,
            clamp_t: 1.0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        let sqrt2 = std::f64::consts::SQRT_2;
        if !(self.r1 > 0.0) {
            return Err(Error::Config(format!(
                "perturb: r1 must be > 0, got {}",
                self.r1
            )));
        }
        if self.r1 > self.r2 {
            return Err(Error::Config(format!(
                "perturb: r1 ({}) must not exceed r2 ({})",
                self.r1, self.r2
            )));
        }
        if !(self.r2 <= sqrt2) {
            return Err(Error::Config(format!(
                "perturb: r2 must be <= sqrt(2), got {}",
                self.r2
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "perturb: beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.z_delta > 0.0 && self.z_delta <= 1.0) {
            return Err(Error::Config(format!(
                "perturb: z_delta must be in (0, 1], got {}",
                self.z_delta
            )));
        }
        if self.n < 1 {
            return Err(Error::Config("perturb: n must be >= 1".into()));
        }
        if !(self.clamp_t > 0.0) {
            return Err(Error::Config(format!(
                "perturb: clamp_t must be > 0, got {}",
                self.clamp_t
            )));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        [
            ("perturb.r1", self.r1.to_string()),
            ("perturb.r2", self.r2.to_string()),
            ("perturb.beta", self.beta.to_string()),
            ("perturb.z_delta", self.z_delta.to_string()),
            ("perturb.n", self.n.to_string()),
            ("perturb.clamp_t", self.clamp_t.to_string()),
            ("perturb.radius_units", "nyquist".to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Reusable transform plans and radial field for one sinogram shape.
pub struct Perturber {
    dft: Dft2d,
    radial: RadialField,
    source: Spectrum,
}

impl Perturber {
    pub fn new(sino: &Grid2D) -> Result<Self> {
        let dft = Dft2d::new(sino.rows(), sino.cols());
        let radial = radial_field(sino.rows(), sino.cols())?;
        let source = forward_dft_with(&dft, sino);
        Ok(Self {
            dft,
            radial,
            source,
        })
    }

    pub fn source_spectrum(&self) -> &Spectrum {
        &self.source
    }

    pub fn radial(&self) -> &RadialField {
        &self.radial
    }

    /// Multiplies amplitudes with `rho > anchor` by `field`. The source is
    /// returned bit-exactly when no bin lies outside the anchor.
    fn perturb(&self, anchor: f64, field: &Grid2D, source: &Grid2D) -> Result<Grid2D> {
        let outside: Vec<bool> = self.radial.rho.iter().map(|&rho| rho > anchor).collect();
        if !outside.iter().any(|&o| o) {
            return Ok(source.clone());
        }
        let mut spec = self.source.clone();
        let f = field.data();
        spec.scale_amplitudes(|i| if outside[i] { f[i] } else { 1.0 });
        let (out, _) = inverse_dft_with(&self.dft, &spec)?;
        Ok(out.with_kind(source.kind()))
    }

    pub fn ppnp(
        &self,
        source: &Grid2D,
        cfg: &PerturbConfig,
        rng: &mut RngStream,
    ) -> Result<Grid2D> {
        let anchor = rng.uniform_range(cfg.r1, cfg.r2);
        let z = centrosymmetric_uniform(source.rows(), source.cols(), cfg.z_delta, rng)?;
        self.perturb(anchor, &z, source)
    }

    pub fn ppmp(
        &self,
        source: &Grid2D,
        cfg: &PerturbConfig,
        rng: &mut RngStream,
    ) -> Result<Grid2D> {
        let mask = centrosymmetric_bernoulli(source.rows(), source.cols(), cfg.beta, rng)?;
        self.perturb(cfg.r1, &mask, source)
    }
}

/// Phase-preserving noise perturbation of one sinogram.
pub fn ppnp(sino: &Grid2D, cfg: &PerturbConfig, rng: &mut RngStream) -> Result<Grid2D> {
    cfg.validate()?;
    Perturber::new(sino)?.ppnp(sino, cfg, rng)
}

/// Phase-preserving mask perturbation of one sinogram.
pub fn ppmp(sino: &Grid2D, cfg: &PerturbConfig, rng: &mut RngStream) -> Result<Grid2D> {
    cfg.validate()?;
    Perturber::new(sino)?.ppmp(sino, cfg, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankKind {
    Noise,
    Mask,
}

impl BankKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BankKind::Noise => "noise",
            BankKind::Mask => "mask",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBank {
    pub kind: BankKind,
    pub samples: Vec<Grid2D>,
    pub source_meta: BTreeMap<String, String>,
}

impl SampleBank {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `sample_{kind}_{i}.fct` into `dir`, returning the paths.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        let mut paths = Vec::with_capacity(self.samples.len());
        for (i, sample) in self.samples.iter().enumerate() {
            let path = dir.join(format!("sample_{}_{}.fct", self.kind.as_str(), i));
            let mut meta = self.source_meta.clone();
            meta.insert("bank.kind".into(), self.kind.as_str().into());
            meta.insert("bank.index".into(), i.to_string());
            write_tensor_with_meta(sample, &path, Dtype::F64, &meta)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// `n` noise samples then `n` mask samples, all from one stream in that order.
pub fn build_banks(
    sino: &Grid2D,
    cfg: &PerturbConfig,
    rng: &mut RngStream,
) -> Result<(SampleBank, SampleBank)> {
    cfg.validate()?;
    let perturber = Perturber::new(sino)?;
    let mut meta = cfg.to_meta();
    meta.insert("seed".into(), rng.seed().to_string());
    let noise = (0..cfg.n)
        .map(|_| perturber.ppnp(sino, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let mask = (0..cfg.n)
        .map(|_| perturber.ppmp(sino, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SampleBank {
            kind: BankKind::Noise,
            samples: noise,
            source_meta: meta.clone(),
        },
        SampleBank {
            kind: BankKind::Mask,
            samples: mask,
            source_meta: meta,
        },
    ))
}

/// Clamps every value of every sample into `[0, t]`.
pub fn clamp_bank(bank: &SampleBank, t: f64) -> Result<SampleBank> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!(
            "clamp ceiling must be > 0, got {t}"
        )));
    }
    let samples = bank
        .samples
        .iter()
        .map(|s| s.map(|v| v.clamp(0.0, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut source_meta = bank.source_meta.clone();
    source_meta.insert("clamp_t".into(), t.to_string());
    Ok(SampleBank {
        kind: bank.kind,
        samples,
        source_meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;
    use crate::spectrum::{forward_dft, wrap_phase};

    fn test_sino(rows: usize, cols: usize, seed: u64) -> Grid2D {
        let mut rng = RngStream::new(seed);
        Grid2D::from_fn(rows, cols, GridKind::Sinogram, |r, c| {
            let x = c as f64 / cols as f64;
            let y = r as f64 / rows as f64;
            2.0 * (1.0 - (2.0 * x - 1.0).powi(2)).max(0.0)
                + 0.3 * (6.0 * y).sin()
                + 0.05 * rng.standard_normal()
        })
        .unwrap()
    }

    #[test]
    fn config_invariants() {
        PerturbConfig::default().validate().unwrap();
        let bad = PerturbConfig {
            r1: 0.7,
            r2: 0.6,
            ..Default::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("r1") && err.contains("r2"));
        let degenerate = PerturbConfig {
            r1: 0.6,
            r2: 0.6,
            ..Default::default()
        };
        degenerate.validate().unwrap();
        for bad in [
            PerturbConfig {
                beta: 1.5,
                ..Default::default()
            },
            PerturbConfig {
                z_delta: 0.0,
                ..Default::default()
            },
            PerturbConfig {
                n: 0,
                ..Default::default()
            },
            PerturbConfig {
                clamp_t: 0.0,
                ..Default::default()
            },
            PerturbConfig {
                r2: 1.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn tiny_delta_is_identity() {
        let s = test_sino(24, 30, 1);
        let cfg = PerturbConfig {
            z_delta: 1e-12,
            ..Default::default()
        };
        let out = ppnp(&s, &cfg, &mut RngStream::new(2)).unwrap();
        for (a, b) in s.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_band_is_exact_identity() {
        let s = test_sino(24, 30, 1);
        let r = std::f64::consts::SQRT_2;
        let cfg = PerturbConfig {
            r1: r,
            r2: r,
            ..Default::default()
        };
        assert_eq!(ppnp(&s, &cfg, &mut RngStream::new(3)).unwrap(), s);
    }

    #[test]
    fn ppnp_anchors_low_band_and_phase() {
        let s = test_sino(32, 40, 4);
        let cfg = PerturbConfig::default();
        let mut rng = RngStream::new(5);
        let anchor = rng.clone().uniform_range(cfg.r1, cfg.r2);
        let out = ppnp(&s, &cfg, &mut rng).unwrap();
        let a = forward_dft(&s);
        let b = forward_dft(&out);
        let radial = radial_field(32, 40).unwrap();
        let mut perturbed = 0;
        for i in 0..a.amp.len() {
            if radial.rho[i] <= anchor {
                assert!((a.amp[i] - b.amp[i]).abs() < 1e-10 * a.max_amp().max(1.0));
            } else if (a.amp[i] - b.amp[i]).abs() > 1e-9 {
                perturbed += 1;
            }
            if a.amp[i] > 1e-9 {
                assert!(wrap_phase(a.phase[i] - b.phase[i]).abs() < 1e-9);
            }
        }
        assert!(perturbed > 0);
    }

    #[test]
    fn ppmp_all_retain_and_all_drop() {
        let s = test_sino(30, 28, 6);
        let keep = PerturbConfig {
            beta: 1.0,
            ..Default::default()
        };
        let out = ppmp(&s, &keep, &mut RngStream::new(7)).unwrap();
        for (a, b) in s.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let drop = PerturbConfig {
            beta: 0.0,
            ..Default::default()
        };
        let out = ppmp(&s, &drop, &mut RngStream::new(7)).unwrap();
        let spec = forward_dft(&out);
        let radial = radial_field(30, 28).unwrap();
        for i in 0..spec.amp.len() {
            if radial.rho[i] > drop.r1 {
                assert!(spec.amp[i] < 1e-10);
            }
        }
    }

    #[test]
    fn ppmp_never_adds_energy() {
        let s = test_sino(20, 22, 8);
        for (k, &beta) in [0.0, 0.25, 0.5, 0.9].iter().enumerate() {
            let cfg = PerturbConfig {
                beta,
                ..Default::default()
            };
            let out = ppmp(&s, &cfg, &mut RngStream::new(k as u64)).unwrap();
            assert!(out.sum_squares() <= s.sum_squares() + 1e-9);
        }
    }

    #[test]
    fn banks_shape_order_and_determinism() {
        let s = test_sino(16, 18, 9);
        let cfg = PerturbConfig {
            n: 1,
            ..Default::default()
        };
        let (noise, mask) = build_banks(&s, &cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!((noise.len(), mask.len()), (1, 1));
        assert_eq!(noise.kind, BankKind::Noise);

        let cfg = PerturbConfig::default();
        let first = build_banks(&s, &cfg, &mut RngStream::new(11)).unwrap();
        let second = build_banks(&s, &cfg, &mut RngStream::new(11)).unwrap();
        assert_eq!(first, second);
        assert!(first.0.samples.iter().all(|x| x.shape() == s.shape()));

        // Draw order: noise samples first, then mask samples, on one stream.
        let mut rng = RngStream::new(11);
        let p = Perturber::new(&s).unwrap();
        let mut expected = Vec::new();
        for _ in 0..cfg.n {
            expected.push(p.ppnp(&s, &cfg, &mut rng).unwrap());
        }
        let mask0 = p.ppmp(&s, &cfg, &mut rng).unwrap();
        assert_eq!(first.0.samples, expected);
        assert_eq!(first.1.samples[0], mask0);
    }

    #[test]
    fn ppnp_is_unbiased_in_amplitude() {
        let s = test_sino(16, 16, 12);
        let cfg = PerturbConfig::default();
        let p = Perturber::new(&s).unwrap();
        let src = p.source_spectrum().clone();
        // A bin well outside r2 with a clearly non-zero amplitude.
        let idx = (0..256)
            .filter(|&i| p.radial().rho[i] > 0.9)
            .max_by(|&a, &b| src.amp[a].total_cmp(&src.amp[b]))
            .unwrap();
        let mut rng = RngStream::new(13);
        let reps = 1000;
        let mean: f64 = (0..reps)
            .map(|_| forward_dft(&p.ppnp(&s, &cfg, &mut rng).unwrap()).amp[idx])
            .sum::<f64>()
            / reps as f64;
        assert!(
            (mean / src.amp[idx] - 1.0).abs() < 0.05,
            "ratio {}",
            mean / src.amp[idx]
        );
    }

    #[test]
    fn clamp_values() {
        let g = Grid2D::new(1, 3, GridKind::Sinogram, vec![1.7, -0.2, 0.42]).unwrap();
        let bank = SampleBank {
            kind: BankKind::Mask,
            samples: vec![g],
            source_meta: BTreeMap::new(),
        };
        let c = clamp_bank(&bank, 1.0).unwrap();
        assert_eq!(c.samples[0].data(), &[1.0, 0.0, 0.42]);
        assert!(clamp_bank(&bank, 0.0).is_err());
    }

    #[test]
    fn bank_files() {
        let s = test_sino(8, 10, 14);
        let cfg = PerturbConfig {
            n: 2,
            ..Default::default()
        };
        let (noise, _) = build_banks(&s, &cfg, &mut RngStream::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = noise.save(dir.path()).unwrap();
        assert!(paths[1].ends_with("sample_noise_1.fct"));
        let (g, h) = crate::grid::read_tensor_with_header(&paths[1]).unwrap();
        assert_eq!(g, noise.samples[1]);
        assert_eq!(h.meta["perturb.r1"], "0.5");
    }
}

//! Synthetic OCT fingertip phantoms.
//!
//! Each A-line (image column) is a depth profile built from Gaussian bands
//! over a dark background, followed by multiplicative speckle:
//!
//! * bonafide: a bright epidermis band and a weaker dermis band below it,
//!   on a curved, undulating surface with ridge ripple;
//! * 2D attack: one band on a nearly flat surface;
//! * 3D pressed: one thick flat-topped band;
//! * 3D unpressed: a flat lens reflection line above two bands set implausibly
//!   far apart;
//! * transparent: almost no signal.
//!
//! Per-volume shape parameters are drawn from the seed, so different seeds
//! give different "fingers".

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::bscan::{save_bscan, write_manifest, BScan, DatasetSplit, Label, ManifestEntry, ScanVolume, Split};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Bonafide,
    Pai2d,
    Pai3dPressed,
    Pai3dUnpressed,
    PaiTransparent,
}

impl Preset {
    pub const ATTACKS: [Preset; 3] = [Preset::Pai2d, Preset::Pai3dPressed, Preset::Pai3dUnpressed];

    pub fn label(self) -> Label {
        match self {
            Preset::Bonafide => Label::Bonafide,
            _ => Label::PresentationAttack,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bonafide => "bonafide",
            Preset::Pai2d => "pai-2d",
            Preset::Pai3dPressed => "pai-3d-pressed",
            Preset::Pai3dUnpressed => "pai-3d-unpressed",
            Preset::PaiTransparent => "pai-transparent",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Preset::Bonafide,
            Preset::Pai2d,
            Preset::Pai3dPressed,
            Preset::Pai3dUnpressed,
            Preset::PaiTransparent,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Argument(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub bscans_per_volume: usize,
    pub preset: Preset,
    pub speckle_sigma: f64,
    /// Per-column depth jitter, in pixels.
    pub layer_jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            height: 64,
            width: 192,
            bscans_per_volume: 16,
            preset: Preset::Bonafide,
            speckle_sigma: 0.1,
            layer_jitter: 0.3,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bscans_per_volume == 0 {
            return Err(Error::Argument(format!(
                "synthetic volume needs positive sizes, got {}x{} x {}",
                self.height, self.width, self.bscans_per_volume
            )));
        }
        if !(self.speckle_sigma >= 0.0) || !(self.layer_jitter >= 0.0) {
            return Err(Error::Argument("speckle and jitter must be >= 0".into()));
        }
        Ok(())
    }
}

const BACKGROUND: f64 = 0.04;

#[inline]
fn band(y: f64, centre: f64, sigma: f64) -> f64 {
    let z = (y - centre) / sigma;
    (-0.5 * z * z).exp()
}

/// Shape of one finger or instrument, fixed for a whole volume.
struct Specimen {
    preset: Preset,
    surface: f64,
    undulation: f64,
    period: f64,
    phase: f64,
    curvature: f64,
    ripple: f64,
    ripple_period: f64,
    gap: f64,
    widths: (f64, f64),
    amps: (f64, f64),
    /// Depth of the flat lens reflection line, 3D unpressed only.
    lens: f64,
}

impl Specimen {
    fn draw(preset: Preset, h: f64, w: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let phase = u(0.0, std::f64::consts::TAU);
        let lens = u(0.05, 0.07) * h;
        let mut s = match preset {
            Preset::Bonafide => Self {
                preset,
                surface: u(0.20, 0.28) * h,
                undulation: u(0.03, 0.06) * h,
                period: u(0.6, 1.2) * w,
                phase,
                curvature: u(0.08, 0.12) * h,
                ripple: u(0.008, 0.014) * h,
                ripple_period: u(0.05, 0.07) * w,
                gap: u(0.18, 0.23) * h,
                widths: (u(0.022, 0.028) * h, u(0.035, 0.045) * h),
                amps: (u(0.75, 0.9), u(0.5, 0.62)),
                lens: 0.0,
            },
            Preset::Pai2d => Self {
                preset,
                surface: u(0.28, 0.38) * h,
                undulation: u(0.005, 0.015) * h,
                period: u(1.5, 3.0) * w,
                phase,
                curvature: 0.0,
                ripple: 0.0,
                ripple_period: 1.0,
                gap: 0.0,
                widths: (u(0.025, 0.035) * h, 1.0),
                amps: (u(0.7, 0.9), 0.0),
                lens: 0.0,
            },
            Preset::Pai3dPressed => Self {
                preset,
                surface: u(0.25, 0.32) * h,
                undulation: u(0.0, 0.01) * h,
                period: u(1.5, 3.0) * w,
                phase,
                curvature: 0.0,
                ripple: u(0.004, 0.008) * h,
                ripple_period: u(0.05, 0.07) * w,
                gap: 0.0,
                widths: (u(0.09, 0.12) * h, 1.0),
                amps: (u(0.55, 0.7), 0.0),
                lens: 0.0,
            },
            Preset::Pai3dUnpressed => Self {
                preset,
                surface: u(0.16, 0.20) * h,
                undulation: u(0.02, 0.04) * h,
                period: u(0.6, 1.2) * w,
                phase,
                curvature: u(0.08, 0.12) * h,
                ripple: u(0.006, 0.012) * h,
                ripple_period: u(0.05, 0.07) * w,
                gap: u(0.40, 0.46) * h,
                widths: (u(0.02, 0.028) * h, u(0.03, 0.04) * h),
                amps: (u(0.7, 0.85), u(0.5, 0.62)),
                lens: 0.0,
            },
            Preset::PaiTransparent => Self {
                preset,
                surface: u(0.30, 0.40) * h,
                undulation: u(0.0, 0.01) * h,
                period: u(1.5, 3.0) * w,
                phase,
                curvature: 0.0,
                ripple: 0.0,
                ripple_period: 1.0,
                gap: 0.0,
                widths: (u(0.02, 0.03) * h, 1.0),
                amps: (u(0.03, 0.06), 0.0),
                lens: 0.0,
            },
        };
        if preset == Preset::Pai3dUnpressed {
            s.lens = lens;
        }
        s
    }

    /// Surface depth at column `x` of B-scan `k`.
    fn surface_at(&self, x: f64, w: f64, k: usize) -> f64 {
        let t = x / w;
        let centred = 2.0 * t - 1.0;
        let drift = 0.12 * k as f64;
        self.surface
            + self.undulation * (std::f64::consts::TAU * x / self.period + self.phase + drift).sin()
            + self.curvature * centred * centred
            + self.ripple * (std::f64::consts::TAU * x / self.ripple_period + 0.7 * drift).sin()
    }

    /// Per-B-scan contact variation. Skin conforms to the sensor; printed or
    /// moulded instruments touch it unevenly, so their signal strength (or
    /// layer gap) changes from one B-scan to the next.
    fn contact(&self, h: f64, rng: &mut ChaCha8Rng) -> Contact {
        match self.preset {
            Preset::Pai2d | Preset::Pai3dPressed => Contact {
                amp: rng.random_range(0.3..1.0),
                lift: rng.random_range(-0.08..0.08) * h,
                gap: 0.0,
            },
            Preset::Pai3dUnpressed => Contact {
                amp: 1.0,
                lift: 0.0,
                gap: rng.random_range(-0.05..0.05) * h,
            },
            Preset::Bonafide | Preset::PaiTransparent => Contact {
                amp: 1.0,
                lift: 0.0,
                gap: 0.0,
            },
        }
    }

    /// Noise-free intensity at depth `y` for a column whose surface is at `d`.
    fn profile(&self, y: f64, d: f64, c: Contact) -> f64 {
        let (w1, w2) = self.widths;
        let (a1, a2) = (self.amps.0 * c.amp, self.amps.1 * c.amp);
        let gap = self.gap + c.gap;
        let d = d + c.lift;
        let v = match self.preset {
            Preset::Bonafide | Preset::Pai3dUnpressed => a1 * band(y, d, w1) + a2 * band(y, d + gap, w2),
            Preset::Pai2d | Preset::PaiTransparent => a1 * band(y, d, w1),
            Preset::Pai3dPressed => {
                // flat-topped: fourth-power exponent
                let z = (y - d) / w1;
                a1 * (-0.5 * z.powi(4)).exp()
            }
        };
        let lens = if self.lens > 0.0 { 0.8 * band(y, self.lens, 0.6) } else { 0.0 };
        BACKGROUND + v + lens
    }
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    amp: f64,
    lift: f64,
    gap: f64,
}

/// Renders one volume. Deterministic in `p`.
pub fn generate_volume(p: &SynthParams) -> Result<ScanVolume> {
    p.validate()?;
    let (h, w) = (p.height as f64, p.width as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, "synth-specimen", 0));
    let spec = Specimen::draw(p.preset, h, w, &mut rng);
    let jitter = Normal::new(0.0, p.layer_jitter.max(0.0))
        .map_err(|e| Error::Argument(format!("layer jitter: {e}")))?;

    let mut bscans = Vec::with_capacity(p.bscans_per_volume);
    for k in 0..p.bscans_per_volume {
        let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, "synth-bscan", k as u64));
        let contact = spec.contact(h, &mut noise);
        let mut px = vec![0.0; p.height * p.width];
        for x in 0..p.width {
            let mut d = spec.surface_at(x as f64, w, k);
            if p.layer_jitter > 0.0 {
                d += jitter.sample(&mut noise);
            }
            for y in 0..p.height {
                px[y * p.width + x] = spec.profile(y as f64, d, contact);
            }
        }
        if p.speckle_sigma > 0.0 {
            for v in &mut px {
                let n: f64 = StandardNormal.sample(&mut noise);
                *v *= 1.0 + p.speckle_sigma * n;
            }
        }
        // store on the 16-bit grid so in-memory volumes equal reloaded ones
        for v in &mut px {
            *v = (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0;
        }
        bscans.push(BScan::new(p.width, p.height, px)?);
    }
    ScanVolume::new(format!("{}-{:016x}", p.preset, p.seed), p.preset.label(), bscans)
}

/// One group of volumes to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeRequest {
    pub split: Split,
    pub preset: Preset,
    pub count: usize,
}

/// Volume counts for the usual layout: bonafide model and score sets, and a
/// test set of bonafide scans plus attacks spread round-robin over the 2D,
/// 3D-pressed and 3D-unpressed presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetCounts {
    pub model: usize,
    pub score: usize,
    pub test_bonafide: usize,
    pub test_attack: usize,
    pub test_transparent: usize,
}

impl DatasetCounts {
    pub fn requests(&self) -> Vec<VolumeRequest> {
        let mut reqs = vec![
            VolumeRequest { split: Split::Model, preset: Preset::Bonafide, count: self.model },
            VolumeRequest { split: Split::Score, preset: Preset::Bonafide, count: self.score },
            VolumeRequest { split: Split::Test, preset: Preset::Bonafide, count: self.test_bonafide },
        ];
        for (i, preset) in Preset::ATTACKS.into_iter().enumerate() {
            let n = self.test_attack / 3 + usize::from(i < self.test_attack % 3);
            reqs.push(VolumeRequest { split: Split::Test, preset, count: n });
        }
        reqs.push(VolumeRequest {
            split: Split::Test,
            preset: Preset::PaiTransparent,
            count: self.test_transparent,
        });
        reqs
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub volumes: Vec<ScanVolume>,
    pub split: DatasetSplit,
    pub manifest: PathBuf,
}

/// Generates volumes, writes them as 16-bit PGM under `out_dir/<scan_id>/`,
/// and writes `out_dir/manifest.tsv`. `base` supplies sizes and noise levels;
/// its seed and preset are overridden per volume.
pub fn generate_dataset(out_dir: impl AsRef<Path>, seed: u64, requests: &[VolumeRequest], base: &SynthParams) -> Result<SynthDataset> {
    base.validate()?;
    let out_dir = out_dir.as_ref();
    for r in requests {
        if r.split != Split::Test && r.preset.label() != Label::Bonafide && r.count > 0 {
            return Err(Error::ZeroPaViolation(format!(
                "cannot place {} volumes in the {} split",
                r.preset, r.split
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut volumes = Vec::new();
    let mut entries = Vec::new();
    let mut split = DatasetSplit::default();
    for r in requests {
        for i in 0..r.count {
            let scan_id = format!("{}-{}-{:03}", r.preset, r.split, i);
            let params = SynthParams {
                seed: derive_seed(seed, &scan_id, 0),
                preset: r.preset,
                ..*base
            };
            let generated = generate_volume(&params)?;
            let vol = ScanVolume::new(scan_id.clone(), r.preset.label(), generated.bscans().to_vec())?;
            let dir = out_dir.join(&scan_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut paths = Vec::with_capacity(vol.len());
            for b in vol.bscans() {
                let rel = PathBuf::from(&scan_id).join(format!("{:03}.pgm", b.index));
                save_bscan(b, out_dir.join(&rel), 16)?;
                paths.push(rel);
            }
            entries.push(ManifestEntry {
                scan_id: scan_id.clone(),
                label: vol.label,
                split: r.split,
                paths,
            });
            match r.split {
                Split::Model => split.model_set.push(scan_id),
                Split::Score => split.score_set.push(scan_id),
                Split::Test => split.test_set.push(scan_id),
            }
            volumes.push(vol);
        }
    }
    split.validate(&volumes)?;
    let manifest = out_dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(SynthDataset {
        volumes,
        split,
        manifest,
    })
}

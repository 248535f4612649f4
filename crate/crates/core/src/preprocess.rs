//! Resize and Non-Local Means denoising applied to every B-scan before it
//! reaches the autoencoder.

use serde::{Deserialize, Serialize};

use crate::bscan::{BScan, ScanVolume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    /// Filter strength on the 0..255 intensity scale.
    pub nlm_filter_strength: f64,
    pub nlm_template: usize,
    pub nlm_search: usize,
    pub denoise_enabled: bool,
}

impl Default for PreprocessConfig {
    /// Desk-scale working resolution (64x192) with the reference NLM settings.
    fn default() -> Self {
        Self {
            target_height: 64,
            target_width: 192,
            ..Self::paper()
        }
    }
}

impl PreprocessConfig {
    /// Full working resolution, 256x768, strength 19, windows 7 and 21.
    pub fn paper() -> Self {
        Self {
            target_height: 256,
            target_width: 768,
            nlm_filter_strength: 19.0,
            nlm_template: 7,
            nlm_search: 21,
            denoise_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(Error::Config("target dimensions must be positive".into()));
        }
        if self.nlm_template % 2 == 0 || self.nlm_search % 2 == 0 {
            return Err(Error::Config(format!(
                "NLM windows must be odd, got template {} and search {}",
                self.nlm_template, self.nlm_search
            )));
        }
        if self.nlm_template > self.nlm_search {
            return Err(Error::Config("NLM template window exceeds search window".into()));
        }
        if !(self.nlm_filter_strength > 0.0 && self.nlm_filter_strength.is_finite()) {
            return Err(Error::Config(format!(
                "NLM filter strength must be positive, got {}",
                self.nlm_filter_strength
            )));
        }
        Ok(())
    }

    /// Filter strength rescaled to `[0, 1]` intensities.
    pub fn effective_h(&self) -> f64 {
        self.nlm_filter_strength / 255.0
    }
}

/// Source taps for one output coordinate of a 1-D bilinear resample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
}

/// Half-pixel-centre sampling with edge clamping.
pub(crate) fn axis_taps(in_n: usize, out_n: usize) -> Vec<Tap> {
    let scale = in_n as f64 / out_n as f64;
    let last = (in_n - 1) as f64;
    (0..out_n)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            Tap {
                i0,
                i1: (i0 + 1).min(in_n - 1),
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize of one row-major plane. Equal sizes copy through.
pub(crate) fn resize_plane(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    if in_h == out_h && in_w == out_w {
        return src.to_vec();
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    // horizontal pass first, then vertical
    let mut tmp = vec![0.0; in_h * out_w];
    for r in 0..in_h {
        let s = &src[r * in_w..(r + 1) * in_w];
        let t = &mut tmp[r * out_w..(r + 1) * out_w];
        for (o, tap) in t.iter_mut().zip(&cols) {
            *o = s[tap.i0] + tap.frac * (s[tap.i1] - s[tap.i0]);
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (o, tap) in rows.iter().enumerate() {
        let a = &tmp[tap.i0 * out_w..(tap.i0 + 1) * out_w];
        let b = &tmp[tap.i1 * out_w..(tap.i1 + 1) * out_w];
        for ((dst, &va), &vb) in out[o * out_w..(o + 1) * out_w].iter_mut().zip(a).zip(b) {
            *dst = va + tap.frac * (vb - va);
        }
    }
    out
}

pub fn resize_bilinear(img: &BScan, out_h: usize, out_w: usize) -> Result<BScan> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let mut px = resize_plane(img.pixels(), img.height(), img.width(), out_h, out_w);
    for p in &mut px {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(BScan::new(out_w, out_h, px)?.with_id(img.scan_id.clone(), img.index))
}

/// Interleaved RGB in `[0, 1]` to luma.
pub fn rgb_to_gray(width: usize, height: usize, rgb: &[f64]) -> Result<BScan> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Argument(format!(
            "expected {} RGB samples, got {}",
            3 * width * height,
            rgb.len()
        )));
    }
    let px = rgb
        .chunks_exact(3)
        .map(|c| (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).clamp(0.0, 1.0))
        .collect();
    BScan::new(width, height, px)
}

/// Non-Local Means.
///
/// Every output pixel is the weighted mean of the pixels in its search
/// window, with weight `exp(-d2 / h^2)` where `d2` is the mean squared
/// difference between the two template patches. Borders are clamp-padded.
/// Patch distances come from one integral image per search offset, so the
/// cost is `O(pixels * search^2)` instead of `O(pixels * search^2 * template^2)`.
pub fn nlm_denoise(img: &BScan, cfg: &PreprocessConfig) -> Result<BScan> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    if h < cfg.nlm_template || w < cfg.nlm_template {
        return Err(Error::Argument(format!(
            "image {h}x{w} is smaller than the {0}x{0} template window",
            cfg.nlm_template
        )));
    }
    let tr = cfg.nlm_template / 2;
    let sr = cfg.nlm_search / 2;
    let pad = tr + sr;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; ph * pw];
    for y in 0..ph {
        let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
        let src = img.row(sy);
        for x in 0..pw {
            let sx = (x as isize - pad as isize).clamp(0, w as isize - 1) as usize;
            padded[y * pw + x] = src[sx];
        }
    }

    // region whose patches we need: image expanded by the template radius
    let (rh, rw) = (h + 2 * tr, w + 2 * tr);
    let r0 = pad - tr;
    let patch_n = (cfg.nlm_template * cfg.nlm_template) as f64;
    let inv_h2 = 1.0 / (cfg.effective_h() * cfg.effective_h());
    let t = cfg.nlm_template;

    let mut acc = vec![0.0; h * w];
    let mut wsum = vec![0.0; h * w];
    // integral image with a zero first row/column
    let iw = rw + 1;
    let mut integral = vec![0.0; (rh + 1) * iw];

    for dy in -(sr as isize)..=(sr as isize) {
        for dx in -(sr as isize)..=(sr as isize) {
            for y in 0..rh {
                let py = r0 + y;
                let qy = (py as isize + dy) as usize;
                let prow = &padded[py * pw + r0..py * pw + r0 + rw];
                let qstart = qy * pw + (r0 as isize + dx) as usize;
                let qrow = &padded[qstart..qstart + rw];
                let mut run = 0.0;
                let (above, cur) = integral.split_at_mut((y + 1) * iw);
                let above = &above[y * iw..];
                cur[0] = 0.0;
                for x in 0..rw {
                    let d = prow[x] - qrow[x];
                    run += d * d;
                    cur[x + 1] = above[x + 1] + run;
                }
            }
            for y in 0..h {
                let top = &integral[y * iw..];
                let bot = &integral[(y + t) * iw..];
                let qy = (pad as isize + y as isize + dy) as usize;
                let qstart = qy * pw + (pad as isize + dx) as usize;
                let qrow = &padded[qstart..qstart + w];
                let centre = img.row(y);
                let arow = &mut acc[y * w..(y + 1) * w];
                let wrow = &mut wsum[y * w..(y + 1) * w];
                for x in 0..w {
                    let s = bot[x + t] - bot[x] - top[x + t] + top[x];
                    let d2 = (s / patch_n).max(0.0);
                    let wt = (-d2 * inv_h2).exp();
                    // offsets from the centre keep flat regions exact
                    arow[x] += wt * (qrow[x] - centre[x]);
                    wrow[x] += wt;
                }
            }
        }
    }
    let px = acc
        .iter()
        .zip(&wsum)
        .zip(img.pixels())
        .map(|((a, s), p)| (p + a / s).clamp(0.0, 1.0))
        .collect();
    Ok(BScan::new(w, h, px)?.with_id(img.scan_id.clone(), img.index))
}

/// Resize to the working resolution, then denoise when enabled.
pub fn preprocess_bscan(b: &BScan, cfg: &PreprocessConfig) -> Result<BScan> {
    cfg.validate()?;
    let resized = resize_bilinear(b, cfg.target_height, cfg.target_width)?;
    if cfg.denoise_enabled {
        nlm_denoise(&resized, cfg)
    } else {
        Ok(resized)
    }
}

pub fn preprocess_volume(v: &ScanVolume, cfg: &PreprocessConfig) -> Result<ScanVolume> {
    let bscans = v
        .bscans()
        .iter()
        .map(|b| preprocess_bscan(b, cfg))
        .collect::<Result<Vec<_>>>()?;
    ScanVolume::new(v.scan_id.clone(), v.label, bscans)
}

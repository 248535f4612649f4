//! Saliency maps from decoder activations and the saliency-weighted
//! reconstruction error.
//!
//! Each decoder layer is averaged over channels and resized to the B-scan
//! size; the layer maps are averaged and min-max normalised to `[0, 1]`. A
//! map with no spread becomes all ones, which turns the weighted error back
//! into the plain reconstruction error.

use crate::autoencoder::{raw_error, AutoencoderModel, FeatureMapSet, ReconRecord, Tensor3};
use crate::bscan::BScan;
use crate::error::{Error, Result};
use crate::preprocess::resize_plane;

/// Pixel weights in `[0, 1]`, row-major, same size as the B-scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    /// Population standard deviation of the weights.
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        (self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// As an image, e.g. for writing out as PGM.
    pub fn to_bscan(&self) -> Result<BScan> {
        BScan::new(self.width, self.height, self.values.clone())
    }
}

/// Channel mean of one activation stack, resized to `(out_h, out_w)`.
pub fn layer_map(f: &Tensor3, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if f.channels == 0 || f.height == 0 || f.width == 0 {
        return Err(Error::Argument("empty activation stack".into()));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument("saliency target must be non-empty".into()));
    }
    // the resize is linear, so averaging first gives the same map
    let mut mean = vec![0.0; f.plane_len()];
    for c in 0..f.channels {
        for (m, v) in mean.iter_mut().zip(f.plane(c)) {
            *m += v;
        }
    }
    let inv = 1.0 / f.channels as f64;
    for m in &mut mean {
        *m *= inv;
    }
    Ok(resize_plane(&mean, f.height, f.width, out_h, out_w))
}

/// Maps whose spread is below this fraction of their magnitude count as flat.
const DEGENERATE_SPREAD: f64 = 1e-12;

/// Min-max normalises in place; flat input becomes all ones.
fn normalise(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if !(hi - lo > DEGENERATE_SPREAD * scale) {
        values.fill(1.0);
        return;
    }
    let inv = 1.0 / (hi - lo);
    for v in values {
        *v = ((*v - lo) * inv).clamp(0.0, 1.0);
    }
}

pub fn fine_map(fs: &FeatureMapSet, out_h: usize, out_w: usize) -> Result<SaliencyMap> {
    if fs.is_empty() {
        return Err(Error::Argument("feature map set is empty".into()));
    }
    let mut acc = vec![0.0; out_h * out_w];
    for layer in &fs.layers {
        for (a, v) in acc.iter_mut().zip(layer_map(layer, out_h, out_w)?) {
            *a += v;
        }
    }
    let inv = 1.0 / fs.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    normalise(&mut acc);
    Ok(SaliencyMap {
        height: out_h,
        width: out_w,
        values: acc,
    })
}

/// `||(xhat - x) * map||_2` over the pixel count.
pub fn refined_error(x: &BScan, xhat: &BScan, map: &SaliencyMap) -> Result<f64> {
    if !x.same_dims(xhat) || x.height() != map.height || x.width() != map.width {
        return Err(Error::Argument(format!(
            "refined_error needs equal dims: x {}x{}, xhat {}x{}, map {}x{}",
            x.height(),
            x.width(),
            xhat.height(),
            xhat.width(),
            map.height,
            map.width
        )));
    }
    let ss: f64 = x
        .pixels()
        .iter()
        .zip(xhat.pixels())
        .zip(&map.values)
        .map(|((a, b), m)| {
            let d = (b - a) * m;
            d * d
        })
        .sum();
    Ok(ss.sqrt() / x.len() as f64)
}

/// Full per-B-scan path: reconstruct, build the saliency map, score both errors.
pub fn analyse_bscan(model: &AutoencoderModel, x: &BScan) -> Result<(ReconRecord, SaliencyMap)> {
    let (xhat, maps) = model.reconstruct(x)?;
    let map = fine_map(&maps, x.height(), x.width())?;
    let record = ReconRecord {
        scan_id: x.scan_id.clone(),
        bscan_index: x.index,
        raw_error: raw_error(x, &xhat)?,
        refined_error: refined_error(x, &xhat, &map)?,
    };
    Ok((record, map))
}

//! Convolutional autoencoder trained on bonafide B-scans only.
//!
//! Encoder: a stem convolution, then `encoder_blocks` residual blocks. Each
//! block runs one 3x3 atrous convolution per entry of `atrous_rates`, adds the
//! block input back, and finishes with a stride-2 convolution.
//!
//! Decoder: `decoder_blocks` blocks of bilinear upsampling (x2 until the input
//! size is reached, x1 afterwards) followed by a 3x3 convolution. The last
//! block emits one channel through a sigmoid so reconstructions live in
//! `[0, 1]`. Every decoder block output is kept as a feature map for the
//! saliency stage.
//!
//! Residual wiring: `r = leaky(x + conv_k(... leaky(conv_1(x))))`, i.e. the
//! skip joins before the final activation of the block.

mod adam;
mod checkpoint;
pub mod layers;
pub mod tensor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bscan::{BScan, Label, ScanVolume};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub use adam::Adam;
pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use layers::{leaky, leaky_backward, sigmoid, sigmoid_backward, Conv, Upsample};
pub use tensor::Tensor3;

/// How convolution weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// `N(0, init_std)` for every layer.
    Normal,
    /// `N(0, sqrt(2 / fan_in))`, which keeps activations alive in narrow nets.
    He,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub base_channels: usize,
    pub atrous_rates: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub init: WeightInit,
    pub init_std: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AEConfig {
    /// Desk-scale settings: 64x192 input, narrow channels, 20 epochs.
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 192,
            base_channels: 4,
            init: WeightInit::He,
            learning_rate: 5e-4,
            epochs: 20,
            batch_size: 4,
            ..Self::paper()
        }
    }
}

impl AEConfig {
    /// Published architecture and optimiser settings at 256x768.
    pub fn paper() -> Self {
        Self {
            input_height: 256,
            input_width: 768,
            encoder_blocks: 5,
            decoder_blocks: 6,
            base_channels: 16,
            atrous_rates: vec![1, 2, 5],
            kernel: 3,
            leaky_slope: 0.2,
            init: WeightInit::Normal,
            init_std: 0.02,
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epochs: 20,
            batch_size: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return err("encoder and decoder need at least one block each".into());
        }
        if self.decoder_blocks < self.encoder_blocks {
            return err(format!(
                "{} decoder blocks cannot undo {} halvings",
                self.decoder_blocks, self.encoder_blocks
            ));
        }
        let div = 1usize
            .checked_shl(self.encoder_blocks as u32)
            .ok_or_else(|| Error::Config("too many encoder blocks".into()))?;
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % div != 0
            || self.input_width % div != 0
        {
            return err(format!(
                "input {}x{} is not divisible by 2^{}",
                self.input_height, self.input_width, self.encoder_blocks
            ));
        }
        if self.base_channels == 0 {
            return err("base_channels must be positive".into());
        }
        if self.atrous_rates.is_empty() || self.atrous_rates.contains(&0) {
            return err(format!("atrous rates must be >= 1, got {:?}", self.atrous_rates));
        }
        if self.kernel % 2 == 0 {
            return err(format!("kernel size must be odd, got {}", self.kernel));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return err("Adam betas must lie in [0, 1)".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return err(format!("init_std must be >= 0, got {}", self.init_std));
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        Ok(())
    }

    fn encoder_channels(&self, block: usize) -> usize {
        let cap = 8 * self.base_channels;
        (self.base_channels << block.min(16)).min(cap)
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    convs: Vec<Conv>,
    down: Conv,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    up: Upsample,
    conv: Conv,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: Conv,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    n_params: usize,
}

impl Layout {
    fn new(cfg: &AEConfig) -> Self {
        let mut offset = 0;
        let mut conv = |in_c, out_c, stride, dilation| {
            let c = Conv {
                in_c,
                out_c,
                kernel: cfg.kernel,
                stride,
                dilation,
                weight_offset: offset,
                bias_offset: offset + out_c * in_c * cfg.kernel * cfg.kernel,
            };
            offset += c.param_len();
            c
        };
        let stem = conv(1, cfg.encoder_channels(0), 1, 1);
        let mut encoder = Vec::new();
        for b in 0..cfg.encoder_blocks {
            let c = cfg.encoder_channels(b);
            let convs = cfg.atrous_rates.iter().map(|&r| conv(c, c, 1, r)).collect();
            let down = conv(c, cfg.encoder_channels(b + 1), 2, 1);
            encoder.push(EncoderBlock { convs, down });
        }
        let mut decoder = Vec::new();
        let (mut h, mut w) = (
            cfg.input_height >> cfg.encoder_blocks,
            cfg.input_width >> cfg.encoder_blocks,
        );
        let mut ch = cfg.encoder_channels(cfg.encoder_blocks);
        for j in 0..cfg.decoder_blocks {
            if h < cfg.input_height {
                h *= 2;
                w *= 2;
            }
            let out_c = if j + 1 == cfg.decoder_blocks {
                1
            } else {
                (ch / 2).max(cfg.base_channels)
            };
            let c = conv(ch, out_c, 1, 1);
            decoder.push(DecoderBlock {
                up: Upsample { out_h: h, out_w: w },
                conv: c,
            });
            ch = out_c;
        }
        Self {
            stem,
            encoder,
            decoder,
            n_params: offset,
        }
    }

    fn convs(&self) -> impl Iterator<Item = &Conv> {
        std::iter::once(&self.stem)
            .chain(self.encoder.iter().flat_map(|b| b.convs.iter().chain(std::iter::once(&b.down))))
            .chain(self.decoder.iter().map(|b| &b.conv))
    }
}

/// Decoder block outputs captured during one forward pass, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub layers: Vec<Tensor3>,
}

impl FeatureMapSet {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Per-B-scan errors: raw autoencoder error and its saliency-weighted version.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconRecord {
    pub scan_id: String,
    pub bscan_index: usize,
    pub raw_error: f64,
    pub refined_error: f64,
}

struct EncoderTrace {
    input: Tensor3,
    /// Pre-activation of every atrous convolution.
    pre: Vec<Tensor3>,
    /// Activated outputs of all but the last atrous convolution.
    act: Vec<Tensor3>,
    sum_pre: Tensor3,
    res: Tensor3,
    down_pre: Tensor3,
}

struct DecoderTrace {
    input: Tensor3,
    up: Tensor3,
    pre: Tensor3,
    out: Tensor3,
}

struct Trace {
    input: Tensor3,
    stem_pre: Tensor3,
    encoder: Vec<EncoderTrace>,
    decoder: Vec<DecoderTrace>,
}

impl Trace {
    fn output(&self) -> &Tensor3 {
        &self.decoder.last().expect("at least one decoder block").out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    config: AEConfig,
    layout_params: usize,
    params: Vec<f64>,
    pub trained: bool,
}

/// Rounds to the nearest `f32`, the precision checkpoints store.
#[inline]
fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

pub fn build_model(cfg: &AEConfig) -> Result<AutoencoderModel> {
    AutoencoderModel::new(cfg.clone())
}

impl AutoencoderModel {
    /// Fresh model: weights drawn per `config.init` from the config seed, zero
    /// biases.
    pub fn new(config: AEConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ae-init", 0));
        for conv in layout.convs() {
            let std = match config.init {
                WeightInit::Normal => config.init_std,
                WeightInit::He => (2.0 / (conv.in_c * conv.kernel * conv.kernel) as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("init_std: {e}")))?;
            let w = &mut params[conv.weight_offset..conv.weight_offset + conv.weight_len()];
            for v in w {
                *v = to_f32_grid(normal.sample(&mut rng));
            }
        }
        Ok(Self {
            layout_params: layout.n_params,
            config,
            params,
            trained: false,
        })
    }

    pub(crate) fn from_parts(config: AEConfig, params: Vec<f64>, trained: bool) -> Result<Self> {
        config.validate()?;
        let n = Layout::new(&config).n_params;
        if params.len() != n {
            return Err(Error::IncompatibleCheckpoint(format!(
                "config implies {n} parameters, checkpoint holds {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout_params: n,
            params,
            trained,
        })
    }

    pub fn config(&self) -> &AEConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access, used by gradient checks.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout_params
    }

    /// `(height, width)` of the bottleneck activation.
    pub fn bottleneck_dims(&self) -> (usize, usize) {
        (
            self.config.input_height >> self.config.encoder_blocks,
            self.config.input_width >> self.config.encoder_blocks,
        )
    }

    fn check_input(&self, x: &BScan) -> Result<()> {
        if x.height() != self.config.input_height || x.width() != self.config.input_width {
            return Err(Error::Argument(format!(
                "model expects {}x{} input, got {}x{}",
                self.config.input_height,
                self.config.input_width,
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    fn forward(&self, layout: &Layout, x: &BScan) -> Trace {
        let p = &self.params;
        let slope = self.config.leaky_slope;
        let input = Tensor3::from_plane(x.height(), x.width(), x.pixels().to_vec());
        let stem_pre = layout.stem.forward(p, &input);
        let mut h = stem_pre.map(|v| leaky(v, slope));
        let mut encoder = Vec::with_capacity(layout.encoder.len());
        for block in &layout.encoder {
            let block_in = h;
            let mut pre = Vec::with_capacity(block.convs.len());
            let mut act = Vec::with_capacity(block.convs.len() - 1);
            for (k, conv) in block.convs.iter().enumerate() {
                let src = if k == 0 { &block_in } else { &act[k - 1] };
                let z = conv.forward(p, src);
                if k + 1 < block.convs.len() {
                    act.push(z.map(|v| leaky(v, slope)));
                }
                pre.push(z);
            }
            let mut sum_pre = pre.last().expect("non-empty rates").clone();
            for (s, &v) in sum_pre.data.iter_mut().zip(&block_in.data) {
                *s += v;
            }
            let res = sum_pre.map(|v| leaky(v, slope));
            let down_pre = block.down.forward(p, &res);
            h = down_pre.map(|v| leaky(v, slope));
            encoder.push(EncoderTrace {
                input: block_in,
                pre,
                act,
                sum_pre,
                res,
                down_pre,
            });
        }
        let mut decoder = Vec::with_capacity(layout.decoder.len());
        let last = layout.decoder.len() - 1;
        for (j, block) in layout.decoder.iter().enumerate() {
            let up = block.up.forward(&h);
            let pre = block.conv.forward(p, &up);
            let out = if j == last {
                pre.map(sigmoid)
            } else {
                pre.map(|v| leaky(v, slope))
            };
            decoder.push(DecoderTrace {
                input: h,
                up,
                pre,
                out: out.clone(),
            });
            h = out;
        }
        Trace {
            input,
            stem_pre,
            encoder,
            decoder,
        }
    }

    /// Back-propagates `grad_output` (gradient w.r.t. the reconstruction) and
    /// accumulates parameter gradients into `grads`.
    fn backward(&self, layout: &Layout, trace: Trace, grad_output: Tensor3, grads: &mut [f64]) {
        let p = &self.params;
        let slope = self.config.leaky_slope;
        let mut g = grad_output;
        let last = layout.decoder.len() - 1;
        for (j, (block, t)) in layout.decoder.iter().zip(trace.decoder).enumerate().rev() {
            if j == last {
                sigmoid_backward(&t.out, &mut g);
            } else {
                leaky_backward(&t.pre, &mut g, slope);
            }
            let g_up = block.conv.backward(p, &t.up, &g, grads);
            g = block.up.backward(t.input.height, t.input.width, &g_up);
        }
        for (block, t) in layout.encoder.iter().zip(trace.encoder).rev() {
            // g is the gradient w.r.t. leaky(down_pre)
            leaky_backward(&t.down_pre, &mut g, slope);
            let mut g_sum = block.down.backward(p, &t.res, &g, grads);
            leaky_backward(&t.sum_pre, &mut g_sum, slope);
            let mut g_in = g_sum.clone();
            let mut g_branch = g_sum;
            for k in (0..block.convs.len()).rev() {
                if k + 1 < block.convs.len() {
                    leaky_backward(&t.pre[k], &mut g_branch, slope);
                }
                let src = if k == 0 { &t.input } else { &t.act[k - 1] };
                g_branch = block.convs[k].backward(p, src, &g_branch, grads);
            }
            for (a, b) in g_in.data.iter_mut().zip(&g_branch.data) {
                *a += b;
            }
            g = g_in;
        }
        leaky_backward(&trace.stem_pre, &mut g, slope);
        layout.stem.backward(p, &trace.input, &g, grads);
    }

    /// Reconstruction plus the decoder feature maps of the same pass.
    pub fn reconstruct(&self, x: &BScan) -> Result<(BScan, FeatureMapSet)> {
        self.check_input(x)?;
        let layout = Layout::new(&self.config);
        let trace = self.forward(&layout, x);
        let out = trace.output();
        let px = out.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let xhat = BScan::new(x.width(), x.height(), px)?.with_id(x.scan_id.clone(), x.index);
        let layers = trace.decoder.into_iter().map(|d| d.out).collect();
        Ok((xhat, FeatureMapSet { layers }))
    }

    /// Training objective for one B-scan, `||F(x) - x||_2` (not normalised).
    pub fn loss(&self, x: &BScan) -> Result<f64> {
        self.check_input(x)?;
        let layout = Layout::new(&self.config);
        let trace = self.forward(&layout, x);
        Ok(l2_distance(&trace.output().data, x.pixels()))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, x: &BScan) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let layout = Layout::new(&self.config);
        let mut grads = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(&layout, x, 1.0, &mut grads);
        Ok((loss, grads))
    }

    fn accumulate_gradient(&self, layout: &Layout, x: &BScan, scale: f64, grads: &mut [f64]) -> f64 {
        let trace = self.forward(layout, x);
        let out = trace.output();
        let loss = l2_distance(&out.data, x.pixels());
        let mut g = Tensor3::zeros_like(out);
        if loss > 0.0 {
            for ((d, &y), &t) in g.data.iter_mut().zip(&out.data).zip(x.pixels()) {
                *d = scale * (y - t) / loss;
            }
        }
        self.backward(layout, trace, g, grads);
        loss
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between two images divided by the pixel count.
pub fn raw_error(x: &BScan, xhat: &BScan) -> Result<f64> {
    if !x.same_dims(xhat) {
        return Err(Error::Argument(format!(
            "raw_error needs equal dims, got {}x{} and {}x{}",
            x.height(),
            x.width(),
            xhat.height(),
            xhat.width()
        )));
    }
    Ok(l2_distance(x.pixels(), xhat.pixels()) / x.len() as f64)
}

/// Mean loss of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Minimises the mean `||F(x) - x||_2` over every B-scan of `model_set` with
/// Adam. B-scans of all volumes are pooled and reshuffled each epoch from the
/// config seed, so a fixed seed and input order give identical weights.
pub fn train<'a>(
    mut model: AutoencoderModel,
    model_set: impl IntoIterator<Item = &'a ScanVolume>,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<AutoencoderModel> {
    let mut samples: Vec<&BScan> = Vec::new();
    for v in model_set {
        if v.label != Label::Bonafide {
            return Err(Error::ZeroPaViolation(format!(
                "volume {:?} labelled {} cannot be used for training",
                v.scan_id, v.label
            )));
        }
        samples.extend(v.bscans());
    }
    if samples.is_empty() {
        return Err(Error::EmptyModelSet);
    }
    for b in &samples {
        model.check_input(b)?;
    }
    let cfg = model.config.clone();
    let layout = Layout::new(&cfg);
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "ae-shuffle", 0));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = vec![0.0; model.params.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_gradient(&layout, samples[i], scale, &mut grads);
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss * scale,
                });
            }
            total += batch_loss;
            adam.step(&mut model.params, &grads);
            for p in &mut model.params {
                *p = to_f32_grid(*p);
            }
        }
        let mean_loss = total / samples.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean_loss}");
        on_epoch(EpochStats { epoch, mean_loss });
    }
    model.trained = true;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> AEConfig {
        AEConfig {
            input_height: 8,
            input_width: 8,
            encoder_blocks: 1,
            decoder_blocks: 1,
            base_channels: 2,
            init: WeightInit::Normal,
            init_std: 0.3,
            seed: 1,
            ..AEConfig::default()
        }
    }

    fn ramp(h: usize, w: usize) -> BScan {
        let px = (0..h * w).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        BScan::new(w, h, px).unwrap()
    }

    #[test]
    fn default_bottleneck_is_2x6() {
        let m = build_model(&AEConfig::default()).unwrap();
        assert_eq!(m.bottleneck_dims(), (2, 6));
    }

    #[test]
    fn forward_of_zeros_is_finite_and_shaped() {
        let m = build_model(&AEConfig::default()).unwrap();
        let x = BScan::filled(192, 64, 0.0).unwrap();
        let (xhat, maps) = m.reconstruct(&x).unwrap();
        assert_eq!((xhat.height(), xhat.width()), (64, 192));
        assert!(xhat.pixels().iter().all(|v| v.is_finite()));
        assert_eq!(maps.len(), 6);
        assert!(maps.layers.iter().all(|t| t.height >= 1 && t.width >= 1));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_model(&AEConfig::default()).unwrap();
        let b = build_model(&AEConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_model(&AEConfig { seed: 99, ..AEConfig::default() }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = AEConfig {
            input_height: 60,
            ..AEConfig::default()
        };
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
        let cfg = AEConfig {
            decoder_blocks: 3,
            ..AEConfig::default()
        };
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn reconstruct_rejects_wrong_dims() {
        let m = build_model(&tiny_config()).unwrap();
        let x = BScan::filled(4, 8, 0.0).unwrap();
        assert!(matches!(m.reconstruct(&x), Err(Error::Argument(_))));
    }

    #[test]
    fn inference_is_deterministic() {
        let m = build_model(&tiny_config()).unwrap();
        let x = ramp(8, 8);
        assert_eq!(m.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
    }

    #[test]
    fn raw_error_cases() {
        let x = BScan::filled(2, 2, 1.0).unwrap();
        let z = BScan::filled(2, 2, 0.0).unwrap();
        assert_eq!(raw_error(&x, &x).unwrap(), 0.0);
        assert!((raw_error(&x, &z).unwrap() - 0.5).abs() < 1e-15);
        let a = BScan::new(2, 2, vec![0.3, 0.0, 0.0, 0.4]).unwrap();
        assert!((raw_error(&a, &z).unwrap() - 0.125).abs() < 1e-15);
        assert!(raw_error(&a, &BScan::filled(1, 4, 0.0).unwrap()).is_err());
    }

    #[test]
    fn zero_epochs_keeps_initial_weights() {
        let cfg = AEConfig {
            epochs: 0,
            ..tiny_config()
        };
        let m = build_model(&cfg).unwrap();
        let v = ScanVolume::new("v", Label::Bonafide, vec![ramp(8, 8)]).unwrap();
        let trained = train(m.clone(), [&v], |_| {}).unwrap();
        assert_eq!(trained.params(), m.params());
        assert!(trained.trained);
    }

    #[test]
    fn training_rejects_attacks_and_empty_sets() {
        let m = build_model(&tiny_config()).unwrap();
        let pa = ScanVolume::new("p", Label::PresentationAttack, vec![ramp(8, 8)]).unwrap();
        assert!(matches!(
            train(m.clone(), [&pa], |_| {}),
            Err(Error::ZeroPaViolation(_))
        ));
        assert!(matches!(
            train(m, std::iter::empty(), |_| {}),
            Err(Error::EmptyModelSet)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = AEConfig {
            learning_rate: 1e300,
            epochs: 3,
            ..tiny_config()
        };
        let m = build_model(&cfg).unwrap();
        let v = ScanVolume::new("v", Label::Bonafide, vec![ramp(8, 8)]).unwrap();
        match train(m, [&v], |_| {}) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn loss_is_reconstruction_distance() {
        let m = build_model(&tiny_config()).unwrap();
        let x = ramp(8, 8);
        let (xhat, _) = m.reconstruct(&x).unwrap();
        let expect = raw_error(&x, &xhat).unwrap() * x.len() as f64;
        assert!((m.loss(&x).unwrap() - expect).abs() < 1e-12);
    }
}

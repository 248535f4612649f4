//! Zero-shot presentation attack detection for OCT fingerprint scans.
//!
//! An autoencoder is trained on bonafide B-scans only. At test time each
//! B-scan's reconstruction error is weighted by a saliency map built from the
//! decoder activations, the per-volume errors are summarised as a Gaussian,
//! and that Gaussian is compared against bonafide calibration statistics to
//! produce confidence scores.

pub mod autoencoder;
pub mod bscan;
mod error;
pub mod evaluator;
pub mod finemap;
pub mod pipeline;
pub mod preprocess;
pub mod scorer;
pub mod seed;
pub mod synth;

pub use autoencoder::{build_model, load_model, raw_error, save_model, train, AEConfig, AutoencoderModel, FeatureMapSet, ReconRecord, WeightInit};
pub use bscan::{load_bscan, load_manifest, save_bscan, BScan, DatasetSplit, Label, ScanVolume, Split};
pub use error::{Error, Result};
pub use evaluator::{eval_ms, eval_score, EvalReport, LabeledScore, Threshold};
pub use finemap::{fine_map, refined_error, SaliencyMap};
pub use pipeline::{PipelineConfig, PipelinePaths};
pub use preprocess::{nlm_denoise, preprocess_bscan, preprocess_volume, resize_bilinear, PreprocessConfig};
pub use scorer::{ConfidenceReport, Decision, ScanGaussian, ScoreCalibration, ScoreKind, Thresholds};
pub use seed::derive_seed;
pub use synth::{generate_dataset, generate_volume, Preset, SynthParams};

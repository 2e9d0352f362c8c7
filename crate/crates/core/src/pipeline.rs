//! Score → mask → apply → evaluate, for single runs and sparsity sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::{FormatError, Report, TensorF32};
use crate::masking::{apply_mask, build_mask, pruned_overlap, Granularity, MaskError, PruneMask};
use crate::refnet::{
    activation_norms, forward, gradient_norms, mse_loss, per_sample_gradients, CalibrationBatch,
    LossKind, NetError, Network, NormOrder,
};
use crate::scoring::{score, Method, ScoreError, ScoreInputs, ScoreMatrix, DEFAULT_ALPHA};

/// Offset between the calibration seed and the evaluation-batch seed.
pub const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Per-layer score inputs from one calibration batch.
pub fn layer_score_inputs(
    net: &Network,
    batch: &CalibrationBatch,
    alpha: f64,
    norm: NormOrder,
) -> Result<Vec<ScoreInputs>, PipelineError> {
    let trace = forward(net, batch)?;
    let grads = per_sample_gradients(net, batch, LossKind::Mse)?;
    net.layers()
        .iter()
        .zip(&trace.layer_inputs)
        .zip(&grads)
        .map(|((layer, x), g)| {
            Ok(ScoreInputs::new(
                layer.weight().clone(),
                activation_norms(x)?,
                gradient_norms(g, norm)?,
                alpha,
            )?)
        })
        .collect()
}

pub fn score_layers(method: Method, inputs: &[ScoreInputs]) -> Result<Vec<ScoreMatrix>, PipelineError> {
    inputs.iter().map(|i| Ok(score(method, i)?)).collect()
}

/// Masks every layer at `ratio` and returns the pruned network with its masks.
pub fn prune_network(
    net: &Network,
    inputs: &[ScoreInputs],
    method: Method,
    ratio: f64,
    granularity: Granularity,
) -> Result<(Network, Vec<PruneMask>), PipelineError> {
    let scores = score_layers(method, inputs)?;
    let masks = scores
        .iter()
        .map(|s| build_mask(s, ratio, granularity))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = net
        .layers()
        .iter()
        .zip(&masks)
        .map(|(l, m)| apply_mask(l.weight(), m))
        .collect::<Result<Vec<TensorF32>, _>>()?;
    Ok((net.with_weights(weights)?, masks))
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_norm_p() -> u32 {
    2
}

fn default_calib_samples() -> usize {
    128
}

fn default_eval_samples() -> usize {
    256
}

fn default_noise() -> f64 {
    0.1
}

/// Sweep description, read from a single JSON document.
///
/// Relative paths are resolved against the directory holding the config file.
/// Without a `batch`, calibration and evaluation batches are synthesized from
/// `seed` using the network itself as the reference function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_norm_p")]
    pub norm_p: u32,
    pub net: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<PathBuf>,
    #[serde(default = "default_calib_samples")]
    pub calib_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        // joining an absolute path replaces the base
        cfg.net = base.join(&cfg.net);
        cfg.batch = cfg.batch.map(|p| base.join(p));
        cfg.out = cfg.out.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("duplicate method".into());
        }
        if self.ratios.is_empty() {
            return bad("no ratios".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("ratio {r} outside [0,1]"));
        }
        if self.ratios.windows(2).any(|w| w[0] > w[1]) {
            return bad("ratios must be sorted ascending".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha {} must be >= 0", self.alpha));
        }
        NormOrder::from_p(self.norm_p)?;
        if self.batch.is_none() && (self.calib_samples == 0 || self.eval_samples == 0) {
            return bad("sample counts must be positive".into());
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        Ok(())
    }
}

/// One `(method, ratio)` point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub method: Method,
    pub ratio: f64,
    pub masks: Vec<PruneMask>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub baseline_loss: f64,
    /// Ordered by method, then ratio.
    pub cells: Vec<SweepCell>,
    pub reports: Vec<Report>,
}

impl SweepOutcome {
    pub fn cell(&self, method: Method, ratio: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.ratio == ratio)
    }
}

/// Pooled Jaccard of the pruned sets across all layers.
pub fn pooled_jaccard(a: &[PruneMask], b: &[PruneMask]) -> Result<f64, MaskError> {
    let mut inter = 0;
    let mut union = 0;
    for (x, y) in a.iter().zip(b) {
        let (i, u) = pruned_overlap(x, y)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome, PipelineError> {
    cfg.validate()?;
    let net = Network::load(&cfg.net)?;
    let (calib, eval) = match &cfg.batch {
        Some(p) => {
            let b = CalibrationBatch::load(p)?;
            (b.clone(), b)
        }
        None => (
            CalibrationBatch::synthesize(&net, cfg.calib_samples, cfg.noise, cfg.seed),
            CalibrationBatch::synthesize(
                &net,
                cfg.eval_samples,
                cfg.noise,
                cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
            ),
        ),
    };
    run_sweep_on(cfg, &net, &calib, &eval)
}

/// Sweep over an already-loaded network and batches.
pub fn run_sweep_on(
    cfg: &SweepConfig,
    net: &Network,
    calib: &CalibrationBatch,
    eval: &CalibrationBatch,
) -> Result<SweepOutcome, PipelineError> {
    cfg.validate()?;
    let norm = NormOrder::from_p(cfg.norm_p)?;
    let inputs = layer_score_inputs(net, calib, cfg.alpha, norm)?;
    let baseline_loss = mse_loss(net, eval)?;

    let mut methods = cfg.methods.clone();
    methods.sort();
    let grid: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| cfg.ratios.iter().map(move |&r| (m, r)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(method, ratio)| {
            let (pruned, masks) = prune_network(net, &inputs, method, ratio, cfg.granularity)?;
            Ok(SweepCell {
                method,
                ratio,
                masks,
                loss: mse_loss(&pruned, eval)?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let mut reports = Vec::with_capacity(cells.len());
    for cell in &cells {
        let total: usize = cell.masks.iter().map(|m| m.keep().len()).sum();
        let pruned: usize = cell.masks.iter().map(PruneMask::pruned_count).sum();
        let mut report = Report::new(cell.method.name(), cell.ratio)
            .with("loss", cell.loss)
            .with("loss_increase", cell.loss - baseline_loss)
            .with("achieved_sparsity", pruned as f64 / total.max(1) as f64);
        for other in cells
            .iter()
            .filter(|o| o.ratio == cell.ratio && o.method != cell.method)
        {
            report.insert(
                format!("jaccard_{}", other.method.name()),
                pooled_jaccard(&cell.masks, &other.masks)?,
            );
        }
        reports.push(report);
    }
    Ok(SweepOutcome {
        baseline_loss,
        cells,
        reports,
    })
}

/// Per-layer min/mean/max of a score set, keyed by layer index.
pub fn layer_stats(scores: &[ScoreMatrix]) -> BTreeMap<usize, (f64, f64, f64)> {
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| (i, crate::scoring::score_stats(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(net: PathBuf) -> SweepConfig {
        SweepConfig::from_json(&format!(
            "{{\"ratios\":[0.0,0.2,0.4],\"net\":{:?},\"seed\":3,\"calib_samples\":16,\"eval_samples\":16}}",
            net
        ))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = config("n".into());
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.alpha, 100.0);
        assert_eq!(cfg.norm_p, 2);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.ratios = vec![0.3, 0.1];
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.ratios = vec![1.2];
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.norm_p = 3;
        assert!(bad.validate().is_err());
        assert!(SweepConfig::from_json("{\"ratios\":[0.1],\"net\":\"n\",\"bogus\":1}").is_err());
    }

    #[test]
    fn ratio_zero_matches_baseline() {
        let dir = tempfile::tempdir().unwrap();
        Network::seeded(&[8, 6, 2], 4).save(dir.path()).unwrap();
        let out = run_sweep(&config(dir.path().to_path_buf())).unwrap();
        assert_eq!(out.cells.len(), 15);
        for m in Method::ALL {
            assert_eq!(out.cell(m, 0.0).unwrap().loss, out.baseline_loss);
        }
        assert_eq!(out.reports[0].method, "magnitude");
        assert_eq!(out.reports[0].sparsity, 0.0);
        assert!(out.reports[0].get("jaccard_hgla").is_some());
    }
}

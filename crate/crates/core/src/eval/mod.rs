//! Evaluation: endpoint errors, the L_c embedding metric, and comparison reports.

mod lc;
mod metrics;
mod pca;
mod report;

pub use lc::{lc_from_features, lc_metric, point_features, sample_bilinear};
pub use metrics::{aepe, epe_sum, EpeSum};
pub use pca::{jacobi_eigen, pca_project, Pca};
pub use report::{config_digest, MetricsReport, ModelRecord};

use std::collections::BTreeMap;

use crate::error::Result;
use crate::keypoints::{random_points, GoodFeatures};
use crate::masks::{make_mask, reference_mask, MaskConfig};
use crate::model::FlowNet;
use crate::seed::derive_seed;
use crate::synth::FlowDataset;
use crate::tensor::Scalar;

/// How a model is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Named detectors; key-point AEPE is reported per name. The first one
    /// also supplies the condition-mask and L_c key points.
    pub detectors: Vec<(String, GoodFeatures)>,
    /// Condition given to the query frame.
    pub mask: MaskConfig,
    /// PCA dimension for L_c.
    pub pca_dim: usize,
    /// Number of leading samples whose point features are pooled for L_c.
    pub lc_samples: usize,
    /// Seed of the random comparison points.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detectors: vec![("gf".to_string(), GoodFeatures::default())],
            mask: MaskConfig::default(),
            pca_dim: 2,
            lc_samples: 32,
            seed: 0,
        }
    }
}

/// Metrics of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub aepe_all: f64,
    pub aepe_kp: BTreeMap<String, f64>,
    pub l_c: f64,
}

/// Evaluates `net` on every sample of `data`.
///
/// Overall AEPE covers valid pixels; key-point AEPE covers the valid rounded
/// key-point pixels of the query frame. Both pool pixels across samples.
/// L_c pools key-point and equally many random-point features from the first
/// `lc_samples` samples before the joint PCA.
pub fn evaluate<T: Scalar>(net: &FlowNet<T>, data: &dyn FlowDataset, cfg: &EvalConfig) -> Result<ModelMetrics> {
    let mut all = EpeSum::default();
    let mut kp: Vec<EpeSum> = vec![EpeSum::default(); cfg.detectors.len()];
    let (mut key_feats, mut rand_feats) = (Vec::new(), Vec::new());
    for i in 0..data.len() {
        let s = data.sample(i)?;
        let dims = s.dims();
        let sets = cfg.detectors.iter().map(|(_, d)| d.detect(&s.i1)).collect::<Result<Vec<_>>>()?;
        let query = make_mask(&sets[0], dims, cfg.mask.pattern, cfg.mask.diameter, cfg.mask.sigma, Some(&s.i1))?;
        let reference = reference_mask(dims)?;
        let pred = net.forward_masked(&s.i1.cast(), &s.i2.cast(), &query, &reference)?.flow.cast::<f64>();
        all.add(epe_sum(&s.gt_flow, &pred, None, Some(&s.valid))?);
        for (acc, set) in kp.iter_mut().zip(&sets) {
            acc.add(epe_sum(&s.gt_flow, &pred, Some(set), Some(&s.valid))?);
        }
        if i < cfg.lc_samples && !sets[0].is_empty() {
            let random = random_points(dims.0, dims.1, sets[0].len(), derive_seed(cfg.seed, i as u64))?;
            key_feats.extend(point_features(net, &s.i1, &query, &sets[0])?);
            rand_feats.extend(point_features(net, &s.i1, &query, &random)?);
        }
    }
    let mut aepe_kp = BTreeMap::new();
    for ((name, _), acc) in cfg.detectors.iter().zip(&kp) {
        aepe_kp.insert(name.clone(), acc.mean()?);
    }
    Ok(ModelMetrics { aepe_all: all.mean()?, aepe_kp, l_c: lc_from_features(&key_feats, &rand_feats, cfg.pca_dim)? })
}

/// Evaluates every `(tag, model, config digest)` on the same data.
pub fn compare<T: Scalar>(models: &[(String, FlowNet<T>, String)], data: &dyn FlowDataset, cfg: &EvalConfig) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (tag, net, digest) in models {
        let m = evaluate(net, data, cfg)?;
        report.rows.push(ModelRecord {
            model: tag.clone(),
            aepe_all: m.aepe_all,
            aepe_kp: m.aepe_kp,
            l_c: m.l_c,
            params: net.param_count(),
            config_digest: digest.clone(),
        });
    }
    Ok(report)
}

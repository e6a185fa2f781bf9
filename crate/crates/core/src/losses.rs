//! Endpoint-error losses: the dense photometric loss, the key-point weighted
//! CPCL, their mix, and the Gaussian α weights that focus supervision.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::flow::FlowField;
use crate::keypoints::KeyPointSet;
use crate::tensor::{Scalar, Tensor};

/// Per-pixel supervision weights `α_i ≥ 0` on an `[H,W]` grid.
#[derive(Debug, Clone)]
pub struct WeightMap {
    pub values: Tensor<f64>,
    pub mu: usize,
    pub sigma: f64,
}

impl WeightMap {
    pub fn total(&self) -> f64 {
        self.values.data().iter().sum()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    /// Same map with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> WeightMap {
        let v = self.values.data().iter().map(|a| a * c).collect();
        WeightMap { values: Tensor::from_vec(self.values.shape(), v).expect("same shape"), ..*self }
    }

    /// A map with the same positive weight everywhere.
    pub fn uniform(dims: (usize, usize), value: f64) -> Result<WeightMap> {
        Ok(WeightMap { values: Tensor::full(&[dims.0, dims.1], value)?, mu: 0, sigma: 0.0 })
    }
}

/// Which objective the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Photometric,
    Cpcl,
    Mix,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Photometric, LossKind::Cpcl, LossKind::Mix];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Photometric => "lp",
            LossKind::Cpcl => "cpcl",
            LossKind::Mix => "mix",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" | "photometric" => Ok(LossKind::Photometric),
            "cpcl" => Ok(LossKind::Cpcl),
            "mix" => Ok(LossKind::Mix),
            _ => Err(Error::InvalidArgument(format!("unknown loss kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Norm order, 1 or 2.
    pub p: u8,
    pub lambda: f64,
    /// Odd neighborhood diameter for α.
    pub mu: usize,
    pub sigma: f64,
}

impl Default for LossConfig {
    /// Point supervision: `μ = 1`, `σ = 0.01`, `λ = 1`, L1 norm.
    fn default() -> Self {
        LossConfig { kind: LossKind::Mix, p: 1, lambda: 1.0, mu: 1, sigma: 0.01 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return arg_err(format!("loss norm must be 1 or 2, got {}", self.p));
        }
        if !(self.lambda >= 0.0) {
            return arg_err(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.mu % 2 == 0 {
            return arg_err(format!("mu must be odd, got {}", self.mu));
        }
        if !(self.sigma > 0.0) {
            return arg_err(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }

    /// Whether the objective needs α weights at all.
    pub fn uses_cpcl(&self) -> bool {
        match self.kind {
            LossKind::Photometric => false,
            LossKind::Cpcl => true,
            LossKind::Mix => self.lambda > 0.0,
        }
    }
}

/// `σ` tied to `μ` for sweeps: `(μ - 1) / 6`, or 0.01 when `μ = 1`.
pub fn sigma_for_mu(mu: usize) -> f64 {
    if mu <= 1 {
        0.01
    } else {
        (mu as f64 - 1.0) / 6.0
    }
}

/// Weights of the per-scale losses, coarsest first: `0.32 · 0.8^(L-1-ℓ)`.
pub fn scale_weights(levels: usize) -> Vec<f64> {
    (0..levels).map(|l| 0.32 * 0.8f64.powi((levels - 1 - l) as i32)).collect()
}

/// Gaussian α weights: every pixel within `(μ-1)/2` of a key-point pixel
/// collects `exp(-d²/2σ²) / (σ√(2π))` from that key point; contributions from
/// several key points add up.
pub fn alpha_weights(keypoints: &KeyPointSet, dims: (usize, usize), mu: usize, sigma: f64) -> Result<WeightMap> {
    let (h, w) = dims;
    if mu % 2 == 0 {
        return arg_err(format!("mu must be odd and >= 1, got {mu}"));
    }
    if !(sigma > 0.0) {
        return arg_err(format!("sigma must be positive, got {sigma}"));
    }
    if (keypoints.height, keypoints.width) != dims {
        return shape_err(format!(
            "key points belong to a {}x{} image, weights are {h}x{w}",
            keypoints.height, keypoints.width
        ));
    }
    let radius = (mu as f64 - 1.0) / 2.0;
    let reach = radius.floor() as isize;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let mut v = vec![0.0; h * w];
    for (pr, pc) in keypoints.pixels() {
        for dr in -reach..=reach {
            let r = pr as isize + dr;
            if r < 0 || r >= h as isize {
                continue;
            }
            for dc in -reach..=reach {
                let c = pc as isize + dc;
                if c < 0 || c >= w as isize {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64;
                if d2 <= radius * radius {
                    v[r as usize * w + c as usize] += norm * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    Ok(WeightMap { values: Tensor::from_vec(&[h, w], v)?, mu, sigma })
}

fn check_dims<T: Scalar>(f: &FlowField<T>, f_hat: &FlowField<T>) -> Result<()> {
    if f.dims() != f_hat.dims() {
        return shape_err(format!("flow dims differ: {:?} vs {:?}", f.dims(), f_hat.dims()));
    }
    Ok(())
}

/// Per-pixel `||f_i - f̂_i||_p` as `[H,W]`, differentiable in `f_hat`.
pub fn epe_map<T: Scalar>(f: &FlowField<T>, f_hat: &FlowField<T>, p: u8) -> Result<Tensor<T>> {
    check_dims(f, f_hat)?;
    f_hat.tensor().epe_map(f.tensor(), p)
}

/// Mean endpoint error over all pixels.
pub fn photometric_loss<T: Scalar>(f: &FlowField<T>, f_hat: &FlowField<T>, p: u8) -> Result<Tensor<T>> {
    Ok(epe_map(f, f_hat, p)?.mean())
}

fn cpcl_from_epe<T: Scalar>(epe: &Tensor<T>, alpha: &WeightMap) -> Result<Tensor<T>> {
    let dims = (epe.shape()[0], epe.shape()[1]);
    if alpha.dims() != dims {
        return shape_err(format!("weight map {:?} vs flow {dims:?}", alpha.dims()));
    }
    let total = alpha.total();
    if !(total > 0.0) {
        return Err(Error::EmptySupervision("all α weights are zero".into()));
    }
    let w: Vec<T> = alpha.values.data().iter().map(|&a| T::lit(a)).collect();
    Ok(epe.weighted_sum(&w)?.scale(T::lit(1.0 / total)))
}

/// `Σ α_i ||f_i - f̂_i||_p / Σ α_i`.
pub fn cpcl<T: Scalar>(f: &FlowField<T>, f_hat: &FlowField<T>, alpha: &WeightMap, p: u8) -> Result<Tensor<T>> {
    cpcl_from_epe(&epe_map(f, f_hat, p)?, alpha)
}

/// `L_p + λ · L_cpcl`; with `λ = 0` the CPCL term is never evaluated.
pub fn mix_loss<T: Scalar>(f: &FlowField<T>, f_hat: &FlowField<T>, alpha: &WeightMap, cfg: &LossConfig) -> Result<Tensor<T>> {
    let mix = LossConfig { kind: LossKind::Mix, ..*cfg };
    Ok(loss_terms(f, f_hat, Some(alpha), &mix)?.objective)
}

/// The objective selected by `cfg.kind` plus its components for logging.
#[derive(Debug, Clone)]
pub struct LossTerms<T: Scalar> {
    pub objective: Tensor<T>,
    pub photometric: Tensor<T>,
    /// `None` when no α map was supplied or it was empty.
    pub cpcl: Option<Tensor<T>>,
}

/// Computes the endpoint-error map once and derives every term from it.
///
/// When the objective needs CPCL but `alpha` is missing or all zero the
/// error is returned; callers decide how to treat empty supervision.
pub fn loss_terms<T: Scalar>(
    f: &FlowField<T>,
    f_hat: &FlowField<T>,
    alpha: Option<&WeightMap>,
    cfg: &LossConfig,
) -> Result<LossTerms<T>> {
    cfg.validate()?;
    let epe = epe_map(f, f_hat, cfg.p)?;
    let photometric = epe.mean();
    let cpcl = match alpha {
        Some(a) if a.total() > 0.0 => Some(cpcl_from_epe(&epe, a)?),
        _ => None,
    };
    let need = |c: &Option<Tensor<T>>| -> Result<Tensor<T>> {
        c.clone().ok_or_else(|| Error::EmptySupervision("objective needs CPCL but no key-point weights".into()))
    };
    let objective = match cfg.kind {
        LossKind::Photometric => photometric.clone(),
        LossKind::Cpcl => need(&cpcl)?,
        LossKind::Mix if cfg.lambda == 0.0 => photometric.clone(),
        LossKind::Mix => photometric.add(&need(&cpcl)?.scale(T::lit(cfg.lambda)))?,
    };
    Ok(LossTerms { objective, photometric, cpcl })
}

/// Objective summed over per-scale predictions (coarsest first) with
/// [`scale_weights`].
pub fn multiscale_loss<T: Scalar>(
    gt: &FlowField<T>,
    scales: &[FlowField<T>],
    alpha: Option<&WeightMap>,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    if scales.is_empty() {
        return arg_err("multi-scale loss needs at least one prediction");
    }
    let weights = scale_weights(scales.len());
    let mut total: Option<Tensor<T>> = None;
    for (pred, &wt) in scales.iter().zip(&weights) {
        let term = loss_terms(gt, pred, alpha, cfg)?.objective.scale(T::lit(wt));
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.expect("at least one scale"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::KeyPoint;
    use crate::tensor::Init;

    fn field(h: usize, w: usize, seed: u64) -> FlowField<f64> {
        FlowField::new(Tensor::create(&[2, h, w], Init::Uniform { low: -3.0, high: 3.0, seed }).unwrap()).unwrap()
    }

    fn one_point(h: usize, w: usize, x: f64, y: f64) -> KeyPointSet {
        KeyPointSet::new(vec![KeyPoint { x, y, score: 1.0 }], h, w, "test")
    }

    #[test]
    fn epe_hand_values() {
        let f = FlowField::constant(1, 1, 3.0, 4.0).unwrap();
        let z = FlowField::zeros(1, 1).unwrap();
        assert_eq!(epe_map(&f, &z, 2).unwrap().data(), &[5.0]);
        assert_eq!(epe_map(&f, &z, 1).unwrap().data(), &[7.0]);
        let g = field(3, 4, 1);
        assert!(epe_map(&g, &g, 2).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(epe_map(&g, &field(4, 3, 1), 2).is_err());
    }

    #[test]
    fn photometric_constant_error() {
        let f = FlowField::constant(5, 6, 3.0f64, 4.0).unwrap();
        let z = FlowField::zeros(5, 6).unwrap();
        assert!((photometric_loss(&f, &z, 2).unwrap().item().unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(photometric_loss(&f, &f, 1).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn alpha_point_supervision_value() {
        let a = alpha_weights(&one_point(16, 16, 5.0, 5.0), (16, 16), 1, 0.01).unwrap();
        let peak = 1.0 / (0.01 * (2.0 * PI).sqrt());
        assert!((a.values.at(&[5, 5]) - peak).abs() / peak < 1e-12);
        assert!((peak - 39.894).abs() < 1e-3);
        assert_eq!(a.values.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn alpha_empty_set_is_zero() {
        let k = KeyPointSet::new(vec![], 6, 6, "none");
        let a = alpha_weights(&k, (6, 6), 5, 1.0).unwrap();
        assert_eq!(a.total(), 0.0);
    }

    #[test]
    fn alpha_errors() {
        let k = one_point(6, 6, 1.0, 1.0);
        assert!(alpha_weights(&k, (6, 6), 2, 1.0).is_err());
        assert!(alpha_weights(&k, (6, 6), 3, 0.0).is_err());
        assert!(alpha_weights(&k, (5, 6), 3, 1.0).is_err());
    }

    #[test]
    fn cpcl_single_supervised_pixel() {
        let mut v = vec![0.0; 9];
        v[4] = 3.7;
        let alpha = WeightMap { values: Tensor::from_vec(&[3, 3], v).unwrap(), mu: 1, sigma: 1.0 };
        let f = FlowField::constant(3, 3, 1.0f64, 1.0).unwrap();
        let z = FlowField::zeros(3, 3).unwrap();
        assert!((cpcl(&f, &z, &alpha, 1).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cpcl_rejects_empty_supervision() {
        let alpha = WeightMap::uniform((3, 3), 0.0).unwrap();
        let f = field(3, 3, 2);
        assert!(matches!(cpcl(&f, &field(3, 3, 3), &alpha, 1), Err(Error::EmptySupervision(_))));
    }

    #[test]
    fn mix_degenerate_cases() {
        let (f, g) = (field(4, 5, 4), field(4, 5, 5));
        let uniform = WeightMap::uniform((4, 5), 0.3).unwrap();
        let lp = photometric_loss(&f, &g, 1).unwrap().item().unwrap();
        let cfg0 = LossConfig { lambda: 0.0, ..LossConfig::default() };
        let empty = WeightMap::uniform((4, 5), 0.0).unwrap();
        assert_eq!(mix_loss(&f, &g, &empty, &cfg0).unwrap().item().unwrap(), lp);
        let cfg1 = LossConfig { lambda: 1.0, ..LossConfig::default() };
        let m = mix_loss(&f, &g, &uniform, &cfg1).unwrap().item().unwrap();
        assert!((m - 2.0 * lp).abs() < 1e-12);
    }

    #[test]
    fn scale_weight_schedule() {
        let w = scale_weights(3);
        assert!((w[2] - 0.32).abs() < 1e-15);
        assert!((w[1] - 0.256).abs() < 1e-15);
        assert!((w[0] - 0.2048).abs() < 1e-15);
        assert_eq!(sigma_for_mu(1), 0.01);
        assert_eq!(sigma_for_mu(31), 5.0);
    }
}

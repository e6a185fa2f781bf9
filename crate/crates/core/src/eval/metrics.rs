use crate::error::{shape_err, Error, Result};
use crate::flow::FlowField;
use crate::keypoints::KeyPointSet;
use crate::tensor::Tensor;

/// Sum of endpoint errors and number of evaluated pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpeSum {
    pub total: f64,
    pub count: usize,
}

impl EpeSum {
    pub fn add(&mut self, other: EpeSum) {
        self.total += other.total;
        self.count += other.count;
    }

    /// Mean endpoint error; errors when nothing was evaluated.
    pub fn mean(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptyEvaluation("no pixel was evaluated".into()));
        }
        Ok(self.total / self.count as f64)
    }
}

/// Endpoint-error sum over the selected pixels: rounded key-point pixels when
/// `points` is given (each distinct pixel once), every pixel otherwise, in
/// both cases restricted to `valid` pixels when a mask is supplied.
pub fn epe_sum(gt: &FlowField<f64>, pred: &FlowField<f64>, points: Option<&KeyPointSet>, valid: Option<&Tensor<f64>>) -> Result<EpeSum> {
    let (h, w) = gt.dims();
    if pred.dims() != (h, w) {
        return shape_err(format!("flow dims differ: {:?} vs {:?}", gt.dims(), pred.dims()));
    }
    if let Some(v) = valid {
        if v.numel() != h * w || v.shape().iter().rev().take(2).ne([w, h].iter()) {
            return shape_err(format!("valid mask {:?} vs flow {h}x{w}", v.shape()));
        }
    }
    if let Some(p) = points {
        if (p.height, p.width) != (h, w) {
            return shape_err(format!("key points belong to a {}x{} image, flow is {h}x{w}", p.height, p.width));
        }
    }
    let selected: Vec<(usize, usize)> = match points {
        Some(p) => p.pixels(),
        None => (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect(),
    };
    let mut acc = EpeSum::default();
    for (r, c) in selected {
        if valid.is_some_and(|v| v.data()[r * w + c] == 0.0) {
            continue;
        }
        let (gu, gv) = gt.at(r, c);
        let (pu, pv) = pred.at(r, c);
        acc.total += ((gu - pu).powi(2) + (gv - pv).powi(2)).sqrt();
        acc.count += 1;
    }
    Ok(acc)
}

/// Average endpoint error over the selected pixels (see [`epe_sum`]).
pub fn aepe(gt: &FlowField<f64>, pred: &FlowField<f64>, points: Option<&KeyPointSet>, valid: Option<&Tensor<f64>>) -> Result<f64> {
    epe_sum(gt, pred, points, valid)?.mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::KeyPoint;

    #[test]
    fn identity_is_zero_and_single_pixel_is_norm() {
        let gt = FlowField::constant(3, 3, 1.0f64, 2.0).unwrap();
        assert_eq!(aepe(&gt, &gt, None, None).unwrap(), 0.0);
        let pred = FlowField::constant(3, 3, 4.0f64, 6.0).unwrap();
        let set = KeyPointSet::new(vec![KeyPoint { x: 1.0, y: 2.0, score: 1.0 }], 3, 3, "t");
        assert_eq!(aepe(&gt, &pred, Some(&set), None).unwrap(), 5.0);
    }

    #[test]
    fn empty_selection_is_an_error() {
        let gt = FlowField::zeros(2, 2).unwrap();
        let valid = Tensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(aepe(&gt, &gt, None, Some(&valid)), Err(Error::EmptyEvaluation(_))));
        let empty = KeyPointSet::new(vec![], 2, 2, "t");
        assert!(aepe(&gt, &gt, Some(&empty), None).is_err());
    }
}

use crate::error::{arg_err, shape_err, Error, Result};
use crate::keypoints::KeyPointSet;
use crate::masks::ConditionMask;
use crate::model::FlowNet;
use crate::tensor::{Scalar, Tensor};

use super::pca::Pca;

/// Bilinear sample of a `[C,h,w]` feature map at fractional `(y, x)`,
/// coordinates clamped to the map.
pub fn sample_bilinear(features: &Tensor<f64>, y: f64, x: f64) -> Result<Vec<f64>> {
    let [c, h, w] = *features.shape() else {
        return shape_err(format!("feature map must be [C,H,W], got {:?}", features.shape()));
    };
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let d = features.data();
    Ok((0..c)
        .map(|ch| {
            let at = |r: usize, col: usize| d[(ch * h + r) * w + col];
            (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
        })
        .collect())
}

/// Final-stage encoder features of `image` under `mask`, sampled at each
/// point; image coordinates are divided by the cumulative encoder stride.
pub fn point_features<T: Scalar>(
    net: &FlowNet<T>,
    image: &Tensor<f64>,
    mask: &ConditionMask,
    points: &KeyPointSet,
) -> Result<Vec<Vec<f64>>> {
    let feats = net.cce_forward(&image.cast(), &mask.values.cast())?;
    let top: Tensor<f64> = feats.last().expect("at least one stage").cast();
    let stride = net.spec().cumulative_stride(net.spec().stages() - 1) as f64;
    points.points.iter().map(|p| sample_bilinear(&top, p.y / stride, p.x / stride)).collect()
}

fn centroid(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in c.iter_mut().zip(r) {
            *a += v;
        }
    }
    c.iter().map(|a| a / rows.len() as f64).collect()
}

/// Distance between the centroids of the two sets after a joint `k`-component
/// PCA fitted on their union.
pub fn lc_from_features(key: &[Vec<f64>], random: &[Vec<f64>], k: usize) -> Result<f64> {
    if key.is_empty() || random.is_empty() {
        return Err(Error::EmptyEvaluation("L_c needs both point sets nonempty".into()));
    }
    let d = key[0].len();
    if k > d {
        return arg_err(format!("PCA dimension {k} exceeds feature dimension {d}"));
    }
    let union: Vec<Vec<f64>> = key.iter().chain(random).cloned().collect();
    let pca = Pca::fit(&union, k)?;
    let pk: Vec<Vec<f64>> = key.iter().map(|r| pca.project(r)).collect();
    let pr: Vec<Vec<f64>> = random.iter().map(|r| pca.project(r)).collect();
    let (ck, cr) = (centroid(&pk), centroid(&pr));
    Ok(ck.iter().zip(&cr).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// L_c on one image: key-point versus random-point features of the final
/// encoder stage, jointly projected by PCA(`k`).
pub fn lc_metric<T: Scalar>(
    net: &FlowNet<T>,
    image: &Tensor<f64>,
    mask: &ConditionMask,
    key_points: &KeyPointSet,
    random_points: &KeyPointSet,
    k: usize,
) -> Result<f64> {
    if key_points.is_empty() || random_points.is_empty() {
        return Err(Error::EmptyEvaluation("L_c needs both point sets nonempty".into()));
    }
    let key = point_features(net, image, mask, key_points)?;
    let random = point_features(net, image, mask, random_points)?;
    lc_from_features(&key, &random, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_centroids() {
        let key = vec![vec![4.0], vec![6.0]];
        let random = vec![vec![0.0], vec![2.0]];
        assert!((lc_from_features(&key, &random, 1).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(lc_from_features(&key, &key, 1).unwrap(), 0.0);
    }

    #[test]
    fn bilinear_sampling_of_a_plane() {
        // Channel value 2y + x is reproduced exactly at interior points.
        let data: Vec<f64> = (0..3).flat_map(|y| (0..4).map(move |x| 2.0 * y as f64 + x as f64)).collect();
        let f = Tensor::from_vec(&[1, 3, 4], data).unwrap();
        let v = sample_bilinear(&f, 1.25, 2.5).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
        assert_eq!(sample_bilinear(&f, -3.0, 9.0).unwrap()[0], 3.0);
    }
}

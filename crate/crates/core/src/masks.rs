//! Condition masks fed to the condition encoder.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};
use crate::keypoints::{image_dims, KeyPointSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    /// Binary, one at each key-point pixel.
    Point,
    /// Binary disc around each key point.
    NeighborE,
    /// Peak-one Gaussian inside each disc, max-combined.
    NeighborG,
    /// Frame intensities inside the disc union.
    Context,
    /// The frame itself; no key-point information.
    Frame,
    /// All ones.
    Reference,
}

impl MaskPattern {
    /// The five patterns usable as a query condition.
    pub const QUERY: [MaskPattern; 5] =
        [MaskPattern::Frame, MaskPattern::NeighborE, MaskPattern::NeighborG, MaskPattern::Context, MaskPattern::Point];

    pub fn name(&self) -> &'static str {
        match self {
            MaskPattern::Point => "point",
            MaskPattern::NeighborE => "neighbor-E",
            MaskPattern::NeighborG => "neighbor-G",
            MaskPattern::Context => "context",
            MaskPattern::Frame => "frame",
            MaskPattern::Reference => "reference",
        }
    }

    pub fn needs_frame(&self) -> bool {
        matches!(self, MaskPattern::Context | MaskPattern::Frame)
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "point" => Ok(MaskPattern::Point),
            "neighbor-e" | "neighbor_e" => Ok(MaskPattern::NeighborE),
            "neighbor-g" | "neighbor_g" => Ok(MaskPattern::NeighborG),
            "context" => Ok(MaskPattern::Context),
            "frame" => Ok(MaskPattern::Frame),
            "reference" => Ok(MaskPattern::Reference),
            _ => Err(Error::InvalidArgument(format!("unknown mask pattern {s:?}"))),
        }
    }
}

/// Single-channel condition input `[1,H,W]`.
#[derive(Debug, Clone)]
pub struct ConditionMask {
    pub values: Tensor<f64>,
    pub pattern: MaskPattern,
}

impl ConditionMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }
}

/// Mask-generation settings shared by training and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub pattern: MaskPattern,
    /// Odd disc diameter for the neighborhood patterns.
    pub diameter: usize,
    pub sigma: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { pattern: MaskPattern::Point, diameter: 31, sigma: 5.0 }
    }
}

fn normalized_frame(frame: &Tensor<f64>, dims: (usize, usize)) -> Result<Vec<f64>> {
    let fd = image_dims(frame)?;
    if fd != dims {
        return Err(Error::ShapeMismatch(format!("frame is {fd:?}, mask is {dims:?}")));
    }
    Ok(frame.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Visits every pixel within `radius` of any rounded key point with its squared distance.
fn for_each_in_discs(kps: &KeyPointSet, dims: (usize, usize), radius: f64, mut f: impl FnMut(usize, f64)) {
    let (h, w) = dims;
    let reach = radius.floor() as isize;
    for p in &kps.points {
        let (pr, pc) = p.pixel(h, w);
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
                    f(r as usize * w + c as usize, d2);
                }
            }
        }
    }
}

/// Builds a condition mask. Key points are taken at their rounded pixels and
/// discs of radius `(diameter - 1) / 2` are clipped at the image border.
pub fn make_mask(
    keypoints: &KeyPointSet,
    dims: (usize, usize),
    pattern: MaskPattern,
    diameter: usize,
    sigma: f64,
    frame: Option<&Tensor<f64>>,
) -> Result<ConditionMask> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return arg_err("mask dims must be at least 1x1");
    }
    if diameter % 2 == 0 {
        return arg_err(format!("disc diameter must be odd, got {diameter}"));
    }
    if !(sigma > 0.0) {
        return arg_err(format!("sigma must be positive, got {sigma}"));
    }
    if keypoints.height != h || keypoints.width != w {
        return Err(Error::ShapeMismatch(format!(
            "key points belong to a {}x{} image, mask is {h}x{w}",
            keypoints.height, keypoints.width
        )));
    }
    let frame = match (pattern.needs_frame(), frame) {
        (true, Some(f)) => Some(normalized_frame(f, dims)?),
        (true, None) => return arg_err(format!("pattern {pattern} needs a frame")),
        (false, _) => None,
    };
    let radius = (diameter as f64 - 1.0) / 2.0;
    let mut v = vec![0.0; h * w];
    match pattern {
        MaskPattern::Point => {
            for (r, c) in keypoints.pixels() {
                v[r * w + c] = 1.0;
            }
        }
        MaskPattern::NeighborE => for_each_in_discs(keypoints, dims, radius, |i, _| v[i] = 1.0),
        MaskPattern::NeighborG => {
            let denom = 2.0 * sigma * sigma;
            for_each_in_discs(keypoints, dims, radius, |i, d2| v[i] = f64::max(v[i], (-d2 / denom).exp()));
        }
        MaskPattern::Context => {
            let fr = frame.expect("checked above");
            for_each_in_discs(keypoints, dims, radius, |i, _| v[i] = fr[i]);
        }
        MaskPattern::Frame => v = frame.expect("checked above"),
        MaskPattern::Reference => v.fill(1.0),
    }
    Ok(ConditionMask { values: Tensor::from_vec(&[1, h, w], v)?, pattern })
}

/// The all-ones mask given to the reference frame.
pub fn reference_mask(dims: (usize, usize)) -> Result<ConditionMask> {
    let (h, w) = dims;
    Ok(ConditionMask { values: Tensor::ones(&[1, h, w])?, pattern: MaskPattern::Reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::KeyPoint;

    fn kps(h: usize, w: usize, pts: &[(f64, f64)]) -> KeyPointSet {
        KeyPointSet::new(pts.iter().map(|&(x, y)| KeyPoint { x, y, score: 1.0 }).collect(), h, w, "test")
    }

    #[test]
    fn point_pattern_single_key_point() {
        let m = make_mask(&kps(8, 8, &[(2.0, 3.0)]), (8, 8), MaskPattern::Point, 1, 1.0, None).unwrap();
        assert_eq!(m.values.data().iter().sum::<f64>(), 1.0);
        assert_eq!(m.values.at(&[0, 3, 2]), 1.0);
    }

    #[test]
    fn neighbor_e_diameter_three_is_a_plus() {
        let m = make_mask(&kps(7, 7, &[(3.0, 3.0)]), (7, 7), MaskPattern::NeighborE, 3, 1.0, None).unwrap();
        let ones: Vec<(usize, usize)> = (0..7)
            .flat_map(|r| (0..7).map(move |c| (r, c)))
            .filter(|&(r, c)| m.values.at(&[0, r, c]) == 1.0)
            .collect();
        assert_eq!(ones, vec![(2, 3), (3, 2), (3, 3), (3, 4), (4, 3)]);
    }

    #[test]
    fn frame_pattern_ignores_key_points() {
        let frame = Tensor::create(&[5, 6], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 1 }).unwrap();
        let a = make_mask(&kps(5, 6, &[(1.0, 1.0)]), (5, 6), MaskPattern::Frame, 3, 1.0, Some(&frame)).unwrap();
        let b = make_mask(&kps(5, 6, &[]), (5, 6), MaskPattern::Frame, 3, 1.0, Some(&frame)).unwrap();
        assert_eq!(a.values.data(), frame.data());
        assert!(a.values.bitwise_eq(&b.values));
    }

    #[test]
    fn errors() {
        let k = kps(5, 5, &[(1.0, 1.0)]);
        assert!(make_mask(&k, (5, 5), MaskPattern::Context, 3, 1.0, None).is_err());
        assert!(make_mask(&k, (5, 5), MaskPattern::NeighborE, 4, 1.0, None).is_err());
        assert!(make_mask(&k, (6, 5), MaskPattern::Point, 3, 1.0, None).is_err());
    }

    #[test]
    fn reference_is_all_ones() {
        let m = reference_mask((4, 4)).unwrap();
        assert_eq!(m.values.data(), &[1.0; 16]);
        assert_eq!(m.pattern, MaskPattern::Reference);
        assert!(m.values.bitwise_eq(&reference_mask((4, 4)).unwrap().values));
    }

    #[test]
    fn gaussian_peaks_at_key_points_and_duplicates_change_nothing() {
        let one = kps(9, 9, &[(4.0, 4.0), (1.0, 7.0)]);
        let dup = kps(9, 9, &[(4.0, 4.0), (1.0, 7.0), (4.0, 4.0)]);
        let a = make_mask(&one, (9, 9), MaskPattern::NeighborG, 5, 1.5, None).unwrap();
        let b = make_mask(&dup, (9, 9), MaskPattern::NeighborG, 5, 1.5, None).unwrap();
        assert!(a.values.bitwise_eq(&b.values));
        assert_eq!(a.values.at(&[0, 4, 4]), 1.0);
        assert_eq!(a.values.at(&[0, 7, 1]), 1.0);
        assert!(a.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn parse_pattern_names() {
        for p in MaskPattern::QUERY {
            assert_eq!(p.name().parse::<MaskPattern>().unwrap(), p);
        }
        assert!("dots".parse::<MaskPattern>().is_err());
    }
}

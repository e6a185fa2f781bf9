//! Key-point detection (Shi–Tomasi "good features to track"), random point
//! sets, and the `x,y,score` CSV exchange format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    /// Column, in pixels.
    pub x: f64,
    /// Row, in pixels.
    pub y: f64,
    pub score: f64,
}

impl KeyPoint {
    /// Nearest pixel `(row, col)`, halves rounding up, clamped into the image.
    pub fn pixel(&self, height: usize, width: usize) -> (usize, usize) {
        let r = ((self.y + 0.5).floor().max(0.0) as usize).min(height - 1);
        let c = ((self.x + 0.5).floor().max(0.0) as usize).min(width - 1);
        (r, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPointSet {
    pub points: Vec<KeyPoint>,
    pub height: usize,
    pub width: usize,
    pub detector: String,
}

impl KeyPointSet {
    pub fn new(points: Vec<KeyPoint>, height: usize, width: usize, detector: impl Into<String>) -> Self {
        KeyPointSet { points, height, width, detector: detector.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct rounded pixels in first-seen order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let mut seen = vec![false; self.height * self.width];
        let mut out = Vec::new();
        for p in &self.points {
            let (r, c) = p.pixel(self.height, self.width);
            if !seen[r * self.width + c] {
                seen[r * self.width + c] = true;
                out.push((r, c));
            }
        }
        out
    }
}

/// Splits an image tensor of shape `[H,W]` or `[1,H,W]` into its dims.
pub fn image_dims(image: &Tensor<f64>) -> Result<(usize, usize)> {
    match image.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        s => Err(Error::ShapeMismatch(format!("expected a grayscale image [H,W] or [1,H,W], got {s:?}"))),
    }
}

/// Shi–Tomasi detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodFeatures {
    pub max_corners: usize,
    /// Fraction of the strongest response a candidate must reach.
    pub quality_level: f64,
    pub min_distance: f64,
}

impl GoodFeatures {
    /// Settings used by VINS-Mono on full-size frames.
    pub fn vins() -> Self {
        GoodFeatures { max_corners: 500, quality_level: 0.01, min_distance: 10.0 }
    }

    /// Same corner budget and quality, spacing scaled to 32-64 px frames.
    pub fn desk() -> Self {
        GoodFeatures { max_corners: 500, quality_level: 0.01, min_distance: 3.0 }
    }

    pub fn detect(&self, image: &Tensor<f64>) -> Result<KeyPointSet> {
        detect_good_features(image, self.max_corners, self.quality_level, self.min_distance)
    }
}

impl Default for GoodFeatures {
    fn default() -> Self {
        Self::desk()
    }
}

/// Minimum eigenvalue of the 2×2 structure tensor at every pixel.
///
/// Gradients are 3×3 Sobel, the tensor is summed over a 3×3 box; both use
/// replicated borders. Output is row-major `H·W`.
pub fn min_eigen_response(image: &Tensor<f64>) -> Result<Vec<f64>> {
    let (h, w) = image_dims(image)?;
    let px = image.data();
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        px[r * w + c]
    };
    let mut gxx = vec![0.0; h * w];
    let mut gxy = vec![0.0; h * w];
    let mut gyy = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            gxx[i] = gx * gx;
            gxy[i] = gx * gy;
            gyy[i] = gy * gy;
        }
    }
    let boxed = |m: &[f64], r: isize, c: isize| -> f64 {
        let mut s = 0.0;
        for dr in -1..=1 {
            for dc in -1..=1 {
                let rr = (r + dr).clamp(0, h as isize - 1) as usize;
                let cc = (c + dc).clamp(0, w as isize - 1) as usize;
                s += m[rr * w + cc];
            }
        }
        s
    };
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let a = boxed(&gxx, r, c);
            let b = boxed(&gxy, r, c);
            let d = boxed(&gyy, r, c);
            let half_tr = 0.5 * (a + d);
            let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            out[r as usize * w + c as usize] = (half_tr - disc).max(0.0);
        }
    }
    Ok(out)
}

/// Shi–Tomasi corners: threshold at `quality_level · max`, 3×3 non-maximum
/// suppression, then greedy selection by descending response (ties in
/// row-major order) keeping points at least `min_distance` apart.
pub fn detect_good_features(
    image: &Tensor<f64>,
    max_corners: usize,
    quality_level: f64,
    min_distance: f64,
) -> Result<KeyPointSet> {
    let (h, w) = image_dims(image)?;
    if max_corners == 0 {
        return arg_err("max_corners must be at least 1");
    }
    if !(quality_level > 0.0 && quality_level <= 1.0) {
        return arg_err(format!("quality_level must be in (0, 1], got {quality_level}"));
    }
    if !(min_distance >= 0.0) {
        return arg_err(format!("min_distance must be >= 0, got {min_distance}"));
    }
    if !image.all_finite() {
        return Err(Error::NonFinite("detector input image".into()));
    }
    let resp = min_eigen_response(image)?;
    let max = resp.iter().copied().fold(0.0, f64::max);
    let mut set = KeyPointSet::new(Vec::new(), h, w, "gf");
    if max <= 0.0 {
        return Ok(set);
    }
    let thresh = quality_level * max;
    let mut cands: Vec<(usize, f64)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = resp[r * w + c];
            if v < thresh || v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if resp[rr as usize * w + cc as usize] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                cands.push((r * w + c, v));
            }
        }
    }
    // stable: equal responses stay in row-major order
    cands.sort_by(|a, b| b.1.total_cmp(&a.1));
    let min_d2 = min_distance * min_distance;
    for (idx, v) in cands {
        if set.points.len() >= max_corners {
            break;
        }
        let (x, y) = ((idx % w) as f64, (idx / w) as f64);
        let far = set.points.iter().all(|p| {
            let (dx, dy) = (p.x - x, p.y - y);
            dx * dx + dy * dy >= min_d2
        });
        if far {
            set.points.push(KeyPoint { x, y, score: v });
        }
    }
    Ok(set)
}

/// `n` distinct integer pixels drawn uniformly without replacement.
pub fn random_points(h: usize, w: usize, n: usize, seed: u64) -> Result<KeyPointSet> {
    let total = h * w;
    if n > total {
        return arg_err(format!("cannot draw {n} distinct points from a {h}x{w} image"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    let points = idx[..n]
        .iter()
        .map(|&k| KeyPoint { x: (k % w) as f64, y: (k / w) as f64, score: 0.0 })
        .collect();
    Ok(KeyPointSet::new(points, h, w, "random"))
}

/// Six decimals unless that would lose bits, then the shortest exact form.
fn fmt_real(v: f64) -> String {
    let fixed = format!("{v:.6}");
    if fixed.parse::<f64>().map(|p| p.to_bits() == v.to_bits()).unwrap_or(false) {
        fixed
    } else {
        format!("{v}")
    }
}

pub fn keypoints_to_csv(set: &KeyPointSet) -> String {
    let mut s = String::new();
    for p in &set.points {
        s.push_str(&format!("{},{},{}\n", fmt_real(p.x), fmt_real(p.y), fmt_real(p.score)));
    }
    s
}

/// Parses `x,y,score` lines; blank lines are ignored.
pub fn parse_keypoints(text: &str, dims: (usize, usize)) -> Result<KeyPointSet> {
    let (h, w) = dims;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 3 fields, found {}", fields.len()) });
        }
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .map_err(|e| Error::Parse { line: line_no, msg: format!("bad number {f:?}: {e}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, msg: format!("non-finite value {f:?}") });
            }
        }
        let [x, y, score] = vals;
        if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("point ({x}, {y}) outside a {h}x{w} image"),
            });
        }
        points.push(KeyPoint { x, y, score });
    }
    Ok(KeyPointSet::new(points, h, w, "file"))
}

pub fn load_keypoints(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<KeyPointSet> {
    parse_keypoints(&fs::read_to_string(path)?, dims)
}

pub fn write_keypoints(set: &KeyPointSet, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), keypoints_to_csv(set).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                v.push(f(r, c));
            }
        }
        Tensor::from_vec(&[h, w], v).unwrap()
    }

    #[test]
    fn constant_image_has_no_corners() {
        let set = detect_good_features(&img(12, 12, |_, _| 0.4), 10, 0.01, 1.0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn corner_budget_respected() {
        let noisy = Tensor::create(&[20, 20], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 4 }).unwrap();
        for max in [1, 3, 7] {
            assert!(detect_good_features(&noisy, max, 0.01, 0.0).unwrap().len() <= max);
        }
    }

    #[test]
    fn detector_argument_errors() {
        let im = img(4, 4, |r, _| r as f64);
        assert!(detect_good_features(&im, 0, 0.1, 1.0).is_err());
        assert!(detect_good_features(&im, 5, 0.0, 1.0).is_err());
        assert!(detect_good_features(&im, 5, 0.1, -1.0).is_err());
        let bad = Tensor::<f64>::zeros(&[2, 3, 3]).unwrap();
        assert!(detect_good_features(&bad, 5, 0.1, 1.0).is_err());
    }

    #[test]
    fn random_points_exhaustive_and_seeded() {
        let all = random_points(3, 4, 12, 9).unwrap();
        let mut px = all.pixels();
        px.sort();
        let expected: Vec<_> = (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
        assert_eq!(px, expected);
        assert_eq!(random_points(8, 8, 10, 1).unwrap(), random_points(8, 8, 10, 1).unwrap());
        assert!(random_points(2, 2, 5, 0).is_err());
    }

    #[test]
    fn random_points_centered_on_average() {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for seed in 0..50 {
            for p in random_points(64, 64, 100, seed).unwrap().points {
                sx += p.x;
                sy += p.y;
                n += 1.0;
            }
        }
        assert!((sx / n - 31.5).abs() < 3.0 && (sy / n - 31.5).abs() < 3.0);
    }

    #[test]
    fn csv_single_row_and_empty() {
        let set = parse_keypoints("2.0,3.0,1.0", (8, 8)).unwrap();
        assert_eq!(set.points, vec![KeyPoint { x: 2.0, y: 3.0, score: 1.0 }]);
        assert!(parse_keypoints("", (8, 8)).unwrap().is_empty());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_keypoints("1,1,1\n1,2\n", (4, 4)) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_keypoints("1,1,1\n1,1,1\n4.0,0,1\n", (4, 4)) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_keypoints("a,1,1", (4, 4)).is_err());
    }

    #[test]
    fn csv_writes_six_decimals() {
        let set = KeyPointSet::new(vec![KeyPoint { x: 2.0, y: 3.5, score: 0.25 }], 8, 8, "gf");
        assert_eq!(keypoints_to_csv(&set), "2.000000,3.500000,0.250000\n");
    }

    #[test]
    fn rounding_is_half_up_and_clamped() {
        let p = KeyPoint { x: 2.5, y: 7.9, score: 0.0 };
        assert_eq!(p.pixel(8, 8), (7, 3));
    }
}

use crate::error::{arg_err, Result};

/// Principal components fitted on a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors of the covariance, by decreasing eigenvalue; the first
    /// nonzero entry of each is positive.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance (denominator `n - 1`), decreasing.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits `k` components on `rows` (at least two, all the same length ≥ k).
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
        if rows.len() < 2 {
            return arg_err(format!("PCA needs at least 2 rows, got {}", rows.len()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return arg_err("PCA rows have different lengths");
        }
        if k == 0 || k > d {
            return arg_err(format!("PCA dimension {k} must be in 1..={d}"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; d * d];
        for r in rows {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] /= n - 1.0;
                cov[j * d + i] = cov[i * d + j];
            }
        }
        let (values, vectors) = jacobi_eigen(cov, d);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &j in &order[..k] {
            let mut v: Vec<f64> = (0..d).map(|i| vectors[i * d + j]).collect();
            if let Some(first) = v.iter().find(|x| **x != 0.0) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            components.push(v);
            variances.push(values[j].max(0.0));
        }
        Ok(Pca { mean, components, variances })
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }
}

/// Centers `rows` and projects them onto their top `k` principal components.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    let pca = Pca::fit(rows, k)?;
    Ok(rows.iter().map(|r| pca.project(r)).collect())
}

/// Cyclic Jacobi eigen-decomposition of a symmetric row-major `d×d` matrix.
/// Returns eigenvalues and the eigenvector matrix (eigenvectors in columns).
pub fn jacobi_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * d + j].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * d + p], a[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonalizes_a_known_matrix() {
        // Eigenvalues of [[2,1],[1,2]] are 3 and 1.
        let (vals, _) = jacobi_eigen(vec![2.0, 1.0, 1.0, 2.0], 2);
        let mut vals = vals;
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn identical_rows_project_to_zero() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        let p = pca_project(&rows, 2).unwrap();
        assert!(p.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_one_line_preserves_distances() {
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0].iter().map(|t| vec![1.0 + 0.6 * t, -2.0 + 0.8 * t]).collect();
        let p = pca_project(&rows, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                assert!(((p[i][0] - p[j][0]).abs() - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(pca_project(&[vec![1.0]], 1).is_err());
        assert!(pca_project(&[vec![1.0], vec![2.0]], 2).is_err());
    }
}

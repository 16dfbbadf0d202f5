//! Flat storage for `n` chains of dimension `d`, plus the moment statistics
//! the Monte-Carlo checks are written against.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    dim: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Ensemble {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    /// Row-major `n × dim` data. Panics if the length is not a multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged ensemble");
        Ensemble { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Values of coordinate `j` across chains.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Unbiased sample covariance, row-major `dim × dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for j in 0..d {
                let dj = r[j] - m[j];
                for k in 0..d {
                    c[j * d + k] += dj * (r[k] - m[k]);
                }
            }
        }
        let denom = (self.len() as f64 - 1.0).max(1.0);
        c.iter_mut().for_each(|v| *v /= denom);
        c
    }

    pub fn summary(&self) -> MomentSummary {
        MomentSummary::of(self)
    }

    /// Fraction of chains whose coordinate `j` satisfies `pred`.
    pub fn fraction(&self, j: usize, pred: impl Fn(f64) -> bool) -> f64 {
        self.rows().filter(|r| pred(r[j])).count() as f64 / self.len() as f64
    }

    /// Summary of the chains whose coordinate `j` satisfies `pred`.
    pub fn filtered(&self, j: usize, pred: impl Fn(f64) -> bool) -> Ensemble {
        let data = self
            .rows()
            .filter(|r| pred(r[j]))
            .flat_map(|r| r.iter().copied())
            .collect();
        Ensemble { dim: self.dim, data }
    }
}

/// Per-coordinate moments with their Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub covariance: Vec<f64>,
    /// Standard error of each covariance entry, from the fourth moments.
    pub covariance_se: Vec<f64>,
    pub third_central: Vec<f64>,
    pub third_central_se: Vec<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
}

impl MomentSummary {
    pub fn of(e: &Ensemble) -> Self {
        let d = e.dim();
        let n = e.len();
        let nf = n as f64;
        let mean = e.mean();
        let covariance = e.covariance();
        let mut m4 = vec![0.0; d * d];
        let mut m3 = vec![0.0; d];
        let mut m6 = vec![0.0; d];
        let mut m4_diag = vec![0.0; d];
        for r in e.rows() {
            for j in 0..d {
                let dj = r[j] - mean[j];
                m3[j] += dj.powi(3);
                m4_diag[j] += dj.powi(4);
                m6[j] += dj.powi(6);
                for k in 0..d {
                    let dk = r[k] - mean[k];
                    m4[j * d + k] += dj * dj * dk * dk;
                }
            }
        }
        m4.iter_mut().for_each(|v| *v /= nf);
        m3.iter_mut().for_each(|v| *v /= nf);
        m4_diag.iter_mut().for_each(|v| *v /= nf);
        m6.iter_mut().for_each(|v| *v /= nf);

        let mean_se = (0..d).map(|j| (covariance[j * d + j] / nf).sqrt()).collect();
        let covariance_se = (0..d * d)
            .map(|jk| ((m4[jk] - covariance[jk].powi(2)).max(0.0) / nf).sqrt())
            .collect();
        let var: Vec<f64> = (0..d).map(|j| covariance[j * d + j]).collect();
        // delta-method variance of the third central moment estimator
        let third_central_se = (0..d)
            .map(|j| {
                let v = m6[j] - m3[j].powi(2) - 6.0 * m4_diag[j] * var[j] + 9.0 * var[j].powi(3);
                (v.max(0.0) / nf).sqrt()
            })
            .collect();
        let skewness = (0..d).map(|j| m3[j] / var[j].powf(1.5)).collect();
        let excess_kurtosis = (0..d).map(|j| m4_diag[j] / var[j].powi(2) - 3.0).collect();
        MomentSummary {
            n,
            mean,
            mean_se,
            covariance,
            covariance_se,
            third_central: m3,
            third_central_se,
            skewness,
            excess_kurtosis,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.covariance[j * self.dim() + j]
    }

    pub fn variance_se(&self, j: usize) -> f64 {
        self.covariance_se[j * self.dim() + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_small_ensemble() {
        let e = Ensemble::from_flat(2, vec![1.0, 0.0, 3.0, 2.0, 5.0, 4.0]);
        assert_eq!(e.len(), 3);
        assert_eq!(e.mean(), vec![3.0, 2.0]);
        assert_eq!(e.covariance(), vec![4.0, 4.0, 4.0, 4.0]);
        let s = e.summary();
        assert!(s.skewness[0].abs() < 1e-12);
        assert_eq!(e.fraction(0, |x| x > 2.0), 2.0 / 3.0);
        assert_eq!(e.filtered(1, |x| x < 1.0).as_flat(), &[1.0, 0.0]);
    }
}

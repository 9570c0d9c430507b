use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub k: usize,
    /// Kernel bandwidth; `None` uses the median pairwise distance of the
    /// training configurations.
    pub bandwidth: Option<f64>,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            k: 5,
            bandwidth: None,
        }
    }
}

/// Distance-weighted k-nearest-neighbour regressor over hyperparameter vectors.
///
/// Predictions are convex combinations of training qualities, so they never
/// leave the `[min, max]` range of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    points: Vec<(Vec<f64>, f64)>,
    k: usize,
    bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_pairwise_distance(points: &[(Vec<f64>, f64)]) -> Option<f64> {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, (a, _)) in points.iter().enumerate() {
        for (b, _) in &points[i + 1..] {
            d.push(sq_dist(a, b).sqrt());
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 0 {
        (d[mid - 1] + d[mid]) / 2.0
    } else {
        d[mid]
    })
}

impl Surrogate {
    pub fn fit(points: Vec<(Vec<f64>, f64)>, params: SurrogateParams) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if params.k == 0 {
            return Err(Error::InvalidSpec("surrogate k must be at least 1".into()));
        }
        let dim = points[0].0.len();
        if let Some(p) = points.iter().find(|p| p.0.len() != dim) {
            return Err(Error::ArityMismatch {
                expected: dim,
                found: p.0.len(),
            });
        }
        let bandwidth = match params.bandwidth {
            Some(b) if b > 0.0 && b.is_finite() => b,
            Some(b) => {
                return Err(Error::InvalidSpec(format!(
                    "bandwidth {b} must be positive"
                )))
            }
            None => median_pairwise_distance(&points)
                .filter(|b| *b > 0.0)
                .unwrap_or(1.0),
        };
        Ok(Surrogate {
            k: params.k.min(points.len()),
            points,
            bandwidth,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn predict(&self, h: &[f64]) -> f64 {
        let mut dists: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|(x, q)| (sq_dist(x, h), *q))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));

        let exact: Vec<f64> = dists
            .iter()
            .take_while(|d| d.0 == 0.0)
            .map(|d| d.1)
            .collect();
        if !exact.is_empty() {
            return exact.iter().sum::<f64>() / exact.len() as f64;
        }

        let neighbours = &dists[..self.k];
        // Shift by the nearest distance so the weights cannot all underflow.
        let nearest = neighbours[0].0;
        let bw2 = self.bandwidth * self.bandwidth;
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, q) in neighbours {
            let w = (-(d2 - nearest) / bw2).exp();
            num += w * q;
            den += w;
        }
        num / den
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::numerics::Tensor;
use crate::transformer::BoxPrediction;

/// Weights of the bipartite matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostMatrixSpec {
    pub center: f64,
    pub size: f64,
    pub class: f64,
}

impl Default for CostMatrixSpec {
    fn default() -> Self {
        Self { center: 1.0, size: 1.0, class: 1.0 }
    }
}

impl CostMatrixSpec {
    pub fn validate(&self) -> Result<()> {
        let w = [self.center, self.size, self.class];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("matching weights must be finite, non-negative and not all zero".into()));
        }
        Ok(())
    }
}

fn l1(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).sum()
}

/// `Q × G` matrix of `w_c·‖Δcenter‖₁ + w_s·‖Δsize‖₁ − w_p·p(class_g)`.
pub fn match_cost(preds: &[BoxPrediction], gts: &[Box3D], spec: &CostMatrixSpec) -> Tensor {
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        let prob = p.probabilities();
        for g in gts {
            data.push(
                spec.center * l1(&p.center, &g.center) + spec.size * l1(&p.size, &g.size)
                    - spec.class * prob[g.class_id],
            );
        }
    }
    Tensor::matrix(preds.len(), gts.len(), data).unwrap()
}

/// Minimum-cost assignment of every column (ground truth) to a distinct row
/// (query). Pairs are returned as `(query, gt)` sorted by ground truth.
pub fn hungarian(cost: &Tensor) -> Result<Vec<(usize, usize)>> {
    let (q, g) = (cost.rows(), cost.cols());
    if g > q {
        return Err(Error::Infeasible { queries: q, ground_truths: g });
    }
    if cost.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("assignment cost is not finite".into()));
    }
    if g == 0 {
        return Ok(Vec::new());
    }
    // Shortest augmenting paths with potentials; rows are ground truths.
    let a = |i: usize, j: usize| cost.at(j - 1, i - 1);
    let (n, m) = (g, q);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (j - 1, p[j] - 1)).collect();
    pairs.sort_by_key(|&(_, gi)| gi);
    Ok(pairs)
}

/// Total cost of an assignment, summed in ground-truth order.
pub fn assignment_cost(cost: &Tensor, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by_key(|&(_, g)| g);
    sorted.iter().map(|&(q, g)| cost.at(q, g)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let c = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0)]);
        let c = Tensor::from_rows(&[[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        let c = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(hungarian(&c), Err(Error::Infeasible { queries: 1, ground_truths: 2 })));
        let c = Tensor::from_rows(&[[4.0], [1.0], [3.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(1, 0)]);
    }
}

//! Minimum-cost one-to-one assignment (Hungarian method with potentials).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `(prediction, ground_truth)` pairs, ordered by ground-truth index.
    pub pairs: Vec<(usize, usize)>,
    /// Predictions without a ground truth, ascending.
    pub unmatched: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &Tensor) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost.at(p, g)).sum()
    }

    /// Ground-truth index assigned to each prediction.
    pub fn gt_of(&self, n_pred: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_pred];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }
}

/// Optimal assignment for `cost: [n_pred, n_gt]` with `n_pred >= n_gt`.
pub fn hungarian(cost: &Tensor) -> Result<Assignment> {
    if cost.shape().len() != 2 {
        return Err(Error::Shape {
            op: "hungarian",
            lhs: cost.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (m, n) = (cost.shape()[0], cost.shape()[1]);
    if m < n {
        return Err(Error::TooFewPredictions { preds: m, gts: n });
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite { op: "hungarian" });
    }
    // rows are ground truths (1..=n), columns predictions (1..=m)
    let a = |g: usize, p: usize| cost.at(p - 1, g - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for g in 1..=n {
        owner[0] = g;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (j - 1, owner[j] - 1))
        .collect();
    pairs.sort_by_key(|&(_, g)| g);
    let unmatched = (1..=m).filter(|&j| owner[j] == 0).map(|j| j - 1).collect();
    Ok(Assignment { pairs, unmatched })
}

/// Like [`hungarian`] but also accepts fewer predictions than ground
/// truths, in which case every prediction is matched and some ground truths
/// stay unassigned.
pub fn assign(cost: &Tensor) -> Result<Assignment> {
    let (m, n) = (cost.rows(), cost.cols());
    if m >= n {
        return hungarian(cost);
    }
    let t = hungarian(&cost.transpose()?)?;
    let mut pairs: Vec<(usize, usize)> = t.pairs.iter().map(|&(g, p)| (p, g)).collect();
    pairs.sort_by_key(|&(_, g)| g);
    Ok(Assignment {
        pairs,
        unmatched: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let c = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 2.0);
        assert!(a.unmatched.is_empty());
    }

    #[test]
    fn picks_the_zeros() {
        let c = Tensor::matrix(3, 3, vec![5.0, 0.0, 5.0, 5.0, 5.0, 0.0, 0.0, 5.0, 5.0]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.total_cost(&c), 0.0);
        assert_eq!(a.pairs, vec![(2, 0), (0, 1), (1, 2)]);
    }

    #[test]
    fn rectangular_leaves_unmatched() {
        let c = Tensor::matrix(3, 1, vec![3.0, 1.0, 2.0]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched, vec![0, 2]);
        assert_eq!(a.gt_of(3), vec![None, Some(0), None]);
    }

    #[test]
    fn errors() {
        let c = Tensor::zeros(&[1, 2]);
        assert!(matches!(hungarian(&c), Err(Error::TooFewPredictions { preds: 1, gts: 2 })));
        let c = Tensor::matrix(1, 1, vec![f64::NAN]).unwrap();
        assert!(hungarian(&c).is_err());
        let empty = Tensor::zeros(&[3, 0]);
        assert_eq!(hungarian(&empty).unwrap().unmatched, vec![0, 1, 2]);
    }

    #[test]
    fn assign_handles_more_ground_truths() {
        let c = Tensor::matrix(1, 3, vec![3.0, 1.0, 2.0]).unwrap();
        let a = assign(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert!(a.unmatched.is_empty());
    }
}

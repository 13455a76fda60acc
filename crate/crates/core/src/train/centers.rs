use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::grad::Tensor;

/// Running per-class centers of a representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterBank {
    dim: usize,
    centers: Vec<Option<Vec<f64>>>,
    counts: Vec<u64>,
}

impl CenterBank {
    pub fn new(dim: usize) -> Self {
        Self { dim, centers: vec![None; NUM_CLASSES], counts: vec![0; NUM_CLASSES] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, class: usize) -> Option<&[f64]> {
        self.centers.get(class).and_then(|c| c.as_deref())
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    /// Rebuilds a bank from stored centers and seen counts.
    pub fn from_parts(dim: usize, centers: Vec<Option<Vec<f64>>>, counts: Vec<u64>) -> Option<Self> {
        let ok = centers.len() == NUM_CLASSES
            && counts.len() == NUM_CLASSES
            && centers.iter().flatten().all(|c| c.len() == dim);
        ok.then_some(Self { dim, centers, counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn set(&mut self, class: usize, center: Vec<f64>) {
        assert_eq!(center.len(), self.dim, "center dimension");
        self.centers[class] = Some(center);
    }

    /// Moves each class present in the batch toward its batch mean by `alpha`;
    /// the first observation of a class sets its center directly.
    pub fn update(&mut self, reps: &Tensor, labels: &[usize], alpha: f64) {
        assert_eq!(reps.rows(), labels.len());
        assert_eq!(reps.row_len(), self.dim, "representation dimension");
        let mut sums = vec![vec![0.0; self.dim]; NUM_CLASSES];
        let mut n = [0usize; NUM_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            n[l] += 1;
            sums[l].iter_mut().zip(reps.row(i)).for_each(|(s, v)| *s += v);
        }
        for l in 0..NUM_CLASSES {
            if n[l] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[l].iter().map(|s| s / n[l] as f64).collect();
            self.centers[l] = Some(match self.centers[l].take() {
                None => mean,
                Some(c) => c.iter().zip(&mean).map(|(c, m)| (1.0 - alpha) * c + alpha * m).collect(),
            });
            self.counts[l] += n[l] as u64;
        }
    }

    /// `1/2 sum_i |r_i - c_{l(i)}|^2 / N` and its gradient with respect to the
    /// representations. Rows whose class has no center yet contribute nothing.
    pub fn loss(&self, reps: &Tensor, labels: &[usize]) -> (f64, Tensor) {
        let n = labels.len().max(1) as f64;
        let mut grad = Tensor::zeros(reps.shape());
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let Some(c) = self.center(l) else { continue };
            let g = grad.row_mut(i);
            for ((g, &r), &c) in g.iter_mut().zip(reps.row(i)).zip(c) {
                let d = r - c;
                loss += 0.5 * d * d;
                *g = d / n;
            }
        }
        (loss / n, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reps(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn alpha_one_gives_batch_means() {
        let mut bank = CenterBank::new(2);
        bank.set(0, vec![9.0, 9.0]);
        bank.update(&reps(&[[1.0, 2.0], [3.0, 4.0], [5.0, 5.0]]), &[0, 0, 3], 1.0);
        assert_eq!(bank.center(0).unwrap(), &[2.0, 3.0]);
        assert_eq!(bank.center(3).unwrap(), &[5.0, 5.0]);
        assert!(bank.center(1).is_none());
    }

    #[test]
    fn absent_classes_keep_centers() {
        let mut bank = CenterBank::new(2);
        for l in 0..NUM_CLASSES {
            bank.set(l, vec![l as f64, 0.0]);
        }
        bank.update(&reps(&[[7.0, 7.0]]), &[2], 0.5);
        for l in [0, 1, 3, 4] {
            assert_eq!(bank.center(l).unwrap(), &[l as f64, 0.0]);
        }
        assert_eq!(bank.center(2).unwrap(), &[4.5, 3.5]);
    }

    #[test]
    fn loss_vanishes_at_centers() {
        let mut bank = CenterBank::new(2);
        let r = reps(&[[1.0, 2.0], [1.0, 2.0]]);
        bank.update(&r, &[4, 4], 0.3);
        let (loss, grad) = bank.loss(&r, &[4, 4]);
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }
}

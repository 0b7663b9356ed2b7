//! Random forest of CART trees split on Gini impurity.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassicalError, Matrix, TrainedClassifier};

#[derive(Debug, Clone)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn prob1(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p1 } => return p1,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

fn gini(n0: f64, n1: f64) -> f64 {
    let n = n0 + n1;
    if n == 0.0 {
        0.0
    } else {
        1.0 - (n0 / n).powi(2) - (n1 / n).powi(2)
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let n1 = idx.iter().filter(|&&i| self.y[i] == 1).count();
        self.nodes.push(Node::Leaf {
            p1: n1 as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: &mut [usize]) -> usize {
        let n1 = idx.iter().filter(|&&i| self.y[i] == 1).count();
        if n1 == 0 || n1 == idx.len() || idx.len() < 2 {
            return self.leaf(idx);
        }
        let d = self.x.cols();
        let total = idx.len() as f64;
        let parent = gini((idx.len() - n1) as f64, n1 as f64);
        // (decrease, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let candidates = sample(&mut self.rng, d, self.max_features.min(d)).into_vec();
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for f in candidates {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x.row(i)[f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut l0, mut l1) = (0.0, 0.0);
            let (t0, t1) = ((idx.len() - n1) as f64, n1 as f64);
            for k in 0..order.len() - 1 {
                if order[k].1 == 1 {
                    l1 += 1.0;
                } else {
                    l0 += 1.0;
                }
                if order[k].0 == order[k + 1].0 {
                    continue;
                }
                let nl = l0 + l1;
                let child = (nl * gini(l0, l1) + (total - nl) * gini(t0 - l0, t1 - l1)) / total;
                let gain = parent - child;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, (order[k].0 + order[k + 1].0) / 2.0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        if gain <= 0.0 {
            return self.leaf(idx);
        }
        let split = partition(idx, |i| self.x.row(i)[feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p1: 0.0 });
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(k, j);
            k += 1;
        }
    }
    k
}

/// Fits one tree on a bootstrap sample. Tree `t` of a forest seeded with
/// `seed` depends only on `(seed, t)`, so a smaller forest is a prefix of a
/// larger one.
pub fn fit_tree(x: &Matrix, y: &[usize], seed: u64, t: usize) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = x.rows();
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut b = Builder {
        x,
        y,
        max_features: ((x.cols() as f64).sqrt() as usize).max(1),
        rng,
        nodes: Vec::new(),
    };
    b.grow(&mut idx);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    dim: usize,
}

impl RandomForest {
    pub fn fit(x: &Matrix, y: &[usize], n_estimators: usize, seed: u64) -> Result<Self, ClassicalError> {
        Ok(Self {
            trees: (0..n_estimators).map(|t| fit_tree(x, y, seed, t)).collect(),
            dim: x.cols(),
        })
    }

    /// The forest made of the first `n` trees.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            dim: self.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

impl TrainedClassifier for RandomForest {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64]) -> [f64; 2] {
        let p = self.trees.iter().map(|t| t.prob1(x)).sum::<f64>() / self.trees.len() as f64;
        [1.0 - p, p]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_property_and_fit() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let x = Matrix::from_rows(rows).unwrap();
        let big = RandomForest::fit(&x, &y, 10, 3).unwrap();
        let small = RandomForest::fit(&x, &y, 4, 3).unwrap();
        let t = big.truncated(4);
        for i in 0..40 {
            assert_eq!(t.score(x.row(i)), small.score(x.row(i)));
        }
        assert_eq!(big.predict(&[2.0, 0.0]), 0);
        assert_eq!(big.predict(&[35.0, 0.0]), 1);
    }

    #[test]
    fn equal_votes_go_to_class_zero() {
        let f = RandomForest {
            trees: vec![Tree {
                nodes: vec![Node::Leaf { p1: 0.5 }],
            }],
            dim: 1,
        };
        assert_eq!(f.predict(&[0.0]), 0);
    }
}

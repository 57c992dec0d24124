//! Least-squares gradient boosting with depth-limited regression trees.
//!
//! Trees grow level by level with exact greedy splits. Every feature is
//! presorted once per fit, so a level costs one pass over each feature.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample: 1.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidInput(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidInput(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GbtRegressor {
    base: f64,
    trees: Vec<Tree>,
    n_features: usize,
}

impl GbtRegressor {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "model has {} features, input has {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| self.trees.iter().fold(self.base, |acc, t| acc + t.predict(x, i)))
            .collect())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    count: usize,
    sum: f64,
    sumsq: f64,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], params: &GbtParams, seed: u64) -> Result<GbtRegressor> {
    params.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{} targets for {n} rows", y.len())));
    }
    if n < 2 * params.min_samples_leaf {
        return Err(Error::InvalidInput(format!(
            "{n} rows is fewer than 2 * min_samples_leaf = {}",
            2 * params.min_samples_leaf
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in boosting data".into()));
    }

    let base = if y.iter().all(|&v| v == y[0]) {
        y[0]
    } else {
        y.iter().sum::<f64>() / n as f64
    };
    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = stream(seed, "gbt/subsample");
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(2 * params.min_samples_leaf, n);
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut in_sample = vec![true; n];
    for _ in 0..params.n_trees {
        if n_sample < n {
            in_sample.iter_mut().for_each(|s| *s = false);
            for i in sample(&mut rng, n, n_sample) {
                in_sample[i] = true;
            }
        }
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let tree = grow_tree(x, &resid, &sorted, &in_sample, params);
        for (i, pi) in pred.iter_mut().enumerate() {
            *pi += tree.predict(x, i);
        }
        trees.push(tree);
    }
    Ok(GbtRegressor {
        base,
        trees,
        n_features: p,
    })
}

fn grow_tree(x: &DMatrix<f64>, resid: &[f64], sorted: &[Vec<usize>], in_sample: &[bool], params: &GbtParams) -> Tree {
    let n = resid.len();
    let min_leaf = params.min_samples_leaf;
    // node index per row; usize::MAX for rows outside the subsample or in finished leaves
    let mut node_of: Vec<usize> = (0..n).map(|i| if in_sample[i] { 0 } else { usize::MAX }).collect();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut frontier = vec![0usize];

    for depth in 0..=params.max_depth {
        let mut totals = vec![Acc::default(); nodes.len()];
        for i in 0..n {
            let k = node_of[i];
            if k != usize::MAX {
                let t = &mut totals[k];
                t.count += 1;
                t.sum += resid[i];
                t.sumsq += resid[i] * resid[i];
            }
        }
        let mut best: Vec<Option<Best>> = (0..nodes.len()).map(|_| None).collect();
        if depth < params.max_depth {
            for (f, order) in sorted.iter().enumerate() {
                let mut left = vec![Acc::default(); nodes.len()];
                let mut prev_x = vec![f64::NAN; nodes.len()];
                for &i in order {
                    let k = node_of[i];
                    if k == usize::MAX {
                        continue;
                    }
                    let xi = x[(i, f)];
                    let l = left[k];
                    let t = totals[k];
                    if l.count >= min_leaf && t.count - l.count >= min_leaf && xi > prev_x[k] {
                        let (nl, nr) = (l.count as f64, (t.count - l.count) as f64);
                        let sr = t.sum - l.sum;
                        let gain = l.sum * l.sum / nl + sr * sr / nr - t.sum * t.sum / t.count as f64;
                        let sse = t.sumsq - t.sum * t.sum / t.count as f64;
                        if gain > 1e-12 * sse && best[k].as_ref().is_none_or(|b| gain > b.gain) {
                            let mid = 0.5 * (prev_x[k] + xi);
                            let threshold = if mid < xi { mid } else { prev_x[k] };
                            best[k] = Some(Best {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                    let l = &mut left[k];
                    l.count += 1;
                    l.sum += resid[i];
                    prev_x[k] = xi;
                }
            }
        }

        let mut next = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); nodes.len()];
        for &k in &frontier {
            match best[k].take() {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[k] = Node::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right: left + 1,
                    };
                    children[k] = (left, left + 1);
                    next.push(left);
                    next.push(left + 1);
                }
                None => {
                    let t = totals[k];
                    let v = if t.count > 0 { t.sum / t.count as f64 } else { 0.0 };
                    nodes[k] = Node::Leaf(params.learning_rate * v);
                }
            }
        }
        for i in 0..n {
            let k = node_of[i];
            if k == usize::MAX {
                continue;
            }
            node_of[i] = match nodes[k] {
                Node::Split {
                    feature, threshold, ..
                } => {
                    let (l, r) = children[k];
                    if x[(i, feature)] <= threshold { l } else { r }
                }
                Node::Leaf(_) => usize::MAX,
            };
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::r_squared;

    #[test]
    fn constant_target_predicts_constant() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64);
        let y = vec![3.7; 20];
        let m = fit_gbt(&x, &y, &GbtParams::default(), 1).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 3.7));
    }

    #[test]
    fn step_function_is_learned_by_stumps() {
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 / n as f64 } else { ((i * 37) % 11) as f64 });
        let y: Vec<f64> = (0..n).map(|i| if (i as f64 / n as f64) < 0.3 { 1.0 } else { 4.0 }).collect();
        let params = GbtParams {
            max_depth: 1,
            n_trees: 100,
            ..GbtParams::default()
        };
        let m = fit_gbt(&x, &y, &params, 1).unwrap();
        assert!(r_squared(&y, &m.predict(&x).unwrap()) > 0.95);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let n = 120;
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 13) % 17) as f64);
        let y: Vec<f64> = (0..n).map(|i| ((i * 31) % 23) as f64).collect();
        let params = GbtParams {
            subsample: 0.7,
            ..GbtParams::default()
        };
        let a = fit_gbt(&x, &y, &params, 9).unwrap().predict(&x).unwrap();
        let b = fit_gbt(&x, &y, &params, 9).unwrap().predict(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_target_doubles_predictions_exactly() {
        let n = 150;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 13 + j * 5) % 29) as f64 / 7.0);
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let p = GbtParams::default();
        let a = fit_gbt(&x, &y, &p, 3).unwrap().predict(&x).unwrap();
        let b = fit_gbt(&x, &y2, &p, 3).unwrap().predict(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(2.0 * u, *v);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let x = DMatrix::from_element(20, 1, 1.0);
        let y = vec![0.0; 20];
        let bad = GbtParams {
            learning_rate: 1.5,
            ..GbtParams::default()
        };
        assert!(fit_gbt(&x, &y, &bad, 0).is_err());
        let tiny = DMatrix::from_element(6, 1, 1.0);
        assert!(fit_gbt(&tiny, &[0.0; 6], &GbtParams::default(), 0).is_err());
    }
}

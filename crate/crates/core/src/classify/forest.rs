//! Random forest of CART trees with Gini splits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::container::{DecodeError, ModelKind, Reader, Writer};
use super::linear::sample_weights;
use super::{argmax_label, check_training_set, ClassifyError, LabeledSample, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Candidate features per node; `None` means `ceil(sqrt(dim))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: None,
            min_leaf: 1,
            bootstrap: true,
            max_features: None,
        }
    }
}

impl ForestConfig {
    pub(super) fn validate(&self) -> Result<(), ClassifyError> {
        if self.n_trees == 0 {
            return Err(ClassifyError::InvalidConfig(
                "n_trees must be positive".into(),
            ));
        }
        if self.min_leaf == 0 {
            return Err(ClassifyError::InvalidConfig(
                "min_leaf must be positive".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(ClassifyError::InvalidConfig(
                "max_features must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Tree node in preorder storage: a split's left child is the next node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        right: usize,
    },
    Leaf {
        counts: [u32; 7],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32; 7] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        i + 1
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// Majority class of the leaf `x` falls in (ties to the lowest label).
    pub fn vote(&self, x: &[f64]) -> usize {
        let c = self.leaf_counts(x);
        argmax_label(&c.map(f64::from)).index()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            if let Node::Split { right, .. } = self.nodes[i] {
                stack.push((i + 1, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub dim: usize,
    pub config: ForestConfig,
    /// Accuracy of out-of-bag votes over samples left out by at least one
    /// tree; `None` without bootstrap.
    pub oob_accuracy: Option<f64>,
}

impl ForestModel {
    /// Fraction of trees voting for each label.
    pub fn scores(&self, x: &[f64]) -> Result<[f64; 7], ClassifyError> {
        if x.len() != self.dim {
            return Err(ClassifyError::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut s = [0.0; 7];
        for t in &self.trees {
            s[t.vote(x)] += 1.0;
        }
        let n = self.trees.len() as f64;
        s.iter_mut().for_each(|v| *v /= n);
        Ok(s)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(ModelKind::Forest);
        w.u64(self.dim as u64);
        w.u64(self.config.max_depth.map_or(0, |d| d as u64 + 1));
        w.u64(self.config.min_leaf as u64);
        w.u8(self.config.bootstrap as u8);
        w.u64(self.config.max_features.unwrap_or(0) as u64);
        w.f64s(&self.oob_accuracy.map_or(vec![], |a| vec![a]));
        w.u64(self.trees.len() as u64);
        for t in &self.trees {
            w.u64(t.nodes.len() as u64);
            for n in &t.nodes {
                match n {
                    Node::Leaf { counts } => {
                        w.u8(0);
                        counts.iter().for_each(|c| w.u32(*c));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        right,
                    } => {
                        w.u8(1);
                        w.u64(*feature as u64);
                        w.f64(*threshold);
                        w.u64(*right as u64);
                    }
                }
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let invalid = |m: &str| DecodeError::Invalid(m.to_string());
        let mut r = Reader::open_kind(bytes, ModelKind::Forest)?;
        let dim = usize::try_from(r.u64()?).map_err(|_| invalid("dim too large"))?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let max_depth = match r.u64()? {
            0 => None,
            d => Some(usize::try_from(d - 1).map_err(|_| invalid("max_depth too large"))?),
        };
        let min_leaf = r.u64()? as usize;
        let bootstrap = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(invalid("bootstrap flag must be 0 or 1")),
        };
        let max_features = match r.u64()? {
            0 => None,
            m => Some(m as usize),
        };
        let oob = r.f64s()?;
        if oob.len() > 1 || oob.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("bad out-of-bag accuracy"));
        }
        let n_trees = r.len(9)?;
        if n_trees == 0 {
            return Err(invalid("forest has no trees"));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n = r.len(17)?;
            let mut nodes = Vec::with_capacity(n);
            for i in 0..n {
                nodes.push(match r.u8()? {
                    0 => {
                        let mut counts = [0u32; 7];
                        for c in &mut counts {
                            *c = r.u32()?;
                        }
                        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
                        if total < min_leaf.max(1) as u64 {
                            return Err(invalid("leaf holds fewer samples than min_leaf"));
                        }
                        Node::Leaf { counts }
                    }
                    1 => {
                        let feature = r.u64()?;
                        let threshold = r.f64()?;
                        let right = r.u64()?;
                        if feature >= dim as u64 {
                            return Err(invalid("split feature out of range"));
                        }
                        if right <= i as u64 + 1 || right >= n as u64 {
                            return Err(invalid("bad right-child index"));
                        }
                        Node::Split {
                            feature: feature as usize,
                            threshold,
                            right: right as usize,
                        }
                    }
                    _ => return Err(invalid("unknown node tag")),
                });
            }
            let tree = Tree { nodes };
            check_tree_structure(&tree)?;
            trees.push(tree);
        }
        r.finish()?;
        Ok(Self {
            trees,
            dim,
            config: ForestConfig {
                n_trees,
                max_depth,
                min_leaf,
                bootstrap,
                max_features,
            },
            oob_accuracy: oob.first().copied(),
        })
    }
}

/// Every node must be reached exactly once from the root.
fn check_tree_structure(tree: &Tree) -> Result<(), DecodeError> {
    let n = tree.nodes.len();
    if n == 0 {
        return Err(DecodeError::Invalid("empty tree".into()));
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    let mut visited = 0;
    while let Some(i) = stack.pop() {
        if i >= n || seen[i] {
            return Err(DecodeError::Invalid("nodes do not form a tree".into()));
        }
        seen[i] = true;
        visited += 1;
        if let Node::Split { right, .. } = tree.nodes[i] {
            stack.push(right);
            stack.push(i + 1);
        }
    }
    if visited != n {
        return Err(DecodeError::Invalid("unreachable nodes".into()));
    }
    Ok(())
}

fn gini_sum(counts: &[f64; 7], n: f64) -> f64 {
    // n * gini = n - sum(c^2) / n
    if n <= 0.0 {
        return 0.0;
    }
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}

struct Builder<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<usize>,
    dim: usize,
    mtry: usize,
    config: &'a ForestConfig,
}

struct Pending {
    idx: Vec<usize>,
    depth: usize,
    /// Split node whose `right` should point at this node.
    parent: Option<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 7] {
        let mut c = [0u32; 7];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best Gini split among the candidate features, scanning further random
    /// blocks of `mtry` features only while no valid split has been found.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.config.min_leaf;
        let parent_counts = self.counts(idx).map(f64::from);
        let parent = gini_sum(&parent_counts, n as f64);
        let mut features: Vec<usize> = (0..self.dim).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for block in features.chunks(self.mtry) {
            for &f in block {
                pairs.clear();
                pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                if pairs[0].0 == pairs[n - 1].0 {
                    continue;
                }
                let mut left = [0.0; 7];
                for k in 0..n - 1 {
                    left[pairs[k].1] += 1.0;
                    let nl = k + 1;
                    if pairs[k].0 == pairs[k + 1].0 || nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let mut right = parent_counts;
                    for (r, l) in right.iter_mut().zip(&left) {
                        *r -= l;
                    }
                    let score = gini_sum(&left, nl as f64) + gini_sum(&right, (n - nl) as f64);
                    if score < parent - 1e-12 && best.is_none_or(|b| score < b.0) {
                        let (a, b) = (pairs[k].0, pairs[k + 1].0);
                        let mut t = a + 0.5 * (b - a);
                        if t >= b || t < a {
                            t = a;
                        }
                        best = Some((score, f, t));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&self, root: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes = Vec::new();
        let mut stack = vec![Pending {
            idx: root,
            depth: 0,
            parent: None,
        }];
        while let Some(p) = stack.pop() {
            let here = nodes.len();
            if let Some(parent) = p.parent {
                if let Node::Split { right, .. } = &mut nodes[parent] {
                    *right = here;
                }
            }
            let counts = self.counts(&p.idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = self.config.max_depth.is_none_or(|d| p.depth < d);
            let split = if !pure && depth_ok && p.idx.len() >= 2 * self.config.min_leaf {
                self.best_split(&p.idx, rng)
            } else {
                None
            };
            match split {
                None => nodes.push(Node::Leaf { counts }),
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = p
                        .idx
                        .iter()
                        .partition(|&&i| self.x[i][feature] <= threshold);
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        right: 0,
                    });
                    stack.push(Pending {
                        idx: r,
                        depth: p.depth + 1,
                        parent: Some(here),
                    });
                    stack.push(Pending {
                        idx: l,
                        depth: p.depth + 1,
                        parent: None,
                    });
                }
            }
        }
        Tree { nodes }
    }
}

/// Bootstrap draws are weighted by the configured class weights, so
/// [`super::Balancing::ClassWeights`] acts as resampling for the forest.
pub fn train_forest(
    samples: &[LabeledSample],
    config: &TrainConfig,
) -> Result<ForestModel, ClassifyError> {
    config.validate()?;
    let dim = check_training_set(samples)?;
    let fc = &config.forest;
    let mtry = fc
        .max_features
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let builder = Builder {
        x: samples
            .iter()
            .map(|s| s.feature.values.as_slice())
            .collect(),
        y: samples.iter().map(|s| s.label.index()).collect(),
        dim,
        mtry,
        config: fc,
    };
    let n = samples.len();
    let weights = sample_weights(samples, config);
    let draw = WeightedIndex::new(&weights).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trees = Vec::with_capacity(fc.n_trees);
    let mut oob_votes = vec![[0u32; 7]; n];
    for _ in 0..fc.n_trees {
        let idx: Vec<usize> = if fc.bootstrap {
            match &draw {
                Some(d) => (0..n).map(|_| d.sample(&mut rng)).collect(),
                None => (0..n).map(|_| rng.random_range(0..n)).collect(),
            }
        } else {
            (0..n).collect()
        };
        let tree = builder.grow(idx.clone(), &mut rng);
        if fc.bootstrap {
            let mut in_bag = vec![false; n];
            idx.iter().for_each(|&i| in_bag[i] = true);
            for (i, s) in samples.iter().enumerate() {
                if !in_bag[i] {
                    oob_votes[i][tree.vote(&s.feature.values)] += 1;
                }
            }
        }
        trees.push(tree);
    }
    let oob_accuracy = fc.bootstrap.then(|| {
        let (mut hit, mut total) = (0usize, 0usize);
        for (v, s) in oob_votes.iter().zip(samples) {
            if v.iter().any(|&c| c > 0) {
                total += 1;
                if argmax_label(&v.map(f64::from)) == s.label {
                    hit += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    });
    Ok(ForestModel {
        trees,
        dim,
        config: fc.clone(),
        oob_accuracy,
    })
}

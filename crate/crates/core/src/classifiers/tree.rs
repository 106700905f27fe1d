use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_row;
use crate::data::{Cell, Dataset, Feature, FeatureKind, FeatureVector, Label};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Left when `x <= value`.
    Threshold(f64),
    /// Left when the category is in the set.
    Categories(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Training counts `[non-VAr, VAr]` reaching this leaf.
    Leaf { counts: [u64; 2] },
    Split {
        feature: usize,
        rule: SplitRule,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn proba(&self, v: &FeatureVector) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { counts } => return counts[1] as f64 / (counts[0] + counts[1]) as f64,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => {
                    let go_left = match (rule, &v.values[*feature]) {
                        (SplitRule::Threshold(t), Cell::Number(x)) => x <= t,
                        (SplitRule::Categories(set), Cell::Category(c)) => set.contains(c),
                        _ => unreachable!("row checked against features"),
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub(super) features: Vec<Feature>,
    pub root: Node,
}

impl TreeModel {
    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64> {
        check_row(&self.features, v)?;
        Ok(self.root.proba(v))
    }
}

fn gini(c: [u64; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (c[0] as f64 / n, c[1] as f64 / n);
    1.0 - a * a - b * b
}

fn weighted(l: [u64; 2], r: [u64; 2]) -> f64 {
    let nl = (l[0] + l[1]) as f64;
    let nr = (r[0] + r[1]) as f64;
    (nl * gini(l) + nr * gini(r)) / (nl + nr)
}

struct Builder<'a> {
    d: &'a Dataset,
    labels: &'a [Label],
    cfg: &'a TreeConfig,
}

struct Candidate {
    impurity: f64,
    feature: usize,
    rule: SplitRule,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u64; 2] {
        let mut c = [0u64; 2];
        for &i in idx {
            c[self.labels[i].index()] += 1;
        }
        c
    }

    fn best_for(&self, idx: &[usize], j: usize, total: [u64; 2]) -> Option<(f64, SplitRule)> {
        let min_leaf = self.cfg.min_samples_leaf as u64;
        let n = idx.len() as u64;
        let ok = |left: [u64; 2]| {
            let nl = left[0] + left[1];
            nl >= min_leaf && n - nl >= min_leaf
        };
        let mut best: Option<(f64, SplitRule)> = None;
        match &self.d.schema().features()[j].kind {
            FeatureKind::Continuous => {
                let mut vals: Vec<(f64, Label)> = idx
                    .iter()
                    .map(|&i| (self.d.rows()[i].values[j].number().expect("complete"), self.labels[i]))
                    .collect();
                vals.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left = [0u64; 2];
                for w in 0..vals.len() - 1 {
                    left[vals[w].1.index()] += 1;
                    let (a, b) = (vals[w].0, vals[w + 1].0);
                    if a == b || !ok(left) {
                        continue;
                    }
                    let right = [total[0] - left[0], total[1] - left[1]];
                    let imp = weighted(left, right);
                    if best.as_ref().is_none_or(|(bi, _)| imp < *bi) {
                        let mid = a + (b - a) / 2.0;
                        let t = if mid < b { mid } else { a };
                        best = Some((imp, SplitRule::Threshold(t)));
                    }
                }
            }
            FeatureKind::Nominal { categories } => {
                let mut per = vec![[0u64; 2]; categories.len()];
                for &i in idx {
                    per[self.d.rows()[i].values[j].category().expect("complete")][self.labels[i].index()] += 1;
                }
                let mut present: Vec<usize> = (0..per.len()).filter(|&c| per[c][0] + per[c][1] > 0).collect();
                // ordering by class-1 fraction makes prefix splits optimal for Gini
                present.sort_by(|&a, &b| {
                    let fa = per[a][1] as f64 / (per[a][0] + per[a][1]) as f64;
                    let fb = per[b][1] as f64 / (per[b][0] + per[b][1]) as f64;
                    fa.total_cmp(&fb).then(a.cmp(&b))
                });
                let mut left = [0u64; 2];
                for p in 0..present.len().saturating_sub(1) {
                    let c = per[present[p]];
                    left = [left[0] + c[0], left[1] + c[1]];
                    if !ok(left) {
                        continue;
                    }
                    let right = [total[0] - left[0], total[1] - left[1]];
                    let imp = weighted(left, right);
                    if best.as_ref().is_none_or(|(bi, _)| imp < *bi) {
                        let mut set = present[..=p].to_vec();
                        set.sort_unstable();
                        best = Some((imp, SplitRule::Categories(set)));
                    }
                }
            }
        }
        best
    }

    fn best_split(&self, idx: &[usize], total: [u64; 2], rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let p = self.d.schema().n_features();
        let search = |features: &[usize]| {
            let mut best: Option<Candidate> = None;
            for &j in features {
                if let Some((imp, rule)) = self.best_for(idx, j, total) {
                    if best.as_ref().is_none_or(|b| imp < b.impurity) {
                        best = Some(Candidate {
                            impurity: imp,
                            feature: j,
                            rule,
                        });
                    }
                }
            }
            best
        };
        match self.cfg.max_features {
            Some(m) if m < p => {
                let mut subset = index::sample(rng, p, m).into_vec();
                subset.sort_unstable();
                search(&subset).or_else(|| {
                    let rest: Vec<usize> = (0..p).filter(|j| !subset.contains(j)).collect();
                    search(&rest)
                })
            }
            _ => search(&(0..p).collect::<Vec<_>>()),
        }
    }

    fn build(&self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let counts = self.counts(&idx);
        let pure = counts[0] == 0 || counts[1] == 0;
        let capped = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if pure || capped || idx.len() < self.cfg.min_samples_split {
            return Node::Leaf { counts };
        }
        // zero-gain splits are allowed so interactions such as XOR can be found
        let Some(best) = self.best_split(&idx, counts, rng) else {
            return Node::Leaf { counts };
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| {
            match (&best.rule, &self.d.rows()[i].values[best.feature]) {
                (SplitRule::Threshold(t), Cell::Number(x)) => x <= t,
                (SplitRule::Categories(set), Cell::Category(c)) => set.contains(c),
                _ => unreachable!(),
            }
        });
        Node::Split {
            feature: best.feature,
            rule: best.rule,
            left: Box::new(self.build(left, depth + 1, rng)),
            right: Box::new(self.build(right, depth + 1, rng)),
        }
    }
}

fn tree_inputs(train: &Dataset, cfg: &TreeConfig) -> Result<Vec<Label>> {
    if cfg.min_samples_leaf == 0 || cfg.min_samples_split < 2 {
        return Err(Error::InvalidInput("tree needs min_samples_leaf >= 1 and min_samples_split >= 2".into()));
    }
    if cfg.max_features == Some(0) {
        return Err(Error::InvalidInput("max_features must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot fit a tree on an empty dataset".into()));
    }
    if train.has_missing() {
        return Err(Error::InvalidInput("tree training data has missing cells; impute first".into()));
    }
    train.labels()
}

fn grow(train: &Dataset, labels: &[Label], idx: Vec<usize>, cfg: &TreeConfig, seed: u64) -> Node {
    let b = Builder { d: train, labels, cfg };
    b.build(idx, 0, &mut seeding::rng(seed))
}

/// CART with Gini impurity. A single-class input yields one pure leaf.
pub fn fit_tree(train: &Dataset, cfg: &TreeConfig, seed: u64) -> Result<TreeModel> {
    let labels = tree_inputs(train, cfg)?;
    Ok(TreeModel {
        features: train.schema().features().to_vec(),
        root: grow(train, &labels, (0..train.n_rows()).collect(), cfg, seed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features examined per split; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            bootstrap: true,
            max_features: None,
            tree: TreeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    features: Vec<Feature>,
    pub trees: Vec<Node>,
    pub tree_seeds: Vec<u64>,
}

impl ForestModel {
    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Mean of the trees' leaf frequencies, summed in tree order.
    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64> {
        check_row(&self.features, v)?;
        Ok(self.trees.iter().map(|t| t.proba(v)).sum::<f64>() / self.trees.len() as f64)
    }
}

/// Bagged CART trees with a random feature subset at every split.
pub fn fit_forest(train: &Dataset, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if cfg.n_trees == 0 {
        return Err(Error::InvalidInput("a forest needs at least one tree".into()));
    }
    let p = train.schema().n_features();
    let tree_cfg = TreeConfig {
        max_features: Some(cfg.max_features.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)),
        ..cfg.tree.clone()
    };
    let labels = tree_inputs(train, &tree_cfg)?;
    let n = train.n_rows();
    let tree_seeds: Vec<u64> = (0..cfg.n_trees as u64).map(|t| seeding::derive(seed, t)).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let idx = if cfg.bootstrap {
                let mut rng = seeding::child_rng(s, 1);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(train, &labels, idx, &tree_cfg, seeding::derive(s, 2))
        })
        .collect();
    Ok(ForestModel {
        features: train.schema().features().to_vec(),
        trees,
        tree_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;

    fn xor() -> Dataset {
        let schema = Schema::new(
            vec![Feature::nominal("a", ["0", "1"]), Feature::nominal("b", ["0", "1"])],
            "y",
        )
        .unwrap();
        let mut rows = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for _ in 0..3 {
                    rows.push(FeatureVector::new(
                        vec![Cell::Category(a), Cell::Category(b)],
                        Some(Label::from_index(a ^ b)),
                    ));
                }
            }
        }
        Dataset::new(schema, rows, "xor").unwrap()
    }

    fn accuracy(m: &TreeModel, d: &Dataset) -> f64 {
        let hits = d
            .rows()
            .iter()
            .filter(|r| (m.predict_proba(r).unwrap() >= 0.5) == (r.label == Some(Label::Var)))
            .count();
        hits as f64 / d.n_rows() as f64
    }

    #[test]
    fn xor_needs_depth_two() {
        let d = xor();
        let stump = fit_tree(&d, &TreeConfig { max_depth: Some(1), ..Default::default() }, 0).unwrap();
        assert!(accuracy(&stump, &d) < 1.0);
        let full = fit_tree(&d, &TreeConfig::default(), 0).unwrap();
        assert_eq!(accuracy(&full, &d), 1.0);
        assert!(full.root.depth() >= 2);
    }

    #[test]
    fn pure_input_is_one_leaf() {
        let schema = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let rows = (0..5)
            .map(|i| FeatureVector::new(vec![Cell::Number(i as f64)], Some(Label::Var)))
            .collect();
        let d = Dataset::new(schema, rows, "t").unwrap();
        let m = fit_tree(&d, &TreeConfig::default(), 0).unwrap();
        assert_eq!(m.root, Node::Leaf { counts: [0, 5] });
        assert_eq!(m.predict_proba(&d.rows()[0]).unwrap(), 1.0);
    }

    #[test]
    fn threshold_split_is_midpoint() {
        let schema = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let rows = [(1.0, 0), (2.0, 0), (4.0, 1), (5.0, 1)]
            .iter()
            .map(|&(x, y)| FeatureVector::new(vec![Cell::Number(x)], Some(Label::from_index(y))))
            .collect();
        let d = Dataset::new(schema, rows, "t").unwrap();
        let m = fit_tree(&d, &TreeConfig::default(), 0).unwrap();
        match &m.root {
            Node::Split { rule, .. } => assert_eq!(rule, &SplitRule::Threshold(3.0)),
            n => panic!("{n:?}"),
        }
    }

    #[test]
    fn single_tree_forest_is_a_tree() {
        let d = xor();
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(2),
            tree: TreeConfig::default(),
        };
        let f = fit_forest(&d, &cfg, 5).unwrap();
        let t = fit_tree(&d, &TreeConfig::default(), 5).unwrap();
        for r in d.rows() {
            assert_eq!(f.predict_proba(r).unwrap(), t.predict_proba(r).unwrap());
        }
    }

    #[test]
    fn forest_is_seeded() {
        let d = xor();
        let a = fit_forest(&d, &ForestConfig { n_trees: 7, ..Default::default() }, 1).unwrap();
        let b = fit_forest(&d, &ForestConfig { n_trees: 7, ..Default::default() }, 1).unwrap();
        assert_eq!(a, b);
    }
}

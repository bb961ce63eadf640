//! K-cluster regression forests with weighted splitting.
//!
//! Every internal node partitions its training targets with k-means and
//! trains a linear classifier on the node's input features to reproduce
//! that partition; the classifier then routes samples to the K children.
//! With weighted splitting (K = 2) each sample's classifier weight is its
//! distance from the hyperplane bisecting the two centroids, normalized by
//! the node maximum, so samples whose misrouting would cost the most SSE
//! dominate the classifier fit.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Reader, Writer};
use crate::error::{check_dim, Error, Result};
use crate::linclf::{train_weighted_svm, LinearModel, SplitClassifier, SvmParams, WeightedSample};
use crate::par::{derive_seed, Executor};

/// Result of clustering the targets of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id of every input target.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared errors.
    pub sse: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn has_k_distinct<T: AsRef<[f64]>>(targets: &[T], k: usize) -> bool {
    let mut distinct: Vec<&[f64]> = Vec::with_capacity(k);
    for t in targets {
        let t = t.as_ref();
        if !distinct.contains(&t) {
            distinct.push(t);
            if distinct.len() >= k {
                return true;
            }
        }
    }
    false
}

/// k-means over target vectors: k-means++ seeding followed by Lloyd
/// iterations to an assignment fixed point refined by single-point
/// transfers, best of `restarts` runs by SSE.
///
/// Fails when there are fewer than `k` distinct targets.
pub fn kmeans_targets<T: AsRef<[f64]>, R: Rng>(
    targets: &[T],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<Clustering> {
    if k < 2 {
        return Err(Error::invalid("k-means needs k >= 2"));
    }
    let dim = targets.first().map_or(0, |t| t.as_ref().len());
    for t in targets {
        check_dim(dim, t.as_ref().len())?;
    }
    if !has_k_distinct(targets, k) {
        return Err(Error::Degenerate(format!("fewer than {k} distinct targets")));
    }
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let c = lloyd(targets, k, dim, rng);
        if best.as_ref().is_none_or(|b| c.sse < b.sse) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_pp_init<T: AsRef<[f64]>, R: Rng>(targets: &[T], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = targets.len();
    let mut centroids = vec![targets[rng.gen_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = targets.iter().map(|t| sq_dist(t.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if r < d {
                        pick = i;
                        break;
                    }
                    r -= d;
                    pick = i;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = targets[next].as_ref().to_vec();
        for (d, t) in d2.iter_mut().zip(targets) {
            *d = d.min(sq_dist(t.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves single points between clusters while that lowers the SSE, keeping
/// centroids exact. Returns whether anything moved.
fn hartigan_pass<T: AsRef<[f64]>>(targets: &[T], assignment: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    assignment.iter().for_each(|&a| counts[a] += 1);
    let mut moved = false;
    for (i, t) in targets.iter().enumerate() {
        let t = t.as_ref();
        let a = assignment[i];
        if counts[a] < 2 {
            continue;
        }
        let na = counts[a] as f64;
        let loss = na / (na - 1.0) * sq_dist(t, &centroids[a]);
        let mut best = None;
        let mut best_gain = 1e-12 * loss.max(1e-300);
        for b in (0..k).filter(|&b| b != a) {
            let nb = counts[b] as f64;
            let gain = loss - nb / (nb + 1.0) * sq_dist(t, &centroids[b]);
            if gain > best_gain {
                best = Some(b);
                best_gain = gain;
            }
        }
        if let Some(b) = best {
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            for (c, v) in centroids[a].iter_mut().zip(t) {
                *c = (*c * na - v) / (na - 1.0);
            }
            for (c, v) in centroids[b].iter_mut().zip(t) {
                *c = (*c * nb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assignment[i] = b;
            moved = true;
        }
    }
    moved
}

fn recompute_centroids<T: AsRef<[f64]>>(targets: &[T], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (a, t) in assignment.iter().zip(targets) {
        counts[*a] += 1;
        for (s, v) in sums[*a].iter_mut().zip(t.as_ref()) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect()
}

/// Lloyd iterations to an assignment fixed point, then single-point
/// transfers, alternating until neither changes anything.
fn lloyd<T: AsRef<[f64]>, R: Rng>(targets: &[T], k: usize, dim: usize, rng: &mut R) -> Clustering {
    let mut centroids = kmeans_pp_init(targets, k, rng);
    let mut assignment = vec![usize::MAX; targets.len()];
    for _ in 0..100 {
        lloyd_iterations(targets, k, dim, &mut assignment, &mut centroids);
        if !hartigan_pass(targets, &mut assignment, &mut centroids) {
            break;
        }
        centroids = recompute_centroids(targets, &assignment, k, dim);
    }
    let sse = assignment
        .iter()
        .zip(targets)
        .map(|(&a, t)| sq_dist(t.as_ref(), &centroids[a]))
        .sum();
    Clustering {
        assignment,
        centroids,
        sse,
    }
}

fn lloyd_iterations<T: AsRef<[f64]>>(
    targets: &[T],
    k: usize,
    dim: usize,
    assignment: &mut [usize],
    centroids: &mut [Vec<f64>],
) {
    let n = targets.len();
    for _ in 0..1000 {
        let mut changed = false;
        for (a, t) in assignment.iter_mut().zip(targets) {
            let t = t.as_ref();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(t, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        // An empty cluster takes the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&i, &j| {
                        sq_dist(targets[i].as_ref(), &centroids[assignment[i]])
                            .total_cmp(&sq_dist(targets[j].as_ref(), &centroids[assignment[j]]))
                    })
                    .expect("k distinct targets exist");
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (a, t) in assignment.iter().zip(targets) {
            for (s, v) in sums[*a].iter_mut().zip(t.as_ref()) {
                *s += v;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            centroids[c] = s.into_iter().map(|v| v / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
}

/// Per-sample signed distances from the bisecting hyperplane of two
/// centroids and the derived classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitWeights {
    /// `v_i = (y_i - (c1 + c2)/2) . (c2 - c1) / |c2 - c1|`
    pub v: Vec<f64>,
    /// `w_i = |v_i| / max_j |v_j|`
    pub w: Vec<f64>,
}

/// Computes the split weights of a node whose targets were divided into
/// two clusters with centroids `c1` and `c2`.
pub fn split_weights<T: AsRef<[f64]>>(targets: &[T], c1: &[f64], c2: &[f64]) -> Result<SplitWeights> {
    check_dim(c1.len(), c2.len())?;
    if targets.is_empty() {
        return Err(Error::invalid("split weights of an empty node"));
    }
    let diff: Vec<f64> = c2.iter().zip(c1).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate("cluster centroids coincide".into()));
    }
    let mid: Vec<f64> = c1.iter().zip(c2).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut v = Vec::with_capacity(targets.len());
    for t in targets {
        let t = t.as_ref();
        check_dim(c1.len(), t.len())?;
        let proj: f64 = t.iter().zip(&mid).zip(&diff).map(|((y, m), d)| (y - m) * d).sum();
        v.push(proj / norm);
    }
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Err(Error::Degenerate("all targets lie on the bisecting hyperplane".into()));
    }
    let w = v.iter().map(|x| x.abs() / max).collect();
    Ok(SplitWeights { v, w })
}

/// Hyperparameters of a single tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Children per internal node.
    pub k: usize,
    /// Depth at which nodes become leaves (root has depth 0); `None` for
    /// unbounded.
    pub max_depth: Option<usize>,
    /// Nodes with fewer samples become leaves.
    pub min_samples: usize,
    /// Use distance-to-bisector sample weights (only for `k == 2`).
    pub weighted: bool,
    pub kmeans_restarts: usize,
    pub svm: SvmParams,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            k: 2,
            max_depth: None,
            min_samples: 5,
            weighted: true,
            kmeans_restarts: 10,
            svm: SvmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        classifier: SplitClassifier,
        children: Vec<u32>,
    },
    Leaf {
        mean: Vec<f64>,
        index: u32,
    },
}

/// A K-ary regression tree stored as a node arena (root at index 0).
#[derive(Debug, Clone, PartialEq)]
pub struct KTree {
    nodes: Vec<Node>,
    num_leaves: usize,
    input_dim: usize,
    target_dim: usize,
    k: usize,
}

fn validate_xy<X: AsRef<[f64]>, Y: AsRef<[f64]>>(x: &[X], y: &[Y]) -> Result<(usize, usize)> {
    if x.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    check_dim(x.len(), y.len())?;
    let xd = x[0].as_ref().len();
    let yd = y[0].as_ref().len();
    if yd == 0 {
        return Err(Error::invalid("targets must have at least one dimension"));
    }
    for (xi, yi) in x.iter().zip(y) {
        check_dim(xd, xi.as_ref().len())?;
        check_dim(yd, yi.as_ref().len())?;
        if yi.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite target"));
        }
    }
    Ok((xd, yd))
}

fn mean_of<Y: AsRef<[f64]>>(y: &[Y], idx: &[usize], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for &i in idx {
        for (a, v) in m.iter_mut().zip(y[i].as_ref()) {
            *a += v;
        }
    }
    let n = idx.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

impl KTree {
    /// Trains a tree on all samples with a fresh RNG seeded by `seed`.
    pub fn train<X, Y>(x: &[X], y: &[Y], params: &TreeParams, seed: u64) -> Result<KTree>
    where
        X: AsRef<[f64]>,
        Y: AsRef<[f64]>,
    {
        let idx: Vec<usize> = (0..x.len()).collect();
        Self::train_subset(x, y, &idx, params, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Trains on the samples listed in `subset`.
    pub fn train_subset<X, Y, R>(x: &[X], y: &[Y], subset: &[usize], params: &TreeParams, rng: &mut R) -> Result<KTree>
    where
        X: AsRef<[f64]>,
        Y: AsRef<[f64]>,
        R: Rng,
    {
        let (input_dim, target_dim) = validate_xy(x, y)?;
        if subset.is_empty() {
            return Err(Error::invalid("empty training subset"));
        }
        if params.k < 2 {
            return Err(Error::invalid("trees need k >= 2"));
        }
        let mut nodes: Vec<Option<Node>> = vec![None];
        let mut num_leaves = 0u32;
        let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, subset.to_vec(), 0)];

        while let Some((id, idx, depth)) = stack.pop() {
            match split_node(x, y, &idx, depth, params, rng) {
                Some((classifier, groups)) => {
                    let first = nodes.len();
                    let mut children = Vec::with_capacity(groups.len());
                    let mut pushed = 0;
                    for (c, group) in groups.into_iter().enumerate() {
                        let child = first + c;
                        nodes.push(None);
                        children.push(child as u32);
                        if group.is_empty() {
                            nodes[child] = Some(Node::Leaf {
                                mean: mean_of(y, &idx, target_dim),
                                index: num_leaves,
                            });
                            num_leaves += 1;
                        } else {
                            stack.push((child, group, depth + 1));
                            pushed += 1;
                        }
                    }
                    // Process children in order so leaf indices follow a
                    // depth-first, left-to-right numbering.
                    let n = stack.len();
                    stack[n - pushed..].reverse();
                    nodes[id] = Some(Node::Split { classifier, children });
                }
                None => {
                    nodes[id] = Some(Node::Leaf {
                        mean: mean_of(y, &idx, target_dim),
                        index: num_leaves,
                    });
                    num_leaves += 1;
                }
            }
        }

        Ok(KTree {
            nodes: nodes.into_iter().map(|n| n.expect("every node built")).collect(),
            num_leaves: num_leaves as usize,
            input_dim,
            target_dim,
            k: params.k,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Maximum depth of any leaf (a single-leaf tree has depth 0).
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { .. } => best = best.max(d),
                Node::Split { children, .. } => stack.extend(children.iter().map(|&c| (c as usize, d + 1))),
            }
        }
        best
    }

    fn leaf_node(&self, x: &[f64]) -> (&[f64], u32) {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { mean, index } => return (mean, *index),
                Node::Split { classifier, children } => id = children[classifier.predict_unchecked(x)] as usize,
            }
        }
    }

    /// Mean training target of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> Result<&[f64]> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.leaf_node(x).0)
    }

    /// Dense index (`0..num_leaves`) of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.leaf_node(x).1 as usize)
    }

    fn encode(&self, w: &mut Writer) {
        w.usize(self.input_dim);
        w.usize(self.target_dim);
        w.usize(self.k);
        w.usize(self.num_leaves);
        w.usize(self.nodes.len());
        for node in &self.nodes {
            match node {
                Node::Leaf { mean, index } => {
                    w.u8(0);
                    w.u32(*index);
                    w.f64s(mean);
                }
                Node::Split { classifier, children } => {
                    w.u8(1);
                    let models: &[LinearModel] = match classifier {
                        SplitClassifier::Binary(m) => {
                            w.u8(0);
                            std::slice::from_ref(m)
                        }
                        SplitClassifier::OneVsRest(ms) => {
                            w.u8(1);
                            ms
                        }
                    };
                    w.usize(models.len());
                    for m in models {
                        w.f64s(&m.weights);
                        w.f64(m.bias);
                    }
                    w.usize(children.len());
                    for &c in children {
                        w.u32(c);
                    }
                }
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<KTree> {
        let input_dim = r.usize()?;
        let target_dim = r.usize()?;
        let k = r.usize()?;
        let num_leaves = r.usize()?;
        let n = r.len(1)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let node = match r.u8()? {
                0 => {
                    let index = r.u32()?;
                    let mean = r.f64s()?;
                    check_dim(target_dim, mean.len())?;
                    if index as usize >= num_leaves {
                        return Err(Error::Format("leaf index out of range".into()));
                    }
                    Node::Leaf { mean, index }
                }
                1 => {
                    let kind = r.u8()?;
                    let count = r.len(8)?;
                    let mut models = Vec::with_capacity(count);
                    for _ in 0..count {
                        let weights = r.f64s()?;
                        check_dim(input_dim, weights.len())?;
                        models.push(LinearModel {
                            weights,
                            bias: r.f64()?,
                        });
                    }
                    let classifier = match (kind, count) {
                        (0, 1) => SplitClassifier::Binary(models.pop().expect("one model")),
                        (1, c) if c >= 2 => SplitClassifier::OneVsRest(models),
                        _ => return Err(Error::Format("invalid split classifier".into())),
                    };
                    let nc = r.len(4)?;
                    let children = (0..nc).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    if children.len() != classifier.num_classes() || children.iter().any(|&c| c as usize >= n || c == 0)
                    {
                        return Err(Error::Format("invalid child list".into()));
                    }
                    Node::Split { classifier, children }
                }
                t => return Err(Error::Format(format!("unknown node tag {t}"))),
            };
            nodes.push(node);
        }
        if nodes.is_empty() {
            return Err(Error::Format("tree without nodes".into()));
        }
        Ok(KTree {
            nodes,
            num_leaves,
            input_dim,
            target_dim,
            k,
        })
    }
}

/// Tries to split a node; returns the classifier and the per-child sample
/// groups, or `None` when the node must become a leaf.
fn split_node<X, Y, R>(
    x: &[X],
    y: &[Y],
    idx: &[usize],
    depth: usize,
    params: &TreeParams,
    rng: &mut R,
) -> Option<(SplitClassifier, Vec<Vec<usize>>)>
where
    X: AsRef<[f64]>,
    Y: AsRef<[f64]>,
    R: Rng,
{
    if idx.len() < params.min_samples || params.max_depth.is_some_and(|d| depth >= d) {
        return None;
    }
    let targets: Vec<&[f64]> = idx.iter().map(|&i| y[i].as_ref()).collect();
    if targets.iter().all(|t| *t == targets[0]) {
        return None;
    }
    let clusters = kmeans_targets(&targets, params.k, params.kmeans_restarts, rng).ok()?;
    let weights = if params.weighted && params.k == 2 {
        split_weights(&targets, &clusters.centroids[0], &clusters.centroids[1])
            .ok()?
            .w
    } else {
        vec![1.0; idx.len()]
    };
    let samples: Vec<WeightedSample<'_>> = idx
        .iter()
        .zip(&clusters.assignment)
        .zip(&weights)
        .map(|((&i, &label), &weight)| WeightedSample {
            x: x[i].as_ref(),
            label,
            weight,
        })
        .collect();
    // Rescale C so the summed box budget matches the uniform-weight problem.
    let mut svm = params.svm;
    let mean_weight = weights.iter().sum::<f64>() / weights.len() as f64;
    if mean_weight > 0.0 {
        svm.cost /= mean_weight;
    }
    let classifier = train_weighted_svm(&samples, params.k, &svm, rng).ok()?;
    let mut groups = vec![Vec::new(); params.k];
    for &i in idx {
        groups[classifier.predict_unchecked(x[i].as_ref())].push(i);
    }
    if groups.iter().filter(|g| !g.is_empty()).count() < 2 {
        return None;
    }
    Some((classifier, groups))
}

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    /// Fraction of the training set drawn (without replacement) per tree.
    pub bagging_fraction: f64,
    pub seed: u64,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 10,
            bagging_fraction: 0.63,
            seed: 0,
            tree: TreeParams::default(),
        }
    }
}

/// Sparse binary leaf encoding: one active position per tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafCode {
    pub len: usize,
    pub ones: Vec<usize>,
}

impl LeafCode {
    pub fn to_dense(&self) -> Vec<u8> {
        let mut v = vec![0; self.len];
        for &i in &self.ones {
            v[i] = 1;
        }
        v
    }
}

/// A bagged ensemble of [`KTree`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct KForest {
    trees: Vec<KTree>,
    params: ForestParams,
}

impl KForest {
    pub fn train<X, Y>(x: &[X], y: &[Y], params: &ForestParams) -> Result<KForest>
    where
        X: AsRef<[f64]> + Sync,
        Y: AsRef<[f64]> + Sync,
    {
        Self::train_with(Executor::default(), x, y, params)
    }

    /// Trains each tree on its own bag with an RNG derived from
    /// `(params.seed, tree index)`; the result does not depend on `exec`.
    pub fn train_with<X, Y>(exec: Executor, x: &[X], y: &[Y], params: &ForestParams) -> Result<KForest>
    where
        X: AsRef<[f64]> + Sync,
        Y: AsRef<[f64]> + Sync,
    {
        validate_xy(x, y)?;
        if params.trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        if !(params.bagging_fraction > 0.0 && params.bagging_fraction <= 1.0) {
            return Err(Error::invalid("bagging fraction must lie in (0, 1]"));
        }
        let n = x.len();
        let bag = ((params.bagging_fraction * n as f64).ceil() as usize).clamp(1, n);
        let trees = exec.try_map(params.trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let mut subset = sample_indices(&mut rng, n, bag).into_vec();
            subset.sort_unstable();
            KTree::train_subset(x, y, &subset, &params.tree, &mut rng)
        })?;
        Ok(KForest { trees, params: *params })
    }

    /// Assembles a forest from already trained trees.
    pub fn from_trees(trees: Vec<KTree>, params: ForestParams) -> Result<KForest> {
        let first = trees
            .first()
            .ok_or_else(|| Error::invalid("a forest needs at least one tree"))?;
        for t in &trees {
            check_dim(first.input_dim, t.input_dim)?;
            check_dim(first.target_dim, t.target_dim)?;
        }
        Ok(KForest { trees, params })
    }

    pub fn trees(&self) -> &[KTree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.trees[0].input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.trees[0].target_dim
    }

    /// Unweighted average of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut out = vec![0.0; self.target_dim()];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.leaf_node(x).0) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// Total length of [`KForest::leaf_code`] vectors.
    pub fn code_len(&self) -> usize {
        self.trees.iter().map(KTree::num_leaves).sum()
    }

    /// One-hot leaf indicator per tree, concatenated in tree order.
    pub fn leaf_code(&self, x: &[f64]) -> Result<LeafCode> {
        check_dim(self.input_dim(), x.len())?;
        let mut offset = 0;
        let mut ones = Vec::with_capacity(self.trees.len());
        for t in &self.trees {
            ones.push(offset + t.leaf_node(x).1 as usize);
            offset += t.num_leaves;
        }
        Ok(LeafCode { len: offset, ones })
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        let p = &self.params;
        w.usize(p.trees);
        w.f64(p.bagging_fraction);
        w.u64(p.seed);
        w.usize(p.tree.k);
        w.bool(p.tree.max_depth.is_some());
        w.usize(p.tree.max_depth.unwrap_or(0));
        w.usize(p.tree.min_samples);
        w.bool(p.tree.weighted);
        w.usize(p.tree.kmeans_restarts);
        w.f64(p.tree.svm.cost);
        w.f64(p.tree.svm.tol);
        w.usize(p.tree.svm.max_iter);
        w.usize(self.trees.len());
        for t in &self.trees {
            t.encode(w);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<KForest> {
        let trees_param = r.usize()?;
        let bagging_fraction = r.f64()?;
        let seed = r.u64()?;
        let k = r.usize()?;
        let has_depth = r.bool()?;
        let depth = r.usize()?;
        let tree = TreeParams {
            k,
            max_depth: has_depth.then_some(depth),
            min_samples: r.usize()?,
            weighted: r.bool()?,
            kmeans_restarts: r.usize()?,
            svm: SvmParams {
                cost: r.f64()?,
                tol: r.f64()?,
                max_iter: r.usize()?,
            },
        };
        let params = ForestParams {
            trees: trees_param,
            bagging_fraction,
            seed,
            tree,
        };
        let n = r.len(1)?;
        let trees = (0..n).map(|_| KTree::decode(r)).collect::<Result<Vec<_>>>()?;
        KForest::from_trees(trees, params)
    }

    /// Serializes into a standalone `FOR` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(b"FOR");
        self.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KForest> {
        let mut r = Reader::with_header(bytes, b"FOR")?;
        let f = Self::decode(&mut r)?;
        r.finish()?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    /// Minimum 2-partition SSE by exhaustive enumeration.
    fn brute_force_sse(targets: &[Vec<f64>]) -> f64 {
        let n = targets.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<&Vec<f64>> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &targets[i])
                    .collect();
                let dim = targets[0].len();
                let mut m = vec![0.0; dim];
                for t in &members {
                    for (a, v) in m.iter_mut().zip(t.iter()) {
                        *a += v / members.len() as f64;
                    }
                }
                sse += members.iter().map(|t| sq_dist(t, &m)).sum::<f64>();
            }
            best = best.min(sse);
        }
        best
    }

    #[test]
    fn kmeans_one_dimensional_example() {
        let t = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let c = kmeans_targets(&t, 2, 5, &mut rng()).unwrap();
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_eq!(c.assignment[2], c.assignment[3]);
        assert_ne!(c.assignment[0], c.assignment[2]);
        let mut cents: Vec<f64> = c.centroids.iter().map(|c| c[0]).collect();
        cents.sort_by(f64::total_cmp);
        assert_eq!(cents, vec![0.5, 10.5]);
        assert!((c.sse - brute_force_sse(&t)).abs() < 1e-12);
    }

    #[test]
    fn kmeans_zero_variance_groups_and_pairs() {
        let t = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 0.0], vec![5.0, 5.0]];
        let c = kmeans_targets(&t, 2, 5, &mut rng()).unwrap();
        assert_eq!(c.sse, 0.0);
        assert_eq!(c.assignment[0], c.assignment[2]);
        let t = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let c = kmeans_targets(&t, 2, 5, &mut rng()).unwrap();
        assert_ne!(c.assignment[0], c.assignment[1]);
        assert_eq!(c.centroids[c.assignment[0]], t[0]);
        assert_eq!(c.centroids[c.assignment[1]], t[1]);
    }

    #[test]
    fn kmeans_needs_distinct_targets() {
        let t = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(kmeans_targets(&t, 2, 5, &mut rng()).is_err());
    }

    #[test]
    fn kmeans_beats_random_partitions() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let t: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = if i % 2 == 0 { -2.0 } else { 2.0 };
                vec![c + r.gen_range(-1.5..1.5), r.gen_range(-1.0..1.0)]
            })
            .collect();
        let c = kmeans_targets(&t, 2, 5, &mut rng()).unwrap();
        for _ in 0..1000 {
            let labels: Vec<bool> = (0..t.len()).map(|_| r.gen()).collect();
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<&Vec<f64>> = t
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == side)
                    .map(|(v, _)| v)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let m: Vec<f64> = (0..2)
                    .map(|d| members.iter().map(|v| v[d]).sum::<f64>() / members.len() as f64)
                    .collect();
                sse += members.iter().map(|v| sq_dist(v, &m)).sum::<f64>();
            }
            assert!(c.sse <= sse + 1e-9);
        }
    }

    #[test]
    fn split_weight_examples() {
        let c1 = [0.0, 0.0];
        let c2 = [2.0, 0.0];
        let sw = split_weights(&[vec![1.5, 3.0]], &c1, &c2).unwrap();
        assert_eq!(sw.v, vec![0.5]);
        assert_eq!(sw.w, vec![1.0]);
        let sw = split_weights(&[vec![1.0, 7.0], vec![0.0, 0.0]], &c1, &c2).unwrap();
        assert_eq!(sw.v[0], 0.0);
        assert_eq!(sw.w[0], 0.0);
        let sw = split_weights(&[vec![0.2, 1.0], vec![1.8, -4.0]], &c1, &c2).unwrap();
        assert!((sw.w[0] - sw.w[1]).abs() < 1e-15);
        assert!((sw.v[0] + sw.v[1]).abs() < 1e-15);
        assert!(split_weights(&[vec![0.0, 0.0]], &c1, &c1).is_err());
    }

    proptest! {
        #[test]
        fn split_weights_are_normalized(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..30),
            c1 in prop::collection::vec(-5.0f64..5.0, 3),
            shift in prop::collection::vec(0.1f64..5.0, 3),
        ) {
            let c2: Vec<f64> = c1.iter().zip(&shift).map(|(a, b)| a + b).collect();
            if let Ok(sw) = split_weights(&pts, &c1, &c2) {
                prop_assert!(sw.w.iter().all(|w| (0.0..=1.0).contains(w)));
                prop_assert!(sw.w.contains(&1.0));
            }
        }
    }

    fn two_cluster_data() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let side = i % 2;
            let feat = if side == 0 { -1.0 } else { 1.0 };
            x.push(vec![feat + r.gen_range(-0.3..0.3), r.gen_range(-1.0..1.0)]);
            let base = if side == 0 { 0.0 } else { 10.0 };
            y.push(vec![base + r.gen_range(-1.0..1.0)]);
        }
        (x, y)
    }

    #[test]
    fn identical_targets_give_single_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = vec![vec![3.0, -1.0]; 10];
        let t = KTree::train(&x, &y, &TreeParams::default(), 0).unwrap();
        assert_eq!(t.num_leaves(), 1);
        assert_eq!(t.predict(&[100.0]).unwrap(), &[3.0, -1.0]);
    }

    #[test]
    fn min_samples_stops_splitting() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let y: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 10.0]).collect();
        let t = KTree::train(&x, &y, &TreeParams::default(), 0).unwrap();
        assert_eq!(t.num_leaves(), 1);
    }

    #[test]
    fn depth_one_tree_matches_kmeans_oracle() {
        let (x, y) = two_cluster_data();
        let params = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let tree = KTree::train(&x, &y, &params, 0).unwrap();
        assert_eq!(tree.num_leaves(), 2);
        // Training SSE equals the k-means within-cluster SSE.
        let km = kmeans_targets(&y, 2, 5, &mut rng()).unwrap();
        let sse: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| sq_dist(tree.predict(xi).unwrap(), yi))
            .sum();
        assert!((sse - km.sse).abs() < 1e-9, "{sse} vs {}", km.sse);
        for (xi, &a) in x.iter().zip(&km.assignment) {
            let p = tree.predict(xi).unwrap();
            assert!((p[0] - km.centroids[a][0]).abs() < 1e-9);
        }
    }

    #[test]
    fn tree_invariants() {
        let (x, y) = two_cluster_data();
        let tree = KTree::train(
            &x,
            &y,
            &TreeParams {
                min_samples: 2,
                ..TreeParams::default()
            },
            3,
        )
        .unwrap();
        let mut seen = vec![false; tree.num_leaves()];
        for node in tree.nodes() {
            match node {
                Node::Split { children, .. } => assert_eq!(children.len(), 2),
                Node::Leaf { index, .. } => seen[*index as usize] = true,
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(tree.predict(&[1.0]).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        let x: Vec<Vec<f64>> = Vec::new();
        assert!(KTree::train(&x, &x, &TreeParams::default(), 0).is_err());
    }

    #[test]
    fn forest_prediction_and_codes() {
        let leaf = |v: Vec<f64>| KTree {
            nodes: vec![Node::Leaf { mean: v, index: 0 }],
            num_leaves: 1,
            input_dim: 1,
            target_dim: 2,
            k: 2,
        };
        let f = KForest::from_trees(
            vec![leaf(vec![0.0, 0.0]), leaf(vec![2.0, 2.0])],
            ForestParams::default(),
        )
        .unwrap();
        assert_eq!(f.predict(&[7.0]).unwrap(), vec![1.0, 1.0]);
        let code = f.leaf_code(&[7.0]).unwrap();
        assert_eq!(
            code,
            LeafCode {
                len: 2,
                ones: vec![0, 1]
            }
        );
        assert_eq!(code, f.leaf_code(&[-3.0]).unwrap());
        assert!(f.leaf_code(&[1.0, 2.0]).is_err());
        let rev = KForest::from_trees(f.trees().iter().rev().cloned().collect(), ForestParams::default()).unwrap();
        assert_eq!(rev.predict(&[7.0]).unwrap(), f.predict(&[7.0]).unwrap());
    }

    #[test]
    fn forest_codes_have_one_bit_per_tree() {
        let (x, y) = two_cluster_data();
        let params = ForestParams {
            trees: 5,
            tree: TreeParams {
                max_depth: Some(7),
                min_samples: 2,
                ..TreeParams::default()
            },
            ..ForestParams::default()
        };
        let f = KForest::train(&x, &y, &params).unwrap();
        for xi in &x {
            let code = f.leaf_code(xi).unwrap();
            assert_eq!(code.len, f.code_len());
            assert_eq!(code.to_dense().iter().filter(|&&b| b == 1).count(), 5);
            assert_eq!(code, f.leaf_code(xi).unwrap());
        }
    }

    #[test]
    fn forest_is_executor_independent_and_round_trips() {
        let (x, y) = two_cluster_data();
        let params = ForestParams {
            trees: 4,
            seed: 77,
            tree: TreeParams {
                min_samples: 2,
                ..TreeParams::default()
            },
            ..ForestParams::default()
        };
        let a = KForest::train_with(Executor::Sequential, &x, &y, &params).unwrap();
        let b = KForest::train_with(Executor::default(), &x, &y, &params).unwrap();
        assert_eq!(a, b);
        let bytes = a.to_bytes();
        let back = KForest::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
        assert!(KForest::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}

//! A single honest causal tree.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FeatureMatrix;

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Split column, or `u32::MAX` for a leaf.
    pub feature: u32,
    /// Units with `x <= threshold` go left.
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Index into `leaves` for leaf nodes.
    pub leaf: u32,
    pub depth: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

/// Estimation units of one leaf with their residual moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub units: Vec<u32>,
    /// Mean of `y~ z~` over `units`.
    pub mean_yz: f64,
    /// Mean of `z~²` over `units`.
    pub mean_zz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HonestTree {
    pub seed: u64,
    pub nodes: Vec<Node>,
    pub leaves: Vec<Leaf>,
    pub structure_indices: Vec<u32>,
    pub estimation_indices: Vec<u32>,
    /// Bitset over training units: drawn into this tree's subsample.
    in_sample: Vec<u64>,
}

/// Per-unit inputs to tree growth.
pub struct GrowInputs<'a> {
    pub x: &'a FeatureMatrix,
    /// `y~ · z~`
    pub yz: &'a [f64],
    /// `z~²`
    pub zz: &'a [f64],
    pub treated: &'a [bool],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub min_node_size: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    pub mtry: usize,
    /// Each child keeps at least this share of its parent's structure units.
    pub min_child_fraction: f64,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

#[derive(Default, Clone, Copy)]
struct Side {
    n: usize,
    treated: usize,
    a: f64,
    b: f64,
}

impl Side {
    fn add(&mut self, inp: &GrowInputs, i: usize) {
        self.n += 1;
        self.treated += usize::from(inp.treated[i]);
        self.a += inp.yz[i];
        self.b += inp.zz[i];
    }

    fn minus(self, o: Side) -> Side {
        Side { n: self.n - o.n, treated: self.treated - o.treated, a: self.a - o.a, b: self.b - o.b }
    }

    fn admissible(&self, min: usize) -> bool {
        self.n >= min && self.treated >= 1 && self.treated < self.n
    }
}

fn score(l: &Side, r: &Side) -> f64 {
    let n = (l.n + r.n) as f64;
    let d = l.a / l.b - r.a / r.b;
    (l.n as f64) * (r.n as f64) / (n * n) * d * d
}

fn best_split(inp: &GrowInputs, s_units: &[u32], e_units: &[u32], feats: &[usize], min: usize) -> Option<Split> {
    let mut total = Side::default();
    for &i in s_units {
        total.add(inp, i as usize);
    }
    let mut best: Option<Split> = None;
    let consider = |feature: usize, threshold: f64, l: &Side, best: &mut Option<Split>| {
        let r = total.minus(*l);
        if !l.admissible(min) || !r.admissible(min) {
            return;
        }
        let s = score(l, &r);
        if s.is_finite() && best.as_ref().is_none_or(|b| s > b.score) {
            *best = Some(Split { feature, threshold, score: s });
        }
    };
    for &j in feats {
        let col = &inp.x.columns[j];
        if inp.x.binary[j] {
            let mut l = Side::default();
            for &i in s_units {
                if col[i as usize] <= 0.5 {
                    l.add(inp, i as usize);
                }
            }
            let e_left = e_units.iter().filter(|&&i| col[i as usize] <= 0.5).count();
            if e_left >= min && e_units.len() - e_left >= min {
                consider(j, 0.5, &l, &mut best);
            }
            continue;
        }
        let mut sorted: Vec<(f64, u32)> = s_units.iter().map(|&i| (col[i as usize], i)).collect();
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut e_sorted: Vec<f64> = e_units.iter().map(|&i| col[i as usize]).collect();
        e_sorted.sort_unstable_by(f64::total_cmp);
        let mut l = Side::default();
        for k in 0..sorted.len() - 1 {
            l.add(inp, sorted[k].1 as usize);
            let (v, next) = (sorted[k].0, sorted[k + 1].0);
            if v == next || l.n < min {
                continue;
            }
            if sorted.len() - l.n < min {
                break;
            }
            let mid = 0.5 * (v + next);
            let threshold = if mid < next { mid } else { v };
            let e_left = e_sorted.partition_point(|&x| x <= threshold);
            if e_left >= min && e_sorted.len() - e_left >= min {
                consider(j, threshold, &l, &mut best);
            }
        }
    }
    best
}

fn leaf_of(inp: &GrowInputs, units: Vec<u32>) -> Leaf {
    let n = units.len().max(1) as f64;
    let mean_yz = units.iter().map(|&i| inp.yz[i as usize]).sum::<f64>() / n;
    let mean_zz = units.iter().map(|&i| inp.zz[i as usize]).sum::<f64>() / n;
    Leaf { units, mean_yz, mean_zz }
}

impl HonestTree {
    /// Grows one tree. Structure depends only on the seed, the covariates and
    /// the structure half's residuals; estimation-half residuals only fill leaves.
    pub fn grow(inp: &GrowInputs, params: &TreeParams, seed: u64) -> HonestTree {
        let n = inp.x.n;
        let p = inp.x.columns.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ((params.subsample_fraction * n as f64).round() as usize).clamp(1.min(n), n);
        let mut sample: Vec<u32> = index::sample(&mut rng, n, s).into_iter().map(|i| i as u32).collect();
        let mut in_sample = vec![0u64; n.div_ceil(64)];
        for &i in &sample {
            in_sample[i as usize / 64] |= 1 << (i % 64);
        }
        let n_struct = ((params.honesty_fraction * s as f64).round() as usize).min(s);
        let estimation_indices = sample.split_off(n_struct);
        let structure_indices = sample;

        let mtry = params.mtry.clamp(1, p.max(1));
        let mut nodes: Vec<Node> = Vec::new();
        let mut leaves: Vec<Leaf> = Vec::new();
        let mut pending: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
        nodes.push(Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, leaf: 0, depth: 0 });
        pending.push((structure_indices.clone(), estimation_indices.clone()));
        // Nodes are processed in creation order, so the RNG stream is fixed by the seed.
        let mut next = 0;
        while next < nodes.len() {
            let (su, eu) = std::mem::take(&mut pending[next]);
            let min = params.min_node_size;
            let split = if su.len() >= 2 * min && eu.len() >= 2 * min && p > 0 {
                let feats: Vec<usize> = index::sample(&mut rng, p, mtry).into_vec();
                let min_child = min.max(1).max((params.min_child_fraction * su.len() as f64).ceil() as usize);
                best_split(inp, &su, &eu, &feats, min_child)
            } else {
                None
            };
            match split {
                Some(sp) => {
                    let col = &inp.x.columns[sp.feature];
                    let (sl, sr): (Vec<u32>, Vec<u32>) = su.iter().partition(|&&i| col[i as usize] <= sp.threshold);
                    let (el, er): (Vec<u32>, Vec<u32>) = eu.iter().partition(|&&i| col[i as usize] <= sp.threshold);
                    let depth = nodes[next].depth + 1;
                    let l = nodes.len() as u32;
                    nodes.push(Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, leaf: 0, depth });
                    nodes.push(Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, leaf: 0, depth });
                    pending.push((sl, el));
                    pending.push((sr, er));
                    let node = &mut nodes[next];
                    node.feature = sp.feature as u32;
                    node.threshold = sp.threshold;
                    node.left = l;
                    node.right = l + 1;
                }
                None => {
                    nodes[next].leaf = leaves.len() as u32;
                    leaves.push(leaf_of(inp, eu));
                }
            }
            next += 1;
        }
        HonestTree { seed, nodes, leaves, structure_indices, estimation_indices, in_sample }
    }

    /// Leaf reached by a covariate row.
    pub fn leaf_for(&self, row: &[f64]) -> &Leaf {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.is_leaf() {
                return &self.leaves[node.leaf as usize];
            }
            k = if row[node.feature as usize] <= node.threshold { node.left } else { node.right } as usize;
        }
    }

    /// Leaf reached by training unit `i`, reading the column-major feature store.
    pub fn leaf_for_unit(&self, x: &FeatureMatrix, i: usize) -> &Leaf {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.is_leaf() {
                return &self.leaves[node.leaf as usize];
            }
            k = if x.columns[node.feature as usize][i] <= node.threshold { node.left } else { node.right } as usize;
        }
    }

    pub fn in_subsample(&self, i: usize) -> bool {
        self.in_sample[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Split rules in node order: `(feature, threshold)` or `None` for leaves.
    pub fn structure(&self) -> Vec<Option<(u32, f64)>> {
        self.nodes.iter().map(|n| (!n.is_leaf()).then_some((n.feature, n.threshold))).collect()
    }

    /// The root split, if any.
    pub fn first_split(&self) -> Option<(usize, f64)> {
        let root = &self.nodes[0];
        (!root.is_leaf()).then_some((root.feature as usize, root.threshold))
    }
}

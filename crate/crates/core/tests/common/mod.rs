//! Brute-force reference implementations and random input generators shared
//! by the integration tests. Nothing here calls into the library's own
//! algorithms.
#![allow(dead_code)]

pub mod checks;
pub mod grad;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use katgnn::model::{Demographics, PatientRecord, Sex, Visit};

/// Random rooted DAG over `n` concepts named `c000..`; `c000` is the root and
/// every other concept picks one to three parents among earlier concepts.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    let name = |i: usize| format!("c{i:03}");
    let mut edges = Vec::new();
    for i in 1..n {
        let k = rng.gen_range(1..=3.min(i));
        let mut ps = BTreeSet::new();
        while ps.len() < k {
            ps.insert(rng.gen_range(0..i));
        }
        for p in ps {
            edges.push((name(i), name(p)));
        }
    }
    edges
}

pub struct DagOracle {
    parents: BTreeMap<String, Vec<String>>,
    children: BTreeMap<String, Vec<String>>,
    root: String,
}

impl DagOracle {
    pub fn new(edges: &[(String, String)]) -> Self {
        let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (c, p) in edges {
            parents.entry(c.clone()).or_default().push(p.clone());
            parents.entry(p.clone()).or_default();
            children.entry(p.clone()).or_default().push(c.clone());
            children.entry(c.clone()).or_default();
        }
        let root = parents
            .iter()
            .find(|(_, ps)| ps.is_empty())
            .map(|(c, _)| c.clone())
            .expect("a root");
        Self { parents, children, root }
    }

    pub fn concepts(&self) -> Vec<String> {
        self.parents.keys().cloned().collect()
    }

    /// BFS upward: every ancestor (self included) with its fewest hops.
    pub fn ancestors(&self, c: &str) -> BTreeMap<String, u32> {
        let mut dist = BTreeMap::from([(c.to_string(), 0)]);
        let mut queue = VecDeque::from([c.to_string()]);
        while let Some(x) = queue.pop_front() {
            let d = dist[&x];
            for p in &self.parents[&x] {
                if !dist.contains_key(p) {
                    dist.insert(p.clone(), d + 1);
                    queue.push_back(p.clone());
                }
            }
        }
        dist
    }

    /// Longest root path, by relaxing over a topological order from the root.
    pub fn depths(&self) -> BTreeMap<String, u32> {
        let mut indeg: BTreeMap<&str, usize> = self.parents.iter().map(|(c, ps)| (c.as_str(), ps.len())).collect();
        let mut depth: BTreeMap<String, u32> = BTreeMap::from([(self.root.clone(), 0)]);
        let mut queue = VecDeque::from([self.root.as_str()]);
        while let Some(x) = queue.pop_front() {
            for c in &self.children[x] {
                let d = depth[x] + 1;
                let e = depth.entry(c.clone()).or_insert(0);
                *e = (*e).max(d);
                let k = indeg.get_mut(c.as_str()).unwrap();
                *k -= 1;
                if *k == 0 {
                    queue.push_back(c);
                }
            }
        }
        depth
    }

    pub fn lcs_depth(&self, a: &str, b: &str, depths: &BTreeMap<String, u32>) -> u32 {
        let (xa, xb) = (self.ancestors(a), self.ancestors(b));
        xa.keys().filter(|c| xb.contains_key(*c)).map(|c| depths[c]).max().unwrap()
    }

    pub fn lcs_path(&self, a: &str, b: &str) -> u32 {
        let (xa, xb) = (self.ancestors(a), self.ancestors(b));
        xa.iter().filter_map(|(c, da)| xb.get(c).map(|db| da + db)).min().unwrap()
    }
}

/// Exhaustive counts: per item, and per unordered pair `(a, b)`, `a < b`,
/// the number of transactions containing them.
pub fn count_itemsets(universe: usize, transactions: &[Vec<usize>]) -> (Vec<u64>, BTreeMap<(usize, usize), u64>) {
    let sets: Vec<BTreeSet<usize>> = transactions.iter().map(|t| t.iter().copied().collect()).collect();
    let singles = (0..universe)
        .map(|i| sets.iter().filter(|s| s.contains(&i)).count() as u64)
        .collect();
    let mut pairs = BTreeMap::new();
    for a in 0..universe {
        for b in a + 1..universe {
            let c = sets.iter().filter(|s| s.contains(&a) && s.contains(&b)).count() as u64;
            if c > 0 {
                pairs.insert((a, b), c);
            }
        }
    }
    (singles, pairs)
}

/// `(wins + ties / 2) / (P * N)` over every positive-negative pair.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate().filter(|(i, _)| labels[*i]) {
        for (_, &sj) in scores.iter().enumerate().filter(|(j, _)| !labels[*j]) {
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
        let _ = i;
    }
    num / pairs
}

/// Average precision with one step per distinct score threshold.
pub fn step_sum_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    for t in thresholds {
        let above = |pos: bool| scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == pos).count() as f64;
        let at = scores.iter().zip(labels).filter(|(s, l)| **s == t && **l).count() as f64;
        let (tp, fp) = (above(true), above(false));
        ap += at / p * tp / (tp + fp);
    }
    ap
}

/// Scores drawn from a few levels so ties are common, with both classes.
pub fn random_scored(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let levels = rng.gen_range(2..20);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    labels[0] = true;
    labels[n - 1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let shift = if l { 2 } else { 0 };
            (rng.gen_range(0..levels) + shift) as f64 / levels as f64
        })
        .collect();
    (scores, labels)
}

/// Small hand-rolled cohort: `n` patients, codes `C0..C{codes}`, items
/// `M0..M{items}`, 1 to 5 visits each.
pub fn random_cohort(rng: &mut ChaCha8Rng, n: usize, codes: usize, items: usize) -> Vec<PatientRecord> {
    (0..n)
        .map(|p| {
            let n_visits = rng.gen_range(1..=5);
            let mut t = 0i64;
            let visits: Vec<Visit> = (0..n_visits)
                .map(|k| {
                    t += rng.gen_range(1..200);
                    let dx: Vec<String> = (0..rng.gen_range(1..4)).map(|_| format!("C{}", rng.gen_range(0..codes))).collect();
                    let meas: Vec<(String, f64)> = (0..rng.gen_range(0..4))
                        .map(|_| (format!("M{}", rng.gen_range(0..items)), rng.gen_range(0.0..10.0f64).round()))
                        .collect();
                    Visit::new(format!("v{k}"), t, dx, meas)
                })
                .collect();
            let sex = [Sex::Female, Sex::Male, Sex::Unknown][p % 3];
            let demo = Demographics::new(rng.gen_range(20.0..90.0f64).round(), sex).unwrap();
            PatientRecord::new(format!("p{p:04}"), demo, visits, t + rng.gen_range(1..60), rng.gen_bool(0.4)).unwrap()
        })
        .collect()
}

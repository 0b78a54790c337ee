//! Concept DAG, lowest-common-subsumer distances, and ontology edge selection.
//!
//! Depth is the length of the longest root-to-concept path. Two pairwise
//! metrics are available: the depth of the deepest common ancestor
//! ([`MetricMode::LcsDepth`], larger means more similar) and the shortest
//! up-then-down hop count through a common ancestor ([`MetricMode::LcsPath`],
//! smaller means more similar).

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, Modality, PatientGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    root: usize,
    depth: Vec<u32>,
    /// Per concept: `(ancestor, fewest upward hops)`, self included, sorted by
    /// ancestor index.
    up: Vec<Vec<(usize, u32)>>,
}

impl Ontology {
    /// Builds the DAG from `(child, parent)` pairs. The root is the unique
    /// concept that never appears as a child.
    pub fn from_edges(edges: &[(String, String)]) -> Result<Self> {
        Self::new(std::iter::empty(), edges)
    }

    /// Like [`Ontology::from_edges`], with extra concepts that may have no
    /// edges at all (a root-only ontology).
    pub fn new(concepts: impl IntoIterator<Item = String>, edges: &[(String, String)]) -> Result<Self> {
        let mut names: BTreeSet<String> = concepts.into_iter().collect();
        for (c, p) in edges {
            if c == p {
                return Err(Error::Cycle(vec![c.clone(), c.clone()]));
            }
            names.insert(c.clone());
            names.insert(p.clone());
        }
        if names.is_empty() {
            return Err(Error::Ontology("no concepts".into()));
        }
        let ids: Vec<String> = names.into_iter().collect();
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let n = ids.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (c, p) in edges {
            let (ci, pi) = (index[c], index[p]);
            if !parents[ci].contains(&pi) {
                parents[ci].push(pi);
                children[pi].push(ci);
            }
        }
        for p in &mut parents {
            p.sort_unstable();
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => {
                let cycle = find_cycle(&parents, &vec![false; n]);
                return Err(Error::Cycle(cycle.into_iter().map(|i| ids[i].clone()).collect()));
            }
            many => {
                let names: Vec<&str> = many.iter().take(5).map(|&i| ids[i].as_str()).collect();
                return Err(Error::Ontology(format!(
                    "expected a single root, found {}: {}",
                    many.len(),
                    names.join(", ")
                )));
            }
        };

        // Kahn's algorithm from the root; longest-path depth in topological order.
        let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut depth = vec![0u32; n];
        let mut done = vec![false; n];
        let mut queue = VecDeque::from([root]);
        done[root] = true;
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                depth[c] = depth[c].max(depth[u] + 1);
                pending[c] -= 1;
                if pending[c] == 0 {
                    done[c] = true;
                    queue.push_back(c);
                }
            }
        }
        if done.iter().any(|d| !d) {
            let cycle = find_cycle(&parents, &done);
            return Err(Error::Cycle(cycle.into_iter().map(|i| ids[i].clone()).collect()));
        }

        let up = (0..n)
            .map(|start| {
                let mut hops: BTreeMap<usize, u32> = BTreeMap::new();
                hops.insert(start, 0);
                let mut q = VecDeque::from([start]);
                while let Some(u) = q.pop_front() {
                    let h = hops[&u];
                    for &p in &parents[u] {
                        if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(p) {
                            e.insert(h + 1);
                            q.push_back(p);
                        }
                    }
                }
                hops.into_iter().collect()
            })
            .collect();

        Ok(Self {
            ids,
            index,
            parents,
            root,
            depth,
            up,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn root(&self) -> &str {
        &self.ids[self.root]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn concepts(&self) -> &[String] {
        &self.ids
    }

    fn idx(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Ontology(format!("unknown concept `{id}`")))
    }

    pub fn depth(&self, id: &str) -> Result<u32> {
        Ok(self.depth[self.idx(id)?])
    }

    pub fn parents(&self, id: &str) -> Result<Vec<&str>> {
        Ok(self.parents[self.idx(id)?]
            .iter()
            .map(|&p| self.ids[p].as_str())
            .collect())
    }

    /// `(child, parent)` pairs in concept order.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (self.ids[c].as_str(), self.ids[p].as_str())))
            .collect()
    }

    /// True when `ancestor` is `descendant` or one of its ancestors.
    pub fn is_ancestor(&self, ancestor: &str, descendant: &str) -> Result<bool> {
        let (a, d) = (self.idx(ancestor)?, self.idx(descendant)?);
        Ok(self.up[d].binary_search_by_key(&a, |e| e.0).is_ok())
    }

    fn common(&self, a: usize, b: usize) -> impl Iterator<Item = (usize, u32, u32)> + '_ {
        let (xa, xb) = (&self.up[a], &self.up[b]);
        let mut j = 0;
        xa.iter().filter_map(move |&(c, ha)| {
            while j < xb.len() && xb[j].0 < c {
                j += 1;
            }
            (j < xb.len() && xb[j].0 == c).then(|| (c, ha, xb[j].1))
        })
    }

    fn lcs_depth_idx(&self, a: usize, b: usize) -> u32 {
        self.common(a, b).map(|(c, _, _)| self.depth[c]).max().unwrap_or(0)
    }

    fn lcs_path_idx(&self, a: usize, b: usize) -> u32 {
        self.common(a, b).map(|(_, ha, hb)| ha + hb).min().unwrap_or(u32::MAX)
    }

    /// Depth of the deepest concept that subsumes both `a` and `b`.
    pub fn lcs_depth(&self, a: &str, b: &str) -> Result<u32> {
        Ok(self.lcs_depth_idx(self.idx(a)?, self.idx(b)?))
    }

    /// Fewest hops from `a` up to a common ancestor and back down to `b`.
    pub fn lcs_path(&self, a: &str, b: &str) -> Result<u32> {
        Ok(self.lcs_path_idx(self.idx(a)?, self.idx(b)?))
    }

    pub fn metric(&self, a: &str, b: &str, mode: MetricMode) -> Result<f64> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        Ok(match mode {
            MetricMode::LcsDepth => self.lcs_depth_idx(a, b) as f64,
            MetricMode::LcsPath => self.lcs_path_idx(a, b) as f64,
        })
    }

    /// Fewest upward hops from `id` to the root.
    pub fn hops_to_root(&self, id: &str) -> Result<u32> {
        let i = self.idx(id)?;
        Ok(self.up[i]
            .iter()
            .find(|e| e.0 == self.root)
            .map(|e| e.1)
            .expect("every concept reaches the root"))
    }
}

/// Walks parent links inside the unresolved set until a concept repeats.
fn find_cycle(parents: &[Vec<usize>], done: &[bool]) -> Vec<usize> {
    let Some(start) = (0..parents.len()).find(|&i| !done[i]) else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = parents[cur]
            .iter()
            .copied()
            .find(|&p| !done[p])
            .expect("unresolved concepts always have an unresolved parent");
        if let Some(&at) = pos.get(&next) {
            let mut cycle = path[at..].to_vec();
            cycle.push(next);
            return cycle;
        }
        pos.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

/// Longest-path depth of every concept.
pub fn compute_depths(onto: &Ontology) -> BTreeMap<String, u32> {
    onto.ids
        .iter()
        .cloned()
        .zip(onto.depth.iter().copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum MetricMode {
    LcsDepth,
    #[default]
    LcsPath,
}

impl MetricMode {
    pub fn name(self) -> &'static str {
        match self {
            MetricMode::LcsDepth => "lcs_depth",
            MetricMode::LcsPath => "lcs_path",
        }
    }

    /// Sort key where smaller means more similar.
    fn rank_key(self, score: f64) -> f64 {
        match self {
            MetricMode::LcsDepth => -score,
            MetricMode::LcsPath => score,
        }
    }
}

impl FromStr for MetricMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lcs_depth" => Ok(MetricMode::LcsDepth),
            "lcs_path" => Ok(MetricMode::LcsPath),
            other => Err(format!("expected lcs_depth or lcs_path, got `{other}`")),
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneralConcept {
    pub concept: String,
    /// Set when no candidate subsumes all others and the shallowest one was
    /// taken instead.
    pub fallback: bool,
}

/// Picks the candidate that is an ancestor of every other candidate. Without
/// one, falls back to the shallowest candidate (ties: smallest id).
pub fn most_general_concept(onto: &Ontology, candidates: &BTreeSet<String>) -> Result<GeneralConcept> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate concepts"));
    }
    for c in candidates {
        let mut subsumes_all = true;
        for other in candidates {
            if !onto.is_ancestor(c, other)? {
                subsumes_all = false;
                break;
            }
        }
        if subsumes_all {
            return Ok(GeneralConcept {
                concept: c.clone(),
                fallback: false,
            });
        }
    }
    let mut best: Option<(u32, &String)> = None;
    for c in candidates {
        let d = onto.depth(c)?;
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    let (_, c) = best.expect("non-empty");
    log::warn!("no candidate subsumes all of {candidates:?}; using shallowest `{c}`");
    Ok(GeneralConcept {
        concept: c.clone(),
        fallback: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceKind {
    Ccs,
    Meas,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Ccs => "ccs",
            SourceKind::Meas => "meas",
        }
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ccs" => Ok(SourceKind::Ccs),
            "meas" => Ok(SourceKind::Meas),
            other => Err(format!("expected ccs or meas, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConceptMapping {
    pub ccs_to_concepts: BTreeMap<String, BTreeSet<String>>,
    pub meas_to_concept: BTreeMap<String, String>,
    /// Measurement items whose candidates had no common most-general concept.
    pub fallbacks: Vec<String>,
}

impl ConceptMapping {
    /// Builds the mapping from raw `(kind, source_id, concept_id)` rows.
    /// Measurement items with several candidate concepts are reduced to the
    /// most general one.
    pub fn from_rows(onto: &Ontology, rows: &[(SourceKind, String, String)]) -> Result<Self> {
        let mut ccs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut meas: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (kind, src, concept) in rows {
            if !onto.contains(concept) {
                return Err(Error::Ontology(format!(
                    "{} `{src}` maps to unknown concept `{concept}`",
                    kind.name()
                )));
            }
            let target = match kind {
                SourceKind::Ccs => &mut ccs,
                SourceKind::Meas => &mut meas,
            };
            target.entry(src.clone()).or_default().insert(concept.clone());
        }
        let mut out = ConceptMapping {
            ccs_to_concepts: ccs,
            ..Default::default()
        };
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        for (item, candidates) in meas {
            let chosen = most_general_concept(onto, &candidates)?;
            if chosen.fallback {
                out.fallbacks.push(item.clone());
            }
            if let Some(prev) = owner.insert(chosen.concept.clone(), item.clone()) {
                return Err(Error::Ontology(format!(
                    "measurement items `{prev}` and `{item}` both map to concept `{}`",
                    chosen.concept
                )));
            }
            out.meas_to_concept.insert(item, chosen.concept);
        }
        Ok(out)
    }

    /// Rows suitable for `mapping.csv`, in deterministic order.
    pub fn rows(&self) -> Vec<(SourceKind, &str, &str)> {
        let mut rows = Vec::new();
        for (src, cs) in &self.ccs_to_concepts {
            for c in cs {
                rows.push((SourceKind::Ccs, src.as_str(), c.as_str()));
            }
        }
        for (src, c) in &self.meas_to_concept {
            rows.push((SourceKind::Meas, src.as_str(), c.as_str()));
        }
        rows
    }
}

/// Mean pairwise metric over the two CCS categories' concept sets. `None` if
/// either category is unmapped.
pub fn ccs_distance(onto: &Ontology, mapping: &ConceptMapping, i: &str, j: &str, mode: MetricMode) -> Option<f64> {
    let (ei, ej) = (mapping.ccs_to_concepts.get(i)?, mapping.ccs_to_concepts.get(j)?);
    let mut total = 0.0;
    for a in ei {
        for b in ej {
            total += onto.metric(a, b, mode).ok()?;
        }
    }
    Some(total / (ei.len() * ej.len()) as f64)
}

/// Single-pair metric on the two items' mapped concepts. `None` if either item
/// is unmapped.
pub fn meas_distance(onto: &Ontology, mapping: &ConceptMapping, i: &str, j: &str, mode: MetricMode) -> Option<f64> {
    let (a, b) = (mapping.meas_to_concept.get(i)?, mapping.meas_to_concept.get(j)?);
    onto.metric(a, b, mode).ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan {
    pub modality: Modality,
    /// Entity identifiers, indexed like the vocabulary.
    pub entities: Vec<String>,
    /// Every scored pair, best first.
    pub scored: Vec<ScoredPair>,
    pub n_selected: usize,
    pub percent: f64,
    pub mode: MetricMode,
    /// Pairs skipped because an entity had no mapped concept.
    pub unscored: usize,
}

impl AugmentationPlan {
    pub fn selected(&self) -> &[ScoredPair] {
        &self.scored[..self.n_selected]
    }

    pub fn selected_pairs(&self) -> Vec<(usize, usize)> {
        self.selected().iter().map(|p| (p.a, p.b)).collect()
    }

    /// Writes `entity_a,entity_b,score,selected` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_a", "entity_b", "score", "selected"])?;
        for (k, p) in self.scored.iter().enumerate() {
            w.write_record([
                self.entities[p.a].as_str(),
                self.entities[p.b].as_str(),
                &p.score.to_string(),
                if k < self.n_selected { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores unordered entity pairs `(i, j)`, `i < j`, enumerated in index order
/// and capped at `cap` pairs; ranks them best-first with ties broken by the
/// smaller pair; selects the first `floor(percent / 100 * scored)`.
pub fn plan_augmentation(
    modality: Modality,
    entities: &[String],
    distance: impl Fn(usize, usize) -> Option<f64>,
    percent: f64,
    mode: MetricMode,
    cap: usize,
) -> Result<AugmentationPlan> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::invalid(format!("percent must be in [0, 100], got {percent}")));
    }
    let mut scored = Vec::new();
    let mut unscored = 0;
    'outer: for a in 0..entities.len() {
        for b in a + 1..entities.len() {
            if scored.len() + unscored >= cap {
                log::warn!("{modality} augmentation capped at {cap} pairs");
                break 'outer;
            }
            match distance(a, b) {
                Some(score) => scored.push(ScoredPair { a, b, score }),
                None => unscored += 1,
            }
        }
    }
    scored.sort_by(|x, y| {
        mode.rank_key(x.score)
            .total_cmp(&mode.rank_key(y.score))
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    let n_selected = (percent / 100.0 * scored.len() as f64).floor() as usize;
    Ok(AugmentationPlan {
        modality,
        entities: entities.to_vec(),
        scored,
        n_selected,
        percent,
        mode,
        unscored,
    })
}

/// Adds ontology edges for the plan's selected pairs that are present in the
/// graph. Returns the number of edges added.
pub fn apply_augmentation(graph: &mut PatientGraph, plan: &AugmentationPlan) -> Result<usize> {
    if graph.modality != plan.modality {
        return Err(Error::invalid(format!(
            "{} plan applied to a {} graph",
            plan.modality, graph.modality
        )));
    }
    Ok(graph.link_entities(&plan.selected_pairs(), EdgeKind::Ontology))
}

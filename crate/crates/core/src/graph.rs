//! Patient-specific diagnosis and measurement graphs.
//!
//! Node order is fixed: entity nodes sorted by `(vocab_index, bin)`, then visit
//! nodes by ordinal. Edges are undirected, stored once as `(u, v, kind)` with
//! `u < v`, and kept sorted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::discretize::{assign_bin, BinSpec};
use crate::error::Result;
use crate::model::{encode_demographics, DemoStats, PatientRecord, Vocabulary, N_DEMO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Diagnosis,
    Measurement,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Diagnosis => "diagnosis",
            Modality::Measurement => "measurement",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Entity {
        modality: Modality,
        vocab_index: usize,
        bin: Option<usize>,
    },
    Visit {
        ordinal: usize,
        tau_days: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Bipartite,
    Sequential,
    Ontology,
    Cooccurrence,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Bipartite => "bipartite",
            EdgeKind::Sequential => "sequential",
            EdgeKind::Ontology => "ontology",
            EdgeKind::Cooccurrence => "cooccurrence",
        }
    }

    pub fn is_augmented(self) -> bool {
        matches!(self, EdgeKind::Ontology | EdgeKind::Cooccurrence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientGraph {
    pub patient_id: String,
    pub modality: Modality,
    nodes: Vec<NodeKind>,
    edges: BTreeSet<Edge>,
    /// Width of the entity block: `N_diag`, or `N_meas * B`.
    entity_dim: usize,
    /// Bins per measurement item (1 for diagnosis graphs).
    bins: usize,
    demo: [f64; N_DEMO],
    /// Observations dropped because their item had no fitted bins.
    pub dropped: usize,
}

impl PatientGraph {
    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn entity_dim(&self) -> usize {
        self.entity_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.entity_dim + N_DEMO
    }

    pub fn demographics(&self) -> &[f64; N_DEMO] {
        &self.demo
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Visit node indices in chronological order.
    pub fn visit_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, NodeKind::Visit { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Days from each visit to the index date, in chronological order.
    pub fn taus(&self) -> Vec<i64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                NodeKind::Visit { tau_days, .. } => Some(*tau_days),
                _ => None,
            })
            .collect()
    }

    /// Node indices of all entity nodes carrying `vocab_index`.
    pub fn entity_nodes(&self, vocab_index: usize) -> std::ops::Range<usize> {
        let n_entities = self
            .nodes
            .iter()
            .take_while(|n| matches!(n, NodeKind::Entity { .. }))
            .count();
        let key = |n: &NodeKind| match n {
            NodeKind::Entity { vocab_index, .. } => *vocab_index,
            NodeKind::Visit { .. } => usize::MAX,
        };
        let ents = &self.nodes[..n_entities];
        let lo = ents.partition_point(|n| key(n) < vocab_index);
        let hi = ents.partition_point(|n| key(n) <= vocab_index);
        lo..hi
    }

    pub fn has_entity(&self, vocab_index: usize) -> bool {
        !self.entity_nodes(vocab_index).is_empty()
    }

    fn add_edge(&mut self, a: usize, b: usize, kind: EdgeKind) -> bool {
        debug_assert_ne!(a, b);
        let (u, v) = if a < b { (a, b) } else { (b, a) };
        self.edges.insert(Edge { u, v, kind })
    }

    /// Adds `kind` edges for every global entity pair whose endpoints are both
    /// present in this graph. For measurement graphs an item pair links every
    /// present bin node of one item to every present bin node of the other.
    /// Returns the number of edges added; re-applying the same pairs adds none.
    pub fn link_entities(&mut self, pairs: &[(usize, usize)], kind: EdgeKind) -> usize {
        let mut added = 0;
        for &(a, b) in pairs {
            if a == b {
                continue;
            }
            let (ra, rb) = (self.entity_nodes(a), self.entity_nodes(b));
            for u in ra {
                for v in rb.clone() {
                    if self.add_edge(u, v, kind) {
                        added += 1;
                    }
                }
            }
        }
        added
    }

    /// Copy of the graph keeping only bipartite and sequential edges.
    pub fn base(&self) -> PatientGraph {
        let mut g = self.clone();
        g.edges.retain(|e| !e.kind.is_augmented());
        g
    }

    /// Distinct undirected neighbor pairs, ignoring edge kind.
    pub fn adjacency_pairs(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.edges.iter().map(|e| (e.u, e.v)).collect();
        set.into_iter().collect()
    }

    /// Non-zero feature entries per node row.
    pub fn sparse_features(&self) -> Vec<Vec<(usize, f64)>> {
        self.nodes
            .iter()
            .map(|n| match n {
                NodeKind::Entity {
                    vocab_index, bin, ..
                } => vec![(vocab_index * self.bins + bin.unwrap_or(0), 1.0)],
                NodeKind::Visit { .. } => self
                    .demo
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x != 0.0)
                    .map(|(i, x)| (self.entity_dim + i, *x))
                    .collect(),
            })
            .collect()
    }

    /// Dense `[num_nodes x feature_dim]` node features.
    pub fn materialize_features(&self) -> Tensor {
        let dim = self.feature_dim();
        let mut t = Tensor::zeros(self.n_nodes(), dim);
        for (r, row) in self.sparse_features().into_iter().enumerate() {
            for (c, x) in row {
                t.set(r, c, x);
            }
        }
        t
    }

    fn node_label(&self, node: usize, vocab: &Vocabulary) -> (&'static str, String) {
        match self.nodes[node] {
            NodeKind::Entity {
                modality: Modality::Diagnosis,
                vocab_index,
                ..
            } => ("diagnosis", vocab.diagnosis_codes[vocab_index].clone()),
            NodeKind::Entity {
                modality: Modality::Measurement,
                vocab_index,
                bin,
            } => (
                "measurement",
                format!("{}#{}", vocab.measurement_items[vocab_index], bin.unwrap_or(0)),
            ),
            NodeKind::Visit { ordinal, .. } => ("visit", ordinal.to_string()),
        }
    }

    /// Writes the `u_kind,u_id,v_kind,v_id,edge_kind` debug edge list.
    pub fn write_edge_list<W: Write>(&self, vocab: &Vocabulary, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u_kind", "u_id", "v_kind", "v_id", "edge_kind"])?;
        for e in &self.edges {
            let (uk, uid) = self.node_label(e.u, vocab);
            let (vk, vid) = self.node_label(e.v, vocab);
            w.write_record([uk, &uid, vk, &vid, e.kind.name()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn assemble(
    record: &PatientRecord,
    modality: Modality,
    per_visit: Vec<BTreeSet<(usize, Option<usize>)>>,
    entity_dim: usize,
    bins: usize,
    demo_stats: &DemoStats,
    dropped: usize,
) -> PatientGraph {
    let entities: BTreeSet<(usize, Option<usize>)> = per_visit.iter().flatten().copied().collect();
    let mut nodes: Vec<NodeKind> = entities
        .iter()
        .map(|&(vocab_index, bin)| NodeKind::Entity {
            modality,
            vocab_index,
            bin,
        })
        .collect();
    let entity_pos: BTreeMap<(usize, Option<usize>), usize> =
        entities.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let first_visit = nodes.len();
    nodes.extend(record.visits.iter().enumerate().map(|(ordinal, v)| NodeKind::Visit {
        ordinal,
        tau_days: record.index_date - v.time,
    }));

    let mut g = PatientGraph {
        patient_id: record.patient_id.clone(),
        modality,
        nodes,
        edges: BTreeSet::new(),
        entity_dim,
        bins,
        demo: encode_demographics(&record.demographics, demo_stats.age_mean, demo_stats.age_std),
        dropped,
    };
    for (ordinal, ents) in per_visit.iter().enumerate() {
        for e in ents {
            g.add_edge(first_visit + ordinal, entity_pos[e], EdgeKind::Bipartite);
        }
        if ordinal > 0 {
            g.add_edge(first_visit + ordinal - 1, first_visit + ordinal, EdgeKind::Sequential);
        }
    }
    g
}

pub fn build_diagnosis_graph(
    record: &PatientRecord,
    vocab: &Vocabulary,
    demo_stats: &DemoStats,
) -> PatientGraph {
    let mut dropped = 0;
    let per_visit = record
        .visits
        .iter()
        .map(|v| {
            v.diagnoses
                .iter()
                .filter_map(|c| {
                    let idx = vocab.diag(c);
                    if idx.is_none() {
                        dropped += 1;
                    }
                    idx.map(|i| (i, None))
                })
                .collect()
        })
        .collect();
    assemble(
        record,
        Modality::Diagnosis,
        per_visit,
        vocab.n_diag(),
        1,
        demo_stats,
        dropped,
    )
}

pub fn build_measurement_graph(
    record: &PatientRecord,
    vocab: &Vocabulary,
    spec: &BinSpec,
    demo_stats: &DemoStats,
) -> PatientGraph {
    let mut dropped = 0;
    let per_visit = record
        .visits
        .iter()
        .map(|v| {
            let mut set = BTreeSet::new();
            for (item, value) in &v.measurements {
                match (vocab.meas(item), assign_bin(item, *value, spec)) {
                    (Some(idx), Ok(bin)) => {
                        set.insert((idx, Some(bin)));
                    }
                    _ => dropped += 1,
                }
            }
            set
        })
        .collect();
    if dropped > 0 {
        log::debug!(
            "patient {}: dropped {dropped} measurements without fitted bins",
            record.patient_id
        );
    }
    assemble(
        record,
        Modality::Measurement,
        per_visit,
        vocab.n_meas() * spec.bins(),
        spec.bins(),
        demo_stats,
        dropped,
    )
}

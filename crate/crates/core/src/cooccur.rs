//! Visit-level support and lift between pairs of clinical concepts.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, PatientGraph};
use crate::model::{PatientRecord, Vocabulary};

/// One transaction (sorted, distinct item indices) per visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionSet {
    pub transactions: Vec<Vec<usize>>,
    pub universe: usize,
}

impl TransactionSet {
    pub fn new(universe: usize, transactions: impl IntoIterator<Item = Vec<usize>>) -> Result<Self> {
        let transactions: Vec<Vec<usize>> = transactions
            .into_iter()
            .map(|mut t| {
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        if let Some(bad) = transactions.iter().flatten().find(|&&i| i >= universe) {
            return Err(Error::invalid(format!("item {bad} outside a universe of {universe}")));
        }
        Ok(Self { transactions, universe })
    }

    /// Diagnosis-code transactions from the given (training) records.
    pub fn diagnoses<'a>(records: impl IntoIterator<Item = &'a PatientRecord>, vocab: &Vocabulary) -> Self {
        let transactions = records
            .into_iter()
            .flat_map(|r| r.visits.iter())
            .map(|v| v.diagnoses.iter().filter_map(|c| vocab.diag(c)).collect())
            .collect::<Vec<_>>();
        Self::new(vocab.n_diag(), transactions).expect("vocabulary indices are in range")
    }

    /// Measurement-item transactions (item identity only, not value bins).
    pub fn measurements<'a>(records: impl IntoIterator<Item = &'a PatientRecord>, vocab: &Vocabulary) -> Self {
        let transactions = records
            .into_iter()
            .flat_map(|r| r.visits.iter())
            .map(|v| v.measurements.iter().filter_map(|(i, _)| vocab.meas(i)).collect())
            .collect::<Vec<_>>();
        Self::new(vocab.n_meas(), transactions).expect("vocabulary indices are in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStat {
    pub count: u64,
    pub support: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftTable {
    pub total: u64,
    pub singles: Vec<u64>,
    /// Pairs `(a, b)` with `a < b` whose joint count reached the minimum.
    pub pairs: BTreeMap<(usize, usize), PairStat>,
}

impl LiftTable {
    pub fn support(&self, a: usize) -> f64 {
        self.singles[a] as f64 / self.total as f64
    }

    pub fn get(&self, a: usize, b: usize) -> Option<&PairStat> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.get(&key)
    }

    /// Writes `a,b,support_ab,lift,selected` rows, `selected` meaning lift > 1.
    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "b", "support_ab", "lift", "selected"])?;
        for (&(a, b), s) in &self.pairs {
            w.write_record([
                names[a].as_str(),
                names[b].as_str(),
                &s.support.to_string(),
                &s.lift.to_string(),
                if s.lift > 1.0 { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `support(A,B) = #visits with A and B / #visits`,
/// `lift = support(A,B) / (support(A) * support(B))`. Pairs seen together
/// fewer than `min_pair_count` times are left out.
pub fn mine(ts: &TransactionSet, min_pair_count: u64) -> Result<LiftTable> {
    if ts.transactions.is_empty() {
        return Err(Error::invalid("no transactions to mine"));
    }
    let mut singles = vec![0u64; ts.universe];
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for t in &ts.transactions {
        for (k, &a) in t.iter().enumerate() {
            singles[a] += 1;
            for &b in &t[k + 1..] {
                *joint.entry((a, b)).or_default() += 1;
            }
        }
    }
    let total = ts.transactions.len() as u64;
    let n = total as f64;
    let pairs = joint
        .into_iter()
        .filter(|&(_, c)| c >= min_pair_count.max(1))
        .map(|((a, b), count)| {
            let support = count as f64 / n;
            let (sa, sb) = (singles[a] as f64 / n, singles[b] as f64 / n);
            ((a, b), PairStat { count, support, lift: support / (sa * sb) })
        })
        .collect();
    Ok(LiftTable { total, singles, pairs })
}

/// Pairs with lift strictly above one, sorted.
pub fn cooccurrence_edges(table: &LiftTable) -> Vec<(usize, usize)> {
    table
        .pairs
        .iter()
        .filter(|(_, s)| s.lift > 1.0)
        .map(|(&k, _)| k)
        .collect()
}

pub fn apply_cooccurrence(graph: &mut PatientGraph, pairs: &[(usize, usize)]) -> usize {
    graph.link_entities(pairs, EdgeKind::Cooccurrence)
}

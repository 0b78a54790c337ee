//! Cohort loading, run configuration, and synthetic cohort generation.

mod config;
mod files;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

pub use config::{load_config, Encoder, RunConfig};
pub use files::{
    load_cohort, load_mapping, load_ontology, write_cohort, write_mapping, write_mapping_rows, write_ontology,
    CohortFiles, DIAGNOSES_FILE, MAPPING_FILE, MEASUREMENTS_FILE, ONTOLOGY_FILE, PATIENTS_FILE,
};
pub use synth::{generate_synthetic, parse_signals, SignalMode, SynthConfig, SyntheticCohort};

use crate::model::PatientRecord;

/// Measurement items recorded at least once for at least `min_fraction` of
/// the given patients.
pub fn prevalent_items<'a>(records: impl IntoIterator<Item = &'a PatientRecord>, min_fraction: f64) -> BTreeSet<String> {
    let mut patients = 0usize;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        patients += 1;
        let items: BTreeSet<&str> = r
            .visits
            .iter()
            .flat_map(|v| v.measurements.iter().map(|(i, _)| i.as_str()))
            .collect();
        for i in items {
            *counts.entry(i).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| patients > 0 && c as f64 >= min_fraction * patients as f64)
        .map(|(i, _)| i.to_string())
        .collect()
}

/// Removes measurements of items outside `keep`. Returns the number removed.
pub fn retain_items(records: &mut [PatientRecord], keep: &BTreeSet<String>) -> usize {
    let mut removed = 0;
    for v in records.iter_mut().flat_map(|r| r.visits.iter_mut()) {
        let before = v.measurements.len();
        v.measurements.retain(|(i, _)| keep.contains(i));
        removed += before - v.measurements.len();
    }
    removed
}

//! Patient-level domain types shared by the whole pipeline.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the encoded demographic block: z-scored age plus one-hot sex.
pub const N_DEMO: usize = 4;

/// Derives an independent seed for sub-stream `stream` of `seed` (splitmix64
/// finalizer over the combined words).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
            Sex::Unknown => "U",
        }
    }

    fn slot(self) -> usize {
        match self {
            Sex::Female => 0,
            Sex::Male => 1,
            Sex::Unknown => 2,
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "F" => Ok(Sex::Female),
            "M" => Ok(Sex::Male),
            "U" => Ok(Sex::Unknown),
            other => Err(format!("expected one of F, M, U, got `{other}`")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: f64,
    pub sex: Sex,
}

impl Demographics {
    pub fn new(age: f64, sex: Sex) -> Result<Self> {
        if !age.is_finite() || age < 0.0 {
            return Err(Error::invalid(format!("age must be finite and >= 0, got {age}")));
        }
        Ok(Self { age, sex })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub visit_id: String,
    /// Day offset from a fixed epoch.
    pub time: i64,
    /// CCS category identifiers, sorted and free of duplicates.
    pub diagnoses: Vec<String>,
    /// `(item_id, value)` observations; an item may repeat within a visit.
    pub measurements: Vec<(String, f64)>,
}

impl Visit {
    pub fn new(
        visit_id: impl Into<String>,
        time: i64,
        diagnoses: impl IntoIterator<Item = String>,
        measurements: Vec<(String, f64)>,
    ) -> Self {
        let diagnoses: BTreeSet<String> = diagnoses.into_iter().collect();
        Self {
            visit_id: visit_id.into(),
            time,
            diagnoses: diagnoses.into_iter().collect(),
            measurements,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: Demographics,
    pub visits: Vec<Visit>,
    pub index_date: i64,
    pub label: bool,
}

impl PatientRecord {
    /// Builds a record, sorting visits by time and checking the record invariants.
    pub fn new(
        patient_id: impl Into<String>,
        demographics: Demographics,
        mut visits: Vec<Visit>,
        index_date: i64,
        label: bool,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if visits.is_empty() {
            return Err(Error::InvalidRecord {
                patient: patient_id,
                reason: "no visits".into(),
            });
        }
        visits.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.visit_id.cmp(&b.visit_id)));
        for pair in visits.windows(2) {
            if pair[0].time == pair[1].time {
                return Err(Error::InvalidRecord {
                    patient: patient_id,
                    reason: format!(
                        "visits `{}` and `{}` share day {}",
                        pair[0].visit_id, pair[1].visit_id, pair[0].time
                    ),
                });
            }
        }
        for v in &visits {
            if v.time > index_date {
                return Err(Error::FutureVisit {
                    patient: patient_id,
                    visit: v.visit_id.clone(),
                    time: v.time,
                    index_date,
                });
            }
            if let Some((item, value)) = v.measurements.iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::InvalidRecord {
                    patient: patient_id.clone(),
                    reason: format!("non-finite value {value} for item `{item}`"),
                });
            }
        }
        Ok(Self {
            patient_id,
            demographics,
            visits,
            index_date,
            label,
        })
    }
}

/// Global index assignment for diagnosis codes and measurement items.
///
/// Identifiers are ordered lexicographically so indices do not depend on the
/// order in which records were read.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    pub diagnosis_codes: Vec<String>,
    pub measurement_items: Vec<String>,
    diag_index: HashMap<String, usize>,
    meas_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_ids(
        diagnosis_codes: impl IntoIterator<Item = String>,
        measurement_items: impl IntoIterator<Item = String>,
    ) -> Self {
        let diagnosis_codes: Vec<String> = diagnosis_codes
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let measurement_items: Vec<String> = measurement_items
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let diag_index = diagnosis_codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        let meas_index = measurement_items
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self {
            diagnosis_codes,
            measurement_items,
            diag_index,
            meas_index,
        }
    }

    pub fn n_diag(&self) -> usize {
        self.diagnosis_codes.len()
    }

    pub fn n_meas(&self) -> usize {
        self.measurement_items.len()
    }

    pub fn diag(&self, code: &str) -> Option<usize> {
        self.diag_index.get(code).copied()
    }

    pub fn meas(&self, item: &str) -> Option<usize> {
        self.meas_index.get(item).copied()
    }
}

pub fn build_vocabulary(records: &[PatientRecord]) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let visits = records.iter().flat_map(|r| r.visits.iter());
    let diags = visits.clone().flat_map(|v| v.diagnoses.iter().cloned());
    let items = visits.flat_map(|v| v.measurements.iter().map(|(i, _)| i.clone()));
    Ok(Vocabulary::from_ids(diags, items))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl CohortSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Target `(train, val, test)` sizes: validation and test are rounded to the
/// nearest patient, the remainder goes to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = (0.16 * n as f64).round() as usize;
    let test = (0.20 * n as f64).round() as usize;
    (n - val - test, val, test)
}

/// Label-stratified 64/16/20 split. Each entry is `(patient_id, label)`.
pub fn split_cohort(entries: &[(String, bool)], seed: u64) -> Result<CohortSplit> {
    let n = entries.len();
    if n < 5 {
        return Err(Error::CohortTooSmall(n));
    }
    let mut seen = HashSet::with_capacity(n);
    for (id, _) in entries {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicatePatient(id.clone()));
        }
    }

    let (_, n_val, n_test) = split_sizes(n);
    let mut pos: Vec<&str> = entries.iter().filter(|e| e.1).map(|e| e.0.as_str()).collect();
    let mut neg: Vec<&str> = entries.iter().filter(|e| !e.1).map(|e| e.0.as_str()).collect();
    // Sorting first makes the split independent of input order.
    pos.sort_unstable();
    neg.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let rate = pos.len() as f64 / n as f64;
    let val_pos = ((n_val as f64 * rate).round() as usize).min(pos.len());
    let test_pos = ((n_test as f64 * rate).round() as usize).min(pos.len() - val_pos);
    let val_neg = (n_val - val_pos).min(neg.len());
    let test_neg = (n_test - test_pos).min(neg.len() - val_neg);

    let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut val_ids = owned(&pos[..val_pos]);
    val_ids.extend(owned(&neg[..val_neg]));
    let mut test_ids = owned(&pos[val_pos..val_pos + test_pos]);
    test_ids.extend(owned(&neg[val_neg..val_neg + test_neg]));
    let mut train_ids = owned(&pos[val_pos + test_pos..]);
    train_ids.extend(owned(&neg[val_neg + test_neg..]));

    train_ids.sort();
    val_ids.sort();
    test_ids.sort();
    Ok(CohortSplit {
        train_ids,
        val_ids,
        test_ids,
    })
}

/// Age normalization statistics, fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoStats {
    pub age_mean: f64,
    pub age_std: f64,
}

impl DemoStats {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let ages: Vec<f64> = records.into_iter().map(|r| r.demographics.age).collect();
        if ages.is_empty() {
            return Self {
                age_mean: 0.0,
                age_std: 1.0,
            };
        }
        let n = ages.len() as f64;
        let mean = ages.iter().sum::<f64>() / n;
        let var = ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            age_mean: mean,
            age_std: if std > 0.0 { std } else { 1.0 },
        }
    }
}

pub fn encode_demographics(d: &Demographics, age_mean: f64, age_std: f64) -> [f64; N_DEMO] {
    let mut out = [0.0; N_DEMO];
    out[0] = (d.age - age_mean) / age_std;
    out[1 + d.sex.slot()] = 1.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, codes: &[&str]) -> PatientRecord {
        let visit = Visit::new(
            "v1",
            0,
            codes.iter().map(|c| c.to_string()),
            Vec::new(),
        );
        PatientRecord::new(id, Demographics::new(50.0, Sex::Female).unwrap(), vec![visit], 10, false)
            .unwrap()
    }

    #[test]
    fn vocabulary_is_lexicographic() {
        let v = build_vocabulary(&[rec("p1", &["B"]), rec("p2", &["A"])]).unwrap();
        assert_eq!(v.diagnosis_codes, vec!["A", "B"]);
        assert_eq!(v.diag("A"), Some(0));
        assert_eq!(v.diag("B"), Some(1));
        assert_eq!(v.n_meas(), 0);
    }

    #[test]
    fn vocabulary_dedupes_shared_codes() {
        let recs = [rec("p1", &["A"]), rec("p2", &["A"]), rec("p3", &["A"])];
        let v = build_vocabulary(&recs).unwrap();
        assert_eq!(v.diagnosis_codes, vec!["A"]);
    }

    #[test]
    fn empty_cohort_is_rejected() {
        assert!(matches!(build_vocabulary(&[]), Err(Error::EmptyCohort)));
    }

    fn ids(n: usize) -> Vec<(String, bool)> {
        (0..n).map(|i| (format!("p{i:05}"), i % 3 == 0)).collect()
    }

    #[test]
    fn split_sizes_match_proportions() {
        let s = split_cohort(&ids(100), 7).unwrap();
        assert_eq!(s.sizes(), (64, 16, 20));
        let s = split_cohort(&ids(10), 7).unwrap();
        assert_eq!(s.sizes(), (6, 2, 2));
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(split_cohort(&ids(57), 3).unwrap(), split_cohort(&ids(57), 3).unwrap());
        assert_ne!(split_cohort(&ids(57), 3).unwrap(), split_cohort(&ids(57), 4).unwrap());
    }

    #[test]
    fn split_rejects_tiny_cohorts_and_duplicates() {
        assert!(matches!(split_cohort(&ids(4), 0), Err(Error::CohortTooSmall(4))));
        let mut dup = ids(6);
        dup[5].0 = dup[0].0.clone();
        assert!(matches!(split_cohort(&dup, 0), Err(Error::DuplicatePatient(_))));
    }

    #[test]
    fn demographics_layout() {
        let f = Demographics::new(40.0, Sex::Female).unwrap();
        assert_eq!(encode_demographics(&f, 40.0, 10.0), [0.0, 1.0, 0.0, 0.0]);
        let m = Demographics::new(50.0, Sex::Male).unwrap();
        assert_eq!(encode_demographics(&m, 40.0, 10.0), [1.0, 0.0, 1.0, 0.0]);
        let u = Demographics::new(40.0, Sex::Unknown).unwrap();
        assert_eq!(encode_demographics(&u, 40.0, 10.0)[3], 1.0);
    }

    #[test]
    fn record_rejects_future_visits_and_sorts() {
        let d = Demographics::new(30.0, Sex::Male).unwrap();
        let late = Visit::new("v9", 20, Vec::new(), Vec::new());
        assert!(matches!(
            PatientRecord::new("p", d.clone(), vec![late], 10, true),
            Err(Error::FutureVisit { .. })
        ));
        let a = Visit::new("b", 5, vec!["X".to_string()], Vec::new());
        let b = Visit::new("a", 1, vec!["Y".to_string()], Vec::new());
        let r = PatientRecord::new("p", d, vec![a, b], 10, true).unwrap();
        assert_eq!(r.visits[0].time, 1);
        assert!(Demographics::new(-1.0, Sex::Male).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn split_is_a_partition(n in 5usize..10_000, seed in any::<u64>(), pos_every in 2usize..9) {
                let entries: Vec<(String, bool)> =
                    (0..n).map(|i| (format!("id{i}"), i % pos_every == 0)).collect();
                let s = split_cohort(&entries, seed).unwrap();
                let (tr, va, te) = s.sizes();
                prop_assert_eq!(tr + va + te, n);
                let mut all: Vec<&String> =
                    s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids).collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), n);
                prop_assert!((tr as f64 - 0.64 * n as f64).abs() <= 1.0);
                prop_assert!((va as f64 - 0.16 * n as f64).abs() <= 1.0);
                prop_assert!((te as f64 - 0.20 * n as f64).abs() <= 1.0);
            }

            // Per-class rounding bounds the rate error by 0.5 / |split|, which is
            // under two points once the validation split holds 25 or more patients.
            #[test]
            fn split_preserves_positive_rate(n in 160usize..3000, seed in any::<u64>(), pos_every in 2usize..4) {
                let entries: Vec<(String, bool)> =
                    (0..n).map(|i| (format!("id{i}"), i % pos_every == 0)).collect();
                let cohort_rate = entries.iter().filter(|e| e.1).count() as f64 / n as f64;
                let labels: HashMap<&str, bool> = entries.iter().map(|(i, l)| (i.as_str(), *l)).collect();
                let s = split_cohort(&entries, seed).unwrap();
                for part in [&s.train_ids, &s.val_ids, &s.test_ids] {
                    let rate = part.iter().filter(|i| labels[i.as_str()]).count() as f64 / part.len() as f64;
                    prop_assert!((rate - cohort_rate).abs() <= 0.02, "rate {} vs {}", rate, cohort_rate);
                }
            }

            #[test]
            fn demographic_encoding_has_fixed_length(age in 0.0f64..120.0, s in 0u8..3) {
                let sex = [Sex::Female, Sex::Male, Sex::Unknown][s as usize];
                let d = Demographics::new(age, sex).unwrap();
                let e = encode_demographics(&d, 50.0, 15.0);
                prop_assert_eq!(e.len(), N_DEMO);
                prop_assert_eq!(e[1..].iter().sum::<f64>(), 1.0);
            }
        }
    }
}

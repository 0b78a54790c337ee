//! Synthetic cohorts with planted, controllable label signal.
//!
//! Every cohort shares the same skeleton: background diagnoses drawn from a
//! skewed code distribution, labs drawn around per-item means, and a generated
//! ontology plus mapping. Signals are layered on top and can be combined.
//!
//! Diagnosis code layout: codes `0..6` form the cluster used by
//! `diagnosis_cluster`, codes `6..16` the sibling group used by
//! `ontology_informative`, the rest are background. Reserved codes whose signal
//! is off fall back into the background pool. Lab item 0 carries
//! `lab_extreme`; the last lab item is rare so the prevalence filter has
//! something to drop.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::files::{write_cohort, write_mapping_rows, write_ontology, MAPPING_FILE, ONTOLOGY_FILE};
use crate::error::{Error, Result};
use crate::model::{Demographics, PatientRecord, Sex, Visit};
use crate::ontology::{ConceptMapping, Ontology, SourceKind};

const CLUSTER: std::ops::Range<usize> = 0..6;
const SIBLINGS: std::ops::Range<usize> = 6..16;
const RESERVED: usize = 16;
const GROUPS: usize = 6;
const PANELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalMode {
    DiagnosisCluster,
    LabExtreme,
    OntologyInformative,
}

impl SignalMode {
    pub fn name(self) -> &'static str {
        match self {
            SignalMode::DiagnosisCluster => "diagnosis_cluster",
            SignalMode::LabExtreme => "lab_extreme",
            SignalMode::OntologyInformative => "ontology_informative",
        }
    }
}

impl FromStr for SignalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnosis_cluster" => Ok(SignalMode::DiagnosisCluster),
            "lab_extreme" => Ok(SignalMode::LabExtreme),
            "ontology_informative" => Ok(SignalMode::OntologyInformative),
            other => Err(Error::invalid(format!("unknown signal mode `{other}`"))),
        }
    }
}

/// Parses `none` or a `+`/`,`-separated list such as
/// `diagnosis_cluster+lab_extreme`.
pub fn parse_signals(s: &str) -> Result<BTreeSet<SignalMode>> {
    let s = s.trim();
    if s == "none" {
        return Ok(BTreeSet::new());
    }
    s.split(['+', ','])
        .map(|p| p.trim().parse())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub positive_rate: f64,
    pub n_diag_codes: usize,
    pub n_meas_items: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    pub signals: BTreeSet<SignalMode>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            positive_rate: 0.3,
            n_diag_codes: 60,
            n_meas_items: 12,
            min_visits: 4,
            max_visits: 10,
            signals: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 5 {
            return Err(Error::invalid(format!("n_patients must be >= 5, got {}", self.n_patients)));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::invalid(format!(
                "positive_rate must be in (0, 1), got {}",
                self.positive_rate
            )));
        }
        if self.n_diag_codes < RESERVED + 4 {
            return Err(Error::invalid(format!("n_diag_codes must be >= {}", RESERVED + 4)));
        }
        if self.n_meas_items < 2 {
            return Err(Error::invalid("n_meas_items must be >= 2"));
        }
        if self.min_visits < 4 || self.min_visits > self.max_visits {
            return Err(Error::invalid(format!(
                "visit range {}..={} must be non-empty and start at 4 or more",
                self.min_visits, self.max_visits
            )));
        }
        Ok(())
    }

    fn has(&self, s: SignalMode) -> bool {
        self.signals.contains(&s)
    }

    pub fn diag_code(i: usize) -> String {
        format!("D{i:03}")
    }

    pub fn meas_item(j: usize) -> String {
        format!("LAB{j:02}")
    }

    /// Codes planted by `diagnosis_cluster`.
    pub fn cluster_codes() -> Vec<String> {
        CLUSTER.map(Self::diag_code).collect()
    }

    /// Codes planted by `ontology_informative`.
    pub fn sibling_codes() -> Vec<String> {
        SIBLINGS.map(Self::diag_code).collect()
    }

    /// The lab planted by `lab_extreme`.
    pub fn extreme_item() -> String {
        Self::meas_item(0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub records: Vec<PatientRecord>,
    pub ontology: Ontology,
    pub mapping: ConceptMapping,
    /// Raw mapping rows, including multi-candidate measurement rows.
    pub mapping_rows: Vec<(SourceKind, String, String)>,
}

impl SyntheticCohort {
    /// Writes the three cohort CSVs plus `ontology.csv` and `mapping.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_cohort(dir, &self.records)?;
        write_ontology(&dir.join(ONTOLOGY_FILE), &self.ontology)?;
        write_mapping_rows(&dir.join(MAPPING_FILE), &self.mapping_rows)
    }
}

/// Ontology: diagnosis codes hang off `root -> DG{g} -> DS{i} -> DC{i}`, except
/// the sibling group: consecutive pairs of codes share a parent `DY{k}` under
/// `root -> DX1 -> DX2 -> DX3`. Lab items map
/// to `root -> LABS -> LP{p} -> LC{j}`; each item is also mapped to a more
/// specific child `LC{j}.v` that redundancy removal must discard.
fn build_knowledge(cfg: &SynthConfig) -> Result<(Ontology, Vec<(SourceKind, String, String)>)> {
    let e = |c: String, p: &str| (c, p.to_string());
    let mut edges = vec![
        e("DX1".into(), "root"),
        e("DX2".into(), "DX1"),
        e("DX3".into(), "DX2"),
        e("LABS".into(), "root"),
    ];
    for g in 0..GROUPS {
        edges.push(e(format!("DG{g}"), "root"));
    }
    for p in 0..PANELS {
        edges.push(e(format!("LP{p}"), "LABS"));
    }
    let mut rows = Vec::new();
    for i in 0..cfg.n_diag_codes {
        let concept = format!("DC{i}");
        if SIBLINGS.contains(&i) {
            let parent = format!("DY{}", (i - SIBLINGS.start) / 2);
            if (i - SIBLINGS.start) % 2 == 0 {
                edges.push(e(parent.clone(), "DX3"));
            }
            edges.push(e(concept.clone(), &parent));
        } else {
            let sub = format!("DS{i}");
            edges.push(e(sub.clone(), &format!("DG{}", i % GROUPS)));
            edges.push(e(concept.clone(), &sub));
            // A few codes map to two concepts, exercising the mean over pairs.
            if i >= RESERVED && i % 7 == 0 {
                rows.push((SourceKind::Ccs, SynthConfig::diag_code(i), sub));
            }
        }
        rows.push((SourceKind::Ccs, SynthConfig::diag_code(i), concept));
    }
    for j in 0..cfg.n_meas_items {
        let concept = format!("LC{j}");
        let child = format!("{concept}.v");
        edges.push(e(concept.clone(), &format!("LP{}", j % PANELS)));
        edges.push(e(child.clone(), &concept));
        rows.push((SourceKind::Meas, SynthConfig::meas_item(j), concept));
        rows.push((SourceKind::Meas, SynthConfig::meas_item(j), child));
    }
    Ok((Ontology::from_edges(&edges)?, rows))
}

struct LabModel {
    mean: Vec<f64>,
    sd: Vec<f64>,
    prob: Vec<f64>,
}

fn patient_rng(seed: u64, patient: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patient as u64 + 1);
    rng
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let (ontology, mapping_rows) = build_knowledge(cfg)?;
    let mapping = ConceptMapping::from_rows(&ontology, &mapping_rows)?;

    let mut global = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut background: Vec<usize> = (0..cfg.n_diag_codes)
        .filter(|&i| {
            !(CLUSTER.contains(&i) && cfg.has(SignalMode::DiagnosisCluster)
                || SIBLINGS.contains(&i) && cfg.has(SignalMode::OntologyInformative))
        })
        .collect();
    background.shuffle(&mut global);
    let weights: Vec<f64> = (0..background.len()).map(|r| 1.0 / (1.0 + r as f64).powf(0.8)).collect();
    let code_dist = WeightedIndex::new(&weights).expect("positive weights");

    let n_items = cfg.n_meas_items;
    let mut labs = LabModel {
        mean: Vec::with_capacity(n_items),
        sd: Vec::with_capacity(n_items),
        prob: Vec::with_capacity(n_items),
    };
    for j in 0..n_items {
        let mean = global.gen_range(5.0..100.0);
        labs.mean.push(mean);
        labs.sd.push(0.15 * mean);
        labs.prob.push(if j == n_items - 1 { 0.01 } else { global.gen_range(0.4..0.95) });
    }

    let records = (0..cfg.n_patients)
        .map(|p| generate_patient(cfg, p, &background, &code_dist, &labs))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCohort {
        records,
        ontology,
        mapping,
        mapping_rows,
    })
}

fn extreme_value(rng: &mut ChaCha8Rng, labs: &LabModel) -> f64 {
    let z: f64 = Normal::new(0.0, 0.5).expect("valid").sample(rng);
    round3(labs.mean[0] + labs.sd[0] * (2.5 + z.abs()))
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn generate_patient(
    cfg: &SynthConfig,
    p: usize,
    background: &[usize],
    code_dist: &WeightedIndex<f64>,
    labs: &LabModel,
) -> Result<PatientRecord> {
    let mut rng = patient_rng(cfg.seed, p);
    let label = rng.gen_bool(cfg.positive_rate);
    let age = rng.gen_range(30..=85) as f64;
    let sex = match rng.gen_range(0..50) {
        0 => Sex::Unknown,
        k if k % 2 == 0 => Sex::Female,
        _ => Sex::Male,
    };
    let n = rng.gen_range(cfg.min_visits..=cfg.max_visits);

    let mut times = Vec::with_capacity(n);
    let mut t: i64 = rng.gen_range(0..=365);
    for _ in 0..n {
        times.push(t);
        t += rng.gen_range(14..=240);
    }
    let index_date = times[n - 1] + 30;

    let mut diags: Vec<BTreeSet<usize>> = (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=3);
            let mut set = BTreeSet::new();
            while set.len() < k {
                set.insert(background[code_dist.sample(&mut rng)]);
            }
            set
        })
        .collect();
    let mut meas: Vec<Vec<(String, f64)>> = (0..n)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..labs.mean.len() {
                if rng.gen_bool(labs.prob[j]) {
                    let v: f64 = Normal::new(labs.mean[j], labs.sd[j]).expect("valid").sample(&mut rng);
                    row.push((SynthConfig::meas_item(j), round3(v)));
                }
            }
            row
        })
        .collect();

    let cluster = |rng: &mut ChaCha8Rng| rng.gen_range(CLUSTER);
    if cfg.has(SignalMode::DiagnosisCluster) {
        for d in diags.iter_mut() {
            if rng.gen_bool(0.03) {
                d.insert(cluster(&mut rng));
            }
        }
        if label {
            for v in n - 2..n {
                if rng.gen_bool(0.8) {
                    diags[v].insert(cluster(&mut rng));
                }
            }
        } else {
            for _ in 0..2 {
                if rng.gen_bool(0.4) {
                    let v = rng.gen_range(0..n - 2);
                    diags[v].insert(cluster(&mut rng));
                }
            }
        }
    }

    if cfg.has(SignalMode::LabExtreme) {
        let item = SynthConfig::extreme_item();
        let mut plant = |visit: usize, rng: &mut ChaCha8Rng| {
            meas[visit].retain(|(i, _)| *i != item);
            meas[visit].insert(0, (item.clone(), extreme_value(rng, labs)));
        };
        if label {
            plant(n - 1, &mut rng);
        } else if rng.gen_bool(0.35) {
            let v = rng.gen_range(0..n - 2);
            plant(v, &mut rng);
        }
    }

    if cfg.has(SignalMode::OntologyInformative) {
        // Positives and hard negatives both carry two sibling-group codes at
        // recent visits at least two apart, out of reach of two GCN layers.
        // Only positives pick both from the same parent, so each code alone
        // says nothing. Decoys carry a true pair at early visits.
        let w = n.min(5);
        let pair_in = |lo: usize, hi: usize, rng: &mut ChaCha8Rng| loop {
            let (a, b) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
            if a + 2 <= b {
                return (a, b);
            }
        };
        let groups = SIBLINGS.len() / 2;
        let same = |rng: &mut ChaCha8Rng| {
            let g = SIBLINGS.start + 2 * rng.gen_range(0..groups);
            (g, g + 1)
        };
        let u: f64 = rng.gen();
        let codes = if label {
            Some((pair_in(n - w, n, &mut rng), same(&mut rng)))
        } else if u < 0.2 && n >= w + 3 {
            Some((pair_in(0, n - w, &mut rng), same(&mut rng)))
        } else if u < 0.8 {
            let g: Vec<usize> = (0..groups).collect::<Vec<_>>().choose_multiple(&mut rng, 2).copied().collect();
            let a = SIBLINGS.start + 2 * g[0] + rng.gen_range(0..2);
            let b = SIBLINGS.start + 2 * g[1] + rng.gen_range(0..2);
            Some((pair_in(n - w, n, &mut rng), (a, b)))
        } else {
            None
        };
        if let Some(((va, vb), (a, b))) = codes {
            let (a, b) = if rng.gen_bool(0.5) { (b, a) } else { (a, b) };
            diags[va].insert(a);
            diags[vb].insert(b);
        }
    }

    let visits = (0..n)
        .map(|v| {
            Visit::new(
                format!("V{v}"),
                times[v],
                diags[v].iter().map(|&i| SynthConfig::diag_code(i)),
                std::mem::take(&mut meas[v]),
            )
        })
        .collect();
    PatientRecord::new(
        format!("P{p:05}"),
        Demographics::new(age, sex)?,
        visits,
        index_date,
        label,
    )
}

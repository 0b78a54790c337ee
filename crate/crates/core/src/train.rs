//! Preprocessing, training with validation-based model selection, the
//! logistic baseline, and the ablation harness.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::rc::Rc;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{one_cycle_lr, Adam, AdamConfig, ParamStore, SparseMatrix, Tape, Tensor};
use crate::cooccur::{cooccurrence_edges, mine, LiftTable, TransactionSet};
use crate::discretize::{assign_bin, fit_bins, BinSpec};
use crate::error::{Error, Result};
use crate::graph::{build_diagnosis_graph, build_measurement_graph, EdgeKind, Modality, PatientGraph};
use crate::ingest::{prevalent_items, retain_items, RunConfig};
use crate::metrics::{auprc, auroc};
use crate::model::{build_vocabulary, derive_seed, split_cohort, CohortSplit, DemoStats, PatientRecord, Vocabulary};
use crate::network::{EncodedGraph, Network, NetworkConfig, PatientInput, Prediction};
use crate::ontology::{ccs_distance, meas_distance, plan_augmentation, AugmentationPlan, ConceptMapping, Ontology};

// Sub-stream identifiers passed to `derive_seed`.
const STREAM_INIT: u64 = 1;
const STREAM_RANDOM_EDGES: u64 = 2;
const STREAM_SHUFFLE: u64 = 1 << 20;
const STREAM_DROPOUT: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct Knowledge {
    pub ontology: Ontology,
    pub mapping: ConceptMapping,
}

/// Everything fitted on the training split before graphs are built.
#[derive(Debug, Clone)]
pub struct Preprocessing {
    pub split: CohortSplit,
    /// Records after the lab-prevalence filter, in input order.
    pub records: Vec<PatientRecord>,
    pub vocab: Vocabulary,
    pub demo_stats: DemoStats,
    pub bins: BinSpec,
    /// Items kept by the prevalence filter (`None` when the filter is off).
    pub kept_items: Option<BTreeSet<String>>,
}

impl Preprocessing {
    pub fn train_records(&self) -> Vec<&PatientRecord> {
        let ids: BTreeSet<&str> = self.split.train_ids.iter().map(String::as_str).collect();
        self.records.iter().filter(|r| ids.contains(r.patient_id.as_str())).collect()
    }
}

pub fn split_for(records: &[PatientRecord], seed: u64) -> Result<CohortSplit> {
    let entries: Vec<(String, bool)> = records.iter().map(|r| (r.patient_id.clone(), r.label)).collect();
    split_cohort(&entries, seed)
}

/// Fits the lab filter, demographic statistics and bin boundaries on the
/// training split only. The vocabulary indexes identifiers seen anywhere.
pub fn preprocess(records: &[PatientRecord], cfg: &RunConfig, split: CohortSplit) -> Result<Preprocessing> {
    let train_ids: BTreeSet<&str> = split.train_ids.iter().map(String::as_str).collect();
    let in_train = |r: &&PatientRecord| train_ids.contains(r.patient_id.as_str());
    let mut records = records.to_vec();
    let kept_items = if cfg.lab_filter {
        let keep = prevalent_items(records.iter().filter(in_train), cfg.lab_min_prevalence);
        let removed = retain_items(&mut records, &keep);
        if removed > 0 {
            log::info!("lab filter kept {} items, removed {removed} observations", keep.len());
        }
        Some(keep)
    } else {
        None
    };
    let vocab = build_vocabulary(&records)?;
    let demo_stats = DemoStats::fit(records.iter().filter(in_train));
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(in_train) {
        for v in &r.visits {
            for (item, x) in &v.measurements {
                values.entry(item.clone()).or_default().push(*x);
            }
        }
    }
    let bins = fit_bins(&values, cfg.bins)?;
    Ok(Preprocessing {
        split,
        records,
        vocab,
        demo_stats,
        bins,
        kept_items,
    })
}

/// Knowledge and co-occurrence edges chosen for one modality.
#[derive(Debug, Clone)]
pub struct ModalityEdges {
    pub plan: Option<AugmentationPlan>,
    /// Entity pairs linked by ontology edges (random pairs when requested).
    pub ontology_pairs: Vec<(usize, usize)>,
    pub lift: Option<LiftTable>,
    pub cooccur_pairs: Vec<(usize, usize)>,
}

/// `k` distinct unordered pairs drawn uniformly from `n` entities, sorted.
pub fn random_pairs(n: usize, k: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let k = k.min(total);
    // offsets[i] = number of pairs whose first entity is below i.
    let offsets: Vec<usize> = (0..n).map(|i| i * n - i * (i + 1) / 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, total, k)
        .into_iter()
        .map(|idx| {
            let i = offsets.partition_point(|&o| o <= idx) - 1;
            (i, i + 1 + idx - offsets[i])
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

pub fn fit_edges(
    pre: &Preprocessing,
    knowledge: Option<&Knowledge>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<BTreeMap<Modality, ModalityEdges>> {
    let train = pre.train_records();
    let mut out = BTreeMap::new();
    for &m in &cfg.modalities {
        let (entities, percent) = match m {
            Modality::Diagnosis => (&pre.vocab.diagnosis_codes, cfg.diag_percent),
            Modality::Measurement => (&pre.vocab.measurement_items, cfg.meas_percent),
        };
        let plan = match knowledge {
            Some(k) if percent > 0.0 => {
                let mode = cfg.metric_mode;
                let dist = |a: usize, b: usize| match m {
                    Modality::Diagnosis => ccs_distance(&k.ontology, &k.mapping, &entities[a], &entities[b], mode),
                    Modality::Measurement => meas_distance(&k.ontology, &k.mapping, &entities[a], &entities[b], mode),
                };
                Some(plan_augmentation(m, entities, dist, percent, mode, cfg.pair_cap)?)
            }
            None if percent > 0.0 => {
                log::warn!("no ontology supplied; {m} graphs get no ontology edges");
                None
            }
            _ => None,
        };
        let mut ontology_pairs = plan.as_ref().map(|p| p.selected_pairs()).unwrap_or_default();
        if cfg.random_edges {
            let stream = STREAM_RANDOM_EDGES + 16 * m as u64;
            ontology_pairs = random_pairs(entities.len(), ontology_pairs.len(), derive_seed(seed, stream));
        }
        let lift = if cfg.cooccurrence {
            let ts = match m {
                Modality::Diagnosis => TransactionSet::diagnoses(train.iter().copied(), &pre.vocab),
                Modality::Measurement => TransactionSet::measurements(train.iter().copied(), &pre.vocab),
            };
            if ts.transactions.is_empty() {
                None
            } else {
                Some(mine(&ts, cfg.min_pair_count)?)
            }
        } else {
            None
        };
        let cooccur_pairs = lift.as_ref().map(cooccurrence_edges).unwrap_or_default();
        out.insert(
            m,
            ModalityEdges {
                plan,
                ontology_pairs,
                lift,
                cooccur_pairs,
            },
        );
    }
    Ok(out)
}

pub fn build_graph(
    record: &PatientRecord,
    modality: Modality,
    pre: &Preprocessing,
    edges: Option<&ModalityEdges>,
) -> PatientGraph {
    let mut g = match modality {
        Modality::Diagnosis => build_diagnosis_graph(record, &pre.vocab, &pre.demo_stats),
        Modality::Measurement => build_measurement_graph(record, &pre.vocab, &pre.bins, &pre.demo_stats),
    };
    if let Some(e) = edges {
        g.link_entities(&e.ontology_pairs, EdgeKind::Ontology);
        g.link_entities(&e.cooccur_pairs, EdgeKind::Cooccurrence);
    }
    g
}

/// Preprocessing, fitted edges and every patient's graphs for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pre: Preprocessing,
    pub edges: BTreeMap<Modality, ModalityEdges>,
    /// Per patient (input order), one graph per configured modality.
    pub graphs: Vec<Vec<PatientGraph>>,
}

pub fn prepare(records: &[PatientRecord], knowledge: Option<&Knowledge>, cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    prepare_with_split(records, knowledge, cfg, split_for(records, seed)?, seed)
}

pub fn prepare_with_split(
    records: &[PatientRecord],
    knowledge: Option<&Knowledge>,
    cfg: &RunConfig,
    split: CohortSplit,
    seed: u64,
) -> Result<Prepared> {
    cfg.validate()?;
    let pre = preprocess(records, cfg, split)?;
    let edges = fit_edges(&pre, knowledge, cfg, seed)?;
    let graphs = pre
        .records
        .iter()
        .map(|r| {
            cfg.modalities
                .iter()
                .map(|&m| build_graph(r, m, &pre, edges.get(&m)))
                .collect()
        })
        .collect();
    Ok(Prepared { pre, edges, graphs })
}

pub fn network_config(cfg: &RunConfig) -> NetworkConfig {
    NetworkConfig {
        hidden_dim: cfg.hidden_dim,
        time_dim: cfg.time_dim,
        gcn_layers: cfg.gcn_layers,
        dropout: cfg.dropout,
        time_aware: cfg.time_aware,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub auroc: f64,
    pub auprc: f64,
    /// Epoch whose parameters were restored (0 = initialization).
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_auprc: Vec<f64>,
    /// Largest deviation from 1 of any attention or fusion weight sum.
    pub max_simplex_error: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub network: Network,
    /// Test-split predictions in patient-id order.
    pub test_predictions: Vec<(String, Prediction)>,
}

struct SplitInputs {
    train: Vec<PatientInput>,
    val: Vec<PatientInput>,
    test: Vec<PatientInput>,
}

fn split_inputs(prepared: &Prepared) -> Result<SplitInputs> {
    let mut by_id: BTreeMap<&str, (bool, &Vec<PatientGraph>)> = BTreeMap::new();
    for (r, g) in prepared.pre.records.iter().zip(&prepared.graphs) {
        by_id.insert(&r.patient_id, (r.label, g));
    }
    let inputs = |ids: &[String]| -> Result<Vec<PatientInput>> {
        ids.iter()
            .map(|id| {
                let (label, graphs) = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::invalid(format!("split names unknown patient `{id}`")))?;
                Ok(PatientInput {
                    patient_id: id.clone(),
                    label: *label,
                    graphs: graphs.iter().map(EncodedGraph::new).collect::<Result<_>>()?,
                })
            })
            .collect()
    };
    let s = &prepared.pre.split;
    Ok(SplitInputs {
        train: inputs(&s.train_ids)?,
        val: inputs(&s.val_ids)?,
        test: inputs(&s.test_ids)?,
    })
}

fn labels(inputs: &[PatientInput]) -> Vec<bool> {
    inputs.iter().map(|p| p.label).collect()
}

fn predict_all(net: &Network, inputs: &[PatientInput], simplex: &Cell<f64>) -> Result<Vec<Prediction>> {
    inputs
        .iter()
        .map(|p| {
            let pred = net.predict(p)?;
            simplex.set(simplex.get().max(pred.simplex_error()));
            Ok(pred)
        })
        .collect()
}

/// Shared epoch loop: seeded shuffling, mean-loss mini-batches, Adam with the
/// one-cycle schedule, and selection of the epoch with the highest validation
/// AUPRC (earliest on ties).
fn fit<S>(
    params: &mut ParamStore,
    n_train: usize,
    cfg: &RunConfig,
    seed: u64,
    mut batch_step: impl FnMut(&ParamStore, &[usize], u64) -> Result<(f64, Vec<Tensor>)>,
    mut validate: impl FnMut(&ParamStore) -> Result<(f64, S)>,
) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let mut adam = Adam::new(
        params,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let steps_per_epoch = n_train.div_ceil(cfg.batch);
    let total = cfg.epochs * steps_per_epoch;
    let mut step = 0;
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut val_scores = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE + epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let (loss, grads) = batch_step(params, batch, derive_seed(seed, STREAM_DROPOUT + step as u64))?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}, step {step}")));
            }
            adam.step(params, &grads, one_cycle_lr(step, total, cfg.lr))?;
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        losses.push(epoch_loss / n_train as f64);
        let (score, _) = validate(params)?;
        val_scores.push(score);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let epoch = match best {
        Some((_, epoch, saved)) => {
            params.load_from(&saved)?;
            epoch
        }
        None => 0,
    };
    Ok((epoch, losses, val_scores))
}

/// Trains one seed on prepared graphs and evaluates the restored best epoch
/// on the test split.
pub fn train_one(prepared: &Prepared, cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let inputs = split_inputs(prepared)?;
    if inputs.train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut net = Network::new(network_config(cfg), &input_dims(cfg, &inputs.train[0]), derive_seed(seed, STREAM_INIT))?;
    let val_labels = labels(&inputs.val);
    let simplex = Cell::new(0.0f64);
    let train_mode = cfg.dropout > 0.0;

    let template = net.clone();
    let (epoch, train_loss, val_auprc) = fit(
        &mut net.params,
        inputs.train.len(),
        cfg,
        seed,
        |params, batch, s| {
            let model = with_params(&template, params);
            let batch: Vec<&PatientInput> = batch.iter().map(|&i| &inputs.train[i]).collect();
            let out = model.loss_and_gradients(&batch, s, train_mode)?;
            simplex.set(simplex.get().max(out.simplex_error));
            Ok((out.loss, out.gradients))
        },
        |params| {
            let model = with_params(&template, params);
            let preds = predict_all(&model, &inputs.val, &simplex)?;
            let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
            Ok((auprc(&scores, &val_labels)?, ()))
        },
    )?;

    let preds = predict_all(&net, &inputs.test, &simplex)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let test_labels = labels(&inputs.test);
    let result = SeedResult {
        seed,
        auroc: auroc(&scores, &test_labels)?,
        auprc: auprc(&scores, &test_labels)?,
        epoch,
        train_loss,
        val_auprc,
        max_simplex_error: simplex.get(),
    };
    let test_predictions = inputs.test.iter().map(|p| p.patient_id.clone()).zip(preds).collect();
    Ok(SeedRun {
        result,
        network: net,
        test_predictions,
    })
}

fn input_dims(cfg: &RunConfig, sample: &PatientInput) -> Vec<(Modality, usize)> {
    cfg.modalities
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, sample.graphs[k].feature_dim()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub auroc: f64,
    pub auprc: f64,
    pub test_predictions: Vec<(String, Prediction)>,
}

/// Scores the test split of `prepared` with saved parameters.
pub fn evaluate(prepared: &Prepared, cfg: &RunConfig, params: &ParamStore) -> Result<Evaluation> {
    cfg.validate()?;
    let inputs = split_inputs(prepared)?;
    let Some(sample) = inputs.train.first().or(inputs.test.first()) else {
        return Err(Error::EmptyCohort);
    };
    let net = Network::new(network_config(cfg), &input_dims(cfg, sample), 0)?.with_params(params)?;
    let preds = predict_all(&net, &inputs.test, &Cell::new(0.0))?;
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let test_labels = labels(&inputs.test);
    Ok(Evaluation {
        auroc: auroc(&scores, &test_labels)?,
        auprc: auprc(&scores, &test_labels)?,
        test_predictions: inputs.test.iter().map(|p| p.patient_id.clone()).zip(preds).collect(),
    })
}

fn with_params(template: &Network, params: &ParamStore) -> Network {
    Network {
        config: template.config.clone(),
        modalities: template.modalities.clone(),
        params: params.clone(),
    }
}

/// Runs `seeds` end to end (preparation included), in parallel across at most
/// `cfg.threads` workers. Results come back in seed order and do not depend
/// on the thread count.
pub fn run_seeds<T: Send>(
    cfg: &RunConfig,
    seeds: &[u64],
    job: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if cfg.threads <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| base + k).collect()
}

/// Prepares and trains every seed; returns per-seed results in seed order.
pub fn train_seeds(
    records: &[PatientRecord],
    knowledge: Option<&Knowledge>,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<SeedResult>> {
    run_seeds(cfg, seeds, |seed| {
        let prepared = prepare(records, knowledge, cfg, seed)?;
        Ok(train_one(&prepared, cfg, seed)?.result)
    })
}

/// Bag-of-codes plus one-hot bins of each item's mean value, per patient.
fn baseline_features(r: &PatientRecord, pre: &Preprocessing) -> Vec<(usize, f64)> {
    let n_diag = pre.vocab.n_diag();
    let bins = pre.bins.bins();
    let mut codes = BTreeSet::new();
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for v in &r.visits {
        codes.extend(v.diagnoses.iter().filter_map(|c| pre.vocab.diag(c)));
        for (item, x) in &v.measurements {
            let e = sums.entry(item).or_default();
            e.0 += x;
            e.1 += 1;
        }
    }
    let mut row: Vec<(usize, f64)> = codes.into_iter().map(|c| (c, 1.0)).collect();
    for (item, (sum, n)) in sums {
        if let (Some(idx), Ok(bin)) = (pre.vocab.meas(item), assign_bin(item, sum / n as f64, &pre.bins)) {
            row.push((n_diag + idx * bins + bin, 1.0));
        }
    }
    row
}

/// Logistic regression on bag-of-codes and mean-binned labs, trained with
/// the same split, optimizer, schedule and epoch selection as the network.
pub fn baseline_logistic(records: &[PatientRecord], cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    let pre = preprocess(records, cfg, split_for(records, seed)?)?;
    let dim = pre.vocab.n_diag() + pre.vocab.n_meas() * pre.bins.bins();
    let by_id: BTreeMap<&str, &PatientRecord> = pre.records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let rows = |ids: &[String]| -> (Vec<Vec<(usize, f64)>>, Vec<bool>) {
        ids.iter()
            .map(|id| {
                let r = by_id[id.as_str()];
                (baseline_features(r, &pre), r.label)
            })
            .unzip()
    };
    let (train_x, train_y) = rows(&pre.split.train_ids);
    let (val_x, val_y) = rows(&pre.split.val_ids);
    let (test_x, test_y) = rows(&pre.split.test_ids);
    if train_x.is_empty() {
        return Err(Error::invalid("empty training split"));
    }

    let mut params = ParamStore::new();
    params.insert("w", Tensor::zeros(dim.max(1), 1))?;
    params.insert("b", Tensor::zeros(1, 1))?;

    let score = |params: &ParamStore, x: &[Vec<(usize, f64)>]| -> Result<Vec<f64>> {
        let tape = Tape::new();
        let w = tape.constant(params.by_id(0).clone());
        let b = tape.constant(params.by_id(1).clone());
        let m = Rc::new(SparseMatrix::from_rows(dim.max(1), x.to_vec()));
        let p = tape.sigmoid(tape.add(tape.spmm(&m, w)?, b)?);
        Ok(tape.value(p).into_data())
    };

    let (epoch, train_loss, val_auprc) = fit(
        &mut params,
        train_x.len(),
        cfg,
        seed,
        |params, batch, _| {
            let tape = Tape::new();
            let w = tape.param(params.by_id(0).clone());
            let b = tape.param(params.by_id(1).clone());
            let m = Rc::new(SparseMatrix::from_rows(
                dim.max(1),
                batch.iter().map(|&i| train_x[i].clone()).collect(),
            ));
            let y: Vec<f64> = batch.iter().map(|&i| if train_y[i] { 1.0 } else { 0.0 }).collect();
            let p = tape.sigmoid(tape.add(tape.spmm(&m, w)?, b)?);
            let loss = tape.bce_loss(p, &y)?;
            let value = tape.scalar(loss);
            let mut g = tape.backward(loss);
            let gw = g.take(w).unwrap_or_else(|| Tensor::zeros(dim.max(1), 1));
            let gb = g.take(b).unwrap_or_else(|| Tensor::zeros(1, 1));
            Ok((value, vec![gw, gb]))
        },
        |params| Ok((auprc(&score(params, &val_x)?, &val_y)?, ())),
    )?;
    let s = score(&params, &test_x)?;
    Ok(SeedResult {
        seed,
        auroc: auroc(&s, &test_y)?,
        auprc: auprc(&s, &test_y)?,
        epoch,
        train_loss,
        val_auprc,
        max_simplex_error: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Bins,
    DiagPercent,
    MeasPercent,
    Cooccurrence,
    TimeAware,
    RandomVsOntology,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Bins => "bins",
            AblationAxis::DiagPercent => "diag_percent",
            AblationAxis::MeasPercent => "meas_percent",
            AblationAxis::Cooccurrence => "cooccur_on_off",
            AblationAxis::TimeAware => "time_aware_on_off",
            AblationAxis::RandomVsOntology => "random_vs_ontology",
        }
    }

    /// Settings used when none are given on the command line.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::Bins => &["1", "2", "4", "10", "25"],
            AblationAxis::DiagPercent | AblationAxis::MeasPercent => &["0", "1", "2", "3", "4", "5", "10"],
            AblationAxis::Cooccurrence | AblationAxis::TimeAware => &["on", "off"],
            AblationAxis::RandomVsOntology => &["ontology", "random"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// The base configuration with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let switch = |key: &str, on: &str, off: &str| -> Result<bool> {
            if value == on {
                Ok(true)
            } else if value == off {
                Ok(false)
            } else {
                Err(Error::Config {
                    key: key.to_string(),
                    message: format!("expected `{on}` or `{off}`, got `{value}`"),
                })
            }
        };
        match self {
            AblationAxis::Bins => cfg.set("bins", value)?,
            AblationAxis::DiagPercent => cfg.set("diag_percent", value)?,
            AblationAxis::MeasPercent => cfg.set("meas_percent", value)?,
            AblationAxis::Cooccurrence => cfg.cooccurrence = switch("cooccurrence", "on", "off")?,
            AblationAxis::TimeAware => cfg.time_aware = switch("time_aware", "on", "off")?,
            AblationAxis::RandomVsOntology => cfg.random_edges = switch("random_edges", "random", "ontology")?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bins" => AblationAxis::Bins,
            "diag_percent" => AblationAxis::DiagPercent,
            "meas_percent" => AblationAxis::MeasPercent,
            "cooccur_on_off" | "cooccurrence" => AblationAxis::Cooccurrence,
            "time_aware_on_off" | "time_aware" => AblationAxis::TimeAware,
            "random_vs_ontology" => AblationAxis::RandomVsOntology,
            other => return Err(Error::invalid(format!("unknown ablation axis `{other}`"))),
        })
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResults {
    pub setting: String,
    pub runs: Vec<SeedResult>,
}

/// Runs every setting on the same seeds, so arms are paired by split and
/// initialization.
pub fn ablate(
    records: &[PatientRecord],
    knowledge: Option<&Knowledge>,
    base: &RunConfig,
    axis: AblationAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SettingResults>> {
    values
        .iter()
        .map(|v| {
            let cfg = axis.apply(base, v)?;
            log::info!("ablation {axis} = {v}");
            Ok(SettingResults {
                setting: format!("{}={v}", axis.name()),
                runs: train_seeds(records, knowledge, &cfg, seeds)?,
            })
        })
        .collect()
}

pub fn write_results_csv<W: Write>(out: W, settings: &[SettingResults]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting", "seed", "auroc", "auprc", "epoch"])?;
    for s in settings {
        for r in &s.runs {
            w.write_record([
                s.setting.as_str(),
                &r.seed.to_string(),
                &r.auroc.to_string(),
                &r.auprc.to_string(),
                &r.epoch.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: String,
    pub runs: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auroc_median: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auprc_median: f64,
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one run).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

pub fn summarize(settings: &[SettingResults]) -> Vec<SettingSummary> {
    settings
        .iter()
        .map(|s| {
            let roc: Vec<f64> = s.runs.iter().map(|r| r.auroc).collect();
            let pr: Vec<f64> = s.runs.iter().map(|r| r.auprc).collect();
            let (auroc_mean, auroc_std) = mean_std(&roc);
            let (auprc_mean, auprc_std) = mean_std(&pr);
            SettingSummary {
                setting: s.setting.clone(),
                runs: s.runs.len(),
                auroc_mean,
                auroc_std,
                auroc_median: median(&roc),
                auprc_mean,
                auprc_std,
                auprc_median: median(&pr),
            }
        })
        .collect()
}

pub fn write_summary_json<W: Write>(out: W, settings: &[SettingResults]) -> Result<()> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &summarize(settings))?;
    out.write_all(b"\n")?;
    Ok(())
}

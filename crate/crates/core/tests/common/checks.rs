use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use katgnn::autodiff::{Tape, Tensor};
use katgnn::discretize::fit_bins;
use katgnn::graph::{build_diagnosis_graph, build_measurement_graph, EdgeKind, Modality, NodeKind, PatientGraph};
use katgnn::ingest::{generate_synthetic, parse_signals, RunConfig, SynthConfig};
use katgnn::model::{DemoStats, PatientRecord, Visit, Vocabulary};
use katgnn::network::{
    fuse_and_predict, gcn_forward, modality_forward, normalize_adjacency, normalized_adjacency, temporal_embed,
    EncodedGraph, ModalityVars, Network, NetworkConfig,
};
use katgnn::train::{prepare, prepare_with_split, split_for, train_one, Knowledge, Prepared};

use super::random_cohort;

fn stats() -> DemoStats {
    DemoStats {
        age_mean: 55.0,
        age_std: 12.0,
    }
}

/// Random diagnosis graphs with at most 20 nodes, some with extra
/// entity-entity links.
pub fn random_graphs(seed: u64, count: usize) -> Vec<PatientGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = random_cohort(&mut rng, count * 2, 6, 3);
    let vocab = Vocabulary::from_ids((0..6).map(|i| format!("C{i}")), Vec::new());
    records
        .iter()
        .map(|r| {
            let mut g = build_diagnosis_graph(r, &vocab, &stats());
            let pairs: Vec<(usize, usize)> = (0..rng.gen_range(0..6))
                .map(|_| {
                    let a = rng.gen_range(0..6);
                    (a, (a + rng.gen_range(1..6)) % 6)
                })
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect();
            g.link_entities(&pairs, EdgeKind::Ontology);
            g
        })
        .filter(|g| g.n_nodes() <= 20)
        .take(count)
        .collect()
}

/// `D^-1/2 (A + I) D^-1/2` by explicit dense products.
pub fn closed_form_adjacency(g: &PatientGraph) -> Tensor {
    let n = g.n_nodes();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    for e in g.edges() {
        a.set(e.u, e.v, 1.0);
        a.set(e.v, e.u, 1.0);
    }
    let mut d = Tensor::zeros(n, n);
    for i in 0..n {
        let deg: f64 = a.row(i).iter().sum();
        d.set(i, i, 1.0 / deg.sqrt());
    }
    d.matmul(&a).unwrap().matmul(&d).unwrap()
}

/// Worst asymmetry and worst deviation from the closed form, dense and
/// sparse paths combined.
pub fn normalization_errors(seed: u64, count: usize) -> (f64, f64) {
    let mut asym = 0.0f64;
    let mut dev = 0.0f64;
    for g in random_graphs(seed, count) {
        let a = normalize_adjacency(&g);
        asym = asym.max(a.max_abs_diff(&a.transpose()));
        dev = dev.max(a.max_abs_diff(&closed_form_adjacency(&g)));
        dev = dev.max(normalized_adjacency(&g).to_dense().max_abs_diff(&a));
    }
    (asym, dev)
}

pub fn small_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.hidden_dim = 8;
    cfg.time_dim = 4;
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.bins = 4;
    cfg
}

pub fn synthetic(n: usize, signals: &str, seed: u64) -> (Vec<PatientRecord>, Knowledge) {
    let s = generate_synthetic(&SynthConfig {
        n_patients: n,
        signals: parse_signals(signals).unwrap(),
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    (
        s.records,
        Knowledge {
            ontology: s.ontology,
            mapping: s.mapping,
        },
    )
}

/// Largest deviation from 1 of any attention or fusion weight sum seen while
/// training and evaluating on a 100-patient cohort.
pub fn simplex_error_of_run() -> f64 {
    let (records, knowledge) = synthetic(100, "diagnosis_cluster+lab_extreme", 3);
    let cfg = small_run_config();
    let prepared = prepare(&records, Some(&knowledge), &cfg, 0).unwrap();
    train_one(&prepared, &cfg, 0).unwrap().result.max_simplex_error
}

/// `t_raw` for zero intervals, worst distance from 1.
pub fn zero_interval_deviation() -> f64 {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w1 = tape.constant(Tensor::row_vector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()));
    let w2 = tape.constant(Tensor::filled(6, 3, 0.7));
    let (t_raw, _) = temporal_embed(&tape, &[0, 0, 0], w1, w2).unwrap();
    tape.value(t_raw).data().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max)
}

/// With one modality the fused vector is that modality's vector: compares
/// the prediction with `sigmoid(z . head + bias)` computed by hand.
pub fn single_modality_fusion_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let head: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: f64 = rng.gen_range(-1.0..1.0);
        let tape = Tape::new();
        let zv = tape.constant(Tensor::row_vector(z.clone()));
        let (p, weights) = fuse_and_predict(
            &tape,
            &[zv],
            tape.constant(Tensor::scalar(rng.gen_range(-3.0..3.0))),
            tape.constant(Tensor::column_vector(head.clone())),
            tape.constant(Tensor::scalar(bias)),
        )
        .unwrap();
        let logit: f64 = z.iter().zip(&head).map(|(a, b)| a * b).sum::<f64>() + bias;
        let expect = 1.0 / (1.0 + (-logit).exp());
        worst = worst.max((tape.scalar(p) - expect).abs()).max((weights[0] - 1.0).abs());
    }
    worst
}

/// For a one-visit patient, `z_time` against `x_1 + t_proj_1` assembled from
/// the GCN and temporal pieces directly.
pub fn single_visit_error() -> f64 {
    let codes = ["A", "B", "C"].map(String::from);
    let visit = Visit::new("v0", 100, codes.iter().take(2).cloned(), Vec::new());
    let demo = katgnn::model::Demographics::new(61.0, katgnn::model::Sex::Male).unwrap();
    let record = PatientRecord::new("p", demo, vec![visit], 190, true).unwrap();
    let vocab = Vocabulary::from_ids(codes, Vec::new());
    let graph = EncodedGraph::new(&build_diagnosis_graph(&record, &vocab, &stats())).unwrap();
    let config = NetworkConfig {
        hidden_dim: 6,
        time_dim: 4,
        gcn_layers: 2,
        dropout: 0.5,
        time_aware: true,
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let net = Network::new(config.clone(), &[(Modality::Diagnosis, graph.feature_dim())], seed).unwrap();
        let tape = Tape::new();
        let p = |name: &str| tape.constant(net.params.get(&format!("diagnosis.{name}")).unwrap().clone());
        let vars = ModalityVars {
            gcn: vec![p("gcn0"), p("gcn1")],
            temporal: Some((p("w1"), p("w2"), p("w_attn"), p("wq"))),
        };
        let out = modality_forward(&tape, &graph, &vars, &config, 0, false).unwrap();
        let h = gcn_forward(&tape, &graph.features, &graph.adjacency, &vars.gcn, 0.5, 0, false).unwrap();
        let x = tape.select_rows(h, &graph.visit_rows).unwrap();
        let (w1, w2, _, _) = vars.temporal.unwrap();
        let (_, t_proj) = temporal_embed(&tape, &graph.taus, w1, w2).unwrap();
        let expect = tape.value(tape.add(x, t_proj).unwrap());
        worst = worst.max(tape.value(out.z_time).max_abs_diff(&expect));
        worst = worst.max((out.alpha[0] - 1.0).abs()).max((out.beta[0] - 1.0).abs());
    }
    worst
}

/// A single-bin measurement graph has the same structure and features as a
/// diagnosis graph whose codes are the measured items. Returns the number of
/// records checked, or a description of the first mismatch.
pub fn single_bin_isomorphism(seed: u64, n: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = random_cohort(&mut rng, n, 4, 5);
    let items: Vec<String> = (0..5).map(|i| format!("M{i}")).collect();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (item, x) in records.iter().flat_map(|r| r.visits.iter().flat_map(|v| v.measurements.iter())) {
        values.entry(item.clone()).or_default().push(*x);
    }
    let spec = fit_bins(&values, 1).map_err(|e| e.to_string())?;
    let meas_vocab = Vocabulary::from_ids(Vec::new(), items.clone());
    let presence_vocab = Vocabulary::from_ids(items, Vec::new());
    for r in &records {
        let m = build_measurement_graph(r, &meas_vocab, &spec, &stats());
        let visits = r
            .visits
            .iter()
            .map(|v| Visit::new(v.visit_id.clone(), v.time, v.measurements.iter().map(|(i, _)| i.clone()), Vec::new()))
            .collect();
        let presence = PatientRecord::new(r.patient_id.clone(), r.demographics.clone(), visits, r.index_date, r.label)
            .map_err(|e| e.to_string())?;
        let d = build_diagnosis_graph(&presence, &presence_vocab, &stats());
        let same_nodes = m.nodes().iter().zip(d.nodes()).all(|(a, b)| match (a, b) {
            (
                NodeKind::Entity { vocab_index: i, bin: Some(0), .. },
                NodeKind::Entity { vocab_index: j, bin: None, .. },
            ) => i == j,
            (NodeKind::Visit { .. }, NodeKind::Visit { .. }) => a == b,
            _ => false,
        });
        if m.n_nodes() != d.n_nodes() || !same_nodes {
            return Err(format!("{}: node sets differ", r.patient_id));
        }
        let edges = |g: &PatientGraph| g.edges().map(|e| (e.u, e.v, e.kind)).collect::<Vec<_>>();
        if edges(&m) != edges(&d) {
            return Err(format!("{}: edge sets differ", r.patient_id));
        }
        if m.materialize_features().max_abs_diff(&d.materialize_features()) != 0.0 {
            return Err(format!("{}: features differ", r.patient_id));
        }
    }
    Ok(records.len())
}

/// Prepares and trains with the split fixed, then again after flipping every
/// test label. Returns a description of the first fitted artifact that
/// moved, if any.
pub fn test_label_leakage(records: &[PatientRecord], knowledge: &Knowledge, cfg: &RunConfig, seed: u64) -> Option<String> {
    let split = split_for(records, seed).unwrap();
    let mut flipped = records.to_vec();
    for r in flipped.iter_mut().filter(|r| split.test_ids.contains(&r.patient_id)) {
        r.label = !r.label;
    }
    let a = prepare_with_split(records, Some(knowledge), cfg, split.clone(), seed).unwrap();
    let b = prepare_with_split(&flipped, Some(knowledge), cfg, split, seed).unwrap();
    if a.pre.bins != b.pre.bins {
        return Some("bin boundaries".into());
    }
    for (m, ea) in &a.edges {
        let eb = &b.edges[m];
        if ea.ontology_pairs != eb.ontology_pairs || ea.cooccur_pairs != eb.cooccur_pairs || ea.lift != eb.lift {
            return Some(format!("{m} edges"));
        }
    }
    let (ra, rb) = (train_one(&a, cfg, seed).unwrap().result, train_one(&b, cfg, seed).unwrap().result);
    if ra.epoch != rb.epoch || ra.val_auprc != rb.val_auprc || ra.train_loss != rb.train_loss {
        return Some(format!("selected epoch {} vs {}", ra.epoch, rb.epoch));
    }
    None
}

pub fn prepared_graph_counts(p: &Prepared) -> Vec<(String, usize)> {
    p.pre
        .records
        .iter()
        .zip(&p.graphs)
        .map(|(r, gs)| (r.patient_id.clone(), gs.iter().map(|g| g.n_edges()).sum()))
        .collect()
}

//! GCN encoder, time-aware visit attention, and adaptive modality fusion.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{xavier_uniform, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Modality, PatientGraph};
use crate::model::derive_seed;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    pub time_dim: usize,
    pub gcn_layers: usize,
    pub dropout: f64,
    /// When off, visit embeddings are mean-pooled instead of attended.
    pub time_aware: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            time_dim: 64,
            gcn_layers: 2,
            dropout: 0.5,
            time_aware: true,
        }
    }
}

/// Degrees of `A + I`.
fn degrees(n: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
    let mut deg = vec![1.0; n];
    for &(u, v) in pairs {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    deg
}

fn norm_weight(deg: &[f64], i: usize, j: usize) -> f64 {
    1.0 / (deg[i] * deg[j]).sqrt()
}

/// `D^-1/2 (A + I) D^-1/2` as a dense matrix, with `A` the binary adjacency
/// over distinct neighbor pairs.
pub fn normalize_adjacency(graph: &PatientGraph) -> Tensor {
    let n = graph.n_nodes();
    let pairs = graph.adjacency_pairs();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    for &(u, v) in &pairs {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg = degrees(n, &pairs);
    for i in 0..n {
        for j in 0..n {
            let x = a.get(i, j);
            if x != 0.0 {
                a.set(i, j, x * norm_weight(&deg, i, j));
            }
        }
    }
    a
}

/// Sparse form of [`normalize_adjacency`]; entries are bit-identical.
pub fn normalized_adjacency(graph: &PatientGraph) -> SparseMatrix {
    let n = graph.n_nodes();
    let pairs = graph.adjacency_pairs();
    let deg = degrees(n, &pairs);
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, norm_weight(&deg, i, i))]).collect();
    for &(u, v) in &pairs {
        rows[u].push((v, norm_weight(&deg, u, v)));
        rows[v].push((u, norm_weight(&deg, v, u)));
    }
    SparseMatrix::from_rows(n, rows)
}

/// A patient graph reduced to what the network consumes.
#[derive(Debug, Clone)]
pub struct EncodedGraph {
    pub patient_id: String,
    pub modality: Modality,
    pub adjacency: Rc<SparseMatrix>,
    pub features: Rc<SparseMatrix>,
    /// Visit node indices in chronological order.
    pub visit_rows: Vec<usize>,
    pub taus: Vec<i64>,
}

impl EncodedGraph {
    pub fn new(graph: &PatientGraph) -> Result<Self> {
        let visit_rows = graph.visit_nodes();
        if visit_rows.is_empty() {
            return Err(Error::invalid(format!(
                "{} graph of patient `{}` has no visit nodes",
                graph.modality, graph.patient_id
            )));
        }
        Ok(Self {
            patient_id: graph.patient_id.clone(),
            modality: graph.modality,
            adjacency: Rc::new(normalized_adjacency(graph)),
            features: Rc::new(SparseMatrix::from_rows(graph.feature_dim(), graph.sparse_features())),
            visit_rows,
            taus: graph.taus(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape().1
    }
}

/// Stacked GCN layers: `H' = relu(A H W)` with dropout between layers and no
/// activation after the last one.
pub fn gcn_forward(
    tape: &Tape,
    features: &Rc<SparseMatrix>,
    adjacency: &Rc<SparseMatrix>,
    weights: &[Var],
    dropout: f64,
    seed: u64,
    train: bool,
) -> Result<Var> {
    let Some((first, rest)) = weights.split_first() else {
        return Err(Error::invalid("gcn_forward needs at least one layer"));
    };
    let mut h = tape.spmm(adjacency, tape.spmm(features, *first)?)?;
    for (l, w) in rest.iter().enumerate() {
        h = tape.relu(h);
        h = tape.dropout(h, dropout, derive_seed(seed, l as u64), train)?;
        h = tape.spmm(adjacency, tape.matmul(h, *w)?)?;
    }
    Ok(h)
}

/// Returns `(t_raw, t_proj)`, `t_raw = 1 - tanh(tau_years^2 * w1)` with one row
/// per visit, and `t_proj = t_raw * w2`.
pub fn temporal_embed(tape: &Tape, taus: &[i64], w1: Var, w2: Var) -> Result<(Var, Var)> {
    let sq: Vec<f64> = taus
        .iter()
        .map(|&t| {
            let y = t as f64 / DAYS_PER_YEAR;
            y * y
        })
        .collect();
    let tau = tape.constant(Tensor::column_vector(sq));
    let t_raw = tape.shift(tape.scale(tape.tanh(tape.matmul(tau, w1)?), -1.0), 1.0);
    let t_proj = tape.matmul(t_raw, w2)?;
    Ok((t_raw, t_proj))
}

fn scaled_softmax(tape: &Tape, scores: Var, d: usize) -> Var {
    tape.softmax(tape.scale(scores, 1.0 / (d as f64).sqrt()))
}

/// Returns `(z_local, alpha)` with `alpha` a `1 x N` row.
pub fn local_attention(tape: &Tape, x: Var, t_proj: Var, w_attn: Var) -> Result<(Var, Var)> {
    let d = tape.shape(x).1;
    let e = tape.concat_cols(x, t_proj)?;
    let s = tape.transpose(tape.matmul(e, w_attn)?);
    let alpha = scaled_softmax(tape, s, d);
    Ok((tape.matmul(alpha, x)?, alpha))
}

/// Returns `(z_global, beta)` with `beta` a `1 x N` row.
pub fn global_attention(tape: &Tape, x: Var, t_proj: Var, wq: Var) -> Result<(Var, Var)> {
    let d = tape.shape(x).1;
    let h = tape.mean_rows(x)?;
    let q = tape.relu(tape.matmul(h, wq)?);
    let scores = tape.matmul(q, tape.transpose(t_proj))?;
    let beta = scaled_softmax(tape, scores, d);
    Ok((tape.matmul(beta, t_proj)?, beta))
}

/// Tape handles for one modality's parameters.
#[derive(Debug, Clone)]
pub struct ModalityVars {
    pub gcn: Vec<Var>,
    /// `(w1, w2, w_attn, wq)`; absent when the network mean-pools.
    pub temporal: Option<(Var, Var, Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct ModalityOutput {
    /// `1 x d`.
    pub z_time: Var,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn modality_forward(
    tape: &Tape,
    graph: &EncodedGraph,
    vars: &ModalityVars,
    config: &NetworkConfig,
    seed: u64,
    train: bool,
) -> Result<ModalityOutput> {
    if graph.visit_rows.is_empty() {
        return Err(Error::invalid(format!("patient `{}` has no visits", graph.patient_id)));
    }
    let h = gcn_forward(
        tape,
        &graph.features,
        &graph.adjacency,
        &vars.gcn,
        config.dropout,
        seed,
        train,
    )?;
    let x = tape.select_rows(h, &graph.visit_rows)?;
    match vars.temporal {
        Some((w1, w2, w_attn, wq)) => {
            let (_, t_proj) = temporal_embed(tape, &graph.taus, w1, w2)?;
            let (z_local, alpha) = local_attention(tape, x, t_proj, w_attn)?;
            let (z_global, beta) = global_attention(tape, x, t_proj, wq)?;
            Ok(ModalityOutput {
                z_time: tape.add(z_local, z_global)?,
                alpha: tape.value(alpha).into_data(),
                beta: tape.value(beta).into_data(),
            })
        }
        None => {
            let n = graph.visit_rows.len();
            Ok(ModalityOutput {
                z_time: tape.mean_rows(x)?,
                alpha: vec![1.0 / n as f64; n],
                beta: Vec::new(),
            })
        }
    }
}

/// Returns the `1 x 1` probability and the modality weights.
pub fn fuse_and_predict(tape: &Tape, z: &[Var], fusion_logits: Var, head: Var, bias: Var) -> Result<(Var, Vec<f64>)> {
    let weights = tape.softmax(fusion_logits);
    let stacked = tape.stack_rows(z)?;
    let fused = tape.matmul(weights, stacked)?;
    let logit = tape.add(tape.matmul(fused, head)?, bias)?;
    Ok((tape.sigmoid(logit), tape.value(weights).into_data()))
}

/// One patient's graphs, ordered like [`Network::modalities`].
#[derive(Debug, Clone)]
pub struct PatientInput {
    pub patient_id: String,
    pub label: bool,
    pub graphs: Vec<EncodedGraph>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    /// Per modality, per visit.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub fusion: Vec<f64>,
}

impl Prediction {
    /// Largest `|sum - 1|` over the attention and fusion weight vectors.
    pub fn simplex_error(&self) -> f64 {
        let dev = |w: &[f64]| {
            if w.is_empty() {
                0.0
            } else {
                (w.iter().sum::<f64>() - 1.0).abs()
            }
        };
        self.alpha
            .iter()
            .chain(&self.beta)
            .map(|w| dev(w))
            .fold(dev(&self.fusion), f64::max)
    }
}

struct Bound {
    all: Vec<Var>,
    modalities: Vec<ModalityVars>,
    fusion: Var,
    head: Var,
    bias: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub modalities: Vec<Modality>,
    pub params: ParamStore,
}

impl Network {
    /// Xavier-initialized network for the given `(modality, feature_dim)`
    /// inputs. Fusion logits and the head bias start at zero.
    pub fn new(config: NetworkConfig, inputs: &[(Modality, usize)], seed: u64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("network needs at least one modality"));
        }
        if config.gcn_layers == 0 || config.hidden_dim == 0 || config.time_dim == 0 {
            return Err(Error::invalid("layer count and widths must be positive"));
        }
        let (d, t) = (config.hidden_dim, config.time_dim);
        let mut params = ParamStore::new();
        let mut k = 0u64;
        let mut xavier = |params: &mut ParamStore, name: String, rows: usize, cols: usize| {
            k += 1;
            params.insert(name, xavier_uniform(rows, cols, derive_seed(seed, k)))
        };
        for &(m, feature_dim) in inputs {
            for l in 0..config.gcn_layers {
                let rows = if l == 0 { feature_dim } else { d };
                xavier(&mut params, format!("{m}.gcn{l}"), rows, d)?;
            }
            if config.time_aware {
                xavier(&mut params, format!("{m}.w1"), 1, t)?;
                xavier(&mut params, format!("{m}.w2"), t, d)?;
                xavier(&mut params, format!("{m}.w_attn"), 2 * d, 1)?;
                xavier(&mut params, format!("{m}.wq"), d, d)?;
            }
        }
        params.insert("fusion_logits", Tensor::zeros(1, inputs.len()))?;
        xavier(&mut params, "head".into(), d, 1)?;
        params.insert("head_bias", Tensor::zeros(1, 1))?;
        Ok(Self {
            config,
            modalities: inputs.iter().map(|(m, _)| *m).collect(),
            params,
        })
    }

    /// Rebuilds a network around saved parameters, checking every shape.
    pub fn with_params(mut self, saved: &ParamStore) -> Result<Self> {
        self.params.load_from(saved)?;
        Ok(self)
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let all: Vec<Var> = self
            .params
            .tensors()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let var = |name: String| all[self.params.id(&name).expect("parameter created in new")];
        let modalities = self
            .modalities
            .iter()
            .map(|m| ModalityVars {
                gcn: (0..self.config.gcn_layers).map(|l| var(format!("{m}.gcn{l}"))).collect(),
                temporal: self.config.time_aware.then(|| {
                    (
                        var(format!("{m}.w1")),
                        var(format!("{m}.w2")),
                        var(format!("{m}.w_attn")),
                        var(format!("{m}.wq")),
                    )
                }),
            })
            .collect();
        Bound {
            modalities,
            fusion: var("fusion_logits".into()),
            head: var("head".into()),
            bias: var("head_bias".into()),
            all,
        }
    }

    fn forward(&self, tape: &Tape, bound: &Bound, patient: &PatientInput, seed: u64, train: bool) -> Result<(Var, Prediction)> {
        if patient.graphs.len() != self.modalities.len() {
            return Err(Error::invalid(format!(
                "patient `{}` has {} graphs for {} modalities",
                patient.patient_id,
                patient.graphs.len(),
                self.modalities.len()
            )));
        }
        let mut z = Vec::with_capacity(self.modalities.len());
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        for (k, (graph, vars)) in patient.graphs.iter().zip(&bound.modalities).enumerate() {
            if graph.modality != self.modalities[k] {
                return Err(Error::invalid(format!(
                    "expected a {} graph, got {}",
                    self.modalities[k], graph.modality
                )));
            }
            let out = modality_forward(tape, graph, vars, &self.config, derive_seed(seed, k as u64), train)?;
            z.push(out.z_time);
            alpha.push(out.alpha);
            beta.push(out.beta);
        }
        let (p, fusion) = fuse_and_predict(tape, &z, bound.fusion, bound.head, bound.bias)?;
        let pred = Prediction {
            probability: tape.scalar(p),
            alpha,
            beta,
            fusion,
        };
        Ok((p, pred))
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn predict(&self, patient: &PatientInput) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(self.forward(&tape, &bound, patient, 0, false)?.1)
    }

    /// Mean BCE over the batch and its gradient for every parameter, in
    /// parameter-store order. Dropout masks derive from `seed` and each
    /// patient's batch position.
    pub fn loss_and_gradients(&self, batch: &[&PatientInput], seed: u64, train: bool) -> Result<BatchOutcome> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let tape = Tape::new();
        let bound = self.bind(&tape, true);
        let mut probs = Vec::with_capacity(batch.len());
        let mut simplex_error: f64 = 0.0;
        for (i, patient) in batch.iter().enumerate() {
            let (p, pred) = self.forward(&tape, &bound, patient, derive_seed(seed, i as u64), train)?;
            simplex_error = simplex_error.max(pred.simplex_error());
            probs.push(p);
        }
        let labels: Vec<f64> = batch.iter().map(|p| if p.label { 1.0 } else { 0.0 }).collect();
        let stacked = tape.stack_rows(&probs)?;
        let loss = tape.bce_loss(stacked, &labels)?;
        let loss_value = tape.scalar(loss);
        let mut grads = tape.backward(loss);
        let gradients = bound
            .all
            .iter()
            .zip(self.params.tensors())
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
            .collect();
        Ok(BatchOutcome {
            loss: loss_value,
            gradients,
            simplex_error,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub gradients: Vec<Tensor>,
    pub simplex_error: f64,
}

/// Writes `patient_id,visit_ordinal,alpha,beta` rows for one modality.
/// `beta` is left empty when the network mean-pools.
pub fn write_attention_csv<W: std::io::Write>(
    out: W,
    rows: &[(String, Vec<f64>, Vec<f64>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "visit_ordinal", "alpha", "beta"])?;
    for (id, alpha, beta) in rows {
        for (i, a) in alpha.iter().enumerate() {
            let b = beta.get(i).map(|b| b.to_string()).unwrap_or_default();
            w.write_record([id.as_str(), &i.to_string(), &a.to_string(), &b])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_diagnosis_graph;
    use crate::model::{build_vocabulary, DemoStats, Demographics, PatientRecord, Sex, Visit};

    fn record(id: &str, visits: &[(i64, &[&str])], label: bool) -> PatientRecord {
        let vs = visits
            .iter()
            .enumerate()
            .map(|(k, (t, codes))| Visit::new(format!("v{k}"), *t, codes.iter().map(|c| c.to_string()), Vec::new()))
            .collect();
        PatientRecord::new(id, Demographics::new(50.0, Sex::Female).unwrap(), vs, 400, label).unwrap()
    }

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            hidden_dim: 4,
            time_dim: 3,
            gcn_layers: 2,
            dropout: 0.0,
            time_aware: true,
        }
    }

    #[test]
    fn two_node_normalization() {
        let r = record("p", &[(10, &["A"])], true);
        let v = build_vocabulary(std::slice::from_ref(&r)).unwrap();
        let g = build_diagnosis_graph(&r, &v, &DemoStats::fit([&r]));
        let a = normalize_adjacency(&g);
        assert_eq!(a.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(normalized_adjacency(&g).to_dense(), a);
    }

    #[test]
    fn zero_tau_gives_ones() {
        let tape = Tape::new();
        let w1 = tape.param(Tensor::row_vector(vec![0.3, -2.0, 5.0]));
        let w2 = tape.param(xavier_uniform(3, 2, 1));
        let (t_raw, _) = temporal_embed(&tape, &[0, 0], w1, w2).unwrap();
        assert!(tape.value(t_raw).data().iter().all(|&x| x == 1.0));
        let (t_raw, _) = temporal_embed(&tape, &[365_000], w1, w2).unwrap();
        assert_eq!(tape.value(t_raw).data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn head_zero_gives_half() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::row_vector(vec![1.0, -3.0]));
        let logits = tape.param(Tensor::row_vector(vec![0.7]));
        let head = tape.param(Tensor::zeros(2, 1));
        let bias = tape.param(Tensor::zeros(1, 1));
        let (p, w) = fuse_and_predict(&tape, &[z], logits, head, bias).unwrap();
        assert_eq!(tape.scalar(p), 0.5);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn network_shapes_and_determinism() {
        let rs = [
            record("a", &[(10, &["A", "B"]), (200, &["C"])], true),
            record("b", &[(50, &["B"])], false),
        ];
        let v = build_vocabulary(&rs).unwrap();
        let stats = DemoStats::fit(&rs);
        let inputs: Vec<PatientInput> = rs
            .iter()
            .map(|r| PatientInput {
                patient_id: r.patient_id.clone(),
                label: r.label,
                graphs: vec![EncodedGraph::new(&build_diagnosis_graph(r, &v, &stats)).unwrap()],
            })
            .collect();
        let dim = inputs[0].graphs[0].feature_dim();
        let net = Network::new(small_config(), &[(Modality::Diagnosis, dim)], 3).unwrap();
        assert_eq!(net.params.get("diagnosis.gcn0").unwrap().shape(), (dim, 4));
        assert_eq!(net.params.get("fusion_logits").unwrap().data(), &[0.0]);
        let p = net.predict(&inputs[0]).unwrap();
        assert!(p.probability > 0.0 && p.probability < 1.0);
        assert!(p.simplex_error() < 1e-12);
        assert_eq!(p.alpha[0].len(), 2);

        let batch: Vec<&PatientInput> = inputs.iter().collect();
        let a = net.loss_and_gradients(&batch, 9, true).unwrap();
        let b = net.loss_and_gradients(&batch, 9, true).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.gradients, b.gradients);
        assert_eq!(a.gradients.len(), net.params.len());
    }

    #[test]
    fn attention_csv() {
        let mut buf = Vec::new();
        write_attention_csv(&mut buf, &[("p1".into(), vec![0.25, 0.75], vec![])]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "patient_id,visit_ordinal,alpha,beta\np1,0,0.25,\np1,1,0.75,\n"
        );
    }
}

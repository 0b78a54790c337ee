use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use katgnn::autodiff::{grad_check, SparseMatrix, Tape, Tensor, Var};
use katgnn::ingest::{generate_synthetic, parse_signals, RunConfig, SynthConfig};
use katgnn::network::{EncodedGraph, Network, PatientInput};
use katgnn::train::{network_config, prepare, Knowledge};
use katgnn::Result;

type OpFn = Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    /// Tolerance on the largest relative error.
    pub tolerance: f64,
    pub shapes: Vec<(usize, usize)>,
    /// Inputs must stay this far from zero (kinks).
    pub min_abs: f64,
    pub f: OpFn,
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, min_abs: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| loop {
            let x: f64 = rng.gen_range(-1.5..1.5);
            if x.abs() >= min_abs {
                return x;
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// `sum(out * W)` with a fixed random `W`, so every output entry matters.
fn weighted_sum(t: &Tape, out: Var, salt: u64) -> Result<Var> {
    let (r, c) = t.shape(out);
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(salt), r, c, 0.0);
    Ok(t.sum(t.mul(out, t.constant(w))?))
}

fn case(name: &'static str, tolerance: f64, shapes: &[(usize, usize)], f: impl Fn(&Tape, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        tolerance,
        shapes: shapes.to_vec(),
        min_abs: 0.0,
        f: Box::new(move |t, v| weighted_sum(t, f(t, v)?, 99)),
    }
}

pub fn op_cases() -> Vec<OpCase> {
    let sparse = Rc::new(SparseMatrix::from_rows(
        4,
        vec![vec![(0, 0.5), (2, -1.0)], vec![], vec![(1, 2.0), (3, 0.25)], vec![(0, 1.0), (3, 1.0)], vec![(2, 0.3)]],
    ));
    let mut cases = vec![
        case("matmul", 1e-6, &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1])),
        case("add", 1e-6, &[(3, 4), (3, 4)], |t, v| t.add(v[0], v[1])),
        case("add_row_broadcast", 1e-6, &[(3, 4), (1, 4)], |t, v| t.add(v[0], v[1])),
        case("mul", 1e-6, &[(3, 4), (3, 4)], |t, v| t.mul(v[0], v[1])),
        case("scale", 1e-6, &[(2, 5)], |t, v| Ok(t.scale(v[0], -1.7))),
        case("shift", 1e-6, &[(2, 5)], |t, v| Ok(t.shift(v[0], 0.4))),
        case("concat_cols", 1e-6, &[(3, 2), (3, 4)], |t, v| t.concat_cols(v[0], v[1])),
        case("stack_rows", 1e-6, &[(1, 3), (2, 3), (1, 3)], |t, v| t.stack_rows(v)),
        case("transpose", 1e-6, &[(3, 5)], |t, v| Ok(t.transpose(v[0]))),
        case("mean_rows", 1e-6, &[(4, 3)], |t, v| t.mean_rows(v[0])),
        case("sum", 1e-6, &[(4, 3)], |t, v| Ok(t.sum(v[0]))),
        case("tanh", 1e-6, &[(3, 3)], |t, v| Ok(t.tanh(v[0]))),
        case("sigmoid", 1e-6, &[(3, 3)], |t, v| Ok(t.sigmoid(v[0]))),
        case("softmax", 1e-6, &[(3, 5)], |t, v| Ok(t.softmax(v[0]))),
        case("dropout", 1e-6, &[(4, 6)], |t, v| t.dropout(v[0], 0.4, 7, true)),
        case("select_rows", 1e-6, &[(5, 3)], |t, v| t.select_rows(v[0], &[4, 0, 2])),
        case("spmm", 1e-6, &[(4, 3)], move |t, v| t.spmm(&sparse, v[0])),
        OpCase {
            name: "bce_loss",
            tolerance: 1e-6,
            shapes: vec![(4, 1)],
            min_abs: 0.0,
            f: Box::new(|t, v| t.bce_loss(t.sigmoid(v[0]), &[1.0, 0.0, 0.0, 1.0])),
        },
    ];
    let mut relu = case("relu", 1e-4, &[(4, 4)], |t, v| Ok(t.relu(v[0])));
    relu.min_abs = 1e-3;
    cases.push(relu);
    cases
}

/// Largest relative error of one op over `points` random inputs.
pub fn check_op(op: &OpCase, points: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let inputs: Vec<Tensor> = op.shapes.iter().map(|&(r, c)| random_tensor(&mut rng, r, c, op.min_abs)).collect();
        worst = worst.max(grad_check(&op.f, &inputs, 1e-6)?);
    }
    Ok(worst)
}

/// A tiny two-modality setup whose batch loss is checked end to end.
pub struct EndToEnd {
    pub cfg: RunConfig,
    pub batch: Vec<PatientInput>,
    pub dims: Vec<(katgnn::graph::Modality, usize)>,
}

impl EndToEnd {
    pub fn new() -> Self {
        let synth = generate_synthetic(&SynthConfig {
            n_patients: 30,
            signals: parse_signals("diagnosis_cluster+lab_extreme").unwrap(),
            n_diag_codes: 20,
            n_meas_items: 4,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let knowledge = Knowledge {
            ontology: synth.ontology,
            mapping: synth.mapping,
        };
        let mut cfg = RunConfig::default();
        cfg.hidden_dim = 4;
        cfg.time_dim = 3;
        cfg.bins = 3;
        cfg.diag_percent = 10.0;
        cfg.meas_percent = 20.0;
        cfg.min_pair_count = 1;
        let prepared = prepare(&synth.records, Some(&knowledge), &cfg, 0).unwrap();
        let batch: Vec<PatientInput> = prepared
            .pre
            .records
            .iter()
            .zip(&prepared.graphs)
            .take(4)
            .map(|(r, gs)| PatientInput {
                patient_id: r.patient_id.clone(),
                label: r.label,
                graphs: gs.iter().map(|g| EncodedGraph::new(g).unwrap()).collect(),
            })
            .collect();
        let dims = cfg.modalities.iter().zip(&batch[0].graphs).map(|(&m, g)| (m, g.feature_dim())).collect();
        Self { cfg, batch, dims }
    }

    /// Largest relative error between the network's parameter gradients and
    /// central differences of the mean batch loss, dropout active.
    pub fn check(&self, init_seed: u64) -> Result<f64> {
        let mut net = Network::new(network_config(&self.cfg), &self.dims, init_seed)?;
        // The head and fusion logits start at zero; jitter everything so
        // every path carries gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed ^ 0xabc);
        for t in net.params.tensors_mut() {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
        let batch: Vec<&PatientInput> = self.batch.iter().collect();
        let drop_seed = init_seed + 1;
        let analytic = net.loss_and_gradients(&batch, drop_seed, true)?.gradients;
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..net.params.len() {
            for i in 0..analytic[k].len() {
                let mut probe = net.clone();
                let x0 = probe.params.tensors_mut().nth(k).unwrap().data()[i];
                probe.params.tensors_mut().nth(k).unwrap().data_mut()[i] = x0 + eps;
                let up = probe.loss_and_gradients(&batch, drop_seed, true)?.loss;
                probe.params.tensors_mut().nth(k).unwrap().data_mut()[i] = x0 - eps;
                let down = probe.loss_and_gradients(&batch, drop_seed, true)?.loss;
                let (a, n) = (analytic[k].data()[i], (up - down) / (2.0 * eps));
                // Below 1e-6 the difference quotient is dominated by the last
                // bits of the loss, so the error is measured against 1e-6.
                worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-6));
            }
        }
        Ok(worst)
    }
}

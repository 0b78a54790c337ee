use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use katgnn::autodiff::ParamStore;
use katgnn::graph::Modality;
use katgnn::ingest::{
    generate_synthetic, load_cohort, load_config, load_mapping, load_ontology, parse_signals, CohortFiles, RunConfig,
    SynthConfig, MAPPING_FILE, ONTOLOGY_FILE,
};
use katgnn::model::PatientRecord;
use katgnn::network::{write_attention_csv, Prediction};
use katgnn::train::{
    ablate, build_graph, evaluate, prepare, run_seeds, seed_list, train_one, write_results_csv, write_summary_json,
    AblationAxis, Knowledge, Prepared, SettingResults,
};
use katgnn::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "katgnn", version, about = "Knowledge-augmented temporal GNN for clinical risk prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with ontology and mapping files.
    GenSynth(GenSynthArgs),
    /// Build the base visit graphs and fitted bin boundaries.
    BuildGraphs(RunArgs),
    /// Plan ontology edges, mine co-occurrence lift and write augmented graphs.
    Augment(RunArgs),
    /// Train one run per seed and write results, checkpoints and attention weights.
    Train(TrainArgs),
    /// Score the test split with a saved checkpoint.
    Eval(EvalArgs),
    /// Train every value of one ablation axis.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Number of patients.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Planted signals: none, or any of diagnosis_cluster, lab_extreme,
    /// ontology_informative joined with `+`.
    #[arg(long, default_value = "none")]
    signal: String,
    /// Fraction of positive patients.
    #[arg(long, default_value_t = 0.3)]
    positive_rate: f64,
    /// Number of diagnosis codes.
    #[arg(long, default_value_t = 60)]
    diag_codes: usize,
    /// Number of measurement items.
    #[arg(long, default_value_t = 12)]
    meas_items: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory holding patients.csv, diagnoses.csv, measurements.csv and
    /// optionally ontology.csv and mapping.csv.
    #[arg(long)]
    data: PathBuf,
    /// `key = value` configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for the split, edges, initialization and batching (first seed
    /// when several are run).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; runs are parallel across seeds only.
    #[arg(long)]
    threads: Option<usize>,
    /// Quantile bins per measurement item [config default: 10].
    #[arg(long)]
    bins: Option<usize>,
    /// Percent of scored diagnosis pairs linked by ontology edges [config default: 3].
    #[arg(long)]
    diag_percent: Option<f64>,
    /// Percent of scored measurement pairs linked by ontology edges [config default: 5].
    #[arg(long)]
    meas_percent: Option<f64>,
    /// Similarity used to rank pairs: lcs_path or lcs_depth [config default: lcs_path].
    #[arg(long)]
    metric_mode: Option<String>,
    /// Disable co-occurrence edges.
    #[arg(long)]
    no_cooccur: bool,
    /// Replace time-aware attention with mean pooling.
    #[arg(long)]
    no_time_aware: bool,
    /// Replace ontology edges with the same number of random pairs.
    #[arg(long)]
    random_edges: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of consecutive seeds starting at --seed [config default: 5].
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Parameter file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of consecutive seeds starting at --seed [config default: 5].
    #[arg(long)]
    seeds: Option<usize>,
    /// One of bins, diag_percent, meas_percent, cooccur_on_off,
    /// time_aware_on_off, random_vs_ontology.
    #[arg(long)]
    axis: AblationAxis,
    /// Comma-separated values; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(b) = self.bins {
            cfg.bins = b;
        }
        if let Some(p) = self.diag_percent {
            cfg.diag_percent = p;
        }
        if let Some(p) = self.meas_percent {
            cfg.meas_percent = p;
        }
        if let Some(m) = &self.metric_mode {
            cfg.set("metric_mode", m)?;
        }
        if self.no_cooccur {
            cfg.cooccurrence = false;
        }
        if self.no_time_aware {
            cfg.time_aware = false;
        }
        if self.random_edges {
            cfg.random_edges = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn records(&self) -> Result<Vec<PatientRecord>> {
        load_cohort(&CohortFiles::in_dir(&self.data))
    }

    fn knowledge(&self) -> Result<Option<Knowledge>> {
        let onto = self.data.join(ONTOLOGY_FILE);
        let map = self.data.join(MAPPING_FILE);
        if !onto.exists() || !map.exists() {
            log::warn!("{} has no {ONTOLOGY_FILE}/{MAPPING_FILE}; ontology edges disabled", self.data.display());
            return Ok(None);
        }
        let ontology = load_ontology(&onto)?;
        let mapping = load_mapping(&map, &ontology)?;
        Ok(Some(Knowledge { ontology, mapping }))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_graphs(dir: &Path, prepared: &Prepared, cfg: &RunConfig, augmented: bool) -> Result<()> {
    for (k, m) in cfg.modalities.iter().enumerate() {
        for (r, graphs) in prepared.pre.records.iter().zip(&prepared.graphs) {
            let g = if augmented {
                graphs[k].clone()
            } else {
                build_graph(r, *m, &prepared.pre, None)
            };
            let path = dir.join("graphs").join(m.name()).join(format!("{}.csv", r.patient_id));
            g.write_edge_list(&prepared.pre.vocab, create(&path)?)?;
        }
    }
    Ok(())
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_patients: a.n,
        positive_rate: a.positive_rate,
        n_diag_codes: a.diag_codes,
        n_meas_items: a.meas_items,
        signals: parse_signals(&a.signal)?,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let cohort = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    cohort.write(&a.out_dir)?;
    log::info!("wrote {} patients to {}", cohort.records.len(), a.out_dir.display());
    Ok(())
}

fn cmd_build_graphs(a: &RunArgs, augmented: bool) -> Result<()> {
    let cfg = a.config()?;
    let records = a.records()?;
    let knowledge = if augmented { a.knowledge()? } else { None };
    let prepared = prepare(&records, knowledge.as_ref(), &cfg, a.seed)?;
    let out = a.out_dir()?;
    prepared.pre.bins.write_csv(create(&out.join("bins.csv"))?)?;
    if augmented {
        for (m, e) in &prepared.edges {
            let names = match m {
                Modality::Diagnosis => &prepared.pre.vocab.diagnosis_codes,
                Modality::Measurement => &prepared.pre.vocab.measurement_items,
            };
            if let Some(plan) = &e.plan {
                plan.write_csv(create(&out.join(format!("plan_{m}.csv")))?)?;
            }
            if let Some(lift) = &e.lift {
                lift.write_csv(names, create(&out.join(format!("lift_{m}.csv")))?)?;
            }
            let mut w = csv::Writer::from_writer(create(&out.join(format!("edges_{m}.csv")))?);
            w.write_record(["a", "b", "kind"])?;
            for (pairs, kind) in [(&e.ontology_pairs, "ontology"), (&e.cooccur_pairs, "cooccurrence")] {
                for &(x, y) in pairs {
                    w.write_record([names[x].as_str(), names[y].as_str(), kind])?;
                }
            }
            w.flush()?;
        }
    }
    write_graphs(out, &prepared, &cfg, augmented)
}

fn write_attention(out: &Path, seed: u64, cfg: &RunConfig, preds: &[(String, Prediction)]) -> Result<()> {
    for (k, m) in cfg.modalities.iter().enumerate() {
        let rows: Vec<(String, Vec<f64>, Vec<f64>)> = preds
            .iter()
            .map(|(id, p)| (id.clone(), p.alpha[k].clone(), p.beta[k].clone()))
            .collect();
        write_attention_csv(create(&out.join(format!("attention_{m}_seed{seed}.csv")))?, &rows)?;
    }
    Ok(())
}

fn write_predictions(path: &Path, preds: &[(String, Prediction)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["patient_id", "probability"])?;
    for (id, p) in preds {
        w.write_record([id.as_str(), &p.probability.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_tables(out: &Path, settings: &[SettingResults]) -> Result<()> {
    write_results_csv(create(&out.join("results.csv"))?, settings)?;
    let mut w = create(&out.join("summary.json"))?;
    write_summary_json(&mut w, settings)?;
    w.flush()?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.run.config()?;
    if let Some(n) = a.seeds {
        cfg.seeds = n;
    }
    cfg.validate()?;
    let records = a.run.records()?;
    let knowledge = a.run.knowledge()?;
    let out = a.run.out_dir()?;
    fs::write(out.join("config.cfg"), cfg.render())?;
    let seeds = seed_list(a.run.seed, cfg.seeds);
    let runs = run_seeds(&cfg, &seeds, |seed| {
        let prepared = prepare(&records, knowledge.as_ref(), &cfg, seed)?;
        train_one(&prepared, &cfg, seed)
    })?;
    for run in &runs {
        let seed = run.result.seed;
        log::info!("seed {seed}: auroc {:.4} auprc {:.4} epoch {}", run.result.auroc, run.result.auprc, run.result.epoch);
        let mut w = create(&out.join("checkpoints").join(format!("seed{seed}.params")))?;
        run.network.params.write(&mut w)?;
        w.flush()?;
        write_attention(out, seed, &cfg, &run.test_predictions)?;
        write_predictions(&out.join(format!("predictions_seed{seed}.csv")), &run.test_predictions)?;
    }
    let settings = [SettingResults {
        setting: "train".into(),
        runs: runs.into_iter().map(|r| r.result).collect(),
    }];
    write_tables(out, &settings)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let file = File::open(&a.checkpoint).map_err(|e| Error::Data {
        path: a.checkpoint.clone(),
        message: e.to_string(),
    })?;
    let params = ParamStore::read(BufReader::new(file))?;
    let records = a.run.records()?;
    let knowledge = a.run.knowledge()?;
    let prepared = prepare(&records, knowledge.as_ref(), &cfg, a.run.seed)?;
    let eval = evaluate(&prepared, &cfg, &params)?;
    let out = a.run.out_dir()?;
    let summary = serde_json::json!({
        "seed": a.run.seed,
        "auroc": eval.auroc,
        "auprc": eval.auprc,
        "n_test": eval.test_predictions.len(),
    });
    let mut w = create(&out.join("eval.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    write_attention(out, a.run.seed, &cfg, &eval.test_predictions)?;
    write_predictions(&out.join(format!("predictions_seed{}.csv", a.run.seed)), &eval.test_predictions)?;
    println!("auroc {:.6} auprc {:.6}", eval.auroc, eval.auprc);
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = a.run.config()?;
    if let Some(n) = a.seeds {
        cfg.seeds = n;
    }
    cfg.validate()?;
    let values = if a.values.is_empty() {
        a.axis.default_values()
    } else {
        a.values.clone()
    };
    let records = a.run.records()?;
    let knowledge = a.run.knowledge()?;
    let seeds = seed_list(a.run.seed, cfg.seeds);
    let settings = ablate(&records, knowledge.as_ref(), &cfg, a.axis, &values, &seeds)?;
    write_tables(a.run.out_dir()?, &settings)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::BuildGraphs(a) => cmd_build_graphs(a, false),
        Command::Augment(a) => cmd_build_graphs(a, true),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

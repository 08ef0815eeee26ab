use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use textgsl::corpus::{
    load_corpus, load_manifest, load_stopwords, make_validation_split, preprocess, write_manifest, Document, LabelSpace, Split,
};
use textgsl::embeddings::{load_pretrained, EmbeddingTable};
use textgsl::graph::conllu::load_conllu;
use textgsl::graph::{read_graphs, write_graphs, GraphBuilder, TextGraph};
use textgsl::model::TextGsl;
use textgsl::train::experiments::{export_adaptive_params, gammas_csv, run_ablation, run_ratio_sweep};
use textgsl::train::gradcheck::tiny_gradcheck;
use textgsl::train::{evaluate, train, Dataset, ProgressLog, TrainError};

use crate::args::*;
use crate::config::{self, ConfigFile, DataSection, Resolved};
use crate::error::{require_file, CliError};
use crate::manifest::{ManifestBuilder, RunManifest};

pub const DOCS_FILE: &str = "docs.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const PROGRESS_FILE: &str = "progress.log";

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create output directory `{}`: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::write(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    path.map(ConfigFile::load).transpose().map(Option::unwrap_or_default)
}

fn read_graph_file(path: &Path) -> Result<Vec<TextGraph>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot open `{}`: {e}", path.display())))?;
    read_graphs(BufReader::new(f)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path, dim: usize, keep: &HashSet<String>, oov_seed: u64) -> Result<EmbeddingTable, CliError> {
    let mut table = load_pretrained(path, dim, Some(keep))?;
    table.set_oov_seed(oov_seed);
    log::info!("{}: {} of {} words have vectors", path.display(), table.len(), keep.len());
    Ok(table)
}

struct Inputs {
    docs: Vec<Document>,
    graphs: Vec<TextGraph>,
    table: EmbeddingTable,
}

fn load_inputs(data: &DataSection, dim: usize, oov_seed: u64) -> Result<Inputs, CliError> {
    let docs = load_manifest(data.path("docs")?)?;
    let graphs = read_graph_file(data.path("graphs")?)?;
    let keep: HashSet<String> = graphs.iter().flat_map(|g| g.nodes.iter().cloned()).collect();
    let table = load_table(data.path("embeddings")?, dim, &keep, oov_seed)?;
    Ok(Inputs { docs, graphs, table })
}

fn with_data_inputs(mut b: ManifestBuilder, data: &DataSection) -> Result<ManifestBuilder, CliError> {
    for role in ["docs", "graphs", "embeddings"] {
        let p = data.path(role)?.to_path_buf();
        b = b.input(role, &p)?;
    }
    Ok(b)
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    require_file(&a.corpus, "--corpus")?;
    if let Some(p) = &a.labels {
        require_file(p, "--labels")?;
    }
    if let Some(p) = &a.stopwords {
        require_file(p, "--stopwords")?;
    }
    if a.min_freq == 0 {
        return Err(CliError::Usage("--min-freq must be at least 1".into()));
    }
    if let Some(r) = a.val_ratio {
        if !(r > 0.0 && r < 1.0) {
            return Err(CliError::Usage(format!("--val-ratio must lie in (0, 1), got {r}")));
        }
    }
    let resolved = json!({"min_freq": a.min_freq, "val_ratio": a.val_ratio, "seed": a.seed});
    let mut b = ManifestBuilder::new("ingest", None, &resolved).input("corpus", &a.corpus)?;
    if let Some(p) = &a.labels {
        b = b.input("labels", p)?;
    }
    if let Some(p) = &a.stopwords {
        b = b.input("stopwords", p)?;
    }
    let manifest = b.finish(&[DOCS_FILE, VOCAB_FILE]);

    let docs = load_corpus(&a.corpus, a.labels.as_deref())?;
    let stops = a.stopwords.as_deref().map(load_stopwords).transpose()?;
    let n_raw = docs.len();
    let (mut docs, vocab) = preprocess(docs, stops.as_ref(), a.min_freq)?;
    if let Some(r) = a.val_ratio {
        docs = make_validation_split(docs, r, a.seed)?;
    }
    out_dir(&a.out)?;
    let docs_path = a.out.join(DOCS_FILE);
    let f = File::create(&docs_path).map_err(|e| CliError::write(&docs_path, e))?;
    let mut w = BufWriter::new(f);
    write_manifest(&mut w, &docs).and_then(|_| w.flush()).map_err(|e| CliError::write(&docs_path, e))?;
    let vocab_path = a.out.join(VOCAB_FILE);
    let mut buf = Vec::new();
    vocab.write_tsv(&mut buf).map_err(|e| CliError::write(&vocab_path, e))?;
    write_file(&vocab_path, buf)?;
    manifest.write(&a.out)?;
    let count = |s: Split| docs.iter().filter(|d| d.split == s).count();
    println!(
        "{} of {n_raw} documents kept (train {}, val {}, test {}), {} words; manifest {}",
        docs.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        vocab.len(),
        manifest.hash
    );
    Ok(())
}

pub fn build_graphs(a: &BuildGraphsArgs) -> Result<(), CliError> {
    require_file(&a.docs, "--docs")?;
    require_file(&a.embeddings, "--embeddings")?;
    if let Some(p) = &a.parses {
        require_file(p, "--parses")?;
    }
    if a.window < 2 {
        return Err(CliError::Usage(format!("--window must be at least 2, got {}", a.window)));
    }
    if !(a.sem_threshold > 0.0 && a.sem_threshold <= 1.0) {
        return Err(CliError::Usage(format!("--sem-threshold must lie in (0, 1], got {}", a.sem_threshold)));
    }
    if a.embedding_dim == 0 {
        return Err(CliError::Usage("--embedding-dim must be at least 1".into()));
    }
    let resolved = json!({
        "window": a.window,
        "sem_threshold": a.sem_threshold,
        "embedding_dim": a.embedding_dim,
        "oov_seed": a.oov_seed,
    });
    let mut b = ManifestBuilder::new("build-graphs", None, &resolved)
        .input("docs", &a.docs)?
        .input("embeddings", &a.embeddings)?;
    if let Some(p) = &a.parses {
        b = b.input("parses", p)?;
    }
    let manifest = b.finish(&[GRAPHS_FILE]);

    let docs = load_manifest(&a.docs)?;
    let parses = a.parses.as_deref().map(load_conllu).transpose()?.unwrap_or_default();
    let keep: HashSet<String> = docs.iter().flat_map(|d| d.tokens.iter().cloned()).collect();
    let table = load_table(&a.embeddings, a.embedding_dim, &keep, a.oov_seed)?;
    let builder = GraphBuilder {
        window: a.window,
        sem_threshold: a.sem_threshold,
    };
    let mut graphs = Vec::with_capacity(docs.len());
    for d in &docs {
        graphs.push(builder.build(d, &table, parses.get(&d.id))?);
    }
    out_dir(&a.out)?;
    let path = a.out.join(GRAPHS_FILE);
    let f = File::create(&path).map_err(|e| CliError::write(&path, e))?;
    let mut w = BufWriter::new(f);
    write_graphs(&mut w, &graphs).and_then(|_| w.flush()).map_err(|e| CliError::write(&path, e))?;
    manifest.write(&a.out)?;
    let edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
    println!("{} graphs, {edges} directed edges; manifest {}", graphs.len(), manifest.hash);
    Ok(())
}

/// Config file, data section and resolved settings of a training-type command.
struct Setup {
    config_path: Option<PathBuf>,
    data: DataSection,
    resolved: Resolved,
}

fn setup(config: Option<&Path>, data: &DataArgs, flags: &TrainFlags) -> Result<(Setup, ConfigFile), CliError> {
    let file = load_config(config)?;
    let data = file.data.merged(&data.section());
    let resolved = config::resolve(&file, &data, &flags.overrides(), flags.dataset.as_deref())?;
    Ok((
        Setup {
            config_path: config.map(Path::to_path_buf),
            data,
            resolved,
        },
        file,
    ))
}

fn dataset(s: &Setup) -> Result<Dataset<f64>, CliError> {
    let inputs = load_inputs(&s.data, s.resolved.embedding_dim, s.resolved.oov_seed)?;
    let labels = LabelSpace::from_docs(&inputs.docs);
    Ok(Dataset::build(&inputs.docs, &inputs.graphs, &inputs.table, labels)?)
}

pub fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let (s, _) = setup(a.config.as_deref(), &a.data, &a.flags)?;
    let manifest = with_data_inputs(ManifestBuilder::new("train", s.config_path.as_deref(), &s.resolved), &s.data)?
        .finish(&[CHECKPOINT_FILE, REPORT_FILE, PROGRESS_FILE]);
    let data = dataset(&s)?;
    out_dir(&a.out)?;
    let progress_path = a.out.join(PROGRESS_FILE);
    let f = File::create(&progress_path).map_err(|e| CliError::write(&progress_path, e))?;
    let mut progress = ProgressLog(BufWriter::new(f));
    let mut outcome = train(&data, &s.resolved.model, &s.resolved.train, &mut progress)?;
    progress.0.flush().map_err(|e| CliError::write(&progress_path, e))?;
    outcome.report.manifest = Some(manifest.hash.clone());
    let extra = json!({
        "manifest": manifest.hash,
        "classes": data.labels.labels(),
        "dataset": s.resolved.dataset,
        "oov_seed": s.resolved.oov_seed,
        "train": s.resolved.train,
    });
    let ckpt = a.out.join(CHECKPOINT_FILE);
    outcome
        .model
        .save(&ckpt, outcome.report.best_epoch as u64, extra)
        .map_err(|e| CliError::write(&ckpt, e))?;
    write_file(&a.out.join(REPORT_FILE), outcome.report.to_json())?;
    manifest.write(&a.out)?;
    let r = &outcome.report;
    match r.test_accuracy() {
        Some(acc) => println!("best epoch {} (val {:.4}), test accuracy {acc:.4}; manifest {}", r.best_epoch, r.best_val_acc, manifest.hash),
        None => println!("best epoch {} (val {:.4}), no test split; manifest {}", r.best_epoch, r.best_val_acc, manifest.hash),
    }
    Ok(())
}

struct Checkpoint {
    model: TextGsl<f64>,
    classes: Vec<String>,
    oov_seed: u64,
    manifest: Option<String>,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "--checkpoint")?;
    let (model, header) =
        TextGsl::<f64>::load(path).map_err(|e| CliError::Runtime(format!("checkpoint `{}`: {e}", path.display())))?;
    let extra = &header.hyperparameters["extra"];
    let classes: Vec<String> = serde_json::from_value(extra["classes"].clone()).map_err(|_| {
        CliError::Runtime(format!("checkpoint `{}` does not record its class labels", path.display()))
    })?;
    if classes.len() != model.spec().classes {
        return Err(CliError::Runtime(format!(
            "checkpoint `{}` lists {} labels for {} classes",
            path.display(),
            classes.len(),
            model.spec().classes
        )));
    }
    Ok(Checkpoint {
        model,
        classes,
        oov_seed: extra["oov_seed"].as_u64().unwrap_or(0),
        manifest: extra["manifest"].as_str().map(str::to_string),
    })
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    manifest: &'a str,
    checkpoint_manifest: Option<&'a str>,
    evaluation: textgsl::train::Evaluation,
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let file = load_config(a.config.as_deref())?;
    let mut data = file.data.merged(&a.data.section());
    data.oov_seed = Some(data.oov_seed.unwrap_or(ckpt.oov_seed));
    let dim = ckpt.model.spec().input_dim;
    let resolved = json!({"split": a.split, "embedding_dim": dim, "oov_seed": data.oov_seed()});
    let manifest = with_data_inputs(
        ManifestBuilder::new("eval", a.config.as_deref(), &resolved).input("checkpoint", &a.checkpoint)?,
        &data,
    )?
    .finish(if a.out.is_some() { &["eval.json"] } else { &[] });

    let inputs = load_inputs(&data, dim, data.oov_seed())?;
    let found: BTreeSet<&str> = inputs.graphs.iter().map(|g| g.label.as_str()).collect();
    if found.len() != ckpt.classes.len() {
        return Err(TrainError::ClassMismatch {
            model: ckpt.classes.len(),
            data: found.len(),
        }
        .into());
    }
    if let Some(l) = found.iter().find(|l| !ckpt.classes.iter().any(|c| c == *l)) {
        return Err(CliError::Usage(format!(
            "label `{l}` is not one of the checkpoint's classes {:?}",
            ckpt.classes
        )));
    }
    let ds = Dataset::build(&inputs.docs, &inputs.graphs, &inputs.table, LabelSpace::from_labels(ckpt.classes.clone()))?;
    if ds.count(a.split) == 0 {
        return Err(CliError::Usage(format!("the {} split has no documents", a.split)));
    }
    let evaluation = evaluate(&ckpt.model, &ds, a.split)?;
    let record = EvalRecord {
        manifest: &manifest.hash,
        checkpoint_manifest: ckpt.manifest.as_deref(),
        evaluation,
    };
    let text = pretty(&record);
    print!("{text}");
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write_file(&dir.join("eval.json"), &text)?;
        manifest.write(dir)?;
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<(), CliError> {
    let (mut s, file) = setup(a.config.as_deref(), &a.data, &a.flags)?;
    let seeds = config::seeds(&file, a.seeds.as_deref())?;
    s.resolved.seeds = Some(seeds.clone());
    let manifest = with_data_inputs(ManifestBuilder::new("ablate", s.config_path.as_deref(), &s.resolved), &s.data)?
        .finish(&["ablation.csv", "ablation_runs.csv", "ablation.json"]);
    let data = dataset(&s)?;
    let table = run_ablation(&data, &s.resolved.model, &s.resolved.train, &seeds)?;
    out_dir(&a.out)?;
    write_file(&a.out.join("ablation.csv"), table.to_csv())?;
    write_file(&a.out.join("ablation_runs.csv"), table.runs_csv())?;
    write_file(&a.out.join("ablation.json"), pretty(&json!({"manifest": manifest.hash, "table": table})))?;
    manifest.write(&a.out)?;
    print!("{}", table.to_csv());
    Ok(())
}

pub fn export_gammas(a: &ExportGammasArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let manifest = ManifestBuilder::new("export-gammas", None, &json!({}))
        .input("checkpoint", &a.checkpoint)?
        .finish(if a.out.is_some() { &["gammas.json", "gammas.csv"] } else { &[] });
    let weights = export_adaptive_params(&ckpt.model)?;
    let text = pretty(&json!({
        "manifest": manifest.hash,
        "checkpoint_manifest": ckpt.manifest,
        "weights": weights,
    }));
    let csv = gammas_csv(&weights);
    match a.format {
        Format::Json => print!("{text}"),
        Format::Csv => print!("{csv}"),
    }
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write_file(&dir.join("gammas.json"), &text)?;
        write_file(&dir.join("gammas.csv"), &csv)?;
        manifest.write(dir)?;
    }
    Ok(())
}

pub fn ratio_sweep(a: &RatioSweepArgs) -> Result<(), CliError> {
    let (mut s, file) = setup(a.config.as_deref(), &a.data, &a.flags)?;
    let ratios = config::ratios(&file, a.ratios.as_deref())?;
    s.resolved.ratios = Some(ratios.clone());
    let manifest = with_data_inputs(ManifestBuilder::new("ratio-sweep", s.config_path.as_deref(), &s.resolved), &s.data)?
        .finish(&["sweep.csv", "sweep.json"]);
    let data = dataset(&s)?;
    let sweep = run_ratio_sweep(&data, &s.resolved.model, &s.resolved.train, &ratios)?;
    out_dir(&a.out)?;
    write_file(&a.out.join("sweep.csv"), sweep.to_csv())?;
    write_file(&a.out.join("sweep.json"), pretty(&json!({"manifest": manifest.hash, "sweep": sweep})))?;
    manifest.write(&a.out)?;
    print!("{}", sweep.to_csv());
    println!("spearman {:.4}", sweep.spearman);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let manifest: RunManifest = ManifestBuilder::new("gradcheck", None, &json!({"scale": "tiny", "seed": a.seed}))
        .finish(if a.out.is_some() { &["gradcheck.json"] } else { &[] });
    let report = tiny_gradcheck(a.seed)?;
    for l in &report.layers {
        println!(
            "{:<13} tensors {:>2}  coords {:>4}  max rel error {:.3e}  {}",
            l.layer,
            l.tensors,
            l.coordinates,
            l.max_rel_error,
            if l.passed { "pass" } else { "FAIL" }
        );
    }
    println!(
        "max rel error {:.3e} (tolerance {:e}, differences in {}): {}",
        report.max_rel_error,
        report.tolerance,
        report.reference,
        if report.passed { "pass" } else { "FAIL" }
    );
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write_file(&dir.join("gradcheck.json"), pretty(&json!({"manifest": manifest.hash, "report": report})))?;
        manifest.write(dir)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

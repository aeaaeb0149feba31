use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use typeflow::corpusgen::{generate_corpus, GenSpec};
use typeflow::eval::{evaluate, render_svg, render_table, throughput_bench};
use typeflow::frontend::load_ast_json;
use typeflow::model::{top_k, Batch, Dims, Model, ModelConfig, Preset};
use typeflow::numeric::{grad_check, Tape};
use typeflow::pipeline::{
    build_vocabs, example, extract_file, extract_sources, load_checkpoint, load_sources, make_dataset,
    save_checkpoint, split_files, train, Checkpoint, CheckpointError, ExtractedFile, PipelineError, SourceFile,
    SplitSpec, TrainOptions, VocabLimits,
};
use typeflow::tfg::{build_tfg, collect_function_decls, TfgNodeKind};
use typeflow::vocab::{BpeModel, VocabKind, VocabSet, Vocabulary, UNKNOWN};

#[derive(Parser)]
#[command(name = "typeflow", version, about = "Type inference for JavaScript/TypeScript with graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus and its manifest.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the type flow graph of a file, or of every file in a directory.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file (single input ending in .json) or directory.
        #[arg(long)]
        out: PathBuf,
        /// Read AST JSON documents instead of source text.
        #[arg(long)]
        ast_json: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Vocabulary commands.
    Vocab {
        #[command(subcommand)]
        command: VocabCommand,
    },
    /// Train a model.
    Train(TrainArgs),
    /// Ranked type predictions for every identifier of a file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Top-1/top-5 accuracy on the test files of a data directory.
    Eval {
        /// One or more checkpoints; each becomes a table row.
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Also write a bar chart of the results.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, value_parser = ["table", "json"], default_value = "table")]
        format: String,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Inference throughput on the test files of a data directory.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 6)]
        repeats: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Compare analytic gradients with finite differences on a small graph.
    GradCheck {
        /// Architecture, as for `train`.
        #[arg(long)]
        config: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "K", default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum VocabCommand {
    /// Build vocabularies and BPE merges from training sources.
    Build {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 10000)]
        names: usize,
        #[arg(long, default_value_t = 10000)]
        merges: usize,
        #[arg(long, default_value_t = 100)]
        types: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: cgnn, rgnn, rgat, rgnn-ns, rgnn-ctx, rgnn-ns-ctx, rgnn-nef or rgat-nef.
    #[arg(long)]
    config: Preset,
    /// Propagation steps.
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sources, either in train/, valid/ and test/ subdirectories or split
    /// 80/10/10 by the seed.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Use the vocabularies written by `vocab build` instead of building them.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Set every layer width from this hidden size instead of the defaults.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 10000)]
    names: usize,
    #[arg(long, default_value_t = 10000)]
    merges: usize,
    #[arg(long, default_value_t = 100)]
    types: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(ref m) if !is_data_error(m) => Failure::Internal(e.to_string()),
            PipelineError::Divergence(_) => Failure::Internal(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<typeflow::model::ModelError> for Failure {
    fn from(e: typeflow::model::ModelError) -> Self {
        if is_data_error(&e) {
            Failure::Data(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<typeflow::eval::EvalError> for Failure {
    fn from(e: typeflow::eval::EvalError) -> Self {
        match e {
            typeflow::eval::EvalError::Model(m) => m.into(),
            typeflow::eval::EvalError::Pipeline(p) => p.into(),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn is_data_error(e: &typeflow::model::ModelError) -> bool {
    use typeflow::model::ModelError::*;
    matches!(e, Config(_) | MissingVocabEntry { .. } | MissingToken { .. } | Params { .. })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, contents).map_err(io(path))
}

fn print_json<T: Serialize>(v: &T) {
    print_out(&serde_json::to_string_pretty(v).expect("output serializes"));
}

fn print_out(s: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}").and_then(|_| out.flush());
}

fn set_threads(jobs: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .map_err(|e| Failure::Internal(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenCorpus { spec, out, jobs } => {
            set_threads(jobs)?;
            let text = std::fs::read_to_string(&spec).map_err(io(&spec))?;
            let spec = GenSpec::from_json_str(&text).map_err(|e| Failure::Data(e.to_string()))?;
            let corpus = generate_corpus(&spec).map_err(|e| Failure::Data(e.to_string()))?;
            corpus.write_to(&out).map_err(io(&out))?;
            eprintln!("wrote {} files to {}", corpus.files.len(), out.display());
            Ok(())
        }
        Command::Extract { input, out, ast_json, jobs } => {
            set_threads(jobs)?;
            extract_cmd(&input, &out, ast_json)
        }
        Command::Vocab { command: VocabCommand::Build { train, names, merges, types, out } } => {
            set_threads(1)?;
            let (files, _) = extract_sources(&sources_in(&train)?);
            if files.is_empty() {
                return Err(Failure::Data(format!("{}: no usable training files", train.display())));
            }
            let vocab = build_vocabs(&files, &VocabLimits { names, merges, types }).map_err(PipelineError::from)?;
            save_vocab(&out, &vocab)?;
            eprintln!(
                "{} names, {} segments, {} node features, {} edge features, {} types",
                vocab.names.len(),
                vocab.segments.len(),
                vocab.node_features.len(),
                vocab.edge_features.len(),
                vocab.types.len()
            );
            Ok(())
        }
        Command::Train(args) => {
            set_threads(1)?;
            train_cmd(args)
        }
        Command::Predict { model, input, topk } => {
            set_threads(1)?;
            predict_cmd(&model, &input, topk)
        }
        Command::Eval { model, data, plot, format, batch } => {
            set_threads(1)?;
            let mut rows = Vec::new();
            let mut reports = BTreeMap::new();
            for path in &model {
                let ck = load_checkpoint(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
                let examples = test_examples(&data, &ck)?;
                let m = ck.model::<f32>()?;
                let report = evaluate(&m, &ck.vocab, &examples, &ck.meta.type_counts, batch)?;
                let name = format!("{} K={}", ck.config.preset_of().map(|p| p.name()).unwrap_or("model"), ck.config.k);
                reports.insert(path.display().to_string(), report.clone());
                rows.push((name, report));
            }
            if let Some(p) = plot {
                write_file(&p, render_svg(&rows))?;
            }
            if format == "json" {
                print_json(&reports);
            } else {
                print_out(render_table(&rows).trim_end());
            }
            Ok(())
        }
        Command::Bench { model, data, repeats, batch } => {
            set_threads(1)?;
            let ck = load_checkpoint(&model).map_err(|e| Failure::Data(format!("{}: {e}", model.display())))?;
            let files = test_sources(&data, &ck)?;
            let m = ck.model::<f32>()?;
            let report = throughput_bench(&m, &ck.vocab, &files, batch, repeats)?;
            eprintln!(
                "{} files: {:.1} ± {:.1} files/s (inference), {:.1} ± {:.1} files/s (with extraction)",
                report.files, report.inference_mean, report.inference_std, report.inclusive_mean, report.inclusive_std
            );
            print_json(&report);
            Ok(())
        }
        Command::GradCheck { config, seed, k, tolerance } => {
            set_threads(1)?;
            grad_check_cmd(config, seed, k, tolerance)
        }
    }
}

fn sources_in(dir: &Path) -> Result<Vec<SourceFile>, Failure> {
    load_sources(dir).map_err(io(dir))
}

fn extract_cmd(input: &Path, out: &Path, ast_json: bool) -> Result<(), Failure> {
    let single = input.is_file();
    let inputs: Vec<PathBuf> = if single {
        vec![input.to_path_buf()]
    } else {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(io(input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
                p.is_file() && if ast_json { ext == "json" } else { ext == "ts" || ext == "js" }
            })
            .collect();
        v.sort();
        v
    };
    use rayon::prelude::*;
    let graphs: Vec<Result<(PathBuf, String), Failure>> = inputs
        .par_iter()
        .map(|path| {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("input").to_string();
            let bytes = std::fs::read(path).map_err(io(path))?;
            let data = |e: &dyn std::fmt::Display| Failure::Data(format!("{}: {e}", path.display()));
            let graph = if ast_json {
                let ast = load_ast_json(&bytes).map_err(|e| data(&e))?;
                build_tfg(&ast, &collect_function_decls(&ast), &name).map_err(|e| data(&e))?
            } else {
                let text = String::from_utf8(bytes).map_err(|e| data(&e))?;
                extract_file(&name, &text).map_err(|e| data(&e))?.graph
            };
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
            let target = if single && out.extension().is_some_and(|e| e == "json") {
                out.to_path_buf()
            } else {
                out.join(format!("{stem}.tfg.json"))
            };
            Ok((target, graph.to_json_string()))
        })
        .collect();
    let mut failures = 0;
    for g in graphs {
        match g {
            Ok((target, json)) => write_file(&target, json)?,
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(Failure::Data(format!("{failures} of {} inputs failed", inputs.len())));
    }
    Ok(())
}

const VOCAB_FILES: [(&str, VocabKind); 5] = [
    ("names.json", VocabKind::Name),
    ("segments.json", VocabKind::Segment),
    ("node_features.json", VocabKind::NodeFeature),
    ("edge_features.json", VocabKind::EdgeFeature),
    ("types.json", VocabKind::Type),
];

fn save_vocab(dir: &Path, v: &VocabSet) -> Result<(), Failure> {
    let parts = [&v.names, &v.segments, &v.node_features, &v.edge_features, &v.types];
    for ((file, _), voc) in VOCAB_FILES.iter().zip(parts) {
        write_file(&dir.join(file), voc.to_json_string())?;
    }
    write_file(&dir.join("bpe.json"), v.bpe.to_json_string())
}

fn load_vocab(dir: &Path) -> Result<VocabSet, Failure> {
    let read = |file: &str| {
        let p = dir.join(file);
        std::fs::read_to_string(&p).map_err(io(&p))
    };
    let mut vocs: Vec<Vocabulary> = Vec::new();
    for (file, kind) in VOCAB_FILES {
        vocs.push(Vocabulary::from_json_str(kind, &read(file)?).map_err(|e| Failure::Data(format!("{file}: {e}")))?);
    }
    let mut bpe = BpeModel::from_json_str(&read("bpe.json")?).map_err(|e| Failure::Data(format!("bpe.json: {e}")))?;
    let mut it = vocs.into_iter();
    let mut next = || it.next().expect("five vocabularies");
    let (names, segments, node_features, edge_features, types) = (next(), next(), next(), next(), next());
    bpe.symbols = segments.entries().iter().filter(|s| s.as_str() != UNKNOWN).cloned().collect();
    Ok(VocabSet { names, segments, node_features, edge_features, types, bpe })
}

/// Training, validation and test files of a data directory: its `train/`,
/// `valid/` and `test/` subdirectories when `train/` exists, otherwise a
/// seeded split of the files directly inside it.
struct Splits {
    train: Vec<ExtractedFile>,
    valid: Vec<ExtractedFile>,
    test: Vec<ExtractedFile>,
    split: Option<SplitSpec>,
}

fn optional_dir(dir: &Path) -> Result<Vec<SourceFile>, Failure> {
    if dir.is_dir() {
        sources_in(dir)
    } else {
        Ok(Vec::new())
    }
}

fn load_splits(data: &Path, seed: u64) -> Result<Splits, Failure> {
    if !data.is_dir() {
        return Err(Failure::Data(format!("{}: not a directory", data.display())));
    }
    if data.join("train").is_dir() {
        let ex = |d: &str| -> Result<Vec<ExtractedFile>, Failure> { Ok(extract_sources(&optional_dir(&data.join(d))?).0) };
        return Ok(Splits { train: ex("train")?, valid: ex("valid")?, test: ex("test")?, split: None });
    }
    let spec = SplitSpec { seed, ..SplitSpec::default() };
    let (files, _) = extract_sources(&sources_in(data)?);
    let (train, valid, test) = split_files(files, &spec);
    Ok(Splits { train, valid, test, split: Some(spec) })
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let splits = load_splits(&a.data, a.seed)?;
    if splits.train.is_empty() {
        return Err(Failure::Data(format!("{}: no usable training files", a.data.display())));
    }
    let vocab = match &a.vocab {
        Some(dir) => load_vocab(dir)?,
        None => build_vocabs(&splits.train, &VocabLimits { names: a.names, merges: a.merges, types: a.types })
            .map_err(PipelineError::from)?,
    };
    let data = make_dataset(&splits.train, &splits.valid, &splits.test, vocab)?;
    let dims = a.width.map(Dims::uniform).unwrap_or_default();
    let config = ModelConfig::with_dims(a.config, data.vocab.types.len(), a.k, dims);
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = TrainOptions { batch_size: a.batch, epochs: a.epochs, lr: a.lr, seed: a.seed, parallel: false };
    eprintln!(
        "training {} (K={}) on {} files, validating on {}, {} types",
        a.config.name(),
        a.k,
        data.train.len(),
        data.valid.len(),
        data.vocab.types.len()
    );
    let mut outcome = train::<f32>(config, &data, &opts, |r| print_out(&r.to_json_line()))?;
    outcome.checkpoint.meta.split = splits.split;
    save_checkpoint(&a.out, &outcome.checkpoint).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    eprintln!("kept epoch {} -> {}", outcome.checkpoint.meta.epoch, a.out.display());
    Ok(())
}

fn test_sources(data: &Path, ck: &Checkpoint) -> Result<Vec<SourceFile>, Failure> {
    if data.join("test").is_dir() {
        return sources_in(&data.join("test"));
    }
    let all = sources_in(data)?;
    match &ck.meta.split {
        Some(spec) => {
            let (kept, _) = extract_sources(&all);
            let names: std::collections::BTreeSet<String> =
                split_files(kept, spec).2.into_iter().map(|f| f.file_id).collect();
            Ok(all.into_iter().filter(|s| names.contains(&s.name)).collect())
        }
        None => Ok(all),
    }
}

fn test_examples(data: &Path, ck: &Checkpoint) -> Result<Vec<typeflow::pipeline::Example>, Failure> {
    let (files, _) = extract_sources(&test_sources(data, ck)?);
    if files.is_empty() {
        return Err(Failure::Data(format!("{}: no test files", data.display())));
    }
    files.iter().map(|f| example(f, &ck.vocab, true).map_err(Failure::from)).collect()
}

#[derive(Serialize)]
struct Ranked {
    #[serde(rename = "type")]
    ty: String,
    probability: f64,
}

#[derive(Serialize)]
struct Prediction {
    name: String,
    span: [usize; 2],
    node: usize,
    types: Vec<Ranked>,
}

fn predict_cmd(model: &Path, input: &Path, k: usize) -> Result<(), Failure> {
    let ck = load_checkpoint(model).map_err(|e| Failure::Data(format!("{}: {e}", model.display())))?;
    let text = std::fs::read_to_string(input).map_err(io(input))?;
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("input");
    let f = extract_file(name, &text)?;
    let ex = example(&f, &ck.vocab, true)?;
    let m = ck.model::<f32>()?;
    let logits = m.node_logits(&Batch::pack(&[&ex.input]))?;
    let mut out = Vec::new();
    for n in ex.graph.nodes.iter().filter(|n| n.kind == TfgNodeKind::IdentNode) {
        let Some(&t) = f.ident_token.get(&n.id) else { continue };
        let span = f.tokens[t].span;
        let types = top_k(logits.row(n.id), k)
            .into_iter()
            .map(|(i, p)| Ranked { ty: ck.vocab.types.lookup(i).unwrap_or_default().to_string(), probability: p as f64 })
            .collect();
        out.push(Prediction { name: n.feature.clone(), span: [span.start, span.end], node: n.id, types });
    }
    print_json(&out);
    Ok(())
}

#[derive(Serialize)]
struct GradCheckOutput {
    preset: String,
    k: usize,
    checked: usize,
    max_rel_error: f64,
    worst: Option<(String, usize)>,
    tolerance: f64,
    pass: bool,
}

fn grad_check_cmd(preset: Preset, seed: u64, k: usize, tolerance: f64) -> Result<(), Failure> {
    let mut spec = GenSpec::new(seed, 1);
    spec.functions_per_file = (1, 1);
    spec.statements_per_function = (2, 3);
    let file = &generate_corpus(&spec).map_err(|e| Failure::Internal(e.to_string()))?.files[0];
    let f = extract_file(&file.name, &file.source)?;
    let vocab = build_vocabs(std::slice::from_ref(&f), &VocabLimits::default()).map_err(PipelineError::from)?;
    let data = make_dataset(std::slice::from_ref(&f), &[], &[], vocab)?;
    let config = ModelConfig::with_dims(preset, data.vocab.types.len(), k, Dims::uniform(4));
    let model = Model::<f64>::init(config, data.vocab_sizes(), seed)?;
    let batch = Batch::pack(&[&data.train[0].input]);
    let (_, grads) = model.loss_and_grads(&batch)?;
    let loss = |params: &typeflow::numeric::ParamSet<f64>| {
        let mut t = Tape::new(params);
        let probe = Model { params: params.clone(), ..model.clone() };
        let l = probe.loss(&mut t, &batch).expect("loss of a model that already ran");
        t.value(l).data()[0]
    };
    let r = grad_check(&model.params, &grads, loss, 1e-4, Some(40));
    let pass = r.max_rel_error <= tolerance;
    print_json(&GradCheckOutput {
        preset: preset.name().to_string(),
        k,
        checked: r.checked,
        max_rel_error: r.max_rel_error,
        worst: r.worst,
        tolerance,
        pass,
    });
    if pass {
        Ok(())
    } else {
        Err(Failure::Internal(format!("relative gradient error {} exceeds {tolerance}", r.max_rel_error)))
    }
}

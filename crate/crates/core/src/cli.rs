//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_dataset, load_document};
use crate::document::parse_document;
use crate::edges::edges_csv;
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::head::DecodeMode;
use crate::model::{Model, ModelConfig};
use crate::regions::{attach_regions, extract_regions, load_gray_png, RegionConfig};
use crate::render::{render_overlay, OverlayScene, RenderMode, SceneLink};
use crate::synth::{make_synthetic_dataset, write_dataset, SynthSpec};
use crate::train::{evaluate, predict, trace_csv, train, Prediction, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FORMLINK_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "formlink", version, about = "Region-aware question/answer link extraction for forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract paragraph and table-cell regions for one annotated page.
    Regions(RegionsArgs),
    /// Write the spatial indicator vector of every question/answer pair as CSV.
    EncodeEdges(PageArgs),
    /// Train a model on a directory of annotated pages.
    Train(TrainArgs),
    /// Score a model against gold links; prints precision/recall/F1 as JSON.
    Eval(EvalArgs),
    /// Write predicted links for every page.
    Predict(PredictArgs),
    /// Draw an SVG overlay of one page.
    Render(RenderArgs),
    /// Generate a synthetic annotated corpus with page images.
    Synth(SynthArgs),
}

fn parse_page_size(s: &str) -> std::result::Result<(f64, f64), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (w, h) = (num(w)?, num(h)?);
    if w > 0.0 && h > 0.0 {
        Ok((w, h))
    } else {
        Err("page size must be positive".into())
    }
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((num(a)?, num(b)?)),
        None => num(s).map(|v| (v, v)),
    }
}

#[derive(Debug, Args)]
struct PageArgs {
    /// FUNSD-style annotation file.
    #[arg(long)]
    doc: PathBuf,
    /// Page image (defaults to the .png next to the annotation file).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Page size as WIDTHxHEIGHT (defaults to the image size, else the box extent).
    #[arg(long, value_parser = parse_page_size)]
    page_size: Option<(f64, f64)>,
    /// Output file (defaults to a file in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegionsArgs {
    #[command(flatten)]
    page: PageArgs,
    /// Paragraph merge distance along x, in median word heights.
    #[arg(long, default_value_t = 2.0)]
    h_ths: f64,
    /// Paragraph merge distance along y, in median word heights.
    #[arg(long, default_value_t = 1.0)]
    v_ths: f64,
}

#[derive(Debug, Args)]
struct ModelInput {
    /// Directory of annotation files (or a single file).
    #[arg(long)]
    data: PathBuf,
    /// JSON-lines entity embeddings; without it the built-in featurizer is used.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_parser = parse_page_size)]
    page_size: Option<(f64, f64)>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Held-out pages evaluated during and after training.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    type_dim: Option<usize>,
    #[arg(long)]
    hash_dim: Option<usize>,
    /// Output directory for model.ckpt, loss.csv and eval.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: ModelInput,
    #[arg(long, default_value = "argmax")]
    decode: DecodeMode,
    /// Also write the full report, with per-page counts, to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: ModelInput,
    #[arg(long, default_value = "argmax")]
    decode: DecodeMode,
    /// Directory receiving one <doc_id>.pred.json per page.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    doc: PathBuf,
    /// Prediction file from `predict`; without it the gold links are drawn.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, default_value = "predictions")]
    mode: RenderMode,
    #[arg(long, value_parser = parse_page_size)]
    page_size: Option<(f64, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    docs: Option<usize>,
    /// Table rows, N or MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    rows: Option<(usize, usize)>,
    /// Table columns, N or MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    cols: Option<(usize, usize)>,
    #[arg(long)]
    table_prob: Option<f64>,
    /// Free-text pairs per page, N or MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    paragraph_pairs: Option<(usize, usize)>,
    /// Stacked free-text pairs per page, N or MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    stacked_pairs: Option<(usize, usize)>,
    #[arg(long)]
    ambiguous: Option<usize>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn out_path(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out_dir().join(default_name))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn doc_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "doc".into())
}

fn load_page(args: &PageArgs, cfg: &RegionConfig) -> Result<crate::document::Document> {
    match &args.image {
        None => load_document(&args.doc, args.page_size, cfg),
        Some(img_path) => {
            let bytes = std::fs::read(&args.doc).map_err(|e| Error::io(&args.doc, e))?;
            let image = load_gray_png(img_path)?;
            let size = args.page_size.unwrap_or((image.width() as f64, image.height() as f64));
            let mut doc = parse_document(&doc_stem(&args.doc), &bytes, Some(size))?.document;
            doc.image_path = Some(img_path.clone());
            let regions = extract_regions(&doc, Some(&image), cfg);
            attach_regions(&mut doc, regions);
            Ok(doc)
        }
    }
}

fn provider(path: &Option<PathBuf>, config: &ModelConfig) -> Result<EmbeddingProvider> {
    EmbeddingProvider::open(path.as_deref(), config.feature_dim, config.hash_dim)
}

fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_checkpoint(&bytes)
}

fn cmd_regions(args: RegionsArgs) -> Result<()> {
    let cfg = RegionConfig { h_ths: args.h_ths, v_ths: args.v_ths, ..Default::default() };
    let doc = load_page(&args.page, &cfg)?;
    let entities: Vec<_> = doc
        .entities
        .iter()
        .map(|e| serde_json::json!({"id": e.id, "region": e.region_id}))
        .collect();
    let body = serde_json::json!({"doc_id": doc.doc_id, "regions": doc.regions, "entities": entities});
    let path = out_path(args.page.out, &format!("{}.regions.json", doc.doc_id));
    write_file(&path, serde_json::to_string_pretty(&body).expect("json").as_bytes())
}

fn cmd_encode_edges(args: PageArgs) -> Result<()> {
    let doc = load_page(&args, &RegionConfig::default())?;
    let mut csv = String::new();
    edges_csv(&doc, &mut csv);
    let path = out_path(args.out, &format!("{}.edges.csv", doc.doc_id));
    write_file(&path, csv.as_bytes())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = args.$flag { cfg.$($field).+ = v; })*
        };
    }
    apply!(
        steps => steps, batch_size => batch_size, lr => base_lr, warmup_ratio => warmup_ratio,
        alpha => alpha, beta => beta, seed => seed, eval_every => eval_every,
        feature_dim => model.feature_dim, heads => model.heads, layers => model.layers,
        head_dim => model.head_dim, type_dim => model.type_dim, hash_dim => model.hash_dim,
    );
    cfg.model.precomputed = args.input.embeddings.is_some();
    cfg.validate()?;

    let region_cfg = RegionConfig::default();
    let docs = load_dataset(&args.input.data, args.input.page_size, &region_cfg)?;
    let held_out = args
        .eval_data
        .as_deref()
        .map(|p| load_dataset(p, args.input.page_size, &region_cfg))
        .transpose()?;
    let provider = provider(&args.input.embeddings, &cfg.model)?;
    let outcome = train(&docs, &provider, &cfg, held_out.as_deref())?;

    let dir = args.out.unwrap_or_else(out_dir);
    write_file(&dir.join("model.ckpt"), &outcome.model.to_checkpoint())?;
    write_file(&dir.join("loss.csv"), trace_csv(&outcome.trace).as_bytes())?;
    if let Some((step, best)) = outcome.best_eval() {
        let last = &outcome.evals.last().expect("non-empty").1;
        let body = serde_json::json!({"best_step": step, "best": best, "final": last});
        write_file(&dir.join("eval.json"), serde_json::to_string_pretty(&body).expect("json").as_bytes())?;
    }
    let last = outcome.trace.last().expect("at least one step");
    eprintln!(
        "trained {} steps on {} pages ({} skipped without pairs); final loss {:.6}",
        cfg.steps,
        docs.len(),
        outcome.skipped,
        last.total
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let provider = provider(&args.input.embeddings, &model.config)?;
    let docs = load_dataset(&args.input.data, args.input.page_size, &RegionConfig::default())?;
    let report = evaluate(&docs, &model, &provider, args.decode)?;
    let summary = serde_json::json!({
        "precision": report.precision, "recall": report.recall, "f1": report.f1,
        "tp": report.counts.tp, "fp": report.counts.fp, "fn": report.counts.fn_,
    });
    println!("{summary}");
    if let Some(path) = args.out {
        write_file(&path, serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let provider = provider(&args.input.embeddings, &model.config)?;
    let docs = load_dataset(&args.input.data, args.input.page_size, &RegionConfig::default())?;
    let preds = predict(&docs, &model, &provider, args.decode)?;
    let dir = args.out.unwrap_or_else(out_dir);
    for p in &preds {
        let path = dir.join(format!("{}.pred.json", p.doc_id));
        write_file(&path, serde_json::to_string(p).expect("json").as_bytes())?;
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let doc = load_document(&args.doc, args.page_size, &RegionConfig::default())?;
    let links: Vec<SceneLink> = match &args.pred {
        Some(p) => {
            let pred: Prediction = read_json(p)?;
            pred.links
                .iter()
                .enumerate()
                .map(|(k, &(question, answer))| SceneLink { question, answer, score: pred.scores.get(k).copied() })
                .collect()
        }
        None => doc
            .gold_links
            .iter()
            .map(|&(question, answer)| SceneLink { question, answer, score: None })
            .collect(),
    };
    let scene = OverlayScene::from_document(&doc, &links)?;
    let svg = render_overlay(&scene, args.mode);
    let path = out_path(args.out, &format!("{}.svg", doc.doc_id));
    write_file(&path, svg.as_bytes())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag { spec.$field = v; })*
        };
    }
    apply!(
        docs => docs, rows => rows, cols => cols, table_prob => table_prob,
        paragraph_pairs => paragraph_pairs, stacked_pairs => stacked_pairs,
        ambiguous => ambiguous_groups, distractors => distractors, noise => noise,
    );
    let docs = make_synthetic_dataset(&spec, args.seed)?;
    write_dataset(&docs, &args.out.unwrap_or_else(out_dir))
}

/// Exit status for a failed command: 2 for bad settings, 1 for everything
/// else (I/O, malformed inputs, training failures).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Regions(a) => cmd_regions(a),
        Command::EncodeEdges(a) => cmd_encode_edges(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Render(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsers() {
        assert_eq!(parse_page_size("800x1000"), Ok((800.0, 1000.0)));
        assert!(parse_page_size("800").is_err());
        assert!(parse_page_size("0x5").is_err());
        assert_eq!(parse_range("3"), Ok((3, 3)));
        assert_eq!(parse_range("2-5"), Ok((2, 5)));
        assert!(parse_range("a-5").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["formlink", "bogus"]), 2);
        assert_eq!(run(["formlink", "eval", "--data", "x"]), 2);
        assert_eq!(run(["formlink", "regions", "--doc", "x", "--nope"]), 2);
        assert_eq!(run(["formlink", "eval", "--model", "m", "--data", "d", "--decode", "greedy"]), 2);
    }

    #[test]
    fn missing_input_exits_1() {
        assert_eq!(run(["formlink", "encode-edges", "--doc", "/nonexistent/a.json", "--out", "/tmp/x.csv"]), 1);
    }
}

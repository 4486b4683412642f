use std::error::Error;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as JsonValue};

use dataforge::builder::{BuilderDef, DatasetLoader};
use dataforge::index::{
    bm25_query, build_text_index, build_vector_index, index_path, knn_query, InvertedIndex, Metric, VectorIndex,
};
use dataforge::metrics::{ComputeOptions, MetricId, MetricState};
use dataforge::registry::{check_card, has_errors, Registry};
use dataforge::schema::render_row;
use dataforge::stream::{stream_rows, StreamOp, StreamPipeline};
use dataforge::transform::{TransformRegistry, TransformSpec, Transformer};
use dataforge::Table;

use crate::server::{parse_search_params, serve, AppState};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(
    name = "dataforge",
    version,
    about = "Build, transform, index and browse typed NLP datasets"
)]
pub struct Cli {
    /// Registry root directory.
    #[arg(long, global = true, env = "DATAFORGE_REGISTRY", default_value = "registry")]
    pub registry: PathBuf,
    /// Cache directory for built datasets, transforms and indexes.
    #[arg(long, global = true, env = "DATAFORGE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add a dataset to the registry from a builder definition.
    Register {
        builder: PathBuf,
        #[arg(long)]
        card: Option<PathBuf>,
    },
    /// Download, parse and cache every split of a dataset.
    Build { id: String },
    /// Print dataset info.
    Info { id: String },
    /// Print a range of rows as JSON lines.
    Rows {
        id: String,
        #[arg(long)]
        split: String,
        #[arg(long, default_value_t = 0)]
        offset: u64,
        #[arg(long, default_value_t = 10)]
        limit: u64,
    },
    /// Apply a registered map or filter to one split.
    Map(MapArgs),
    /// Run a streaming pipeline manifest and print rows as JSON lines.
    Stream {
        manifest: PathBuf,
        #[arg(long)]
        take: Option<u64>,
        #[arg(long)]
        shuffle_buffer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Index(IndexCommand),
    /// Compute a metric over prediction and reference files, one item per line.
    Metric {
        #[arg(long)]
        name: String,
        #[arg(long)]
        predictions: PathBuf,
        /// For bleu, tab-separated alternatives per line.
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        smooth: bool,
    },
    #[command(subcommand)]
    Card(CardCommand),
    /// Search by tag; values within a flag are comma-separated alternatives.
    Search {
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        task_id: Option<String>,
        #[arg(long)]
        license: Option<String>,
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        multilinguality: Option<String>,
    },
    /// Serve the read-only HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Args)]
pub struct MapArgs {
    pub id: String,
    #[arg(long)]
    pub split: String,
    #[arg(long)]
    pub transform: String,
    #[arg(long, default_value = "{}")]
    pub params: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub batched: bool,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: u64,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Build and store an index over a column.
    Build(IndexTarget),
    /// Query an index, building it first if needed.
    Query {
        #[command(flatten)]
        target: IndexTarget,
        /// Text query (text index).
        #[arg(long, conflicts_with = "vector")]
        text: Option<String>,
        /// Comma-separated query vector (vector index).
        #[arg(long)]
        vector: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Debug, Args)]
pub struct IndexTarget {
    pub id: String,
    #[arg(long)]
    pub split: String,
    #[arg(long)]
    pub column: String,
    /// Build a vector index with this metric instead of a text index.
    #[arg(long)]
    pub metric: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum CardCommand {
    /// Check a card file, or the current card of a registered dataset.
    Validate { target: String },
}

/// Runs the CLI and returns the process exit code: 0 success, 1 failure,
/// 2 usage error.
pub fn cli_dispatch<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn default_cache_dir() -> PathBuf {
    std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
        .join(".cache")
        .join("dataforge")
}

struct Ctx {
    registry: PathBuf,
    cache: PathBuf,
    json: bool,
}

impl Ctx {
    fn loader(&self) -> DatasetLoader {
        DatasetLoader::new(&self.registry, &self.cache)
    }

    fn split(&self, id: &str, split: &str) -> Result<Table, Box<dyn Error>> {
        let mut dd = self.loader().load(id)?;
        dd.splits
            .remove(split)
            .ok_or_else(|| format!("dataset {id} has no split {split:?}").into())
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    let ctx = Ctx {
        registry: cli.registry,
        cache: cli.cache_dir.unwrap_or_else(default_cache_dir),
        json: cli.json,
    };
    match cli.command {
        Command::Register { builder, card } => register(&ctx, &builder, card.as_deref(), out),
        Command::Build { id } => build(&ctx, &id, out),
        Command::Info { id } => {
            let dd = ctx.loader().load(&id)?;
            if ctx.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&dd.info)?)?;
                return Ok(());
            }
            let i = &dd.info;
            writeln!(out, "{} {}", i.id, i.version)?;
            if !i.description.is_empty() {
                writeln!(out, "{}", i.description)?;
            }
            for (name, s) in &i.splits {
                writeln!(out, "  {name}: {} rows", s.num_rows)?;
            }
            Ok(())
        }
        Command::Rows {
            id,
            split,
            offset,
            limit,
        } => rows(&ctx, &id, &split, offset, limit, out),
        Command::Map(args) => map(&ctx, args, out),
        Command::Stream {
            manifest,
            take,
            shuffle_buffer,
            seed,
        } => stream(&manifest, take, shuffle_buffer, seed, out),
        Command::Index(cmd) => index(&ctx, cmd, out),
        Command::Metric {
            name,
            predictions,
            references,
            smooth,
        } => metric(&name, &predictions, &references, smooth, out),
        Command::Card(CardCommand::Validate { target }) => validate(&ctx, &target, out),
        Command::Search {
            lang,
            task,
            task_id,
            license,
            size,
            multilinguality,
        } => {
            let params: Vec<(String, String)> = [
                ("lang", lang),
                ("task", task),
                ("task_id", task_id),
                ("license", license),
                ("size", size),
                ("multilinguality", multilinguality),
            ]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_owned(), v)))
            .collect();
            let filter = parse_search_params(&params)?;
            let ids = Registry::open(&ctx.registry).search(&filter)?;
            if ctx.json {
                writeln!(out, "{}", json!(ids))?;
            } else {
                for id in ids {
                    writeln!(out, "{id}")?;
                }
            }
            Ok(())
        }
        Command::Serve { port } => {
            let state = Arc::new(AppState::load(&ctx.registry, &ctx.cache)?);
            log::info!("loaded {} datasets", state.datasets.len());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, port))?;
            Ok(())
        }
    }
}

fn register(ctx: &Ctx, builder: &Path, card: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let mut def = BuilderDef::load(builder)?;
    // Local sources are made absolute, since the definition moves into the registry.
    let base = builder.parent().unwrap_or(Path::new(".")).canonicalize()?;
    for refs in def.sources.values_mut() {
        for r in refs {
            if !r.url.contains("://") && Path::new(&r.url).is_relative() {
                r.url = base.join(&r.url).to_string_lossy().into_owned();
            }
        }
    }
    let text = card.map(std::fs::read_to_string).transpose()?;
    let entry = Registry::open(&ctx.registry).add_entry(&def, text.as_deref(), Vec::new())?;
    writeln!(out, "registered {} (card revision {})", entry.id, entry.card_revision)?;
    Ok(())
}

fn build(ctx: &Ctx, id: &str, out: &mut dyn Write) -> CliResult {
    let dd = ctx.loader().load(id)?;
    if ctx.json {
        writeln!(out, "{}", json!({"id": id, "splits": dd.info.splits}))?;
    } else {
        for (name, s) in &dd.info.splits {
            writeln!(out, "{name}\t{}\t{}", s.num_rows, s.fingerprint)?;
        }
    }
    Ok(())
}

fn rows(ctx: &Ctx, id: &str, split: &str, offset: u64, limit: u64, out: &mut dyn Write) -> CliResult {
    let t = ctx.split(id, split)?;
    let total = t.num_rows();
    if offset > total {
        return Err(format!("offset {offset} is past the end ({total} rows)").into());
    }
    let end = offset.saturating_add(limit).min(total);
    let rendered: Vec<JsonValue> = t
        .slice(offset, end)?
        .iter()
        .map(|r| render_row(t.schema(), r))
        .collect();
    if ctx.json {
        let page =
            json!({"dataset": id, "split": split, "offset": offset, "limit": limit, "total": total, "rows": rendered});
        writeln!(out, "{page}")?;
    } else {
        for r in rendered {
            writeln!(out, "{r}")?;
        }
    }
    Ok(())
}

fn map(ctx: &Ctx, a: MapArgs, out: &mut dyn Write) -> CliResult {
    let t = ctx.split(&a.id, &a.split)?;
    let params: JsonValue = serde_json::from_str(&a.params)?;
    let registry = Arc::new(TransformRegistry::with_builtins());
    let tf = Transformer::new(&ctx.cache, Arc::clone(&registry));
    let result = if let Some(e) = registry.map_entry(&a.transform) {
        let mut spec = TransformSpec::map(&a.transform, &e.version, params.clone());
        if a.batched {
            spec = spec.batched(a.batch_size);
        }
        let schema = registry.output_schema(&a.transform, t.schema(), &params)?;
        tf.map(&t, &spec, &schema, a.workers)?
    } else if let Some(e) = registry.predicate_entry(&a.transform) {
        let mut spec = TransformSpec::filter(&a.transform, &e.version, params);
        if a.batched {
            spec = spec.batched(a.batch_size);
        }
        tf.filter(&t, &spec, a.workers)?
    } else {
        return Err(format!("unknown transform {:?}", a.transform).into());
    };
    let summary = json!({
        "rows": result.num_rows(),
        "fingerprint": result.lineage().to_string(),
        "path": result.path(),
        "invocations": registry.invocations(),
    });
    if ctx.json {
        writeln!(out, "{summary}")?;
    } else {
        writeln!(
            out,
            "{} rows\t{}\t{} function calls",
            result.num_rows(),
            result.lineage(),
            registry.invocations()
        )?;
    }
    Ok(())
}

fn stream(manifest: &Path, take: Option<u64>, buffer: Option<usize>, seed: u64, out: &mut dyn Write) -> CliResult {
    let mut p = StreamPipeline::from_json(&std::fs::read_to_string(manifest)?)?;
    if let Some(buffer_size) = buffer {
        if buffer_size == 0 {
            return Err("--shuffle-buffer must be at least 1".into());
        }
        p.ops.push(StreamOp::Shuffle { buffer_size, seed });
    }
    if let Some(n) = take {
        p.ops.push(StreamOp::Take { n });
    }
    let registry = Arc::new(TransformRegistry::with_builtins());
    let schema = p.output_schema(&registry)?;
    let base = manifest.parent().map(Path::to_path_buf);
    for row in stream_rows(&p, registry, base.as_deref())? {
        writeln!(out, "{}", render_row(&schema, &row?))?;
    }
    Ok(())
}

fn index(ctx: &Ctx, cmd: IndexCommand, out: &mut dyn Write) -> CliResult {
    enum Built {
        Text(InvertedIndex),
        Vector(VectorIndex),
    }
    let target = match &cmd {
        IndexCommand::Build(t) => t,
        IndexCommand::Query { target, .. } => target,
    };
    let t = ctx.split(&target.id, &target.split)?;
    let params = json!({"dataset": target.id, "split": target.split, "column": target.column});
    let built = match &target.metric {
        None => {
            let path = index_path(&ctx.cache, &t.fingerprint(), &target.column, "tix");
            let ix = match InvertedIndex::load(&path) {
                Ok(ix) => ix,
                Err(_) => {
                    let ix = build_text_index(&t, &target.column)?;
                    ix.save(&path, params)?;
                    ix
                }
            };
            Built::Text(ix)
        }
        Some(m) => {
            let metric: Metric = m.parse()?;
            let path = index_path(&ctx.cache, &t.fingerprint(), &target.column, "vix");
            let ix = match VectorIndex::load(&path) {
                Ok(ix) if ix.metric() == metric => ix,
                _ => {
                    let ix = build_vector_index(&t, &target.column, metric)?;
                    ix.save(&path, params)?;
                    ix
                }
            };
            Built::Vector(ix)
        }
    };
    let hits = match (cmd, built) {
        (IndexCommand::Build(_), Built::Text(ix)) => {
            writeln!(out, "text index: {} docs, {} terms", ix.num_docs(), ix.num_terms())?;
            return Ok(());
        }
        (IndexCommand::Build(_), Built::Vector(ix)) => {
            writeln!(out, "vector index: {} vectors of dim {}", ix.len(), ix.dim())?;
            return Ok(());
        }
        (IndexCommand::Query { text: Some(q), k, .. }, Built::Text(ix)) => bm25_query(&ix, &q, k)?,
        (IndexCommand::Query { vector: Some(v), k, .. }, Built::Vector(ix)) => {
            let q = v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()?;
            knn_query(&ix, &q, k)?
        }
        (IndexCommand::Query { .. }, Built::Text(_)) => return Err("a text index needs --text".into()),
        (IndexCommand::Query { .. }, Built::Vector(_)) => return Err("a vector index needs --vector".into()),
    };
    for (row, score) in hits {
        if ctx.json {
            writeln!(
                out,
                "{}",
                json!({"row": row, "score": score, "value": render_row(t.schema(), &t.row(row)?)})
            )?;
        } else {
            writeln!(out, "{row}\t{score}")?;
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Box<dyn Error>> {
    Ok(std::fs::read_to_string(path)?.lines().map(str::to_owned).collect())
}

fn metric(name: &str, preds: &Path, refs: &Path, smooth: bool, out: &mut dyn Write) -> CliResult {
    let id: MetricId = name.parse()?;
    let (p, r) = (read_lines(preds)?, read_lines(refs)?);
    let mut state = MetricState::new(id);
    match id {
        MetricId::Accuracy | MetricId::F1 => {
            let ints = |v: &[String]| v.iter().map(|s| s.trim().parse::<i64>()).collect::<Result<Vec<_>, _>>();
            state.add_labels(&ints(&p)?, &ints(&r)?)?;
        }
        MetricId::ExactMatch => {
            let p: Vec<&str> = p.iter().map(String::as_str).collect();
            let r: Vec<&str> = r.iter().map(String::as_str).collect();
            state.add_texts(&p, &r)?;
        }
        MetricId::Bleu => {
            let r: Vec<Vec<String>> = r.iter().map(|l| l.split('\t').map(str::to_owned).collect()).collect();
            state.add_translations(&p, &r)?;
        }
    }
    let result = state.compute(ComputeOptions { smooth })?;
    writeln!(out, "{}", serde_json::to_string(&result)?)?;
    Ok(())
}

fn validate(ctx: &Ctx, target: &str, out: &mut dyn Write) -> CliResult {
    let registry = Registry::open(&ctx.registry);
    let path = Path::new(target);
    let (text, info) = if path.is_file() {
        (std::fs::read_to_string(path)?, None)
    } else {
        let text = registry
            .card_text(target)?
            .ok_or_else(|| format!("dataset {target} has no card"))?;
        let info = ctx.loader().open_cached(target)?.map(|dd| dd.info);
        (text, info)
    };
    let findings = check_card(&text, info.as_ref(), registry.vocabulary());
    for f in &findings {
        if ctx.json {
            writeln!(out, "{}", serde_json::to_string(f)?)?;
        } else {
            writeln!(out, "{f}")?;
        }
    }
    if has_errors(&findings) {
        return Err(format!("{target}: card has errors").into());
    }
    if !ctx.json {
        writeln!(out, "ok")?;
    }
    Ok(())
}

//! The `dime` command line. Links the engine directly; only `serve`
//! starts a server.
//!
//! Exit codes: 0 success, 1 domain error (one line on stderr), 2 usage
//! error. `--output json` prints the same documents the HTTP API returns.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::http::{self, ServerConfig};
use crate::model::{DatasetManifest, ModelDescriptor, ModelKind, PayloadKind};
use crate::service::{CompareEntry, Engine, ItemRef, QueryInput, QueryRequest, QueryResult};
use crate::store::BuildRequest;
use crate::model::ItemPayload;

#[derive(Debug, Parser)]
#[command(name = "dime", version, about = "Cross-modal retrieval indexes and model comparison")]
pub struct Cli {
    /// Registry root directory.
    #[arg(long, global = true, env = "DIME_REGISTRY", default_value = "./dime-data")]
    pub registry: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register or list datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Register or list models.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Build or list indexes.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Query one index.
    Query(QueryArgs),
    /// Run one query against several indexes.
    Compare(CompareArgs),
    /// Score indexes against relevance judgments.
    Eval(EvalArgs),
    /// Start the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    Add {
        #[arg(long)]
        manifest: PathBuf,
    },
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    Identity,
    TextHash,
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    Add(ModelAddArgs),
    Ls,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("impl").required(true).args(["builtin", "cmd", "precomputed"]))]
pub struct ModelAddArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long, value_enum)]
    pub builtin: Option<Builtin>,
    /// Plugin launch command.
    #[arg(long)]
    pub cmd: Option<String>,
    /// JSON-lines file of `{"id":..,"embedding":[..]}` rows.
    #[arg(long)]
    pub precomputed: Option<String>,
    /// Output dimension (and input dimension for `identity`).
    #[arg(long)]
    pub dim: usize,
    /// Input dimension for plugins that accept vectors.
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Payload kinds a plugin or precomputed model accepts.
    #[arg(long, value_delimiter = ',', default_value = "text")]
    pub accepts: Vec<Kind>,
    #[arg(long)]
    pub space: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Vector,
    Text,
    Uri,
}

impl From<Kind> for PayloadKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Vector => PayloadKind::Vector,
            Kind::Text => PayloadKind::Text,
            Kind::Uri => PayloadKind::Uri,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    Build {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        binarize: bool,
        /// Index id; defaults to `<dataset>.<model>[.bin]`.
        #[arg(long)]
        id: Option<String>,
    },
    Ls,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["text", "vector_file", "item", "uri"]))]
pub struct InputArgs {
    #[arg(long)]
    pub text: Option<String>,
    /// JSON array, or whitespace/comma separated numbers.
    #[arg(long)]
    pub vector_file: Option<PathBuf>,
    /// Item id whose stored row becomes the query.
    #[arg(long)]
    pub item: Option<String>,
    #[arg(long)]
    pub uri: Option<String>,
    #[arg(short = 'n', long = "n", default_value_t = crate::service::DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = crate::service::DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: String,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub indexes: Vec<String>,
    /// Index holding `--item`; defaults to the first of `--indexes`.
    #[arg(long)]
    pub item_index: Option<String>,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub indexes: Vec<String>,
    /// Newline-delimited JSON queries.
    #[arg(long)]
    pub queries: PathBuf,
    /// Tab-separated `query_id item_id relevance` lines.
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Built browser UI to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origin; repeatable.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn emit(out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    out.write_all(bytes)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("writing output", e))
}

fn parse_vector(text: &str) -> Result<Vec<f32>> {
    if let Ok(v) = serde_json::from_str::<Vec<f32>>(text) {
        return Ok(v);
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f32>().map_err(|_| Error::InvalidRequest(format!("bad vector component {s:?}"))))
        .collect()
}

impl InputArgs {
    fn to_request(&self, item_index: &str) -> Result<QueryRequest> {
        let input = if let Some(t) = &self.text {
            QueryInput::Payload(ItemPayload::Text(t.clone()))
        } else if let Some(p) = &self.vector_file {
            QueryInput::Payload(ItemPayload::Vector(parse_vector(&read_file(p)?)?))
        } else if let Some(u) = &self.uri {
            QueryInput::Payload(ItemPayload::Uri(u.clone()))
        } else if let Some(x) = &self.item {
            QueryInput::ItemRef(ItemRef { index_id: item_index.to_string(), item_id: x.clone() })
        } else {
            return Err(Error::InvalidRequest("no query input".into()));
        };
        let req = QueryRequest { input, n: self.n, histogram_bins: self.bins };
        if let QueryInput::Payload(p) = &req.input {
            p.check_finite()?;
        }
        req.validate()?;
        Ok(req)
    }
}

fn model_from_args(a: &ModelAddArgs) -> ModelDescriptor {
    let accepts = a.accepts.iter().map(|k| PayloadKind::from(*k));
    match (a.builtin, &a.cmd, &a.precomputed) {
        (Some(Builtin::Identity), _, _) => ModelDescriptor::builtin_identity(&a.name, a.dim, &a.space),
        (Some(Builtin::TextHash), _, _) => ModelDescriptor::builtin_text_hash(&a.name, a.dim, &a.space),
        (None, Some(cmd), _) => ModelDescriptor::subprocess(&a.name, cmd, accepts, a.input_dim, a.dim, &a.space),
        (None, None, path) => {
            let mut m = ModelDescriptor::subprocess(&a.name, "", accepts, a.input_dim, a.dim, &a.space);
            m.kind = ModelKind::Precomputed;
            m.command = None;
            m.embeddings_path = path.clone();
            m
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let engine = Engine::open(&cli.registry)?;
    let json = cli.output == Output::Json;
    match &cli.command {
        Command::Dataset(DatasetCmd::Add { manifest }) => {
            let m: DatasetManifest = serde_json::from_str(&read_file(manifest)?)
                .map_err(|e| Error::InvalidRequest(format!("{}: {e}", manifest.display())))?;
            let id = engine.add_dataset(m)?;
            if json {
                emit(out, &http::encode(&http::Created { id }))
            } else {
                emit(out, id.as_bytes())
            }
        }
        Command::Dataset(DatasetCmd::Ls) => {
            let list: Vec<_> = engine.registry().snapshot().datasets.iter().map(|d| d.summary()).collect();
            if json {
                return emit(out, &http::encode(&list));
            }
            let mut s = format!("{:<24} {:<8} {:>8} {:>6}  NAME\n", "ID", "MODALITY", "ITEMS", "DIM");
            for d in &list {
                let modality = serde_json::to_value(d.modality).unwrap();
                s += &format!(
                    "{:<24} {:<8} {:>8} {:>6}  {}\n",
                    d.id,
                    modality.as_str().unwrap_or_default(),
                    d.count,
                    d.input_dim.map_or("-".into(), |x| x.to_string()),
                    d.name
                );
            }
            emit(out, s.trim_end().as_bytes())
        }
        Command::Model(ModelCmd::Add(a)) => {
            let model = model_from_args(a);
            engine.registry().register_model(model.clone())?;
            if json {
                emit(out, &http::encode(&model))
            } else {
                emit(out, model.name.as_bytes())
            }
        }
        Command::Model(ModelCmd::Ls) => {
            let models = engine.registry().snapshot().models.clone();
            if json {
                return emit(out, &http::encode(&models));
            }
            let mut s = format!("{:<24} {:<18} {:<16} {:>6}  SPACE\n", "NAME", "KIND", "ACCEPTS", "DIM");
            for m in &models {
                let kind = serde_json::to_value(m.kind).unwrap();
                let accepts: Vec<String> = m.accepts.iter().map(|k| k.to_string()).collect();
                s += &format!(
                    "{:<24} {:<18} {:<16} {:>6}  {}\n",
                    m.name,
                    kind.as_str().unwrap_or_default(),
                    accepts.join(","),
                    m.output_dim,
                    m.space
                );
            }
            emit(out, s.trim_end().as_bytes())
        }
        Command::Index(IndexCmd::Build { dataset, model, binarize, id }) => {
            let req = BuildRequest {
                dataset_id: dataset.clone(),
                model_name: model.clone(),
                binarize: *binarize,
                index_id: id.clone(),
            };
            let desc = engine.build_index(&req)?;
            if json {
                emit(out, &http::encode(&desc))
            } else {
                emit(out, format!("{} ({} rows, dim {}, sha256 {})", desc.id, desc.count, desc.dim, desc.checksum).as_bytes())
            }
        }
        Command::Index(IndexCmd::Ls) => {
            let indexes = engine.registry().snapshot().indexes.clone();
            if json {
                return emit(out, &http::encode(&indexes));
            }
            let mut s = format!("{:<32} {:<16} {:<16} {:>8} {:>6} {:<4}  SPACE\n", "ID", "DATASET", "MODEL", "COUNT", "DIM", "BIN");
            for i in &indexes {
                s += &format!(
                    "{:<32} {:<16} {:<16} {:>8} {:>6} {:<4}  {}\n",
                    i.id,
                    i.dataset_id,
                    i.model_name,
                    i.count,
                    i.dim,
                    if i.binarized { "yes" } else { "no" },
                    i.space
                );
            }
            emit(out, s.trim_end().as_bytes())
        }
        Command::Query(q) => {
            let req = q.input.to_request(&q.index)?;
            let result = engine.execute_query(&q.index, &req)?;
            if json {
                emit(out, &http::encode(&result))
            } else {
                emit(out, render_result(&q.index, &result).as_bytes())
            }
        }
        Command::Compare(c) => {
            let item_index = c.item_index.as_deref().unwrap_or(&c.indexes[0]);
            let req = c.input.to_request(item_index)?;
            let results = engine.execute_compare(&req, &c.indexes)?;
            if json {
                return emit(out, &http::encode(&results));
            }
            let blocks: Vec<String> = results
                .iter()
                .map(|(id, entry)| match entry {
                    CompareEntry::Ok(r) => render_result(id, r),
                    CompareEntry::Err(e) => format!("== {id}\nerror: {} ({})", e.error.message, e.error.code),
                })
                .collect();
            emit(out, blocks.join("\n\n").as_bytes())
        }
        Command::Eval(e) => {
            let queries = crate::service::parse_queries(&read_file(&e.queries)?)?;
            let qrels = crate::service::parse_qrels(&read_file(&e.qrels)?)?;
            let reports = engine.compare_models(&e.indexes, &queries, &qrels, &e.ks)?;
            if json {
                return emit(out, &http::encode_sorted(&reports));
            }
            emit(out, render_reports(&reports, &e.ks).as_bytes())
        }
        Command::Serve(s) => {
            let cfg = ServerConfig { cors_origins: s.cors_origins.clone(), static_dir: s.static_dir.clone() };
            let addr = SocketAddr::new(s.host, s.port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("starting runtime", e))?;
            rt.block_on(http::serve(Arc::new(engine), addr, cfg))
                .map_err(|e| Error::io("serving", std::io::Error::other(e.to_string())))
        }
    }
}

fn render_result(index_id: &str, r: &QueryResult) -> String {
    let d = &r.diagnostics;
    let mut s = format!(
        "== {index_id}  model={} space={} count={} binarized={}\n",
        d.model_name, d.space, d.index_count, d.binarized
    );
    if r.neighbors.is_empty() {
        s += "(no results)\n";
    }
    for (rank, n) in r.neighbors.iter().enumerate() {
        let preview = match &n.payload_preview {
            ItemPayload::Text(t) => t.chars().take(48).collect::<String>(),
            ItemPayload::Uri(u) => u.clone(),
            ItemPayload::Vector(v) => format!("{v:?}"),
        };
        s += &format!("{:>4}  {:<24} {:>12.4}  {}\n", rank + 1, n.item_id, n.distance, preview);
    }
    if let Some(st) = &r.stats {
        s += &format!("min {:.4}  mean {:.4}  max {:.4}\n", st.min, st.mean, st.max);
    }
    if let Some(h) = &r.histogram {
        let counts: Vec<String> = h.counts.iter().map(u64::to_string).collect();
        s += &format!("histogram [{}]\n", counts.join(" "));
    }
    s += &format!(
        "timings ms: preprocess {} embed {} search {} total {}",
        ms(d.preprocess_ms),
        ms(d.embed_ms),
        ms(d.search_ms),
        ms(d.total_ms)
    );
    s
}

fn ms(m: crate::service::Millis) -> String {
    format!("{}.{:03}", m.micros / 1000, m.micros % 1000)
}

fn render_reports(reports: &BTreeMap<String, dime_core::EvalReport>, ks: &[usize]) -> String {
    let mut s = format!("{:<32} {:>8} {:>8}", "INDEX", "mAP", "QUERIES");
    for k in ks {
        s += &format!(" {:>8}", format!("P@{k}"));
    }
    s.push('\n');
    for (id, r) in reports {
        let map = r.map.map_or("-".to_string(), |m| format!("{m:.4}"));
        s += &format!("{id:<32} {map:>8} {:>8}", r.per_query.len());
        for k in ks {
            let vals: Vec<f64> = r.per_query.values().filter_map(|q| q.p_at.get(k).copied()).collect();
            let mean = if vals.is_empty() { "-".to_string() } else { format!("{:.4}", vals.iter().sum::<f64>() / vals.len() as f64) };
            s += &format!(" {mean:>8}");
        }
        if !r.skipped.is_empty() {
            s += &format!("  (skipped: {})", r.skipped.join(","));
        }
        s.push('\n');
    }
    s.trim_end().to_string()
}

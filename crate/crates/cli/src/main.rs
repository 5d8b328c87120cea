use std::fs;
use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use podfact_core::dataset::{self, ExportKind, SplitName};
use podfact_core::feed::{self, AssetStore};
use podfact_core::metrics::{self, EvalTask};
use podfact_core::segment::{self, ResolverSpec, DEFAULT_WINDOW_SIZE, DEFAULT_WINDOW_STRIDE};
use podfact_core::synth::{build_corpus, CorpusDescriptor};
use podfact_core::transcript::{assign_speakers, parse_asr_document, parse_diarization};
use podfact_core::{annotation, EpisodeId, QueryFilter, SplitSpec, Store};
use serde_json::json;

#[derive(Parser)]
#[command(name = "podfact", version, about = "Podcast fact-checking annotation pipeline")]
struct Cli {
    /// SQLite store.
    #[arg(long, global = true, env = "PODFACT_DB", default_value = "podfact.db")]
    db: PathBuf,
    /// Root of the content-addressed audio store.
    #[arg(long, global = true, env = "PODFACT_ASSETS", default_value = "assets")]
    assets: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an RSS feed, store its episodes and download their audio.
    Ingest(IngestArgs),
    #[command(subcommand)]
    /// Import transcripts.
    Transcript(TranscriptCommand),
    /// Split an episode transcript into utterances and resolve coreferences.
    Segment(SegmentArgs),
    #[command(subcommand)]
    /// Create annotation microtasks.
    Tasks(TasksCommand),
    /// Write a claims or stance dataset as JSONL.
    Export(ExportArgs),
    /// Topic table and label histograms over aggregated annotations.
    Stats,
    #[command(subcommand)]
    /// Score transcripts or classifier predictions.
    Eval(EvalCommand),
    #[command(subcommand)]
    /// Dump, restore or count the store.
    Db(DbCommand),
    #[command(subcommand)]
    /// Build the reference corpus into the store.
    Corpus(CorpusCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct FeedSource {
    #[arg(long)]
    feed_url: Option<url::Url>,
    #[arg(long)]
    feed_file: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    source: FeedSource,
    /// Store metadata only.
    #[arg(long)]
    no_audio: bool,
}

#[derive(Subcommand)]
enum TranscriptCommand {
    /// Import an ASR word document, optionally with diarization.
    Import {
        #[arg(long)]
        episode: String,
        #[arg(long)]
        asr: PathBuf,
        #[arg(long)]
        diarization: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    episode: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW_SIZE)]
    window_size: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW_STRIDE)]
    stride: usize,
    /// identity, cmd:<exec> or http:<url>.
    #[arg(long, default_value = "identity")]
    resolver: ResolverSpec,
}

#[derive(Subcommand)]
enum TasksCommand {
    /// Partition an episode's utterances into microtasks.
    Create {
        #[arg(long)]
        episode: String,
        #[arg(long, default_value_t = annotation::DEFAULT_CAP_MINUTES)]
        cap_minutes: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Claims,
    Stance,
}

impl From<Dataset> for ExportKind {
    fn from(d: Dataset) -> Self {
        match d {
            Dataset::Claims => ExportKind::Claims,
            Dataset::Stance => ExportKind::Stance,
        }
    }
}

#[derive(Args)]
struct ExportArgs {
    dataset: Dataset,
    /// Output file, or `-` for stdout. With --splits, one file per split
    /// is written next to it as `<stem>.<split>.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Train,dev,test sizes as counts (1404,380,176) or fractions (0.72,0.19,0.09).
    #[arg(long)]
    splits: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// WER, MER and CER of a hypothesis transcript against a reference.
    Asr {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Per-class and weighted F1 of a predictions file.
    Preds {
        #[arg(long)]
        task: EvalTask,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Row label; defaults to the predictions file stem.
        #[arg(long)]
        model: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Jsonl,
}

#[derive(Subcommand)]
enum DbCommand {
    /// Dump every table, one JSON object per row.
    Export {
        #[arg(long, value_enum, default_value = "jsonl")]
        format: DumpFormat,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Load a dump produced by `db export`.
    Import {
        #[arg(long, value_enum, default_value = "jsonl")]
        format: DumpFormat,
        #[arg(long)]
        input: PathBuf,
    },
    /// Row counts per table.
    Counts,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Populate the store with the bundled reference corpus, or one described by a JSON file.
    Build {
        #[arg(long)]
        descriptor: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PODFACT_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Annotator registry JSON.
    #[arg(long, env = "PODFACT_AUTH")]
    auth: PathBuf,
    /// Requests per token per minute; 0 disables the cap.
    #[arg(long, default_value_t = 600)]
    rate_per_minute: u32,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "podfact=info,warn".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => ingest(&cli.db, &cli.assets, args),
        Command::Transcript(TranscriptCommand::Import {
            episode,
            asr,
            diarization,
        }) => import_transcript(&open(&cli.db)?, episode.into(), &asr, diarization.as_deref()),
        Command::Segment(args) => segment(&open(&cli.db)?, args),
        Command::Tasks(TasksCommand::Create { episode, cap_minutes }) => {
            let store = open(&cli.db)?;
            let tasks = store.create_tasks(&episode.into(), cap_minutes)?;
            for w in &tasks.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&tasks.value)
        }
        Command::Export(args) => export(&open(&cli.db)?, args),
        Command::Stats => {
            let records = open(&cli.db)?.query(&QueryFilter::default())?;
            print!("{}", dataset::stats(&records).render());
            Ok(())
        }
        Command::Eval(cmd) => eval(cmd),
        Command::Db(cmd) => db(&open(&cli.db)?, cmd),
        Command::Corpus(CorpusCommand::Build { descriptor }) => {
            let descriptor = match descriptor {
                Some(p) => CorpusDescriptor::from_json(&read(&p)?)?,
                None => CorpusDescriptor::reference(),
            };
            let summary = build_corpus(&open(&cli.db)?, &descriptor)?;
            print_json(&json!({
                "episodes": summary.episodes.len(),
                "positives": summary.positives,
                "factchecks": summary.factchecks,
            }))
        }
        Command::Serve(args) => serve(&cli.db, &cli.assets, args),
    }
}

fn open(db: &Path) -> Result<Store> {
    Store::open(db).with_context(|| format!("opening store {}", db.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Asset paths are recorded as given, so the root is made absolute first.
fn asset_root(assets: &Path) -> Result<PathBuf> {
    fs::create_dir_all(assets).with_context(|| format!("creating {}", assets.display()))?;
    Ok(fs::canonicalize(assets)?)
}

fn ingest(db: &Path, assets: &Path, args: IngestArgs) -> Result<()> {
    let store = open(db)?;
    let assets = AssetStore::new(asset_root(assets)?);
    let client = reqwest::Client::new();
    let report = runtime()?.block_on(async {
        let xml = match (&args.source.feed_url, &args.source.feed_file) {
            (Some(url), _) => feed::fetch_feed(&client, url).await?,
            (None, Some(path)) => read(path)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        anyhow::Ok(feed::ingest(&store, &assets, &client, &xml, !args.no_audio).await?)
    })?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&report)?;
    if !report.failures.is_empty() {
        bail!("{} of {} audio downloads failed", report.failures.len(), report.episodes.len());
    }
    Ok(())
}

fn import_transcript(store: &Store, episode: EpisodeId, asr: &Path, diarization: Option<&Path>) -> Result<()> {
    let parsed = parse_asr_document(episode.clone(), &read(asr)?)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let segments = match diarization {
        Some(p) => parse_diarization(&read(p)?)?,
        None => Vec::new(),
    };
    let transcript = assign_speakers(parsed.value, &segments);
    store.put_transcript(&transcript, &segments)?;
    print_json(&json!({
        "episode_id": episode,
        "words": transcript.words.len(),
        "speakers": segments.iter().map(|s| s.speaker_id.as_str()).collect::<std::collections::BTreeSet<_>>(),
    }))
}

fn segment(store: &Store, args: SegmentArgs) -> Result<()> {
    let episode = EpisodeId::new(args.episode);
    let transcript = store.transcript(&episode)?;
    let utterances = segment::split_sentences(&transcript)?;
    let windows = segment::build_windows(&episode, utterances.len(), args.window_size, args.stride)?;
    let resolver = args.resolver.build()?;
    let resolved = segment::apply_coref(utterances, &windows, resolver.as_ref())?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    store.replace_utterances(&episode, &resolved.value)?;
    print_json(&json!({
        "episode_id": episode,
        "utterances": resolved.value.len(),
        "windows": windows.len(),
    }))
}

fn export(store: &Store, args: ExportArgs) -> Result<()> {
    let spec = args.splits.as_deref().map(|s| SplitSpec::parse(s, args.seed)).transpose()?;
    let all = QueryFilter::default();
    let parts = dataset::export_jsonl(
        args.dataset.into(),
        &store.query(&all)?,
        &store.factcheck_records(&all)?,
        spec.as_ref(),
    )?;
    let mut written = Vec::new();
    for (split, bytes) in parts {
        let path = match split {
            None => args.out.clone(),
            Some(name) => split_path(&args.out, name),
        };
        let lines = bytes.iter().filter(|b| **b == b'\n').count();
        if path.as_os_str() == "-" {
            io::stdout().lock().write_all(&bytes)?;
        } else {
            fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        written.push(json!({ "split": split, "path": path, "lines": lines }));
    }
    if args.out.as_os_str() != "-" {
        print_json(&written)?;
    }
    Ok(())
}

/// `claims.jsonl` becomes `claims.train.jsonl`.
fn split_path(out: &Path, split: SplitName) -> PathBuf {
    if out.as_os_str() == "-" {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or("jsonl".into());
    out.with_file_name(format!("{stem}.{split}.{ext}"))
}

/// Plain text, or an ASR word document whose words are joined.
fn transcript_text(path: &Path) -> Result<String> {
    let text = read(path)?;
    if let Ok(doc) = parse_asr_document(EpisodeId::new("eval"), &text) {
        return Ok(doc.value.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "));
    }
    Ok(text)
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Asr { reference, hyp } => {
            let rates = metrics::error_rates(&transcript_text(&reference)?, &transcript_text(&hyp)?)?;
            print_json(&rates)
        }
        EvalCommand::Preds { task, gold, pred, model } => {
            let model = model.unwrap_or_else(|| {
                pred.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into())
            });
            let report = metrics::evaluate_predictions(&read(&gold)?, &read(&pred)?, task, &model)?;
            println!("{}", report.render());
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
    }
}

fn db(store: &Store, cmd: DbCommand) -> Result<()> {
    match cmd {
        DbCommand::Export {
            format: DumpFormat::Jsonl,
            out,
        } => {
            let rows = if out.as_os_str() == "-" {
                store.export_jsonl(io::stdout().lock())?
            } else {
                let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
                let mut w = io::BufWriter::new(file);
                let rows = store.export_jsonl(&mut w)?;
                w.flush()?;
                rows
            };
            eprintln!("exported {rows} rows");
            Ok(())
        }
        DbCommand::Import {
            format: DumpFormat::Jsonl,
            input,
        } => {
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let rows = store.import_jsonl(BufReader::new(file))?;
            eprintln!("imported {rows} rows");
            Ok(())
        }
        DbCommand::Counts => {
            for (table, n) in store.table_counts()? {
                println!("{table}\t{n}");
            }
            Ok(())
        }
    }
}

fn serve(db: &Path, assets: &Path, args: ServeArgs) -> Result<()> {
    let config = podfact_server::ServerConfig {
        addr: args.addr,
        db_path: db.to_path_buf(),
        assets_dir: asset_root(assets)?,
        registry_path: args.auth,
        rate_per_minute: (args.rate_per_minute > 0).then_some(args.rate_per_minute),
    };
    runtime()?.block_on(podfact_server::run(config))?;
    Ok(())
}

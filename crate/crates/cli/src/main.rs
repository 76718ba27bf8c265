use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use forge_core::chronology::{
    assign_relationship, derive_seed, sample_intervals_with, sample_relationship_prior_with, seeded_rng,
    EpisodeBlueprint, Relationship, TimeInterval,
};
use forge_core::corpus::{
    self, compute_stats, read_corpus, read_jsonl, split_corpus, write_jsonl, write_splits, SplitSpec,
};
use forge_core::episode_pipeline::Turn;
use forge_core::episode_pipeline::{run_pipeline, PipelineConfig};
use forge_core::event_graph::{
    build_graph, dedup_sequences, extract_sequences, score_all_pairs, EntailmentEdge, Event, EventGraph,
    EventSequence, LexicalScorer, DEFAULT_ENTAILMENT_THRESHOLD, DEFAULT_PATH_CAP, EPISODE_SEQUENCE_LEN,
};
use forge_core::llm_backend::{BackendConfig, NliScorer, SharedBackend};
use forge_core::prompting::{
    render_conversation_prompt, render_relationship_prompt, render_summary_prompt, ConversationContext,
};
use forge_core::rebot::{read_events, ChatConfig, ChatEpisodeState, ChatEvent, ChatStatus, EventLog};
use forge_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "forge", version, about = "Multi-session dialogue corpus tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Event graph construction and path extraction.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Attach time intervals and a relationship to each sequence.
    Blueprint(BlueprintArgs),
    /// Generate episodes from blueprints.
    Generate(GenerateArgs),
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = StatsFormat::Table)]
        format: StatsFormat,
    },
    /// Shuffle a corpus into train/valid/test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Fractions such as `0.8/0.1/0.1`.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt rendering for debugging.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Interactive multi-session chat in the terminal.
    Chat(ChatArgs),
    /// HTTP chat service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum GraphCommand {
    Build {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum, default_value_t = ScorerKind::Lexical)]
        scorer: ScorerKind,
        #[arg(long, default_value_t = DEFAULT_ENTAILMENT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Backend config for the `http` scorer.
        #[arg(long)]
        backend: Option<PathBuf>,
    },
    Paths {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
        cap: NonZeroUsize,
        #[arg(long)]
        out: PathBuf,
        /// Keep sequences that share more than the allowed number of events.
        #[arg(long)]
        no_dedup: bool,
    },
}

#[derive(Subcommand)]
enum PromptCommand {
    Render {
        #[arg(long, value_enum)]
        kind: PromptKindArg,
        /// JSON context: a list of events (relationship), a conversation
        /// context, or a list of turns (summary).
        #[arg(long)]
        ctx: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptKindArg {
    Relationship,
    Conversation,
    Summary,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    Lexical,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RelationshipMode {
    Llm,
    Prior,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsFormat {
    Table,
    Json,
}

#[derive(clap::Args)]
struct BlueprintArgs {
    #[arg(long)]
    sequences: PathBuf,
    /// Events file the sequence ids refer to.
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum, default_value_t = RelationshipMode::Prior)]
    relationship_mode: RelationshipMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Backend config, required for `--relationship-mode llm`.
    #[arg(long)]
    backend: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    blueprints: PathBuf,
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejects: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    summarize: bool,
    #[arg(long)]
    no_moderation: bool,
    /// Defaults to the backend's concurrency limit.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(clap::Args)]
struct ChatArgs {
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    relationship: String,
    /// Event log; an existing log is resumed.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    debug_inputs: bool,
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Graph { command } => match command {
            GraphCommand::Build {
                events,
                scorer,
                threshold,
                out,
                backend,
            } => graph_build(&events, scorer, threshold, &out, backend.as_deref()),
            GraphCommand::Paths {
                graph,
                cap,
                out,
                no_dedup,
            } => graph_paths(&graph, cap, &out, !no_dedup),
        },
        Command::Blueprint(args) => blueprint(args),
        Command::Generate(args) => generate(args),
        Command::Stats { corpus, format } => stats(&corpus, format),
        Command::Split {
            corpus,
            spec,
            seed,
            out,
        } => split(&corpus, &spec, seed, &out),
        Command::Prompt {
            command: PromptCommand::Render { kind, ctx },
        } => prompt_render(kind, &ctx),
        Command::Chat(args) => chat(args),
        Command::Serve(args) => serve(args),
    }
}

fn load_backend(path: &Path) -> Result<Arc<SharedBackend>> {
    let cfg = BackendConfig::load(path)?;
    Ok(cfg.build()?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_out<T: serde::Serialize>(items: &[T], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    write_jsonl(items, path)?;
    Ok(())
}

fn graph_build(
    events: &Path,
    scorer: ScorerKind,
    threshold: f64,
    out: &Path,
    backend: Option<&Path>,
) -> Result<()> {
    let events: Vec<Event> = read_jsonl(events)?;
    let scorer: Box<dyn NliScorer> = match (scorer, backend) {
        (ScorerKind::Lexical, _) => Box::new(LexicalScorer),
        (ScorerKind::Http, Some(cfg)) => Box::new(load_backend(cfg)?),
        (ScorerKind::Http, None) => bail!("--scorer http needs --backend"),
    };
    let scored = score_all_pairs(&events, scorer.as_ref())?;
    let graph = build_graph(&events, &scored, threshold)?;
    let edges: Vec<EntailmentEdge> = graph.edges().collect();
    log::info!(
        "{} events, {} scored pairs, {} edges at threshold {threshold}",
        events.len(),
        scored.len(),
        edges.len()
    );
    write_out(&edges, out)
}

fn graph_paths(graph: &Path, cap: NonZeroUsize, out: &Path, dedup: bool) -> Result<()> {
    let edges: Vec<EntailmentEdge> = read_jsonl(graph)?;
    let graph = EventGraph::from_edges(&edges);
    let extraction = extract_sequences(&graph, EPISODE_SEQUENCE_LEN, cap);
    if extraction.truncated {
        log::warn!("path count exceeds the cap of {cap}; output is truncated");
    }
    let found = extraction.sequences.len();
    let sequences = if dedup {
        dedup_sequences(&extraction.sequences)
    } else {
        extraction.sequences
    };
    log::info!("{found} paths, {} kept", sequences.len());
    write_out(&sequences, out)
}

fn blueprint(args: BlueprintArgs) -> Result<()> {
    let sequences: Vec<EventSequence> = read_jsonl(&args.sequences)?;
    let events: HashMap<String, Event> = read_jsonl::<Event>(&args.events)?
        .into_iter()
        .map(|e| (e.id.clone(), e))
        .collect();
    let backend = match (args.relationship_mode, &args.backend) {
        (RelationshipMode::Llm, Some(cfg)) => Some(load_backend(cfg)?),
        (RelationshipMode::Llm, None) => bail!("--relationship-mode llm needs --backend"),
        (RelationshipMode::Prior, _) => None,
    };
    let mut out = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let seq = EventSequence::new(seq.event_ids.clone())?;
        let seq_events = seq
            .event_ids
            .iter()
            .map(|id| {
                events
                    .get(id)
                    .cloned()
                    .ok_or_else(|| anyhow!("sequence {i}: unknown event {id:?}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seeded_rng(derive_seed(args.seed, i as u64));
        let intervals = sample_intervals_with(&mut rng);
        let relationship = match &backend {
            Some(b) => {
                assign_relationship(&seq_events, b.as_ref()).with_context(|| format!("sequence {i}"))?
            }
            None => sample_relationship_prior_with(&mut rng),
        };
        out.push(EpisodeBlueprint::new(&seq, seq_events, intervals, relationship)?);
    }
    log::info!("{} blueprints", out.len());
    write_out(&out, &args.out)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let blueprints: Vec<EpisodeBlueprint> = read_jsonl(&args.blueprints)?;
    for (i, bp) in blueprints.iter().enumerate() {
        bp.validate().with_context(|| format!("blueprint {i}"))?;
    }
    let backend = load_backend(&args.backend)?;
    let cfg = PipelineConfig {
        moderate: !args.no_moderation,
        summarize: args.summarize,
        ..PipelineConfig::default()
    };
    let workers = args.workers.unwrap_or_else(|| backend.max_concurrency());
    let run = run_pipeline(&blueprints, backend.as_ref(), &cfg, args.seed, workers);

    std::fs::create_dir_all(&args.out)?;
    std::fs::create_dir_all(&args.rejects)?;
    corpus::write_corpus(&run.accepted, &args.out.join("episodes.jsonl"))?;
    write_jsonl(&run.rejected, &args.rejects.join("rejected.jsonl"))?;
    write_jsonl(&run.abandoned, &args.rejects.join("abandoned.jsonl"))?;
    let report = serde_json::to_string_pretty(&run.report)?;
    std::fs::write(args.out.join("yield_report.json"), format!("{report}\n"))?;
    println!("{report}");
    Ok(())
}

fn stats(path: &Path, format: StatsFormat) -> Result<()> {
    let read = read_corpus(path, true)?;
    let stats = compute_stats(&read.episodes)?;
    match format {
        StatsFormat::Table => print!("{}", stats.to_table()),
        StatsFormat::Json => println!("{}", serde_json::to_string_pretty(&stats)?),
    }
    Ok(())
}

fn split(path: &Path, spec: &str, seed: u64, out: &Path) -> Result<()> {
    let mut spec: SplitSpec = spec.parse()?;
    spec.seed = seed;
    let episodes = read_corpus(path, true)?.episodes;
    let total = episodes.len();
    let parts = split_corpus(episodes, &spec)?;
    std::fs::create_dir_all(out)?;
    write_splits(&parts, out)?;
    log::info!(
        "{total} episodes: {} train, {} valid, {} test",
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    Ok(())
}

fn prompt_render(kind: PromptKindArg, ctx: &Path) -> Result<()> {
    let text = std::fs::read_to_string(ctx).with_context(|| format!("reading {}", ctx.display()))?;
    let rendered = match kind {
        PromptKindArg::Relationship => {
            render_relationship_prompt(&serde_json::from_str::<Vec<Event>>(&text)?)?
        }
        PromptKindArg::Conversation => {
            render_conversation_prompt(&serde_json::from_str::<ConversationContext>(&text)?)?
        }
        PromptKindArg::Summary => render_summary_prompt(&serde_json::from_str::<Vec<Turn>>(&text)?)?,
    };
    println!("{}", rendered.text);
    Ok(())
}

const CHAT_HELP: &str = "commands: /advance <interval>, /summary, /end, /status, /quit";

fn chat(args: ChatArgs) -> Result<()> {
    let backend = load_backend(&args.backend)?;
    let relationship = Relationship::from_label(&args.relationship)?;
    let cfg = ChatConfig::default();

    let resumed = match &args.log {
        Some(path) if path.exists() => {
            let events = read_events(path)?;
            (!events.is_empty())
                .then(|| ChatEpisodeState::from_events(&events))
                .transpose()?
        }
        _ => None,
    };
    let mut log = args.log.as_deref().map(EventLog::open).transpose()?;
    let mut state = match resumed {
        Some(state) => {
            if state.relationship() != relationship {
                bail!(
                    "log holds a {} episode, not {}",
                    state.relationship().label(),
                    relationship.label()
                );
            }
            println!("resumed {} ({})", state.episode_id(), state.status());
            state
        }
        None => {
            let millis = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis());
            let id = format!("chat-{millis}");
            let (state, created) = ChatEpisodeState::create(id, relationship);
            if let Some(log) = log.as_mut() {
                log.append(&[created])?;
            }
            state
        }
    };
    let (user_role, bot_role) = relationship.roles();
    println!(
        "{}: you are {user_role}, the bot is {bot_role}. {CHAT_HELP}",
        relationship.label()
    );

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        print!("{user_role}> ");
        std::io::stdout().flush()?;
        let Some(line) = lines.next().transpose()? else {
            break;
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (cmd, rest) = line.split_once(' ').map_or((line, ""), |(c, r)| (c, r.trim()));
        let mut next = state.clone();
        let result: Result<Vec<ChatEvent>, _> = match cmd {
            "/quit" | "/exit" => break,
            "/help" => {
                println!("{CHAT_HELP}");
                continue;
            }
            "/status" => {
                println!(
                    "{} | session {} | {} summaries",
                    state.status(),
                    state.completed_sessions().len() + usize::from(state.status() == ChatStatus::Open),
                    state.memory().len()
                );
                continue;
            }
            "/advance" => match TimeInterval::parse_lenient(rest) {
                Ok(interval) => next.advance_time(interval),
                Err(e) => {
                    println!("! {e}");
                    continue;
                }
            },
            "/summary" => next.close_session(backend.as_ref(), &cfg),
            "/end" => next.end_episode(),
            _ if cmd.starts_with('/') => {
                println!("! unknown command. {CHAT_HELP}");
                continue;
            }
            _ => next.post_user_turn(line).and_then(|mut events| {
                let outcome = next.generate_bot_turn(backend.as_ref(), &cfg)?;
                if let Some(text) = &outcome.utterance {
                    println!("{bot_role}> {text}");
                }
                if outcome.session_ended {
                    println!("[session closed]");
                }
                events.extend(outcome.events);
                Ok(events)
            }),
        };
        match result {
            Ok(events) => {
                if let Some(log) = log.as_mut() {
                    log.append(&events)?;
                }
                state = next;
                for event in &events {
                    match event {
                        ChatEvent::SessionClosed { summary } => println!("summary: {summary}"),
                        ChatEvent::Advanced { interval } => println!("[{}]", interval.display_text()),
                        ChatEvent::Ended => println!("[episode ended]"),
                        _ => {}
                    }
                }
            }
            Err(e) => println!("! {e}"),
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let backend = load_backend(&args.backend)?;
    let mut cfg = ServiceConfig::new(&args.data_dir);
    cfg.debug_inputs = args.debug_inputs;
    cfg.static_dir = args.static_dir;
    cfg.cors_origins = args.cors_origins;
    let state = AppState::open(cfg, backend)?;
    let addr = SocketAddr::new(args.host, args.port);
    tokio::runtime::Runtime::new()?.block_on(forge_service::serve(addr, state))?;
    Ok(())
}

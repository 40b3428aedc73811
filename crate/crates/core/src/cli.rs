//! The `ukg` command line. Each subcommand loads the state directory, calls
//! one library operation, saves, and reports.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{Certainty, DatumKind, Source, SourceId, TripleId, UncertainTriple, VerdictId};
use crate::pipeline::{self, FusionConfig, HypothesisSpec};
use crate::service;
use crate::store::{self, SchemaFile, StateDir};

#[derive(Debug, Parser)]
#[command(name = "ukg", version, about = "Fuse uncertain historical statements into facts")]
struct Cli {
    /// State directory.
    #[arg(long, global = true, env = "UKG_STATE", default_value = "ukg-state")]
    state: PathBuf,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a state directory.
    Init(InitArgs),
    /// Manage sources.
    #[command(subcommand)]
    Source(SourceCommand),
    /// Read a mention file for one source.
    Capture {
        #[arg(long)]
        source: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Fuse mentions into factoids (forward chaining to a fixpoint).
    Associate,
    /// Promote triples above π to facts.
    Establish,
    /// Test a hypothesis and record the verdict.
    Test {
        #[arg(long)]
        hypothesis_file: PathBuf,
    },
    /// Feed a verdict back into source reliabilities.
    Propagate {
        #[arg(long)]
        verdict_id: String,
    },
    /// Match one pattern, e.g. `?d awardedIn 1256`.
    Query {
        #[arg(long)]
        pattern: String,
    },
    /// Show the provenance tree of a triple.
    Explain {
        #[arg(long)]
        triple_id: String,
    },
    /// Print the archive.
    Export,
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Args)]
struct InitArgs {
    /// Taxonomies, predicates, entities and sources to declare.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Fusion config (JSON); defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SourceCommand {
    /// Register a source.
    Add {
        #[arg(long)]
        name: String,
        /// Identifier; defaults to the name.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        reliability: f64,
        #[arg(long, default_value = "")]
        category: String,
    },
    /// List sources with their reliability.
    List,
}

/// Runs the CLI and returns the process exit code: 0 success, 1 usage,
/// 2 data or integrity, 3 non-termination guard.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let json = cli.json;
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            if json {
                let body = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
                let _ = writeln!(err, "{body}");
            } else {
                let _ = writeln!(err, "error: {e}");
            }
            e.exit_code()
        }
    }
}

pub(crate) fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DomainMismatch { .. } => "domain_mismatch",
        Error::InvariantViolation(_) => "invariant_violation",
        Error::OutOfRange { .. } => "out_of_range",
        Error::UnknownId(_) => "unknown_id",
        Error::UnknownSource(_) => "unknown_source",
        Error::UnknownPredicate(_) => "unknown_predicate",
        Error::Duplicate { .. } => "duplicate",
        Error::Taxonomy(_) => "taxonomy",
        Error::Config(_) => "config",
        Error::NonTermination { .. } => "non_termination",
        Error::VerdictUndetermined(_) => "verdict_undetermined",
        Error::AlreadyApplied(_) => "already_applied",
        Error::Parse { .. } => "parse",
        Error::VersionMismatch { .. } => "version_mismatch",
        Error::Integrity(_) => "integrity",
        Error::Locked(_) => "locked",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)?;
    } else {
        let text = text();
        if !text.is_empty() {
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

struct Session {
    dir: StateDir,
    graph: KnowledgeGraph,
    config: FusionConfig,
}

impl Session {
    fn open(path: &Path) -> Result<Self> {
        let dir = StateDir::open(path)?;
        let graph = dir.load()?;
        let config = dir.config()?;
        Ok(Self { dir, graph, config })
    }

    fn save(&self) -> Result<()> {
        self.dir.save(&self.graph)
    }
}

fn describe(t: &UncertainTriple) -> String {
    format!(
        "{} {:<8} ({} {} {}) {}",
        t.id, t.kind, t.subject, t.predicate, t.object, t.certainty
    )
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Init(args) => {
            let config = match &args.config {
                Some(p) => FusionConfig::load(p)?,
                None => FusionConfig::default(),
            };
            let mut graph = KnowledgeGraph::new();
            if let Some(p) = &args.schema {
                SchemaFile::load(p)?.apply(&mut graph)?;
            }
            StateDir::init(&cli.state, &graph, &config)?;
            let summary = json!({
                "state": cli.state,
                "taxonomies": graph.taxonomies().len(),
                "predicates": graph.predicates().len(),
                "sources": graph.sources().count(),
            });
            emit(out, json, &summary, || format!("initialized {}", cli.state.display()))
        }
        Command::Source(SourceCommand::Add {
            name,
            id,
            reliability,
            category,
        }) => {
            let mut s = Session::open(&cli.state)?;
            let source = Source {
                id: SourceId::new(id.unwrap_or_else(|| name.clone())),
                name,
                category,
                reliability: Certainty::new(reliability).map_err(|_| Error::OutOfRange {
                    what: "reliability",
                    value: reliability,
                    expected: "[0, 1]",
                })?,
            };
            s.graph.add_source(source.clone())?;
            s.save()?;
            emit(out, json, &source, || {
                format!("added source {} (reliability {})", source.id, source.reliability)
            })
        }
        Command::Source(SourceCommand::List) => {
            let s = Session::open(&cli.state)?;
            let sources: Vec<&Source> = s.graph.sources().collect();
            emit(out, json, &sources, || {
                sources
                    .iter()
                    .map(|x| format!("{}\t{}\t{}\t{}", x.id, x.reliability, x.category, x.name))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Capture { source, file } => {
            let mut s = Session::open(&cli.state)?;
            let source = SourceId::new(source);
            let statements = store::import_mentions(&file, &s.graph, &source)?;
            let report = pipeline::capture(&mut s.graph, &source, &statements, &s.config)?;
            s.save()?;
            emit(out, json, &report, || {
                format!(
                    "{} mentions captured from {source}, {} promoted directly to facts",
                    report.mentions.len(),
                    report.facts.len()
                )
            })
        }
        Command::Associate => {
            let mut s = Session::open(&cli.state)?;
            let report = pipeline::associate(&mut s.graph, &s.config)?;
            s.save()?;
            emit(out, json, &report, || {
                format!(
                    "{} new factoids, {} updated, {} retracted, {} merges ({} iterations)",
                    report.created.len(),
                    report.updated.len(),
                    report.retracted.len(),
                    report.merges.len(),
                    report.iterations
                )
            })
        }
        Command::Establish => {
            let mut s = Session::open(&cli.state)?;
            let report = pipeline::establish(&mut s.graph, &s.config)?;
            s.save()?;
            let facts: Vec<&UncertainTriple> = report
                .facts
                .iter()
                .map(|id| s.graph.triple(*id))
                .collect::<Result<_>>()?;
            let body = json!({
                "pi": s.config.pi,
                "promoted": report.promoted,
                "promoted_mentions": report.promoted_mentions,
                "demoted": report.demoted,
                "composites": report.composites,
                "facts": facts,
            });
            emit(out, json, &body, || {
                let mut lines = vec![format!(
                    "{} facts (pi = {}), {} demoted",
                    facts.len(),
                    s.config.pi.value(),
                    report.demoted.len()
                )];
                lines.extend(facts.iter().map(|t| describe(t)));
                lines.join("\n")
            })
        }
        Command::Test { hypothesis_file } => {
            let mut s = Session::open(&cli.state)?;
            let text = std::fs::read_to_string(&hypothesis_file)?;
            let spec: HypothesisSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            let hypothesis = spec.into_hypothesis(&s.graph, s.config.theta)?;
            let id = s.graph.add_hypothesis(hypothesis)?;
            let verdict = pipeline::test_hypothesis(&mut s.graph, &id, &s.config)?;
            s.save()?;
            let score = verdict.score();
            let body = json!({
                "verdict": verdict.id,
                "hypothesis": verdict.hypothesis,
                "status": verdict.status,
                "theta": verdict.theta,
                "score": score,
                "bindings": verdict.bindings,
                "supporting": verdict.supporting,
                "contradicting": verdict.contradicting,
            });
            emit(out, json, &body, || {
                let score = score.map_or("-".to_owned(), |c| c.to_string());
                format!(
                    "{}: {} (score {score}, theta {}), verdict {}",
                    verdict.hypothesis, verdict.status, verdict.theta, verdict.id
                )
            })
        }
        Command::Propagate { verdict_id } => {
            let mut s = Session::open(&cli.state)?;
            let report = pipeline::propagate_feedback(&mut s.graph, &VerdictId::new(verdict_id), &s.config)?;
            s.save()?;
            emit(out, json, &report, || {
                let mut lines: Vec<String> = report
                    .reliability
                    .iter()
                    .map(|d| format!("{}: reliability {} -> {}", d.source, d.old, d.new))
                    .collect();
                lines.push(format!("{} facts demoted", report.establish.demoted.len()));
                lines.join("\n")
            })
        }
        Command::Query { pattern } => {
            let s = Session::open(&cli.state)?;
            let p = pipeline::parse_pattern(&s.graph, &pattern)?;
            let matches = pipeline::query(&s.graph, &p)?;
            emit(out, json, &matches, || {
                matches
                    .iter()
                    .map(|m| {
                        let binds: Vec<String> = m.bindings.iter().map(|(k, v)| format!("?{k}={v}")).collect();
                        format!("{} {:<8} {} {}", m.triple, m.kind, m.certainty, binds.join(" "))
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Explain { triple_id } => {
            let s = Session::open(&cli.state)?;
            let id: TripleId = triple_id.parse()?;
            let tree = pipeline::decompose(&s.graph, id)?;
            emit(out, json, &tree, || {
                let mut lines = Vec::new();
                render_tree(&tree, 0, &mut lines);
                lines.join("\n")
            })
        }
        Command::Export => {
            let s = Session::open(&cli.state)?;
            store::write_archive(&s.graph, out)
        }
        Command::Serve { addr } => {
            let dir = StateDir::open(&cli.state)?;
            let state = service::ServiceState::from_dir(dir)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(addr, state))
        }
    }
}

fn render_tree(node: &pipeline::ProvenanceNode, depth: usize, lines: &mut Vec<String>) {
    let origin = match (&node.source, node.kind) {
        (Some(s), DatumKind::Mention) => format!(" [{s}]"),
        _ => String::new(),
    };
    lines.push(format!(
        "{}{} {} ({} {} {}) {}{origin}",
        "  ".repeat(depth),
        node.id,
        node.kind,
        node.subject,
        node.predicate,
        node.object,
        node.certainty
    ));
    for c in &node.children {
        render_tree(c, depth + 1, lines);
    }
}

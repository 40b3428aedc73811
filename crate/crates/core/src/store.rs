//! JSON-lines persistence.
//!
//! An archive is one JSON object per line, each tagged with `"record"`:
//!
//! ```text
//! {"record":"header","format_version":1,"next_id":7}
//! {"record":"source","id":"S1","name":"...","category":"register","reliability":0.9}
//! {"record":"taxonomy","name":"places","root":"Europe","edges":[["Europe","France"]]}
//! {"record":"predicate","name":"bornIn","domain":{"taxonomy":"places"},"tau":1}
//! {"record":"entity","id":"X","label":"X"}
//! {"record":"merge","entity":"diploma3","canonical":"diploma2"}
//! {"record":"triple","id":"t1","subject":"X",...}
//! {"record":"composite",...}
//! {"record":"hypothesis",...}
//! {"record":"verdict",...}
//! {"record":"audit","seq":1,"event":"capture",...}
//! {"record":"end","count":9}
//! ```
//!
//! Records appear in that order, each group sorted by id, so two saves of
//! the same state are byte-identical. The trailing `end` record carries the
//! number of body records and makes truncation detectable.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEntry, AuditLog};
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{
    Certainty, CompositeFactoid, Entity, EntityId, Hypothesis, Predicate, Source, SourceId,
    UncertainTriple,
};
use crate::pipeline::{FusionConfig, Statement, Verdict};
use crate::taxonomy::{Taxonomy, TaxonomyFile};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header { format_version: u32, next_id: u64 },
    Source(Source),
    Taxonomy(TaxonomyFile),
    Predicate(Predicate),
    Entity(Entity),
    Merge { entity: EntityId, canonical: EntityId },
    Triple(UncertainTriple),
    Composite(CompositeFactoid),
    Hypothesis(Hypothesis),
    Verdict(Verdict),
    Audit(AuditEntry),
    End { count: usize },
}

fn body_records(graph: &KnowledgeGraph) -> Vec<Record> {
    let mut out = Vec::new();
    out.extend(graph.sources.values().cloned().map(Record::Source));
    out.extend(graph.taxonomies.values().map(|t| Record::Taxonomy(t.to_file())));
    out.extend(graph.predicates.values().cloned().map(Record::Predicate));
    out.extend(graph.entities.values().cloned().map(Record::Entity));
    out.extend(graph.merges.iter().map(|(e, c)| Record::Merge {
        entity: e.clone(),
        canonical: c.clone(),
    }));
    out.extend(graph.triples.values().cloned().map(Record::Triple));
    out.extend(graph.composites.values().cloned().map(Record::Composite));
    out.extend(graph.hypotheses.values().cloned().map(Record::Hypothesis));
    out.extend(graph.verdicts.values().cloned().map(Record::Verdict));
    out.extend(graph.audit.entries().iter().cloned().map(Record::Audit));
    out
}

/// Writes `graph` as an archive after checking its integrity.
pub fn write_archive<W: Write>(graph: &KnowledgeGraph, mut out: W) -> Result<()> {
    graph.check_integrity()?;
    let body = body_records(graph);
    let header = Record::Header {
        format_version: FORMAT_VERSION,
        next_id: graph.next_id,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &body {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &Record::End { count: body.len() })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn to_string(graph: &KnowledgeGraph) -> Result<String> {
    let mut buf = Vec::new();
    write_archive(graph, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn duplicate(line: usize, what: &str, id: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: format!("duplicate {what} `{id}`"),
    }
}

/// Reads and validates an archive.
pub fn read_archive<R: BufRead>(input: R) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::new();
    let mut audit = Vec::new();
    let mut body = 0usize;
    let mut ended = false;
    let mut last_line = 0;

    for (idx, line) in input.lines().enumerate() {
        let n = idx + 1;
        last_line = n;
        let line = line?;
        if ended {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Parse {
                line: n,
                message: "content after the end record".into(),
            });
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: n,
            message: e.to_string(),
        };
        if n == 1 {
            let raw: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
            if raw.get("record").and_then(|r| r.as_str()) != Some("header") {
                return Err(Error::Parse {
                    line: 1,
                    message: "the first record must be the header".into(),
                });
            }
            let version = raw.get("format_version").and_then(|v| v.as_u64());
            if version != Some(u64::from(FORMAT_VERSION)) {
                return Err(Error::VersionMismatch {
                    found: version.and_then(|v| u32::try_from(v).ok()).unwrap_or(u32::MAX),
                    supported: FORMAT_VERSION,
                });
            }
            let Record::Header { next_id, .. } = serde_json::from_value(raw).map_err(parse_err)? else {
                unreachable!("tag checked above");
            };
            graph.next_id = next_id;
            continue;
        }

        match serde_json::from_str::<Record>(&line).map_err(parse_err)? {
            Record::Header { .. } => {
                return Err(Error::Parse {
                    line: n,
                    message: "second header record".into(),
                })
            }
            Record::End { count } => {
                if count != body {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("end record announces {count} records, found {body}"),
                    });
                }
                ended = true;
                continue;
            }
            Record::Source(s) => {
                if let Some(prev) = graph.sources.insert(s.id.clone(), s) {
                    return Err(duplicate(n, "source", prev.id));
                }
            }
            Record::Taxonomy(file) => {
                let tax = Taxonomy::from_file(file).map_err(|e| Error::Parse {
                    line: n,
                    message: e.to_string(),
                })?;
                let name = tax.name().to_owned();
                if graph.taxonomies.insert(name.clone(), tax).is_some() {
                    return Err(duplicate(n, "taxonomy", name));
                }
            }
            Record::Predicate(p) => {
                if let Some(prev) = graph.predicates.insert(p.name.clone(), p) {
                    return Err(duplicate(n, "predicate", prev.name));
                }
            }
            Record::Entity(e) => {
                if let Some(prev) = graph.entities.insert(e.id.clone(), e) {
                    return Err(duplicate(n, "entity", prev.id));
                }
            }
            Record::Merge { entity, canonical } => {
                if graph.merges.insert(entity.clone(), canonical).is_some() {
                    return Err(duplicate(n, "merge", entity));
                }
            }
            Record::Triple(t) => {
                if let Some(prev) = graph.triples.insert(t.id, t) {
                    return Err(duplicate(n, "triple", prev.id));
                }
            }
            Record::Composite(c) => {
                if let Some(prev) = graph.composites.insert(c.subject.clone(), c) {
                    return Err(duplicate(n, "composite", prev.id));
                }
            }
            Record::Hypothesis(h) => {
                if let Some(prev) = graph.hypotheses.insert(h.id.clone(), h) {
                    return Err(duplicate(n, "hypothesis", prev.id));
                }
            }
            Record::Verdict(v) => {
                if let Some(prev) = graph.verdicts.insert(v.id.clone(), v) {
                    return Err(duplicate(n, "verdict", prev.id));
                }
            }
            Record::Audit(entry) => audit.push(entry),
        }
        body += 1;
    }

    if last_line == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "empty archive".into(),
        });
    }
    if !ended {
        return Err(Error::Parse {
            line: last_line + 1,
            message: "archive is truncated (no end record)".into(),
        });
    }
    graph.audit = AuditLog::from_entries(audit)
        .ok_or_else(|| Error::Integrity("audit sequence numbers are not increasing".into()))?;
    graph.check_integrity()?;
    Ok(graph)
}

pub fn from_str(text: &str) -> Result<KnowledgeGraph> {
    read_archive(text.as_bytes())
}

/// Saves atomically: the archive is written next to `path` and renamed
/// over it.
pub fn save(graph: &KnowledgeGraph, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        if let Err(e) = write_archive(graph, &mut w) {
            drop(w);
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<KnowledgeGraph> {
    read_archive(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Parses mention statements, one JSON object per line:
/// `{"s": ..., "p": ..., "o": ..., "credibility": 0.9}`. Blank lines are
/// skipped.
pub fn parse_mentions<R: BufRead>(input: R) -> Result<Vec<Statement>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let st: Statement = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if Certainty::new(st.credibility).is_err() {
            return Err(err(format!("credibility {} outside [0, 1]", st.credibility)));
        }
        out.push(st);
    }
    Ok(out)
}

/// Reads a mention file for a registered source.
pub fn import_mentions(path: &Path, graph: &KnowledgeGraph, source: &SourceId) -> Result<Vec<Statement>> {
    graph.source(source)?;
    parse_mentions(BufReader::new(File::open(path)?))
}

/// Declarations loaded by `ukg init --schema`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaFile {
    pub taxonomies: Vec<TaxonomyFile>,
    pub predicates: Vec<Predicate>,
    pub entities: Vec<Entity>,
    pub sources: Vec<Source>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Adds every declaration to `graph`, taxonomies first.
    pub fn apply(self, graph: &mut KnowledgeGraph) -> Result<()> {
        for t in self.taxonomies {
            graph.add_taxonomy(Taxonomy::from_file(t)?)?;
        }
        for p in self.predicates {
            graph.declare_predicate(p)?;
        }
        for e in self.entities {
            graph.upsert_entity(e)?;
        }
        for s in self.sources {
            graph.add_source(s)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// State directory
// ---------------------------------------------------------------------------

pub const STATE_FILE: &str = "state.jsonl";
pub const CONFIG_FILE: &str = "config.json";
const LOCK_FILE: &str = "lock";

/// A state directory holding `state.jsonl` and `config.json`, locked
/// exclusively for as long as the value lives.
#[derive(Debug)]
pub struct StateDir {
    root: PathBuf,
    _lock: File,
}

impl StateDir {
    fn lock(root: &Path) -> Result<File> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match file.try_lock() {
            Ok(()) => Ok(file),
            Err(TryLockError::WouldBlock) => Err(Error::Locked(root.to_owned())),
            Err(TryLockError::Error(e)) => Err(e.into()),
        }
    }

    /// Creates the directory with an empty graph and the given config.
    /// Refuses to overwrite an existing state.
    pub fn init(root: &Path, graph: &KnowledgeGraph, config: &FusionConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(root)?;
        let dir = Self {
            root: root.to_owned(),
            _lock: Self::lock(root)?,
        };
        if dir.state_path().exists() {
            return Err(Error::Duplicate {
                what: "state",
                id: dir.state_path().display().to_string(),
            });
        }
        dir.save_config(config)?;
        dir.save(graph)?;
        Ok(dir)
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(STATE_FILE).exists() {
            return Err(Error::Config(format!(
                "{} holds no state; run `ukg init` first",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_owned(),
            _lock: Self::lock(root)?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join(STATE_FILE)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn load(&self) -> Result<KnowledgeGraph> {
        load(&self.state_path())
    }

    pub fn save(&self, graph: &KnowledgeGraph) -> Result<()> {
        save(graph, &self.state_path())
    }

    /// The stored config, or the defaults when none was written.
    pub fn config(&self) -> Result<FusionConfig> {
        let path = self.config_path();
        if path.exists() {
            FusionConfig::load(&path)
        } else {
            Ok(FusionConfig::default())
        }
    }

    pub fn save_config(&self, config: &FusionConfig) -> Result<()> {
        let mut text = serde_json::to_string_pretty(config)?;
        text.push('\n');
        fs::write(self.config_path(), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DatumKind, Value, ValueDomain};
    use std::collections::BTreeSet;

    fn small() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_source(Source {
            id: "S1".into(),
            name: "Register".into(),
            category: "register".into(),
            reliability: Certainty::new(0.9).unwrap(),
        })
        .unwrap();
        g.declare_predicate(Predicate::new("awardedIn", ValueDomain::Year, 0)).unwrap();
        g.new_triple(
            "d".into(),
            "awardedIn",
            Value::Year(1256),
            Certainty::new(0.9).unwrap(),
            DatumKind::Mention,
            BTreeSet::new(),
            Some("S1".into()),
        )
        .unwrap();
        g
    }

    #[test]
    fn empty_state_is_header_and_trailer() {
        let text = to_string(&KnowledgeGraph::new()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"header\""));
        assert_eq!(lines[1], r#"{"record":"end","count":0}"#);
        assert_eq!(from_str(&text).unwrap(), KnowledgeGraph::new());
    }

    #[test]
    fn round_trip_and_determinism() {
        let g = small();
        let text = to_string(&g).unwrap();
        let back = from_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_string(&back).unwrap(), text);
    }

    #[test]
    fn truncation_and_version() {
        let text = to_string(&small()).unwrap();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_str(&truncated), Err(Error::Parse { .. })));
        let half = &text[..text.len() / 2];
        assert!(matches!(from_str(half), Err(Error::Parse { .. })));
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(matches!(
            from_str(&bumped),
            Err(Error::VersionMismatch { found: 7, supported: 1 })
        ));
        assert!(matches!(from_str(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn dangling_reference_is_refused() {
        let mut g = small();
        let t = g.triples.values_mut().next().unwrap();
        t.source = Some("S9".into());
        assert!(matches!(to_string(&g), Err(Error::Integrity(_))));
    }

    #[test]
    fn mention_lines() {
        let s3 = concat!(
            r#"{"s":"ThomasAquinas","p":"graduates","o":"diploma3","credibility":1.0}"#, "\n",
            r#"{"s":"diploma3","p":"isA","o":"doctorate","credibility":0.4}"#, "\n",
            "\n",
            r#"{"s":"diploma3","p":"awardedIn","o":1256,"credibility":0.9}"#, "\n",
        );
        assert_eq!(parse_mentions(s3.as_bytes()).unwrap().len(), 3);
        assert!(parse_mentions("".as_bytes()).unwrap().is_empty());
        let bad = r#"{"s":"x","p":"isA","o":"master","credibility":1.3}"#;
        assert!(matches!(parse_mentions(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn state_dir_lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("state");
        let dir = StateDir::init(&root, &KnowledgeGraph::new(), &FusionConfig::default()).unwrap();
        assert!(matches!(StateDir::open(&root), Err(Error::Locked(_))));
        drop(dir);
        let dir = StateDir::open(&root).unwrap();
        assert_eq!(dir.load().unwrap(), KnowledgeGraph::new());
        assert_eq!(dir.config().unwrap(), FusionConfig::default());
        drop(dir);
        assert!(matches!(
            StateDir::init(&root, &KnowledgeGraph::new(), &FusionConfig::default()),
            Err(Error::Duplicate { .. })
        ));
    }
}

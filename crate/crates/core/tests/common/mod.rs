//! Shared fixtures, an independent brute-force fixpoint enumerator, and
//! golden-file helpers.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use ukg_core::model::{
    Certainty, DatumKind, Predicate, Source, TripleId, UncertainTriple, Value, ValueDomain,
};
use ukg_core::pipeline::{self, FusionConfig, Statement};
use ukg_core::similarity::SimilarityConfig;
use ukg_core::taxonomy::Taxonomy;
use ukg_core::KnowledgeGraph;

pub fn c(v: f64) -> Certainty {
    Certainty::new(v).unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with a golden file; `UPDATE_GOLDEN=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{} differs\n--- expected\n{expected}\n--- actual\n{actual}",
            path.display()
        ))
    }
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ukg").chain(args.iter().copied());
    let code = ukg_core::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// The scripted desk session: init, two sources, capture S1, fuse, capture
/// S3, fuse, test, propagate. Returns `(step, exit code, stdout)` per step.
pub fn scripted_session(state: &Path) -> Vec<(&'static str, i32, String, String)> {
    let state = state.to_str().unwrap();
    let schema = fixture("schema.json");
    let config = fixture("config.json");
    let s1 = fixture("s1.jsonl");
    let s3 = fixture("s3.jsonl");
    let hyp = fixture("hypothesis.json");
    let steps: Vec<(&'static str, Vec<&str>)> = vec![
        ("init", vec!["init", "--schema", schema.to_str().unwrap(), "--config", config.to_str().unwrap()]),
        ("source-s1", vec!["source", "add", "--name", "S1", "--reliability", "1.0", "--category", "register"]),
        ("source-s3", vec!["source", "add", "--name", "S3", "--reliability", "1.0", "--category", "register"]),
        ("capture-s1", vec!["capture", "--source", "S1", "--file", s1.to_str().unwrap()]),
        ("associate-s1", vec!["associate"]),
        ("establish-s1", vec!["establish"]),
        ("capture-s3", vec!["capture", "--source", "S3", "--file", s3.to_str().unwrap()]),
        ("associate", vec!["associate"]),
        ("establish", vec!["establish"]),
        ("test", vec!["test", "--hypothesis-file", hyp.to_str().unwrap()]),
        ("propagate", vec!["propagate", "--verdict-id", "v1"]),
    ];
    steps
        .into_iter()
        .map(|(name, args)| {
            let mut full = vec!["--state", state, "--json"];
            full.extend(args);
            let (code, out, err) = run_cli(&full);
            (name, code, out, err)
        })
        .collect()
}

/// Golden-comparable form of a step's stdout: the temporary state path is
/// replaced by a placeholder.
pub fn normalize(stdout: &str, state: &Path) -> String {
    stdout.replace(state.to_str().unwrap(), "<state>")
}

// ---------------------------------------------------------------------------
// Graph fixtures
// ---------------------------------------------------------------------------

/// F1: Europe{France{ParisianRegion{Paris, Versailles}}, Italy{Roma}}.
pub fn places() -> Taxonomy {
    let mut t = Taxonomy::new("places");
    t.add_node("Europe", None).unwrap();
    for (n, p) in [
        ("France", "Europe"),
        ("Italy", "Europe"),
        ("ParisianRegion", "France"),
        ("Roma", "Italy"),
        ("Paris", "ParisianRegion"),
        ("Versailles", "ParisianRegion"),
    ] {
        t.add_node(n, Some(p)).unwrap();
    }
    t
}

/// F2: diploma{master, doctorate}.
pub fn diplomas() -> Taxonomy {
    let mut t = Taxonomy::new("diplomas");
    t.add_node("diploma", None).unwrap();
    t.add_node("master", Some("diploma")).unwrap();
    t.add_node("doctorate", Some("diploma")).unwrap();
    t
}

pub fn schema_graph() -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    g.add_taxonomy(places()).unwrap();
    g.add_taxonomy(diplomas()).unwrap();
    g.declare_predicate(Predicate::new("bornIn", ValueDomain::Taxonomy("places".into()), 1)).unwrap();
    g.declare_predicate(Predicate::new("isA", ValueDomain::Taxonomy("diplomas".into()), 0)).unwrap();
    g.declare_predicate(Predicate::new("graduates", ValueDomain::Entity, 0)).unwrap();
    g.declare_predicate(Predicate::new("awardedIn", ValueDomain::Year, 0)).unwrap();
    g
}

pub fn add_source(g: &mut KnowledgeGraph, id: &str, reliability: f64) {
    g.add_source(Source {
        id: id.into(),
        name: id.into(),
        category: "register".into(),
        reliability: c(reliability),
    })
    .unwrap();
}

pub fn st(s: &str, p: &str, o: serde_json::Value, credibility: f64) -> Statement {
    Statement {
        subject: s.into(),
        predicate: p.into(),
        object: o,
        credibility,
    }
}

/// End state of the Aquinas example: {graduates 0.99, isA master 0.58,
/// awardedIn 1256 0.98}, each a factoid standing for one mention. Returns
/// the graph and the three factoid ids in that order.
pub fn end_state() -> (KnowledgeGraph, [TripleId; 3]) {
    let mut g = schema_graph();
    add_source(&mut g, "S1", 1.0);
    let cfg = FusionConfig {
        pi: ukg_core::fusion::FactThreshold::new(1.0).unwrap(),
        ..FusionConfig::default()
    };
    let mut ids = [TripleId(0); 3];
    let rows = [
        ("ThomasAquinas", "graduates", serde_json::json!("diploma2"), 0.99),
        ("diploma2", "isA", serde_json::json!("master"), 0.58),
        ("diploma2", "awardedIn", serde_json::json!(1256), 0.98),
    ];
    for (i, (s, p, o, v)) in rows.into_iter().enumerate() {
        let m = pipeline::capture(&mut g, &"S1".into(), &[st(s, p, o, v)], &cfg).unwrap().mentions[0];
        let t = g.triple(m).unwrap().clone();
        ids[i] = g
            .new_triple(t.subject, &t.predicate, t.object, t.certainty, DatumKind::Factoid, BTreeSet::from([m]), None)
            .unwrap();
    }
    (g, ids)
}

/// Config matching the fixture files.
pub fn fixture_config() -> FusionConfig {
    FusionConfig::load(&fixture("config.json")).unwrap()
}

/// The desk session of [`scripted_session`] run through the library:
/// S1 and S3 both at reliability 1.
pub fn aquinas_graph() -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    ukg_core::store::SchemaFile::load(&fixture("schema.json")).unwrap().apply(&mut g).unwrap();
    add_source(&mut g, "S1", 1.0);
    add_source(&mut g, "S3", 1.0);
    let cfg = fixture_config();
    let s1 = ukg_core::store::import_mentions(&fixture("s1.jsonl"), &g, &"S1".into()).unwrap();
    pipeline::capture(&mut g, &"S1".into(), &s1, &cfg).unwrap();
    pipeline::associate(&mut g, &cfg).unwrap();
    pipeline::establish(&mut g, &cfg).unwrap();
    let s3 = ukg_core::store::import_mentions(&fixture("s3.jsonl"), &g, &"S3".into()).unwrap();
    pipeline::capture(&mut g, &"S3".into(), &s3, &cfg).unwrap();
    pipeline::associate(&mut g, &cfg).unwrap();
    pipeline::establish(&mut g, &cfg).unwrap();
    g
}

// ---------------------------------------------------------------------------
// Random graphs
// ---------------------------------------------------------------------------

pub struct RandomCase {
    /// Schema and sources only.
    pub base: KnowledgeGraph,
    /// Every statement captured into `graph`, in order, with its source.
    pub statements: Vec<(String, Statement)>,
    pub graph: KnowledgeGraph,
    pub config: FusionConfig,
    /// child -> parent of the random taxonomy
    pub parents: BTreeMap<String, String>,
    pub tau: u32,
}

/// A random tree of at most `max_nodes` nodes, a taxonomy predicate with
/// random τ, a year predicate, and up to `max_mentions` mentions over two
/// subjects and two sources.
pub fn random_case(rng: &mut StdRng, max_nodes: usize, max_mentions: usize) -> RandomCase {
    let n = rng.gen_range(1..=max_nodes);
    let mut tax = Taxonomy::new("t");
    let mut parents = BTreeMap::new();
    tax.add_node("n0", None).unwrap();
    for i in 1..n {
        let p = format!("n{}", rng.gen_range(0..i));
        tax.add_node(&format!("n{i}"), Some(&p)).unwrap();
        parents.insert(format!("n{i}"), p);
    }
    let tau = rng.gen_range(0..=3);
    let mut g = KnowledgeGraph::new();
    g.add_taxonomy(tax).unwrap();
    g.declare_predicate(Predicate::new("p", ValueDomain::Taxonomy("t".into()), tau)).unwrap();
    g.declare_predicate(Predicate::new("y", ValueDomain::Year, 0)).unwrap();
    for s in ["S1", "S2"] {
        let r = if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.0..=1.0) };
        add_source(&mut g, s, r);
    }
    let config = FusionConfig {
        similarity: SimilarityConfig {
            merge_threshold: 1.0,
            ..SimilarityConfig::default()
        },
        ..FusionConfig::default()
    };
    let base = g.clone();
    let mut statements = Vec::new();
    let m = rng.gen_range(0..=max_mentions);
    for _ in 0..m {
        let subject = if rng.gen_bool(0.7) { "alpha" } else { "omega" };
        let (pred, obj) = if rng.gen_bool(0.8) {
            ("p", serde_json::json!(format!("n{}", rng.gen_range(0..n))))
        } else {
            ("y", serde_json::json!(rng.gen_range(1250..=1251)))
        };
        let cred = match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..=1.0),
        };
        let src = if rng.gen_bool(0.5) { "S1" } else { "S2" };
        let s = st(subject, pred, obj, cred);
        pipeline::capture(&mut g, &src.into(), std::slice::from_ref(&s), &config).unwrap();
        statements.push((src.to_owned(), s));
    }
    RandomCase {
        base,
        statements,
        graph: g,
        config,
        parents,
        tau,
    }
}

// ---------------------------------------------------------------------------
// Brute-force enumerator
// ---------------------------------------------------------------------------

/// Identity of a rule input in the oracle: a mention id, or the
/// `(subject, predicate, object)` of a derived triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ident {
    Mention(TripleId),
    Derived(String, String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTriple {
    pub certainty: f64,
    /// Inputs of all derivations.
    pub inputs: BTreeSet<Ident>,
}

type Key = (String, String, String);

/// One rule firing: inputs, value, and the union of their evidence.
type Firing = ([Ident; 2], f64, BTreeSet<TripleId>);

struct Node {
    ident: Ident,
    subject: String,
    predicate: String,
    object: String,
    certainty: f64,
    derived: bool,
    evidence: BTreeSet<TripleId>,
}

fn ancestors(parents: &BTreeMap<String, String>, v: &str) -> Vec<String> {
    let mut out = vec![v.to_owned()];
    let mut cur = v;
    while let Some(p) = parents.get(cur) {
        out.push(p.clone());
        cur = p;
    }
    out
}

/// Deepest common ancestor and the smaller ascent distance to it, found by
/// walking both ancestor chains.
fn lca_and_distance(parents: &BTreeMap<String, String>, a: &str, b: &str) -> (String, u32) {
    let ca = ancestors(parents, a);
    let cb = ancestors(parents, b);
    for (i, x) in ca.iter().enumerate() {
        if let Some(j) = cb.iter().position(|y| y == x) {
            return (x.clone(), (i as u32).min(j as u32));
        }
    }
    unreachable!("single-rooted tree")
}

fn object_text(v: &Value) -> String {
    match v {
        Value::Node(n) => n.clone(),
        other => other.to_string(),
    }
}

/// Every pair of nodes sharing subject and predicate with disjoint
/// evidence is examined; a consistent pair yields its LCA unless that
/// would not be strictly above a derived input; an inconsistent pair of
/// mentions yields the stronger value. Rounds repeat on the full node set
/// until the derived set no longer changes.
pub fn brute_force(graph: &KnowledgeGraph, parents: &BTreeMap<String, String>, tau: u32) -> BTreeMap<(String, String, String), OracleTriple> {
    let mentions: Vec<&UncertainTriple> = graph.triples().filter(|t| t.is_mention()).collect();
    let mut derived: BTreeMap<(String, String, String), (OracleTriple, BTreeSet<TripleId>)> = BTreeMap::new();
    for _round in 0..1000 {
        let mut nodes: Vec<Node> = mentions
            .iter()
            .map(|t| Node {
                ident: Ident::Mention(t.id),
                subject: t.subject.to_string(),
                predicate: t.predicate.clone(),
                object: object_text(&t.object),
                certainty: t.certainty.value(),
                derived: false,
                evidence: BTreeSet::from([t.id]),
            })
            .collect();
        for ((s, p, o), (t, ev)) in &derived {
            nodes.push(Node {
                ident: Ident::Derived(s.clone(), p.clone(), o.clone()),
                subject: s.clone(),
                predicate: p.clone(),
                object: o.clone(),
                certainty: t.certainty,
                derived: true,
                evidence: ev.clone(),
            });
        }

        let mut next: BTreeMap<Key, Vec<Firing>> = BTreeMap::new();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.subject != b.subject || a.predicate != b.predicate || !a.evidence.is_disjoint(&b.evidence) {
                    continue;
                }
                let (lca, dist) = if a.predicate == "p" {
                    let (l, d) = lca_and_distance(parents, &a.object, &b.object);
                    (l, Some(d))
                } else if a.object == b.object {
                    (a.object.clone(), Some(0))
                } else {
                    (String::new(), None)
                };
                let ev: BTreeSet<TripleId> = a.evidence.union(&b.evidence).copied().collect();
                let key_for = |o: &str| (a.subject.clone(), a.predicate.clone(), o.to_owned());
                match dist {
                    Some(d) if d <= tau => {
                        if (a.derived && lca == a.object) || (b.derived && lca == b.object) {
                            continue;
                        }
                        let v = 1.0 - (1.0 - a.certainty) * (1.0 - b.certainty);
                        next.entry(key_for(&lca)).or_default().push(([a.ident.clone(), b.ident.clone()], v, ev));
                    }
                    _ => {
                        if a.derived || b.derived {
                            continue;
                        }
                        let a_wins = a.certainty > b.certainty || (a.certainty == b.certainty && a.object < b.object);
                        let (w, l) = if a_wins { (a, b) } else { (b, a) };
                        if l.certainty <= 0.0 {
                            continue;
                        }
                        let v = w.certainty * (1.0 - l.certainty);
                        next.entry(key_for(&w.object)).or_default().push(([w.ident.clone(), l.ident.clone()], v, ev));
                    }
                }
            }
        }

        let next: BTreeMap<_, _> = next
            .into_iter()
            .map(|(k, ds)| {
                let certainty = 1.0 - ds.iter().map(|(_, v, _)| 1.0 - v).product::<f64>();
                let inputs = ds.iter().flat_map(|(i, _, _)| i.iter().cloned()).collect();
                let evidence = ds.iter().flat_map(|(_, _, e)| e.iter().copied()).collect();
                (k, (OracleTriple { certainty, inputs }, evidence))
            })
            .collect();
        let stable = next.len() == derived.len()
            && next.iter().zip(&derived).all(|((k1, (t1, e1)), (k2, (t2, e2)))| {
                k1 == k2 && t1.inputs == t2.inputs && e1 == e2 && (t1.certainty - t2.certainty).abs() <= 1e-12
            });
        derived = next;
        if stable {
            return derived.into_iter().map(|(k, (t, _))| (k, t)).collect();
        }
    }
    panic!("oracle did not stabilise");
}

/// The fused triples of `graph` in the oracle's vocabulary.
pub fn fused_view(graph: &KnowledgeGraph) -> BTreeMap<(String, String, String), OracleTriple> {
    let ident = |id: &TripleId| {
        let t = graph.triple(*id).unwrap();
        if t.is_mention() {
            Ident::Mention(*id)
        } else {
            Ident::Derived(t.subject.to_string(), t.predicate.clone(), object_text(&t.object))
        }
    };
    graph
        .triples()
        .filter(|t| t.is_fused())
        .map(|t| {
            let key = (t.subject.to_string(), t.predicate.clone(), object_text(&t.object));
            let inputs = t.derivations.iter().flat_map(|d| d.inputs.iter().map(ident)).collect();
            (
                key,
                OracleTriple {
                    certainty: t.certainty.value(),
                    inputs,
                },
            )
        })
        .collect()
}

/// `Ok` when both maps have the same keys and inputs and certainties agree
/// within `tol`.
pub fn same_fixpoint(
    actual: &BTreeMap<(String, String, String), OracleTriple>,
    expected: &BTreeMap<(String, String, String), OracleTriple>,
    tol: f64,
) -> Result<(), String> {
    let ka: BTreeSet<_> = actual.keys().collect();
    let ke: BTreeSet<_> = expected.keys().collect();
    if ka != ke {
        return Err(format!("key sets differ: actual {ka:?}, expected {ke:?}"));
    }
    for (k, e) in expected {
        let a = &actual[k];
        if a.inputs != e.inputs {
            return Err(format!("{k:?}: inputs {:?} vs {:?}", a.inputs, e.inputs));
        }
        if (a.certainty - e.certainty).abs() > tol {
            return Err(format!("{k:?}: certainty {} vs {}", a.certainty, e.certainty));
        }
    }
    Ok(())
}

/// Captures `statements` into a copy of `base` in the given order.
pub fn replay<'a>(base: &KnowledgeGraph, statements: impl IntoIterator<Item = &'a (String, Statement)>, config: &FusionConfig) -> KnowledgeGraph {
    let mut g = base.clone();
    for (src, s) in statements {
        pipeline::capture(&mut g, &src.as_str().into(), std::slice::from_ref(s), config).unwrap();
    }
    g
}

/// Fused triples keyed by `(s, p, o)` with certainty only.
pub fn fused_certainties(graph: &KnowledgeGraph) -> BTreeMap<(String, String, String), f64> {
    fused_view(graph).into_iter().map(|(k, t)| (k, t.certainty)).collect()
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

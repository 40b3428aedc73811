//! Domain types shared across the pipeline: certainties, identifiers, values,
//! predicates, sources, weighted triples and hypotheses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// A confidence score, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Certainty(f64);

impl Certainty {
    pub const ZERO: Certainty = Certainty(0.0);
    pub const ONE: Certainty = Certainty(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Certainty(value))
        } else {
            Err(Error::OutOfRange {
                what: "certainty",
                value,
                expected: "[0, 1]",
            })
        }
    }

    /// Clamps arithmetic results back into `[0, 1]`. NaN maps to zero.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Certainty(0.0)
        } else {
            Certainty(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Certainty {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Certainty::new(v)
    }
}

impl From<Certainty> for f64 {
    fn from(c: Certainty) -> f64 {
        c.0
    }
}

impl fmt::Display for Certainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Surrogate triple identifier, rendered as `t<n>`.
///
/// Ids are independent of content: two sources stating the same thing get
/// two ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleId(pub u64);

impl fmt::Display for TripleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl FromStr for TripleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix('t').unwrap_or(s);
        digits
            .parse()
            .map(TripleId)
            .map_err(|_| Error::UnknownId(s.to_owned()))
    }
}

impl Serialize for TripleId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TripleId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Identifier of an entity (person, diploma, ...). Non-empty.
    EntityId
);
string_id!(SourceId);
string_id!(HypothesisId);
string_id!(VerdictId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub label: String,
    /// Similarity domain used during entity resolution (e.g. `person`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Entity {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: EntityId::new(id),
            label: label.into(),
            domain: None,
        }
    }
}

/// Object of a triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Entity(EntityId),
    Node(String),
    Text(String),
    Integer(i64),
    Year(i32),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity(e) => write!(f, "{e}"),
            Value::Node(n) | Value::Text(n) => f.write_str(n),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Year(y) => write!(f, "{y}"),
        }
    }
}

impl Value {
    pub fn as_entity(&self) -> Option<&EntityId> {
        match self {
            Value::Entity(e) => Some(e),
            _ => None,
        }
    }
}

/// Codomain of a predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    Entity,
    Taxonomy(String),
    Text,
    Integer,
    Year,
}

impl ValueDomain {
    /// Parses a raw JSON object into a value of this domain.
    pub fn parse(
        &self,
        predicate: &str,
        raw: &serde_json::Value,
        taxonomies: &BTreeMap<String, Taxonomy>,
    ) -> Result<Value> {
        let mismatch = || Error::DomainMismatch {
            predicate: predicate.to_owned(),
            value: raw.to_string(),
        };
        let as_text = || match raw {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        };
        let as_int = || match raw {
            serde_json::Value::Number(n) => n.as_i64(),
            serde_json::Value::String(s) => s.trim().parse().ok(),
            _ => None,
        };
        match self {
            ValueDomain::Entity => match raw {
                serde_json::Value::String(s) if !s.is_empty() => Ok(Value::Entity(EntityId::new(s.clone()))),
                _ => Err(mismatch()),
            },
            ValueDomain::Text => as_text().map(Value::Text).ok_or_else(mismatch),
            ValueDomain::Integer => as_int().map(Value::Integer).ok_or_else(mismatch),
            ValueDomain::Year => as_int()
                .and_then(|y| i32::try_from(y).ok())
                .map(Value::Year)
                .ok_or_else(mismatch),
            ValueDomain::Taxonomy(name) => {
                let node = as_text().ok_or_else(mismatch)?;
                let tax = taxonomies
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("taxonomy `{name}` is not loaded")))?;
                if tax.contains(&node) {
                    Ok(Value::Node(node))
                } else {
                    Err(mismatch())
                }
            }
        }
    }

    /// Whether `value` belongs to this domain.
    pub fn admits(&self, value: &Value, taxonomies: &BTreeMap<String, Taxonomy>) -> bool {
        match (self, value) {
            (ValueDomain::Entity, Value::Entity(e)) => !e.as_str().is_empty(),
            (ValueDomain::Text, Value::Text(_))
            | (ValueDomain::Integer, Value::Integer(_))
            | (ValueDomain::Year, Value::Year(_)) => true,
            (ValueDomain::Taxonomy(name), Value::Node(n)) => {
                taxonomies.get(name).is_some_and(|t| t.contains(n))
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub domain: ValueDomain,
    /// Concept-distance threshold separating consistent from inconsistent
    /// values. A `tau` entry in the fusion config takes precedence.
    #[serde(default)]
    pub tau: u32,
}

impl Predicate {
    pub fn new(name: impl Into<String>, domain: ValueDomain, tau: u32) -> Self {
        Self {
            name: name.into(),
            domain,
            tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: SourceId,
    pub name: String,
    /// Free tag, e.g. `register` or `testimony`.
    #[serde(default)]
    pub category: String,
    pub reliability: Certainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumKind {
    Mention,
    Factoid,
    Fact,
}

impl fmt::Display for DatumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            DatumKind::Mention => "mention",
            DatumKind::Factoid => "factoid",
            DatumKind::Fact => "fact",
        })
    }
}

impl FromStr for DatumKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mention" => Ok(DatumKind::Mention),
            "factoid" => Ok(DatumKind::Factoid),
            "fact" => Ok(DatumKind::Fact),
            other => Err(Error::Config(format!("unknown datum kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Value-consistent composition: generalise to the least common ancestor.
    Consistent,
    /// Value-inconsistent composition: keep the stronger value, discounted.
    Inconsistent,
}

/// One firing of a composition rule that produced (part of) a derived triple.
///
/// For [`RuleKind::Consistent`] the inputs are sorted; for
/// [`RuleKind::Inconsistent`] they are `[winner, loser]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub rule: RuleKind,
    pub inputs: [TripleId; 2],
    pub value: Certainty,
}

/// A weighted triple: the unit of the uncertain knowledge graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainTriple {
    pub id: TripleId,
    pub subject: EntityId,
    pub predicate: String,
    pub object: Value,
    pub certainty: Certainty,
    pub kind: DatumKind,
    /// Triples this one was derived from. Empty only for mentions.
    #[serde(default)]
    pub provenance: BTreeSet<TripleId>,
    /// Present iff `kind` is mention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceId>,
    /// Credibility as stated in the source; mentions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credibility: Option<Certainty>,
    /// Rule firings behind a fused triple. Empty for mentions and for
    /// mentions promoted directly to facts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derivations: Vec<Derivation>,
}

impl UncertainTriple {
    pub fn is_mention(&self) -> bool {
        self.kind == DatumKind::Mention
    }

    /// Produced by the composition rules (as opposed to a mention or a
    /// mention promoted as-is).
    pub fn is_fused(&self) -> bool {
        !self.derivations.is_empty()
    }

    /// A fact or factoid standing for exactly one mention.
    pub fn promoted_mention(&self) -> Option<TripleId> {
        if !self.is_mention() && self.derivations.is_empty() && self.provenance.len() == 1 {
            self.provenance.iter().next().copied()
        } else {
            None
        }
    }

    /// Checks the kind/provenance/source invariants of a single triple.
    pub fn check_shape(&self) -> Result<()> {
        if self.subject.as_str().is_empty() {
            return Err(Error::InvariantViolation(format!("{}: empty subject", self.id)));
        }
        match self.kind {
            DatumKind::Mention => {
                if !self.provenance.is_empty() {
                    return Err(Error::InvariantViolation(format!(
                        "{}: a mention cannot have provenance",
                        self.id
                    )));
                }
                if self.source.is_none() {
                    return Err(Error::InvariantViolation(format!(
                        "{}: a mention must be linked to a source",
                        self.id
                    )));
                }
            }
            DatumKind::Factoid | DatumKind::Fact => {
                if self.provenance.is_empty() {
                    return Err(Error::InvariantViolation(format!(
                        "{}: a {} requires provenance",
                        self.id, self.kind
                    )));
                }
                if self.source.is_some() {
                    return Err(Error::InvariantViolation(format!(
                        "{}: only mentions link directly to a source",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Subject or object position of a hypothesis pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Var(String),
    Const(Value),
}

impl Term {
    pub fn var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let term = |t: &Term| match t {
            Term::Var(v) => format!("?{v}"),
            Term::Const(c) => c.to_string(),
        };
        write!(f, "({} {} {})", term(&self.subject), self.predicate, term(&self.object))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Confirmed,
    Infirmed,
    Undetermined,
    Untested,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Confirmed => "confirmed",
            VerdictStatus::Infirmed => "infirmed",
            VerdictStatus::Undetermined => "undetermined",
            VerdictStatus::Untested => "untested",
        })
    }
}

/// A tentative statement relating facts and factoids: a conjunction of
/// triple patterns sharing one variable namespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub patterns: Vec<TriplePattern>,
    pub threshold: Certainty,
    pub verdict: VerdictStatus,
}

/// Ω for one subject: all of its current triples taken together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeFactoid {
    pub id: String,
    pub subject: EntityId,
    pub members: BTreeSet<TripleId>,
    /// Weakest member certainty.
    pub certainty: Certainty,
}

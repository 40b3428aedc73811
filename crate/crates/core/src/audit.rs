//! Audit trail of every state change the pipeline makes on its own:
//! promotions, demotions, reliability updates, entity merges.

use serde::{Deserialize, Serialize};

use crate::model::{Certainty, EntityId, SourceId, TripleId, VerdictId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Capture {
        source: SourceId,
        mentions: usize,
    },
    Merge {
        entity: EntityId,
        canonical: EntityId,
    },
    Promotion {
        triple: TripleId,
        certainty: Certainty,
        /// Set when a new fact triple was created to stand for a mention.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from_mention: Option<TripleId>,
    },
    Demotion {
        triple: TripleId,
        certainty: Certainty,
        reason: DemotionReason,
    },
    Retraction {
        triple: TripleId,
    },
    ReliabilityChange {
        source: SourceId,
        old: Certainty,
        new: Certainty,
        verdict: VerdictId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemotionReason {
    /// Certainty no longer above the fact threshold.
    BelowThreshold,
    /// The triple was absorbed into a fused triple and is no longer current.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: AuditEvent,
}

/// Append-only list of audit entries with strictly increasing sequence numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn append(&mut self, event: AuditEvent) -> u64 {
        let seq = self.entries.last().map_or(1, |e| e.seq + 1);
        self.entries.push(AuditEntry { seq, event });
        seq
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rebuilds a log from stored entries; sequence numbers must increase.
    pub fn from_entries(entries: Vec<AuditEntry>) -> Option<Self> {
        entries
            .windows(2)
            .all(|w| w[0].seq < w[1].seq)
            .then_some(Self { entries })
    }
}

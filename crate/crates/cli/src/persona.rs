//! Scripted agent personas for headless simulation.
//!
//! A persona file is `{"personas": [AgentPersona, ...]}`. Agents are dealt
//! to personas in contiguous blocks, so 18 agents over two personas gives
//! nine of each.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use somekone_core::session::valid_nickname;
use somekone_core::Catalog;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("persona file lists no personas")]
    Empty,
    #[error("persona {persona:?}: unknown tag {tag:?}")]
    UnknownTag { persona: String, tag: String },
    #[error("persona {persona:?}: {what} probability {p} is outside [0, 1]")]
    Probability { persona: String, what: String, p: f64 },
    #[error("persona {persona:?}: dwell range {lo}..={hi} ms is empty")]
    DwellRange { persona: String, lo: u64, hi: u64 },
    #[error("persona id {0:?} must be 1 to 24 letters, digits, '_' or '-'")]
    BadId(String),
    #[error("duplicate persona id {0:?}")]
    Duplicate(String),
}

/// Optional actions an agent may take on an image it has seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Like,
    EmojiReaction,
    Comment,
    Share,
    Follow,
}

/// Per-action probabilities for images with and without a preferred tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Propensities {
    #[serde(default)]
    pub on_topic: BTreeMap<Action, f64>,
    #[serde(default)]
    pub off_topic: BTreeMap<Action, f64>,
}

/// Uniform dwell ranges in milliseconds, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellParams {
    pub on_topic_ms: (u64, u64),
    pub off_topic_ms: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPersona {
    pub persona_id: String,
    pub preferred_tags: BTreeSet<String>,
    pub propensities: Propensities,
    pub dwell: DwellParams,
}

impl AgentPersona {
    pub fn likes(&self, tags: &[String]) -> bool {
        tags.iter().any(|t| self.preferred_tags.contains(t))
    }

    pub fn propensity(&self, on_topic: bool, action: Action) -> f64 {
        let table = if on_topic {
            &self.propensities.on_topic
        } else {
            &self.propensities.off_topic
        };
        table.get(&action).copied().unwrap_or(0.0)
    }

    pub fn dwell_range(&self, on_topic: bool) -> (u64, u64) {
        if on_topic {
            self.dwell.on_topic_ms
        } else {
            self.dwell.off_topic_ms
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), PersonaError> {
        let id = &self.persona_id;
        if id.len() > 24 || !valid_nickname(id) {
            return Err(PersonaError::BadId(id.clone()));
        }
        for tag in &self.preferred_tags {
            if catalog.vocabulary().binary_search(tag).is_err() {
                return Err(PersonaError::UnknownTag {
                    persona: id.clone(),
                    tag: tag.clone(),
                });
            }
        }
        let tables = [("on_topic", &self.propensities.on_topic), ("off_topic", &self.propensities.off_topic)];
        for (side, table) in tables {
            for (action, &p) in table {
                if !(0.0..=1.0).contains(&p) {
                    return Err(PersonaError::Probability {
                        persona: id.clone(),
                        what: format!("{side} {action:?}"),
                        p,
                    });
                }
            }
        }
        for (lo, hi) in [self.dwell.on_topic_ms, self.dwell.off_topic_ms] {
            if lo > hi {
                return Err(PersonaError::DwellRange {
                    persona: id.clone(),
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaFile {
    pub personas: Vec<AgentPersona>,
}

impl PersonaFile {
    pub fn from_json(text: &str, catalog: &Catalog) -> Result<Self, PersonaError> {
        let file: Self = serde_json::from_str(text)?;
        if file.personas.is_empty() {
            return Err(PersonaError::Empty);
        }
        let mut seen = BTreeSet::new();
        for p in &file.personas {
            p.validate(catalog)?;
            if !seen.insert(&p.persona_id) {
                return Err(PersonaError::Duplicate(p.persona_id.clone()));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path, catalog: &Catalog) -> Result<Self, crate::CliError> {
        let text = crate::read_text(path)?;
        Ok(Self::from_json(&text, catalog)?)
    }

    /// Persona of agent `index` out of `agents`.
    pub fn assign(&self, index: usize, agents: usize) -> &AgentPersona {
        &self.personas[index * self.personas.len() / agents.max(1)]
    }
}

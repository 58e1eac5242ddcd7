//! Log-derived session state.
//!
//! Everything here is a function of (config, catalog, log): replaying the
//! same events rebuilds the same engine. Per-user rng streams are keyed by
//! the user's event count, so a user's queue only changes when the log does.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::SessionError;
use crate::catalog::{Catalog, ImageId};
use crate::coengagement::{build_coengagement, topic_projection, CoEngagementGraph, GraphPayload};
use crate::config::{derive_rng, SessionConfig};
use crate::profiling::{
    build_profile, ranked_tags, similarity_edges, SimilarityEdge, Strategy, StrategyLearner, UserProfile,
};
use crate::recommender::{next_queue, scores_of, RecContext, RecommendationCandidate, RecommendationQueue};
use crate::scoring::{engagement_score, EngagementScore, ScoreMap};
use crate::tracking::{ActionLog, EngagementEvent, EventKind, NewEvent, TrackingError, UserId};

pub const MAX_NICKNAME_LEN: usize = 32;

/// Nicknames double as user ids: 1 to 32 ASCII letters, digits, `_` or `-`.
pub fn valid_nickname(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_NICKNAME_LEN
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Result of one successful ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub event: EngagementEvent,
    pub score: Option<EngagementScore>,
    /// Strategy credited by this event, with the score that triggered it.
    pub feedback: Option<(Strategy, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagWeight {
    pub tag: String,
    pub weight: f64,
}

/// Wire and export shape of a profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePayload {
    pub user: UserId,
    pub affinities: BTreeMap<String, f64>,
    pub taste: Vec<f64>,
    pub strategy_weights: BTreeMap<Strategy, f64>,
    pub totals: BTreeMap<String, u64>,
    pub top_tags: Vec<TagWeight>,
    pub scores: Vec<EngagementScore>,
    pub score_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagClouds {
    pub class: Vec<TagWeight>,
    pub users: BTreeMap<UserId, Vec<TagWeight>>,
}

/// Everything derived from the log at one watermark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedSnapshot {
    pub watermark: u64,
    pub scores: Vec<EngagementScore>,
    pub profiles: BTreeMap<UserId, ProfilePayload>,
    pub similarity: Vec<SimilarityEdge>,
    pub image_coeng: GraphPayload,
    pub topic_coeng: GraphPayload,
    pub queues: BTreeMap<UserId, Vec<RecommendationCandidate>>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: SessionConfig,
    catalog: Catalog,
    log: ActionLog,
    pair_events: BTreeMap<(UserId, ImageId), Vec<usize>>,
    user_events: BTreeMap<UserId, Vec<usize>>,
    scores: ScoreMap,
    /// Seen images per user in log order.
    feeds: BTreeMap<UserId, Vec<ImageId>>,
    learners: BTreeMap<UserId, StrategyLearner>,
    /// Strategy that queued a seen image, awaiting engagement.
    pending: BTreeMap<(UserId, ImageId), Strategy>,
    credited: BTreeSet<(UserId, ImageId)>,
    profiles: BTreeMap<UserId, UserProfile>,
    image_graph: CoEngagementGraph,
}

impl Engine {
    pub fn new(config: SessionConfig, catalog: Catalog, session_id: &str) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self {
            config,
            catalog,
            log: ActionLog::new(session_id),
            pair_events: BTreeMap::new(),
            user_events: BTreeMap::new(),
            scores: ScoreMap::new(),
            feeds: BTreeMap::new(),
            learners: BTreeMap::new(),
            pending: BTreeMap::new(),
            credited: BTreeSet::new(),
            profiles: BTreeMap::new(),
            image_graph: CoEngagementGraph::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn log(&self) -> &ActionLog {
        &self.log
    }

    pub fn watermark(&self) -> u64 {
        self.log.last_seq()
    }

    pub fn scores(&self) -> &ScoreMap {
        &self.scores
    }

    pub fn profiles(&self) -> &BTreeMap<UserId, UserProfile> {
        &self.profiles
    }

    pub fn image_graph(&self) -> &CoEngagementGraph {
        &self.image_graph
    }

    pub fn learner(&self, user: &str) -> StrategyLearner {
        self.learners.get(user).copied().unwrap_or_default()
    }

    /// Users with at least one logged event.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_events.keys().map(String::as_str)
    }

    /// Validates an event against the log, the catalog and the nickname rule.
    pub fn check(&self, event: &NewEvent) -> Result<u64, TrackingError> {
        self.log.check_refs(event, &self.catalog, valid_nickname)
    }

    pub fn ingest(&mut self, event: NewEvent) -> Result<IngestOutcome, SessionError> {
        self.ingest_with(event, |_| Ok(()))
    }

    /// Validates `event`, hands it to `persist` and only then applies it.
    /// A persist failure leaves the engine unchanged.
    pub fn ingest_with(
        &mut self,
        event: NewEvent,
        persist: impl FnOnce(&EngagementEvent) -> std::io::Result<()>,
    ) -> Result<IngestOutcome, SessionError> {
        let seq = self.check(&event)?;
        let record = EngagementEvent {
            seq,
            user: event.user.clone(),
            image: event.image.clone(),
            t: event.t,
            kind: event.kind.clone(),
        };
        persist(&record).map_err(|e| SessionError::Storage(e.to_string()))?;

        let user = event.user.clone();
        let pair = event.image.clone().map(|i| (user.clone(), i));

        // attribution reads the queue as it stood before this event
        if let (Some(pair), EventKind::Seen) = (&pair, &event.kind) {
            if !self.credited.contains(pair) && !self.pending.contains_key(pair) {
                let queue = self.queue_for(&user);
                if let Some(item) = queue.items.iter().find(|c| c.image == pair.1) {
                    self.pending.insert(pair.clone(), item.strategy);
                }
            }
        }

        let appended = self.log.append(event)?;
        debug_assert_eq!(appended, seq);
        let index = self.log.len() - 1;
        self.user_events.entry(user.clone()).or_default().push(index);

        let mut score = None;
        let mut feedback = None;
        if let Some(pair) = pair {
            if record.kind == EventKind::Seen {
                self.feeds.entry(user.clone()).or_default().push(pair.1.clone());
            }
            self.pair_events.entry(pair.clone()).or_default().push(index);
            let events = self.pair_events[&pair].iter().map(|&i| &self.log.events()[i]);
            let new = engagement_score(events, &self.config.weights)?;
            let previous = self.scores.insert(pair.clone(), new.clone());

            let theta = self.config.theta_engaged;
            if new.value >= theta && !self.credited.contains(&pair) {
                if let Some(strategy) = self.pending.remove(&pair) {
                    self.credited.insert(pair.clone());
                    if strategy != Strategy::Random {
                        let learning = self.config.learning();
                        let max = self.config.weights.score_max;
                        self.learners
                            .entry(user.clone())
                            .or_default()
                            .update(strategy, new.value, max, &learning)?;
                    }
                    feedback = Some((strategy, new.value));
                }
            }

            let was = previous.as_ref().map_or(0.0, |s| s.value);
            if (was >= theta || new.value >= theta) && was != new.value {
                self.image_graph =
                    build_coengagement(&self.scores, theta, self.config.weights.score_max)?;
            }
            score = Some(new);
        }
        self.rebuild_profile(&user)?;
        Ok(IngestOutcome {
            event: record,
            score,
            feedback,
        })
    }

    fn rebuild_profile(&mut self, user: &str) -> Result<(), SessionError> {
        let scores: Vec<&EngagementScore> = scores_of(&self.scores, user).collect();
        let events = self
            .user_events
            .get(user)
            .into_iter()
            .flatten()
            .map(|&i| &self.log.events()[i]);
        let learner = self.learner(user);
        let profile = build_profile(user, &scores, events, &self.catalog, &learner, &self.config.learning())?;
        self.profiles.insert(user.to_owned(), profile);
        Ok(())
    }

    pub fn feeds(&self) -> &BTreeMap<UserId, Vec<ImageId>> {
        &self.feeds
    }

    pub fn context(&self) -> RecContext<'_> {
        RecContext {
            catalog: &self.catalog,
            profiles: &self.profiles,
            scores: &self.scores,
            graph: &self.image_graph,
            feeds: &self.feeds,
            params: &self.config.recommender,
            theta_engaged: self.config.theta_engaged,
            score_max: self.config.weights.score_max,
        }
    }

    /// Number of logged events by `user`; keys the user's queue rng.
    pub fn event_count(&self, user: &str) -> u64 {
        self.user_events.get(user).map_or(0, |v| v.len() as u64)
    }

    /// The user's queue at the current watermark.
    pub fn queue_for(&self, user: &str) -> RecommendationQueue {
        let mut rng = derive_rng(self.config.seed, user, self.event_count(user));
        next_queue(&self.context(), user, &mut rng)
    }

    pub fn similarity_edges(&self) -> Vec<SimilarityEdge> {
        similarity_edges(&self.profiles, self.config.theta_sim)
    }

    pub fn topic_graph(&self) -> CoEngagementGraph {
        topic_projection(&self.image_graph, &self.catalog).expect("engaged images come from the catalog")
    }

    pub fn profile_payload(&self, user: &str) -> Option<ProfilePayload> {
        let p = self.profiles.get(user)?;
        Some(ProfilePayload {
            user: p.user.clone(),
            affinities: p.affinities.clone(),
            taste: p.taste.clone(),
            strategy_weights: p.strategy_weights.clone(),
            totals: p.totals_by_kind.clone(),
            top_tags: ranked_tags(&p.affinities)
                .into_iter()
                .map(|(tag, weight)| TagWeight {
                    tag: tag.to_owned(),
                    weight,
                })
                .collect(),
            scores: scores_of(&self.scores, user).cloned().collect(),
            score_max: self.config.weights.score_max,
        })
    }

    pub fn datalog(&self, user: &str) -> Vec<EngagementEvent> {
        self.log.events_by(user).cloned().collect()
    }

    pub fn tag_clouds(&self) -> TagClouds {
        let mut class: BTreeMap<&str, f64> = BTreeMap::new();
        let mut users = BTreeMap::new();
        for (user, p) in &self.profiles {
            for (tag, &a) in &p.affinities {
                *class.entry(tag).or_default() += a;
            }
            users.insert(
                user.clone(),
                ranked_tags(&p.affinities)
                    .into_iter()
                    .map(|(tag, weight)| TagWeight {
                        tag: tag.to_owned(),
                        weight,
                    })
                    .collect(),
            );
        }
        let class_map: BTreeMap<String, f64> = class.into_iter().map(|(t, w)| (t.to_owned(), w)).collect();
        TagClouds {
            class: ranked_tags(&class_map)
                .into_iter()
                .map(|(tag, weight)| TagWeight {
                    tag: tag.to_owned(),
                    weight,
                })
                .collect(),
            users,
        }
    }

    pub fn snapshot(&self) -> DerivedSnapshot {
        let users: Vec<&str> = self.users().collect();
        DerivedSnapshot {
            watermark: self.watermark(),
            scores: self.scores.values().cloned().collect(),
            profiles: users
                .iter()
                .filter_map(|u| self.profile_payload(u).map(|p| (u.to_string(), p)))
                .collect(),
            similarity: self.similarity_edges(),
            image_coeng: self.image_graph.to_payload(),
            topic_coeng: self.topic_graph().to_payload(),
            queues: users
                .iter()
                .map(|u| (u.to_string(), self.queue_for(u).items))
                .collect(),
        }
    }
}

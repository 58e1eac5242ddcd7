//! Engagement scores per (user, image) pair.
//!
//! A score is the clamped sum of weighted contributions of the pair's events.
//! It depends only on the multiset of events, never on their order: toggle
//! kinds (like, follow, share scope) are resolved from counts, and dwell and
//! comment bonuses are capped on their totals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ImageId;
use crate::tracking::{ActionLog, EngagementEvent, EventKind, ShareScope, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("events for more than one (user, image) pair: ({0}, {1}) and ({2}, {3})")]
    MixedPairs(String, String, String, String),
    #[error("cannot score an empty event set")]
    NoEvents,
    #[error("inactivity events are not attributed to an image")]
    Unattributed,
    #[error("invalid weight table: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightTable {
    pub seen: f64,
    pub dwell_per_second: f64,
    pub dwell_cap_seconds: f64,
    pub like: f64,
    pub unlike: f64,
    pub emoji_reaction: f64,
    pub comment_base: f64,
    pub comment_per_char: f64,
    /// Ceiling on the summed per-character comment bonus.
    pub comment_cap: f64,
    pub follow: f64,
    pub unfollow: f64,
    pub share_private: f64,
    pub share_friends: f64,
    pub share_public: f64,
    pub score_max: f64,
}

impl Default for WeightTable {
    fn default() -> Self {
        default_weights()
    }
}

pub fn default_weights() -> WeightTable {
    WeightTable {
        seen: 0.2,
        dwell_per_second: 0.1,
        dwell_cap_seconds: 20.0,
        like: 2.0,
        unlike: -2.0,
        emoji_reaction: 2.5,
        comment_base: 1.0,
        comment_per_char: 0.02,
        comment_cap: 2.0,
        follow: 3.0,
        unfollow: -3.0,
        share_private: 1.5,
        share_friends: 2.5,
        share_public: 3.5,
        score_max: 10.0,
    }
}

impl WeightTable {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let positive = [
            ("seen", self.seen),
            ("dwell_per_second", self.dwell_per_second),
            ("like", self.like),
            ("emoji_reaction", self.emoji_reaction),
            ("comment_base", self.comment_base),
            ("comment_per_char", self.comment_per_char),
            ("follow", self.follow),
            ("share_private", self.share_private),
            ("share_friends", self.share_friends),
            ("share_public", self.share_public),
            ("score_max", self.score_max),
        ];
        for (name, w) in positive {
            if !(w.is_finite() && w > 0.0) {
                return Err(ScoringError::InvalidWeights(format!("{name} must be > 0, got {w}")));
            }
        }
        for (name, w) in [("unlike", self.unlike), ("unfollow", self.unfollow)] {
            if !(w.is_finite() && w < 0.0) {
                return Err(ScoringError::InvalidWeights(format!("{name} must be < 0, got {w}")));
            }
        }
        for (name, w) in [
            ("dwell_cap_seconds", self.dwell_cap_seconds),
            ("comment_cap", self.comment_cap),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ScoringError::InvalidWeights(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn share(&self, scope: ShareScope) -> f64 {
        match scope {
            ShareScope::Private => self.share_private,
            ShareScope::Friends => self.share_friends,
            ShareScope::Public => self.share_public,
        }
    }
}

/// Keys of a score breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contribution {
    Seen,
    Dwell,
    Like,
    Unlike,
    Emoji,
    Comment,
    Follow,
    Unfollow,
    SharePrivate,
    ShareFriends,
    SharePublic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngagementScore {
    pub user: UserId,
    pub image: ImageId,
    pub value: f64,
    pub breakdown: BTreeMap<Contribution, f64>,
}

impl EngagementScore {
    /// Sum of the breakdown before clamping.
    pub fn raw_total(&self) -> f64 {
        self.breakdown.values().sum()
    }
}

#[derive(Default)]
struct Tally {
    seen: u32,
    dwell_ms: u64,
    likes: u32,
    unlikes: u32,
    emoji: u32,
    comments: u32,
    comment_chars: u64,
    follows: u32,
    unfollows: u32,
    shares: BTreeMap<ShareScope, u32>,
}

/// Resolves a toggle from counts: returns (on, cancelled). The toggle is on
/// when presses outnumber releases; equal counts cancel.
fn toggle(on: u32, off: u32) -> (bool, bool) {
    (on > 0, on > 0 && off >= on)
}

pub fn engagement_score<'a, I>(events: I, weights: &WeightTable) -> Result<EngagementScore, ScoringError>
where
    I: IntoIterator<Item = &'a EngagementEvent>,
{
    let mut pair: Option<(&str, &str)> = None;
    let mut tally = Tally::default();
    for e in events {
        let image = e.image.as_deref().ok_or(ScoringError::Unattributed)?;
        match pair {
            None => pair = Some((&e.user, image)),
            Some((u, i)) if u != e.user || i != image => {
                return Err(ScoringError::MixedPairs(
                    u.into(),
                    i.into(),
                    e.user.clone(),
                    image.into(),
                ))
            }
            _ => {}
        }
        match &e.kind {
            EventKind::Seen => tally.seen += 1,
            EventKind::DwellEnd { duration_ms } => tally.dwell_ms += duration_ms,
            EventKind::Like => tally.likes += 1,
            EventKind::Unlike => tally.unlikes += 1,
            EventKind::EmojiReaction { .. } => tally.emoji += 1,
            EventKind::Comment { length_chars, .. } => {
                tally.comments += 1;
                tally.comment_chars += u64::from(*length_chars);
            }
            EventKind::Follow { .. } => tally.follows += 1,
            EventKind::Unfollow { .. } => tally.unfollows += 1,
            EventKind::Share { scope } => *tally.shares.entry(*scope).or_default() += 1,
            EventKind::InactivityStart | EventKind::InactivityEnd => {
                return Err(ScoringError::Unattributed)
            }
        }
    }
    let (user, image) = pair.ok_or(ScoringError::NoEvents)?;

    let w = weights;
    let mut breakdown = BTreeMap::new();
    if tally.seen > 0 {
        breakdown.insert(Contribution::Seen, w.seen);
    }
    if tally.dwell_ms > 0 {
        let secs = (tally.dwell_ms as f64 / 1000.0).min(w.dwell_cap_seconds);
        breakdown.insert(Contribution::Dwell, w.dwell_per_second * secs);
    }
    let (liked, unliked) = toggle(tally.likes, tally.unlikes);
    if liked {
        breakdown.insert(Contribution::Like, w.like);
    }
    if unliked {
        breakdown.insert(Contribution::Unlike, w.unlike);
    }
    if tally.emoji > 0 {
        breakdown.insert(Contribution::Emoji, w.emoji_reaction * f64::from(tally.emoji));
    }
    if tally.comments > 0 {
        let bonus = (w.comment_per_char * tally.comment_chars as f64).min(w.comment_cap);
        breakdown.insert(
            Contribution::Comment,
            w.comment_base * f64::from(tally.comments) + bonus,
        );
    }
    let (followed, unfollowed) = toggle(tally.follows, tally.unfollows);
    if followed {
        breakdown.insert(Contribution::Follow, w.follow);
    }
    if unfollowed {
        breakdown.insert(Contribution::Unfollow, w.unfollow);
    }
    for (scope, key) in [
        (ShareScope::Private, Contribution::SharePrivate),
        (ShareScope::Friends, Contribution::ShareFriends),
        (ShareScope::Public, Contribution::SharePublic),
    ] {
        if tally.shares.contains_key(&scope) {
            breakdown.insert(key, w.share(scope));
        }
    }

    let raw: f64 = breakdown.values().sum();
    Ok(EngagementScore {
        user: user.to_owned(),
        image: image.to_owned(),
        value: raw.clamp(0.0, w.score_max),
        breakdown,
    })
}

pub type ScoreMap = BTreeMap<(UserId, ImageId), EngagementScore>;

/// Scores every (user, image) pair that has at least one event.
pub fn all_scores(log: &ActionLog, weights: &WeightTable) -> ScoreMap {
    let mut groups: BTreeMap<(&str, &str), Vec<&EngagementEvent>> = BTreeMap::new();
    for e in log.events() {
        if let Some(image) = &e.image {
            groups.entry((&e.user, image)).or_default().push(e);
        }
    }
    groups
        .into_iter()
        .map(|((u, i), events)| {
            let score = engagement_score(events, weights).expect("grouped by pair");
            ((u.to_owned(), i.to_owned()), score)
        })
        .collect()
}

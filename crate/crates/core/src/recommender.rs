//! Candidate generation, ranking and explanation of a user's upcoming queue.
//!
//! Three generators propose images: similar users' engagements (user-based
//! collaborative filtering), taste/tag overlap (content-based), and item-item
//! co-engagement plus popularity. A fourth source draws uniformly at random
//! and fills a slot with probability `epsilon`. Candidates are scored by a
//! linear form over named components; the largest positive weighted
//! component becomes the explanation.
//!
//! Nothing here reads image content or titles, only ids, tags and
//! engagement data.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageId};
use crate::coengagement::CoEngagementGraph;
use crate::profiling::{cosine_similarity, Strategy, UserProfile};
use crate::scoring::{Contribution, EngagementScore, ScoreMap};
use crate::tracking::UserId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderParams {
    /// Per-slot probability of a random pick.
    pub epsilon: f64,
    pub queue_len: usize,
    /// Number of most similar users consulted by user-based filtering.
    pub neighbors: usize,
    /// Cap on candidates emitted by each generator.
    pub candidates_per_strategy: usize,
    pub popularity_weight: f64,
    /// How many of the latest feed items count as recent.
    pub recency_window: usize,
    pub recency_penalty: f64,
}

impl Default for RecommenderParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            queue_len: 5,
            neighbors: 5,
            candidates_per_strategy: 20,
            popularity_weight: 0.2,
            recency_window: 20,
            recency_penalty: -0.5,
        }
    }
}

/// Named score components. Declaration order is the lexicographic order of
/// the names, which is the tie-break order for explanations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Coeng,
    Popularity,
    RecencyPenalty,
    Taste,
    UserCf,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Coeng,
        Component::Popularity,
        Component::RecencyPenalty,
        Component::Taste,
        Component::UserCf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Coeng => "coeng",
            Component::Popularity => "popularity",
            Component::RecencyPenalty => "recency_penalty",
            Component::Taste => "taste",
            Component::UserCf => "user_cf",
        }
    }
}

/// Unweighted signals attached to a candidate by its generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Signals {
    pub user_cf: f64,
    pub taste: f64,
    pub coeng: f64,
    pub popularity: f64,
}

impl Signals {
    fn max(self, o: Signals) -> Signals {
        Signals {
            user_cf: self.user_cf.max(o.user_cf),
            taste: self.taste.max(o.taste),
            coeng: self.coeng.max(o.coeng),
            popularity: self.popularity.max(o.popularity),
        }
    }
}

/// What a generator knew when it proposed the image; feeds explanation args.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Evidence {
    /// Image tag carrying the user's highest affinity.
    pub top_tag: Option<String>,
    /// Whether the user liked some image carrying `top_tag`.
    pub liked_tag: bool,
    pub neighbor: Option<UserId>,
    /// User's engaged image with the strongest co-engagement edge.
    pub source_image: Option<ImageId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidate {
    pub image: ImageId,
    pub strategy: Strategy,
    pub signals: Signals,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateId {
    BecauseYouLiked,
    TasteSimilarity,
    SimilarUsersEngaged,
    OftenViewedTogether,
    NotSeenRecently,
    Randomly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub component: Option<Component>,
    pub template: TemplateId,
    pub args: BTreeMap<String, String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationCandidate {
    pub image: ImageId,
    pub strategy: Strategy,
    pub signals: Signals,
    /// Weighted contributions; `total` is their sum.
    pub components: BTreeMap<Component, f64>,
    pub total: f64,
    /// The user has a feed history and this image is not in the recent window.
    #[serde(skip)]
    pub fresh: bool,
    #[serde(skip)]
    pub evidence: Evidence,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationQueue {
    pub user: UserId,
    pub items: Vec<RecommendationCandidate>,
}

/// Component multipliers used by [`rank`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankWeights {
    pub user_cf: f64,
    pub taste: f64,
    pub coeng: f64,
    pub popularity: f64,
    pub recency_penalty: f64,
}

impl RankWeights {
    /// Learned strategy weights renormalized over the three generators.
    pub fn from_profile(profile: Option<&UserProfile>, params: &RecommenderParams) -> Self {
        let learned = |s| profile.and_then(|p| p.strategy_weights.get(&s).copied());
        let [u, c, o] = match (
            learned(Strategy::UserCf),
            learned(Strategy::Content),
            learned(Strategy::CoEngagement),
        ) {
            (Some(u), Some(c), Some(o)) if u + c + o > 0.0 => {
                let s = u + c + o;
                [u / s, c / s, o / s]
            }
            _ => [1.0 / 3.0; 3],
        };
        Self {
            user_cf: u,
            taste: c,
            coeng: o,
            popularity: params.popularity_weight,
            recency_penalty: params.recency_penalty,
        }
    }
}

/// Everything the generators read, borrowed from a session snapshot.
pub struct RecContext<'a> {
    pub catalog: &'a Catalog,
    pub profiles: &'a BTreeMap<UserId, UserProfile>,
    pub scores: &'a ScoreMap,
    pub graph: &'a CoEngagementGraph,
    /// Seen images per user, oldest first.
    pub feeds: &'a BTreeMap<UserId, Vec<ImageId>>,
    pub params: &'a RecommenderParams,
    pub theta_engaged: f64,
    pub score_max: f64,
}

pub fn scores_of<'a>(scores: &'a ScoreMap, user: &'a str) -> impl Iterator<Item = &'a EngagementScore> + 'a {
    scores
        .range((user.to_owned(), String::new())..)
        .take_while(move |((u, _), _)| u == user)
        .map(|(_, s)| s)
}

fn is_liked(s: &EngagementScore) -> bool {
    s.breakdown.contains_key(&Contribution::Like) && !s.breakdown.contains_key(&Contribution::Unlike)
}

impl<'a> RecContext<'a> {
    fn feed(&self, user: &str) -> &'a [ImageId] {
        self.feeds.get(user).map_or(&[], Vec::as_slice)
    }

    /// Last `recency_window` feed items, most recent last.
    pub fn recent(&self, user: &str) -> &'a [ImageId] {
        let feed = self.feed(user);
        &feed[feed.len().saturating_sub(self.params.recency_window)..]
    }

    /// Images the generators may propose: never-seen images, or when all
    /// have been seen, images outside the recent window, or as a last resort
    /// the whole catalog.
    pub fn eligible(&self, user: &str) -> BTreeSet<&'a str> {
        let seen: BTreeSet<&str> = self.feed(user).iter().map(String::as_str).collect();
        let all = self.catalog.images().iter().map(|r| r.id.as_str());
        let unseen: BTreeSet<&str> = all.clone().filter(|i| !seen.contains(i)).collect();
        if !unseen.is_empty() {
            return unseen;
        }
        let recent: BTreeSet<&str> = self.recent(user).iter().map(String::as_str).collect();
        let stale: BTreeSet<&str> = all.clone().filter(|i| !recent.contains(i)).collect();
        if !stale.is_empty() {
            return stale;
        }
        all.collect()
    }

    fn profile_taste(&self, user: &str) -> Vec<f64> {
        self.profiles
            .get(user)
            .map(|p| p.taste.clone())
            .unwrap_or_else(|| vec![0.0; self.catalog.vocabulary().len()])
    }

    /// Other users with positive taste similarity, most similar first.
    pub fn similar_users(&self, user: &str, m: usize) -> Vec<(&'a str, f64)> {
        let taste = self.profile_taste(user);
        let mut sims: Vec<(&str, f64)> = self
            .profiles
            .iter()
            .filter(|(u, _)| u.as_str() != user)
            .filter_map(|(u, p)| {
                let s = cosine_similarity(&taste, &p.taste).ok()?;
                (s > 0.0).then_some((u.as_str(), s))
            })
            .collect();
        sims.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
        sims.truncate(m);
        sims
    }

    fn top_shared_tag(&self, user: &str, image: &str) -> (Option<String>, bool) {
        let Some(profile) = self.profiles.get(user) else {
            return (None, false);
        };
        let Some(record) = self.catalog.get(image) else {
            return (None, false);
        };
        let best = record
            .tags
            .iter()
            .filter_map(|t| profile.affinities.get(t).map(|&a| (t, a)))
            .filter(|(_, a)| *a > 0.0)
            .min_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
        let Some((tag, _)) = best else {
            return (None, false);
        };
        let liked = scores_of(self.scores, user).any(|s| {
            is_liked(s) && self.catalog.get(&s.image).is_some_and(|r| r.has_tag(tag))
        });
        (Some(tag.clone()), liked)
    }

    fn popularity(&self) -> BTreeMap<&'a str, f64> {
        let total = self.profiles.len();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for ((_, image), s) in self.scores {
            if s.value >= self.theta_engaged {
                *counts.entry(image.as_str()).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .map(|(i, c)| (i, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
            .collect()
    }
}

fn sort_truncate(mut v: Vec<RawCandidate>, key: impl Fn(&RawCandidate) -> (f64, f64), k: usize) -> Vec<RawCandidate> {
    v.sort_by(|x, y| {
        let (a1, a2) = key(x);
        let (b1, b2) = key(y);
        b1.total_cmp(&a1)
            .then_with(|| b2.total_cmp(&a2))
            .then_with(|| x.image.cmp(&y.image))
    });
    v.truncate(k);
    v
}

/// User-based collaborative filtering over the `m` most similar users.
pub fn gen_user_cf(ctx: &RecContext<'_>, user: &str, m: usize, k: usize) -> Vec<RawCandidate> {
    let pool = ctx.eligible(user);
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for (neighbor, sim) in ctx.similar_users(user, m) {
        for s in scores_of(ctx.scores, neighbor) {
            if s.value < ctx.theta_engaged || !pool.contains(s.image.as_str()) {
                continue;
            }
            let signal = sim * s.value / ctx.score_max;
            let entry = best.entry(s.image.as_str()).or_insert((signal, neighbor));
            if signal > entry.0 {
                *entry = (signal, neighbor);
            }
        }
    }
    let out = best
        .into_iter()
        .map(|(image, (signal, neighbor))| RawCandidate {
            image: image.to_owned(),
            strategy: Strategy::UserCf,
            signals: Signals {
                user_cf: signal,
                ..Signals::default()
            },
            evidence: Evidence {
                neighbor: Some(neighbor.to_owned()),
                ..Evidence::default()
            },
        })
        .collect();
    sort_truncate(out, |c| (c.signals.user_cf, 0.0), k)
}

/// Content-based filtering: cosine of the user's taste and each image's tags.
pub fn gen_content(ctx: &RecContext<'_>, user: &str, k: usize) -> Vec<RawCandidate> {
    let pool = ctx.eligible(user);
    let taste = ctx.profile_taste(user);
    let out = pool
        .into_iter()
        .filter_map(|id| {
            let record = ctx.catalog.get(id)?;
            let tags = ctx.catalog.tag_vector(record).ok()?;
            let signal = cosine_similarity(&taste, &tags).unwrap_or(0.0);
            let (top_tag, liked_tag) = if signal > 0.0 {
                ctx.top_shared_tag(user, id)
            } else {
                (None, false)
            };
            Some(RawCandidate {
                image: id.to_owned(),
                strategy: Strategy::Content,
                signals: Signals {
                    taste: signal,
                    ..Signals::default()
                },
                evidence: Evidence {
                    top_tag,
                    liked_tag,
                    ..Evidence::default()
                },
            })
        })
        .collect();
    sort_truncate(out, |c| (c.signals.taste, 0.0), k)
}

/// Item-based filtering: images co-engaged with the user's engaged images,
/// plus popular images.
pub fn gen_coengagement(ctx: &RecContext<'_>, user: &str, k: usize) -> Vec<RawCandidate> {
    let pool = ctx.eligible(user);
    let max_w = ctx.graph.max_weight();
    let mut coeng: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    if max_w > 0.0 {
        for s in scores_of(ctx.scores, user).filter(|s| s.value >= ctx.theta_engaged) {
            for (neighbor, w) in ctx.graph.neighbors(&s.image) {
                let Some(&neighbor) = pool.get(neighbor) else {
                    continue;
                };
                let signal = w / max_w;
                let entry = coeng.entry(neighbor).or_insert((signal, s.image.as_str()));
                if signal > entry.0 {
                    *entry = (signal, s.image.as_str());
                }
            }
        }
    }
    let popularity = ctx.popularity();
    let out = pool
        .into_iter()
        .filter_map(|id| {
            let (c, source) = coeng.get(id).copied().unwrap_or((0.0, ""));
            let p = popularity.get(id).copied().unwrap_or(0.0);
            (c > 0.0 || p > 0.0).then(|| RawCandidate {
                image: id.to_owned(),
                strategy: Strategy::CoEngagement,
                signals: Signals {
                    coeng: c,
                    popularity: p,
                    ..Signals::default()
                },
                evidence: Evidence {
                    source_image: (c > 0.0).then(|| source.to_owned()),
                    ..Evidence::default()
                },
            })
        })
        .collect();
    sort_truncate(out, |c| (c.signals.coeng, c.signals.popularity), k)
}

/// Uniform draw from the eligible images not in `exclude`, falling back to
/// the whole catalog. `None` only when every catalog image is excluded.
pub fn gen_random<R: Rng + ?Sized>(
    ctx: &RecContext<'_>,
    user: &str,
    exclude: &BTreeSet<&str>,
    rng: &mut R,
) -> Option<RawCandidate> {
    let mut choices: Vec<&str> = ctx.eligible(user).into_iter().filter(|i| !exclude.contains(i)).collect();
    if choices.is_empty() {
        choices = ctx
            .catalog
            .images()
            .iter()
            .map(|r| r.id.as_str())
            .filter(|i| !exclude.contains(i))
            .collect();
    }
    if choices.is_empty() {
        return None;
    }
    let pick = choices[rng.random_range(0..choices.len())];
    Some(RawCandidate {
        image: pick.to_owned(),
        strategy: Strategy::Random,
        signals: Signals::default(),
        evidence: Evidence::default(),
    })
}

fn weighted(signals: &Signals, recent: bool, w: &RankWeights) -> BTreeMap<Component, f64> {
    BTreeMap::from([
        (Component::Coeng, w.coeng * signals.coeng),
        (Component::Popularity, w.popularity * signals.popularity),
        (
            Component::RecencyPenalty,
            if recent { w.recency_penalty } else { 0.0 },
        ),
        (Component::Taste, w.taste * signals.taste),
        (Component::UserCf, w.user_cf * signals.user_cf),
    ])
}

fn merge_evidence(a: Evidence, b: Evidence, sa: &Signals, sb: &Signals) -> Evidence {
    let (top_tag, liked_tag) = if sb.taste > sa.taste || a.top_tag.is_none() {
        (b.top_tag.or(a.top_tag), b.liked_tag || a.liked_tag)
    } else {
        (a.top_tag, a.liked_tag)
    };
    Evidence {
        top_tag,
        liked_tag,
        neighbor: if sb.user_cf > sa.user_cf { b.neighbor } else { a.neighbor.or(b.neighbor) },
        source_image: if sb.coeng > sa.coeng {
            b.source_image
        } else {
            a.source_image.or(b.source_image)
        },
    }
}

/// Merges duplicate images, scores every candidate and sorts by total
/// descending with ties broken by image id.
///
/// `recent` is the user's recent feed window; images in it take the recency
/// penalty.
pub fn rank(candidates: Vec<RawCandidate>, weights: &RankWeights, recent: &[ImageId]) -> Vec<RecommendationCandidate> {
    let recent_set: BTreeSet<&str> = recent.iter().map(String::as_str).collect();
    let total_of = |c: &RawCandidate| -> f64 {
        weighted(&c.signals, recent_set.contains(c.image.as_str()), weights)
            .values()
            .sum()
    };

    let mut merged: BTreeMap<ImageId, RawCandidate> = BTreeMap::new();
    for c in candidates {
        match merged.remove(&c.image) {
            None => {
                merged.insert(c.image.clone(), c);
            }
            Some(prev) => {
                let (tp, tc) = (total_of(&prev), total_of(&c));
                let strategy = if tc > tp || (tc == tp && c.strategy < prev.strategy) {
                    c.strategy
                } else {
                    prev.strategy
                };
                let evidence = merge_evidence(prev.evidence, c.evidence, &prev.signals, &c.signals);
                merged.insert(
                    c.image.clone(),
                    RawCandidate {
                        image: c.image,
                        strategy,
                        signals: prev.signals.max(c.signals),
                        evidence,
                    },
                );
            }
        }
    }

    let has_history = !recent.is_empty();
    let mut ranked: Vec<RecommendationCandidate> = merged
        .into_values()
        .map(|c| {
            let is_recent = recent_set.contains(c.image.as_str());
            let components = weighted(&c.signals, is_recent, weights);
            let total = components.values().sum();
            let mut candidate = RecommendationCandidate {
                image: c.image,
                strategy: c.strategy,
                signals: c.signals,
                components,
                total,
                fresh: has_history && !is_recent,
                evidence: c.evidence,
                explanation: randomly(),
            };
            candidate.explanation = explain(&candidate);
            candidate
        })
        .collect();
    ranked.sort_by(|x, y| y.total.total_cmp(&x.total).then_with(|| x.image.cmp(&y.image)));
    ranked
}

/// Largest strictly positive weighted component, ties to the
/// lexicographically smaller name.
pub fn top_component(components: &BTreeMap<Component, f64>) -> Option<Component> {
    let mut best: Option<(Component, f64)> = None;
    for (&c, &v) in components {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

fn randomly() -> Explanation {
    Explanation {
        component: None,
        template: TemplateId::Randomly,
        args: BTreeMap::new(),
        text: "Picked at random so you see something new".into(),
    }
}

fn not_seen_recently() -> Explanation {
    Explanation {
        component: None,
        template: TemplateId::NotSeenRecently,
        args: BTreeMap::new(),
        text: "Queued because it has not appeared in your feed recently".into(),
    }
}

/// Explains a candidate by its most significant positive component.
pub fn explain(candidate: &RecommendationCandidate) -> Explanation {
    let Some(component) = top_component(&candidate.components) else {
        return randomly();
    };
    let ev = &candidate.evidence;
    let mut args = BTreeMap::new();
    let (template, mut text) = match component {
        Component::Taste => {
            let tag = ev.top_tag.clone().unwrap_or_default();
            args.insert("tag".to_owned(), tag.clone());
            if ev.liked_tag {
                (
                    TemplateId::BecauseYouLiked,
                    format!("Because you liked images tagged #{tag}"),
                )
            } else {
                (
                    TemplateId::TasteSimilarity,
                    format!("Ranked high for taste similarity to your topic #{tag}"),
                )
            }
        }
        Component::UserCf => {
            args.insert("variant".to_owned(), "similar_users".to_owned());
            (
                TemplateId::SimilarUsersEngaged,
                "Users with tastes similar to yours engaged with this".to_owned(),
            )
        }
        Component::Popularity => {
            args.insert("variant".to_owned(), "popular".to_owned());
            (
                TemplateId::SimilarUsersEngaged,
                "Popular: many users in your session engaged with this".to_owned(),
            )
        }
        Component::Coeng => {
            let image = ev.source_image.clone().unwrap_or_default();
            args.insert("image".to_owned(), image.clone());
            (
                TemplateId::OftenViewedTogether,
                format!("Often engaged with together with {image}, which you engaged with"),
            )
        }
        Component::RecencyPenalty => unreachable!("recency penalty is never positive"),
    };
    if candidate.fresh {
        text.push_str(", and it has not appeared in your feed recently");
    }
    Explanation {
        component: Some(component),
        template,
        args,
        text,
    }
}

/// Builds the next `params.queue_len` items for `user`.
///
/// Each slot is a random pick with probability `epsilon`, otherwise the best
/// remaining ranked candidate. Slots that cannot be filled are dropped.
pub fn next_queue<R: Rng + ?Sized>(ctx: &RecContext<'_>, user: &str, rng: &mut R) -> RecommendationQueue {
    let p = ctx.params;
    let k = p.candidates_per_strategy.max(p.queue_len);
    let mut raw = gen_user_cf(ctx, user, p.neighbors, k);
    raw.extend(gen_content(ctx, user, k));
    raw.extend(gen_coengagement(ctx, user, k));

    let weights = RankWeights::from_profile(ctx.profiles.get(user), p);
    let recent = ctx.recent(user);
    let mut ranked = rank(raw, &weights, recent).into_iter();

    let mut items: Vec<RecommendationCandidate> = Vec::with_capacity(p.queue_len);
    let mut queued: BTreeSet<String> = BTreeSet::new();
    for _ in 0..p.queue_len {
        let draw: f64 = rng.random();
        let item = if draw < p.epsilon {
            let exclude: BTreeSet<&str> = queued.iter().map(String::as_str).collect();
            gen_random(ctx, user, &exclude, rng).map(|c| {
                let is_recent = recent.contains(&c.image);
                RecommendationCandidate {
                    image: c.image,
                    strategy: Strategy::Random,
                    signals: c.signals,
                    components: Component::ALL.iter().map(|&c| (c, 0.0)).collect(),
                    total: 0.0,
                    fresh: !recent.is_empty() && !is_recent,
                    evidence: c.evidence,
                    explanation: randomly(),
                }
            })
        } else {
            ranked.by_ref().find(|c| !queued.contains(&c.image)).map(|mut c| {
                if c.explanation.template == TemplateId::Randomly {
                    c.explanation = not_seen_recently();
                }
                c
            })
        };
        if let Some(item) = item {
            queued.insert(item.image.clone());
            items.push(item);
        }
    }
    RecommendationQueue {
        user: user.to_owned(),
        items,
    }
}

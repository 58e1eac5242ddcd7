//! User profiles: tag affinities, unit taste vectors, pairwise similarity and
//! per-user learned strategy weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ImageId};
use crate::scoring::EngagementScore;
use crate::tracking::{EngagementEvent, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum ProfilingError {
    #[error("image {0:?} is not in the catalog")]
    UnknownImage(String),
    #[error("tag {0:?} is not in the vocabulary")]
    UnknownTag(String),
    #[error("affinity for {0:?} is negative or not finite")]
    NegativeAffinity(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("strategy {0:?} does not take part in weight learning")]
    NotLearnable(Strategy),
    #[error("feedback value {0} outside [0, score_max]")]
    FeedbackOutOfRange(f64),
}

/// Candidate-generation strategy that put an image in a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    UserCf,
    Content,
    CoEngagement,
    Random,
}

impl Strategy {
    pub const LEARNED: [Strategy; 3] = [Strategy::UserCf, Strategy::Content, Strategy::CoEngagement];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::UserCf => "user_cf",
            Strategy::Content => "content",
            Strategy::CoEngagement => "co_engagement",
            Strategy::Random => "random",
        }
    }

    fn learned_index(self) -> Option<usize> {
        Self::LEARNED.iter().position(|&s| s == self)
    }
}

/// Parameters of strategy-weight learning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    /// EMA rate.
    pub alpha: f64,
    /// Smoothing term and lower bound for each learned weight.
    pub floor: f64,
    /// Pinned share of the random strategy.
    pub random_rate: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            floor: 0.05,
            random_rate: 0.1,
        }
    }
}

/// Per-user hit rates of the three learnable strategies.
///
/// Each hit rate is an exponential moving average of the normalized score the
/// user gave to images that strategy sourced. Weights are derived from the
/// hit rates on demand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyLearner {
    pub hit_rates: [f64; 3],
}

impl StrategyLearner {
    pub fn update(
        &mut self,
        strategy: Strategy,
        value: f64,
        score_max: f64,
        params: &LearningParams,
    ) -> Result<(), ProfilingError> {
        let idx = strategy
            .learned_index()
            .ok_or(ProfilingError::NotLearnable(strategy))?;
        if !(0.0..=score_max).contains(&value) {
            return Err(ProfilingError::FeedbackOutOfRange(value));
        }
        let h = &mut self.hit_rates[idx];
        *h = (1.0 - params.alpha) * *h + params.alpha * (value / score_max);
        Ok(())
    }

    /// Weights of (UserCf, Content, CoEngagement) summing to 1, each at least
    /// `floor`. Equal hit rates give equal weights.
    /// The learned weights renormalized over the three strategies, as used
    /// by ranking.
    pub fn ranking_weights(&self, params: &LearningParams) -> [f64; 3] {
        let learned = self.learned(params);
        let total: f64 = learned.iter().sum();
        if total > 0.0 {
            learned.map(|w| w / total)
        } else {
            [1.0 / 3.0; 3]
        }
    }

    /// Shares of `1 - random_rate`: each strategy gets the floor plus a part
    /// of the rest proportional to its smoothed hit rate.
    fn learned(&self, params: &LearningParams) -> [f64; 3] {
        let smoothed = self.hit_rates.map(|h| h + params.floor);
        let total: f64 = smoothed.iter().sum();
        let spread = (1.0 - params.random_rate - 3.0 * params.floor).max(0.0);
        smoothed.map(|s| params.floor + spread * s / total)
    }

    /// All four strategy weights; Random is pinned at `random_rate` and the
    /// learned strategies share the remainder, each at least `floor`.
    pub fn weights(&self, params: &LearningParams) -> BTreeMap<Strategy, f64> {
        let mut out: BTreeMap<Strategy, f64> = Strategy::LEARNED.into_iter().zip(self.learned(params)).collect();
        out.insert(Strategy::Random, params.random_rate);
        out
    }
}

/// Returns `profile` with its strategy weights updated from one feedback pair.
pub fn update_strategy_weights(
    mut profile: UserProfile,
    learner: &mut StrategyLearner,
    feedback: (Strategy, f64),
    score_max: f64,
    params: &LearningParams,
) -> Result<UserProfile, ProfilingError> {
    learner.update(feedback.0, feedback.1, score_max, params)?;
    profile.strategy_weights = learner.weights(params);
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedImage {
    pub image: ImageId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub user: UserId,
    pub affinities: BTreeMap<String, f64>,
    pub taste: Vec<f64>,
    pub strategy_weights: BTreeMap<Strategy, f64>,
    pub totals_by_kind: BTreeMap<String, u64>,
    pub top_images_by_tag: BTreeMap<String, Vec<RankedImage>>,
}

impl UserProfile {
    pub fn has_taste(&self) -> bool {
        self.taste.iter().any(|&x| x > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityEdge {
    pub a: UserId,
    pub b: UserId,
    pub w: f64,
}

/// affinity(tag) = Σ score over the user's images carrying the tag.
pub fn tag_affinities<'a, I>(scores: I, catalog: &Catalog) -> Result<BTreeMap<String, f64>, ProfilingError>
where
    I: IntoIterator<Item = &'a EngagementScore>,
{
    let mut out = BTreeMap::new();
    for s in scores {
        let image = catalog
            .get(&s.image)
            .ok_or_else(|| ProfilingError::UnknownImage(s.image.clone()))?;
        for tag in &image.tags {
            *out.entry(tag.clone()).or_insert(0.0) += s.value;
        }
    }
    Ok(out)
}

pub fn taste_vector(affinities: &BTreeMap<String, f64>, vocabulary: &[String]) -> Result<Vec<f64>, ProfilingError> {
    let mut v = vec![0.0; vocabulary.len()];
    for (tag, &a) in affinities {
        if !(a.is_finite() && a >= 0.0) {
            return Err(ProfilingError::NegativeAffinity(tag.clone()));
        }
        let pos = vocabulary
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| ProfilingError::UnknownTag(tag.clone()))?;
        v[pos] = a;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Cosine of the angle between two non-negative vectors, in [0, 1].
/// A zero vector is similar to nothing.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ProfilingError> {
    if a.len() != b.len() {
        return Err(ProfilingError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

/// One edge per unordered user pair whose taste cosine reaches `threshold`.
/// Edges come out ordered by (a, b) with a < b.
pub fn similarity_edges(profiles: &BTreeMap<UserId, UserProfile>, threshold: f64) -> Vec<SimilarityEdge> {
    let users: Vec<&UserProfile> = profiles.values().collect();
    let mut edges = Vec::new();
    for (i, a) in users.iter().enumerate() {
        for b in &users[i + 1..] {
            let w = cosine_similarity(&a.taste, &b.taste).unwrap_or(0.0);
            if w >= threshold {
                edges.push(SimilarityEdge {
                    a: a.user.clone(),
                    b: b.user.clone(),
                    w,
                });
            }
        }
    }
    edges
}

/// Assembles a profile from one user's scores and events.
pub fn build_profile<'a>(
    user: &str,
    scores: &[&'a EngagementScore],
    events: impl IntoIterator<Item = &'a EngagementEvent>,
    catalog: &Catalog,
    learner: &StrategyLearner,
    params: &LearningParams,
) -> Result<UserProfile, ProfilingError> {
    let affinities = tag_affinities(scores.iter().copied(), catalog)?;
    let taste = taste_vector(&affinities, catalog.vocabulary())?;

    let mut totals_by_kind = BTreeMap::new();
    for e in events {
        *totals_by_kind.entry(e.kind.name().to_owned()).or_insert(0) += 1;
    }

    let mut top_images_by_tag: BTreeMap<String, Vec<RankedImage>> = BTreeMap::new();
    for s in scores {
        let image = catalog
            .get(&s.image)
            .ok_or_else(|| ProfilingError::UnknownImage(s.image.clone()))?;
        for tag in &image.tags {
            top_images_by_tag.entry(tag.clone()).or_default().push(RankedImage {
                image: s.image.clone(),
                score: s.value,
            });
        }
    }
    for list in top_images_by_tag.values_mut() {
        list.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| x.image.cmp(&y.image)));
    }

    Ok(UserProfile {
        user: user.to_owned(),
        affinities,
        taste,
        strategy_weights: learner.weights(params),
        totals_by_kind,
        top_images_by_tag,
    })
}

pub const TOP_IMAGES_PER_TAG: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagSummary {
    pub tag: String,
    pub affinity: f64,
    pub images: Vec<RankedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub top_tags: Vec<TagSummary>,
    pub totals_by_kind: BTreeMap<String, u64>,
}

/// Tags ordered by affinity descending with lexicographic tie-break, truncated
/// to `k`, each with the user's most engaged images for that tag.
pub fn ranked_tags(affinities: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    let mut tags: Vec<(&str, f64)> = affinities.iter().map(|(t, &a)| (t.as_str(), a)).collect();
    tags.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    tags
}

pub fn profile_summary(profile: &UserProfile, k: usize) -> ProfileSummary {
    let top_tags = ranked_tags(&profile.affinities)
        .into_iter()
        .take(k.max(1))
        .map(|(tag, affinity)| TagSummary {
            tag: tag.to_owned(),
            affinity,
            images: profile
                .top_images_by_tag
                .get(tag)
                .map(|v| v.iter().take(TOP_IMAGES_PER_TAG).cloned().collect())
                .unwrap_or_default(),
        })
        .collect();
    ProfileSummary {
        top_tags,
        totals_by_kind: profile.totals_by_kind.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ImageRecord;

    fn catalog() -> Catalog {
        let rec = |id: &str, tags: &[&str]| ImageRecord {
            id: id.into(),
            uri: String::new(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            creator: "c".into(),
            title: None,
        };
        Catalog::from_records(vec![
            rec("img_a", &["music"]),
            rec("img_b", &["music", "art"]),
            rec("img_c", &["x", "y", "z"]),
        ])
        .unwrap()
    }

    fn sc(image: &str, value: f64) -> EngagementScore {
        EngagementScore {
            user: "u".into(),
            image: image.into(),
            value,
            breakdown: BTreeMap::new(),
        }
    }

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn vocab(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn affinity_sums_scores_per_tag() {
        let cat = catalog();
        let scores = [sc("img_a", 10.0), sc("img_b", 5.0)];
        assert_eq!(
            tag_affinities(&scores, &cat).unwrap(),
            map(&[("music", 15.0), ("art", 5.0)])
        );
        assert!(tag_affinities(&[], &cat).unwrap().is_empty());
        assert_eq!(
            tag_affinities(&[sc("img_c", 4.0)], &cat).unwrap(),
            map(&[("x", 4.0), ("y", 4.0), ("z", 4.0)])
        );
        assert_eq!(
            tag_affinities(&[sc("nope", 1.0)], &cat).unwrap_err(),
            ProfilingError::UnknownImage("nope".into())
        );
    }

    #[test]
    fn taste_normalization() {
        let v = taste_vector(&map(&[("music", 3.0), ("art", 4.0)]), &vocab(&["art", "music"])).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-15 && (v[1] - 0.6).abs() < 1e-15);
        let z = taste_vector(&map(&[("music", 0.0)]), &vocab(&["art", "music"])).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let one = taste_vector(&map(&[("music", 7.0)]), &vocab(&["art", "music"])).unwrap();
        assert_eq!(one, vec![0.0, 1.0]);
        assert_eq!(
            taste_vector(&map(&[("music", -1.0)]), &vocab(&["music"])).unwrap_err(),
            ProfilingError::NegativeAffinity("music".into())
        );
    }

    #[test]
    fn cosine_cases() {
        let a = [0.3, 0.0, 2.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let half = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap();
        // 1 / (sqrt 2 · sqrt 2)
        assert!((half - 0.5).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]).unwrap_err(),
            ProfilingError::DimensionMismatch(1, 2)
        );
    }

    fn profile(user: &str, taste: Vec<f64>) -> UserProfile {
        UserProfile {
            user: user.into(),
            affinities: BTreeMap::new(),
            taste,
            strategy_weights: BTreeMap::new(),
            totals_by_kind: BTreeMap::new(),
            top_images_by_tag: BTreeMap::new(),
        }
    }

    #[test]
    fn edges_respect_threshold() {
        let mut ps = BTreeMap::new();
        ps.insert("a".to_string(), profile("a", vec![1.0, 0.0]));
        ps.insert("b".to_string(), profile("b", vec![1.0, 0.0]));
        let edges = similarity_edges(&ps, 0.5);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].w, 1.0);
        ps.insert("b".to_string(), profile("b", vec![0.0, 1.0]));
        assert!(similarity_edges(&ps, 0.5).is_empty());
    }

    #[test]
    fn eighteen_users_bound_pair_count() {
        let ps: BTreeMap<_, _> = (0..18)
            .map(|i| (format!("u{i:02}"), profile(&format!("u{i:02}"), vec![1.0, i as f64])))
            .collect();
        let edges = similarity_edges(&ps, 0.0);
        assert_eq!(edges.len(), 153);
        assert!(edges.iter().all(|e| e.a < e.b));
    }

    #[test]
    fn zero_taste_user_is_isolated() {
        let mut ps = BTreeMap::new();
        ps.insert("a".to_string(), profile("a", vec![0.0, 0.0]));
        ps.insert("b".to_string(), profile("b", vec![1.0, 0.0]));
        assert!(similarity_edges(&ps, 0.15).is_empty());
    }

    #[test]
    fn learning_uniform_start() {
        let p = LearningParams::default();
        let learner = StrategyLearner::default();
        for w in learner.ranking_weights(&p) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let all = learner.weights(&p);
        assert!((all.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(all[&Strategy::Random], 0.1);
    }

    #[test]
    fn content_feedback_raises_content() {
        let p = LearningParams::default();
        let mut learner = StrategyLearner::default();
        learner.update(Strategy::Content, 10.0, 10.0, &p).unwrap();
        // EMA by hand: 0.8·0 + 0.2·1.0
        assert_eq!(learner.hit_rates, [0.0, 0.2, 0.0]);
        let w = learner.ranking_weights(&p);
        assert!(w[1] > w[0] && w[1] > w[2]);
        assert_eq!(w[0], w[2]);
    }

    #[test]
    fn zero_feedback_keeps_uniform() {
        let p = LearningParams::default();
        let mut learner = StrategyLearner::default();
        let before = learner.ranking_weights(&p);
        learner.update(Strategy::UserCf, 0.0, 10.0, &p).unwrap();
        let after = learner.ranking_weights(&p);
        for (x, y) in before.iter().zip(after) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn ema_recurrence_is_order_dependent() {
        let p = LearningParams::default();
        let mut twice = StrategyLearner::default();
        twice.update(Strategy::Content, 10.0, 10.0, &p).unwrap();
        twice.update(Strategy::Content, 10.0, 10.0, &p).unwrap();
        // 0.8·0.2 + 0.2 = 0.36; one double-strength step is not representable
        assert!((twice.hit_rates[1] - 0.36).abs() < 1e-15);

        let mut ab = StrategyLearner::default();
        ab.update(Strategy::Content, 10.0, 10.0, &p).unwrap();
        ab.update(Strategy::Content, 5.0, 10.0, &p).unwrap();
        let mut ba = StrategyLearner::default();
        ba.update(Strategy::Content, 5.0, 10.0, &p).unwrap();
        ba.update(Strategy::Content, 10.0, 10.0, &p).unwrap();
        assert!((ab.hit_rates[1] - (0.8 * 0.2 + 0.2 * 0.5)).abs() < 1e-15);
        assert!((ba.hit_rates[1] - (0.8 * 0.1 + 0.2 * 1.0)).abs() < 1e-15);
        assert_ne!(ab, ba);
    }

    #[test]
    fn random_is_not_learnable() {
        let p = LearningParams::default();
        let mut learner = StrategyLearner::default();
        assert_eq!(
            learner.update(Strategy::Random, 1.0, 10.0, &p).unwrap_err(),
            ProfilingError::NotLearnable(Strategy::Random)
        );
        assert!(learner.update(Strategy::Content, 11.0, 10.0, &p).is_err());
    }

    #[test]
    fn update_strategy_weights_refreshes_profile() {
        let p = LearningParams::default();
        let mut learner = StrategyLearner::default();
        let prof = profile("u", vec![]);
        let prof = update_strategy_weights(prof, &mut learner, (Strategy::CoEngagement, 8.0), 10.0, &p).unwrap();
        let w = &prof.strategy_weights;
        assert!(w[&Strategy::CoEngagement] > w[&Strategy::Content]);
        assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_orders_tags() {
        let mut p = profile("jarmo", vec![]);
        p.affinities = map(&[("musiikki", 15.0), ("taiteellinen", 9.0), ("koira", 2.0)]);
        let tags: Vec<String> = profile_summary(&p, 2).top_tags.into_iter().map(|t| t.tag).collect();
        assert_eq!(tags, vec!["musiikki", "taiteellinen"]);
        assert_eq!(profile_summary(&p, 10).top_tags.len(), 3);

        p.affinities = map(&[("b", 5.0), ("a", 5.0)]);
        let tags: Vec<String> = profile_summary(&p, 1).top_tags.into_iter().map(|t| t.tag).collect();
        assert_eq!(tags, vec!["a"]);
    }

    #[test]
    fn build_profile_ranks_images_per_tag() {
        let cat = catalog();
        let a = sc("img_a", 3.0);
        let b = sc("img_b", 7.0);
        let p = build_profile(
            "u",
            &[&a, &b],
            std::iter::empty(),
            &cat,
            &StrategyLearner::default(),
            &LearningParams::default(),
        )
        .unwrap();
        let music: Vec<&str> = p.top_images_by_tag["music"].iter().map(|r| r.image.as_str()).collect();
        assert_eq!(music, vec!["img_b", "img_a"]);
        let norm: f64 = p.taste.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

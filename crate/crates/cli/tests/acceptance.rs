//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use somekone_cli::persona::PersonaFile;
use somekone_cli::simulate::simulate;
use somekone_core::catalog::ImageRecord;
use somekone_core::coengagement::{build_coengagement, topic_projection};
use somekone_core::config::derive_rng;
use somekone_core::graph_layout::{Layout, LayoutParams};
use somekone_core::persistence::{export, replay};
use somekone_core::profiling::{cosine_similarity, Strategy};
use somekone_core::recommender::{
    explain, next_queue, Component, Evidence, Explanation, RecommendationCandidate, Signals, TemplateId,
};
use somekone_core::scoring::{default_weights, engagement_score, EngagementScore, ScoreMap};
use somekone_core::tracking::{Emoji, EngagementEvent, EventKind, NewEvent, ShareScope};
use somekone_core::{fixture_catalog, Catalog, Engine, SessionConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, failure: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(failure())
    }
}

const TWO_CLUSTER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/two_cluster.json");

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("engagement bundle scores 10/10", bundle_scores_ten),
        ("cosine matches brute-force oracle", cosine_oracle),
        ("explanation is first positive argmax", explanation_argmax),
        ("exploration rate near epsilon", exploration_rate),
        ("three-node layout separates the weak node", layout_fixture),
        ("two-cluster simulation", two_cluster_simulation),
        ("replay round-trip", replay_round_trip),
        ("cross-user feedback coupling", feedback_coupling),
        ("scoring properties", scoring_properties),
        ("co-engagement properties", coengagement_properties),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn scored(kinds: &[EventKind]) -> EngagementScore {
    let events: Vec<EngagementEvent> = kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| EngagementEvent {
            seq: i as u64 + 1,
            user: "u".into(),
            image: Some("img_1".into()),
            t: i as u64 * 100,
            kind: kind.clone(),
        })
        .collect();
    engagement_score(&events, &default_weights()).expect("valid events")
}

fn bundle_scores_ten() -> Outcome {
    let s = scored(&[
        EventKind::Seen,
        EventKind::DwellEnd { duration_ms: 12_000 },
        EventKind::Share { scope: ShareScope::Friends },
        EventKind::Comment {
            length_chars: 40,
            text: None,
        },
        EventKind::Follow { creator: "aurora".into() },
        EventKind::EmojiReaction { emoji: Emoji::HeartEyes },
    ]);
    check(s.value == 10.0, || format!("score {} != 10", s.value))?;
    Ok(format!("raw {:.1}, clamped {}/10", s.raw_total(), s.value))
}

fn cosine_oracle() -> Outcome {
    let mut rng = derive_rng(2024, "cosine", 0);
    let mut zero_pairs = 0;
    for n in 0..1000 {
        let dim = rng.random_range(1..=32);
        let vector = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            if rng.random_bool(0.05) {
                return vec![0.0; dim];
            }
            (0..dim)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..10.0) })
                .collect()
        };
        let (a, b) = (vector(&mut rng), vector(&mut rng));
        let oracle = {
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                zero_pairs += 1;
                0.0
            } else {
                dot / (na * nb)
            }
        };
        let ab = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        let ba = cosine_similarity(&b, &a).map_err(|e| e.to_string())?;
        check((ab - oracle).abs() <= 1e-9, || format!("pair {n}: {ab} vs oracle {oracle}"))?;
        check(ab == ba, || format!("pair {n}: asymmetric {ab} vs {ba}"))?;
        for v in [&a, &b] {
            let own = cosine_similarity(v, v).map_err(|e| e.to_string())?;
            let expected = if v.iter().all(|&x| x == 0.0) { 0.0 } else { 1.0 };
            check((own - expected).abs() <= 1e-9, || format!("pair {n}: self-similarity {own}"))?;
        }
    }
    Ok(format!("1000 pairs within 1e-9, {zero_pairs} with a zero vector"))
}

fn explanation_argmax() -> Outcome {
    let mut rng = derive_rng(2024, "explain", 0);
    let mut randomly = 0;
    for n in 0..1000 {
        let components: BTreeMap<Component, f64> = Component::ALL
            .iter()
            .map(|&c| {
                let v = match rng.random_range(0..4) {
                    0 => 0.0,
                    // repeated values exercise the tie-break
                    1 => 0.5,
                    _ => rng.random_range(-1.0..1.0),
                };
                (c, if c == Component::RecencyPenalty { -f64::abs(v) } else { v })
            })
            .collect();
        let candidate = RecommendationCandidate {
            image: "img_1".into(),
            strategy: Strategy::Content,
            signals: Signals::default(),
            total: components.values().sum(),
            components: components.clone(),
            fresh: false,
            evidence: Evidence::default(),
            explanation: Explanation {
                component: None,
                template: TemplateId::Randomly,
                args: BTreeMap::new(),
                text: String::new(),
            },
        };
        let got = explain(&candidate);
        // strict > keeps the first maximum in name order
        let mut best: Option<(Component, f64)> = None;
        for (&c, &v) in &components {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        check(got.component == best.map(|b| b.0), || {
            format!("map {n}: picked {:?}, expected {:?} from {components:?}", got.component, best)
        })?;
        if best.is_none() {
            randomly += 1;
            check(got.template == TemplateId::Randomly, || format!("map {n}: expected Randomly"))?;
        }
    }
    Ok(format!("1000 maps, {randomly} without a positive component"))
}

fn ingest_bundle(engine: &mut Engine, user: &str, image: &str, t: &mut u64, strong: bool) {
    let mut push = |kind| {
        *t += 500;
        engine.ingest(NewEvent::on_image(user, image, *t, kind)).expect("fixture events are valid");
    };
    push(EventKind::Seen);
    if strong {
        push(EventKind::Like);
        push(EventKind::EmojiReaction { emoji: Emoji::HeartEyes });
        push(EventKind::DwellEnd { duration_ms: 15_000 });
    } else {
        push(EventKind::DwellEnd { duration_ms: 1_000 });
    }
}

fn exploration_rate() -> Outcome {
    let config = SessionConfig::default().with_seed(7);
    let epsilon = config.recommender.epsilon;
    check(epsilon == 0.1, || format!("default epsilon is {epsilon}"))?;
    let mut engine = Engine::new(config, fixture_catalog(), "epsilon").map_err(|e| e.to_string())?;
    let mut t = 0;
    for (user, images) in [("a", ["img_1", "img_2", "img_3"]), ("b", ["img_1", "img_16", "img_17"])] {
        for image in images {
            ingest_bundle(&mut engine, user, image, &mut t, true);
        }
    }
    let ctx = engine.context();
    let (mut slots, mut random) = (0usize, 0usize);
    for i in 0..2000 {
        let mut rng = derive_rng(7, "epsilon", i);
        let queue = next_queue(&ctx, "a", &mut rng);
        slots += queue.items.len();
        random += queue.items.iter().filter(|c| c.strategy == Strategy::Random).count();
    }
    check(slots == 10_000, || format!("{slots} slots filled, expected 10000"))?;
    let fraction = random as f64 / slots as f64;
    check((0.08..=0.12).contains(&fraction), || format!("random fraction {fraction}"))?;
    Ok(format!("{random}/{slots} random slots = {fraction:.4}"))
}

fn layout_fixture() -> Outcome {
    let run = || {
        let mut layout = Layout::new(LayoutParams::default(), 42);
        layout
            .set_graph(["A", "B", "C"], [("A", "B", 0.9), ("A", "C", 0.1), ("B", "C", 0.1)])
            .expect("valid graph");
        layout.run();
        layout
    };
    let (first, second) = (run(), run());
    let d = |l: &Layout, a: &str, b: &str| {
        let (p, q) = (l.position(a).unwrap(), l.position(b).unwrap());
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    };
    let (ab, ac, bc) = (d(&first, "A", "B"), d(&first, "A", "C"), d(&first, "B", "C"));
    check(first.converged, || format!("not converged after {} iterations", first.iterations))?;
    check(first.iterations <= 2000, || format!("{} iterations", first.iterations))?;
    check(ab < ac.min(bc), || format!("AB {ab} AC {ac} BC {bc}"))?;
    for id in ["A", "B", "C"] {
        check(first.position(id) == second.position(id), || format!("{id} differs between runs"))?;
    }
    Ok(format!(
        "converged in {} iterations, AB {ab:.3} < AC {ac:.3}, BC {bc:.3}, deterministic",
        first.iterations
    ))
}

fn components_at(path: &Path, threshold: f64) -> Result<usize, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let graph: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let nodes: Vec<String> = graph["nodes"]
        .as_array()
        .ok_or("graph has no nodes")?
        .iter()
        .filter_map(|n| n.as_str().map(str::to_owned))
        .collect();
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in graph["edges"].as_array().ok_or("graph has no edges")? {
        if e["w"].as_f64().unwrap_or(0.0) >= threshold {
            let a = index[e["a"].as_str().unwrap_or_default()];
            let b = index[e["b"].as_str().unwrap_or_default()];
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra] = rb;
        }
    }
    Ok((0..nodes.len()).map(|i| root(&mut parent, i)).collect::<BTreeSet<_>>().len())
}

fn two_cluster_simulation() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut times = Vec::new();
    for dir in &dirs {
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_somekone"))
            .args(["simulate", "--agents", "18", "--steps", "300", "--personas", TWO_CLUSTER, "--seed", "42"])
            .arg("--out")
            .arg(dir.path())
            .env("RUST_LOG", "warn")
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        let took = start.elapsed();
        check(status.success(), || format!("simulate exited with {status}"))?;
        check(took < Duration::from_secs(60), || format!("simulate took {took:?}"))?;
        times.push(took.as_secs_f64());
    }
    let mut files: Vec<String> = std::fs::read_dir(dirs[0].path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    for name in &files {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{name} differs between runs"))?;
    }
    let components = components_at(&dirs[0].path().join("similarity.graph.json"), 0.5)?;
    check(components == 2, || format!("{components} components at 0.5"))?;
    Ok(format!(
        "2 components at 0.5; {} files byte-identical; runs took {:.1}s and {:.1}s",
        files.len(),
        times[0],
        times[1]
    ))
}

fn replay_round_trip() -> Outcome {
    let personas =
        PersonaFile::from_json(&std::fs::read_to_string(TWO_CLUSTER).unwrap(), &fixture_catalog()).map_err(|e| e.to_string())?;
    let session = simulate(SessionConfig::default().with_seed(5), fixture_catalog(), &personas, 6, 30)
        .map_err(|e| e.to_string())?;
    let live = session.engine();
    let events = live.log().events().to_vec();
    check(events.len() >= 500, || format!("only {} events", events.len()))?;
    let text = export(live);
    let again = replay(live.config().clone(), fixture_catalog(), live.log().session_id(), events.clone())
        .map_err(|e| e.to_string())?;
    check(export(&again) == text, || "re-export differs".into())?;
    Ok(format!("{} live events, {} byte export re-derived identically", events.len(), text.len()))
}

fn feedback_coupling() -> Outcome {
    let mut config = SessionConfig::default();
    // queues without exploration make "top 5" a pure ranking statement
    config.recommender.epsilon = 0.0;
    let mut engine = Engine::new(config, fixture_catalog(), "coupling").map_err(|e| e.to_string())?;
    let x = "img_20";
    let mut t = 0;
    ingest_bundle(&mut engine, "a", "img_1", &mut t, true);
    ingest_bundle(&mut engine, "b", "img_1", &mut t, true);
    let before = engine.queue_for("a");
    check(!before.items.iter().any(|c| c.image == x), || "X already queued for A".into())?;
    let similarity = engine
        .similarity_edges()
        .into_iter()
        .find(|e| (e.a == "a" && e.b == "b") || (e.a == "b" && e.b == "a"))
        .map_or(0.0, |e| e.w);
    check(similarity > 0.0, || "A and B are not similar".into())?;

    ingest_bundle(&mut engine, "b", x, &mut t, true);
    let after = engine.queue_for("a");
    let position = after.items.iter().position(|c| c.image == x).ok_or("X is not in A's top 5")?;
    let item = &after.items[position];
    check(item.components[&Component::UserCf] > 0.0, || "no user-based contribution".into())?;
    Ok(format!(
        "sim(A,B) = {similarity:.3}; X enters A's queue at position {} with user_cf {:.3}",
        position + 1,
        item.components[&Component::UserCf]
    ))
}

fn random_kind(rng: &mut impl Rng) -> EventKind {
    match rng.random_range(0..9) {
        0 => EventKind::Seen,
        1 => EventKind::DwellEnd {
            duration_ms: rng.random_range(0..60_000),
        },
        2 => EventKind::Like,
        3 => EventKind::Unlike,
        4 => EventKind::EmojiReaction {
            emoji: Emoji::ALL[rng.random_range(0..5)],
        },
        5 => EventKind::Comment {
            length_chars: rng.random_range(0..200),
            text: None,
        },
        6 => EventKind::Follow { creator: "aurora".into() },
        7 => EventKind::Unfollow { creator: "aurora".into() },
        _ => EventKind::Share {
            scope: ShareScope::ALL[rng.random_range(0..3)],
        },
    }
}

fn positive_kind(rng: &mut impl Rng) -> EventKind {
    loop {
        let k = random_kind(rng);
        if !matches!(k, EventKind::Unlike | EventKind::Unfollow { .. }) {
            return k;
        }
    }
}

fn scoring_properties() -> Outcome {
    let mut rng = derive_rng(2024, "scoring", 0);
    let cases = 500;
    for n in 0..cases {
        let len = rng.random_range(1..30);
        let kinds: Vec<EventKind> = (0..len).map(|_| random_kind(&mut rng)).collect();
        let base = scored(&kinds).value;
        check((0.0..=10.0).contains(&base), || format!("case {n}: score {base} out of bounds"))?;

        let mut shuffled = kinds.clone();
        shuffled.shuffle(&mut rng);
        let perm = scored(&shuffled).value;
        check(perm == base, || format!("case {n}: permutation changed {base} to {perm}"))?;

        let mut positive: Vec<EventKind> = (0..len).map(|_| positive_kind(&mut rng)).collect();
        let before = scored(&positive).value;
        positive.push(positive_kind(&mut rng));
        let after = scored(&positive).value;
        check(after >= before, || format!("case {n}: adding a positive event dropped {before} to {after}"))?;

        let rest: Vec<EventKind> =
            kinds.iter().filter(|k| !matches!(k, EventKind::DwellEnd { .. })).cloned().collect();
        let with = |ms| {
            let mut v = rest.clone();
            v.push(EventKind::DwellEnd { duration_ms: ms });
            scored(&v).value
        };
        let (d20, d200) = (with(20_000), with(200_000));
        check(d20 == d200, || format!("case {n}: dwell 20s {d20} vs 200s {d200}"))?;
    }
    Ok(format!("{cases} multisets each: bounded, permutation-invariant, monotone, dwell-capped"))
}

fn coengagement_properties() -> Outcome {
    let mut rng = derive_rng(2024, "coeng", 0);
    let images: Vec<String> = (1..=8).map(|i| format!("img_{i}")).collect();
    let cases = 500;
    for n in 0..cases {
        let mut scores = ScoreMap::new();
        for u in 0..rng.random_range(1..6) {
            for image in &images {
                if rng.random_bool(0.5) {
                    let user = format!("u{u}");
                    let value = rng.random_range(0.0..=10.0);
                    scores.insert(
                        (user.clone(), image.clone()),
                        EngagementScore {
                            user,
                            image: image.clone(),
                            value,
                            breakdown: BTreeMap::new(),
                        },
                    );
                }
            }
        }
        let g = build_coengagement(&scores, 4.0, 10.0).map_err(|e| e.to_string())?;
        for (a, b, w) in g.edges() {
            check(a != b, || format!("case {n}: self-loop on {a}"))?;
            check(g.weight(b, a) == Some(w), || format!("case {n}: {a}-{b} asymmetric"))?;
        }
        // one more engaged user can only add weight
        let mut more = scores.clone();
        for image in &images {
            let value = rng.random_range(4.0..=10.0);
            more.insert(
                ("extra".into(), image.clone()),
                EngagementScore {
                    user: "extra".into(),
                    image: image.clone(),
                    value,
                    breakdown: BTreeMap::new(),
                },
            );
        }
        let h = build_coengagement(&more, 4.0, 10.0).map_err(|e| e.to_string())?;
        for (a, b, w) in g.edges() {
            let grown = h.weight(a, b).unwrap_or(0.0);
            check(grown >= w, || format!("case {n}: {a}-{b} fell from {w} to {grown}"))?;
        }
    }

    let catalog = Catalog::from_records(
        [("A", vec!["musiikki"]), ("B", vec!["taiteellinen", "tanssi"]), ("C", vec!["musiikki"])]
            .into_iter()
            .map(|(id, tags)| ImageRecord {
                id: id.into(),
                uri: String::new(),
                tags: tags.into_iter().map(String::from).collect(),
                creator: "c".into(),
                title: None,
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let mut scores = ScoreMap::new();
    for (u, i, v) in [("u", "A", 10.0), ("u", "B", 5.0), ("v", "B", 8.0), ("v", "C", 8.0)] {
        scores.insert(
            (u.into(), i.into()),
            EngagementScore {
                user: u.into(),
                image: i.into(),
                value: v,
                breakdown: BTreeMap::new(),
            },
        );
    }
    let g = build_coengagement(&scores, 4.0, 10.0).map_err(|e| e.to_string())?;
    let t = topic_projection(&g, &catalog).map_err(|e| e.to_string())?;
    // A-B carries min(10, 5)/10 = 0.5 and B-C carries 0.8; both fan out to
    // musiikki x {taiteellinen, tanssi}. Tags of one image never pair up.
    let expected = [
        ("musiikki", "taiteellinen", 1.3),
        ("musiikki", "tanssi", 1.3),
        ("taiteellinen", "tanssi", 0.0),
    ];
    for (a, b, w) in expected {
        let got = t.weight(a, b).unwrap_or(0.0);
        check((got - w).abs() < 1e-12, || format!("topic {a}-{b}: {got} != {w}"))?;
    }
    check(t.edge_count() == 2, || format!("{} topic edges, expected 2", t.edge_count()))?;
    Ok(format!("{cases} random score maps; fan-out 0.5 + 0.8 = 1.3 on both topic edges"))
}

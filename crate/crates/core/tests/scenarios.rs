use somekone_core::config::SessionConfig;
use somekone_core::persistence::{export, replay, replay_export, PersistenceError};
use somekone_core::recommender::Component;
use somekone_core::tracking::{Emoji, EventKind, NewEvent};
use somekone_core::{fixture_catalog, Engine};

fn engine(config: SessionConfig) -> Engine {
    Engine::new(config, fixture_catalog(), "scenario").unwrap()
}

fn engage(engine: &mut Engine, user: &str, image: &str, t: &mut u64, strong: bool) {
    let mut push = |kind| {
        *t += 500;
        engine.ingest(NewEvent::on_image(user, image, *t, kind)).unwrap();
    };
    push(EventKind::Seen);
    if strong {
        push(EventKind::Like);
        push(EventKind::EmojiReaction { emoji: Emoji::HeartEyes });
        push(EventKind::DwellEnd { duration_ms: 15_000 });
    } else {
        push(EventKind::DwellEnd { duration_ms: 2_000 });
    }
}

/// Users walk their own queues and like anything carrying their tag.
fn drive(engine: &mut Engine, users: &[(&str, &str)], min_events: usize) {
    let mut t = 0;
    while engine.log().len() < min_events {
        for (user, tag) in users {
            let queue = engine.queue_for(user);
            let image = queue.items[0].image.clone();
            let strong = engine.catalog().get(&image).unwrap().tags.iter().any(|x| x == tag);
            engage(engine, user, &image, &mut t, strong);
        }
    }
}

const USERS: [(&str, &str); 4] = [("aino", "musiikki"), ("ville", "musiikki"), ("otto", "koira"), ("sara", "luonto")];

#[test]
fn high_engagement_of_a_similar_user_reaches_the_other_queue() {
    let mut config = SessionConfig::default();
    config.recommender.epsilon = 0.0;
    let mut e = engine(config);
    let x = "img_20";
    let mut t = 0;
    engage(&mut e, "a", "img_1", &mut t, true);
    engage(&mut e, "b", "img_1", &mut t, true);
    assert!(!e.queue_for("a").items.iter().any(|c| c.image == x), "X must start outside A's queue");

    engage(&mut e, "b", x, &mut t, true);
    let queue = e.queue_for("a");
    let item = queue.items.iter().find(|c| c.image == x).expect("X enters A's top 5");
    assert!(item.signals.user_cf > 0.0);
    assert!(item.components[&Component::UserCf] > 0.0);
}

#[test]
fn replay_reproduces_export_bytes() {
    let mut live = engine(SessionConfig::default().with_seed(11));
    drive(&mut live, &USERS, 500);
    let text = export(&live);

    let again = replay(live.config().clone(), fixture_catalog(), "scenario", live.log().events().to_vec()).unwrap();
    assert_eq!(export(&again), text);
    assert_eq!(export(&replay_export(&text, fixture_catalog()).unwrap()), text);
}

#[test]
fn replay_under_another_seed_keeps_profiles() {
    let mut live = engine(SessionConfig::default().with_seed(1));
    drive(&mut live, &USERS, 300);
    let other = replay(
        live.config().clone().with_seed(2),
        fixture_catalog(),
        "scenario",
        live.log().events().to_vec(),
    )
    .unwrap();
    for (user, _) in USERS {
        let (a, b) = (&live.profiles()[user], &other.profiles()[user]);
        assert_eq!(a.affinities, b.affinities);
        assert_eq!(a.taste, b.taste);
        assert_eq!(a.totals_by_kind, b.totals_by_kind);
    }
    assert_eq!(live.scores(), other.scores());
    assert_eq!(live.similarity_edges(), other.similarity_edges());
}

#[test]
fn replay_names_the_gap() {
    let mut live = engine(SessionConfig::default());
    drive(&mut live, &USERS[..1], 6);
    let mut events = live.log().events().to_vec();
    events.remove(2);
    match replay(live.config().clone(), fixture_catalog(), "scenario", events) {
        Err(PersistenceError::Replay { seq, .. }) => assert_eq!(seq, 4),
        other => panic!("expected a replay error, got {other:?}"),
    }
}

#[test]
fn replay_rejects_another_catalog() {
    let live = engine(SessionConfig::default());
    let text = export(&live);
    let mut images = fixture_catalog().images().to_vec();
    images.pop();
    let smaller = somekone_core::Catalog::from_records(images).unwrap();
    assert!(matches!(replay_export(&text, smaller), Err(PersistenceError::CatalogMismatch { .. })));
}

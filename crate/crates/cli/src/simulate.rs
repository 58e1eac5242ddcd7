//! Headless multi-agent simulation.
//!
//! Agents join as feed clients and act only through [`Session::handle`],
//! the same path a browser takes. Stepping is single-threaded in agent order
//! on a simulated clock, so the seed fixes every output byte.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use somekone_core::catalog::ImageId;
use somekone_core::config::derive_rng;
use somekone_core::session::protocol::{
    server, ClientMessage, EventBody, JoinBody, RoleRequest, Scope, SnapshotBody,
};
use somekone_core::session::{ClientId, Outbound};
use somekone_core::tracking::{Emoji, EventKind, ShareScope};
use somekone_core::{Catalog, Session, SessionConfig};

use crate::persona::{Action, PersonaFile};
use crate::CliError;

pub const SESSION_ID: &str = "simulation";

/// Order in which optional actions are rolled after each view.
const ACTIONS: [Action; 5] = [Action::Like, Action::EmojiReaction, Action::Comment, Action::Share, Action::Follow];
/// Simulated gap between consecutive actions and between views.
const ACTION_GAP_MS: u64 = 250;
const VIEW_GAP_MS: u64 = 1000;

struct Agent {
    nickname: String,
    client: ClientId,
    persona: usize,
    rng: ChaCha8Rng,
    queue: Vec<ImageId>,
}

pub struct Simulation<'p> {
    session: Session,
    personas: &'p PersonaFile,
    agents: Vec<Agent>,
    by_client: BTreeMap<ClientId, usize>,
    clock: u64,
}

impl<'p> Simulation<'p> {
    /// Joins `agents` feed clients; nicknames are `<persona>-<nn>`.
    pub fn new(config: SessionConfig, catalog: Catalog, personas: &'p PersonaFile, agents: usize) -> Result<Self, CliError> {
        if agents == 0 {
            return Err(CliError::Usage("--agents must be at least 1".into()));
        }
        let seed = config.seed;
        let session = Session::with_secrets(config, catalog, SESSION_ID, StdRng::seed_from_u64(seed))?;
        let mut sim = Self {
            session,
            personas,
            agents: Vec::with_capacity(agents),
            by_client: BTreeMap::new(),
            clock: 0,
        };
        for i in 0..agents {
            let persona = personas.assign(i, agents);
            let index = personas.personas.iter().position(|p| p == persona).expect("assigned persona");
            let nickname = format!("{}-{:02}", persona.persona_id, i + 1);
            let client = sim.session.connect();
            sim.by_client.insert(client, i);
            sim.agents.push(Agent {
                rng: derive_rng(seed, &format!("agent:{nickname}"), 0),
                nickname: nickname.clone(),
                client,
                persona: index,
                queue: Vec::new(),
            });
            let join = ClientMessage::Join(JoinBody {
                role: RoleRequest::Feed,
                nickname: Some(nickname),
                code: None,
                token: None,
            });
            sim.send(i, join)?;
        }
        Ok(sim)
    }

    pub fn run(&mut self, steps: usize) -> Result<(), CliError> {
        if steps == 0 {
            return Err(CliError::Usage("--steps must be at least 1".into()));
        }
        for _ in 0..steps {
            for i in 0..self.agents.len() {
                self.act(i)?;
            }
        }
        Ok(())
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    /// One view: Seen, rolled actions, then DwellEnd.
    fn act(&mut self, i: usize) -> Result<(), CliError> {
        if self.agents[i].queue.is_empty() {
            let request = ClientMessage::SnapshotRequest(SnapshotBody {
                scope: Scope::Queue,
                user: None,
            });
            self.send(i, request)?;
        }
        let Some(image) = self.agents[i].queue.first().cloned() else {
            return Ok(());
        };
        let record = self.session.engine().catalog().get(&image).expect("queued images exist");
        let creator = record.creator.clone();
        let tags: Vec<String> = record.tags.iter().cloned().collect();
        let persona = &self.personas.personas[self.agents[i].persona];
        let on_topic = persona.likes(&tags);

        let start = self.clock;
        self.event(i, &image, start, EventKind::Seen)?;
        let mut t = start;
        for action in ACTIONS {
            let p = persona.propensity(on_topic, action);
            let rng = &mut self.agents[i].rng;
            // always draw, so one action's probability never shifts another's stream
            if rng.random::<f64>() >= p {
                continue;
            }
            let kind = match action {
                Action::Like => EventKind::Like,
                Action::EmojiReaction => EventKind::EmojiReaction {
                    emoji: Emoji::ALL[rng.random_range(0..Emoji::ALL.len())],
                },
                Action::Comment => EventKind::Comment {
                    length_chars: rng.random_range(5..=80),
                    text: None,
                },
                Action::Share => EventKind::Share {
                    scope: ShareScope::ALL[rng.random_range(0..ShareScope::ALL.len())],
                },
                Action::Follow => EventKind::Follow {
                    creator: creator.clone(),
                },
            };
            t += ACTION_GAP_MS;
            self.event(i, &image, t, kind)?;
        }
        let (lo, hi) = persona.dwell_range(on_topic);
        let duration_ms = self.agents[i].rng.random_range(lo..=hi);
        let end = (start + duration_ms).max(t);
        self.event(i, &image, end, EventKind::DwellEnd { duration_ms })?;
        self.clock = end + VIEW_GAP_MS;
        Ok(())
    }

    fn event(&mut self, i: usize, image: &str, t: u64, kind: EventKind) -> Result<(), CliError> {
        let body = EventBody {
            kind: kind.name().to_owned(),
            image: Some(image.to_owned()),
            t: Some(t),
            data: kind.data(),
        };
        self.send(i, ClientMessage::Event(body))
    }

    fn send(&mut self, i: usize, msg: ClientMessage) -> Result<(), CliError> {
        let out = self.session.handle(self.agents[i].client, msg, self.clock);
        self.absorb(out)
    }

    /// Keeps each agent's latest queue; any error addressed to an agent
    /// aborts the run.
    fn absorb(&mut self, out: Vec<Outbound>) -> Result<(), CliError> {
        for Outbound { to, envelope } in out {
            let Some(&i) = self.by_client.get(&to) else { continue };
            match envelope.kind.as_str() {
                server::QUEUE_UPDATE => {
                    let items = envelope.body["items"].as_array().cloned().unwrap_or_default();
                    self.agents[i].queue = items
                        .iter()
                        .filter_map(|c| c["image"].as_str().map(str::to_owned))
                        .collect();
                }
                server::ERROR => {
                    let message = match &envelope.body["message"] {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    return Err(CliError::Rejected {
                        agent: self.agents[i].nickname.clone(),
                        message,
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Runs a full simulation and returns the finished session.
pub fn simulate(
    config: SessionConfig,
    catalog: Catalog,
    personas: &PersonaFile,
    agents: usize,
    steps: usize,
) -> Result<Session, CliError> {
    let mut sim = Simulation::new(config, catalog, personas, agents)?;
    sim.run(steps)?;
    Ok(sim.into_session())
}

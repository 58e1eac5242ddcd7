//! Engagement tracking, profiling and recommendation engine for a
//! transparent classroom social media simulation.
//!
//! Data flows one way: [`tracking`] events are scored by [`scoring`],
//! aggregated into profiles by [`profiling`] and an image graph by
//! [`coengagement`], and turned into explained queues by [`recommender`].
//! [`session`] wires this to connected clients and [`persistence`] makes it
//! durable and replayable.

pub mod catalog;
pub mod coengagement;
pub mod config;
pub mod graph_layout;
pub mod persistence;
pub mod profiling;
pub mod recommender;
pub mod scoring;
pub mod session;
pub mod tracking;

pub use catalog::{fixture_catalog, Catalog, ImageId, ImageRecord};
pub use config::SessionConfig;
pub use session::{Engine, Session, SessionError};
pub use tracking::{EngagementEvent, EventKind, NewEvent, UserId};

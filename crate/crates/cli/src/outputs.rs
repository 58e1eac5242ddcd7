//! Files written by `simulate` and `export`.

use std::fs;
use std::path::{Path, PathBuf};

use somekone_core::coengagement::{EdgePayload, GraphPayload};
use somekone_core::persistence::{canonical_json, export, EXPORT_EXTENSION, LOG_EXTENSION};
use somekone_core::session::protocol::Scope;
use somekone_core::Session;

use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const CATALOG_FILE: &str = "catalog.json";
pub const SIMILARITY_FILE: &str = "similarity.graph.json";
pub const TAG_CLOUDS_FILE: &str = "tag_clouds.json";

const VIEWS: [(Scope, &str); 3] = [
    (Scope::Social, "social"),
    (Scope::ImageCoeng, "image_coeng"),
    (Scope::TopicCoeng, "topic_coeng"),
];

/// User-similarity graph over every profiled user, edges at or above the
/// configured threshold.
pub fn similarity_graph(session: &Session) -> GraphPayload {
    let engine = session.engine();
    GraphPayload {
        nodes: engine.profiles().keys().cloned().collect(),
        edges: engine
            .similarity_edges()
            .into_iter()
            .map(|e| EdgePayload { a: e.a, b: e.b, w: e.w })
            .collect(),
    }
}

/// Writes the export, log, config, catalog, graph and layout files into
/// `dir` and returns their paths in write order.
pub fn write_all(session: &mut Session, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_owned(),
        source,
    })?;
    let id = session.id().to_owned();
    let engine = session.engine();
    let mut files: Vec<(String, Vec<u8>)> = vec![
        (format!("{id}.{EXPORT_EXTENSION}"), export(engine).into_bytes()),
        (format!("{id}.{LOG_EXTENSION}"), engine.log().to_jsonl().into_bytes()),
        (CONFIG_FILE.into(), canonical_json(engine.config()).into_bytes()),
        (CATALOG_FILE.into(), engine.catalog().source_bytes().to_vec()),
        (SIMILARITY_FILE.into(), canonical_json(&similarity_graph(session)).into_bytes()),
        (
            "image_coeng.graph.json".into(),
            canonical_json(&engine.image_graph().to_payload()).into_bytes(),
        ),
        (
            "topic_coeng.graph.json".into(),
            canonical_json(&engine.topic_graph().to_payload()).into_bytes(),
        ),
        (TAG_CLOUDS_FILE.into(), canonical_json(&engine.tag_clouds()).into_bytes()),
    ];
    for (view, name) in VIEWS {
        let layout = session.layout(view);
        files.push((format!("{name}.layout.json"), canonical_json(&layout).into_bytes()));
    }

    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

//! Content-hashed artifact envelopes passed between pipeline stages.
//!
//! Every stage writes `{stem}.json` — and `{stem}.blob` beside it when the
//! payload references binary initializer data — with this envelope:
//!
//! ```json
//! { "kind": "plan", "hash": "…", "parents": {"training": "…"}, "payload": {…} }
//! ```
//!
//! `hash` covers the kind, the parent hashes, the canonical payload bytes
//! and the blob. Consumers recompute it on read and cross-check `parents`
//! against the artifacts they were given, so feeding a stage an output that
//! belongs to a different run fails loudly instead of producing numbers for
//! the wrong graph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// CLI failure, split by whose fault it is: exit 1 for bad input, exit 2
/// for a broken pipeline invariant.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    /// The single-line machine-parsable form printed to stderr.
    pub fn json(&self) -> String {
        let (msg, code) = match self {
            CliError::User(m) => (m, 1),
            CliError::Internal(m) => (m, 2),
        };
        json!({"error": msg, "code": code}).to_string()
    }
}

impl From<edgetrain_core::Error> for CliError {
    fn from(e: edgetrain_core::Error) -> Self {
        use edgetrain_core::Error as E;
        match e {
            // Bad inputs, configs, or plans that don't fit the budget the
            // user asked for.
            E::Parse(_)
            | E::Config(_)
            | E::Io(_)
            | E::Json(_)
            | E::UnknownTensor(_)
            | E::Infeasible(_)
            | E::Capacity { .. } => CliError::User(e.to_string()),
            // Anything else coming from an artifact that passed its
            // integrity check is a pipeline bug.
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(e.to_string())
    }
}

pub struct Artifact {
    pub kind: String,
    pub hash: String,
    pub parents: BTreeMap<String, String>,
    pub payload: Value,
    /// Binary sidecar (`{stem}.blob`); empty when the stage has none.
    pub blob: Vec<u8>,
}

impl Artifact {
    /// Fail unless this artifact was produced from the parent with the
    /// given hash.
    pub fn require_parent(&self, key: &str, expected: &str) -> Result<(), CliError> {
        match self.parents.get(key) {
            Some(h) if h == expected => Ok(()),
            Some(h) => Err(CliError::User(format!(
                "provenance error: this {} artifact was produced from {key} {h}, not from the given {key} {expected}",
                self.kind
            ))),
            None => Err(CliError::User(format!(
                "provenance error: {} artifact records no {key} parent",
                self.kind
            ))),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn content_hash(kind: &str, parents: &BTreeMap<String, String>, payload: &Value, blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    for (k, v) in parents {
        h.update(k.as_bytes());
        h.update([0u8]);
        h.update(v.as_bytes());
        h.update([0u8]);
    }
    // serde_json maps are ordered, so this is canonical.
    h.update(serde_json::to_vec(payload).expect("JSON value serialization cannot fail"));
    h.update([0u8]);
    h.update(blob);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `{dir}/{stem}.json` (and `.blob` if non-empty); returns the hash.
pub fn write(
    dir: &Path,
    stem: &str,
    kind: &str,
    parents: BTreeMap<String, String>,
    payload: Value,
    blob: &[u8],
) -> Result<String, CliError> {
    fs::create_dir_all(dir)?;
    let hash = content_hash(kind, &parents, &payload, blob);
    let envelope = json!({
        "kind": kind,
        "hash": hash,
        "parents": parents,
        "payload": payload,
    });
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    fs::write(dir.join(format!("{stem}.json")), text)?;
    let blob_path = dir.join(format!("{stem}.blob"));
    if blob.is_empty() {
        // Never leave a stale sidecar from a previous run with data.
        if blob_path.exists() {
            fs::remove_file(&blob_path)?;
        }
    } else {
        fs::write(blob_path, blob)?;
    }
    Ok(hash)
}

/// Read and integrity-check an artifact, insisting on its kind.
pub fn read(path: &Path, expect_kind: &str) -> Result<Artifact, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read artifact {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("artifact {} is not JSON: {e}", path.display())))?;
    let kind = v["kind"]
        .as_str()
        .ok_or_else(|| CliError::User(format!("artifact {} has no kind", path.display())))?
        .to_string();
    if kind != expect_kind {
        return Err(CliError::User(format!(
            "expected a {expect_kind} artifact, but {} is a {kind} artifact",
            path.display()
        )));
    }
    let hash = v["hash"]
        .as_str()
        .ok_or_else(|| CliError::User(format!("artifact {} has no hash", path.display())))?
        .to_string();
    let parents: BTreeMap<String, String> = serde_json::from_value(v["parents"].clone())
        .map_err(|e| CliError::User(format!("artifact {} has bad parents: {e}", path.display())))?;
    let payload = v["payload"].clone();
    let blob_path = path.with_extension("blob");
    let blob = if blob_path.exists() {
        fs::read(&blob_path)?
    } else {
        Vec::new()
    };
    let recomputed = content_hash(&kind, &parents, &payload, &blob);
    if recomputed != hash {
        return Err(CliError::User(format!(
            "artifact {} failed its integrity check: stored hash {hash}, content hashes to {recomputed}",
            path.display()
        )));
    }
    Ok(Artifact {
        kind,
        hash,
        parents,
        payload,
        blob,
    })
}

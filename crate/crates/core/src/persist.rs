//! Versioned JSON documents. Every artifact carries a `schema` field and
//! readers reject versions they do not know.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;

use crate::error::{Error, Result};

pub const APP_MODEL_SCHEMA: &str = "app_model_v1";
pub const DEFECT_SCHEMA: &str = "defect_v1";
pub const TASK_SCHEMA: &str = "task_v1";
pub const TRAJECTORY_SCHEMA: &str = "trajectory_v1";
pub const REPORT_SCHEMA: &str = "report_v1";
pub const BENCH_MANIFEST_SCHEMA: &str = "bench_manifest_v1";
pub const RUN_MANIFEST_SCHEMA: &str = "run_manifest_v1";
pub const SYNTH_LOG_SCHEMA: &str = "synth_log_v1";
pub const REPRO_SCHEMA: &str = "repro_v1";

/// Serializes `body` as a JSON object with a leading `schema` key.
pub fn to_document<T: Serialize>(schema: &'static str, body: &T) -> Result<Json> {
    let mut obj = serde_json::Map::new();
    obj.insert("schema".to_owned(), Json::String(schema.to_owned()));
    match serde_json::to_value(body)? {
        Json::Object(fields) => {
            for (k, v) in fields {
                if k != "schema" {
                    obj.insert(k, v);
                }
            }
        }
        other => {
            obj.insert("body".to_owned(), other);
        }
    }
    Ok(Json::Object(obj))
}

/// Parses a versioned document, checking its `schema` field first.
pub fn from_document<T: DeserializeOwned>(schema: &'static str, mut doc: Json) -> Result<T> {
    let found = doc.get("schema").and_then(Json::as_str).unwrap_or("<missing>").to_owned();
    if found != schema {
        return Err(Error::Schema { expected: schema, found });
    }
    if let Json::Object(obj) = &mut doc {
        obj.remove("schema");
        if obj.len() == 1 {
            if let Some(body) = obj.remove("body") {
                return Ok(serde_json::from_value(body)?);
            }
        }
    }
    Ok(serde_json::from_value(doc)?)
}

pub fn to_pretty_string<T: Serialize>(schema: &'static str, body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_document(schema, body)?)?;
    s.push('\n');
    Ok(s)
}

pub fn write_document<T: Serialize>(path: impl AsRef<Path>, schema: &'static str, body: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_pretty_string(schema, body)?)?;
    Ok(())
}

pub fn read_document<T: DeserializeOwned>(path: impl AsRef<Path>, schema: &'static str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    from_document(schema, serde_json::from_str(&text)?)
}

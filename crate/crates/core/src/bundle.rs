//! Bench bundles on disk: app models, defects, reproduction trajectories,
//! tasks and a manifest of content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defect::{inject, DefectSpec, InstrumentedModel};
use crate::error::{Error, Result};
use crate::persist::{
    from_document, to_pretty_string, APP_MODEL_SCHEMA, BENCH_MANIFEST_SCHEMA, DEFECT_SCHEMA, REPRO_SCHEMA, TASK_SCHEMA,
};
use crate::screen::AppModel;
use crate::synth::{ReproductionTrajectory, TaskSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bench {
    pub apps: Vec<AppModel>,
    pub defects: Vec<DefectSpec>,
    pub repros: Vec<ReproductionTrajectory>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub bench_hash: String,
    /// Relative path to lowercase hex SHA-256 of the file bytes.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn combined_hash(files: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, digest) in files {
        h.update(path.as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn file_name(id: &str) -> Result<String> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.starts_with('.') {
        return Err(Error::Input(format!("id `{id}` is not usable as a file name")));
    }
    Ok(format!("{id}.json"))
}

impl Bench {
    /// Relative path to serialized document for every artifact.
    pub fn documents(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for a in &self.apps {
            out.insert(format!("apps/{}", file_name(&a.id)?), to_pretty_string(APP_MODEL_SCHEMA, a)?);
        }
        for d in &self.defects {
            out.insert(format!("defects/{}", file_name(&d.id)?), to_pretty_string(DEFECT_SCHEMA, d)?);
        }
        for r in &self.repros {
            out.insert(format!("repros/{}", file_name(&r.defect_id)?), to_pretty_string(REPRO_SCHEMA, r)?);
        }
        for t in &self.tasks {
            out.insert(format!("tasks/{}", file_name(&t.id)?), to_pretty_string(TASK_SCHEMA, t)?);
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Result<BenchManifest> {
        let files: BTreeMap<String, String> =
            self.documents()?.into_iter().map(|(p, text)| (p, sha256_hex(text.as_bytes()))).collect();
        Ok(BenchManifest { bench_hash: combined_hash(&files), files })
    }

    pub fn hash(&self) -> Result<String> {
        Ok(self.manifest()?.bench_hash)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<BenchManifest> {
        let dir = dir.as_ref();
        self.validate()?;
        for (path, text) in self.documents()? {
            let p = dir.join(&path);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        let manifest = self.manifest()?;
        fs::write(dir.join(MANIFEST_FILE), to_pretty_string(BENCH_MANIFEST_SCHEMA, &manifest)?)?;
        Ok(manifest)
    }

    /// Reads a bundle, checking every file against the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Bench, BenchManifest)> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Input(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: BenchManifest = from_document(BENCH_MANIFEST_SCHEMA, serde_json::from_str(&text)?)?;
        let mut problems = Vec::new();
        if combined_hash(&manifest.files) != manifest.bench_hash {
            problems.push("manifest bench_hash does not match its file list".to_owned());
        }
        let mut bench = Bench::default();
        for (path, digest) in &manifest.files {
            if path.contains("..") {
                problems.push(format!("{path}: path escapes the bundle"));
                continue;
            }
            let bytes = match fs::read(dir.join(path)) {
                Ok(b) => b,
                Err(e) => {
                    problems.push(format!("{path}: {e}"));
                    continue;
                }
            };
            if sha256_hex(&bytes) != *digest {
                problems.push(format!("{path}: content hash differs from the manifest"));
                continue;
            }
            let doc: serde_json::Value = serde_json::from_slice(&bytes)?;
            let parsed = match path.split('/').next() {
                Some("apps") => from_document(APP_MODEL_SCHEMA, doc).map(|a| bench.apps.push(a)),
                Some("defects") => from_document(DEFECT_SCHEMA, doc).map(|d| bench.defects.push(d)),
                Some("repros") => from_document(REPRO_SCHEMA, doc).map(|r| bench.repros.push(r)),
                Some("tasks") => from_document(TASK_SCHEMA, doc).map(|t| bench.tasks.push(t)),
                _ => {
                    problems.push(format!("{path}: unknown artifact directory"));
                    Ok(())
                }
            };
            if let Err(e) = parsed {
                problems.push(format!("{path}: {e}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        bench.validate()?;
        Ok((bench, manifest))
    }

    pub fn app(&self, id: &str) -> Option<&AppModel> {
        self.apps.iter().find(|a| a.id == id)
    }

    pub fn defect(&self, id: &str) -> Option<&DefectSpec> {
        self.defects.iter().find(|d| d.id == id)
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// The task's app with only the task's defect armed.
    pub fn instrumented(&self, task: &TaskSpec) -> Result<InstrumentedModel> {
        let app = self.app(&task.app_id).ok_or_else(|| Error::lookup("app", task.app_id.as_str()))?;
        let defect = self.defect(&task.defect_id).ok_or_else(|| Error::lookup("defect", task.defect_id.as_str()))?;
        inject(app.clone(), vec![defect.clone()])
    }

    /// Every problem in the bundle, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.apps {
            if !ids.insert(("app", a.id.as_str())) {
                out.push(format!("duplicate app `{}`", a.id));
            }
            out.extend(a.violations().into_iter().map(|v| format!("app `{}`: {v}", a.id)));
        }
        for d in &self.defects {
            if !ids.insert(("defect", d.id.as_str())) {
                out.push(format!("duplicate defect `{}`", d.id));
            }
            match self.app(&d.app_id) {
                None => out.push(format!("defect `{}` names unknown app `{}`", d.id, d.app_id)),
                Some(a) => {
                    if let Err(Error::Validation(v)) = inject(a.clone(), vec![d.clone()]) {
                        out.extend(v);
                    }
                }
            }
        }
        for t in &self.tasks {
            if !ids.insert(("task", t.id.as_str())) {
                out.push(format!("duplicate task `{}`", t.id));
            }
            match self.defect(&t.defect_id) {
                None => out.push(format!("task `{}` names unknown defect `{}`", t.id, t.defect_id)),
                Some(d) if d.app_id != t.app_id => {
                    out.push(format!("task `{}` app `{}` differs from its defect's app", t.id, t.app_id))
                }
                _ => {}
            }
        }
        for r in &self.repros {
            let Some(d) = self.defect(&r.defect_id) else {
                out.push(format!("reproduction names unknown defect `{}`", r.defect_id));
                continue;
            };
            if let Some(a) = self.app(&d.app_id) {
                if let Ok(m) = inject(a.clone(), vec![d.clone()]) {
                    if let Err(e) = r.replay(&m) {
                        out.push(format!("reproduction of `{}`: {e}", r.defect_id));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;

    fn demo_bench() -> Bench {
        Bench {
            apps: vec![demo::tasks_app()],
            defects: demo::tasks_defects(),
            repros: demo::tasks_repros(),
            tasks: Vec::new(),
        }
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = demo_bench();
        let m = b.write(dir.path()).unwrap();
        let (back, m2) = Bench::load(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back.hash().unwrap(), m.bench_hash);
        assert_eq!(back.defects.len(), b.defects.len());
    }

    #[test]
    fn tampered_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        demo_bench().write(dir.path()).unwrap();
        let p = dir.path().join("apps/tasks.json");
        let text = fs::read_to_string(&p).unwrap().replace("Settings", "Setings");
        fs::write(&p, text).unwrap();
        match Bench::load(dir.path()) {
            Err(Error::Validation(v)) => assert!(v.iter().any(|s| s.contains("apps/tasks.json"))),
            other => panic!("{other:?}"),
        }
    }
}

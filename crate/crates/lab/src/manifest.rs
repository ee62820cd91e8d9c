use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use unlearnlab_core::nn::{load_checkpoint, save_checkpoint, Checkpoint, Network};
use unlearnlab_core::train::{write_metrics_csv, MetricsRecord};

use crate::error::{LabError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Paths are relative to the run directory.
    pub checkpoint: Option<String>,
    pub digest: Option<String>,
    pub metrics: Option<String>,
    /// Ids the stage read, all within its contract.
    pub audited_ids: usize,
    #[serde(default)]
    pub l2_from_pretrained: Option<f64>,
    #[serde(default)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageEntry>,
    /// Report name to relative path.
    pub reports: BTreeMap<String, String>,
    pub failure: Option<StageFailure>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seeds: BTreeMap::from([("experiment".to_string(), seed)]),
            stages: BTreeMap::new(),
            reports: BTreeMap::new(),
            failure: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Every referenced file exists, checkpoints reload to their digests, and
    /// the config hash matches.
    pub fn verify(&self, dir: &Path, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(LabError::Config(format!(
                "manifest belongs to config {}, not {config_hash}",
                self.config_hash
            )));
        }
        for (name, e) in &self.stages {
            if let (Some(p), Some(d)) = (&e.checkpoint, &e.digest) {
                let (_, ckpt) = load_checkpoint(&dir.join(p)).map_err(|err| LabError::stage(name, err))?;
                if &ckpt.digest() != d {
                    return Err(LabError::Config(format!("checkpoint of {name} does not match its digest")));
                }
            }
            if let Some(m) = &e.metrics {
                if !dir.join(m).is_file() {
                    return Err(LabError::Config(format!("metrics of {name} missing: {m}")));
                }
            }
        }
        for (name, p) in &self.reports {
            if !dir.join(p).is_file() {
                return Err(LabError::Config(format!("report {name} missing: {p}")));
            }
        }
        Ok(())
    }
}

/// Run directory with a single manifest writer.
pub struct Store {
    pub root: PathBuf,
    manifest: Mutex<RunManifest>,
    computed: Mutex<Vec<String>>,
}

fn slug(stage: &str) -> String {
    stage.replace('/', "__")
}

impl Store {
    pub fn open(root: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("metrics"))?;
        fs::create_dir_all(root.join("report"))?;
        let manifest = match RunManifest::load(root)? {
            Some(m) if m.config_hash != config_hash => {
                return Err(LabError::Config(format!(
                    "{} holds a run of a different config ({})",
                    root.display(),
                    m.config_hash
                )))
            }
            Some(mut m) => {
                m.failure = None;
                m
            }
            None => RunManifest::new(config_hash.to_string(), seed),
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Mutex::new(manifest),
            computed: Mutex::new(Vec::new()),
        })
    }

    /// Stages this process computed rather than reloaded, sorted.
    pub fn computed(&self) -> Vec<String> {
        let mut v = self.computed.lock().expect("stage list lock").clone();
        v.sort();
        v
    }

    pub fn snapshot(&self) -> RunManifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn update(&self, f: impl FnOnce(&mut RunManifest)) -> Result<()> {
        let mut m = self.manifest.lock().expect("manifest lock");
        f(&mut m);
        m.save(&self.root)
    }

    pub fn entry(&self, stage: &str) -> Option<StageEntry> {
        self.manifest.lock().expect("manifest lock").stages.get(stage).cloned()
    }

    /// Loads a finished stage's checkpoint, or None when the stage must run.
    pub fn cached_checkpoint(&self, stage: &str) -> Result<Option<(StageEntry, Checkpoint)>> {
        let Some(e) = self.entry(stage) else { return Ok(None) };
        let (Some(p), Some(d)) = (&e.checkpoint, &e.digest) else {
            return Ok(None);
        };
        let path = self.root.join(p);
        if !path.is_file() {
            return Ok(None);
        }
        let (_, ckpt) = load_checkpoint(&path).map_err(|err| LabError::stage(stage, err))?;
        if &ckpt.digest() != d {
            return Ok(None);
        }
        Ok(Some((e, ckpt)))
    }

    pub fn cached_metrics(&self, stage: &str) -> Result<Option<Vec<MetricsRecord>>> {
        let Some(m) = self.entry(stage).and_then(|e| e.metrics) else {
            return Ok(None);
        };
        let path = self.root.join(m);
        if !path.is_file() {
            return Ok(None);
        }
        read_metrics_csv(&fs::read_to_string(path)?).map(Some)
    }

    /// Stores a checkpoint under its content digest plus its metric stream.
    pub fn commit(
        &self,
        stage: &str,
        net: &Network,
        ckpt: Option<&Checkpoint>,
        records: &[MetricsRecord],
        mut entry: StageEntry,
    ) -> Result<StageEntry> {
        if let Some(c) = ckpt {
            let digest = c.digest();
            let rel = format!("checkpoints/{digest}.ckpt");
            let path = self.root.join(&rel);
            if !path.is_file() {
                save_checkpoint(&path, net, c).map_err(|e| LabError::stage(stage, e))?;
            }
            entry.checkpoint = Some(rel);
            entry.digest = Some(digest);
        }
        if !records.is_empty() {
            let rel = format!("metrics/{}.csv", slug(stage));
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, records).map_err(|e| LabError::stage(stage, e))?;
            fs::write(self.root.join(&rel), buf)?;
            entry.metrics = Some(rel);
        }
        self.computed.lock().expect("stage list lock").push(stage.to_string());
        let e = entry.clone();
        self.update(|m| {
            m.stages.insert(stage.to_string(), e);
        })?;
        Ok(entry)
    }

    pub fn write_report(&self, name: &str, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        self.update(|m| {
            m.reports.insert(name.to_string(), rel.to_string());
        })
    }

    pub fn fail(&self, err: &LabError) -> Result<()> {
        let stage = match err {
            LabError::Stage { stage, .. } | LabError::Audit { stage, .. } => stage.clone(),
            _ => "run".to_string(),
        };
        self.update(|m| {
            m.failure = Some(StageFailure {
                stage,
                message: err.to_string(),
            })
        })
    }
}

/// Parses what `write_metrics_csv` wrote.
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let bad = |line: usize| LabError::Config(format!("malformed metrics row {line}"));
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(line))
        }
    };
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i));
            }
            Ok(MetricsRecord {
                phase: f[0].to_string(),
                step: f[1].parse().map_err(|_| bad(i))?,
                test_acc: opt(f[2], i)?,
                forget_ho_acc: opt(f[3], i)?,
                train_loss: f[4].parse().map_err(|_| bad(i))?,
                lr: f[5].parse().map_err(|_| bad(i))?,
            })
        })
        .collect()
}

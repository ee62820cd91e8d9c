use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unlearnlab_core::attack::{RelearnConfig, ReminderSource};
use unlearnlab_core::data::{ForgetScope, ForgetSize, ForgetSpec, Selection, SyntheticConfig, TypicalityMethod};
use unlearnlab_core::train::TrainConfig;
use unlearnlab_core::unlearn::{MethodId, MethodParams, UnlearnConfig};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn pretrain(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }

    pub fn unlearn(self) -> SharedOverrides {
        let (lr, epochs, batch_size) = match self {
            Preset::Desk => (DESK_UNLEARN_LR, 30, 64),
            Preset::Paper => (1e-5, 100, 128),
        };
        SharedOverrides {
            lr: Some(lr),
            epochs: Some(epochs),
            batch_size: Some(batch_size),
            floor_factor: Some(0.1),
            weight_decay: None,
        }
    }

    /// Method parameters used when an entry gives none.
    pub fn method_params(self, method: MethodId) -> MethodParams {
        let mut p = MethodParams::default();
        if self == Preset::Desk {
            match method {
                MethodId::WeightDistortion => p.magnitude = Some(DESK_DISTORTION_SIGMA),
                MethodId::WeightDistReg => p.lambda_dist = DESK_LAMBDA_DIST,
                MethodId::Tar => p.tar_lr = Some(DESK_TAR_LR),
                _ => {}
            }
        }
        p
    }

    pub fn relearn(self) -> RelearnConfig {
        let (lr, batch_size) = match self {
            Preset::Desk => (DESK_RELEARN_LR, 64),
            Preset::Paper => (1e-5, 128),
        };
        RelearnConfig {
            lr,
            epochs: 10,
            batch_size,
            ..RelearnConfig::default()
        }
    }

    pub fn n_relearn(self) -> Vec<usize> {
        match self {
            Preset::Desk => vec![0, 10],
            Preset::Paper => vec![0, 10, 100],
        }
    }
}

pub const DESK_UNLEARN_LR: f64 = 3e-3;
pub const DESK_RELEARN_LR: f64 = 3e-4;
/// Weight-distortion sigma for the desk network, whose weights are an order of
/// magnitude larger than a ResNet's.
pub const DESK_DISTORTION_SIGMA: f64 = 0.3;
pub const DESK_LAMBDA_DIST: f64 = 2.0;
/// TAR's entropy term has no retain cross-entropy beside it; at the shared desk
/// rate it flattens the output layer and test accuracy collapses.
pub const DESK_TAR_LR: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    MlpTiny,
    ConvTiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    pub kind: DatasetKind,
    /// Generator settings; its `seed` must stay 0, the experiment seed drives it.
    pub synthetic: SyntheticConfig,
    pub idx: Option<IdxFiles>,
    /// Ground truth is only available for synthetic data.
    pub typicality: TypicalityMethod,
    pub folds: usize,
    /// Epochs per hold-out model when scoring typicality.
    pub typicality_epochs: usize,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            synthetic: SyntheticConfig::default(),
            idx: None,
            typicality: TypicalityMethod::GroundTruth,
            folds: 3,
            typicality_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetBlock {
    pub scope: ForgetScope,
    pub selection: Selection,
    pub size: ForgetSize,
}

impl Default for ForgetBlock {
    fn default() -> Self {
        Self {
            scope: ForgetScope::ClassAgnostic,
            selection: Selection::Atypical,
            size: ForgetSize::Fraction(0.01),
        }
    }
}

/// Partial trainer settings layered over a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub floor_factor: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, mut base: TrainConfig) -> TrainConfig {
        base.lr = self.lr.unwrap_or(base.lr);
        base.weight_decay = self.weight_decay.unwrap_or(base.weight_decay);
        base.epochs = self.epochs.unwrap_or(base.epochs);
        base.batch_size = self.batch_size.unwrap_or(base.batch_size);
        base.floor_factor = self.floor_factor.unwrap_or(base.floor_factor);
        base
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedOverrides {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub floor_factor: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl SharedOverrides {
    fn apply(&self, cfg: &mut UnlearnConfig) {
        cfg.lr = self.lr.unwrap_or(cfg.lr);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.floor_factor = self.floor_factor.unwrap_or(cfg.floor_factor);
        cfg.weight_decay = self.weight_decay.unwrap_or(cfg.weight_decay);
    }
}

/// One entry of the method list. `then` turns it into a two-phase run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: MethodId,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub params: Option<MethodParams>,
    #[serde(default)]
    pub then: Option<Box<MethodEntry>>,
}

impl MethodEntry {
    pub fn new(method: MethodId) -> Self {
        Self {
            method,
            label: None,
            lr: None,
            epochs: None,
            batch_size: None,
            weight_decay: None,
            params: None,
            then: None,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.then {
            Some(t) => format!("{}+{}", self.method, t.method),
            None => self.method.to_string(),
        }
    }

    fn resolve_one(&self, preset: Preset, shared: &SharedOverrides, seed: u64) -> UnlearnConfig {
        let mut cfg = UnlearnConfig::new(self.method);
        cfg.params = preset.method_params(self.method);
        shared.apply(&mut cfg);
        let own = SharedOverrides {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            floor_factor: None,
            weight_decay: self.weight_decay,
        };
        own.apply(&mut cfg);
        if let Some(p) = &self.params {
            cfg.params = p.clone();
        }
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    pub n_relearn: Option<Vec<usize>>,
    pub sources: Vec<ReminderSource>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub corruption_sigma: f64,
    pub quant_bits: Vec<u32>,
    pub mia: bool,
    /// Draw MIA non-members with the forget set's typicality mix.
    pub mia_stratified: bool,
}

impl Default for AttackBlock {
    fn default() -> Self {
        Self {
            n_relearn: None,
            sources: vec![ReminderSource::Retain, ReminderSource::HeldoutTest, ReminderSource::CorruptedTest],
            lr: None,
            epochs: None,
            batch_size: None,
            corruption_sigma: 0.5,
            quant_bits: vec![32, 16, 12, 8, 6, 4, 3, 2],
            mia: true,
            mia_stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsBlock {
    pub lmc: bool,
    pub lmc_points: usize,
    /// Records averaged per relearning stream (plus the final record).
    pub window: usize,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            lmc: true,
            lmc_points: 11,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub methods: Vec<MethodId>,
    pub epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub forget: ForgetBlock,
    #[serde(default)]
    pub pretrain: TrainOverrides,
    /// Applied to every method before its own settings.
    #[serde(default)]
    pub unlearn: SharedOverrides,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub attack: AttackBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    /// Not part of the config hash.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_methods() -> Vec<MethodEntry> {
    MethodId::ALL.iter().map(|&m| MethodEntry::new(m)).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

/// A method entry with its configs filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMethod {
    pub label: String,
    pub first: UnlearnConfig,
    pub second: Option<UnlearnConfig>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            seed: 0,
            model: ModelKind::MlpTiny,
            dataset: DatasetBlock::default(),
            forget: ForgetBlock::default(),
            pretrain: TrainOverrides::default(),
            unlearn: SharedOverrides::default(),
            methods: default_methods(),
            attack: AttackBlock::default(),
            diagnostics: DiagnosticsBlock::default(),
            sweep: Some(SweepBlock {
                methods: vec![MethodId::WeightDistortion, MethodId::CatastrophicForgetting],
                epochs: vec![0, 1, 5, preset.unlearn().epochs.unwrap_or(30)],
            }),
            output: None,
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        let mut tc = self.pretrain.apply(self.preset.pretrain());
        tc.seed = self.seed;
        tc
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            ..self.dataset.synthetic.clone()
        }
    }

    pub fn forget_spec(&self) -> ForgetSpec {
        ForgetSpec {
            scope: self.forget.scope,
            selection: self.forget.selection,
            size: self.forget.size,
            seed: self.seed,
        }
    }

    pub fn n_relearn(&self) -> Vec<usize> {
        self.attack.n_relearn.clone().unwrap_or_else(|| self.preset.n_relearn())
    }

    fn shared_unlearn(&self) -> SharedOverrides {
        let base = self.preset.unlearn();
        let u = &self.unlearn;
        SharedOverrides {
            lr: u.lr.or(base.lr),
            epochs: u.epochs.or(base.epochs),
            batch_size: u.batch_size.or(base.batch_size),
            floor_factor: u.floor_factor.or(base.floor_factor),
            weight_decay: u.weight_decay.or(base.weight_decay),
        }
    }

    pub fn resolve_method(&self, entry: &MethodEntry) -> ResolvedMethod {
        let shared = self.shared_unlearn();
        ResolvedMethod {
            label: entry.label(),
            first: entry.resolve_one(self.preset, &shared, self.seed),
            second: entry.then.as_ref().map(|t| t.resolve_one(self.preset, &shared, self.seed)),
        }
    }

    pub fn resolved_methods(&self) -> Vec<ResolvedMethod> {
        self.methods.iter().map(|m| self.resolve_method(m)).collect()
    }

    pub fn relearn_config(&self, n_relearn: usize, source: ReminderSource) -> RelearnConfig {
        let base = self.preset.relearn();
        RelearnConfig {
            n_relearn,
            source,
            lr: self.attack.lr.unwrap_or(base.lr),
            epochs: self.attack.epochs.unwrap_or(base.epochs),
            batch_size: self.attack.batch_size.unwrap_or(base.batch_size),
            corruption_sigma: self.attack.corruption_sigma,
            seed: self.seed,
            ..base
        }
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.dataset.synthetic.seed != 0 {
            return bad("dataset.synthetic.seed is driven by the experiment seed; leave it unset".into());
        }
        match (self.dataset.kind, self.model) {
            (DatasetKind::Synthetic, ModelKind::MlpTiny) => {}
            (DatasetKind::Idx, ModelKind::ConvTiny) => {
                if self.dataset.idx.is_none() {
                    return bad("dataset.kind = idx needs a dataset.idx block".into());
                }
                if self.dataset.typicality == TypicalityMethod::GroundTruth {
                    return bad("idx data has no ground-truth typicality; use holdout_consistency".into());
                }
            }
            (d, m) => return bad(format!("model {m:?} does not fit dataset kind {d:?}")),
        }
        if self.dataset.typicality == TypicalityMethod::HoldoutConsistency && self.dataset.folds < 3 {
            return bad("typicality folds must be at least 3".into());
        }
        self.pretrain_config()
            .validate()
            .map_err(|e| LabError::Config(format!("pretrain: {e}")))?;
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        let mut labels = BTreeSet::new();
        for entry in &self.methods {
            let r = self.resolve_method(entry);
            if matches!(r.label.as_str(), "retrain" | "pretrained") || r.label.contains('/') {
                return bad(format!("reserved or malformed method label {}", r.label));
            }
            if !labels.insert(r.label.clone()) {
                return bad(format!("duplicate method label {}", r.label));
            }
            for c in std::iter::once(&r.first).chain(r.second.as_ref()) {
                c.validate().map_err(|e| LabError::Config(e.to_string()))?;
            }
            if r.second.is_some() && r.first.method == MethodId::Tar {
                return bad("tar cannot be the first phase".into());
            }
            if entry.then.as_ref().is_some_and(|t| t.then.is_some()) {
                return bad("at most two phases per method".into());
            }
        }
        let ns = self.n_relearn();
        if ns.is_empty() || self.attack.sources.is_empty() {
            return bad("attack needs at least one n_relearn and one source".into());
        }
        if let ForgetSize::Count(k) = self.forget.size {
            if ns.iter().any(|&n| n >= k) {
                return bad(format!("n_relearn values must be below the forget set size {k}"));
            }
        }
        for &n in &ns {
            for &s in &self.attack.sources {
                let rc = self.relearn_config(n, s);
                if !(rc.lr > 0.0) || rc.epochs == 0 || rc.batch_size < 2 || !(rc.corruption_sigma >= 0.0) {
                    return bad("relearn lr, epochs, batch size or corruption sigma".into());
                }
            }
        }
        if self.attack.quant_bits.iter().any(|b| !(2..=32).contains(b)) {
            return bad("quantization bits outside [2, 32]".into());
        }
        if self.diagnostics.lmc_points < 3 {
            return bad("lmc_points must be at least 3".into());
        }
        if let Some(s) = &self.sweep {
            if s.methods.is_empty() || s.epochs.is_empty() {
                return bad("sweep needs methods and epochs".into());
            }
            if s.methods.contains(&MethodId::Tar) {
                return bad("sweep runs single-phase methods only".into());
            }
        }
        Ok(())
    }
}

//! Records which example ids each training stage consumed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct AccessLog {
    touched: Mutex<BTreeMap<String, BTreeSet<u64>>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: &str, ids: impl IntoIterator<Item = u64>) {
        let mut map = self.touched.lock().expect("access log poisoned");
        map.entry(stage.to_string()).or_default().extend(ids);
    }

    pub fn touched(&self, stage: &str) -> BTreeSet<u64> {
        let map = self.touched.lock().expect("access log poisoned");
        map.get(stage).cloned().unwrap_or_default()
    }

    pub fn stages(&self) -> Vec<String> {
        let map = self.touched.lock().expect("access log poisoned");
        map.keys().cloned().collect()
    }

    /// Fails if `stage` consumed any id outside `allowed`.
    pub fn verify(&self, stage: &str, allowed: &HashSet<u64>) -> Result<()> {
        let touched = self.touched(stage);
        let stray: Vec<u64> = touched.iter().copied().filter(|id| !allowed.contains(id)).collect();
        if stray.is_empty() {
            Ok(())
        } else {
            Err(Error::Audit(format!(
                "stage {stage} read {} disallowed ids (first {})",
                stray.len(),
                stray[0]
            )))
        }
    }
}

//! Per-stage operation counters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// ON×OFF multiplies of the ESTMD lobula.
pub const ESTMD_CORRELATIONS: &str = "estmd_correlations";
/// ON×OFF evaluations of the directional lobula, one per pixel per direction.
pub const DIRECTIONAL_CORRELATIONS: &str = "directional_correlations";
/// `v_on · v_off` multiplies of the dual-dynamics lobula.
pub const LOCATE_CORRELATIONS: &str = "locate_correlations";
/// Guarded `v_on / v_off` divisions forming the shared directional code.
pub const LDFC_DIVISIONS: &str = "ldfc_divisions";
/// Membrane potential updates, one per channel per pixel.
pub const MEDULLA_UPDATES: &str = "medulla_updates";
/// Delayed-signal multiplies/divisions of the elementary motion detectors.
pub const EMD_EVALUATIONS: &str = "emd_evaluations";
pub const FEEDBACK_SUBTRACTIONS: &str = "feedback_subtractions";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpCounts(BTreeMap<String, u64>);

impl OpCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: &str, n: u64) {
        *self.0.entry(stage.to_owned()).or_default() += n;
    }

    pub fn get(&self, stage: &str) -> u64 {
        self.0.get(stage).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &OpCounts) {
        for (k, v) in &other.0 {
            self.add(k, *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }
}

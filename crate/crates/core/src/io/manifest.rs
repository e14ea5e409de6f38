//! Stage manifest: a JSON list of subtasks naming dataset entries by id.
//! The schema is documented in `docs/manifest.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::{EmbeddingDataset, Kind};
use crate::stage::StageSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStage {
    pub instruction: String,
    /// Falls back to the manifest-level baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    /// Falls back to the previous stage's goal image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_image: Option<String>,
    pub goal_image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    /// Shared baseline text id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub stages: Vec<ManifestStage>,
}

impl StageManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.stages.is_empty() {
            return Err(Error::EmptyStages);
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Looks every id up in `ds` and builds the stage specs.
    pub fn resolve(&self, ds: &EmbeddingDataset) -> Result<Vec<StageSpec>> {
        if self.stages.is_empty() {
            return Err(Error::EmptyStages);
        }
        let mut specs = Vec::with_capacity(self.stages.len());
        let mut previous_goal: Option<&str> = None;
        for (k, st) in self.stages.iter().enumerate() {
            let baseline = st
                .baseline
                .as_deref()
                .or(self.baseline.as_deref())
                .ok_or_else(|| Error::Malformed(format!("stage {k} has no baseline")))?;
            let start = st
                .start_image
                .as_deref()
                .or(previous_goal)
                .ok_or_else(|| Error::Malformed(format!("stage {k} has no start_image")))?;
            specs.push(StageSpec::new(
                ds.embedding(&st.instruction, Kind::Text)?,
                ds.embedding(baseline, Kind::Text)?,
                ds.embedding(start, Kind::Image)?,
                ds.embedding(&st.goal_image, Kind::Image)?,
            )?);
            previous_goal = Some(&st.goal_image);
        }
        Ok(specs)
    }
}

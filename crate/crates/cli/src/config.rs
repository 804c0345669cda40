use std::fs;
use std::path::Path;

use fsbio::annotations::FewShotConfig;
use fsbio::dsp::FrontendConfig;
use fsbio::pipeline::{PipelineConfig, ProtoParams, TemplateParams};
use fsbio::postprocess::PostprocessConfig;
use fsbio::scoring::{Averaging, MatchConfig};
use fsbio::synth::{standard_benchmark, SynthDataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingSection {
    pub iou_min: f64,
    pub averaging: Averaging,
}

impl Default for MatchingSection {
    fn default() -> Self {
        MatchingSection {
            iou_min: MatchConfig::default().iou_min,
            averaging: Averaging::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub files_per_dataset: usize,
    pub snr_db: f64,
    pub distractors: usize,
    /// Explicit dataset list; the tone/chirp/pulse preset is used when empty.
    pub datasets: Vec<SynthDataset>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            seed: 2021,
            files_per_dataset: 10,
            snr_db: 20.0,
            distractors: 0,
            datasets: Vec::new(),
        }
    }
}

impl SynthSection {
    pub fn datasets(&self) -> Vec<SynthDataset> {
        if self.datasets.is_empty() {
            standard_benchmark(
                self.seed,
                self.files_per_dataset,
                self.snr_db,
                self.distractors,
            )
        } else {
            self.datasets.clone()
        }
    }
}

/// Every tunable of a run. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub few_shot: FewShotConfig,
    pub matching: MatchingSection,
    pub frontend: FrontendConfig,
    pub postprocess: PostprocessConfig,
    pub template: TemplateParams,
    pub proto: ProtoParams,
    pub synth: SynthSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            frontend: self.frontend,
            postprocess: self.postprocess,
            few_shot: self.few_shot,
        }
    }

    pub fn match_config(&self) -> Result<MatchConfig, CliError> {
        Ok(MatchConfig::new(self.matching.iou_min)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline().validate()?;
        self.match_config()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::internal(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> Result<String, CliError> {
        let canonical = serde_json::to_vec(self).map_err(|e| CliError::internal(e.to_string()))?;
        Ok(Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

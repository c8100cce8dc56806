use std::path::{Path, PathBuf};

use flowseg_core::association::AssocConfig;
use flowseg_core::evaluation::{LossWeights, Protocol};
use flowseg_core::flowio::FlowGapSet;
use flowseg_core::selection::SelectionConfig;
use flowseg_core::synth::CorruptionSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// Parameters for `flowseg synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_sequences: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    pub corruption: CorruptionSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_sequences: 2,
            seed: 0,
            height: 64,
            width: 96,
            num_frames: 12,
            num_objects: 3,
            corruption: CorruptionSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset root holding one folder per sequence.
    pub root: PathBuf,
    pub out: PathBuf,
    /// Empty means every sequence folder under `root`.
    pub sequences: Vec<String>,
    pub workers: usize,
    pub protocol: Protocol,
    pub gaps: FlowGapSet,
    pub selection: SelectionConfig,
    pub assoc: AssocConfig,
    pub losses: LossWeights,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            root: PathBuf::from("data"),
            out: PathBuf::from("out"),
            sequences: Vec::new(),
            workers: 1,
            protocol: Protocol::Sequence,
            gaps: FlowGapSet::default(),
            selection: SelectionConfig::default(),
            assoc: AssocConfig::default(),
            losses: LossWeights::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// The fields that change results; paths and worker count are excluded.
#[derive(Serialize)]
struct Semantic<'a> {
    protocol: Protocol,
    gaps: &'a FlowGapSet,
    selection: &'a SelectionConfig,
    assoc: &'a AssocConfig,
    losses: &'a LossWeights,
    synth: &'a SynthConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Input(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.workers == 0 {
            return Err(Failure::Input("workers must be at least 1".into()));
        }
        self.selection.validate()?;
        self.assoc.validate()?;
        self.losses.validate()?;
        self.synth.corruption.validate()?;
        Ok(())
    }

    pub fn require_root(&self) -> Result<(), Failure> {
        if !self.root.is_dir() {
            return Err(Failure::Input(format!("dataset root {} does not exist", self.root.display())));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the result-affecting fields.
    pub fn hash(&self) -> String {
        let sem = Semantic {
            protocol: self.protocol,
            gaps: &self.gaps,
            selection: &self.selection,
            assoc: &self.assoc,
            losses: &self.losses,
            synth: &self.synth,
        };
        let bytes = serde_json::to_vec(&sem).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Sequence names: the configured list, or every subfolder of `root`
    /// in sorted order.
    pub fn sequence_names(&self) -> Result<Vec<String>, Failure> {
        if !self.sequences.is_empty() {
            return Ok(self.sequences.clone());
        }
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| Failure::Input(format!("cannot list {}: {e}", self.root.display())))?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        Ok(names)
    }
}

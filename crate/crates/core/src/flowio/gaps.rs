use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_flo_file, FlowField};
use crate::error::{Error, Result};

/// Ordered, duplicate-free, nonzero frame gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i32>", into = "Vec<i32>")]
pub struct FlowGapSet(Vec<i32>);

impl FlowGapSet {
    pub fn new(gaps: Vec<i32>) -> Result<Self> {
        for (i, &g) in gaps.iter().enumerate() {
            if g == 0 {
                return Err(Error::Parameter("frame gap 0 is not allowed".into()));
            }
            if gaps[..i].contains(&g) {
                return Err(Error::Parameter(format!("duplicate frame gap {g}")));
            }
        }
        Ok(FlowGapSet(gaps))
    }

    /// `[3, -3, 6, -6]`, for slow-moving footage.
    pub fn slow_motion() -> Self {
        FlowGapSet(vec![3, -3, 6, -6])
    }

    pub fn gaps(&self) -> &[i32] {
        &self.0
    }
}

impl Default for FlowGapSet {
    fn default() -> Self {
        FlowGapSet(vec![1, -1, 2, -2])
    }
}

impl TryFrom<Vec<i32>> for FlowGapSet {
    type Error = Error;
    fn try_from(v: Vec<i32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FlowGapSet> for Vec<i32> {
    fn from(g: FlowGapSet) -> Self {
        g.0
    }
}

/// `<seq>/flow/gap_<g>/<frame:05>.flo`
pub fn flow_path(seq_dir: &Path, frame: usize, gap: i32) -> PathBuf {
    seq_dir.join("flow").join(format!("gap_{gap}")).join(format!("{frame:05}.flo"))
}

/// Anything that can hand out the flow field for `(frame, gap)`.
pub trait FlowSource: Sync {
    /// `Ok(None)` when the field does not exist; `Err` when it exists but
    /// cannot be used.
    fn flow(&self, frame: usize, gap: i32) -> Result<Option<FlowField>>;

    /// Where the field would live, for error messages.
    fn describe(&self, frame: usize, gap: i32) -> PathBuf {
        PathBuf::from("flow").join(format!("gap_{gap}")).join(format!("{frame:05}.flo"))
    }
}

/// In-memory flows keyed by `(source_frame, gap)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowStore {
    pub fields: BTreeMap<(usize, i32), FlowField>,
}

impl FlowStore {
    pub fn insert(&mut self, f: FlowField) {
        self.fields.insert((f.source_frame, f.gap), f);
    }

    pub fn get(&self, frame: usize, gap: i32) -> Option<&FlowField> {
        self.fields.get(&(frame, gap))
    }
}

impl FlowSource for FlowStore {
    fn flow(&self, frame: usize, gap: i32) -> Result<Option<FlowField>> {
        Ok(self.get(frame, gap).cloned())
    }
}

/// Reads fields lazily from a sequence directory.
#[derive(Debug, Clone)]
pub struct DirFlowSource {
    pub seq_dir: PathBuf,
}

impl DirFlowSource {
    pub fn new(seq_dir: impl Into<PathBuf>) -> Self {
        DirFlowSource { seq_dir: seq_dir.into() }
    }
}

impl FlowSource for DirFlowSource {
    fn flow(&self, frame: usize, gap: i32) -> Result<Option<FlowField>> {
        let path = flow_path(&self.seq_dir, frame, gap);
        if !path.exists() {
            return Ok(None);
        }
        read_flo_file(&path)
            .and_then(|f| f.with_meta(frame, gap))
            .map(Some)
            .map_err(|e| Error::missing(&path, e))
    }

    fn describe(&self, frame: usize, gap: i32) -> PathBuf {
        flow_path(&self.seq_dir, frame, gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapFlows {
    pub fields: Vec<FlowField>,
    /// Requested gaps whose target frame lies outside the sequence.
    pub unavailable: Vec<i32>,
}

/// Loads every requested gap at frame `t` of a `num_frames`-long sequence.
pub fn load_gap_flows(seq_dir: &Path, t: usize, gaps: &FlowGapSet, num_frames: usize) -> Result<GapFlows> {
    let source = DirFlowSource::new(seq_dir);
    let mut out = GapFlows {
        fields: Vec::new(),
        unavailable: Vec::new(),
    };
    for &g in gaps.gaps() {
        let target = t as i64 + g as i64;
        if target < 0 || target >= num_frames as i64 {
            log::info!("gap {g} unavailable at frame {t} of {num_frames}");
            out.unavailable.push(g);
            continue;
        }
        match source.flow(t, g)? {
            Some(f) => out.fields.push(f),
            None => return Err(Error::missing(flow_path(seq_dir, t, g), "file not found")),
        }
    }
    Ok(out)
}

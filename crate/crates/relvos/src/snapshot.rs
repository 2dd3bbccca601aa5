//! Session snapshots: everything needed to rebuild a session by replay plus
//! the published results used to verify the rebuild.

use std::fs;
use std::path::{Path, PathBuf};

use relvos_core::synthetic::{generate, SyntheticConfig};
use relvos_core::{AnnotationSet, EngineConfig, LabelImage, RgbFrame, RoundRecord, SessionState};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_sequence, resolve};
use crate::error::{IoError, Result};
use crate::rle::RleMask;

pub const SNAPSHOT_FORMAT: &str = "relvos-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Where a session's frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VideoSource {
    /// A dataset sequence, by name under the data root or by path.
    Dataset { sequence: String },
    Synthetic { config: SyntheticConfig },
}

impl VideoSource {
    /// Frames and, when available, ground truth.
    pub fn load(&self, data_root: Option<&Path>) -> Result<(Vec<RgbFrame>, Option<Vec<LabelImage>>)> {
        match self {
            VideoSource::Dataset { sequence } => {
                let seq = load_sequence(&resolve(sequence, data_root)?)?;
                Ok((seq.frames, seq.masks))
            }
            VideoSource::Synthetic { config } => {
                let v = generate(config)?;
                Ok((v.frames, Some(v.masks)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub format: String,
    pub version: u32,
    pub source: VideoSource,
    pub num_objects: u8,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub config: EngineConfig,
    /// Every submitted annotation set, in round order.
    pub annotations: Vec<AnnotationSet>,
    /// Final masks, one per frame. Empty before the first round.
    pub masks: Vec<RleMask>,
    pub r_scores: Vec<f64>,
    pub log: Vec<RoundRecord>,
}

impl SessionSnapshot {
    pub fn capture(session: &SessionState, source: VideoSource) -> Result<Self> {
        let masks = if session.round() == 0 {
            Vec::new()
        } else {
            (0..session.num_frames())
                .map(|t| session.mask(t).map(|m| RleMask::encode(&m)))
                .collect::<relvos_core::Result<_>>()?
        };
        let shape = session.grid_shape();
        Ok(Self {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            source,
            num_objects: session.num_objects(),
            num_frames: session.num_frames(),
            width: shape.frame_width,
            height: shape.frame_height,
            config: session.config().clone(),
            annotations: session.annotation_history().to_vec(),
            masks,
            r_scores: if session.round() == 0 { Vec::new() } else { session.r_scores().to_vec() },
            log: session.log().to_vec(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(text).map_err(|e| IoError::Snapshot(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(IoError::Snapshot(format!("not a snapshot (format {:?})", snap.format)));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(IoError::Snapshot(format!(
                "unsupported version {} (this build reads {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
        fs::write(path, self.to_json() + "\n").map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn decoded_masks(&self) -> Result<Vec<LabelImage>> {
        self.masks.iter().map(RleMask::decode).collect()
    }

    /// Rebuilds the session from `frames` by replaying every round, calling
    /// `on_round` after each. Fails if the rebuilt masks or R-scores differ
    /// from the recorded ones.
    pub fn replay(
        &self,
        frames: Vec<RgbFrame>,
        mut on_round: impl FnMut(&SessionState) -> Result<()>,
    ) -> Result<SessionState> {
        if frames.len() != self.num_frames {
            return Err(IoError::Snapshot(format!(
                "snapshot has {} frames, the video {}",
                self.num_frames,
                frames.len()
            )));
        }
        let mut session = SessionState::new(frames, self.num_objects, self.config.clone())?;
        for a in &self.annotations {
            session.run_round(AnnotationSet {
                round_index: 0,
                ..a.clone()
            })?;
            on_round(&session)?;
        }
        self.verify(&session)?;
        Ok(session)
    }

    pub fn restore(&self, data_root: Option<&Path>) -> Result<SessionState> {
        let (frames, _) = self.source.load(data_root)?;
        self.replay(frames, |_| Ok(()))
    }

    fn verify(&self, session: &SessionState) -> Result<()> {
        for (t, rle) in self.masks.iter().enumerate() {
            if rle.decode()? != session.mask(t)? {
                return Err(IoError::Snapshot(format!("replayed mask of frame {t} differs from the recorded one")));
            }
        }
        for (t, (&a, &b)) in self.r_scores.iter().zip(session.r_scores()).enumerate() {
            if (a - b).abs() > 1e-12 {
                return Err(IoError::Snapshot(format!("replayed R-score of frame {t} differs: {a} vs {b}")));
            }
        }
        Ok(())
    }
}

/// `<dir>/round_NN.json`.
pub fn round_snapshot_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("round_{round:02}.json"))
}

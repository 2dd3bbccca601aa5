//! Robot-driven multi-round simulation and its metric report.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::annotation::AnnotationSet;
use crate::error::{Error, Result};
use crate::image::LabelImage;
use crate::robot::{frame_scores, RobotConfig, RobotUser, Selection};
use crate::session::{GuidanceMode, GuidanceResult, SessionState};

/// What the simulation needs from a segmentation engine.
pub trait InteractiveSegmenter {
    fn num_frames(&self) -> usize;
    fn num_objects(&self) -> u8;
    fn submit(&mut self, annotations: AnnotationSet) -> Result<()>;
    fn mask(&self, t: usize) -> Result<LabelImage>;
    fn annotated_frames(&self) -> Vec<usize>;
    /// `None` when the engine offers no guidance.
    fn guidance(&self, mode: GuidanceMode) -> Option<GuidanceResult>;
}

impl InteractiveSegmenter for SessionState {
    fn num_frames(&self) -> usize {
        SessionState::num_frames(self)
    }

    fn num_objects(&self) -> u8 {
        SessionState::num_objects(self)
    }

    fn submit(&mut self, annotations: AnnotationSet) -> Result<()> {
        self.run_round(annotations).map(|_| ())
    }

    fn mask(&self, t: usize) -> Result<LabelImage> {
        SessionState::mask(self, t)
    }

    fn annotated_frames(&self) -> Vec<usize> {
        SessionState::annotated_frames(self)
    }

    fn guidance(&self, mode: GuidanceMode) -> Option<GuidanceResult> {
        self.guide(mode).ok()
    }
}

/// Echoes the ground truth for every frame once any round has been submitted.
#[derive(Debug, Clone)]
pub struct GtEchoSegmenter {
    pub gt: Vec<LabelImage>,
    pub num_objects: u8,
    annotated: Vec<usize>,
}

impl GtEchoSegmenter {
    pub fn new(gt: Vec<LabelImage>, num_objects: u8) -> Self {
        Self {
            gt,
            num_objects,
            annotated: Vec::new(),
        }
    }
}

impl InteractiveSegmenter for GtEchoSegmenter {
    fn num_frames(&self) -> usize {
        self.gt.len()
    }
    fn num_objects(&self) -> u8 {
        self.num_objects
    }
    fn submit(&mut self, a: AnnotationSet) -> Result<()> {
        if !self.annotated.contains(&a.frame_index) {
            self.annotated.push(a.frame_index);
        }
        Ok(())
    }
    fn mask(&self, t: usize) -> Result<LabelImage> {
        Ok(self.gt[t].clone())
    }
    fn annotated_frames(&self) -> Vec<usize> {
        self.annotated.clone()
    }
    fn guidance(&self, _: GuidanceMode) -> Option<GuidanceResult> {
        None
    }
}

/// Predicts background everywhere.
#[derive(Debug, Clone)]
pub struct EmptySegmenter {
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub num_objects: u8,
    annotated: Vec<usize>,
}

impl EmptySegmenter {
    pub fn new(width: usize, height: usize, num_frames: usize, num_objects: u8) -> Self {
        Self {
            width,
            height,
            num_frames,
            num_objects,
            annotated: Vec::new(),
        }
    }
}

impl InteractiveSegmenter for EmptySegmenter {
    fn num_frames(&self) -> usize {
        self.num_frames
    }
    fn num_objects(&self) -> u8 {
        self.num_objects
    }
    fn submit(&mut self, a: AnnotationSet) -> Result<()> {
        if !self.annotated.contains(&a.frame_index) {
            self.annotated.push(a.frame_index);
        }
        Ok(())
    }
    fn mask(&self, _: usize) -> Result<LabelImage> {
        Ok(LabelImage::empty(self.width, self.height))
    }
    fn annotated_frames(&self) -> Vec<usize> {
        self.annotated.clone()
    }
    fn guidance(&self, _: GuidanceMode) -> Option<GuidanceResult> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SimulationConfig {
    pub rounds: usize,
    /// Stop early once the round mean J&F reaches this value.
    pub stop_at: Option<f64>,
    pub robot: RobotConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            rounds: 8,
            stop_at: None,
            robot: RobotConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectMetric {
    pub round: usize,
    pub frame: usize,
    pub object: u8,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundSummary {
    pub round: usize,
    pub frame: usize,
    pub rule: String,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub records: Vec<ObjectMetric>,
    pub rounds: Vec<RoundSummary>,
    pub auc: f64,
    pub annotations: Vec<AnnotationSet>,
}

impl MetricReport {
    pub fn selection_trace(&self) -> Vec<Selection> {
        self.rounds
            .iter()
            .map(|r| Selection {
                round: r.round,
                frame: r.frame,
                rule: r.rule.clone(),
            })
            .collect()
    }

    pub fn final_round(&self) -> Option<&RoundSummary> {
        self.rounds.last()
    }
}

/// Trapezoid area under `values` on a round axis normalized to `[0, 1]`.
/// A single round scores its own value.
pub fn round_auc(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let w = 1.0 / (n - 1) as f64;
            values.windows(2).map(|p| (p[0] + p[1]) / 2.0 * w).sum()
        }
    }
}

/// Drives `segmenter` with a robot user over up to `config.rounds` rounds.
pub fn run_simulation<S: InteractiveSegmenter + ?Sized>(
    segmenter: &mut S,
    gt: &[LabelImage],
    config: &SimulationConfig,
) -> Result<MetricReport> {
    if gt.len() != segmenter.num_frames() {
        return Err(Error::InvalidInput(alloc::format!(
            "ground truth has {} frames, the video {}",
            gt.len(),
            segmenter.num_frames()
        )));
    }
    if config.rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be >= 1".into()));
    }
    let k = segmenter.num_objects();
    let mut robot = RobotUser::new(gt.to_vec(), k, config.robot.clone())?;
    let tol = robot.tolerance();
    let mut report = MetricReport {
        records: Vec::new(),
        rounds: Vec::new(),
        auc: 0.0,
        annotations: Vec::new(),
    };
    let mut masks: Vec<LabelImage> = Vec::new();
    for round in 1..=config.rounds {
        let (annotation, rule) = if round == 1 {
            (robot.initial_annotation(), "start".to_string())
        } else {
            let guidance = config.robot.mode.guidance().and_then(|m| segmenter.guidance(m));
            let (t, rule) = robot.select_frame(&masks, &segmenter.annotated_frames(), guidance.as_ref())?;
            (robot.corrective_annotation(t, &masks[t]), rule.to_string())
        };
        let frame = annotation.frame_index;
        report.annotations.push(AnnotationSet {
            round_index: round,
            ..annotation.clone()
        });
        segmenter.submit(annotation)?;
        masks = (0..gt.len()).map(|t| segmenter.mask(t)).collect::<Result<_>>()?;
        let (mut sj, mut sf, mut n) = (0.0, 0.0, 0usize);
        for (t, (m, g)) in masks.iter().zip(gt).enumerate() {
            let (_, pairs) = frame_scores(m, g, k, tol)?;
            for (obj, (j, f)) in (1..=k).zip(pairs) {
                report.records.push(ObjectMetric {
                    round,
                    frame: t,
                    object: obj,
                    j,
                    f,
                });
                sj += j;
                sf += f;
                n += 1;
            }
        }
        let (mean_j, mean_f) = (sj / n as f64, sf / n as f64);
        let mean_jf = (mean_j + mean_f) / 2.0;
        report.rounds.push(RoundSummary {
            round,
            frame,
            rule,
            mean_j,
            mean_f,
            mean_jf,
        });
        if config.stop_at.is_some_and(|s| mean_jf >= s) {
            break;
        }
    }
    let curve: Vec<f64> = report.rounds.iter().map(|r| r.mean_jf).collect();
    report.auc = round_auc(&curve);
    Ok(report)
}

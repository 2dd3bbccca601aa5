//! Scripted annotator that picks frames and places clicks from ground truth.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::annotation::{AnnotationSet, Mark};
use crate::error::{Error, Result};
use crate::image::LabelImage;
use crate::metrics::{contour_accuracy, default_tolerance, largest_component, region_similarity};
use crate::rng::{derive_seed, SplitMix64};
use crate::session::{GuidanceMode, GuidanceResult};

/// How the robot picks the frame to annotate from round 2 on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SelectionMode {
    /// Worst mean J&F over all frames.
    GtWorst,
    /// The engine's RS1 frame.
    Rs1,
    /// The worst (by ground truth) of the engine's RS4 candidates.
    Rs4Gt,
    /// A seeded uniform pick among frames not yet annotated.
    Random,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::GtWorst => "gt-worst",
            SelectionMode::Rs1 => "rs1",
            SelectionMode::Rs4Gt => "rs4-gt",
            SelectionMode::Random => "random",
        }
    }

    /// Guidance the mode consumes, if any.
    pub fn guidance(self) -> Option<GuidanceMode> {
        match self {
            SelectionMode::Rs1 => Some(GuidanceMode::Rs1),
            SelectionMode::Rs4Gt => Some(GuidanceMode::Rs4),
            _ => None,
        }
    }
}

impl core::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt-worst" => Ok(SelectionMode::GtWorst),
            "rs1" => Ok(SelectionMode::Rs1),
            "rs4-gt" => Ok(SelectionMode::Rs4Gt),
            "random" => Ok(SelectionMode::Random),
            other => Err(Error::InvalidInput(alloc::format!(
                "unknown selection mode {other:?} (expected gt-worst, rs1, rs4-gt or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RobotConfig {
    pub mode: SelectionMode,
    /// Positive clicks per object in round 1.
    pub initial_clicks: usize,
    /// Clicks in the largest false-positive region per object, later rounds.
    pub false_positive_clicks: usize,
    /// Clicks in the largest false-negative region per object, later rounds.
    pub false_negative_clicks: usize,
    pub start_frame: usize,
    /// Boundary tolerance in pixels; `None` means 0.8% of the diagonal.
    pub tolerance: Option<usize>,
    pub seed: u64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            mode: SelectionMode::GtWorst,
            initial_clicks: 10,
            false_positive_clicks: 5,
            false_negative_clicks: 5,
            start_frame: 0,
            tolerance: None,
            seed: 0,
        }
    }
}

/// Per-frame mean over objects of `(J + F) / 2`, plus the per-object pairs.
pub fn frame_scores(pred: &LabelImage, gt: &LabelImage, num_objects: u8, tolerance: usize) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut pairs = Vec::with_capacity(num_objects as usize);
    for k in 1..=num_objects {
        pairs.push((region_similarity(pred, gt, k)?, contour_accuracy(pred, gt, k, tolerance)?));
    }
    let mean = pairs.iter().map(|(j, f)| (j + f) / 2.0).sum::<f64>() / pairs.len().max(1) as f64;
    Ok((mean, pairs))
}

/// Pixel of `pixels` nearest to their centroid; ties go to the first in raster order.
fn nearest_to_centroid(pixels: &[usize], width: usize) -> usize {
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|&i| (i % width) as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|&i| (i / width) as f64).sum::<f64>() / n;
    let d = |i: usize| {
        let (x, y) = ((i % width) as f64, (i / width) as f64);
        (x - cx) * (x - cx) + (y - cy) * (y - cy)
    };
    pixels
        .iter()
        .copied()
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if d(b) <= d(i) => Some(b),
            _ => Some(i),
        })
        .expect("non-empty pixel set")
}

/// Which frame the robot annotated and why.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    pub round: usize,
    pub frame: usize,
    pub rule: String,
}

#[derive(Debug, Clone)]
pub struct RobotUser {
    config: RobotConfig,
    gt: Vec<LabelImage>,
    num_objects: u8,
    rng: SplitMix64,
    marks: BTreeMap<usize, Vec<Mark>>,
}

impl RobotUser {
    pub fn new(gt: Vec<LabelImage>, num_objects: u8, config: RobotConfig) -> Result<Self> {
        if gt.is_empty() {
            return Err(Error::InvalidInput("the robot user needs ground truth".into()));
        }
        if config.start_frame >= gt.len() {
            return Err(Error::FrameOutOfRange {
                frame: config.start_frame,
                len: gt.len(),
            });
        }
        let rng = SplitMix64::new(derive_seed(config.seed, "robot"));
        Ok(Self {
            config,
            gt,
            num_objects,
            rng,
            marks: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    pub fn ground_truth(&self) -> &[LabelImage] {
        &self.gt
    }

    pub fn tolerance(&self) -> usize {
        let g = &self.gt[0];
        self.config.tolerance.unwrap_or_else(|| default_tolerance(g.width, g.height))
    }

    /// Picks the frame for round `round >= 2`.
    pub fn select_frame(&mut self, masks: &[LabelImage], annotated: &[usize], guidance: Option<&GuidanceResult>) -> Result<(usize, &'static str)> {
        let tol = self.tolerance();
        let mut scores = Vec::with_capacity(masks.len());
        for (m, g) in masks.iter().zip(&self.gt) {
            scores.push(frame_scores(m, g, self.num_objects, tol)?.0);
        }
        let worst_of = |frames: &mut dyn Iterator<Item = usize>| {
            frames.fold(None, |best: Option<usize>, t| match best {
                Some(b) if scores[b] <= scores[t] => Some(b),
                _ => Some(t),
            })
        };
        let gt_worst = worst_of(&mut (0..masks.len())).ok_or(Error::NoSources)?;
        let pick = match self.config.mode {
            SelectionMode::GtWorst => (gt_worst, "gt-worst"),
            SelectionMode::Random => {
                let free: Vec<usize> = (0..masks.len()).filter(|t| !annotated.contains(t)).collect();
                if free.is_empty() {
                    (gt_worst, "gt-worst")
                } else {
                    (free[self.rng.below(free.len())], "random")
                }
            }
            SelectionMode::Rs1 => match guidance.and_then(|g| g.candidates.first()) {
                Some(c) => (c.frame, "rs1"),
                None => (gt_worst, "gt-worst"),
            },
            SelectionMode::Rs4Gt => match guidance.map(|g| g.candidates.iter().map(|c| c.frame)) {
                Some(mut it) => match worst_of(&mut it) {
                    Some(t) => (t, "rs4-gt"),
                    None => (gt_worst, "gt-worst"),
                },
                None => (gt_worst, "gt-worst"),
            },
        };
        Ok(pick)
    }

    fn sample(&mut self, pixels: &[usize], k: usize) -> Vec<usize> {
        self.rng
            .sample_distinct(pixels.len(), k.min(pixels.len()))
            .into_iter()
            .map(|i| pixels[i])
            .collect()
    }

    /// Round-1 clicks: uniform positives inside each object on the start frame.
    pub fn initial_annotation(&mut self) -> AnnotationSet {
        let t = self.config.start_frame;
        let gt = self.gt[t].clone();
        let w = gt.width;
        let mut marks = Vec::new();
        for k in 1..=self.num_objects {
            let pixels: Vec<usize> = (0..gt.data.len()).filter(|&i| gt.data[i] == k).collect();
            for i in self.sample(&pixels, self.config.initial_clicks) {
                marks.push(Mark::new(i % w, i / w, k));
            }
        }
        if marks.is_empty() {
            let i = (gt.height / 2) * w + w / 2;
            marks.push(Mark::new(i % w, i / w, gt.data[i]));
        }
        self.record(t, marks)
    }

    /// Corrective clicks on frame `t` given the current prediction there.
    pub fn corrective_annotation(&mut self, t: usize, pred: &LabelImage) -> AnnotationSet {
        let gt = self.gt[t].clone();
        let (w, h) = (gt.width, gt.height);
        let mut marks = Vec::new();
        for k in 1..=self.num_objects {
            let fp: Vec<bool> = pred.data.iter().zip(&gt.data).map(|(&p, &g)| p == k && g != k).collect();
            let fn_: Vec<bool> = pred.data.iter().zip(&gt.data).map(|(&p, &g)| p != k && g == k).collect();
            if let Some(comp) = largest_component(&fp, w, h) {
                for i in self.sample(&comp, self.config.false_positive_clicks) {
                    marks.push(Mark::new(i % w, i / w, gt.data[i]));
                }
            }
            match largest_component(&fn_, w, h) {
                Some(comp) => {
                    for i in self.sample(&comp, self.config.false_negative_clicks) {
                        marks.push(Mark::new(i % w, i / w, k));
                    }
                }
                None => {
                    let pixels: Vec<usize> = (0..gt.data.len()).filter(|&i| gt.data[i] == k).collect();
                    if !pixels.is_empty() {
                        let i = nearest_to_centroid(&pixels, w);
                        marks.push(Mark::new(i % w, i / w, k));
                    }
                }
            }
        }
        if marks.is_empty() {
            let i = (h / 2) * w + w / 2;
            marks.push(Mark::new(i % w, i / w, gt.data[i]));
        }
        self.record(t, marks)
    }

    /// Merges new marks with earlier marks on the same frame.
    fn record(&mut self, t: usize, marks: Vec<Mark>) -> AnnotationSet {
        let all = self.marks.entry(t).or_default();
        for m in marks {
            if !all.contains(&m) {
                all.push(m);
            }
        }
        AnnotationSet::new(t, all.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_components;
    use crate::session::Candidate;

    fn blob(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize, v: u8) -> LabelImage {
        let mut m = LabelImage::empty(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.data[y * w + x] = v;
            }
        }
        m
    }

    #[test]
    fn initial_clicks_fall_inside_objects() {
        let gt = blob(20, 20, 4, 4, 10, 10, 1);
        let mut robot = RobotUser::new(vec![gt.clone()], 1, RobotConfig::default()).unwrap();
        let a = robot.initial_annotation();
        assert_eq!(a.marks.len(), 10);
        assert!(a.marks.iter().all(|m| gt.get(m.x, m.y) == 1 && m.object_id == 1));
        let mut set = a.marks.clone();
        set.dedup();
        assert_eq!(set.len(), 10);
    }

    #[test]
    fn gt_worst_picks_the_broken_frame() {
        let gt = blob(16, 16, 2, 2, 8, 8, 1);
        let masks = vec![gt.clone(), LabelImage::empty(16, 16), gt.clone()];
        let mut robot = RobotUser::new(vec![gt.clone(); 3], 1, RobotConfig::default()).unwrap();
        assert_eq!(robot.select_frame(&masks, &[0], None).unwrap(), (1, "gt-worst"));
    }

    #[test]
    fn perfect_prediction_ties_to_first_frame_with_confirming_click() {
        let gt = blob(16, 16, 2, 2, 9, 9, 1);
        let masks = vec![gt.clone(); 3];
        let mut robot = RobotUser::new(vec![gt.clone(); 3], 1, RobotConfig::default()).unwrap();
        assert_eq!(robot.select_frame(&masks, &[], None).unwrap().0, 0);
        let a = robot.corrective_annotation(0, &gt);
        assert_eq!(a.marks, vec![Mark::new(5, 5, 1)]);
    }

    #[test]
    fn false_positive_clicks_land_in_the_largest_blob() {
        let gt = blob(30, 30, 0, 0, 5, 5, 1);
        let mut pred = gt.clone();
        for y in 10..20 {
            for x in 10..18 {
                pred.data[y * 30 + x] = 1;
            }
        }
        pred.data[25 * 30 + 25] = 1;
        let mut robot = RobotUser::new(vec![gt.clone()], 1, RobotConfig::default()).unwrap();
        let a = robot.corrective_annotation(0, &pred);
        let fp: Vec<bool> = pred.data.iter().zip(&gt.data).map(|(&p, &g)| p == 1 && g != 1).collect();
        let comps = connected_components(&fp, 30, 30);
        let biggest = comps.iter().max_by_key(|c| c.len()).unwrap();
        let negatives: Vec<&Mark> = a.marks.iter().filter(|m| m.object_id == 0).collect();
        assert_eq!(negatives.len(), 5);
        assert!(negatives.iter().all(|m| biggest.contains(&(m.y * 30 + m.x))));
    }

    #[test]
    fn rs4_gt_picks_worst_candidate() {
        let gt = blob(16, 16, 2, 2, 8, 8, 1);
        let half = blob(16, 16, 2, 2, 5, 8, 1);
        let masks = vec![gt.clone(), half, LabelImage::empty(16, 16), gt.clone()];
        let cfg = RobotConfig {
            mode: SelectionMode::Rs4Gt,
            ..RobotConfig::default()
        };
        let mut robot = RobotUser::new(vec![gt; 4], 1, cfg).unwrap();
        let guidance = GuidanceResult {
            mode: GuidanceMode::Rs4,
            candidates: vec![Candidate { frame: 1, r_score: 0.1 }, Candidate { frame: 3, r_score: 0.2 }],
        };
        assert_eq!(robot.select_frame(&masks, &[0], Some(&guidance)).unwrap(), (1, "rs4-gt"));
    }

    #[test]
    fn repeated_frames_accumulate_marks() {
        let gt = blob(16, 16, 2, 2, 8, 8, 1);
        let mut robot = RobotUser::new(vec![gt.clone()], 1, RobotConfig::default()).unwrap();
        let first = robot.initial_annotation();
        let second = robot.corrective_annotation(0, &LabelImage::empty(16, 16));
        assert!(second.marks.len() > first.marks.len());
        assert!(first.marks.iter().all(|m| second.marks.contains(m)));
    }
}

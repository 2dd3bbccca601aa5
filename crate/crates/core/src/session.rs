//! Round-based interactive segmentation session.
//!
//! Each round takes the marks on one frame `a_N`, refits the per-object heads,
//! segments `a_N`, propagates forward and backward until another annotated
//! frame (or the sequence end) is met, and recomputes the R-score of every
//! frame. R-scores drive RS1/RS4 guidance for the next round.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::annotation::AnnotationSet;
use crate::attention::{
    attention_maps, interfuse, overall_reliability, reliability, transfer, transition_from_embeddings, TransitionCache,
    TransitionMatrix,
};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureEncoder, FrameEncoder, TransformSet};
use crate::grid::{FeatureGrid, GridShape, ReliabilityMap};
use crate::head::{head_input, soft_aggregate, FitStats, LabelField, LinearHead};
use crate::image::{LabelImage, RgbFrame};
use crate::linalg::Matrix;
use crate::propagation::{neighbor_label_feature, overlap_from_parts, similarity_from_embeddings, NeighborMixers};
use crate::saliency::{extract_object_feature, sparse_to_dense, ObjectProjector, SaliencyParams};

/// Frames touched by one round.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundPlan {
    pub round: usize,
    pub annotated_frame: usize,
    /// `a_N + 1 ..` up to the next annotated frame (exclusive), ascending.
    pub forward: Vec<usize>,
    /// `a_N - 1 ..` down to the previous annotated frame (exclusive), descending.
    pub backward: Vec<usize>,
}

impl RoundPlan {
    /// `others` are the annotated frames other than `annotated_frame`.
    pub fn new(round: usize, annotated_frame: usize, others: &[usize], num_frames: usize) -> Self {
        let stop_fwd = others
            .iter()
            .copied()
            .filter(|&f| f > annotated_frame)
            .min()
            .unwrap_or(num_frames);
        let stop_bwd = others.iter().copied().filter(|&f| f < annotated_frame).max();
        let start_bwd = stop_bwd.map_or(0, |f| f + 1);
        Self {
            round,
            annotated_frame,
            forward: (annotated_frame + 1..stop_fwd).collect(),
            backward: (start_bwd..annotated_frame).rev().collect(),
        }
    }

    pub fn contains(&self, t: usize) -> bool {
        t == self.annotated_frame || self.forward.contains(&t) || self.backward.contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GuidanceMode {
    Rs1,
    Rs4,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Rs1 => "rs1",
            GuidanceMode::Rs4 => "rs4",
        }
    }
}

impl core::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs1" | "RS1" => Ok(GuidanceMode::Rs1),
            "rs4" | "RS4" => Ok(GuidanceMode::Rs4),
            other => Err(Error::InvalidInput(alloc::format!("unknown guidance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Candidate {
    pub frame: usize,
    pub r_score: f64,
}

/// Guided frames, ordered ascending by R-score. Empty when every frame is annotated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GuidanceResult {
    pub mode: GuidanceMode,
    pub candidates: Vec<Candidate>,
}

/// Non-annotated frames sorted by `(r, index)`.
fn ranked(scores: &[f64], annotated: &[usize]) -> Vec<usize> {
    let mut frames: Vec<usize> = (0..scores.len()).filter(|t| !annotated.contains(t)).collect();
    frames.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    frames
}

/// Lowest-score non-annotated frame; ties go to the lower index.
pub fn select_rs1(scores: &[f64], annotated: &[usize]) -> Option<usize> {
    ranked(scores, annotated).first().copied()
}

/// Greedy pick of up to `count` lowest-score non-annotated frames with
/// pairwise distance at least `min_gap`, in ascending score order.
pub fn select_rs4(scores: &[f64], annotated: &[usize], count: usize, min_gap: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for t in ranked(scores, annotated) {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|&p| p.abs_diff(t) >= min_gap) {
            picked.push(t);
        }
    }
    picked
}

/// Most frequent label among each cell's pixels; ties go to the lower label.
pub fn majority_labels(shape: &GridShape, mask: &LabelImage) -> Vec<u8> {
    let mut counts = [0usize; 256];
    (0..shape.hw())
        .map(|p| {
            counts.iter_mut().for_each(|c| *c = 0);
            let (xs, ys) = shape.pixel_bounds(p);
            for y in ys {
                for x in xs.clone() {
                    counts[mask.data[y * mask.width + x] as usize] += 1;
                }
            }
            let mut best = 0;
            for (label, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = label;
                }
            }
            best as u8
        })
        .collect()
}

/// `alpha * mean(R_t) + (1 - alpha) * mean(R_t over object cells)`.
/// Without object cells the whole-frame mean is returned.
pub fn r_score(overall: &ReliabilityMap, cell_labels: &[u8], alpha: f64) -> f64 {
    let frame_mean = overall.mean();
    let (sum, n) = overall
        .values
        .iter()
        .zip(cell_labels)
        .filter(|(_, &l)| l != 0)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        return frame_mean;
    }
    (alpha * frame_mean + (1.0 - alpha) * sum / n as f64).clamp(0.0, 1.0)
}

/// One row of the round log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub annotated_frame: usize,
    pub num_marks: usize,
    pub annotated_frames: Vec<usize>,
    pub plan: RoundPlan,
    /// Frames in the order they were segmented this round.
    pub segmented: Vec<usize>,
    /// `(target, neighbor)` label reads in processing order.
    pub reads: Vec<(usize, usize)>,
    pub head_stats: Vec<FitStats>,
    pub r_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Precomputed {
    features: FeatureGrid,
    affinity: FeatureGrid,
    reliability: FeatureGrid,
    similarity: FeatureGrid,
    neighbor: FeatureGrid,
}

/// All state of one interactive session. Single writer: [`SessionState::run_round`]
/// takes `&mut self`.
#[derive(Debug, Clone)]
pub struct SessionState {
    config: EngineConfig,
    num_objects: u8,
    frames: Vec<RgbFrame>,
    shape: GridShape,
    pre: Vec<Precomputed>,
    projector: ObjectProjector,
    mixers: NeighborMixers,
    /// Current annotation of each annotated frame.
    annotations: BTreeMap<usize, AnnotationSet>,
    /// Every submitted set, in round order.
    history: Vec<AnnotationSet>,
    saliency_grids: BTreeMap<(usize, u8), Vec<f64>>,
    object_features: BTreeMap<(usize, u8), FeatureGrid>,
    heads: Vec<LinearHead>,
    labels: Vec<Option<LabelField>>,
    overall: Vec<Option<ReliabilityMap>>,
    r_scores: Vec<f64>,
    log: Vec<RoundRecord>,
    cache: TransitionCache,
    pair_reliability: BTreeMap<(usize, usize), ReliabilityMap>,
}

fn transition(
    cache: &mut TransitionCache,
    pre: &[Precomputed],
    temperature_scaling: bool,
    source: usize,
    target: usize,
) -> Result<Arc<TransitionMatrix>> {
    cache.get_or_try_insert(source, target, || {
        transition_from_embeddings(&pre[target].affinity, &pre[source].affinity, temperature_scaling)
    })
}

impl SessionState {
    pub fn new(frames: Vec<RgbFrame>, num_objects: u8, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        if num_objects == 0 {
            return Err(Error::InvalidInput("a session needs at least one object".into()));
        }
        let first = frames.first().ok_or_else(|| Error::InvalidInput("a session needs at least one frame".into()))?;
        let (w, h) = (first.width, first.height);
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| (f.width, f.height) != (w, h)) {
            return Err(Error::InvalidInput(alloc::format!(
                "frame {t} is {}x{}, expected {w}x{h}",
                f.width,
                f.height
            )));
        }
        let shape = GridShape::new(w, h, config.stride)?;
        let encoder = FrameEncoder::new(&config);
        let transforms = TransformSet::seeded(&config);
        let pre = frames
            .iter()
            .map(|f| {
                let features = encoder.encode(f)?;
                Ok(Precomputed {
                    affinity: transforms.affinity.apply(&features)?,
                    reliability: transforms.reliability.apply(&features)?,
                    similarity: transforms.similarity.apply(&features)?,
                    neighbor: transforms.neighbor.apply(&features)?,
                    features,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = frames.len();
        Ok(Self {
            projector: ObjectProjector::seeded(&config),
            mixers: NeighborMixers::seeded(&config),
            cache: TransitionCache::new(config.transition_cache_capacity),
            config,
            num_objects,
            frames,
            shape,
            pre,
            annotations: BTreeMap::new(),
            history: Vec::new(),
            saliency_grids: BTreeMap::new(),
            object_features: BTreeMap::new(),
            heads: Vec::new(),
            labels: vec![None; t],
            overall: vec![None; t],
            r_scores: vec![0.0; t],
            log: Vec::new(),
            pair_reliability: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_objects(&self) -> u8 {
        self.num_objects
    }

    pub fn frame(&self, t: usize) -> Option<&RgbFrame> {
        self.frames.get(t)
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn grid_shape(&self) -> GridShape {
        self.shape
    }

    pub fn round(&self) -> usize {
        self.log.len()
    }

    /// Annotated frames in ascending index order.
    pub fn annotated_frames(&self) -> Vec<usize> {
        self.annotations.keys().copied().collect()
    }

    pub fn annotation_history(&self) -> &[AnnotationSet] {
        &self.history
    }

    pub fn label_field(&self, t: usize) -> Option<&LabelField> {
        self.labels.get(t).and_then(Option::as_ref)
    }

    /// Current mask of frame `t`; all background before the first round.
    pub fn mask(&self, t: usize) -> Result<LabelImage> {
        let len = self.frames.len();
        let slot = self.labels.get(t).ok_or(Error::FrameOutOfRange { frame: t, len })?;
        Ok(slot.as_ref().map_or_else(|| LabelImage::empty(self.shape.frame_width, self.shape.frame_height), |f| f.mask.clone()))
    }

    pub fn overall_reliability(&self, t: usize) -> Option<&ReliabilityMap> {
        self.overall.get(t).and_then(Option::as_ref)
    }

    pub fn r_scores(&self) -> &[f64] {
        &self.r_scores
    }

    pub fn log(&self) -> &[RoundRecord] {
        &self.log
    }

    pub fn heads(&self) -> &[LinearHead] {
        &self.heads
    }

    pub fn cache_stats(&self) -> (u64, u64) {
        self.cache.stats()
    }

    fn transition(&mut self, source: usize, target: usize) -> Result<Arc<TransitionMatrix>> {
        transition(&mut self.cache, &self.pre, self.config.temperature_scaling, source, target)
    }

    /// `R[t|a]`, cached per `(a, t)`.
    fn pair_reliability(&mut self, source: usize, target: usize) -> Result<ReliabilityMap> {
        if let Some(r) = self.pair_reliability.get(&(source, target)) {
            return Ok(r.clone());
        }
        let a_st = self.transition(source, target)?;
        let a_tt = self.transition(target, target)?;
        let transferred = transfer(&a_st, &self.pre[source].reliability)?;
        let self_transferred = transfer(&a_tt, &self.pre[target].reliability)?;
        let r = reliability(&transferred, &self_transferred, self.config.epsilon)?;
        self.pair_reliability.insert((source, target), r.clone());
        Ok(r)
    }

    /// Interfused feature `G_t` of every object from `sources`, plus `R_t`.
    fn interfused(&mut self, target: usize, sources: &[usize]) -> Result<(Vec<FeatureGrid>, ReliabilityMap)> {
        let mut rels = Vec::with_capacity(sources.len());
        let mut transitions = Vec::with_capacity(sources.len());
        for &a in sources {
            rels.push(self.pair_reliability(a, target)?);
            transitions.push(self.transition(a, target)?);
        }
        let attention = attention_maps(&rels, self.config.use_r_attention)?;
        let overall = overall_reliability(&rels, self.config.epsilon)?;
        let mut per_object = Vec::with_capacity(self.num_objects as usize);
        for k in 1..=self.num_objects {
            let transferred = sources
                .iter()
                .zip(&transitions)
                .map(|(&a, m)| transfer(m, &self.object_features[&(a, k)]))
                .collect::<Result<Vec<_>>>()?;
            per_object.push(interfuse(&transferred, &attention)?);
        }
        Ok((per_object, overall))
    }

    /// `H_t` of every object given neighbor `n` and per-object grid label signals.
    fn overlapped(&self, target: usize, neighbor: usize, signals: &[Vec<f64>]) -> Result<Vec<Option<FeatureGrid>>> {
        if !self.config.use_iap {
            return Ok(vec![None; signals.len()]);
        }
        let s = similarity_from_embeddings(&self.pre[target].similarity, &self.pre[neighbor].similarity)?;
        signals
            .iter()
            .map(|y| {
                let label = neighbor_label_feature(&self.pre[neighbor].neighbor, y, &self.mixers)?;
                Ok(Some(overlap_from_parts(&s, &label, &self.mixers)?))
            })
            .collect()
    }

    /// Per-object grid probabilities of the current labels of frame `n`.
    fn label_signals(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let field = self.labels[n].as_ref().ok_or_else(|| Error::InvalidInput(alloc::format!("frame {n} has no labels yet")))?;
        Ok((1..=self.num_objects)
            .map(|k| self.shape.reduce_mean(field.object_probability(k)))
            .collect())
    }

    fn segment(&mut self, target: usize, neighbor: usize, signals: &[Vec<f64>], sources: &[usize]) -> Result<LabelField> {
        let (g, _) = self.interfused(target, sources)?;
        let h = self.overlapped(target, neighbor, signals)?;
        let mut maps = Vec::with_capacity(self.num_objects as usize);
        for (k, head) in self.heads.iter().enumerate() {
            let x = head_input(&self.pre[target].features, &g[k], h[k].as_ref())?;
            maps.push(head.predict(&self.shape, &x)?);
        }
        soft_aggregate(&maps, self.shape.frame_width, self.shape.frame_height)
    }

    fn refit_heads(&mut self) -> Result<()> {
        let annotated = self.annotated_frames();
        let t_len = self.frames.len();
        let k_len = self.num_objects as usize;
        let mut blocks: Vec<Vec<Matrix>> = vec![Vec::new(); k_len];
        let mut targets: Vec<Vec<f64>> = vec![Vec::new(); k_len];
        for &a in &annotated {
            let others: Vec<usize> = annotated.iter().copied().filter(|&b| b != a).collect();
            let sources = if others.is_empty() { vec![a] } else { others };
            let (g, _) = self.interfused(a, &sources)?;
            let n = if a > 0 {
                a - 1
            } else if a + 1 < t_len {
                a + 1
            } else {
                a
            };
            // The neighbor label signal is the annotated frame's saliency
            // carried to the neighbor, normalized per neighbor cell.
            let a_an = self.transition(a, n)?;
            let row_mass: Vec<f64> = (0..a_an.hw()).map(|r| a_an.data.row(r).iter().sum()).collect();
            let signals: Vec<Vec<f64>> = (1..=self.num_objects)
                .map(|k| {
                    let s = &self.saliency_grids[&(a, k)];
                    (0..a_an.hw())
                        .map(|r| crate::linalg::dot(a_an.data.row(r), s) / row_mass[r])
                        .collect()
                })
                .collect();
            let h = self.overlapped(a, n, &signals)?;
            for k in 0..k_len {
                blocks[k].push(head_input(&self.pre[a].features, &g[k], h[k].as_ref())?);
                let tau = self.config.saliency_threshold;
                targets[k].extend(
                    self.saliency_grids[&(a, k as u8 + 1)]
                        .iter()
                        .map(|&s| if s >= tau { 1.0 } else { 0.0 }),
                );
            }
        }
        let d = self.config.head_dims();
        self.heads = blocks
            .into_iter()
            .zip(targets)
            .enumerate()
            .map(|(k, (bs, y))| {
                let mut data = Vec::with_capacity(y.len() * d);
                for b in &bs {
                    data.extend_from_slice(b.as_slice());
                }
                let x = Matrix::from_vec(y.len(), d, data)?;
                LinearHead::fit(
                    k as u8 + 1,
                    &x,
                    &y,
                    self.config.head_lambda(),
                    self.config.head_sharpness,
                    self.config.head_balanced,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// Runs one round with the marks in `annotations` and returns its log record.
    pub fn run_round(&mut self, mut annotations: AnnotationSet) -> Result<&RoundRecord> {
        let t_len = self.frames.len();
        let a = annotations.frame_index;
        if a >= t_len {
            return Err(Error::FrameOutOfRange { frame: a, len: t_len });
        }
        annotations.validate(self.shape.frame_width, self.shape.frame_height, self.num_objects)?;
        let round = self.log.len() + 1;
        annotations.round_index = round;

        // Saliency and object features of the new annotated frame.
        let frame = &self.frames[a];
        let params = SaliencyParams::for_frame(&self.config, frame.width, frame.height);
        let mut saliency = Vec::with_capacity(self.num_objects as usize);
        let mut objects = Vec::with_capacity(self.num_objects as usize);
        for k in 1..=self.num_objects {
            let dense = sparse_to_dense(&annotations, frame, k, params)?;
            let grid = dense.to_grid(&self.shape);
            let e = extract_object_feature(&self.pre[a].features, &grid, &self.projector, a, k)?;
            saliency.push(grid);
            objects.push(e.data);
        }
        for (k, (s, e)) in (1..=self.num_objects).zip(saliency.into_iter().zip(objects)) {
            self.saliency_grids.insert((a, k), s);
            self.object_features.insert((a, k), e);
        }
        self.history.push(annotations.clone());
        self.annotations.insert(a, annotations);

        self.refit_heads()?;

        let sources = self.annotated_frames();
        let others: Vec<usize> = sources.iter().copied().filter(|&f| f != a).collect();
        let plan = RoundPlan::new(round, a, &others, t_len);
        let mut segmented = Vec::with_capacity(1 + plan.forward.len() + plan.backward.len());
        let mut reads = Vec::with_capacity(segmented.capacity());

        let bootstrap = if self.config.reuse_annotated_labels && self.labels[a].is_some() {
            self.label_signals(a)?
        } else {
            (1..=self.num_objects).map(|k| self.saliency_grids[&(a, k)].clone()).collect()
        };
        reads.push((a, a));
        let field = self.segment(a, a, &bootstrap, &sources)?;
        self.labels[a] = Some(field);
        segmented.push(a);

        for pass in [&plan.forward, &plan.backward] {
            let mut prev = a;
            for &t in pass.iter() {
                let signals = self.label_signals(prev)?;
                reads.push((t, prev));
                let field = self.segment(t, prev, &signals, &sources)?;
                self.labels[t] = Some(field);
                segmented.push(t);
                prev = t;
            }
        }

        for t in 0..t_len {
            let rels = sources
                .iter()
                .map(|&s| self.pair_reliability(s, t))
                .collect::<Result<Vec<_>>>()?;
            let overall = overall_reliability(&rels, self.config.epsilon)?;
            let cells = match &self.labels[t] {
                Some(f) => majority_labels(&self.shape, &f.mask),
                None => vec![0; self.shape.hw()],
            };
            self.r_scores[t] = r_score(&overall, &cells, self.config.alpha);
            self.overall[t] = Some(overall);
        }

        self.log.push(RoundRecord {
            round,
            annotated_frame: a,
            num_marks: self.annotations[&a].marks.len(),
            annotated_frames: sources,
            plan,
            segmented,
            reads,
            head_stats: self.heads.iter().map(|h| h.stats.clone()).collect(),
            r_scores: self.r_scores.clone(),
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// RS1 or RS4 guidance from the latest R-scores.
    pub fn guide(&self, mode: GuidanceMode) -> Result<GuidanceResult> {
        if self.log.is_empty() {
            return Err(Error::InvalidInput(String::from("guidance needs at least one completed round")));
        }
        let annotated = self.annotated_frames();
        let frames = match mode {
            GuidanceMode::Rs1 => select_rs1(&self.r_scores, &annotated).into_iter().collect(),
            GuidanceMode::Rs4 => select_rs4(
                &self.r_scores,
                &annotated,
                self.config.rs4_count,
                self.config.rs4_min_gap(self.frames.len()),
            ),
        };
        Ok(GuidanceResult {
            mode,
            candidates: frames
                .into_iter()
                .map(|frame| Candidate {
                    frame,
                    r_score: self.r_scores[frame],
                })
                .collect(),
        })
    }
}

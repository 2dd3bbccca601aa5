use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Parameters of the hand-crafted frame descriptor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DescriptorConfig {
    /// Weight of the cell mean CIELAB color.
    pub color_weight: f64,
    /// Weight of the mean CIELAB color over the 3x3 cell neighborhood.
    pub context_weight: f64,
    /// Number of unsigned gradient-orientation bins.
    pub gradient_bins: usize,
    pub gradient_weight: f64,
    /// Frequencies (cycles per grid extent) of the sinusoidal cell-position code.
    pub position_frequencies: Vec<f64>,
    pub position_weight: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            color_weight: 1.0,
            context_weight: 0.5,
            gradient_bins: 8,
            gradient_weight: 0.5,
            position_frequencies: vec![0.5, 1.0],
            position_weight: 0.35,
        }
    }
}

impl DescriptorConfig {
    pub fn raw_dims(&self) -> usize {
        6 + self.gradient_bins + 4 * self.position_frequencies.len()
    }
}

/// Every tunable of a session. One value is fixed for a session's lifetime.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EngineConfig {
    /// Grid cell size in pixels.
    pub stride: usize,
    /// Frame feature width.
    pub c1: usize,
    /// Output width of the four feature transforms.
    pub c2: usize,
    /// Width of object, interfused and overlapped features.
    pub c3: usize,
    /// Added to the worst-channel discrepancy before inversion; caps reliability at `1/epsilon`.
    pub epsilon: f64,
    /// Whole-frame vs. foreground blend of the R-score.
    pub alpha: f64,
    pub rs4_count: usize,
    /// RS4 candidates are at least `ceil(T / rs4_min_gap_divisor)` frames apart.
    pub rs4_min_gap_divisor: usize,
    /// Ridge penalty of the segmentation head; `None` means `1e-2 * feature dimension`.
    pub head_lambda: Option<f64>,
    /// Weight object and background training cells equally in the head fit.
    pub head_balanced: bool,
    /// Logistic sharpening applied to the ridge score.
    pub head_sharpness: f64,
    /// Saliency level at or above which a cell is a positive training target.
    pub saliency_threshold: f64,
    /// Logistic slope on geodesic distance differences; `None` means `4 / diagonal`.
    pub saliency_beta: Option<f64>,
    /// Cost of a unit RGB step along a geodesic path, in image diagonals.
    pub geodesic_edge_weight: f64,
    /// Per-step color differences up to this norm cost nothing (texture and noise).
    pub geodesic_noise_floor: f64,
    /// Geodesic distance, in image diagonals, at which an unmarked pixel counts as background.
    pub background_distance: f64,
    /// Divide transition logits by `sqrt(c2)`.
    pub temperature_scaling: bool,
    pub affinity_gain: f64,
    pub reliability_gain: f64,
    pub similarity_gain: f64,
    pub neighbor_gain: f64,
    /// Ablation switch: R-attention fusion (true) or uniform averaging (false).
    pub use_r_attention: bool,
    /// Ablation switch: feed the overlapped neighbor feature to the head.
    pub use_iap: bool,
    /// In rounds after the first, segment the re-annotated frame from its
    /// previous labels instead of its fresh saliency.
    pub reuse_annotated_labels: bool,
    pub transition_cache_capacity: usize,
    pub rng_seed: u64,
    pub descriptor: DescriptorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            stride: 8,
            c1: 64,
            c2: 16,
            c3: 32,
            epsilon: 0.1,
            alpha: 0.5,
            rs4_count: 4,
            rs4_min_gap_divisor: 10,
            head_lambda: None,
            head_balanced: true,
            head_sharpness: 8.0,
            saliency_threshold: 0.5,
            saliency_beta: None,
            geodesic_edge_weight: 8.0,
            geodesic_noise_floor: 0.1,
            background_distance: 1.0,
            temperature_scaling: true,
            affinity_gain: 8.0,
            reliability_gain: 2.0,
            similarity_gain: 4.0,
            neighbor_gain: 1.0,
            use_r_attention: true,
            use_iap: true,
            reuse_annotated_labels: false,
            transition_cache_capacity: 128,
            rng_seed: 0,
            descriptor: DescriptorConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Input width of the segmentation head: `[F, G, H, 1]`.
    pub fn head_dims(&self) -> usize {
        self.c1 + 2 * self.c3 + 1
    }

    pub fn head_lambda(&self) -> f64 {
        self.head_lambda.unwrap_or(1e-2 * self.head_dims() as f64)
    }

    /// Minimum RS4 spacing for a `num_frames`-frame video.
    pub fn rs4_min_gap(&self, num_frames: usize) -> usize {
        num_frames.div_ceil(self.rs4_min_gap_divisor).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.stride == 0 || self.c1 == 0 || self.c2 == 0 || self.c3 == 0 {
            return bad(format!(
                "dimensions must be >= 1 (stride {}, c1 {}, c2 {}, c3 {})",
                self.stride, self.c1, self.c2, self.c3
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.rs4_count == 0 || self.rs4_min_gap_divisor == 0 {
            return bad("rs4_count and rs4_min_gap_divisor must be >= 1".into());
        }
        if let Some(l) = self.head_lambda {
            if !(l > 0.0) {
                return bad(format!("head_lambda must be > 0, got {l}"));
            }
        }
        if !(self.saliency_threshold > 0.0 && self.saliency_threshold < 1.0) {
            return bad(format!("saliency_threshold must be in (0, 1), got {}", self.saliency_threshold));
        }
        if !(self.background_distance > 0.0) {
            return bad(format!("background_distance must be > 0, got {}", self.background_distance));
        }
        if let Some(b) = self.saliency_beta {
            if !(b > 0.0) {
                return bad(format!("saliency_beta must be > 0, got {b}"));
            }
        }
        let finite = [
            self.head_sharpness,
            self.geodesic_edge_weight,
            self.geodesic_noise_floor,
            self.affinity_gain,
            self.reliability_gain,
            self.similarity_gain,
            self.neighbor_gain,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("gains, weights and sharpness must be finite and non-negative".into());
        }
        if self.descriptor.gradient_bins == 0 {
            return bad("gradient_bins must be >= 1".into());
        }
        if self.transition_cache_capacity == 0 {
            return bad("transition_cache_capacity must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dims(), 129);
        assert!((c.head_lambda() - 1.29).abs() < 1e-12);
    }

    #[test]
    fn rs4_gap_is_ceiling() {
        let c = EngineConfig::default();
        assert_eq!(c.rs4_min_gap(50), 5);
        assert_eq!(c.rs4_min_gap(20), 2);
        assert_eq!(c.rs4_min_gap(21), 3);
        assert_eq!(c.rs4_min_gap(3), 1);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = EngineConfig::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.c2 = 0;
        assert!(c.validate().is_err());
    }
}

//! relvos-core: reliability-guided interactive video object segmentation.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO. It contains the
//! whole numeric engine:
//!
//! * feature encoding and the four seeded feature transforms ([`features`]),
//! * sparse-to-dense annotation encoding by geodesic distance ([`saliency`]),
//! * transition matrices, reliability maps and R-attention fusion ([`attention`]),
//! * intersection-aware neighbor propagation ([`propagation`]),
//! * the closed-form segmentation head and soft aggregation ([`head`]),
//! * the round-based session engine with R-score guidance ([`session`]),
//! * J/F metrics, the robot user and the simulation driver ([`metrics`],
//!   [`robot`], [`simulation`]),
//! * a seeded synthetic video generator ([`synthetic`]).
//!
//! Frame indices are 0-based everywhere. Grid cells are indexed in row-major
//! raster order: cell `p` is `(p / grid_w, p % grid_w)`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod annotation;
pub mod attention;
pub mod config;
pub mod error;
pub mod features;
pub mod grid;
pub mod head;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod propagation;
pub mod rng;
pub mod robot;
pub mod saliency;
pub mod session;
pub mod simulation;
pub mod synthetic;

pub use annotation::{AnnotationSet, Mark};
pub use attention::{FusionResult, TransitionCache, TransitionMatrix};
pub use config::{DescriptorConfig, EngineConfig};
pub use error::{Error, Result};
pub use features::{FeatureTransform, FrameEncoder, TransformKind};
pub use grid::{FeatureGrid, GridShape, ReliabilityMap};
pub use head::{LabelField, LinearHead};
pub use image::{LabelImage, RgbFrame};
pub use linalg::Matrix;
pub use robot::{RobotConfig, RobotUser, SelectionMode};
pub use session::{GuidanceMode, GuidanceResult, RoundPlan, RoundRecord, SessionState};
pub use simulation::{InteractiveSegmenter, MetricReport, SimulationConfig};

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One point mark at pixel `(x, y)`. `object_id` 0 marks background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mark {
    pub x: usize,
    pub y: usize,
    #[cfg_attr(feature = "serde", serde(rename = "object"))]
    pub object_id: u8,
}

impl Mark {
    pub const fn new(x: usize, y: usize, object_id: u8) -> Self {
        Self { x, y, object_id }
    }
}

/// The marks a user (or robot) placed on one frame in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnotationSet {
    pub frame_index: usize,
    pub marks: Vec<Mark>,
    /// 1-based round that produced the marks; 0 until a session assigns it.
    #[cfg_attr(feature = "serde", serde(default))]
    pub round_index: usize,
}

impl AnnotationSet {
    pub fn new(frame_index: usize, marks: Vec<Mark>) -> Self {
        Self {
            frame_index,
            marks,
            round_index: 0,
        }
    }

    pub fn validate(&self, width: usize, height: usize, num_objects: u8) -> Result<()> {
        if self.marks.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
        for m in &self.marks {
            if m.x >= width || m.y >= height {
                return Err(Error::MarkOutOfBounds {
                    x: m.x,
                    y: m.y,
                    width,
                    height,
                });
            }
            if m.object_id > num_objects {
                return Err(Error::UnknownObject {
                    object_id: m.object_id,
                    num_objects,
                });
            }
        }
        Ok(())
    }

    pub fn positives(&self, object_id: u8) -> impl Iterator<Item = &Mark> {
        self.marks.iter().filter(move |m| m.object_id == object_id)
    }

    pub fn negatives(&self, object_id: u8) -> impl Iterator<Item = &Mark> {
        self.marks.iter().filter(move |m| m.object_id != object_id)
    }
}

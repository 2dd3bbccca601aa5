//! Run-length encoding of label images.
//!
//! Runs cover the image in raster order as `[label, length]` pairs. Adjacent
//! runs always differ in label and every length is >= 1, so each image has
//! exactly one encoding.

use relvos_core::LabelImage;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<(u8, u32)>,
}

impl RleMask {
    pub fn encode(mask: &LabelImage) -> Self {
        let mut runs: Vec<(u8, u32)> = Vec::new();
        for &v in &mask.data {
            match runs.last_mut() {
                Some((label, n)) if *label == v => *n += 1,
                _ => runs.push((v, 1)),
            }
        }
        Self {
            width: mask.width,
            height: mask.height,
            runs,
        }
    }

    pub fn decode(&self) -> Result<LabelImage> {
        let total: u64 = self.runs.iter().map(|&(_, n)| n as u64).sum();
        if total != (self.width * self.height) as u64 {
            return Err(IoError::format(
                "run-length mask",
                format!("runs cover {total} pixels, image has {}", self.width * self.height),
            ));
        }
        if self.runs.iter().any(|&(_, n)| n == 0) {
            return Err(IoError::format("run-length mask", "zero-length run"));
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for &(v, n) in &self.runs {
            data.extend(std::iter::repeat_n(v, n as usize));
        }
        Ok(LabelImage::new(self.width, self.height, data)?)
    }
}

//! Region similarity (J), boundary accuracy (F) and connected components.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Result};
use crate::image::LabelImage;

fn check_same(pred: &LabelImage, gt: &LabelImage, op: &'static str) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(mismatch(op, format_args!("{}x{}", gt.width, gt.height), format_args!("{}x{}", pred.width, pred.height)));
    }
    Ok(())
}

/// Intersection over union of object `object_id`. Two empty masks score 1.
pub fn region_similarity(pred: &LabelImage, gt: &LabelImage, object_id: u8) -> Result<f64> {
    check_same(pred, gt, "region_similarity")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p == object_id, g == object_id);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Object pixels with a 4-neighbor outside the object (or outside the image).
pub fn boundary(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            out[i] = x == 0
                || y == 0
                || x + 1 == width
                || y + 1 == height
                || !mask[i - 1]
                || !mask[i + 1]
                || !mask[i - width]
                || !mask[i + width];
        }
    }
    out
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(width: usize, height: usize) -> usize {
    libm::ceil(0.008 * libm::hypot(width as f64, height as f64)) as usize
}

/// Fraction of `from` pixels within Euclidean distance `tolerance` of a `to` pixel.
fn matched_fraction(from: &[bool], to: &[bool], width: usize, height: usize, tolerance: usize) -> f64 {
    let t = tolerance as isize;
    let t2 = t * t;
    let (mut total, mut hit) = (0usize, 0usize);
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !from[(y as usize) * width + x as usize] {
                continue;
            }
            total += 1;
            let found = (-t..=t).any(|dy| {
                (-t..=t).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    dx * dx + dy * dy <= t2
                        && nx >= 0
                        && ny >= 0
                        && (nx as usize) < width
                        && (ny as usize) < height
                        && to[(ny as usize) * width + nx as usize]
                })
            });
            hit += found as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Boundary F-measure of object `object_id`.
pub fn contour_accuracy(pred: &LabelImage, gt: &LabelImage, object_id: u8, tolerance: usize) -> Result<f64> {
    check_same(pred, gt, "contour_accuracy")?;
    let (w, h) = (gt.width, gt.height);
    let bp = boundary(&pred.binary(object_id), w, h);
    let bg = boundary(&gt.binary(object_id), w, h);
    let (np, ng) = (bp.iter().any(|&b| b), bg.iter().any(|&b| b));
    match (np, ng) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, w, h, tolerance);
    let recall = matched_fraction(&bg, &bp, w, h, tolerance);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// 4-connected components of `mask`. Returns one pixel list per component,
/// each in raster order, components ordered by their first pixel.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Largest 4-connected component; ties go to the component found first.
pub fn largest_component(mask: &[bool], width: usize, height: usize) -> Option<Vec<usize>> {
    connected_components(mask, width, height)
        .into_iter()
        .fold(None, |best: Option<Vec<usize>>, c| match best {
            Some(b) if b.len() >= c.len() => Some(b),
            _ => Some(c),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> LabelImage {
        let mut m = LabelImage::empty(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.data[y * w + x] = 1;
            }
        }
        m
    }

    #[test]
    fn iou_cases() {
        let full = rect(8, 8, 0, 0, 8, 8);
        let left = rect(8, 8, 0, 0, 4, 8);
        assert_eq!(region_similarity(&full, &full, 1).unwrap(), 1.0);
        assert_eq!(region_similarity(&left, &full, 1).unwrap(), 0.5);
        let a = rect(8, 8, 0, 0, 2, 2);
        let b = rect(8, 8, 4, 4, 6, 6);
        assert_eq!(region_similarity(&a, &b, 1).unwrap(), 0.0);
        let e = LabelImage::empty(8, 8);
        assert_eq!(region_similarity(&e, &e, 1).unwrap(), 1.0);
        assert!(region_similarity(&e, &LabelImage::empty(4, 8), 1).is_err());
    }

    #[test]
    fn f_cases() {
        let a = rect(20, 20, 5, 5, 12, 12);
        assert_eq!(contour_accuracy(&a, &a, 1, 0).unwrap(), 1.0);
        let e = LabelImage::empty(20, 20);
        assert_eq!(contour_accuracy(&e, &a, 1, 2).unwrap(), 0.0);
        assert_eq!(contour_accuracy(&e, &e, 1, 2).unwrap(), 1.0);
        let shifted = rect(20, 20, 6, 5, 13, 12);
        assert_eq!(contour_accuracy(&shifted, &a, 1, 1).unwrap(), 1.0);
        // Both boundaries have 24 px; they share the top and bottom rows for
        // x in 6..=11, i.e. 12 px, so P = R = 0.5.
        let f0 = contour_accuracy(&shifted, &a, 1, 0).unwrap();
        assert!((f0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn components() {
        let mask = [true, true, false, false, false, true, true, false, true];
        let comps = connected_components(&mask, 3, 3);
        assert_eq!(comps, vec![vec![0, 1], vec![5, 8], vec![6]]);
        assert_eq!(largest_component(&mask, 3, 3), Some(vec![0, 1]));
        assert_eq!(largest_component(&[false; 4], 2, 2), None);
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(default_tolerance(128, 128), 2);
        assert_eq!(default_tolerance(854, 480), 8);
    }
}

//! Bounding-box arithmetic shared by every other module.
//!
//! Boxes are axis-aligned rectangles with real-valued corners, `(up, left)`
//! to `(bottom, right)`. Area uses the open-interval convention
//! (`(bottom - up) * (right - left)`, no `+1`), so jittered synthetic
//! proposals need no rounding.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Axis-aligned rectangle. Invariant: `up <= bottom` and `left <= right`.
///
/// Serialized as the 4-array `[up, left, bottom, right]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub up: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl BBox {
    pub fn new(up: f64, left: f64, bottom: f64, right: f64) -> Self {
        debug_assert!(up <= bottom && left <= right, "inverted box");
        Self { up, left, bottom, right }
    }

    pub fn is_valid(&self) -> bool {
        self.up <= self.bottom
            && self.left <= self.right
            && self.up.is_finite()
            && self.left.is_finite()
            && self.bottom.is_finite()
            && self.right.is_finite()
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.up
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn area(&self) -> f64 {
        self.height() * self.width()
    }

    /// Zero-area boxes are degenerate; they overlap nothing by convention.
    pub fn is_degenerate(&self) -> bool {
        self.area() == 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.up + self.bottom) / 2.0, (self.left + self.right) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let up = self.up.max(other.up);
        let left = self.left.max(other.left);
        let bottom = self.bottom.min(other.bottom);
        let right = self.right.min(other.right);
        if bottom <= up || right <= left {
            0.0
        } else {
            (bottom - up) * (right - left)
        }
    }

    pub fn contains_point(&self, y: f64, x: f64) -> bool {
        y >= self.up && y < self.bottom && x >= self.left && x < self.right
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.up, self.left, self.bottom, self.right].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [up, left, bottom, right] = <[f64; 4]>::deserialize(deserializer)?;
        let b = BBox { up, left, bottom, right };
        if !b.is_valid() {
            return Err(D::Error::custom(format!(
                "invalid box [{up}, {left}, {bottom}, {right}]: expected up <= bottom, left <= right"
            )));
        }
        Ok(b)
    }
}

/// A rectangle with a class id and a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Intersection-over-union of two boxes.
///
/// Returns 0 when the boxes are disjoint or either box has zero area (the
/// degenerate/degenerate case would otherwise be 0/0).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited in descending score order (ties broken by lower input
/// index); a box is kept iff its IoU with every already-kept box is below
/// `iou_threshold`. Output is in descending score order. Callers group by
/// class first; this routine ignores `class_id`.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .expect("NaN score")
            .then(a.cmp(&b))
    });

    let mut kept: Vec<ScoredBox> = Vec::new();
    for &i in &order {
        let candidate = &boxes[i];
        if kept.iter().all(|k| iou(&k.bbox, &candidate.bbox) < iou_threshold) {
            kept.push(*candidate);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(up: f64, left: f64, bottom: f64, right: f64) -> BBox {
        BBox::new(up, left, bottom, right)
    }

    /// Independent IoU oracle: count unit cells on an integer grid.
    fn grid_iou(a: &BBox, b: &BBox) -> f64 {
        let lo_y = a.up.min(b.up) as i64;
        let hi_y = a.bottom.max(b.bottom) as i64;
        let lo_x = a.left.min(b.left) as i64;
        let hi_x = a.right.max(b.right) as i64;
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let cy = y as f64 + 0.5;
                let cx = x as f64 + 0.5;
                let in_a = a.contains_point(cy, cx);
                let in_b = b.contains_point(cy, cx);
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Independent NMS oracle: keep a box iff no higher-priority box
    /// overlaps it at or above the threshold, checking all pairs.
    fn brute_nms(boxes: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        order.sort_by(|&a, &b| {
            boxes[b].score.partial_cmp(&boxes[a].score).unwrap().then(a.cmp(&b))
        });
        let mut kept_idx: Vec<usize> = Vec::new();
        for &i in &order {
            let suppressed = kept_idx.iter().any(|&j| iou(&boxes[j].bbox, &boxes[i].bbox) >= threshold);
            if !suppressed {
                kept_idx.push(i);
            }
        }
        kept_idx.iter().map(|&i| boxes[i]).collect()
    }

    #[test]
    fn iou_identity() {
        let b = bx(1.0, 2.0, 11.0, 22.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
    }

    #[test]
    fn iou_half_overlap_matches_grid_count() {
        // overlap 50 cells, union 150 cells
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(0.0, 5.0, 10.0, 15.0);
        assert_eq!(grid_iou(&a, &b), 50.0 / 150.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let line = bx(0.0, 0.0, 0.0, 10.0);
        let b = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&line, &b), 0.0);
        assert_eq!(iou(&line, &line), 0.0);
    }

    #[test]
    fn nms_empty_and_singleton() {
        assert!(nms(&[], 0.5).is_empty());
        let only = ScoredBox { bbox: bx(0.0, 0.0, 5.0, 5.0), class_id: 0, score: 0.7 };
        assert_eq!(nms(&[only], 0.5), vec![only]);
    }

    #[test]
    fn nms_suppresses_high_overlap() {
        let a = ScoredBox { bbox: bx(0.0, 0.0, 10.0, 10.0), class_id: 0, score: 0.9 };
        // ~0.9 IoU with a
        let b = ScoredBox { bbox: bx(0.0, 0.5, 10.0, 10.5), class_id: 0, score: 0.8 };
        assert!(iou(&a.bbox, &b.bbox) > 0.85);
        let kept = nms(&[a, b], 0.3);
        assert_eq!(kept, vec![a]);
        assert_eq!(kept, brute_nms(&[a, b], 0.3));
    }

    #[test]
    fn nms_tie_keeps_lower_index() {
        let a = ScoredBox { bbox: bx(0.0, 0.0, 10.0, 10.0), class_id: 0, score: 0.5 };
        let b = ScoredBox { bbox: bx(1.0, 1.0, 10.0, 10.0), class_id: 0, score: 0.5 };
        let kept = nms(&[a, b], 0.3);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (0.0f64..40.0, 0.0f64..40.0, 0.5f64..20.0, 0.5f64..20.0)
                .prop_map(|(up, left, h, w)| BBox::new(up, left, up + h, left + w))
        }

        fn arb_scored(n: usize) -> impl Strategy<Value = Vec<ScoredBox>> {
            proptest::collection::vec(
                (arb_box(), 0.0f64..=1.0).prop_map(|(bbox, score)| ScoredBox {
                    bbox,
                    class_id: 0,
                    score,
                }),
                0..n,
            )
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = iou(&a, &b);
                let ba = iou(&b, &a);
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
            }

            #[test]
            fn iou_matches_grid_oracle_on_integer_boxes(
                (au, al, ah, aw) in (0i64..20, 0i64..20, 1i64..12, 1i64..12),
                (bu, bl, bh, bw) in (0i64..20, 0i64..20, 1i64..12, 1i64..12),
            ) {
                let a = BBox::new(au as f64, al as f64, (au + ah) as f64, (al + aw) as f64);
                let b = BBox::new(bu as f64, bl as f64, (bu + bh) as f64, (bl + bw) as f64);
                prop_assert!((iou(&a, &b) - grid_iou(&a, &b)).abs() < 1e-12);
            }

            #[test]
            fn nms_matches_brute_force(boxes in arb_scored(12), t in 0.05f64..0.95) {
                prop_assert_eq!(nms(&boxes, t), brute_nms(&boxes, t));
            }

            #[test]
            fn nms_invariants(boxes in arb_scored(12), t in 0.05f64..0.95) {
                let kept = nms(&boxes, t);
                // subset of input
                for k in &kept {
                    prop_assert!(boxes.iter().any(|b| b == k));
                }
                // descending scores
                for w in kept.windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                }
                // survivors pairwise below threshold
                for i in 0..kept.len() {
                    for j in (i + 1)..kept.len() {
                        prop_assert!(iou(&kept[i].bbox, &kept[j].bbox) < t);
                    }
                }
                // idempotent
                prop_assert_eq!(nms(&kept, t), kept.clone());
            }
        }
    }
}

//! Axis-aligned rectangles and the spatial predicates built on them.
//!
//! Boxes are stored as `(left, top, right, bottom)` in page pixels, which is
//! the `[x0, y0, x1, y1]` order used by FUNSD-style annotation files.
//! Coordinates are real-valued and zero-area boxes are valid everywhere.

use serde::{Deserialize, Serialize};

/// An axis-aligned rectangle in page pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Projection axis for [`projection_overlap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Project onto the x axis (compare horizontal extents).
    Horizontal,
    /// Project onto the y axis (compare vertical extents).
    Vertical,
}

/// Left-right / top-bottom relation between two boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpatialRelation {
    pub lr: bool,
    pub tb: bool,
}

impl BBox {
    /// Builds a box, normalizing swapped corners so that `x0 <= x1` and `y0 <= y1`.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    /// Whether the point lies inside the box, boundary included.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn is_valid(&self) -> bool {
        self.x0.is_finite()
            && self.y0.is_finite()
            && self.x1.is_finite()
            && self.y1.is_finite()
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    fn interval(&self, axis: Axis) -> (f64, f64) {
        match axis {
            Axis::Horizontal => (self.x0, self.x1),
            Axis::Vertical => (self.y0, self.y1),
        }
    }
}

/// Overlap rectangle of two boxes, or `None` when the overlap has zero area.
pub fn intersect(a: &BBox, b: &BBox) -> Option<BBox> {
    let x0 = a.x0.max(b.x0);
    let y0 = a.y0.max(b.y0);
    let x1 = a.x1.min(b.x1);
    let y1 = a.y1.min(b.y1);
    if x1 > x0 && y1 > y0 {
        Some(BBox { x0, y0, x1, y1 })
    } else {
        None
    }
}

/// Area of the overlap of two boxes (0 when they do not overlap).
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    intersect(a, b).map_or(0.0, |r| r.area())
}

/// Intersection over union. Two zero-area boxes have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box enclosing every box in `boxes`, or `None` for an empty slice.
pub fn hull(boxes: &[BBox]) -> Option<BBox> {
    let (first, rest) = boxes.split_first()?;
    Some(rest.iter().fold(*first, |acc, b| BBox {
        x0: acc.x0.min(b.x0),
        y0: acc.y0.min(b.y0),
        x1: acc.x1.max(b.x1),
        y1: acc.y1.max(b.y1),
    }))
}

/// Length of the overlap of the two boxes' projections onto `axis`.
pub fn projection_overlap(a: &BBox, b: &BBox, axis: Axis) -> f64 {
    let (a0, a1) = a.interval(axis);
    let (b0, b1) = b.interval(axis);
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn disjoint(a: &BBox, b: &BBox, axis: Axis) -> bool {
    let (a0, a1) = a.interval(axis);
    let (b0, b1) = b.interval(axis);
    a1 <= b0 || b1 <= a0
}

/// Left-right relation: the vertical projections overlap with positive length
/// and the horizontal intervals are disjoint. Top-bottom is the transpose.
pub fn spatial_relation(a: &BBox, b: &BBox) -> SpatialRelation {
    SpatialRelation {
        lr: projection_overlap(a, b, Axis::Vertical) > 0.0 && disjoint(a, b, Axis::Horizontal),
        tb: projection_overlap(a, b, Axis::Horizontal) > 0.0 && disjoint(a, b, Axis::Vertical),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn intersect_cases() {
        assert_eq!(intersect(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), Some(b(0., 0., 10., 10.)));
        assert_eq!(intersect(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), None);
        assert_eq!(intersect(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.)), Some(b(5., 0., 10., 10.)));
        // edge contact has zero area
        assert_eq!(intersect(&b(0., 0., 10., 10.), &b(10., 0., 20., 10.)), None);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        assert!((iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn hull_cases() {
        assert_eq!(hull(&[b(0., 0., 5., 5.)]), Some(b(0., 0., 5., 5.)));
        assert_eq!(hull(&[b(0., 0., 5., 5.), b(10., 0., 20., 8.)]), Some(b(0., 0., 20., 8.)));
        assert_eq!(hull(&[b(2., 3., 4., 5.), b(1., 6., 3., 9.)]), Some(b(1., 3., 4., 9.)));
        assert_eq!(hull(&[]), None);
    }

    #[test]
    fn projection_cases() {
        let a = b(0., 0., 10., 4.);
        assert_eq!(projection_overlap(&a, &a, Axis::Horizontal), 10.0);
        assert_eq!(projection_overlap(&a, &b(20., 0., 30., 4.), Axis::Horizontal), 0.0);
        assert_eq!(projection_overlap(&a, &b(5., 0., 15., 4.), Axis::Horizontal), 5.0);
    }

    #[test]
    fn relation_cases() {
        let a = b(0., 0., 10., 10.);
        assert_eq!(spatial_relation(&a, &b(20., 0., 30., 10.)), SpatialRelation { lr: true, tb: false });
        assert_eq!(spatial_relation(&a, &b(0., 20., 10., 30.)), SpatialRelation { lr: false, tb: true });
        assert_eq!(spatial_relation(&a, &b(20., 20., 30., 30.)), SpatialRelation::default());
        // overlapping boxes have neither relation
        assert_eq!(spatial_relation(&a, &b(5., 5., 15., 15.)), SpatialRelation::default());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u8..16, 0u8..16, 0u8..8, 0u8..8)
            .prop_map(|(x, y, w, h)| b(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    fn raster_area(pred: impl Fn(f64, f64) -> bool) -> f64 {
        let mut n = 0;
        for py in 0..24 {
            for px in 0..24 {
                if pred(px as f64 + 0.5, py as f64 + 0.5) {
                    n += 1;
                }
            }
        }
        n as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn inclusion_exclusion_matches_raster(a in arb_box(), c in arb_box()) {
            // integer boxes on a 24x24 grid: area == number of covered pixel centers
            let inside = |bx: &BBox, x: f64, y: f64| x > bx.x0 && x < bx.x1 && y > bx.y0 && y < bx.y1;
            let inter = raster_area(|x, y| inside(&a, x, y) && inside(&c, x, y));
            let union = raster_area(|x, y| inside(&a, x, y) || inside(&c, x, y));
            prop_assert_eq!(intersection_area(&a, &c), inter);
            prop_assert_eq!(a.area() + c.area() - intersection_area(&a, &c), union);
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn hull_contains_all_and_ignores_order(boxes in proptest::collection::vec(arb_box(), 1..8)) {
            let h = hull(&boxes).unwrap();
            for bx in &boxes {
                prop_assert!(h.contains(bx));
            }
            let mut rev = boxes.clone();
            rev.reverse();
            prop_assert_eq!(hull(&rev).unwrap(), h);
        }

        #[test]
        fn relation_symmetric_and_exclusive(a in arb_box(), c in arb_box()) {
            let r = spatial_relation(&a, &c);
            prop_assert_eq!(r, spatial_relation(&c, &a));
            prop_assert!(!(r.lr && r.tb));
        }
    }
}

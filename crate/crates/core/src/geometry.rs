//! Preprocessing geometry: primary-detection selection, square crop planning,
//! mask centering and grouping plans for averaged empty frames.
//!
//! Everything here produces *plans* in integer pixel coordinates; applying a
//! plan to image bytes is left to whatever image tooling sits downstream.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DetectionCategory, DetectionRecord, ImageRecord, NormBox};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.2;

/// Picks the highest-confidence detection at or above `conf_threshold`.
///
/// `None` means the router's no-detection branch. Confidence ties keep the
/// earlier detection.
pub fn select_primary_detection(
    detections: &[DetectionRecord],
    conf_threshold: f64,
    animals_only: bool,
) -> Option<&DetectionRecord> {
    detections
        .iter()
        .filter(|d| d.confidence >= conf_threshold)
        .filter(|d| !animals_only || d.category == DetectionCategory::Animal)
        .fold(None, |best: Option<&DetectionRecord>, d| match best {
            Some(b) if b.confidence >= d.confidence => Some(b),
            _ => Some(d),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains(&self, other: &PixelRect) -> bool {
        self.x <= other.x && self.y <= other.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

/// Square crop: a source rectangle inside the image plus the padding that
/// turns it into a `side x side` output without resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPlan {
    pub rect: PixelRect,
    pub pad: Padding,
    pub side: u32,
}

impl CropPlan {
    pub fn output_size(&self) -> (u32, u32) {
        (
            self.rect.w + self.pad.left + self.pad.right,
            self.rect.h + self.pad.top + self.pad.bottom,
        )
    }
}

/// What to do when the square side exceeds an image dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overflow {
    /// Keep the full square and pad the missing extent symmetrically.
    #[default]
    Pad,
    /// Shrink the square to the shorter image side; no padding, but the
    /// detection may be cut.
    Shrink,
}

/// Scales a normalized box to the pixel grid, rounding edges to the nearest
/// pixel boundary and clipping to the image.
pub fn bbox_to_pixels(bbox: &NormBox, img_w: u32, img_h: u32) -> Result<PixelRect> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) || img_w == 0 || img_h == 0 {
        return Err(Error::ZeroArea);
    }
    let edge = |v: f64, extent: u32| (v * extent as f64).round().clamp(0.0, extent as f64) as u32;
    let x0 = edge(bbox.x, img_w);
    let x1 = edge(bbox.x + bbox.w, img_w);
    let y0 = edge(bbox.y, img_h);
    let y1 = edge(bbox.y + bbox.h, img_h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::ZeroArea);
    }
    Ok(PixelRect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Places a window of length `side` over `[lo, hi)` on an axis of length
/// `extent`. Returns (start, length, pad_before, pad_after).
fn place_axis(lo: u32, hi: u32, side: u32, extent: u32) -> (u32, u32, u32, u32) {
    if side > extent {
        let total = side - extent;
        return (0, extent, total / 2, total - total / 2);
    }
    let centered = (lo as i64 + hi as i64 - side as i64).div_euclid(2);
    let start = centered.clamp(0, (extent - side) as i64) as u32;
    (start, side, 0, 0)
}

pub fn square_crop_rect(bbox: &NormBox, img_w: u32, img_h: u32) -> Result<CropPlan> {
    square_crop_rect_with(bbox, img_w, img_h, Overflow::Pad)
}

/// Plans a square crop around `bbox`.
///
/// The side is the longer pixel edge of the box. The square is centered on the
/// box and shifted (never shrunk) to stay inside the image. When the side
/// exceeds an image dimension, [`Overflow::Pad`] takes the full extent on that
/// axis and pads symmetrically (extra pixel after), while [`Overflow::Shrink`]
/// reduces the side to fit.
pub fn square_crop_rect_with(bbox: &NormBox, img_w: u32, img_h: u32, overflow: Overflow) -> Result<CropPlan> {
    let px = bbox_to_pixels(bbox, img_w, img_h)?;
    let mut side = px.w.max(px.h);
    if overflow == Overflow::Shrink {
        side = side.min(img_w).min(img_h);
    }
    let (x, w, left, right) = place_axis(px.x, px.right(), side, img_w);
    let (y, h, top, bottom) = place_axis(px.y, px.bottom(), side, img_h);
    Ok(CropPlan {
        rect: PixelRect::new(x, y, w, h),
        pad: Padding {
            left,
            top,
            right,
            bottom,
        },
        side,
    })
}

/// Translation that moves a mask's bounding rect to the center of a square canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlacement {
    pub mask_rect: PixelRect,
    pub canvas_side: u32,
    pub dx: i64,
    pub dy: i64,
    pub fill: u8,
}

impl MaskPlacement {
    /// Where the mask rect lands on the canvas.
    pub fn placed_rect(&self) -> PixelRect {
        PixelRect::new(
            (self.mask_rect.x as i64 + self.dx) as u32,
            (self.mask_rect.y as i64 + self.dy) as u32,
            self.mask_rect.w,
            self.mask_rect.h,
        )
    }

    /// Source pixel feeding canvas pixel `(cx, cy)`; `None` means the pixel
    /// takes the fill value.
    pub fn source_pixel(&self, cx: u32, cy: u32) -> Option<(u32, u32)> {
        let placed = self.placed_rect();
        let inside = cx >= placed.x && cx < placed.right() && cy >= placed.y && cy < placed.bottom();
        inside.then(|| ((cx as i64 - self.dx) as u32, (cy as i64 - self.dy) as u32))
    }
}

/// Centers `mask_rect` on a `canvas_side` square. Odd differences round toward
/// the smaller coordinate.
pub fn mask_center_plan(mask_rect: PixelRect, canvas_side: u32, fill: u8) -> Result<MaskPlacement> {
    if mask_rect.w == 0 || mask_rect.h == 0 {
        return Err(Error::ZeroArea);
    }
    if mask_rect.w > canvas_side || mask_rect.h > canvas_side {
        return Err(Error::MaskTooLarge {
            width: mask_rect.w,
            height: mask_rect.h,
            canvas: canvas_side,
        });
    }
    let target_x = ((canvas_side - mask_rect.w) / 2) as i64;
    let target_y = ((canvas_side - mask_rect.h) / 2) as i64;
    Ok(MaskPlacement {
        mask_rect,
        canvas_side,
        dx: target_x - mask_rect.x as i64,
        dy: target_y - mask_rect.y as i64,
        fill,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
}

/// Day runs over `[day_start, night_start)`; everything else is night.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayWindow {
    pub day_start: NaiveTime,
    pub night_start: NaiveTime,
}

impl Default for DayWindow {
    fn default() -> Self {
        Self {
            day_start: NaiveTime::from_hms_opt(6, 0, 0).unwrap(),
            night_start: NaiveTime::from_hms_opt(18, 0, 0).unwrap(),
        }
    }
}

impl DayWindow {
    pub fn bucket(&self, time: NaiveTime) -> TimeOfDay {
        let t = time.with_nanosecond(0).unwrap_or(time);
        if t >= self.day_start && t < self.night_start {
            TimeOfDay::Day
        } else {
            TimeOfDay::Night
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyAverageGroup {
    pub location_id: String,
    /// `None` for images without a timestamp (grouped per location only).
    pub date: Option<NaiveDate>,
    pub time_of_day: Option<TimeOfDay>,
    pub members: Vec<String>,
}

/// Groups images by (location, calendar day, day/night) for averaging.
/// Untimed images fall back to a per-location group; singletons are dropped.
/// Groups come out ordered by key, members in input order.
pub fn plan_empty_averages(images: &[ImageRecord], window: &DayWindow) -> Vec<EmptyAverageGroup> {
    type Key = (String, Option<NaiveDate>, Option<TimeOfDay>);
    let mut groups: BTreeMap<Key, Vec<String>> = BTreeMap::new();
    for img in images {
        let key = match img.timestamp {
            Some(ts) => (img.location_id.clone(), Some(ts.date()), Some(window.bucket(ts.time()))),
            None => (img.location_id.clone(), None, None),
        };
        groups.entry(key).or_default().push(img.image_id.clone());
    }
    groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|((location_id, date, time_of_day), members)| EmptyAverageGroup {
            location_id,
            date,
            time_of_day,
            members,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;

    fn det(cat: DetectionCategory, conf: f64) -> DetectionRecord {
        DetectionRecord::new("img", cat, conf, NormBox::new(0.1, 0.1, 0.2, 0.2)).unwrap()
    }

    #[test]
    fn primary_detection_rules() {
        assert!(select_primary_detection(&[], 0.2, false).is_none());
        let dets = [
            det(DetectionCategory::Animal, 0.60),
            det(DetectionCategory::Animal, 0.95),
        ];
        assert_eq!(select_primary_detection(&dets, 0.2, false).unwrap().confidence, 0.95);
        let person = [det(DetectionCategory::Person, 0.90)];
        assert!(select_primary_detection(&person, 0.2, true).is_none());
        assert!(select_primary_detection(&person, 0.2, false).is_some());
        assert!(select_primary_detection(&[det(DetectionCategory::Animal, 0.1)], 0.2, false).is_none());
    }

    /// Exhaustive check of the filter against a direct restatement of the rule.
    #[test]
    fn primary_detection_enumeration() {
        let cats = [
            DetectionCategory::Animal,
            DetectionCategory::Person,
            DetectionCategory::Vehicle,
        ];
        let confs = [0.0, 0.1, 0.2, 0.5, 0.9, 1.0];
        for &c1 in &cats {
            for &c2 in &cats {
                for &p1 in &confs {
                    for &p2 in &confs {
                        for &thr in &[0.0, 0.2, 0.5, 1.0] {
                            for animals_only in [false, true] {
                                let dets = [det(c1, p1), det(c2, p2)];
                                let ok = |c: DetectionCategory, p: f64| {
                                    p >= thr && (!animals_only || c == DetectionCategory::Animal)
                                };
                                let expected = match (ok(c1, p1), ok(c2, p2)) {
                                    (false, false) => None,
                                    (true, false) => Some(0),
                                    (false, true) => Some(1),
                                    (true, true) => Some(if p2 > p1 { 1 } else { 0 }),
                                };
                                let got = select_primary_detection(&dets, thr, animals_only)
                                    .map(|d| std::ptr::eq(d, &dets[1]) as usize);
                                assert_eq!(
                                    got, expected,
                                    "{c1:?} {p1} {c2:?} {p2} thr={thr} animals_only={animals_only}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crop_inside_image_shifts_without_padding() {
        let plan = square_crop_rect(&NormBox::new(0.1, 0.1, 0.2, 0.1), 1000, 800).unwrap();
        assert_eq!(plan.rect, PixelRect::new(100, 20, 200, 200));
        assert_eq!(plan.pad, Padding::default());
        assert_eq!(plan.side, 200);
    }

    #[test]
    fn crop_larger_than_image_pads_symmetrically() {
        let plan = square_crop_rect(&NormBox::new(0.0, 0.0, 1.0, 1.0), 800, 600).unwrap();
        assert_eq!(plan.rect, PixelRect::new(0, 0, 800, 600));
        assert_eq!(
            plan.pad,
            Padding {
                left: 0,
                top: 100,
                right: 0,
                bottom: 100
            }
        );
        assert_eq!(plan.side, 800);
        assert_eq!(plan.output_size(), (800, 800));
    }

    #[test]
    fn crop_near_edge_is_shifted_in() {
        // 50x10 box hugging the bottom-right corner of a 100x100 image
        let plan = square_crop_rect(&NormBox::new(0.5, 0.9, 0.5, 0.1), 100, 100).unwrap();
        assert_eq!(plan.rect, PixelRect::new(50, 50, 50, 50));
    }

    #[test]
    fn odd_padding_puts_extra_pixel_after() {
        let plan = square_crop_rect(&NormBox::new(0.0, 0.0, 1.0, 1.0), 101, 100).unwrap();
        assert_eq!(
            plan.pad,
            Padding {
                left: 0,
                top: 0,
                right: 0,
                bottom: 1
            }
        );
    }

    #[test]
    fn shrink_overflow_never_pads() {
        let plan = square_crop_rect_with(&NormBox::new(0.0, 0.0, 1.0, 1.0), 800, 600, Overflow::Shrink).unwrap();
        assert_eq!(plan.side, 600);
        assert_eq!(plan.rect, PixelRect::new(100, 0, 600, 600));
        assert_eq!(plan.pad, Padding::default());
    }

    #[test]
    fn zero_area_box_rejected() {
        assert!(matches!(
            square_crop_rect(&NormBox::new(0.5, 0.5, 0.0, 0.2), 100, 100),
            Err(Error::ZeroArea)
        ));
    }

    #[test]
    fn mask_centering() {
        let p = mask_center_plan(PixelRect::new(0, 0, 10, 10), 100, 0).unwrap();
        assert_eq!((p.dx, p.dy), (45, 45));
        assert_eq!(p.placed_rect(), PixelRect::new(45, 45, 10, 10));
        let again = mask_center_plan(p.placed_rect(), 100, 0).unwrap();
        assert_eq!((again.dx, again.dy), (0, 0));
        // odd difference rounds toward the smaller coordinate
        let odd = mask_center_plan(PixelRect::new(0, 0, 9, 10), 100, 0).unwrap();
        assert_eq!(odd.placed_rect().x, 45);
        assert!(matches!(
            mask_center_plan(PixelRect::new(0, 0, 120, 10), 100, 0),
            Err(Error::MaskTooLarge { .. })
        ));
    }

    #[test]
    fn mask_fill_outside_rect() {
        let p = mask_center_plan(PixelRect::new(5, 5, 2, 2), 10, 0).unwrap();
        assert_eq!(p.source_pixel(4, 4), Some((5, 5)));
        assert_eq!(p.source_pixel(5, 5), Some((6, 6)));
        assert_eq!(p.source_pixel(0, 0), None);
        let filled = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|&(x, y)| p.source_pixel(x, y).is_none())
            .count();
        assert_eq!(filled, 96);
    }

    fn timed(id: &str, loc: &str, ts: Option<&str>) -> ImageRecord {
        let mut r = ImageRecord::new(id, loc);
        r.timestamp = ts.map(|t| NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S").unwrap());
        r
    }

    #[test]
    fn empty_average_grouping() {
        let imgs = [
            timed("a", "L1", Some("2020-01-01 08:00:00")),
            timed("b", "L1", Some("2020-01-01 17:59:59")),
            timed("c", "L1", Some("2020-01-01 18:00:00")),
            timed("d", "L1", Some("2020-01-01 02:00:00")),
        ];
        let groups = plan_empty_averages(&imgs, &DayWindow::default());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].time_of_day, Some(TimeOfDay::Day));
        assert_eq!(groups[0].members, vec!["a", "b"]);
        assert_eq!(groups[1].members, vec!["c", "d"]);

        assert!(plan_empty_averages(&[timed("x", "L9", None)], &DayWindow::default()).is_empty());

        let untimed = [timed("p", "L2", None), timed("q", "L2", None)];
        let groups = plan_empty_averages(&untimed, &DayWindow::default());
        assert_eq!(groups.len(), 1);
        assert_eq!((groups[0].date, groups[0].time_of_day), (None, None));
    }
}

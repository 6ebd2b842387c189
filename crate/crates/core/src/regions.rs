//! Paragraph and table-cell region extraction.
//!
//! Table cells come from ruled lines: the page is binarized, horizontal and
//! vertical strokes are isolated with a morphological opening, and the white
//! components enclosed by those strokes become candidate cells. Cells are
//! visited smallest first and kept when they hold text and do not overlap a
//! cell kept earlier. Words left outside every kept cell are grouped into
//! paragraphs by a distance-threshold merge.

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::document::{Document, Entity, Word};
use crate::error::{Error, Result};
use crate::geometry::{hull, intersection_area, iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Paragraph,
    Tabular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub kind: RegionKind,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Tunables for region extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionConfig {
    /// Line kernel length as a fraction of the page extent along the line.
    pub kernel_fraction: f64,
    /// Lower bound on the kernel length in pixels.
    pub min_kernel: usize,
    /// Pixels strictly darker than this are ink.
    pub threshold: u8,
    /// Horizontal merge distance in multiples of the median word height.
    pub h_ths: f64,
    /// Vertical merge distance in multiples of the median word height.
    pub v_ths: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { kernel_fraction: 1.0 / 40.0, min_kernel: 10, threshold: 128, h_ths: 2.0, v_ths: 1.0 }
    }
}

/// Horizontal and vertical ruled-line pixels of a page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineMask {
    pub width: usize,
    pub height: usize,
    pub horizontal: Vec<bool>,
    pub vertical: Vec<bool>,
}

impl LineMask {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            horizontal: vec![false; width * height],
            vertical: vec![false; width * height],
        }
    }

    pub fn is_line(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        self.horizontal[i] || self.vertical[i]
    }

    pub fn is_empty(&self) -> bool {
        !self.horizontal.iter().chain(&self.vertical).any(|&b| b)
    }
}

pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

/// Marks every run of `true` at least `min_len` long. For a 1-D binary signal
/// this is exactly a morphological opening with a segment of that length.
fn keep_long_runs(line: &[bool], min_len: usize, mut mark: impl FnMut(usize)) {
    let mut start = None;
    for i in 0..=line.len() {
        let on = i < line.len() && line[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    (s..i).for_each(&mut mark);
                }
                start = None;
            }
            _ => {}
        }
    }
}

fn kernel_len(fraction: f64, extent: usize, min_kernel: usize) -> usize {
    ((fraction * extent as f64).ceil() as usize).max(min_kernel).max(1)
}

/// Isolates ruled lines: dark runs of at least the kernel length along rows
/// (horizontal mask) and along columns (vertical mask).
pub fn detect_lines(image: &GrayImage, cfg: &RegionConfig) -> LineMask {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut mask = LineMask::empty(w, h);
    if w == 0 || h == 0 {
        return mask;
    }
    let ink: Vec<bool> = image.as_raw().iter().map(|&p| p < cfg.threshold).collect();

    let kh = kernel_len(cfg.kernel_fraction, w, cfg.min_kernel);
    for y in 0..h {
        let row = &ink[y * w..(y + 1) * w];
        keep_long_runs(row, kh, |x| mask.horizontal[y * w + x] = true);
    }

    let kv = kernel_len(cfg.kernel_fraction, h, cfg.min_kernel);
    let mut column = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = ink[y * w + x];
        }
        keep_long_runs(&column, kv, |y| mask.vertical[y * w + x] = true);
    }
    mask
}

/// Bounding boxes of the 4-connected non-line components that do not touch the
/// page border. Pixel `(x, y)` spans `[x, x+1) x [y, y+1)`.
pub fn find_cell_boxes(mask: &LineMask) -> Vec<BBox> {
    let (w, h) = (mask.width, mask.height);
    if mask.is_empty() {
        return Vec::new();
    }
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut cells = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.is_line(start % w, start / w) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut touches_border = false;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                touches_border = true;
            }
            let mut visit = |nx: usize, ny: usize| {
                let j = ny * w + nx;
                if !seen[j] && !mask.is_line(nx, ny) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        if !touches_border {
            cells.push(BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64));
        }
    }
    cells
}

fn holds_word(cell: &BBox, words: &[Word]) -> bool {
    words.iter().any(|w| {
        let (cx, cy) = w.bbox.center();
        cell.contains_point(cx, cy)
    })
}

/// Keeps cells, smallest first, that contain a word center and have zero-area
/// overlap with every cell kept so far.
pub fn select_tabular_regions(cells: &[BBox], words: &[Word]) -> Vec<Region> {
    let mut order: Vec<&BBox> = cells.iter().collect();
    order.sort_by(|a, b| {
        a.area()
            .total_cmp(&b.area())
            .then(a.y0.total_cmp(&b.y0))
            .then(a.x0.total_cmp(&b.x0))
    });
    let mut kept: Vec<BBox> = Vec::new();
    for cell in order {
        if holds_word(cell, words) && kept.iter().all(|k| intersection_area(k, cell) == 0.0) {
            kept.push(*cell);
        }
    }
    kept.into_iter()
        .enumerate()
        .map(|(i, bbox)| Region { id: i as u32, kind: RegionKind::Tabular, bbox })
        .collect()
}

fn gap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a0.max(b0) - a1.min(b1)).max(0.0)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups word indices into paragraphs: two words merge when their horizontal
/// gap is within `h_ths` median heights and their vertical gap within `v_ths`
/// median heights. Clusters are the transitive closure of that relation.
pub fn paragraph_clusters(words: &[Word], h_ths: f64, v_ths: f64) -> Vec<Vec<usize>> {
    let unit = median(words.iter().map(|w| w.bbox.height()).collect());
    let (hmax, vmax) = (h_ths * unit, v_ths * unit);
    let mut parent: Vec<usize> = (0..words.len()).collect();
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let (a, b) = (&words[i].bbox, &words[j].bbox);
            if gap(a.x0, a.x1, b.x0, b.x1) <= hmax && gap(a.y0, a.y1, b.y0, b.y1) <= vmax {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; words.len()];
    for i in 0..words.len() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }
    clusters
}

/// Paragraph regions, one per cluster, ordered top-to-bottom then left-to-right.
pub fn cluster_paragraphs(words: &[Word], h_ths: f64, v_ths: f64) -> Vec<Region> {
    let mut boxes: Vec<BBox> = paragraph_clusters(words, h_ths, v_ths)
        .iter()
        .filter_map(|c| hull(&c.iter().map(|&i| words[i].bbox).collect::<Vec<_>>()))
        .collect();
    boxes.sort_by(|a, b| {
        a.y0.total_cmp(&b.y0)
            .then(a.x0.total_cmp(&b.x0))
            .then(a.y1.total_cmp(&b.y1))
            .then(a.x1.total_cmp(&b.x1))
    });
    boxes
        .into_iter()
        .enumerate()
        .map(|(i, bbox)| Region { id: i as u32, kind: RegionKind::Paragraph, bbox })
        .collect()
}

/// Table cells from the page image (when given), then paragraph regions for
/// exactly the words no kept cell covers. Ids are renumbered from zero.
pub fn extract_regions(doc: &Document, image: Option<&GrayImage>, cfg: &RegionConfig) -> Vec<Region> {
    let words = doc.words();
    let mut regions = match image {
        Some(img) => select_tabular_regions(&find_cell_boxes(&detect_lines(img, cfg)), &words),
        None => Vec::new(),
    };
    debug_assert!(pairwise_disjoint(&regions));

    let missing: Vec<Word> = words
        .into_iter()
        .filter(|w| {
            let (cx, cy) = w.bbox.center();
            !regions.iter().any(|r| r.bbox.contains_point(cx, cy))
        })
        .collect();
    if !missing.is_empty() {
        regions.extend(cluster_paragraphs(&missing, cfg.h_ths, cfg.v_ths));
    }
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i as u32;
    }
    regions
}

/// True when no two regions overlap with positive area.
pub fn pairwise_disjoint(regions: &[Region]) -> bool {
    regions.iter().enumerate().all(|(i, a)| {
        regions[i + 1..].iter().all(|b| intersection_area(&a.bbox, &b.bbox) == 0.0)
    })
}

/// Region with the highest IoU against the entity's span box. Ties go to the
/// smaller region, then the lower id. `None` when nothing overlaps.
pub fn assign_region(entity: &Entity, regions: &[Region]) -> Option<u32> {
    let mut best: Option<(f64, f64, u32)> = None;
    for r in regions {
        let score = iou(&entity.span_box, &r.bbox);
        if score <= 0.0 {
            continue;
        }
        let cand = (score, r.bbox.area(), r.id);
        let better = match best {
            None => true,
            Some((s, area, id)) => {
                score > s || (score == s && (cand.1 < area || (cand.1 == area && cand.2 < id)))
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|(_, _, id)| id)
}

/// Stores `regions` on the document and assigns each entity its region.
pub fn attach_regions(doc: &mut Document, regions: Vec<Region>) {
    for e in &mut doc.entities {
        e.region_id = assign_region(e, &regions);
    }
    doc.regions = regions;
}

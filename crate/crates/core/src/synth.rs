//! Synthetic forms with exact gold links, region ground truth, and ruled-line
//! page images.
//!
//! A page is a vertical stack of blocks in random order:
//!
//! - a ruled table whose every cell holds one question and its answer, either
//!   side by side or stacked;
//! - free-text lines holding one or two question/answer pairs each;
//! - free-text pairs with the answer on the line below the question;
//! - ambiguous groups: an answer with its question on the same line and two
//!   more unlinked questions stacked right above it, all in one paragraph;
//! - lone header/other distractor lines.
//!
//! Blocks are separated by more than the paragraph merge distance, so each
//! free-text pair or group ends up in a paragraph of its own.

use std::collections::BTreeSet;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::{merge_span_box, Document, Entity, Label, Word};
use crate::error::{Error, Result};
use crate::geometry::BBox;

const CHAR_W: f64 = 7.0;
const LINE_H: f64 = 12.0;
const WORD_GAP: f64 = 5.0;
const PAIR_GAP: f64 = 8.0;
const BLOCK_GAP: f64 = 30.0;
const MARGIN: f64 = 30.0;
const ROW_H: u32 = 48;
const RULE: u32 = 2;

const QUESTIONS: &[&str] = &[
    "Name:", "Date:", "Phone:", "Email:", "City:", "Zip:", "Total:", "Amount:", "Ref:", "Fax:", "Dept:", "Title:",
    "Code:", "Qty:", "Model:", "Serial:", "Street:", "State:", "Age:", "Sex:", "Item:", "Price:", "Brand:", "Job:",
];
const HEADERS: &[&str] = &["FORM", "SECTION", "REPORT", "NOTES", "SUMMARY", "DETAILS"];
const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "to", "sa", "vin", "der", "al", "po", "nu", "shi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub docs: usize,
    /// Inclusive range of table rows.
    pub rows: (usize, usize),
    /// Inclusive range of table columns.
    pub cols: (usize, usize),
    /// Chance that a page has a table.
    pub table_prob: f64,
    /// Inclusive range of free-text question/answer pairs per page.
    pub paragraph_pairs: (usize, usize),
    /// Inclusive range of free-text pairs with the answer on the line below
    /// its question.
    pub stacked_pairs: (usize, usize),
    pub ambiguous_groups: usize,
    pub distractors: usize,
    /// Maximum jitter, in pixels, applied to every word box edge.
    pub noise: f64,
    pub page_width: u32,
    pub page_height: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            docs: 40,
            rows: (2, 4),
            cols: (2, 3),
            table_prob: 1.0,
            paragraph_pairs: (2, 4),
            stacked_pairs: (0, 0),
            ambiguous_groups: 0,
            distractors: 2,
            noise: 1.0,
            page_width: 800,
            page_height: 1000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (usize, usize)| lo <= hi;
        if !ok_range(self.rows) || !ok_range(self.cols) || !ok_range(self.paragraph_pairs) || !ok_range(self.stacked_pairs) {
            return Err(Error::Config("synthetic ranges must have min <= max".into()));
        }
        if self.rows.0 == 0 || self.cols.0 == 0 {
            return Err(Error::Config("tables need at least one row and column".into()));
        }
        if self.cols.1 > 5 || self.page_width < 400 {
            return Err(Error::Config("at most 5 table columns on a page at least 400 px wide".into()));
        }
        if !(0.0..=1.0).contains(&self.table_prob) || !(0.0..=3.0).contains(&self.noise) {
            return Err(Error::Config("table_prob must be in [0, 1] and noise in [0, 3]".into()));
        }
        Ok(())
    }
}

/// A generated page: the annotated document (regions not yet attached), its
/// ruled-line image, and the interior box of every drawn table cell.
#[derive(Debug, Clone)]
pub struct SynthDoc {
    pub document: Document,
    pub image: GrayImage,
    pub cells: Vec<BBox>,
}

struct Page {
    rng: ChaCha8Rng,
    noise: f64,
    entities: Vec<Entity>,
    links: BTreeSet<(i64, i64)>,
    strokes: Vec<(u32, u32, u32, u32)>,
    cells: Vec<BBox>,
}

impl Page {
    fn jitter(&mut self, b: BBox) -> BBox {
        if self.noise == 0.0 {
            return BBox::new(b.x0.round(), b.y0.round(), b.x1.round(), b.y1.round());
        }
        // Annotation files store integer pixels.
        let n = self.noise;
        let mut j = || self.rng.random_range(-n..=n).round();
        let (dx0, dy0, dx1, dy1) = (j(), j(), j(), j());
        let (x0, y0) = (b.x0 + dx0, b.y0 + dy0);
        BBox::new(x0.round(), y0.round(), (b.x1 + dx1).max(x0 + 2.0).round(), (b.y1 + dy1).max(y0 + 2.0).round())
    }

    /// Adds an entity whose words start at `(x, y)`; returns its id and the
    /// nominal (pre-jitter) extent.
    fn entity(&mut self, label: Label, text: &str, x: f64, y: f64) -> (i64, BBox) {
        let id = self.entities.len() as i64;
        let mut words = Vec::new();
        let mut cx = x;
        for token in text.split(' ') {
            let nominal = BBox::new(cx, y, cx + CHAR_W * token.chars().count() as f64, y + LINE_H);
            let bbox = self.jitter(nominal);
            words.push(Word { text: token.to_string(), bbox });
            cx = nominal.x1 + WORD_GAP;
        }
        let extent = BBox::new(x, y, cx - WORD_GAP, y + LINE_H);
        let mut e = Entity {
            id,
            label,
            text: text.to_string(),
            words,
            annotated_box: extent,
            span_box: extent,
            region_id: None,
        };
        e.span_box = merge_span_box(&e);
        e.annotated_box = e.span_box;
        self.entities.push(e);
        (id, extent)
    }

    fn question(&mut self) -> String {
        QUESTIONS.choose(&mut self.rng).copied().unwrap_or("Name:").to_string()
    }

    fn answer(&mut self, max_chars: usize) -> String {
        loop {
            let text = match self.rng.random_range(0..3) {
                0 => (0..self.rng.random_range(3..=6)).map(|_| char::from(b'0' + self.rng.random_range(0..10))).collect(),
                1 => self.name(),
                _ => format!("{} {}", self.name(), self.name()),
            };
            if text.chars().count() <= max_chars {
                return text;
            }
        }
    }

    fn name(&mut self) -> String {
        let n = self.rng.random_range(1..=2);
        let mut s: String = (0..n).map(|_| *SYLLABLES.choose(&mut self.rng).unwrap()).collect();
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s
    }

    /// Question and answer side by side on one line starting at `x`.
    fn pair_on_line(&mut self, x: f64, y: f64, max_answer: usize) -> f64 {
        let qt = self.question();
        let (q, qb) = self.entity(Label::Question, &qt, x, y);
        let at = self.answer(max_answer);
        let (a, ab) = self.entity(Label::Answer, &at, qb.x1 + PAIR_GAP, y);
        self.links.insert((q, a));
        ab.x1
    }
}

/// Fields the block builders need besides the page itself.
struct Layout<'a> {
    spec: &'a SynthSpec,
}

impl Layout<'_> {
    fn table(&self, page: &mut Page, top: f64) -> f64 {
        let spec = self.spec;
        let rows = page.rng.random_range(spec.rows.0..=spec.rows.1) as u32;
        let cols = page.rng.random_range(spec.cols.0..=spec.cols.1) as u32;
        let usable = spec.page_width - 2 * MARGIN as u32;
        let cw = ((usable - RULE) / cols).min(200);
        let left = page.rng.random_range(MARGIN as u32..=spec.page_width - MARGIN as u32 - cols * cw - RULE);
        let top = top.ceil() as u32;
        for r in 0..=rows {
            page.strokes.push((left, top + r * ROW_H, left + cols * cw + RULE, top + r * ROW_H + RULE));
        }
        for c in 0..=cols {
            page.strokes.push((left + c * cw, top, left + c * cw + RULE, top + rows * ROW_H + RULE));
        }
        for r in 0..rows {
            for c in 0..cols {
                let x0 = (left + c * cw + RULE) as f64;
                let y0 = (top + r * ROW_H + RULE) as f64;
                let cell = BBox::new(x0, y0, (left + (c + 1) * cw) as f64, (top + (r + 1) * ROW_H) as f64);
                page.cells.push(cell);
                let room = ((cell.width() - 12.0) / CHAR_W) as usize;
                if page.rng.random_bool(0.5) {
                    let y = cell.y0 + (cell.height() - LINE_H) / 2.0;
                    let qt = page.question();
                    let (q, qb) = page.entity(Label::Question, &qt, x0 + 5.0, y);
                    let left_room = ((cell.x1 - 5.0 - qb.x1 - PAIR_GAP) / CHAR_W) as usize;
                    let at = page.answer(left_room.max(3));
                    let (a, _) = page.entity(Label::Answer, &at, qb.x1 + PAIR_GAP, y);
                    page.links.insert((q, a));
                } else {
                    let qt = page.question();
                    let (q, _) = page.entity(Label::Question, &qt, x0 + 5.0, cell.y0 + 6.0);
                    let at = page.answer(room);
                    let (a, _) = page.entity(Label::Answer, &at, x0 + 5.0, cell.y0 + 6.0 + LINE_H + 6.0);
                    page.links.insert((q, a));
                }
            }
        }
        (top + rows * ROW_H + RULE) as f64
    }

    /// One or two free-text pairs on a line.
    fn text_line(&self, page: &mut Page, top: f64, pairs: usize) -> f64 {
        let w = self.spec.page_width as f64;
        let mut x = MARGIN + page.rng.random_range(0..80) as f64;
        for _ in 0..pairs {
            let end = page.pair_on_line(x, top, 11);
            x = end + 60.0 + page.rng.random_range(0..60) as f64;
            if x + 200.0 > w - MARGIN {
                break;
            }
        }
        top + LINE_H
    }

    /// Question with its answer on the next line, close enough to share a
    /// paragraph.
    fn stacked(&self, page: &mut Page, top: f64) -> f64 {
        let x = MARGIN + page.rng.random_range(0..400) as f64;
        let qt = page.question();
        let (q, _) = page.entity(Label::Question, &qt, x, top);
        let at = page.answer(11);
        let (a, _) = page.entity(Label::Answer, &at, x, top + LINE_H + 6.0);
        page.links.insert((q, a));
        top + 2.0 * LINE_H + 6.0
    }

    /// An answer whose linked question is on its left, with two unlinked
    /// questions stacked above the answer.
    fn ambiguous(&self, page: &mut Page, top: f64) -> f64 {
        let x = MARGIN + page.rng.random_range(0..300) as f64;
        let step = LINE_H + 6.0;
        let answer_y = top + 2.0 * step;
        let qt = page.question();
        let (q, qb) = page.entity(Label::Question, &qt, x, answer_y);
        let ax = qb.x1 + PAIR_GAP;
        for k in 0..2 {
            let t = page.question();
            page.entity(Label::Question, &t, ax, top + k as f64 * step);
        }
        let at = page.answer(11);
        let (a, _) = page.entity(Label::Answer, &at, ax, answer_y);
        page.links.insert((q, a));
        answer_y + LINE_H
    }

    fn distractor(&self, page: &mut Page, top: f64) -> f64 {
        let x = MARGIN + page.rng.random_range(0..400) as f64;
        if page.rng.random_bool(0.5) {
            let t = HEADERS.choose(&mut page.rng).unwrap().to_string();
            page.entity(Label::Header, &t, x, top);
        } else {
            let t = page.name();
            page.entity(Label::Other, &t, x, top);
        }
        top + LINE_H
    }
}

enum Block {
    Table,
    Line(usize),
    Stacked,
    Ambiguous,
    Distractor,
}

fn render(width: u32, height: u32, strokes: &[(u32, u32, u32, u32)], words: &[Word]) -> GrayImage {
    let mut img = GrayImage::from_pixel(width, height, Luma([255]));
    let mut fill = |x0: u32, y0: u32, x1: u32, y1: u32| {
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                img.put_pixel(x, y, Luma([0]));
            }
        }
    };
    for &(x0, y0, x1, y1) in strokes {
        fill(x0, y0, x1, y1);
    }
    // Text as short vertical strokes, one per character: real ink, never long
    // enough to pass for a ruled line.
    for w in words {
        let n = w.text.chars().count().max(1);
        let step = w.bbox.width() / n as f64;
        let (y0, y1) = ((w.bbox.y0 + 2.0).round() as u32, (w.bbox.y1 - 1.0).round() as u32);
        for k in 0..n {
            let x = (w.bbox.x0 + step * k as f64 + 2.0).round() as u32;
            fill(x, y0, x + 2, y1);
        }
    }
    img
}

fn make_page(spec: &SynthSpec, doc_id: String, seed: u64) -> SynthDoc {
    let mut page = Page {
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: spec.noise,
        entities: Vec::new(),
        links: BTreeSet::new(),
        strokes: Vec::new(),
        cells: Vec::new(),
    };
    let layout = Layout { spec };

    let mut blocks = Vec::new();
    if page.rng.random_bool(spec.table_prob) {
        blocks.push(Block::Table);
    }
    let mut pairs = page.rng.random_range(spec.paragraph_pairs.0..=spec.paragraph_pairs.1);
    while pairs > 0 {
        let k = if pairs >= 2 && page.rng.random_bool(0.3) { 2 } else { 1 };
        blocks.push(Block::Line(k));
        pairs -= k;
    }
    let stacked = page.rng.random_range(spec.stacked_pairs.0..=spec.stacked_pairs.1);
    blocks.extend((0..stacked).map(|_| Block::Stacked));
    blocks.extend((0..spec.ambiguous_groups).map(|_| Block::Ambiguous));
    blocks.extend((0..spec.distractors).map(|_| Block::Distractor));
    blocks.shuffle(&mut page.rng);

    let mut y = MARGIN;
    for b in &blocks {
        let bottom = match *b {
            Block::Table => layout.table(&mut page, y),
            Block::Line(k) => layout.text_line(&mut page, y, k),
            Block::Stacked => layout.stacked(&mut page, y),
            Block::Ambiguous => layout.ambiguous(&mut page, y),
            Block::Distractor => layout.distractor(&mut page, y),
        };
        y = bottom + BLOCK_GAP + page.rng.random_range(0..10) as f64;
    }
    let height = spec.page_height.max((y + MARGIN).ceil() as u32);

    let mut entities = std::mem::take(&mut page.entities);
    entities.shuffle(&mut page.rng);
    let words: Vec<Word> = entities.iter().flat_map(|e| e.words.iter().cloned()).collect();
    let image = render(spec.page_width, height, &page.strokes, &words);
    SynthDoc {
        document: Document {
            doc_id,
            page_width: spec.page_width as f64,
            page_height: height as f64,
            entities,
            regions: Vec::new(),
            gold_links: page.links,
            image_path: None,
        },
        image,
        cells: page.cells,
    }
}

/// Generates `spec.docs` pages; page `i` depends only on `(seed, i)`.
pub fn make_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthDoc>> {
    spec.validate()?;
    Ok((0..spec.docs)
        .map(|i| {
            let page_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            make_page(spec, format!("synth-{seed}-{i:04}"), page_seed)
        })
        .collect())
}

/// Writes `<doc_id>.json` (FUNSD annotations), `<doc_id>.png`, and
/// `<doc_id>.cells` (ground-truth cell boxes as JSON) for every page.
pub fn write_dataset(docs: &[SynthDoc], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for d in docs {
        let id = &d.document.doc_id;
        let json = dir.join(format!("{id}.json"));
        let body = serde_json::to_string_pretty(&d.document.to_funsd_json()).expect("document serializes");
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        let png = dir.join(format!("{id}.png"));
        d.image.save(&png).map_err(|e| Error::Image(format!("{}: {e}", png.display())))?;
        let cells = dir.join(format!("{id}.cells"));
        let body = serde_json::to_string(&d.cells).expect("boxes serialize");
        std::fs::write(&cells, body).map_err(|e| Error::io(&cells, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_document;

    fn spec() -> SynthSpec {
        SynthSpec { docs: 5, rows: (2, 2), cols: (4, 4), paragraph_pairs: (0, 0), distractors: 0, ..Default::default() }
    }

    #[test]
    fn grid_spec_gives_exact_pair_counts() {
        let docs = make_synthetic_dataset(&spec(), 1).unwrap();
        assert_eq!(docs.len(), 5);
        for d in &docs {
            assert_eq!(d.document.gold_links.len(), 8);
            assert_eq!(d.document.questions().count(), 8);
            assert_eq!(d.document.answers().count(), 8);
            assert_eq!(d.cells.len(), 8);
        }
    }

    #[test]
    fn output_passes_ingest() {
        let s = SynthSpec { ambiguous_groups: 2, distractors: 3, ..Default::default() };
        for d in make_synthetic_dataset(&SynthSpec { docs: 6, ..s }, 9).unwrap() {
            let json = serde_json::to_vec(&d.document.to_funsd_json()).unwrap();
            let size = (d.document.page_width, d.document.page_height);
            let back = parse_document(&d.document.doc_id, &json, Some(size)).unwrap();
            assert!(back.warnings.is_empty());
            assert_eq!(back.document.gold_links, d.document.gold_links);
            assert_eq!(back.document.entities, d.document.entities);
            for e in &d.document.entities {
                let b = e.span_box;
                assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= size.0 && b.y1 <= size.1);
            }
        }
    }

    #[test]
    fn words_sit_inside_their_cells() {
        let s = SynthSpec { docs: 10, rows: (2, 5), cols: (2, 5), noise: 1.0, ..Default::default() };
        for d in make_synthetic_dataset(&s, 4).unwrap() {
            for &(q, a) in &d.document.gold_links {
                let qb = d.document.entity(q).unwrap().span_box;
                let ab = d.document.entity(a).unwrap().span_box;
                let in_cell = |b: BBox| d.cells.iter().position(|c| c.contains(&b));
                if let Some(c) = in_cell(qb) {
                    assert_eq!(in_cell(ab), Some(c));
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = make_synthetic_dataset(&spec(), 3).unwrap();
        let b = make_synthetic_dataset(&spec(), 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.document, y.document);
            assert_eq!(x.image, y.image);
        }
        let c = make_synthetic_dataset(&spec(), 4).unwrap();
        assert_ne!(a[0].document, c[0].document);
    }

    #[test]
    fn write_produces_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let docs = make_synthetic_dataset(&SynthSpec { docs: 2, ..spec() }, 2).unwrap();
        write_dataset(&docs, dir.path()).unwrap();
        let loaded = crate::dataset::load_dataset(dir.path(), None, &Default::default()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].gold_links, docs[0].document.gold_links);
        assert_eq!(loaded[0].page_width, 800.0);
        let tab = loaded[0].regions.iter().filter(|r| r.kind == crate::regions::RegionKind::Tabular).count();
        assert_eq!(tab, 8);
    }
}

//! FUNSD-style annotation ingestion and the in-memory document model.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hull, BBox};
use crate::regions::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Question,
    Answer,
    Header,
    Other,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.to_ascii_lowercase().as_str() {
            "question" => Some(Label::Question),
            "answer" => Some(Label::Answer),
            "header" => Some(Label::Header),
            "other" => Some(Label::Other),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Question => "question",
            Label::Answer => "answer",
            Label::Header => "header",
            Label::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: i64,
    pub label: Label,
    pub text: String,
    pub words: Vec<Word>,
    /// Box as written in the annotation file, used when there are no words.
    pub annotated_box: BBox,
    pub span_box: BBox,
    pub region_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub entities: Vec<Entity>,
    pub regions: Vec<Region>,
    /// Canonical `(question_id, answer_id)` pairs.
    pub gold_links: BTreeSet<(i64, i64)>,
    pub image_path: Option<PathBuf>,
}

/// One edge of the complete question/answer bipartite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidatePair {
    pub question: i64,
    pub answer: i64,
    pub linked: bool,
}

/// Result of parsing plus any non-fatal problems found on the way.
#[derive(Debug, Clone)]
pub struct ParseReport {
    pub document: Document,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawForm {
    form: Vec<RawEntity>,
}

#[derive(Deserialize)]
struct RawEntity {
    id: i64,
    #[serde(default)]
    text: String,
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default)]
    words: Vec<RawWord>,
    #[serde(default)]
    linking: Vec<[i64; 2]>,
}

#[derive(Deserialize)]
struct RawWord {
    #[serde(default)]
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (idx, chunk) in bytes.split(|&c| c == b'\n').enumerate() {
        if idx + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += chunk.len() + 1;
    }
    bytes.len()
}

/// Hull of the entity's word boxes, falling back to the annotated box when the
/// entity has no words.
pub fn merge_span_box(entity: &Entity) -> BBox {
    let boxes: Vec<BBox> = entity.words.iter().map(|w| w.bbox).collect();
    hull(&boxes).unwrap_or(entity.annotated_box)
}

/// Parses a FUNSD annotation file. `page_size` is `(width, height)`; when absent
/// the page is taken to be the extent of all boxes.
pub fn parse_document(
    doc_id: &str,
    bytes: &[u8],
    page_size: Option<(f64, f64)>,
) -> Result<ParseReport> {
    let raw: RawForm = serde_json::from_slice(bytes).map_err(|e| Error::Json {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut entities = Vec::with_capacity(raw.form.len());
    let mut index: HashMap<i64, usize> = HashMap::new();
    for item in &raw.form {
        let label = Label::parse(&item.label).ok_or_else(|| Error::UnknownLabel {
            id: item.id,
            label: item.label.clone(),
        })?;
        if index.insert(item.id, entities.len()).is_some() {
            return Err(Error::Validation(format!("duplicate entity id {}", item.id)));
        }
        let annotated_box = BBox::from(item.bbox);
        let words: Vec<Word> = item
            .words
            .iter()
            .map(|w| Word { text: w.text.clone(), bbox: BBox::from(w.bbox) })
            .collect();
        for bx in std::iter::once(&annotated_box).chain(words.iter().map(|w| &w.bbox)) {
            if !bx.is_valid() {
                return Err(Error::Validation(format!("entity {} has a non-finite box", item.id)));
            }
        }
        let mut entity = Entity {
            id: item.id,
            label,
            text: item.text.clone(),
            words,
            annotated_box,
            span_box: annotated_box,
            region_id: None,
        };
        entity.span_box = merge_span_box(&entity);
        entities.push(entity);
    }

    let mut warnings = Vec::new();
    let mut gold_links = BTreeSet::new();
    for item in &raw.form {
        for &[from, to] in &item.linking {
            for id in [from, to] {
                if !index.contains_key(&id) {
                    return Err(Error::DanglingLink { from, to, missing: id });
                }
            }
            let lf = entities[index[&from]].label;
            let lt = entities[index[&to]].label;
            match (lf, lt) {
                (Label::Question, Label::Answer) => {
                    gold_links.insert((from, to));
                }
                (Label::Answer, Label::Question) => {
                    gold_links.insert((to, from));
                }
                _ => warnings.push(format!(
                    "dropping link ({from}, {to}): labels {} -> {} are not question/answer",
                    lf.as_str(),
                    lt.as_str()
                )),
            }
        }
    }
    // FUNSD lists each link on both endpoints, so the same drop shows up twice.
    warnings.dedup();
    for w in &warnings {
        log::warn!("{doc_id}: {w}");
    }

    let (page_width, page_height) = page_size.unwrap_or_else(|| {
        entities
            .iter()
            .flat_map(|e| std::iter::once(e.span_box).chain(std::iter::once(e.annotated_box)))
            .fold((0.0f64, 0.0f64), |(w, h), b| (w.max(b.x1), h.max(b.y1)))
    });

    Ok(ParseReport {
        document: Document {
            doc_id: doc_id.to_string(),
            page_width,
            page_height,
            entities,
            regions: Vec::new(),
            gold_links,
            image_path: None,
        },
        warnings,
    })
}

impl Document {
    pub fn entity(&self, id: i64) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn questions(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.label == Label::Question)
    }

    pub fn answers(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.label == Label::Answer)
    }

    pub fn region(&self, id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Every word on the page. Entities without words contribute their span box
    /// as a single pseudo-word so that they still take part in region extraction.
    pub fn words(&self) -> Vec<Word> {
        self.entities
            .iter()
            .flat_map(|e| {
                if e.words.is_empty() {
                    vec![Word { text: e.text.clone(), bbox: e.span_box }]
                } else {
                    e.words.clone()
                }
            })
            .collect()
    }

    /// Serializes back to the FUNSD annotation layout. Each link is listed on
    /// both of its endpoints, as in the original dataset.
    pub fn to_funsd_json(&self) -> serde_json::Value {
        let form: Vec<serde_json::Value> = self
            .entities
            .iter()
            .map(|e| {
                let linking: Vec<[i64; 2]> = self
                    .gold_links
                    .iter()
                    .filter(|(q, a)| *q == e.id || *a == e.id)
                    .map(|&(q, a)| [q, a])
                    .collect();
                serde_json::json!({
                    "id": e.id,
                    "text": e.text,
                    "label": e.label.as_str(),
                    "box": <[f64; 4]>::from(e.annotated_box),
                    "words": e.words,
                    "linking": linking,
                })
            })
            .collect();
        serde_json::json!({ "form": form })
    }
}

/// The full question x answer cross product, each pair tagged with its gold label.
pub fn candidate_pairs(doc: &Document) -> Vec<CandidatePair> {
    let answers: Vec<i64> = doc.answers().map(|a| a.id).collect();
    doc.questions()
        .flat_map(|q| {
            answers.iter().map(move |&a| CandidatePair {
                question: q.id,
                answer: a,
                linked: doc.gold_links.contains(&(q.id, a)),
            })
        })
        .collect()
}

//! SVG overlays of entities, regions, and links.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::document::{Document, Label};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::regions::{Region, RegionKind};

pub const QUESTION_COLOR: &str = "#d62728";
pub const ANSWER_COLOR: &str = "#2ca02c";
pub const LINK_COLOR: &str = "#1f77b4";
pub const OTHER_COLOR: &str = "#7f7f7f";
pub const ENTITY_REGION_COLOR: &str = "#1f77b4";
pub const PARAGRAPH_COLOR: &str = "#d62728";
pub const TABULAR_COLOR: &str = "#2ca02c";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Questions red, answers green, links blue.
    #[default]
    Predictions,
    /// Entity boxes blue, paragraph regions red, tabular regions green.
    Regions,
}

impl std::str::FromStr for RenderMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "predictions" => Ok(RenderMode::Predictions),
            "regions" => Ok(RenderMode::Regions),
            other => Err(format!("unknown render mode {other:?} (predictions|regions)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntity {
    pub id: i64,
    pub label: Label,
    pub text: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLink {
    pub question: i64,
    pub answer: i64,
    pub score: Option<f64>,
}

/// Everything drawn on one page. Links refer to entity ids.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayScene {
    pub width: f64,
    pub height: f64,
    pub entities: Vec<SceneEntity>,
    pub regions: Vec<Region>,
    pub links: Vec<SceneLink>,
}

impl OverlayScene {
    /// Scene for a document with the given links. Fails if a link names an
    /// entity the document does not have.
    pub fn from_document(doc: &Document, links: &[SceneLink]) -> Result<Self> {
        let scene = Self {
            width: doc.page_width,
            height: doc.page_height,
            entities: doc
                .entities
                .iter()
                .map(|e| SceneEntity { id: e.id, label: e.label, text: e.text.clone(), bbox: e.span_box })
                .collect(),
            regions: doc.regions.clone(),
            links: links.to_vec(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let ids: HashMap<i64, ()> = self.entities.iter().map(|e| (e.id, ())).collect();
        for l in &self.links {
            for id in [l.question, l.answer] {
                if !ids.contains_key(&id) {
                    return Err(Error::Validation(format!(
                        "link ({}, {}) references unknown entity {id}",
                        l.question, l.answer
                    )));
                }
            }
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn rect(out: &mut String, b: &BBox, stroke: &str, width: f64, title: Option<&str>) {
    let _ = write!(
        out,
        r#"  <rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{stroke}" stroke-width="{width}""#,
        b.x0,
        b.y0,
        b.width(),
        b.height()
    );
    match title {
        Some(t) => {
            let _ = writeln!(out, "><title>{}</title></rect>", escape(t));
        }
        None => out.push_str("/>\n"),
    }
}

/// Renders the scene as a standalone SVG 1.1 document. Output depends only on
/// the scene.
pub fn render_overlay(scene: &OverlayScene, mode: RenderMode) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = scene.width,
        h = scene.height
    );
    let _ = writeln!(
        out,
        r#"  <rect x="0" y="0" width="{}" height="{}" fill="white" stroke="black" stroke-width="1"/>"#,
        scene.width, scene.height
    );
    match mode {
        RenderMode::Predictions => {
            for e in &scene.entities {
                let color = match e.label {
                    Label::Question => QUESTION_COLOR,
                    Label::Answer => ANSWER_COLOR,
                    _ => OTHER_COLOR,
                };
                rect(&mut out, &e.bbox, color, 1.5, Some(&format!("{} {}: {}", e.label.as_str(), e.id, e.text)));
            }
            let by_id: HashMap<i64, &SceneEntity> = scene.entities.iter().map(|e| (e.id, e)).collect();
            for l in &scene.links {
                let (Some(q), Some(a)) = (by_id.get(&l.question), by_id.get(&l.answer)) else {
                    continue;
                };
                let ((x1, y1), (x2, y2)) = (q.bbox.center(), a.bbox.center());
                let _ = write!(
                    out,
                    r#"  <line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{LINK_COLOR}" stroke-width="1.5""#
                );
                match l.score {
                    Some(s) => {
                        let _ = writeln!(out, "><title>{} -&gt; {} ({s:.4})</title></line>", l.question, l.answer);
                    }
                    None => out.push_str("/>\n"),
                }
            }
        }
        RenderMode::Regions => {
            for r in &scene.regions {
                let color = match r.kind {
                    RegionKind::Paragraph => PARAGRAPH_COLOR,
                    RegionKind::Tabular => TABULAR_COLOR,
                };
                let kind = match r.kind {
                    RegionKind::Paragraph => "paragraph",
                    RegionKind::Tabular => "tabular",
                };
                rect(&mut out, &r.bbox, color, 2.0, Some(&format!("{kind} region {}", r.id)));
            }
            for e in &scene.entities {
                rect(&mut out, &e.bbox, ENTITY_REGION_COLOR, 1.0, Some(&format!("{} {}", e.label.as_str(), e.id)));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: i64, label: Label, b: [f64; 4]) -> SceneEntity {
        SceneEntity { id, label, text: format!("t<{id}>"), bbox: b.into() }
    }

    fn scene() -> OverlayScene {
        OverlayScene {
            width: 200.0,
            height: 100.0,
            entities: vec![
                entity(1, Label::Question, [10., 10., 50., 20.]),
                entity(2, Label::Answer, [60., 10., 90., 20.]),
                entity(3, Label::Header, [10., 40., 50., 50.]),
            ],
            regions: vec![
                Region { id: 0, kind: RegionKind::Paragraph, bbox: [10., 10., 90., 20.].into() },
                Region { id: 1, kind: RegionKind::Tabular, bbox: [5., 35., 60., 55.].into() },
            ],
            links: vec![SceneLink { question: 1, answer: 2, score: Some(0.9) }],
        }
    }

    #[test]
    fn empty_scene_is_just_the_page() {
        let s = OverlayScene { width: 10.0, height: 20.0, entities: vec![], regions: vec![], links: vec![] };
        let svg = render_overlay(&s, RenderMode::Predictions);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 1);
        assert_eq!(svg.matches("<line").count(), 0);
        assert_eq!(render_overlay(&s, RenderMode::Regions), svg);
    }

    #[test]
    fn prediction_colors_and_one_line_per_link() {
        let svg = render_overlay(&scene(), RenderMode::Predictions);
        assert_eq!(svg.matches("<line").count(), 1);
        assert!(svg.contains(&format!(r#"x1="30" y1="15" x2="75" y2="15" stroke="{LINK_COLOR}""#)));
        assert_eq!(svg.matches(QUESTION_COLOR).count(), 1);
        assert_eq!(svg.matches(ANSWER_COLOR).count(), 1);
        assert!(svg.contains("t&lt;1&gt;"));
    }

    #[test]
    fn region_colors() {
        let svg = render_overlay(&scene(), RenderMode::Regions);
        assert_eq!(svg.matches("<line").count(), 0);
        assert_eq!(svg.matches(&format!("stroke=\"{PARAGRAPH_COLOR}\"")).count(), 1);
        assert_eq!(svg.matches(&format!("stroke=\"{TABULAR_COLOR}\"")).count(), 1);
        assert_eq!(svg.matches(&format!("stroke=\"{ENTITY_REGION_COLOR}\"")).count(), 3);
    }

    #[test]
    fn deterministic_and_checked() {
        assert_eq!(render_overlay(&scene(), RenderMode::Predictions), render_overlay(&scene(), RenderMode::Predictions));
        let mut bad = scene();
        bad.links.push(SceneLink { question: 1, answer: 9, score: None });
        assert!(bad.validate().is_err());
    }
}

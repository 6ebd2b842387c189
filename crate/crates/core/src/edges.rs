//! Spatial indicator vectors for question/answer pairs.

use crate::document::{Document, Entity};
use crate::geometry::spatial_relation;

/// The seven binary spatial indicators of a (question, answer) pair, in order:
///
/// | index | name       | meaning                                                     |
/// |-------|------------|-------------------------------------------------------------|
/// | 0     | `I_r`      | both entities sit in the same paragraph/tabular region      |
/// | 1     | `E_lr_r`   | same region, entity boxes are left-right                    |
/// | 2     | `E_tb_r`   | same region, entity boxes are top-bottom                    |
/// | 3     | `E_lr_nr`  | different regions, entity boxes are left-right              |
/// | 4     | `E_tb_nr`  | different regions, entity boxes are top-bottom              |
/// | 5     | `R_lr`     | different regions, the region boxes are left-right          |
/// | 6     | `R_tb`     | different regions, the region boxes are top-bottom          |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EdgeLink {
    pub bits: [bool; 7],
}

impl EdgeLink {
    pub const LEN: usize = 7;

    pub fn as_f64(&self) -> [f64; 7] {
        self.bits.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn is_zero(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_region(&self) -> bool {
        self.bits[0]
    }
}

impl std::fmt::Display for EdgeLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, b) in self.bits.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Encodes the spatial relation of `q` and `a`. Region boxes are looked up in
/// `doc` through each entity's `region_id`.
pub fn encode_link(doc: &Document, q: &Entity, a: &Entity) -> EdgeLink {
    let mut bits = [false; 7];
    let entities = spatial_relation(&q.span_box, &a.span_box);
    match (q.region_id, a.region_id) {
        (Some(rq), Some(ra)) if rq == ra => {
            bits[0] = true;
            bits[1] = entities.lr;
            bits[2] = entities.tb;
        }
        (rq, ra) => {
            bits[3] = entities.lr;
            bits[4] = entities.tb;
            let boxes = rq.and_then(|r| doc.region(r)).zip(ra.and_then(|r| doc.region(r)));
            if let Some((bq, ba)) = boxes {
                let regions = spatial_relation(&bq.bbox, &ba.bbox);
                bits[5] = regions.lr;
                bits[6] = regions.tb;
            }
        }
    }
    EdgeLink { bits }
}

/// Edge links for every (question, answer) pair in row-major order
/// (question index major, answer index minor).
pub fn encode_document(doc: &Document) -> Vec<(i64, i64, EdgeLink)> {
    let answers: Vec<&Entity> = doc.answers().collect();
    doc.questions()
        .flat_map(|q| answers.iter().map(move |a| (q.id, a.id, encode_link(doc, q, a))))
        .collect()
}

/// CSV dump of a document's edge links: `doc_id,question,answer,b0..b6,linked`.
pub fn edges_csv(doc: &Document, out: &mut String) {
    use std::fmt::Write;
    for (q, a, link) in encode_document(doc) {
        let linked = doc.gold_links.contains(&(q, a)) as u8;
        let _ = writeln!(out, "{},{q},{a},{link},{linked}", doc.doc_id);
    }
}

pub const CSV_HEADER: &str = "doc_id,question,answer,i_r,e_lr_r,e_tb_r,e_lr_nr,e_tb_nr,r_lr,r_tb,linked";

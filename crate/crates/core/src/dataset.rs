//! Loading annotated pages from disk, with regions attached.

use std::path::{Path, PathBuf};

use crate::document::{parse_document, Document};
use crate::error::{Error, Result};
use crate::regions::{attach_regions, extract_regions, load_gray_png, RegionConfig};

/// `<stem>.png` next to an annotation file, if present.
pub fn sibling_image(path: &Path) -> Option<PathBuf> {
    let png = path.with_extension("png");
    png.is_file().then_some(png)
}

/// Parses one annotation file and attaches its regions. The page image, when
/// one sits next to the file, supplies table cells and the default page size.
pub fn load_document(path: &Path, page_size: Option<(f64, f64)>, cfg: &RegionConfig) -> Result<Document> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let image_path = sibling_image(path);
    let image = image_path.as_deref().map(load_gray_png).transpose()?;
    let size = page_size.or_else(|| image.as_ref().map(|im| (im.width() as f64, im.height() as f64)));
    let mut doc = parse_document(&doc_id, &bytes, size)?.document;
    doc.image_path = image_path;
    let regions = extract_regions(&doc, image.as_ref(), cfg);
    attach_regions(&mut doc, regions);
    Ok(doc)
}

/// Annotation files under `path`: the file itself, or every `*.json` in the
/// directory sorted by name.
pub fn annotation_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dataset(path: &Path, page_size: Option<(f64, f64)>, cfg: &RegionConfig) -> Result<Vec<Document>> {
    annotation_files(path)?.iter().map(|p| load_document(p, page_size, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"form":[
        {"id":0,"label":"question","text":"A","box":[0,0,10,10],"words":[],"linking":[[0,1]]},
        {"id":1,"label":"answer","text":"B","box":[20,0,30,10],"words":[],"linking":[[0,1]]}]}"#;

    #[test]
    fn loads_sorted_directory() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.json", "a.json"] {
            std::fs::write(dir.path().join(name), ONE).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let docs = load_dataset(dir.path(), None, &RegionConfig::default()).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(docs[0].entities.iter().all(|e| e.region_id.is_some()));
        assert_eq!(docs[0].page_width, 30.0);
    }

    #[test]
    fn missing_path_is_an_io_error() {
        let err = load_dataset(Path::new("/nonexistent/dir"), None, &RegionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}

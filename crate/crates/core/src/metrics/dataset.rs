use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::loss::BBox;

use super::{Detection, GroundTruth, MetricsError};

/// One image's annotations and predictions, in absolute pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub stem: String,
    pub width: f64,
    pub height: f64,
    pub gts: Vec<GroundTruth>,
    pub preds: Vec<Detection>,
}

/// A labels/predictions pair of directories, loaded and denormalized.
/// Images are ordered by file stem, which fixes all confidence-tie
/// breaking downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn gts_by_image(&self) -> Vec<Vec<GroundTruth>> {
        self.images.iter().map(|r| r.gts.clone()).collect()
    }

    pub fn preds_by_image(&self) -> Vec<Vec<Detection>> {
        self.images.iter().map(|r| r.preds.clone()).collect()
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn read_lines(path: &Path) -> Result<Vec<String>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path_str(path),
        source,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn bad_line(path: &Path, line: usize, what: impl Into<String>) -> MetricsError {
    MetricsError::ParseLine {
        path: path_str(path),
        line,
        what: what.into(),
    }
}

fn field<T: FromStr>(
    tok: &str,
    what: &str,
    path: &Path,
    line: usize,
) -> Result<T, MetricsError> {
    tok.parse()
        .map_err(|_| bad_line(path, line, format!("bad {what} `{tok}`")))
}

fn unit_field(tok: &str, what: &str, path: &Path, line: usize) -> Result<f64, MetricsError> {
    let v: f64 = field(tok, what, path, line)?;
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(bad_line(
            path,
            line,
            format!("{what} must lie in [0, 1], got {tok}"),
        ));
    }
    Ok(v)
}

struct NormBox {
    class_id: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl NormBox {
    fn denorm(&self, width: f64, height: f64) -> BBox<f64> {
        BBox::from_cwh(self.cx * width, self.cy * height, self.w * width, self.h * height)
    }
}

fn parse_box(
    toks: &[&str],
    nc: Option<usize>,
    path: &Path,
    line: usize,
) -> Result<NormBox, MetricsError> {
    let class_id: usize = field(toks[0], "class id", path, line)?;
    if let Some(nc) = nc {
        if class_id >= nc {
            return Err(bad_line(
                path,
                line,
                format!("class id {class_id} out of range for {nc} classes"),
            ));
        }
    }
    let cx = unit_field(toks[1], "center x", path, line)?;
    let cy = unit_field(toks[2], "center y", path, line)?;
    let w = unit_field(toks[3], "width", path, line)?;
    let h = unit_field(toks[4], "height", path, line)?;
    if w <= 0.0 || h <= 0.0 {
        return Err(bad_line(path, line, "box width and height must be positive"));
    }
    Ok(NormBox { class_id, cx, cy, w, h })
}

/// Parses one labels file: a `W H` image-size line, then zero or more
/// `class cx cy w h` lines in normalized coordinates.
fn parse_labels(
    path: &Path,
    nc: Option<usize>,
) -> Result<(f64, f64, Vec<GroundTruth>), MetricsError> {
    let lines = read_lines(path)?;
    let mut rows = lines
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = rows
        .next()
        .ok_or_else(|| bad_line(path, 1, "expected image-size line `W H`"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(bad_line(
            path,
            header_line,
            format!("expected image-size line `W H`, got {} fields", toks.len()),
        ));
    }
    let width: f64 = field(toks[0], "image width", path, header_line)?;
    let height: f64 = field(toks[1], "image height", path, header_line)?;
    if !(width.is_finite() && width > 0.0 && height.is_finite() && height > 0.0) {
        return Err(bad_line(path, header_line, "image size must be positive"));
    }

    let mut gts = Vec::new();
    for (line, text) in rows {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(bad_line(
                path,
                line,
                format!("expected `class cx cy w h`, got {} fields", toks.len()),
            ));
        }
        let b = parse_box(&toks, nc, path, line)?;
        gts.push(GroundTruth {
            bbox: b.denorm(width, height),
            class_id: b.class_id,
        });
    }
    Ok((width, height, gts))
}

/// Parses one predictions file: zero or more `class conf cx cy w h` lines
/// in normalized coordinates. Sizes come from the paired labels file.
fn parse_preds(path: &Path, nc: Option<usize>, width: f64, height: f64) -> Result<Vec<Detection>, MetricsError> {
    let lines = read_lines(path)?;
    let mut preds = Vec::new();
    for (i, raw) in lines.iter().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 6 {
            return Err(bad_line(
                path,
                line,
                format!("expected `class conf cx cy w h`, got {} fields", toks.len()),
            ));
        }
        let confidence = unit_field(toks[1], "confidence", path, line)?;
        let boxed = [toks[0], toks[2], toks[3], toks[4], toks[5]];
        let b = parse_box(&boxed, nc, path, line)?;
        preds.push(Detection {
            bbox: b.denorm(width, height),
            class_id: b.class_id,
            confidence,
        });
    }
    Ok(preds)
}

fn txt_stems(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>, MetricsError> {
    let mut map = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|source| MetricsError::Io {
        path: path_str(dir),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| MetricsError::Io {
            path: path_str(dir),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem() {
                map.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(map)
}

/// Loads a dataset from a labels directory and a predictions directory.
///
/// Files pair by stem: `labels/img1.txt` with `preds/img1.txt`. A missing
/// predictions file means the detector produced nothing for that image; a
/// predictions file with no labels counterpart is an error, since it
/// usually means the directories are mismatched. When `nc` is given,
/// class ids are range-checked at parse time with file and line context.
pub fn load_dataset(
    labels_dir: &Path,
    preds_dir: &Path,
    nc: Option<usize>,
) -> Result<Dataset, MetricsError> {
    let labels = txt_stems(labels_dir)?;
    if labels.is_empty() {
        return Err(MetricsError::EmptyDataset {
            dir: path_str(labels_dir),
        });
    }
    let mut preds = txt_stems(preds_dir)?;

    let mut images = Vec::with_capacity(labels.len());
    for (stem, label_path) in &labels {
        let (width, height, gts) = parse_labels(label_path, nc)?;
        let dets = match preds.remove(stem) {
            Some(pred_path) => parse_preds(&pred_path, nc, width, height)?,
            None => Vec::new(),
        };
        images.push(ImageRecord {
            stem: stem.clone(),
            width,
            height,
            gts,
            preds: dets,
        });
    }
    if let Some(stem) = preds.into_keys().next() {
        return Err(MetricsError::OrphanPredictions { stem });
    }
    Ok(Dataset { images })
}

//! Task-tagged ground truth for one image, plus the line-oriented manifest
//! format that datasets ship in.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which annotation kinds a record (or a whole dataset) carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Classification,
    Detection,
    Segmentation,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Classification => "classification",
            Kind::Detection => "detection",
            Kind::Segmentation => "segmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Kind> {
        match s {
            "classification" => Ok(Kind::Classification),
            "detection" => Ok(Kind::Detection),
            "segmentation" => Ok(Kind::Segmentation),
            other => Err(Error::Format(format!("unknown kind {other:?}"))),
        }
    }
}

/// Axis-aligned box in pixel units, corners `(x_min, y_min)`-`(x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPx {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxPx {
    pub fn validate(&self, width: f64, height: f64) -> Result<()> {
        let ok = self.x_min >= 0.0
            && self.x_min < self.x_max
            && self.x_max <= width
            && self.y_min >= 0.0
            && self.y_min < self.y_max
            && self.y_max <= height;
        if ok {
            Ok(())
        } else {
            Err(Error::Range(format!("malformed box {self:?} for {width}x{height}")))
        }
    }

    pub fn iou(&self, other: &BoxPx) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let a = (self.x_max - self.x_min) * (self.y_max - self.y_min);
        let b = (other.x_max - other.x_min) * (other.y_max - other.y_min);
        if a + b - inter <= 0.0 {
            0.0
        } else {
            inter / (a + b - inter)
        }
    }
}

/// Ground truth (or parsed prediction) for one image. Lists are index-aligned
/// for the kinds that are present; absent kinds leave their list empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub classes: Vec<String>,
    pub boxes: Vec<BoxPx>,
    pub masks: Vec<Array2<u8>>,
    pub present_kinds: BTreeSet<Kind>,
}

impl AnnotationRecord {
    pub fn validate(&self, width: f64, height: f64) -> Result<()> {
        for b in &self.boxes {
            b.validate(width, height)?;
        }
        if self.present_kinds.contains(&Kind::Detection) && self.boxes.len() != self.classes.len()
        {
            return Err(Error::Validation("boxes and classes must be index-aligned".into()));
        }
        if self.present_kinds.contains(&Kind::Segmentation)
            && self.masks.len() != self.classes.len()
        {
            return Err(Error::Validation("masks and classes must be index-aligned".into()));
        }
        if !self.present_kinds.contains(&Kind::Detection) && !self.boxes.is_empty() {
            return Err(Error::Validation("boxes present for an absent kind".into()));
        }
        if !self.present_kinds.contains(&Kind::Segmentation) && !self.masks.is_empty() {
            return Err(Error::Validation("masks present for an absent kind".into()));
        }
        Ok(())
    }
}

/// One manifest row: an image file plus its annotation record. The mask file,
/// when present, is a label raster with pixel value `i + 1` for object `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_path: String,
    pub record: AnnotationRecord,
    pub mask_path: Option<String>,
}

pub const MANIFEST_HEADER: &str = "omnilens-manifest v1";

/// Serializes manifest entries into the canonical line format:
/// `image_id <TAB> image=... <TAB> classes=... <TAB> boxes=... <TAB> masks=... <TAB> kinds=...`.
pub fn manifest_lines(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let classes = e.record.classes.join(",");
        let boxes = e
            .record
            .boxes
            .iter()
            .map(|b| format!("{}:{}:{}:{}", b.x_min, b.y_min, b.x_max, b.y_max))
            .collect::<Vec<_>>()
            .join(";");
        let kinds = e
            .record
            .present_kinds
            .iter()
            .map(|k| k.as_str())
            .collect::<Vec<_>>()
            .join("|");
        out.push_str(&format!(
            "{}\timage={}\tclasses={}\tboxes={}\tmasks={}\tkinds={}\n",
            e.record.image_id,
            e.image_path,
            classes,
            boxes,
            e.mask_path.as_deref().unwrap_or(""),
            kinds,
        ));
    }
    out
}

/// Parses the canonical manifest format. Masks are left empty; callers load
/// them from the referenced label raster.
pub fn parse_manifest_lines(s: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = s.lines();
    match lines.next() {
        Some(MANIFEST_HEADER) => {}
        other => return Err(Error::Format(format!("bad manifest header: {other:?}"))),
    }
    let mut entries = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let image_id = fields
            .next()
            .ok_or_else(|| Error::Format(format!("empty manifest line: {line:?}")))?
            .to_string();
        let mut image_path = String::new();
        let mut classes = Vec::new();
        let mut boxes = Vec::new();
        let mut mask_path = None;
        let mut present_kinds = BTreeSet::new();
        for f in fields {
            let (key, val) = f
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad manifest field {f:?}")))?;
            match key {
                "image" => image_path = val.to_string(),
                "classes" => {
                    classes =
                        val.split(',').filter(|c| !c.is_empty()).map(String::from).collect()
                }
                "boxes" => {
                    for bs in val.split(';').filter(|b| !b.is_empty()) {
                        let parts: Vec<f64> = bs
                            .split(':')
                            .map(|p| {
                                p.parse()
                                    .map_err(|_| Error::Format(format!("bad box {bs:?}")))
                            })
                            .collect::<Result<_>>()?;
                        if parts.len() != 4 {
                            return Err(Error::Format(format!("bad box {bs:?}")));
                        }
                        boxes.push(BoxPx {
                            x_min: parts[0],
                            y_min: parts[1],
                            x_max: parts[2],
                            y_max: parts[3],
                        });
                    }
                }
                "masks" => {
                    if !val.is_empty() {
                        mask_path = Some(val.to_string());
                    }
                }
                "kinds" => {
                    for k in val.split('|').filter(|k| !k.is_empty()) {
                        present_kinds.insert(Kind::parse(k)?);
                    }
                }
                other => return Err(Error::Format(format!("unknown manifest key {other:?}"))),
            }
        }
        entries.push(ManifestEntry {
            image_path,
            record: AnnotationRecord {
                image_id,
                classes,
                boxes,
                masks: Vec::new(),
                present_kinds,
            },
            mask_path,
        });
    }
    Ok(entries)
}

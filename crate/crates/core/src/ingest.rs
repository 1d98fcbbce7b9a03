//! COCO-subset annotation files, COCO results files and binary PPM images.

use crate::augment::ImageTensor;
use crate::error::{Error, Result};
use crate::evalap::{GroundTruthSet, ImageDetection};
use crate::geometry::BBox;
use crate::nms::Detection;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    /// COCO `[x, y, w, h]`.
    pub bbox: [f64; 4],
    pub category_id: u32,
    /// Label weight for mixed samples; absent means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl Annotation {
    pub fn to_box(&self) -> BBox {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl DatasetIndex {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_str(s)?;
        index.validate()?;
        Ok(index)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks id uniqueness, referential integrity and box sizes.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for im in &self.images {
            if !image_ids.insert(im.id) {
                return Err(Error::Dataset(format!("duplicate image id {}", im.id)));
            }
        }
        let mut cat_ids = HashSet::new();
        for c in &self.categories {
            if !cat_ids.insert(c.id) {
                return Err(Error::Dataset(format!("duplicate category id {}", c.id)));
            }
        }
        let mut ann_ids = HashSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.id) {
                return Err(Error::Dataset(format!("duplicate annotation id {}", a.id)));
            }
            if !image_ids.contains(&a.image_id) {
                return Err(Error::Dataset(format!(
                    "annotation {} references missing image id {}",
                    a.id, a.image_id
                )));
            }
            if !cat_ids.contains(&a.category_id) {
                return Err(Error::Dataset(format!(
                    "annotation {} references missing category id {}",
                    a.id, a.category_id
                )));
            }
            if a.bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("annotation {} has a non-finite bbox", a.id)));
            }
            if a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
                return Err(Error::Dataset(format!(
                    "annotation {} has negative size {}x{}",
                    a.id, a.bbox[2], a.bbox[3]
                )));
            }
            if let Some(w) = a.weight {
                if !(w > 0.0 && w <= 1.0) {
                    return Err(Error::Dataset(format!("annotation {} has weight {w} outside (0, 1]", a.id)));
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    pub fn ground_truth(&self) -> GroundTruthSet {
        let mut gt = GroundTruthSet::new();
        for im in &self.images {
            gt.add_image(im.id);
        }
        for a in &self.annotations {
            gt.add(a.image_id, a.to_box(), a.category_id);
        }
        gt
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetIndex::from_json_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

pub fn save_annotations(index: &DatasetIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, index.to_json_string()? + "\n").map_err(|e| Error::io(path, e))
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDetection {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl CocoDetection {
    pub fn to_image_detection(&self) -> ImageDetection {
        let [x, y, w, h] = self.bbox;
        ImageDetection {
            image_id: self.image_id,
            det: Detection::new(BBox::from_xywh(x, y, w, h), self.score, self.category_id),
        }
    }

    pub fn from_image_detection(d: &ImageDetection) -> Self {
        Self {
            image_id: d.image_id,
            category_id: d.det.class_id,
            bbox: d.det.bbox.to_xywh(),
            score: d.det.score,
        }
    }
}

pub fn parse_detections(s: &str) -> Result<Vec<ImageDetection>> {
    let raw: Vec<CocoDetection> = serde_json::from_str(s)?;
    for (i, d) in raw.iter().enumerate() {
        if d.bbox.iter().any(|v| !v.is_finite()) || d.bbox[2] < 0.0 || d.bbox[3] < 0.0 {
            return Err(Error::Dataset(format!("detection #{i} has an invalid bbox {:?}", d.bbox)));
        }
        if !d.score.is_finite() {
            return Err(Error::Dataset(format!("detection #{i} has a non-finite score")));
        }
    }
    Ok(raw.iter().map(CocoDetection::to_image_detection).collect())
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<ImageDetection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// Decodes a binary `P6` PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::ImageFormat("truncated PPM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(Error::ImageFormat(format!("expected P6 magic, found '{magic}'")));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse()
            .map_err(|_| Error::ImageFormat(format!("bad PPM {what} '{t}'")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::ImageFormat(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::ImageFormat(format!(
            "truncated PPM payload: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ))
    })?;
    ImageTensor::new(width, height, raster.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn encode_ppm(img: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

//! Dataset model, format readers and writers, stratified subsetting and
//! augmentation planning.

mod coco;
mod plan;
mod subset;
mod yolo;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cellbank::CellType;
use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

pub use plan::{plan_augmentation, AugmentationPlan, PlanEntry, PlannedRegion, Targeting};
pub use subset::sample_subset;

pub const DATASET_SCHEMA: &str = "saic-dataset/1";

/// Tail threshold used when none is configured.
pub const DEFAULT_TAIL_THRESHOLD: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CanonicalJson,
    CocoJson,
    YoloTxt,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_json" | "canonical" => Ok(DatasetFormat::CanonicalJson),
            "coco_json" | "coco" => Ok(DatasetFormat::CocoJson),
            "yolo_txt" | "yolo" => Ok(DatasetFormat::YoloTxt),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
}

/// Axis-aligned box in (possibly fractional) pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoxF {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BoxF { x, y, w, h }
    }
}

impl From<BoxF> for [f64; 4] {
    fn from(b: BoxF) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl From<BBox> for BoxF {
    fn from(b: BBox) -> Self {
        BoxF {
            x: b.x as f64,
            y: b.y as f64,
            w: b.w as f64,
            h: b.h as f64,
        }
    }
}

/// COCO-style uncompressed run-length encoding: column-major, alternating
/// runs starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn decode(&self) -> Result<Vec<bool>> {
        let [h, w] = self.size;
        let n = h as usize * w as usize;
        let mut out = vec![false; n];
        let mut pos = 0usize;
        for (i, &run) in self.counts.iter().enumerate() {
            let end = pos + run as usize;
            if end > n {
                return Err(Error::schema("mask.rle.counts", "runs exceed mask size"));
            }
            if i % 2 == 1 {
                out[pos..end].iter_mut().for_each(|v| *v = true);
            }
            pos = end;
        }
        Ok(out)
    }

    /// Encode a column-major boolean mask.
    pub fn encode(height: u32, width: u32, column_major: &[bool]) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &v in column_major {
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            size: [height, width],
            counts,
        }
    }

    /// RLE over a full `width x height` image of a mask placed at `bbox`.
    pub fn from_placed_mask(width: u32, height: u32, mask: &Raster, bbox: BBox) -> Rle {
        let mut col = vec![false; width as usize * height as usize];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y, 0) > 127 {
                    let gx = (bbox.x + x as i64) as usize;
                    let gy = (bbox.y + y as i64) as usize;
                    col[gx * height as usize + gy] = true;
                }
            }
        }
        Rle::encode(height, width, &col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    /// One or more rings of `x0, y0, x1, y1, ...` in image pixels.
    Polygon(Vec<Vec<f64>>),
    Rle(Rle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub bbox: BoxF,
    pub category: String,
    pub cell_type: CellType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskShape>,
    pub area: f64,
}

impl Annotation {
    /// Integer box covering the annotation, clipped to the image.
    pub fn pixel_bbox(&self, width: u32, height: u32) -> Result<BBox> {
        let x0 = self.bbox.x.floor().max(0.0) as i64;
        let y0 = self.bbox.y.floor().max(0.0) as i64;
        let x1 = ((self.bbox.x + self.bbox.w).ceil() as i64).min(width as i64);
        let y1 = ((self.bbox.y + self.bbox.h).ceil() as i64).min(height as i64);
        let b = BBox::new(x0, y0, (x1 - x0).max(0), (y1 - y0).max(0));
        b.check_inside(width, height)?;
        Ok(b)
    }

    /// Rasterise the annotation mask inside `bbox`. `None` when the
    /// annotation carries no mask.
    pub fn mask_raster(&self, width: u32, height: u32, bbox: BBox) -> Result<Option<Raster>> {
        let Some(shape) = &self.mask else {
            return Ok(None);
        };
        let (bw, bh) = (bbox.w as u32, bbox.h as u32);
        let raster = match shape {
            MaskShape::Polygon(rings) => Raster::from_fn(bw, bh, 1, |x, y, _| {
                let px = bbox.x as f64 + x as f64 + 0.5;
                let py = bbox.y as f64 + y as f64 + 0.5;
                if point_in_rings(rings, px, py) {
                    255
                } else {
                    0
                }
            }),
            MaskShape::Rle(rle) => {
                if rle.size != [height, width] {
                    return Err(Error::schema(
                        "mask.rle.size",
                        format!("{:?} does not match image {height}x{width}", rle.size),
                    ));
                }
                let bits = rle.decode()?;
                Raster::from_fn(bw, bh, 1, |x, y, _| {
                    let gx = bbox.x as usize + x as usize;
                    let gy = bbox.y as usize + y as usize;
                    if bits[gx * height as usize + gy] {
                        255
                    } else {
                        0
                    }
                })
            }
        };
        Ok(Some(raster))
    }
}

/// Even-odd rule over all rings.
fn point_in_rings(rings: &[Vec<f64>], px: f64, py: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        let pts: Vec<(f64, f64)> = ring.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: String,
    pub categories: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<Annotation>,
    /// Directory image paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Dataset {
    pub fn new(categories: Vec<String>) -> Dataset {
        Dataset {
            schema: DATASET_SCHEMA.to_string(),
            categories,
            ..Default::default()
        }
    }

    pub fn image_path(&self, entry: &ImageEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for a in &self.annotations {
            *out.entry(a.category.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Check referential integrity, box bounds, areas and categories.
    pub fn validate(&self) -> Result<()> {
        if self.schema != DATASET_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected {DATASET_SCHEMA:?}, found {:?}", self.schema),
            ));
        }
        let mut ids = HashSet::new();
        for im in &self.images {
            if !ids.insert(im.id.as_str()) {
                return Err(Error::schema("images.id", format!("duplicate image id {:?}", im.id)));
            }
            if im.width == 0 || im.height == 0 {
                return Err(Error::schema(
                    "images.width",
                    format!("image {:?} has zero size", im.id),
                ));
            }
        }
        let cats: BTreeSet<&str> = self.categories.iter().map(String::as_str).collect();
        for (i, a) in self.annotations.iter().enumerate() {
            let Some(im) = self.images.iter().find(|im| im.id == a.image_id) else {
                return Err(Error::schema(
                    "annotations.image_id",
                    format!("annotation {i} references missing image {:?}", a.image_id),
                ));
            };
            if !cats.contains(a.category.as_str()) {
                return Err(Error::schema(
                    "annotations.category",
                    format!("annotation {i} has unknown category {:?}", a.category),
                ));
            }
            let b = a.bbox;
            let eps = 1e-6;
            if !(b.w > 0.0 && b.h > 0.0)
                || b.x < -eps
                || b.y < -eps
                || b.x + b.w > im.width as f64 + eps
                || b.y + b.h > im.height as f64 + eps
            {
                return Err(Error::schema(
                    "annotations.bbox",
                    format!(
                        "annotation {i} box {:?} outside {}x{}",
                        <[f64; 4]>::from(b),
                        im.width,
                        im.height
                    ),
                ));
            }
            if a.area.is_nan() || a.area <= 0.0 {
                return Err(Error::schema(
                    "annotations.area",
                    format!("annotation {i} has area {}", a.area),
                ));
            }
        }
        Ok(())
    }
}

/// Options shared by the readers.
#[derive(Debug, Clone, Default)]
pub struct ImportOptions {
    /// Maps raw category labels (names or numeric ids as strings) to canonical
    /// names. Labels absent from the dataset's own category list are rejected
    /// unless mapped here.
    pub category_map: Option<BTreeMap<String, String>>,
}

pub fn import_dataset(path: &Path, format: DatasetFormat, options: &ImportOptions) -> Result<Dataset> {
    let ds = match format {
        DatasetFormat::CanonicalJson => read_canonical(path, options)?,
        DatasetFormat::CocoJson => coco::read(path, options)?,
        DatasetFormat::YoloTxt => yolo::read(path, options)?,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn export_dataset(dataset: &Dataset, format: DatasetFormat, path: &Path) -> Result<()> {
    dataset.validate()?;
    match format {
        DatasetFormat::CanonicalJson => write_canonical(dataset, path),
        DatasetFormat::CocoJson => coco::write(dataset, path),
        DatasetFormat::YoloTxt => yolo::write(dataset, path),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::parse(path, None, format!("cannot read: {e}")))
}

fn base_dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_canonical(path: &Path, options: &ImportOptions) -> Result<Dataset> {
    let text = read_text(path)?;
    let mut ds: Dataset = serde_json::from_str(&text).map_err(|e| Error::parse(path, Some(e.line()), e))?;
    ds.base_dir = base_dir_of(path);
    if let Some(map) = &options.category_map {
        for a in &mut ds.annotations {
            if let Some(to) = map.get(&a.category) {
                a.category = to.clone();
            }
        }
        for c in &mut ds.categories {
            if let Some(to) = map.get(c) {
                *c = to.clone();
            }
        }
    }
    Ok(ds)
}

/// Canonical serialisation: key-sorted, pretty-printed JSON with a trailing newline.
pub fn canonical_json(dataset: &Dataset) -> String {
    let value = serde_json::to_value(dataset).expect("dataset serialises");
    serde_json::to_string_pretty(&value).expect("json value serialises") + "\n"
}

fn write_canonical(dataset: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, canonical_json(dataset)).map_err(|e| Error::io(path, e))
}

/// Map a raw label to a canonical category name.
fn resolve_category(raw: &str, known: &[String], options: &ImportOptions, field: &str) -> Result<String> {
    if let Some(map) = &options.category_map {
        if let Some(to) = map.get(raw) {
            return Ok(to.clone());
        }
    }
    if known.iter().any(|k| k == raw) {
        return Ok(raw.to_string());
    }
    Err(Error::schema(field, format!("unknown category {raw:?}")))
}

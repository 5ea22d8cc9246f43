//! COCO-style JSON: `images`, `annotations`, `categories` arrays with polygon
//! or uncompressed RLE segmentation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{base_dir_of, read_text, resolve_category, Annotation, Dataset, ImageEntry, ImportOptions, MaskShape, Rle};
use crate::cellbank::CellType;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: Value,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: Value,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<Value>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell_type: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn id_string(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::schema("images.id", format!("unsupported id {other}"))),
    }
}

fn parse_segmentation(v: &Value) -> Result<Option<MaskShape>> {
    match v {
        Value::Null => Ok(None),
        Value::Array(rings) if rings.is_empty() => Ok(None),
        Value::Array(_) => {
            let rings: Vec<Vec<f64>> = serde_json::from_value(v.clone())
                .map_err(|e| Error::schema("annotations.segmentation", e.to_string()))?;
            Ok(Some(MaskShape::Polygon(rings)))
        }
        Value::Object(obj) => {
            if obj.get("counts").is_some_and(Value::is_string) {
                return Err(Error::schema(
                    "annotations.segmentation.counts",
                    "compressed RLE strings are not supported; use uncompressed counts",
                ));
            }
            let rle: Rle = serde_json::from_value(v.clone())
                .map_err(|e| Error::schema("annotations.segmentation", e.to_string()))?;
            Ok(Some(MaskShape::Rle(rle)))
        }
        other => Err(Error::schema(
            "annotations.segmentation",
            format!("unsupported value {other}"),
        )),
    }
}

pub(super) fn read(path: &Path, options: &ImportOptions) -> Result<Dataset> {
    let text = read_text(path)?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, Some(e.line()), e))?;

    let names: BTreeMap<u64, String> = file.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    let mut known: Vec<String> = file.categories.iter().map(|c| c.name.clone()).collect();
    if let Some(map) = &options.category_map {
        known.extend(map.values().cloned());
        for c in &mut known {
            if let Some(to) = map.get(c.as_str()) {
                *c = to.clone();
            }
        }
    }
    let mut ds = Dataset::new(Vec::new());
    ds.base_dir = base_dir_of(path);
    for im in &file.images {
        ds.images.push(ImageEntry {
            id: id_string(&im.id)?,
            path: im.file_name.clone(),
            width: im.width,
            height: im.height,
        });
    }
    let mut used = Vec::new();
    for (i, a) in file.annotations.iter().enumerate() {
        let raw = names
            .get(&a.category_id)
            .cloned()
            .unwrap_or_else(|| a.category_id.to_string());
        let category = resolve_category(&raw, &known, options, "annotations.category_id")
            .map_err(|e| e.context(format!("annotation {i}")))?;
        let cell_type = match a.cell_type.as_deref() {
            Some(s) => CellType::parse(s)
                .ok_or_else(|| Error::schema("annotations.cell_type", format!("unknown cell type {s:?}")))?,
            None if a.iscrowd == 1 => CellType::Clumps,
            None => CellType::SingleCell,
        };
        let mask = match &a.segmentation {
            Some(v) => parse_segmentation(v)?,
            None => None,
        };
        let area = if a.area > 0.0 { a.area } else { a.bbox[2] * a.bbox[3] };
        if !used.contains(&category) {
            used.push(category.clone());
        }
        ds.annotations.push(Annotation {
            image_id: id_string(&a.image_id)?,
            bbox: a.bbox.into(),
            category,
            cell_type,
            mask,
            area,
        });
    }
    // category order follows the file's category list, then any mapped extras
    let mut categories: Vec<String> = Vec::new();
    for c in file.categories.iter().map(|c| {
        options
            .category_map
            .as_ref()
            .and_then(|m| m.get(&c.name).cloned())
            .unwrap_or_else(|| c.name.clone())
    }) {
        if !categories.contains(&c) {
            categories.push(c);
        }
    }
    for c in used {
        if !categories.contains(&c) {
            categories.push(c);
        }
    }
    ds.categories = categories;
    Ok(ds)
}

pub(super) fn write(dataset: &Dataset, path: &Path) -> Result<()> {
    let cat_id: BTreeMap<&str, u64> = dataset
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as u64 + 1))
        .collect();
    let file = CocoFile {
        images: dataset
            .images
            .iter()
            .map(|im| CocoImage {
                id: Value::String(im.id.clone()),
                file_name: im.path.clone(),
                width: im.width,
                height: im.height,
            })
            .collect(),
        annotations: dataset
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| CocoAnnotation {
                id: Some(i as u64 + 1),
                image_id: Value::String(a.image_id.clone()),
                category_id: cat_id[a.category.as_str()],
                bbox: a.bbox.into(),
                area: a.area,
                segmentation: a.mask.as_ref().map(|m| match m {
                    MaskShape::Polygon(rings) => serde_json::to_value(rings).unwrap(),
                    MaskShape::Rle(rle) => serde_json::to_value(rle).unwrap(),
                }),
                iscrowd: 0,
                cell_type: Some(a.cell_type.as_str().to_string()),
            })
            .collect(),
        categories: dataset
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| CocoCategory {
                id: i as u64 + 1,
                name: c.clone(),
            })
            .collect(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_string_pretty(&file).expect("coco serialises");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

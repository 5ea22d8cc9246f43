//! YOLO layout: `images/<stem>.<ext>`, `labels/<stem>.txt` with one
//! `class cx cy w h` line per box (normalised, 6 decimals) and an optional
//! `classes.txt` with one category name per line.

use std::path::{Path, PathBuf};

use super::{resolve_category, Annotation, BoxF, Dataset, ImageEntry, ImportOptions};
use crate::cellbank::CellType;
use crate::error::{Error, Result};

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::parse(dir, None, format!("cannot list images: {e}")))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTS.contains(&e.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// One label line as `(class, cx, cy, w, h)`.
pub(crate) fn parse_line(line: &str) -> std::result::Result<(String, [f64; 4]), String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let mut vals = [0.0; 4];
    for (v, f) in vals.iter_mut().zip(&fields[1..]) {
        *v = f.parse::<f64>().map_err(|e| format!("{f:?}: {e}"))?;
    }
    Ok((fields[0].to_string(), vals))
}

pub(crate) fn format_line(class: usize, b: BoxF, width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        class,
        (b.x + b.w / 2.0) / w,
        (b.y + b.h / 2.0) / h,
        b.w / w,
        b.h / h
    )
}

pub(super) fn read(root: &Path, options: &ImportOptions) -> Result<Dataset> {
    let classes_path = root.join("classes.txt");
    let classes: Vec<String> = if classes_path.exists() {
        std::fs::read_to_string(&classes_path)
            .map_err(|e| Error::io(&classes_path, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        Vec::new()
    };
    let mut known = classes.clone();
    if let Some(map) = &options.category_map {
        known.extend(map.values().cloned());
    }

    let mut ds = Dataset::new(Vec::new());
    ds.base_dir = root.to_path_buf();
    for img_path in list_images(&root.join("images"))? {
        let stem = img_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let (width, height) = image::image_dimensions(&img_path)
            .map_err(|e| Error::parse(&img_path, None, format!("cannot read image size: {e}")))?;
        let file_name = img_path.file_name().unwrap().to_string_lossy();
        ds.images.push(ImageEntry {
            id: stem.clone(),
            path: format!("images/{file_name}"),
            width,
            height,
        });
        let label_path = root.join("labels").join(format!("{stem}.txt"));
        if !label_path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (class, [cx, cy, w, h]) =
                parse_line(line).map_err(|m| Error::parse(&label_path, Some(lineno + 1), m))?;
            // numeric class -> name through classes.txt, otherwise the map
            let raw = class
                .parse::<usize>()
                .ok()
                .and_then(|i| classes.get(i).cloned())
                .unwrap_or_else(|| class.clone());
            let category = resolve_category(&raw, &known, options, "labels.class")
                .map_err(|e| e.context(format!("{} line {}", label_path.display(), lineno + 1)))?;
            let (fw, fh) = (width as f64, height as f64);
            let bbox = BoxF {
                x: (cx - w / 2.0) * fw,
                y: (cy - h / 2.0) * fh,
                w: w * fw,
                h: h * fh,
            };
            ds.annotations.push(Annotation {
                image_id: stem.clone(),
                bbox,
                category,
                cell_type: CellType::SingleCell,
                mask: None,
                area: bbox.w * bbox.h,
            });
        }
    }
    let mut categories = classes
        .iter()
        .map(|c| {
            options
                .category_map
                .as_ref()
                .and_then(|m| m.get(c).cloned())
                .unwrap_or_else(|| c.clone())
        })
        .collect::<Vec<_>>();
    for a in &ds.annotations {
        if !categories.contains(&a.category) {
            categories.push(a.category.clone());
        }
    }
    ds.categories = categories;
    Ok(ds)
}

pub(super) fn write(dataset: &Dataset, root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    for d in [&images_dir, &labels_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let classes = root.join("classes.txt");
    std::fs::write(&classes, dataset.categories.join("\n") + "\n").map_err(|e| Error::io(&classes, e))?;

    for im in &dataset.images {
        let src = dataset.image_path(im);
        let ext = Path::new(&im.path)
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("png");
        let dst = images_dir.join(format!("{}.{ext}", im.id));
        if src != dst {
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        }
        let mut lines = String::new();
        for a in dataset.annotations.iter().filter(|a| a.image_id == im.id) {
            let class = dataset
                .categories
                .iter()
                .position(|c| *c == a.category)
                .expect("validated category");
            lines.push_str(&format_line(class, a.bbox, im.width, im.height));
            lines.push('\n');
        }
        let label = labels_dir.join(format!("{}.txt", im.id));
        std::fs::write(&label, lines).map_err(|e| Error::io(&label, e))?;
    }
    Ok(())
}

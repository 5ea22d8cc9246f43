//! The abnormal-cell bank: construction from an annotated dataset, on-disk
//! persistence, attribute-based candidate selection and embedding-based
//! style-reference selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, Segmenter};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::imageproc;
use crate::raster::{BBox, Raster};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    #[default]
    SingleCell,
    Clumps,
}

impl CellType {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellType::SingleCell => "single_cell",
            CellType::Clumps => "clumps",
        }
    }

    pub fn parse(s: &str) -> Option<CellType> {
        match s {
            "single_cell" | "cell" | "single" => Some(CellType::SingleCell),
            "clumps" | "clump" => Some(CellType::Clumps),
            _ => None,
        }
    }
}

impl fmt::Display for CellType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One banked cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: u64,
    pub category: String,
    pub cell_type: CellType,
    pub area: u64,
    pub crop: Raster,
    pub mask: Raster,
    pub source_image_id: String,
    pub source_bbox: BBox,
    pub embedding: Option<Vec<f64>>,
}

impl CellRecord {
    /// Validates the record invariants; `area` is derived from the mask.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        category: impl Into<String>,
        cell_type: CellType,
        crop: Raster,
        mask: Raster,
        source_image_id: impl Into<String>,
        source_bbox: BBox,
        embedding: Option<Vec<f64>>,
    ) -> Result<CellRecord> {
        if crop.dims() != mask.dims() {
            return Err(Error::DimensionMismatch(format!(
                "record {id}: crop {:?} vs mask {:?}",
                crop.dims(),
                mask.dims()
            )));
        }
        if mask.channels() != 1 {
            return Err(Error::UnsupportedChannels(mask.channels()));
        }
        let area = mask.count_on();
        if area == 0 {
            return Err(Error::EmptyMask);
        }
        if let Some(e) = &embedding {
            check_unit(e).map_err(|err| err.context(format!("record {id} embedding")))?;
        }
        Ok(CellRecord {
            id,
            category: category.into(),
            cell_type,
            area,
            crop,
            mask,
            source_image_id: source_image_id.into(),
            source_bbox,
            embedding,
        })
    }

    /// Masked crop translated so the mask centroid is centred on a square canvas.
    pub fn aligned_cell(&self) -> Result<(Raster, Raster)> {
        align_cell(&self.crop, &self.mask)
    }
}

/// Masked crop translated so the mask centroid is centred on a square canvas
/// of side `max(w, h)`.
pub fn align_cell(crop: &Raster, mask: &Raster) -> Result<(Raster, Raster)> {
    let masked = imageproc::apply_mask(crop, mask)?;
    let side = crop.width().max(crop.height());
    imageproc::center_align(&masked, mask, (side, side))
}

fn check_unit(v: &[f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("vector norm {norm} is not 1")));
    }
    Ok(())
}

pub fn l2_normalize(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Attributes of the cell being replaced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionQuery {
    pub category: String,
    pub cell_type: CellType,
    pub area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_source: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceConstraint {
    /// Restrict references to one category. `None` searches the whole bank.
    pub category: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSamplingConfig {
    pub min_per_category: usize,
    pub max_per_category: usize,
    pub seed: u64,
}

impl Default for BankSamplingConfig {
    fn default() -> Self {
        BankSamplingConfig {
            min_per_category: 68,
            max_per_category: 90,
            seed: 0,
        }
    }
}

/// Immutable after construction; selection is read-only and `Sync`.
#[derive(Debug, Clone)]
pub struct CellBank {
    records: Vec<CellRecord>,
    by_id: HashMap<u64, usize>,
    /// Positions into `records`, sorted by (area, id).
    index: BTreeMap<(String, CellType), Vec<usize>>,
    /// Positions sorted by id.
    id_order: Vec<usize>,
}

impl CellBank {
    pub fn from_records(records: Vec<CellRecord>) -> Result<CellBank> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut index: BTreeMap<(String, CellType), Vec<usize>> = BTreeMap::new();
        for (pos, r) in records.iter().enumerate() {
            if by_id.insert(r.id, pos).is_some() {
                return Err(Error::schema("records.id", format!("duplicate record id {}", r.id)));
            }
            index.entry((r.category.clone(), r.cell_type)).or_default().push(pos);
        }
        for bucket in index.values_mut() {
            bucket.sort_by_key(|&p| (records[p].area, records[p].id));
        }
        let mut id_order: Vec<usize> = (0..records.len()).collect();
        id_order.sort_by_key(|&p| records[p].id);
        Ok(CellBank {
            records,
            by_id,
            index,
            id_order,
        })
    }

    pub fn records(&self) -> &[CellRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&CellRecord> {
        self.by_id.get(&id).map(|&p| &self.records[p])
    }

    /// Bucket keys with their record ids in (area, id) order.
    pub fn buckets(&self) -> impl Iterator<Item = (&(String, CellType), Vec<u64>)> {
        self.index
            .iter()
            .map(|(k, v)| (k, v.iter().map(|&p| self.records[p].id).collect()))
    }

    pub fn has_bucket(&self, category: &str, cell_type: CellType) -> bool {
        self.index.contains_key(&(category.to_string(), cell_type))
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.category.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Record with the closest area among those of the query's category and
    /// type; ties go to the lowest id.
    pub fn select_candidate(&self, query: &SelectionQuery) -> Result<&CellRecord> {
        if self.is_empty() {
            return Err(Error::EmptyBank);
        }
        if query.area == 0 {
            return Err(Error::InvalidArgument("query area must be positive".into()));
        }
        let no_match = || Error::NoMatch {
            category: query.category.clone(),
            cell_type: query.cell_type.to_string(),
        };
        let bucket = self
            .index
            .get(&(query.category.clone(), query.cell_type))
            .ok_or_else(no_match)?;
        let allowed = |p: usize| {
            query
                .exclude_source
                .as_deref()
                .is_none_or(|s| self.records[p].source_image_id != s)
        };
        let area_of = |i: usize| self.records[bucket[i]].area;
        let split = bucket.partition_point(|&p| self.records[p].area < query.area);

        // nearest allowed on each side of the split
        let below = (0..split).rev().find(|&i| allowed(bucket[i])).map(area_of);
        let above = (split..bucket.len()).find(|&i| allowed(bucket[i])).map(area_of);
        let best = match (below, above) {
            (None, None) => return Err(no_match()),
            (Some(b), None) => query.area - b,
            (None, Some(a)) => a - query.area,
            (Some(b), Some(a)) => (query.area - b).min(a - query.area),
        };

        // every allowed record at distance `best`, lowest id wins
        let mut winner: Option<&CellRecord> = None;
        let targets = [query.area.checked_sub(best), query.area.checked_add(best)];
        for target in targets.into_iter().flatten() {
            let start = bucket.partition_point(|&p| self.records[p].area < target);
            let run = bucket[start..]
                .iter()
                .take_while(|&&p| self.records[p].area == target)
                .find(|&&p| allowed(p));
            if let Some(&p) = run {
                let rec = &self.records[p];
                if winner.is_none_or(|w| rec.id < w.id) {
                    winner = Some(rec);
                }
            }
        }
        winner.ok_or_else(no_match)
    }

    /// Record whose embedding is most cosine-similar to `orig_embedding`;
    /// ties go to the lowest id.
    pub fn select_style_reference(
        &self,
        orig_embedding: &[f64],
        constraint: &ReferenceConstraint,
    ) -> Result<&CellRecord> {
        if self.is_empty() {
            return Err(Error::EmptyBank);
        }
        let query_norm = orig_embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if query_norm < 1e-12 {
            return Err(Error::ZeroVector);
        }
        let mut best: Option<(f64, &CellRecord)> = None;
        for &p in &self.id_order {
            let rec = &self.records[p];
            if constraint.category.as_ref().is_some_and(|c| *c != rec.category) {
                continue;
            }
            let emb = rec.embedding.as_deref().ok_or(Error::MissingEmbedding(rec.id))?;
            let sim = cosine_similarity(orig_embedding, emb)?;
            if best.is_none_or(|(s, _)| sim > s) {
                best = Some((sim, rec));
            }
        }
        best.map(|(_, r)| r).ok_or_else(|| Error::NoMatch {
            category: constraint.category.clone().unwrap_or_default(),
            cell_type: "any".into(),
        })
    }

    /// Compute embeddings for every record on its masked, centre-aligned cell.
    pub fn with_embeddings(mut self, embedder: &dyn Embedder) -> Result<CellBank> {
        for rec in &mut self.records {
            let (cell, mask) = rec.aligned_cell()?;
            let bundle = embedder
                .embed(&cell, Some(&mask))
                .map_err(|e| e.context(format!("embedding bank record {}", rec.id)))?;
            rec.embedding = Some(bundle.global);
        }
        Ok(self)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.records.len());
        for &p in &self.id_order {
            let r = &self.records[p];
            let crop_rel = format!("crops/{}.png", r.id);
            let mask_rel = format!("masks/{}.png", r.id);
            r.crop.save_png(&dir.join(&crop_rel))?;
            r.mask.save_png(&dir.join(&mask_rel))?;
            entries.push(BankEntry {
                id: r.id,
                category: r.category.clone(),
                cell_type: r.cell_type,
                area: r.area,
                width: r.crop.width(),
                height: r.crop.height(),
                source_image_id: r.source_image_id.clone(),
                source_bbox: r.source_bbox,
                crop: crop_rel,
                mask: mask_rel,
                embedding: r.embedding.clone(),
            });
        }
        let file = BankFile {
            schema: BANK_SCHEMA.to_string(),
            records: entries,
        };
        let json = serde_json::to_string_pretty(&file).expect("bank index serialises");
        let path = dir.join("bank.json");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<CellBank> {
        let path = dir.join("bank.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: BankFile = serde_json::from_str(&text).map_err(|e| Error::parse(&path, Some(e.line()), e))?;
        if file.schema != BANK_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected {BANK_SCHEMA}, found {}", file.schema),
            ));
        }
        let mut records = Vec::with_capacity(file.records.len());
        for e in file.records {
            let crop = Raster::load(&dir.join(&e.crop))?;
            let mask = Raster::load(&dir.join(&e.mask))?;
            let rec = CellRecord::new(
                e.id,
                e.category,
                e.cell_type,
                crop,
                mask,
                e.source_image_id,
                e.source_bbox,
                e.embedding,
            )?;
            if rec.area != e.area {
                return Err(Error::schema(
                    "records.area",
                    format!("record {} says {} but mask has {}", rec.id, e.area, rec.area),
                ));
            }
            records.push(rec);
        }
        CellBank::from_records(records)
    }
}

pub const BANK_SCHEMA: &str = "saic-bank/1";

#[derive(Serialize, Deserialize)]
struct BankFile {
    schema: String,
    records: Vec<BankEntry>,
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    id: u64,
    category: String,
    cell_type: CellType,
    area: u64,
    width: u32,
    height: u32,
    source_image_id: String,
    source_bbox: BBox,
    crop: String,
    mask: String,
    embedding: Option<Vec<f64>>,
}

/// Per-category sample sizes for the bank. Counts interpolate linearly
/// between `min_per_category` (rarest category) and `max_per_category`
/// (most frequent) by annotation count, capped by availability. They do not
/// depend on the seed.
pub fn bank_targets(available: &BTreeMap<String, usize>, sampling: &BankSamplingConfig) -> BTreeMap<String, usize> {
    let lo = sampling.min_per_category.min(sampling.max_per_category);
    let hi = sampling.max_per_category.max(sampling.min_per_category);
    let n_min = available.values().copied().min().unwrap_or(0);
    let n_max = available.values().copied().max().unwrap_or(0);
    available
        .iter()
        .map(|(cat, &n)| {
            let target = if n_max == n_min {
                hi
            } else {
                let t = (n - n_min) as f64 / (n_max - n_min) as f64;
                lo + ((hi - lo) as f64 * t).round() as usize
            };
            (cat.clone(), target.min(n))
        })
        .collect()
}

/// Sample cells per category and cut their crops and masks out of the source
/// images. Images are loaded through `load`.
pub fn build_bank_with(
    dataset: &Dataset,
    sampling: &BankSamplingConfig,
    segmenter: Option<&dyn Segmenter>,
    mut load: impl FnMut(&crate::dataio::ImageEntry) -> Result<Raster>,
) -> Result<CellBank> {
    if dataset.annotations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, a) in dataset.annotations.iter().enumerate() {
        by_category.entry(a.category.clone()).or_default().push(i);
    }
    let available = by_category.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let targets = bank_targets(&available, sampling);

    let mut chosen: Vec<usize> = Vec::new();
    for (cat_idx, (cat, members)) in by_category.iter().enumerate() {
        let mut rng = seeds::substream(sampling.seed, seeds::BANK, cat_idx as u64);
        let mut picked: Vec<usize> = members.choose_multiple(&mut rng, targets[cat]).copied().collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }

    let images: HashMap<&str, &crate::dataio::ImageEntry> =
        dataset.images.iter().map(|im| (im.id.as_str(), im)).collect();
    let mut cache: HashMap<String, Raster> = HashMap::new();
    let mut records = Vec::with_capacity(chosen.len());
    for (next_id, &ai) in chosen.iter().enumerate() {
        let ann = &dataset.annotations[ai];
        let entry = images
            .get(ann.image_id.as_str())
            .ok_or_else(|| Error::schema("annotations.image_id", format!("unknown image {:?}", ann.image_id)))?;
        if !cache.contains_key(&entry.id) {
            cache.insert(entry.id.clone(), load(entry)?.to_rgb());
        }
        let image = &cache[&entry.id];
        let bbox = ann.pixel_bbox(image.width(), image.height())?;
        let mask = match ann.mask_raster(image.width(), image.height(), bbox)? {
            Some(m) => m,
            None => match segmenter {
                Some(s) => s.segment(image, bbox)?,
                None => return Err(Error::MissingMask(ai)),
            },
        };
        let crop = image.crop(bbox)?;
        let rec = CellRecord::new(
            next_id as u64,
            ann.category.clone(),
            ann.cell_type,
            crop,
            mask,
            ann.image_id.clone(),
            bbox,
            None,
        )
        .map_err(|e| e.context(format!("annotation {ai}")))?;
        records.push(rec);
    }
    CellBank::from_records(records)
}

pub fn build_bank(
    dataset: &Dataset,
    sampling: &BankSamplingConfig,
    segmenter: Option<&dyn Segmenter>,
) -> Result<CellBank> {
    build_bank_with(dataset, sampling, segmenter, |entry| {
        Raster::load(&dataset.image_path(entry))
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// A record whose crop is a 1-pixel-high strip with `area` on-pixels.
    pub fn strip_record(id: u64, category: &str, cell_type: CellType, area: u64, source: &str) -> CellRecord {
        let w = area as u32;
        CellRecord::new(
            id,
            category,
            cell_type,
            Raster::filled(w, 1, 3, (id % 251) as u8),
            Raster::filled(w, 1, 1, 255),
            source,
            BBox::new(0, 0, w as i64, 1),
            None,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::strip_record;
    use super::*;

    fn query(cat: &str, t: CellType, area: u64) -> SelectionQuery {
        SelectionQuery {
            category: cat.into(),
            cell_type: t,
            area,
            exclude_source: None,
        }
    }

    #[test]
    fn cosine_fixtures() {
        assert!((cosine_similarity(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((v - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn single_feasible_record_wins_regardless_of_area() {
        let bank = CellBank::from_records(vec![
            strip_record(0, "hsil", CellType::SingleCell, 500, "a"),
            strip_record(1, "lsil", CellType::SingleCell, 10, "a"),
        ])
        .unwrap();
        let got = bank
            .select_candidate(&query("lsil", CellType::SingleCell, 400))
            .unwrap();
        assert_eq!(got.id, 1);
    }

    #[test]
    fn equidistant_tie_goes_to_lower_id() {
        let bank = CellBank::from_records(vec![
            strip_record(7, "agc", CellType::Clumps, 110, "a"),
            strip_record(3, "agc", CellType::Clumps, 90, "b"),
        ])
        .unwrap();
        assert_eq!(
            bank.select_candidate(&query("agc", CellType::Clumps, 100)).unwrap().id,
            3
        );

        let bank = CellBank::from_records(vec![
            strip_record(2, "agc", CellType::Clumps, 110, "a"),
            strip_record(5, "agc", CellType::Clumps, 90, "b"),
        ])
        .unwrap();
        assert_eq!(
            bank.select_candidate(&query("agc", CellType::Clumps, 100)).unwrap().id,
            2
        );
    }

    #[test]
    fn exclusion_skips_source_and_can_empty_bucket() {
        let bank = CellBank::from_records(vec![
            strip_record(0, "scc", CellType::SingleCell, 100, "slide1"),
            strip_record(1, "scc", CellType::SingleCell, 140, "slide2"),
        ])
        .unwrap();
        let mut q = query("scc", CellType::SingleCell, 100);
        q.exclude_source = Some("slide1".into());
        assert_eq!(bank.select_candidate(&q).unwrap().id, 1);
        q.exclude_source = Some("slide2".into());
        assert_eq!(bank.select_candidate(&q).unwrap().id, 0);

        let single = CellBank::from_records(vec![strip_record(0, "scc", CellType::SingleCell, 100, "slide1")]).unwrap();
        q.exclude_source = Some("slide1".into());
        assert!(matches!(single.select_candidate(&q), Err(Error::NoMatch { .. })));
        assert!(matches!(
            single.select_candidate(&query("scc", CellType::Clumps, 100)),
            Err(Error::NoMatch { .. })
        ));
    }

    #[test]
    fn empty_bank_errors() {
        let bank = CellBank::from_records(vec![]).unwrap();
        assert!(matches!(
            bank.select_candidate(&query("x", CellType::SingleCell, 1)),
            Err(Error::EmptyBank)
        ));
        assert!(matches!(
            bank.select_style_reference(&[1.0], &ReferenceConstraint::default()),
            Err(Error::EmptyBank)
        ));
    }

    #[test]
    fn reference_self_match_and_missing_embedding() {
        let mut a = strip_record(0, "x", CellType::SingleCell, 3, "s");
        a.embedding = Some(vec![1.0, 0.0]);
        let mut b = strip_record(1, "y", CellType::SingleCell, 3, "s");
        b.embedding = Some(vec![0.6, 0.8]);
        let bank = CellBank::from_records(vec![a, b.clone()]).unwrap();
        let got = bank
            .select_style_reference(&[0.6, 0.8], &ReferenceConstraint::default())
            .unwrap();
        assert_eq!(got.id, 1);
        let restricted = ReferenceConstraint {
            category: Some("x".into()),
        };
        assert_eq!(bank.select_style_reference(&[0.6, 0.8], &restricted).unwrap().id, 0);

        let c = strip_record(2, "z", CellType::SingleCell, 3, "s");
        let bank = CellBank::from_records(vec![b, c]).unwrap();
        assert!(matches!(
            bank.select_style_reference(&[0.6, 0.8], &ReferenceConstraint::default()),
            Err(Error::MissingEmbedding(2))
        ));
    }

    #[test]
    fn record_invariants_enforced() {
        let crop = Raster::filled(2, 2, 3, 0);
        let bad = CellRecord::new(
            0,
            "x",
            CellType::SingleCell,
            crop.clone(),
            Raster::filled(3, 2, 1, 255),
            "s",
            BBox::new(0, 0, 2, 2),
            None,
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
        let mut mask = Raster::filled(2, 2, 1, 0);
        mask.set(0, 0, 0, 200);
        mask.set(1, 0, 0, 127);
        let ok = CellRecord::new(
            0,
            "x",
            CellType::SingleCell,
            crop.clone(),
            mask.clone(),
            "s",
            BBox::new(0, 0, 2, 2),
            None,
        )
        .unwrap();
        assert_eq!(ok.area, 1);
        let not_unit = CellRecord::new(
            0,
            "x",
            CellType::SingleCell,
            crop,
            mask,
            "s",
            BBox::new(0, 0, 2, 2),
            Some(vec![0.5, 0.5]),
        );
        assert!(not_unit.is_err());
    }

    #[test]
    fn targets_are_seed_independent_and_capped() {
        let avail: BTreeMap<String, usize> = [("a", 1000), ("b", 40), ("c", 100), ("d", 550)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let t = bank_targets(&avail, &BankSamplingConfig::default());
        assert_eq!(t["a"], 90);
        assert_eq!(t["b"], 40);
        assert!((68..=90).contains(&t["c"]));
    }

    #[test]
    fn buckets_sorted_by_area_then_id() {
        let bank = CellBank::from_records(vec![
            strip_record(4, "a", CellType::SingleCell, 50, "s"),
            strip_record(1, "a", CellType::SingleCell, 50, "s"),
            strip_record(2, "a", CellType::SingleCell, 10, "s"),
            strip_record(3, "a", CellType::Clumps, 10, "s"),
        ])
        .unwrap();
        let buckets: Vec<_> = bank.buckets().collect();
        assert_eq!(buckets.len(), 2);
        assert_eq!(buckets[0].1, vec![2, 1, 4]);
        assert_eq!(buckets[1].1, vec![3]);
    }
}

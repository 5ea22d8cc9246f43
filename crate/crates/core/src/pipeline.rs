//! Stage orchestration over a run directory.
//!
//! Layout of `<output_dir>`:
//!
//! ```text
//! config.lock.json        resolved configuration
//! bank/                   cell bank (unless bank.dir is set) + manifest.json
//! plan.json               augmentation plan
//! pairs/<id>.*.png|json   both style variants per entry
//! filtration.jsonl        one verdict per entry
//! filtration_stats.json
//! failures.jsonl          one line per failed entry
//! timings.json            stage wall-clock times
//! dataset/                originals + kept synthetic images
//! report.json, style_points.csv, descriptors.csv
//! ```
//!
//! Everything except `timings.json` is a pure function of the config and
//! the backends.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::{conformance, BackendSet};
use crate::cellbank::{align_cell, build_bank, BankSamplingConfig, CellBank, CellRecord, ReferenceConstraint};
use crate::composer::{compose_pair, ComposeOptions, CompositionPair, StageTimings};
use crate::config::{sha256_hex, BackendKind, RunConfig};
use crate::dataio::{
    canonical_json, import_dataset, plan_augmentation, Annotation, AugmentationPlan, BoxF, Dataset, DatasetFormat,
    ImageEntry, ImportOptions, MaskShape, PlanEntry, Rle,
};
use crate::error::{Error, Result};
use crate::evalkit::{self, StylePoint};
use crate::filtration::{aggregate_stats, filter_pair, FilteredResult, FiltrationStats};
use crate::imageproc::{color_histogram, Region};
use crate::raster::Raster;
use crate::seeds;

pub const BANK_MANIFEST_SCHEMA: &str = "saic-bank-manifest/1";
pub const REPORT_SCHEMA: &str = "saic-report/1";
pub const SYNTHETIC_PREFIX: &str = "synth-";

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }
    pub fn config_lock(&self) -> PathBuf {
        self.root.join("config.lock.json")
    }
    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs")
    }
    pub fn filtration(&self) -> PathBuf {
        self.root.join("filtration.jsonl")
    }
    pub fn filtration_stats(&self) -> PathBuf {
        self.root.join("filtration_stats.json")
    }
    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.jsonl")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }
    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dataset_dir().join("dataset.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn style_points(&self) -> PathBuf {
        self.root.join("style_points.csv")
    }
    pub fn descriptors(&self) -> PathBuf {
        self.root.join("descriptors.csv")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let v = serde_json::to_value(value).expect("value serialises");
    write_text(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, Some(e.line()), e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serialises"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, Some(i + 1), e)))
        .collect()
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let options = ImportOptions {
        category_map: cfg.dataset.category_map.clone(),
    };
    let ds = import_dataset(&cfg.dataset.path, cfg.dataset.format, &options)?;
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub schema: String,
    pub config_fingerprint: String,
    pub bank_sha256: String,
    pub records: usize,
    pub categories: BTreeMap<String, usize>,
    pub backend: String,
    pub seed: u64,
}

pub fn cmd_build_bank(cfg: &RunConfig, backends: &BackendSet) -> Result<BankManifest> {
    let dataset = load_dataset(cfg)?;
    let sampling = BankSamplingConfig {
        min_per_category: cfg.bank.min_per_category,
        max_per_category: cfg.bank.max_per_category,
        seed: cfg.seed(),
    };
    let bank = build_bank(&dataset, &sampling, Some(backends.segmenter.as_ref()))?
        .with_embeddings(backends.embedder.as_ref())?;
    let dir = cfg.bank_dir();
    bank.save(&dir)?;
    let bank_json = dir.join("bank.json");
    let bytes = fs::read(&bank_json).map_err(|e| Error::io(&bank_json, e))?;
    let manifest = BankManifest {
        schema: BANK_MANIFEST_SCHEMA.into(),
        config_fingerprint: cfg.fingerprint(),
        bank_sha256: sha256_hex(&bytes),
        records: bank.len(),
        categories: bank.category_counts(),
        backend: backends.name.clone(),
        seed: cfg.seed(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    log::info!("bank with {} records written to {}", bank.len(), dir.display());
    Ok(manifest)
}

pub fn load_bank(cfg: &RunConfig) -> Result<CellBank> {
    let dir = cfg.bank_dir();
    if !dir.join("bank.json").is_file() {
        return Err(Error::Config(format!(
            "no cell bank at {}; run `saic build-bank` first",
            dir.display()
        )));
    }
    CellBank::load(&dir)
}

fn plan_matches(plan: &AugmentationPlan, cfg: &RunConfig) -> bool {
    plan.seed == cfg.seed()
        && plan.expand_ratio == cfg.plan.expand_ratio
        && plan.targeting == cfg.plan.targeting
        && plan.tail_threshold == cfg.plan.tail_threshold
}

pub fn cmd_plan(cfg: &RunConfig) -> Result<AugmentationPlan> {
    let dataset = load_dataset(cfg)?;
    let bank = load_bank(cfg)?;
    let run = RunDir::new(&cfg.run.output_dir);
    let plan = make_plan(cfg, &dataset, &bank)?;
    write_text(&run.config_lock(), &cfg.lock_json())?;
    write_json(&run.plan(), &plan)?;
    Ok(plan)
}

fn make_plan(cfg: &RunConfig, dataset: &Dataset, bank: &CellBank) -> Result<AugmentationPlan> {
    plan_augmentation(
        dataset,
        bank,
        cfg.plan.expand_ratio,
        cfg.plan.targeting,
        cfg.plan.tail_threshold,
        cfg.seed(),
    )
}

/// An existing plan is reused when it was made with the same seed and
/// planning parameters.
fn current_plan(cfg: &RunConfig, run: &RunDir, dataset: &Dataset, bank: &CellBank) -> Result<AugmentationPlan> {
    if run.plan().is_file() {
        let plan: AugmentationPlan = read_json(&run.plan())?;
        if plan_matches(&plan, cfg) {
            return Ok(plan);
        }
        log::warn!("plan.json was made with other settings; replanning");
    }
    let plan = make_plan(cfg, dataset, bank)?;
    write_json(&run.plan(), &plan)?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub entry_id: String,
    pub stage: String,
    pub error: String,
}

/// Summed and per-entry mean stage times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub entries: usize,
    pub total: StageTimings,
    pub mean_per_entry: StageTimings,
}

impl TimingReport {
    fn from_entries(times: &[StageTimings]) -> TimingReport {
        let mut total = StageTimings::default();
        for t in times {
            total.selection += t.selection;
            total.composition += t.composition;
            total.filtration += t.filtration;
        }
        let n = times.len().max(1) as f64;
        TimingReport {
            entries: times.len(),
            total,
            mean_per_entry: StageTimings {
                selection: total.selection / n,
                composition: total.composition / n,
                filtration: total.filtration / n,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentSummary {
    pub entries: usize,
    pub kept: usize,
    pub failed: usize,
    pub stats: FiltrationStats,
    pub timings: TimingReport,
}

/// What the dataset writer needs about one kept entry.
struct Kept {
    filtered: FilteredResult,
    candidate_category: String,
    candidate_type: crate::cellbank::CellType,
    region: Region,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    backends: &'a BackendSet,
    dataset: &'a Dataset,
    images: HashMap<&'a str, &'a ImageEntry>,
    bank: &'a CellBank,
    run: RunDir,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a RunConfig, backends: &'a BackendSet, dataset: &'a Dataset, bank: &'a CellBank) -> Self {
        Context {
            cfg,
            backends,
            dataset,
            images: dataset.images.iter().map(|im| (im.id.as_str(), im)).collect(),
            bank,
            run: RunDir::new(&cfg.run.output_dir),
        }
    }

    fn image_entry(&self, id: &str) -> Result<&'a ImageEntry> {
        self.images
            .get(id)
            .copied()
            .ok_or_else(|| Error::schema("plan.background_image_id", format!("unknown image {id:?}")))
    }

    fn load_background(&self, entry: &PlanEntry) -> Result<Raster> {
        let im = self.image_entry(&entry.background_image_id)?;
        Ok(Raster::load(&self.dataset.image_path(im))?.to_rgb())
    }

    /// Mask of the original cell at the site, from the annotation or the
    /// segmenter when the annotation has none (or an empty one).
    fn site_mask(&self, entry: &PlanEntry, background: &Raster) -> Result<Raster> {
        let ann = self
            .dataset
            .annotations
            .get(entry.region.annotation_index)
            .ok_or_else(|| Error::schema("plan.region.annotation_index", "index out of range"))?;
        let bbox = entry.region.bbox;
        match ann.mask_raster(background.width(), background.height(), bbox)? {
            Some(m) if m.count_on() > 0 => Ok(m),
            _ => self.backends.segmenter.segment(background, bbox),
        }
    }

    fn compose(
        &self,
        index: usize,
        entry: &PlanEntry,
    ) -> std::result::Result<(CompositionPair, CellRecord), EntryFailure> {
        let fail = |stage: &str, e: Error| EntryFailure {
            entry_id: entry.entry_id.clone(),
            stage: stage.into(),
            error: e.to_string(),
        };
        let started = Instant::now();
        let selected = (|| -> Result<_> {
            let background = self.load_background(entry)?;
            let mask = self.site_mask(entry, &background)?;
            let bbox = entry.region.bbox;
            let (cell, cell_mask) = align_cell(&background.crop(bbox)?, &mask)?;
            let orig = self.backends.embedder.embed(&cell, Some(&cell_mask))?.global;
            let candidate = self.bank.select_candidate(&entry.candidate_query)?.clone();
            let reference = self
                .bank
                .select_style_reference(&orig, &ReferenceConstraint::default())?
                .clone();
            let region = Region::new(
                bbox,
                mask,
                entry.region.orig_category.clone(),
                entry.region.orig_type,
                entry.region.orig_area,
            )?;
            Ok((background, region, candidate, reference))
        })();
        let (background, region, candidate, reference) = selected.map_err(|e| fail("selection", e))?;
        let selection = started.elapsed().as_secs_f64();

        let options = ComposeOptions {
            alpha: self.cfg.compose.alpha,
            highpass: self.cfg.compose.highpass,
        };
        let mut pair = compose_pair(
            &entry.entry_id,
            &background,
            &region,
            &candidate,
            &reference,
            self.backends.generator.as_ref(),
            self.backends.embedder.as_ref(),
            seeds::derive(self.cfg.seed(), seeds::GENERATE, index as u64),
            &options,
        )
        .and_then(|p| p.save(&self.run.pairs()).map(|_| p))
        .map_err(|e| fail("composition", e))?;
        pair.timings.selection = selection;
        Ok((pair, candidate))
    }

    fn filter(
        &self,
        index: usize,
        pair: &CompositionPair,
        candidate: &CellRecord,
    ) -> std::result::Result<Kept, EntryFailure> {
        let started = Instant::now();
        let seed = seeds::derive(self.cfg.seed(), seeds::SHUFFLE, index as u64);
        let result = filter_pair(pair, self.backends.judge.as_ref(), seed, &self.cfg.filtration)
            .and_then(|filtered| {
                let path = self.synthetic_image_path(&pair.region_id);
                pair.image(filtered.kept_variant).save_png(&path)?;
                Ok(filtered)
            })
            .map_err(|e| EntryFailure {
                entry_id: pair.region_id.clone(),
                stage: "filtration".into(),
                error: e.to_string(),
            })?;
        log::debug!("{}: filtration {:.3}s", pair.region_id, started.elapsed().as_secs_f64());
        Ok(Kept {
            filtered: result,
            candidate_category: candidate.category.clone(),
            candidate_type: candidate.cell_type,
            region: pair.region.clone(),
        })
    }

    fn synthetic_image_path(&self, entry_id: &str) -> PathBuf {
        self.run
            .dataset_dir()
            .join("images")
            .join(format!("{SYNTHETIC_PREFIX}{entry_id}.png"))
    }
}

type Outcome = std::result::Result<(Kept, StageTimings), EntryFailure>;

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ensure_dir(dir)
}

/// Plan, compose and filter every entry, then write the augmented dataset.
pub fn cmd_augment(cfg: &RunConfig, backends: &BackendSet) -> Result<AugmentSummary> {
    let dataset = load_dataset(cfg)?;
    let bank = load_bank(cfg)?;
    let ctx = Context::new(cfg, backends, &dataset, &bank);
    ensure_dir(&ctx.run.root)?;
    write_text(&ctx.run.config_lock(), &cfg.lock_json())?;
    let plan = current_plan(cfg, &ctx.run, &dataset, &bank)?;
    reset_dir(&ctx.run.pairs())?;
    reset_dir(&ctx.run.dataset_dir())?;

    log::info!(
        "augmenting {} entries with {} workers",
        plan.entries.len(),
        cfg.workers()
    );
    let outcomes: Vec<Outcome> = pool(cfg)?.install(|| {
        plan.entries
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let (pair, candidate) = ctx.compose(i, entry)?;
                let started = Instant::now();
                let kept = ctx.filter(i, &pair, &candidate)?;
                let mut t = pair.timings;
                t.filtration = started.elapsed().as_secs_f64();
                Ok((kept, t))
            })
            .collect()
    });
    finish(&ctx, &plan, outcomes, Vec::new(), None)
}

/// Judge the existing pairs of a run again and rewrite everything downstream
/// of filtration.
pub fn cmd_filter(cfg: &RunConfig, backends: &BackendSet) -> Result<AugmentSummary> {
    let run = RunDir::new(&cfg.run.output_dir);
    if !run.plan().is_file() || !run.pairs().is_dir() {
        return Err(Error::MissingRun(run.root.clone()));
    }
    let dataset = load_dataset(cfg)?;
    let bank = load_bank(cfg)?;
    let plan: AugmentationPlan = read_json(&run.plan())?;
    let ctx = Context::new(cfg, backends, &dataset, &bank);
    reset_dir(&ctx.run.dataset_dir())?;

    let earlier: Vec<EntryFailure> = if run.failures().is_file() {
        read_jsonl::<EntryFailure>(&run.failures())?
            .into_iter()
            .filter(|f| f.stage != "filtration")
            .collect()
    } else {
        Vec::new()
    };
    let previous: Option<TimingReport> = read_json(&run.timings()).ok();

    let outcomes: Vec<Option<Outcome>> = pool(cfg)?.install(|| {
        plan.entries
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                if !run.pairs().join(format!("{}.json", entry.entry_id)).is_file() {
                    return None;
                }
                Some((|| {
                    let pair = CompositionPair::load(&run.pairs(), &entry.entry_id).map_err(|e| EntryFailure {
                        entry_id: entry.entry_id.clone(),
                        stage: "filtration".into(),
                        error: e.to_string(),
                    })?;
                    let candidate = bank.get(pair.candidate_id).cloned().ok_or_else(|| EntryFailure {
                        entry_id: entry.entry_id.clone(),
                        stage: "filtration".into(),
                        error: format!("candidate {} is not in the bank", pair.candidate_id),
                    })?;
                    let started = Instant::now();
                    let kept = ctx.filter(i, &pair, &candidate)?;
                    let t = StageTimings {
                        filtration: started.elapsed().as_secs_f64(),
                        ..Default::default()
                    };
                    Ok((kept, t))
                })())
            })
            .collect()
    });
    finish(&ctx, &plan, outcomes.into_iter().flatten().collect(), earlier, previous)
}

fn finish(
    ctx: &Context,
    plan: &AugmentationPlan,
    outcomes: Vec<Outcome>,
    mut failures: Vec<EntryFailure>,
    previous_timings: Option<TimingReport>,
) -> Result<AugmentSummary> {
    let mut kept = Vec::new();
    let mut times = Vec::new();
    for o in outcomes {
        match o {
            Ok((k, t)) => {
                kept.push(k);
                times.push(t);
            }
            Err(f) => {
                log::warn!("entry {} failed during {}: {}", f.entry_id, f.stage, f.error);
                failures.push(f);
            }
        }
    }
    let order: HashMap<&str, usize> = plan
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.entry_id.as_str(), i))
        .collect();
    failures.sort_by_key(|f| order.get(f.entry_id.as_str()).copied().unwrap_or(usize::MAX));

    let results: Vec<FilteredResult> = kept.iter().map(|k| k.filtered.clone()).collect();
    let stats = aggregate_stats(&results);
    write_jsonl(&ctx.run.filtration(), &results)?;
    write_json(&ctx.run.filtration_stats(), &stats)?;
    write_jsonl(&ctx.run.failures(), &failures)?;

    let mut timings = TimingReport::from_entries(&times);
    if let Some(prev) = previous_timings {
        // a re-filter only re-measures filtration
        timings.total.selection = prev.total.selection;
        timings.total.composition = prev.total.composition;
        timings.mean_per_entry.selection = prev.mean_per_entry.selection;
        timings.mean_per_entry.composition = prev.mean_per_entry.composition;
    }
    write_json(&ctx.run.timings(), &timings)?;

    let augmented = augmented_dataset(ctx, plan, &kept)?;
    write_text(&ctx.run.dataset(), &canonical_json(&augmented))?;

    let total = plan.entries.len();
    let summary = AugmentSummary {
        entries: total,
        kept: kept.len(),
        failed: failures.len(),
        stats,
        timings,
    };
    if total > 0 && failures.len() as f64 > ctx.cfg.run.max_failure_ratio * total as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    Ok(summary)
}

/// Originals plus one image per kept entry. A synthetic image carries the
/// background's other annotations and a new one for the composed cell.
fn augmented_dataset(ctx: &Context, plan: &AugmentationPlan, kept: &[Kept]) -> Result<Dataset> {
    let src = ctx.dataset;
    let mut out = Dataset::new(src.categories.clone());
    out.base_dir = ctx.run.dataset_dir();
    for im in &src.images {
        let path = src.image_path(im);
        let path = fs::canonicalize(&path).unwrap_or(path);
        out.images.push(ImageEntry {
            path: path.to_string_lossy().into_owned(),
            ..im.clone()
        });
    }
    out.annotations = src.annotations.clone();

    let entries: HashMap<&str, &PlanEntry> = plan.entries.iter().map(|e| (e.entry_id.as_str(), e)).collect();
    for k in kept {
        let entry = entries[k.filtered.region_id.as_str()];
        let bg = ctx.image_entry(&entry.background_image_id)?;
        let id = format!("{SYNTHETIC_PREFIX}{}", entry.entry_id);
        out.images.push(ImageEntry {
            id: id.clone(),
            path: format!("images/{id}.png"),
            width: bg.width,
            height: bg.height,
        });
        for (i, a) in src.annotations.iter().enumerate() {
            if a.image_id == bg.id && i != entry.region.annotation_index {
                out.annotations.push(Annotation {
                    image_id: id.clone(),
                    ..a.clone()
                });
            }
        }
        let bbox = k.region.bbox;
        let on = k.region.shape_mask.count_on() as f64;
        let (mask, area) = if on > 0.0 {
            let rle = Rle::from_placed_mask(bg.width, bg.height, &k.region.shape_mask, bbox);
            (Some(MaskShape::Rle(rle)), on)
        } else {
            (None, (bbox.w * bbox.h) as f64)
        };
        out.annotations.push(Annotation {
            image_id: id,
            bbox: BoxF::from(bbox),
            category: k.candidate_category.clone(),
            cell_type: k.candidate_type,
            mask,
            area,
        });
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidSection {
    pub value: Option<f64>,
    pub real_count: usize,
    pub synthetic_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySection {
    pub score: Option<f64>,
    pub pairs: usize,
    /// Scoring unit: each composed region, cropped to its box.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSection {
    pub points: usize,
    pub method: String,
    pub points_file: String,
    pub descriptors_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSection {
    pub threshold: usize,
    pub original: BTreeMap<String, evalkit::TailStat>,
    pub augmented: BTreeMap<String, evalkit::TailStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config_fingerprint: String,
    pub backend: String,
    pub embed_dim: usize,
    pub filtration: FiltrationStats,
    pub fid: FidSection,
    pub fidelity: FidelitySection,
    pub style_projection: StyleSection,
    pub tail_stats: TailSection,
}

/// FID between two embedding sets; `None` with a note when either set has
/// fewer than two members.
pub fn fid_between(real: &[Vec<f64>], synthetic: &[Vec<f64>]) -> Result<FidSection> {
    let (value, note) = if real.len() < 2 || synthetic.len() < 2 {
        (None, Some("need at least two images in each set".to_string()))
    } else {
        let a = evalkit::summarize(real)?;
        let b = evalkit::summarize(synthetic)?;
        (Some(evalkit::frechet_distance(&a, &b)?.max(0.0)), None)
    };
    Ok(FidSection {
        value,
        real_count: real.len(),
        synthetic_count: synthetic.len(),
        note,
    })
}

/// Metrics over a finished run; writes `report.json`, `style_points.csv` and
/// `descriptors.csv`.
pub fn cmd_eval(cfg: &RunConfig, backends: &BackendSet) -> Result<Report> {
    let run = RunDir::new(&cfg.run.output_dir);
    for p in [run.plan(), run.filtration(), run.dataset()] {
        if !p.is_file() {
            return Err(Error::MissingRun(run.root.clone()));
        }
    }
    let original = load_dataset(cfg)?;
    let bank = load_bank(cfg)?;
    let plan: AugmentationPlan = read_json(&run.plan())?;
    let results: Vec<FilteredResult> = read_jsonl(&run.filtration())?;
    let augmented = import_dataset(&run.dataset(), DatasetFormat::CanonicalJson, &ImportOptions::default())?;
    let embedder = backends.embedder.as_ref();
    let workers = pool(cfg)?;

    let real: Vec<Vec<f64>> = workers.install(|| {
        original
            .images
            .par_iter()
            .map(|im| {
                Ok(embedder
                    .embed(&Raster::load(&original.image_path(im))?.to_rgb(), None)?
                    .global)
            })
            .collect::<Result<_>>()
    })?;

    struct Synth {
        entry_id: String,
        image: Raster,
        region: Region,
        candidate: CellRecord,
        background_id: String,
    }
    let entries: HashMap<&str, &PlanEntry> = plan.entries.iter().map(|e| (e.entry_id.as_str(), e)).collect();
    let synth: Vec<Synth> = results
        .iter()
        .map(|r| {
            let entry = entries
                .get(r.region_id.as_str())
                .ok_or_else(|| Error::schema("filtration.region_id", format!("{} is not in the plan", r.region_id)))?;
            let pair = CompositionPair::load(&run.pairs(), &r.region_id)?;
            let candidate = bank
                .get(pair.candidate_id)
                .cloned()
                .ok_or(Error::MissingEmbedding(pair.candidate_id))?;
            Ok(Synth {
                entry_id: r.region_id.clone(),
                image: pair.image(r.kept_variant).clone(),
                region: pair.region,
                candidate,
                background_id: entry.background_image_id.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let synthetic: Vec<Vec<f64>> = workers.install(|| {
        synth
            .par_iter()
            .map(|s| Ok(embedder.embed(&s.image, None)?.global))
            .collect::<Result<_>>()
    })?;
    let fid = fid_between(&real, &synthetic)?;

    // foreground fidelity per composed region
    let fg_pairs: Vec<(Vec<f64>, Vec<f64>)> = workers.install(|| {
        synth
            .par_iter()
            .filter(|s| s.region.shape_mask.count_on() > 0)
            .map(|s| {
                let (cell, mask) = align_cell(&s.image.crop(s.region.bbox)?, &s.region.shape_mask)?;
                let fg = embedder.embed(&cell, Some(&mask))?.global;
                let source = s
                    .candidate
                    .embedding
                    .clone()
                    .ok_or(Error::MissingEmbedding(s.candidate.id))?;
                Ok((fg, source))
            })
            .collect::<Result<_>>()
    })?;
    let fidelity = FidelitySection {
        score: if fg_pairs.is_empty() {
            None
        } else {
            Some(evalkit::fidelity_score(&fg_pairs)?)
        },
        pairs: fg_pairs.len(),
        unit: "region".into(),
    };

    // style descriptors: bank cells, composed cells, whole backgrounds
    let bins = cfg.eval.style_bins;
    let mut rows: Vec<(String, String, String, Vec<f64>)> = Vec::new();
    for rec in bank.records() {
        let d = color_histogram(&rec.crop, Some(&rec.mask), bins)?;
        rows.push((
            format!("bank:{}", rec.id),
            "bank".into(),
            rec.category.clone(),
            d.values,
        ));
    }
    let mut backgrounds: Vec<&str> = Vec::new();
    for s in &synth {
        if s.region.shape_mask.count_on() > 0 {
            let d = color_histogram(&s.image.crop(s.region.bbox)?, Some(&s.region.shape_mask), bins)?;
            rows.push((
                format!("synthetic:{}", s.entry_id),
                "synthetic".into(),
                s.candidate.category.clone(),
                d.values,
            ));
        }
        if !backgrounds.contains(&s.background_id.as_str()) {
            backgrounds.push(&s.background_id);
        }
    }
    backgrounds.sort_unstable();
    for id in backgrounds {
        let im = original
            .image(id)
            .ok_or_else(|| Error::schema("plan.background_image_id", format!("unknown image {id:?}")))?;
        let d = color_histogram(&Raster::load(&original.image_path(im))?.to_rgb(), None, bins)?;
        rows.push((format!("background:{id}"), "background".into(), String::new(), d.values));
    }
    let descriptors: Vec<Vec<f64>> = rows.iter().map(|r| r.3.clone()).collect();
    let (points, note) = match evalkit::style_projection(&descriptors) {
        Ok(p) => (p, None),
        Err(Error::TooFewSamples { needed, got }) => {
            (Vec::new(), Some(format!("need {needed} descriptors, got {got}")))
        }
        Err(e) => return Err(e),
    };
    let style_points: Vec<StylePoint> = rows
        .iter()
        .zip(&points)
        .map(|(r, p)| StylePoint {
            id: r.0.clone(),
            x: p[0],
            y: p[1],
            split: r.1.clone(),
            category: r.2.clone(),
        })
        .collect();
    evalkit::write_style_points(&run.style_points(), &style_points)?;
    evalkit::write_descriptors(&run.descriptors(), &rows)?;

    let report = Report {
        schema: REPORT_SCHEMA.into(),
        config_fingerprint: cfg.fingerprint(),
        backend: backends.name.clone(),
        embed_dim: cfg.backend.embed_dim,
        filtration: aggregate_stats(&results),
        fid,
        fidelity,
        style_projection: StyleSection {
            points: style_points.len(),
            method: "pca".into(),
            points_file: "style_points.csv".into(),
            descriptors_file: "descriptors.csv".into(),
            note,
        },
        tail_stats: TailSection {
            threshold: cfg.plan.tail_threshold,
            original: evalkit::tail_stats(&original, cfg.plan.tail_threshold),
            augmented: evalkit::tail_stats(&augmented, cfg.plan.tail_threshold),
        },
    };
    write_json(&run.report(), &report)?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

/// Human-readable summary of a run.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let run = RunDir::new(&cfg.run.output_dir);
    if !run.report().is_file() {
        return Err(Error::MissingRun(run.root.clone()));
    }
    let report: Report = read_json(&run.report())?;
    let timings: Option<TimingReport> = read_json(&run.timings()).ok();
    let s = &report.filtration;
    let mut out = String::new();
    out += &format!("run        {}\n", run.root.display());
    out += &format!("backend    {} (dim {})\n", report.backend, report.embed_dim);
    out += &format!(
        "filtration {} kept: {} background-style ({}%), {} self-style\n",
        s.total,
        s.background_kept,
        fmt_opt(s.background_ratio().map(|r| 100.0 * r), 1),
        s.self_kept
    );
    out += &format!(
        "fid        {} ({} real, {} synthetic)\n",
        fmt_opt(report.fid.value, 4),
        report.fid.real_count,
        report.fid.synthetic_count
    );
    out += &format!(
        "fidelity   {} over {} regions\n",
        fmt_opt(report.fidelity.score, 2),
        report.fidelity.pairs
    );
    let tail: Vec<&str> = report
        .tail_stats
        .original
        .iter()
        .filter(|(_, t)| t.is_tail)
        .map(|(c, _)| c.as_str())
        .collect();
    out += &format!("tail (<{}) {}\n", report.tail_stats.threshold, tail.join(", "));
    for (cat, t) in &report.tail_stats.original {
        let after = report.tail_stats.augmented.get(cat).map_or(t.count, |a| a.count);
        out += &format!("  {cat:<12} {:>7} -> {:>7}\n", t.count, after);
    }
    if let Some(t) = timings {
        let m = t.mean_per_entry;
        out += &format!(
            "seconds/entry selection {:.3} + composition {:.3} + filtration {:.3} = {:.3}\n",
            m.selection,
            m.composition,
            m.filtration,
            m.total()
        );
    }
    Ok(out)
}

/// Protocol conformance of the configured live endpoint.
pub fn cmd_check_backend(cfg: &RunConfig) -> Result<Vec<conformance::CheckResult>> {
    if cfg.backend.kind != BackendKind::Live {
        return Err(Error::Config("check-backend needs backend.kind = \"live\"".into()));
    }
    let mut http = cfg.backend.http.clone();
    http.embed_dim = cfg.backend.embed_dim;
    Ok(conformance::run(&http))
}

//! Style-aligned composition: identity tokens for the candidate, the two
//! detail-conditioning variants, and the paired generation call.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, GenerationRequest, Generator, StyleVariant};
use crate::cellbank::{CellRecord, CellType};
use crate::dataio::Rle;
use crate::error::{Error, Result};
use crate::imageproc::{self, HighPassKind, Region};
use crate::raster::{BBox, Raster};

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub selection: f64,
    pub composition: f64,
    pub filtration: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.selection + self.composition + self.filtration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposeOptions {
    pub alpha: f64,
    pub highpass: HighPassKind,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            alpha: imageproc::DEFAULT_ALPHA,
            highpass: HighPassKind::Sobel,
        }
    }
}

/// Conditioning raster and shape mask for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleInput {
    pub conditioning: Raster,
    pub shape_mask: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleInputs {
    pub self_style: StyleInput,
    pub background_style: StyleInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionPair {
    pub region_id: String,
    pub region: Region,
    pub candidate_id: u64,
    pub reference_id: u64,
    pub self_image: Raster,
    pub background_image: Raster,
    pub seed: u64,
    pub timings: StageTimings,
}

impl CompositionPair {
    pub fn image(&self, variant: StyleVariant) -> &Raster {
        match variant {
            StyleVariant::SelfStyle => &self.self_image,
            StyleVariant::BackgroundStyle => &self.background_image,
        }
    }
}

/// ID tokens of the candidate: embedding of its masked, centre-aligned cell.
/// Falls back to `[global]` when the backend returns no tokens.
pub fn extract_id_map(candidate: &CellRecord, embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    let (cell, mask) = candidate.aligned_cell()?;
    let bundle = embedder.embed(&cell, Some(&mask))?;
    Ok(bundle.id_tokens())
}

/// Build both conditioning variants. The candidate's detail map is used as
/// is for self-style; for background-style it is blended with the
/// reference's detail map (reference resampled to the candidate's size
/// first). Both maps are resampled to the region box and stitched where the
/// candidate's mask lands.
pub fn prepare_style_inputs(
    candidate: &CellRecord,
    reference: &CellRecord,
    background: &Raster,
    region: &Region,
    alpha: f64,
    highpass: HighPassKind,
) -> Result<StyleInputs> {
    region.check_inside(background)?;
    let (cw, ch) = candidate.crop.dims();
    let ht = imageproc::highpass_with(&candidate.crop, highpass)?;
    let reference_crop = reference.crop.resize_bilinear(cw, ch);
    let reference_crop = if reference_crop.channels() == candidate.crop.channels() {
        reference_crop
    } else {
        reference_crop.to_rgb()
    };
    let hr = imageproc::highpass_with(&reference_crop, highpass)?;
    let hn = imageproc::blend_hf(&ht, &hr, alpha)?;

    let (bw, bh) = (region.bbox.w as u32, region.bbox.h as u32);
    let shape_mask = candidate.mask.resize_nearest(bw, bh);
    let placed = region.with_shape_mask(shape_mask.clone())?;
    let self_cond = imageproc::stitch(background, &ht.resize_bilinear(bw, bh), &placed)?;
    let bg_cond = imageproc::stitch(background, &hn.resize_bilinear(bw, bh), &placed)?;
    Ok(StyleInputs {
        self_style: StyleInput {
            conditioning: self_cond,
            shape_mask: shape_mask.clone(),
        },
        background_style: StyleInput {
            conditioning: bg_cond,
            shape_mask,
        },
    })
}

/// Generate both style variants for one region with a shared seed and shared
/// identity tokens.
#[allow(clippy::too_many_arguments)]
pub fn compose_pair(
    region_id: &str,
    background: &Raster,
    region: &Region,
    candidate: &CellRecord,
    reference: &CellRecord,
    generator: &dyn Generator,
    embedder: &dyn Embedder,
    seed: u64,
    options: &ComposeOptions,
) -> Result<CompositionPair> {
    let started = Instant::now();
    let background = background.to_rgb();
    let id_tokens = extract_id_map(candidate, embedder).map_err(|e| e.context("identity tokens"))?;
    let inputs = prepare_style_inputs(
        candidate,
        reference,
        &background,
        region,
        options.alpha,
        options.highpass,
    )?;
    let (bw, bh) = (region.bbox.w as u32, region.bbox.h as u32);
    let candidate_crop = candidate.crop.resize_bilinear(bw, bh);

    let run = |variant: StyleVariant, input: &StyleInput| -> Result<Raster> {
        let request = GenerationRequest {
            background: background.clone(),
            conditioning: input.conditioning.clone(),
            shape_mask: input.shape_mask.clone(),
            bbox: region.bbox,
            id_tokens: id_tokens.clone(),
            seed,
            variant,
            candidate: Some(candidate_crop.clone()),
        };
        let out = generator
            .generate(&request)
            .map_err(|e| e.context(format!("{variant} generation")))?;
        if out.dims() != background.dims() {
            return Err(Error::MalformedResponse(format!("{variant} image has wrong size")));
        }
        Ok(out)
    };
    let self_image = run(StyleVariant::SelfStyle, &inputs.self_style)?;
    let background_image = run(StyleVariant::BackgroundStyle, &inputs.background_style)?;

    Ok(CompositionPair {
        region_id: region_id.to_string(),
        region: region.with_shape_mask(inputs.self_style.shape_mask)?,
        candidate_id: candidate.id,
        reference_id: reference.id,
        self_image,
        background_image,
        seed,
        timings: StageTimings {
            composition: started.elapsed().as_secs_f64(),
            ..Default::default()
        },
    })
}

/// Pair metadata written next to the two images. Timings are kept out so the
/// file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub region_id: String,
    pub bbox: BBox,
    pub orig_category: String,
    pub orig_type: CellType,
    pub orig_area: u64,
    /// Placed shape mask, run-length encoded over the box.
    pub shape_mask: Rle,
    pub candidate_id: u64,
    pub reference_id: u64,
    pub seed: u64,
}

fn mask_to_rle(mask: &Raster) -> Rle {
    let (w, h) = mask.dims();
    let col: Vec<bool> = (0..w)
        .flat_map(|x| (0..h).map(move |y| (x, y)))
        .map(|(x, y)| mask.get(x, y, 0) > 127)
        .collect();
    Rle::encode(h, w, &col)
}

fn rle_to_mask(rle: &Rle) -> Result<Raster> {
    let [h, w] = rle.size;
    let bits = rle.decode()?;
    Ok(Raster::from_fn(w, h, 1, |x, y, _| {
        if bits[(x * h + y) as usize] {
            255
        } else {
            0
        }
    }))
}

impl CompositionPair {
    pub fn meta(&self) -> PairMeta {
        PairMeta {
            region_id: self.region_id.clone(),
            bbox: self.region.bbox,
            orig_category: self.region.orig_category.clone(),
            orig_type: self.region.orig_type,
            orig_area: self.region.orig_area,
            shape_mask: mask_to_rle(&self.region.shape_mask),
            candidate_id: self.candidate_id,
            reference_id: self.reference_id,
            seed: self.seed,
        }
    }

    /// Writes `<id>.self.png`, `<id>.background.png` and `<id>.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.self_image
            .save_png(&dir.join(format!("{}.self.png", self.region_id)))?;
        self.background_image
            .save_png(&dir.join(format!("{}.background.png", self.region_id)))?;
        let path = dir.join(format!("{}.json", self.region_id));
        let json = serde_json::to_string_pretty(&self.meta()).expect("pair meta serialises");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, region_id: &str) -> Result<CompositionPair> {
        let path = dir.join(format!("{region_id}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: PairMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&path, Some(e.line()), e))?;
        let region = Region::new(
            meta.bbox,
            rle_to_mask(&meta.shape_mask)?,
            meta.orig_category,
            meta.orig_type,
            meta.orig_area,
        )?;
        Ok(CompositionPair {
            region_id: meta.region_id,
            region,
            candidate_id: meta.candidate_id,
            reference_id: meta.reference_id,
            self_image: Raster::load(&dir.join(format!("{region_id}.self.png")))?,
            background_image: Raster::load(&dir.join(format!("{region_id}.background.png")))?,
            seed: meta.seed,
            timings: StageTimings::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{EmbeddingBundle, ReferenceBackend};

    fn textured(id: u64, seed: u32) -> CellRecord {
        let crop = Raster::from_fn(20, 18, 3, |x, y, c| {
            let v = (x * 13 * seed + y * 7 + c as u32 * 31 + (x * y * seed) % 17) % 256;
            v as u8
        });
        let mask = crate::backends::reference::ellipse_mask(20, 18);
        CellRecord::new(
            id,
            "hsil",
            CellType::SingleCell,
            crop,
            mask,
            format!("src{id}"),
            BBox::new(0, 0, 20, 18),
            None,
        )
        .unwrap()
    }

    fn background() -> Raster {
        Raster::from_fn(64, 64, 3, |x, y, c| (90 + (x + 2 * y + c as u32) % 40) as u8)
    }

    fn region() -> Region {
        Region::new(
            BBox::new(20, 24, 24, 16),
            Raster::filled(24, 16, 1, 255),
            "hsil",
            CellType::SingleCell,
            300,
        )
        .unwrap()
    }

    fn outside_equal(a: &Raster, b: &Raster, bbox: BBox) -> bool {
        (0..a.height()).all(|y| {
            (0..a.width())
                .all(|x| bbox.contains(x as i64, y as i64) || (0..3).all(|c| a.get(x, y, c) == b.get(x, y, c)))
        })
    }

    #[test]
    fn alpha_one_collapses_variants() {
        let inputs = prepare_style_inputs(
            &textured(0, 3),
            &textured(1, 5),
            &background(),
            &region(),
            1.0,
            HighPassKind::Sobel,
        )
        .unwrap();
        assert_eq!(inputs.self_style, inputs.background_style);
    }

    #[test]
    fn same_cell_collapses_variants() {
        let c = textured(0, 3);
        for alpha in [0.0, 0.1, 0.37, 0.9] {
            let inputs = prepare_style_inputs(&c, &c, &background(), &region(), alpha, HighPassKind::Sobel).unwrap();
            assert_eq!(inputs.self_style, inputs.background_style, "alpha {alpha}");
        }
    }

    #[test]
    fn distinct_textures_differ_only_inside_box() {
        let bg = background();
        let r = region();
        let inputs = prepare_style_inputs(&textured(0, 3), &textured(1, 5), &bg, &r, 0.1, HighPassKind::Sobel).unwrap();
        assert_ne!(inputs.self_style.conditioning, inputs.background_style.conditioning);
        assert!(outside_equal(
            &inputs.self_style.conditioning,
            &inputs.background_style.conditioning,
            r.bbox
        ));
        assert!(outside_equal(&inputs.self_style.conditioning, &bg, r.bbox));
    }

    struct TokenlessEmbedder;
    impl Embedder for TokenlessEmbedder {
        fn embed(&self, _: &Raster, _: Option<&Raster>) -> Result<EmbeddingBundle> {
            Ok(EmbeddingBundle {
                global: vec![0.0, 1.0],
                tokens: None,
            })
        }
    }

    #[test]
    fn id_map_fallback_and_determinism() {
        let c = textured(0, 3);
        assert_eq!(extract_id_map(&c, &TokenlessEmbedder).unwrap(), vec![vec![0.0, 1.0]]);
        let r = ReferenceBackend::new(32);
        assert_eq!(extract_id_map(&c, &r).unwrap(), extract_id_map(&c, &r).unwrap());
        let mut empty = c.clone();
        empty.mask = Raster::filled(20, 18, 1, 0);
        assert!(matches!(extract_id_map(&empty, &r), Err(Error::EmptyMask)));
    }

    #[test]
    fn pair_is_deterministic_and_confined() {
        let r = ReferenceBackend::new(32);
        let bg = background();
        let reg = region();
        let (cand, refc) = (textured(0, 3), textured(1, 5));
        let opts = ComposeOptions::default();
        let a = compose_pair("r0", &bg, &reg, &cand, &refc, &r, &r, 11, &opts).unwrap();
        let b = compose_pair("r0", &bg, &reg, &cand, &refc, &r, &r, 11, &opts).unwrap();
        assert_eq!(a.self_image, b.self_image);
        assert_eq!(a.background_image, b.background_image);
        let allowed = reg.bbox.dilate(2, 64, 64);
        assert!(outside_equal(&a.self_image, &bg, allowed));
        assert!(outside_equal(&a.background_image, &bg, allowed));
        assert_ne!(a.self_image, a.background_image);

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = CompositionPair::load(dir.path(), "r0").unwrap();
        assert_eq!(back.self_image, a.self_image);
        assert_eq!(back.region, a.region);
    }

    #[test]
    fn empty_candidate_placement_leaves_background() {
        let r = ReferenceBackend::new(32);
        let bg = background();
        let mut cand = textured(0, 3);
        // a mask whose on-pixels vanish under nearest resampling to a 1x1 box
        let mut mask = Raster::filled(20, 18, 1, 0);
        mask.set(0, 0, 0, 255);
        cand.mask = mask;
        let reg = Region::new(
            BBox::new(5, 5, 1, 1),
            Raster::filled(1, 1, 1, 255),
            "hsil",
            CellType::SingleCell,
            1,
        )
        .unwrap();
        let pair = compose_pair(
            "r1",
            &bg,
            &reg,
            &cand,
            &textured(1, 5),
            &r,
            &r,
            1,
            &ComposeOptions::default(),
        )
        .unwrap();
        assert_eq!(pair.self_image, bg);
        assert_eq!(pair.background_image, bg);
    }
}

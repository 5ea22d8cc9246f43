//! Deterministic raster mathematics: high-pass detail maps, the detail blend,
//! stitching into a background, centre alignment, feathered compositing and
//! colour-histogram style descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BBox, HFMap, Raster};

/// Value used for pixels uncovered by a translation.
pub const NEUTRAL_GRAY: u8 = 128;

/// Default weight of the candidate's own detail in the background-style blend.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighPassKind {
    /// Sobel gradient magnitude.
    #[default]
    Sobel,
    /// Signed 4-neighbour Laplacian.
    Laplacian,
}

/// A composition site: a box in background coordinates plus the shape mask of
/// the cell that currently occupies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub bbox: BBox,
    pub shape_mask: Raster,
    pub orig_category: String,
    pub orig_type: crate::cellbank::CellType,
    pub orig_area: u64,
}

impl Region {
    pub fn new(
        bbox: BBox,
        shape_mask: Raster,
        orig_category: impl Into<String>,
        orig_type: crate::cellbank::CellType,
        orig_area: u64,
    ) -> Result<Region> {
        if bbox.w <= 0 || bbox.h <= 0 {
            return Err(Error::InvalidArgument(format!(
                "region box {:?} is empty",
                bbox.tuple()
            )));
        }
        if shape_mask.channels() != 1 || shape_mask.dims() != (bbox.w as u32, bbox.h as u32) {
            return Err(Error::DimensionMismatch(format!(
                "shape mask {:?} does not match region box {}x{}",
                shape_mask.dims(),
                bbox.w,
                bbox.h
            )));
        }
        Ok(Region {
            bbox,
            shape_mask,
            orig_category: orig_category.into(),
            orig_type,
            orig_area,
        })
    }

    pub fn with_shape_mask(&self, shape_mask: Raster) -> Result<Region> {
        Region::new(
            self.bbox,
            shape_mask,
            self.orig_category.clone(),
            self.orig_type,
            self.orig_area,
        )
    }

    pub fn check_inside(&self, background: &Raster) -> Result<()> {
        self.bbox.check_inside(background.width(), background.height())
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

#[inline]
fn correlate3(image: &Raster, kernel: &[[f64; 3]; 3], x: i64, y: i64, c: u8) -> f64 {
    let mut acc = 0.0;
    for (ky, row) in kernel.iter().enumerate() {
        for (kx, &k) in row.iter().enumerate() {
            if k != 0.0 {
                acc += k * image.get_clamped(x + kx as i64 - 1, y + ky as i64 - 1, c) as f64;
            }
        }
    }
    acc
}

/// Sobel gradient magnitude per channel with replicate border padding.
pub fn highpass(image: &Raster) -> Result<HFMap> {
    highpass_with(image, HighPassKind::Sobel)
}

pub fn highpass_with(image: &Raster, kind: HighPassKind) -> Result<HFMap> {
    if image.data().is_empty() {
        return Err(Error::EmptyImage);
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for c in 0..ch {
                let v = match kind {
                    HighPassKind::Sobel => {
                        let gx = correlate3(image, &SOBEL_X, x, y, c);
                        let gy = correlate3(image, &SOBEL_Y, x, y, c);
                        (gx * gx + gy * gy).sqrt()
                    }
                    HighPassKind::Laplacian => correlate3(image, &LAPLACIAN, x, y, c),
                };
                data.push(v);
            }
        }
    }
    HFMap::new(w, h, ch, data)
}

/// `alpha * ht + (1 - alpha) * hr`, elementwise. Equal inputs pass through
/// unchanged, so identical maps blend to themselves for every alpha.
pub fn blend_hf(ht: &HFMap, hr: &HFMap, alpha: f64) -> Result<HFMap> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if !ht.same_shape(hr) {
        return Err(Error::DimensionMismatch(format!(
            "blend of {:?}x{} with {:?}x{}",
            ht.dims(),
            ht.channels(),
            hr.dims(),
            hr.channels()
        )));
    }
    let data = ht
        .data()
        .iter()
        .zip(hr.data())
        .map(|(&t, &r)| if t == r { t } else { alpha * t + (1.0 - alpha) * r })
        .collect();
    HFMap::new(ht.width(), ht.height(), ht.channels(), data)
}

/// Conditioning raster: the background, with the min-max normalised detail
/// map written inside the region wherever the shape mask is on.
pub fn stitch(background: &Raster, hf: &HFMap, region: &Region) -> Result<Raster> {
    region.check_inside(background)?;
    let (bw, bh) = (region.bbox.w as u32, region.bbox.h as u32);
    if hf.dims() != (bw, bh) {
        return Err(Error::DimensionMismatch(format!(
            "hf map {:?} must match region box {bw}x{bh}",
            hf.dims()
        )));
    }
    let bg_ch = background.channels();
    if hf.channels() != 1 && hf.channels() != bg_ch {
        return Err(Error::DimensionMismatch(format!(
            "hf map has {} channels, background {}",
            hf.channels(),
            bg_ch
        )));
    }
    let normalized = hf.normalize_to_u8();
    let mut out = background.clone();
    for y in 0..bh {
        for x in 0..bw {
            if region.shape_mask.get(x, y, 0) <= 127 {
                continue;
            }
            let (ox, oy) = (region.bbox.x as u32 + x, region.bbox.y as u32 + y);
            for c in 0..bg_ch {
                let src_c = if normalized.channels() == 1 { 0 } else { c };
                out.set(ox, oy, c, normalized.get(x, y, src_c));
            }
        }
    }
    Ok(out)
}

/// Mean position of the mask's on-pixels.
pub fn mask_centroid(mask: &Raster) -> Result<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y, 0) > 127 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sx / n as f64, sy / n as f64))
}

/// Translate crop and mask onto a `canvas`-sized raster so the mask centroid
/// sits at the canvas centre. Uncovered crop pixels are neutral gray, uncovered
/// mask pixels are off.
pub fn center_align(crop: &Raster, mask: &Raster, canvas: (u32, u32)) -> Result<(Raster, Raster)> {
    if crop.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "crop {:?} vs mask {:?}",
            crop.dims(),
            mask.dims()
        )));
    }
    if mask.channels() != 1 {
        return Err(Error::UnsupportedChannels(mask.channels()));
    }
    let (cw, chh) = canvas;
    if cw == 0 || chh == 0 {
        return Err(Error::EmptyImage);
    }
    let (cx, cy) = mask_centroid(mask)?;
    let dx = ((cw as f64 - 1.0) / 2.0 - cx).round() as i64;
    let dy = ((chh as f64 - 1.0) / 2.0 - cy).round() as i64;

    let mut out_crop = Raster::filled(cw, chh, crop.channels(), NEUTRAL_GRAY);
    let mut out_mask = Raster::filled(cw, chh, 1, 0);
    for y in 0..chh as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= crop.height() as i64 {
            continue;
        }
        for x in 0..cw as i64 {
            let sx = x - dx;
            if sx < 0 || sx >= crop.width() as i64 {
                continue;
            }
            for c in 0..crop.channels() {
                out_crop.set(x as u32, y as u32, c, crop.get(sx as u32, sy as u32, c));
            }
            out_mask.set(x as u32, y as u32, 0, mask.get(sx as u32, sy as u32, 0));
        }
    }
    Ok((out_crop, out_mask))
}

/// Crop pixels outside the mask replaced by neutral gray.
pub fn apply_mask(crop: &Raster, mask: &Raster) -> Result<Raster> {
    if crop.dims() != mask.dims() {
        return Err(Error::DimensionMismatch("crop and mask differ in size".into()));
    }
    let mut out = crop.clone();
    for y in 0..crop.height() {
        for x in 0..crop.width() {
            if mask.get(x, y, 0) <= 127 {
                for c in 0..crop.channels() {
                    out.set(x, y, c, NEUTRAL_GRAY);
                }
            }
        }
    }
    Ok(out)
}

/// Binary mask (threshold at 127) box-filtered with the given radius and zero
/// padding. Radius 0 returns the hard 0/1 mask.
pub fn feather_alpha(mask: &Raster, radius: u32) -> Vec<f64> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let hard: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if mask.get(x as u32, y as u32, 0) > 127 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if radius == 0 {
        return hard;
    }
    let r = radius as i64;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; hard.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    acc += hard[(yy * w + xx) as usize];
                }
            }
            out[(y * w + x) as usize] = acc / norm;
        }
    }
    out
}

/// Alpha-composite `crop` over `background` inside the region box, with alpha
/// taken from the feathered mask. Pixels whose alpha is 0 are untouched.
pub fn feathered_composite(
    background: &Raster,
    crop: &Raster,
    mask: &Raster,
    region: &Region,
    feather_radius: u32,
) -> Result<Raster> {
    region.check_inside(background)?;
    let size = (region.bbox.w as u32, region.bbox.h as u32);
    if crop.dims() != size || mask.dims() != size {
        return Err(Error::DimensionMismatch(format!(
            "crop {:?} / mask {:?} must match region box {size:?}",
            crop.dims(),
            mask.dims()
        )));
    }
    let crop = if crop.channels() == background.channels() {
        crop.clone()
    } else if crop.channels() == 1 {
        crop.to_rgb()
    } else {
        return Err(Error::DimensionMismatch("color crop over gray background".into()));
    };
    let alpha = feather_alpha(mask, feather_radius);
    let mut out = background.clone();
    for y in 0..size.1 {
        for x in 0..size.0 {
            let a = alpha[(y * size.0 + x) as usize];
            if a <= 0.0 {
                continue;
            }
            let (ox, oy) = (region.bbox.x as u32 + x, region.bbox.y as u32 + y);
            for c in 0..out.channels() {
                let v = a * crop.get(x, y, c) as f64 + (1.0 - a) * background.get(ox, oy, c) as f64;
                out.set(ox, oy, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

/// Box blur with a clamped (replicate) window, used for detail extraction.
pub fn box_blur(image: &Raster, radius: u32) -> Raster {
    if radius == 0 {
        return image.clone();
    }
    let r = radius as i64;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    Raster::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                acc += image.get_clamped(x as i64 + dx, y as i64 + dy, c) as f64;
            }
        }
        (acc / norm).round() as u8
    })
}

/// Normalised per-channel colour histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleDescriptor {
    pub bins_per_channel: usize,
    pub values: Vec<f64>,
}

pub const DEFAULT_STYLE_BINS: usize = 32;

/// Concatenated R, G, B histograms over the selected pixels, normalised to sum 1.
pub fn color_histogram(image: &Raster, mask: Option<&Raster>, bins_per_channel: usize) -> Result<StyleDescriptor> {
    if image.channels() != 3 {
        return Err(Error::UnsupportedChannels(image.channels()));
    }
    if bins_per_channel == 0 || bins_per_channel > 256 {
        return Err(Error::InvalidArgument(format!(
            "bins_per_channel {bins_per_channel} not in 1..=256"
        )));
    }
    if let Some(m) = mask {
        if m.dims() != image.dims() {
            return Err(Error::DimensionMismatch("histogram mask size".into()));
        }
    }
    let mut counts = vec![0u64; 3 * bins_per_channel];
    let mut selected = 0u64;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.is_some_and(|m| m.get(x, y, 0) <= 127) {
                continue;
            }
            selected += 1;
            for c in 0..3u8 {
                let bin = image.get(x, y, c) as usize * bins_per_channel / 256;
                counts[c as usize * bins_per_channel + bin] += 1;
            }
        }
    }
    if selected == 0 {
        return Err(Error::EmptySelection);
    }
    let total = (3 * selected) as f64;
    Ok(StyleDescriptor {
        bins_per_channel,
        values: counts.into_iter().map(|n| n as f64 / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellbank::CellType;

    fn region(bbox: BBox, mask: Raster) -> Region {
        Region::new(bbox, mask, "x", CellType::SingleCell, 1).unwrap()
    }

    #[test]
    fn constant_image_has_no_detail() {
        let img = Raster::filled(7, 5, 3, 128);
        assert!(highpass(&img).unwrap().data().iter().all(|&v| v == 0.0));
        let lap = highpass_with(&img, HighPassKind::Laplacian).unwrap();
        assert!(lap.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_convolved_step_edge() {
        // columns 0, 0, 255 with replicate padding:
        // x=0 sees (0,0,0); x=1 sees (0,0,255); x=2 sees (0,255,255)
        // Gx = 1*255 + 2*255 + 1*255 = 1020 wherever the window straddles the edge.
        let img = Raster::from_fn(3, 3, 1, |x, _, _| if x == 2 { 255 } else { 0 });
        let hf = highpass(&img).unwrap();
        for y in 0..3 {
            assert_eq!(hf.get(0, y, 0), 0.0);
            assert_eq!(hf.get(1, y, 0), 1020.0);
            assert_eq!(hf.get(2, y, 0), 1020.0);
        }
    }

    #[test]
    fn blend_evaluates_pointwise() {
        let ht = HFMap::new(1, 1, 1, vec![100.0]).unwrap();
        let hr = HFMap::new(1, 1, 1, vec![20.0]).unwrap();
        let v = blend_hf(&ht, &hr, 0.1).unwrap().data()[0];
        assert!((v - 28.0).abs() < 1e-12);
        assert_eq!(blend_hf(&ht, &hr, 1.0).unwrap(), ht);
        assert_eq!(blend_hf(&ht, &hr, 0.0).unwrap(), hr);
        let other = HFMap::zeros(2, 1, 1);
        assert!(matches!(blend_hf(&ht, &other, 0.5), Err(Error::DimensionMismatch(_))));
        assert!(blend_hf(&ht, &hr, 1.5).is_err());
    }

    #[test]
    fn stitch_checkerboard_fixture() {
        // 4x4 background of 10s, 2x2 region at (1,1), checkerboard mask.
        // hf values 0, 1, 2, 3 normalise to 0, 85, 170, 255.
        let bg = Raster::filled(4, 4, 1, 10);
        let mask = Raster::from_fn(2, 2, 1, |x, y, _| if (x + y) % 2 == 0 { 255 } else { 0 });
        let hf = HFMap::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = stitch(&bg, &hf, &region(BBox::new(1, 1, 2, 2), mask)).unwrap();
        #[rustfmt::skip]
        let expected = [
            10, 10, 10, 10,
            10,  0, 10, 10,
            10, 10, 255, 10,
            10, 10, 10, 10,
        ];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn stitch_full_cover_and_empty_mask() {
        let bg = Raster::from_fn(3, 2, 3, |x, y, c| (x * 50 + y * 20 + c as u32) as u8);
        let hf = HFMap::new(3, 2, 1, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        let full = region(BBox::new(0, 0, 3, 2), Raster::filled(3, 2, 1, 255));
        let out = stitch(&bg, &hf, &full).unwrap();
        assert_eq!(out, hf.normalize_to_u8().to_rgb());
        let empty = region(BBox::new(0, 0, 3, 2), Raster::filled(3, 2, 1, 0));
        assert_eq!(stitch(&bg, &hf, &empty).unwrap(), bg);
    }

    #[test]
    fn stitch_rejects_out_of_bounds() {
        let bg = Raster::filled(4, 4, 3, 0);
        let r = region(BBox::new(3, 3, 2, 2), Raster::filled(2, 2, 1, 255));
        assert!(matches!(
            stitch(&bg, &HFMap::zeros(2, 2, 1), &r),
            Err(Error::RegionOutOfBounds { .. })
        ));
    }

    #[test]
    fn center_align_single_pixel() {
        let mut mask = Raster::filled(9, 9, 1, 0);
        mask.set(0, 0, 0, 255);
        let crop = Raster::from_fn(9, 9, 3, |x, y, _| (x + 9 * y) as u8);
        let (c, m) = center_align(&crop, &mask, (9, 9)).unwrap();
        assert_eq!(m.get(4, 4, 0), 255);
        assert_eq!(m.count_on(), 1);
        assert_eq!(c.get(4, 4, 0), 0);
        assert_eq!(c.get(0, 0, 0), NEUTRAL_GRAY);
    }

    #[test]
    fn center_align_identity_when_centered() {
        let mask = Raster::from_fn(5, 5, 1, |x, y, _| {
            if (1..4).contains(&x) && (1..4).contains(&y) {
                255
            } else {
                0
            }
        });
        let crop = Raster::from_fn(5, 5, 3, |x, y, c| (x * 30 + y * 3 + c as u32) as u8);
        let (c, m) = center_align(&crop, &mask, (5, 5)).unwrap();
        assert_eq!(c, crop);
        assert_eq!(m, mask);
    }

    #[test]
    fn center_align_empty_mask() {
        let mask = Raster::filled(4, 4, 1, 0);
        assert!(matches!(
            center_align(&Raster::filled(4, 4, 3, 1), &mask, (4, 4)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn feather_zero_full_mask_pastes_verbatim() {
        let bg = Raster::filled(6, 6, 3, 0);
        let crop = Raster::from_fn(3, 2, 3, |x, y, c| (1 + x + 3 * y + c as u32 * 10) as u8);
        let r = region(BBox::new(2, 3, 3, 2), Raster::filled(3, 2, 1, 255));
        let out = feathered_composite(&bg, &crop, &Raster::filled(3, 2, 1, 255), &r, 0).unwrap();
        assert_eq!(out.crop(BBox::new(2, 3, 3, 2)).unwrap(), crop);
        assert_eq!(out.get(0, 0, 0), 0);
    }

    #[test]
    fn feather_empty_mask_is_noop() {
        let bg = Raster::from_fn(5, 5, 3, |x, y, _| (x * y) as u8);
        let r = region(BBox::new(0, 0, 5, 5), Raster::filled(5, 5, 1, 0));
        for radius in 0..4 {
            let out = feathered_composite(
                &bg,
                &Raster::filled(5, 5, 3, 200),
                &Raster::filled(5, 5, 1, 0),
                &r,
                radius,
            )
            .unwrap();
            assert_eq!(out, bg);
        }
    }

    #[test]
    fn feather_one_box_value_at_edge() {
        // Mask on for columns >= 2 of a 5x5 box; at (1, 2) the 3x3 window
        // covers columns 0..=2, one of which (3 pixels of 9) is on.
        let mask = Raster::from_fn(5, 5, 1, |x, _, _| if x >= 2 { 255 } else { 0 });
        let alpha = feather_alpha(&mask, 1);
        assert!((alpha[2 * 5 + 1] - 3.0 / 9.0).abs() < 1e-12);
        assert!((alpha[2 * 5 + 2] - 6.0 / 9.0).abs() < 1e-12);
        // corner: window clipped to 4 in-box cells, zero padding outside
        assert!((alpha[4] - 4.0 / 9.0).abs() < 1e-12);

        let bg = Raster::filled(5, 5, 1, 0);
        let crop = Raster::filled(5, 5, 1, 90);
        let r = region(BBox::new(0, 0, 5, 5), mask.clone());
        let out = feathered_composite(&bg, &crop, &mask, &r, 1).unwrap();
        assert_eq!(out.get(1, 2, 0), 30);
    }

    #[test]
    fn histogram_uniform_and_split() {
        let img = Raster::filled(4, 4, 3, 100);
        let d = color_histogram(&img, None, 32).unwrap();
        let nz: Vec<_> = d.values.iter().filter(|&&v| v > 0.0).collect();
        assert_eq!(nz.len(), 3);
        assert!(nz.iter().all(|&&v| (v - 1.0 / 3.0).abs() < 1e-12));

        let img = Raster::from_fn(4, 2, 3, |x, _, _| if x < 2 { 0 } else { 255 });
        let d = color_histogram(&img, None, 32).unwrap();
        for c in 0..3 {
            assert!((d.values[c * 32] - 1.0 / 6.0).abs() < 1e-12);
            assert!((d.values[c * 32 + 31] - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_empty_selection() {
        let img = Raster::filled(2, 2, 3, 5);
        let mask = Raster::filled(2, 2, 1, 0);
        assert!(matches!(
            color_histogram(&img, Some(&mask), 8),
            Err(Error::EmptySelection)
        ));
    }
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::cellbank::{CellBank, CellType, SelectionQuery};
use crate::error::{Error, Result};
use crate::raster::BBox;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targeting {
    Uniform,
    #[default]
    TailWeighted,
}

impl std::str::FromStr for Targeting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Targeting::Uniform),
            "tail_weighted" => Ok(Targeting::TailWeighted),
            other => Err(Error::Config(format!("unknown targeting {other:?}"))),
        }
    }
}

/// The annotated cell whose site will be recomposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRegion {
    pub annotation_index: usize,
    pub bbox: BBox,
    pub orig_category: String,
    pub orig_type: CellType,
    pub orig_area: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub entry_id: String,
    pub background_image_id: String,
    pub region: PlannedRegion,
    pub candidate_query: SelectionQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub seed: u64,
    pub expand_ratio: f64,
    pub targeting: Targeting,
    pub tail_threshold: usize,
    pub entries: Vec<PlanEntry>,
}

/// `ceil(ratio * n)` tolerant of the representation error in `ratio`.
pub(crate) fn planned_count(expand_ratio: f64, images: usize) -> usize {
    let raw = expand_ratio * images as f64;
    (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize
}

/// Split `total` across weights by largest remainder (ties: lower index).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

struct Site {
    annotation_index: usize,
    image_id: String,
    region: PlannedRegion,
}

fn eligible_sites(dataset: &Dataset, bank: &CellBank) -> Vec<Site> {
    let mut out = Vec::new();
    for (i, a) in dataset.annotations.iter().enumerate() {
        let Some(im) = dataset.image(&a.image_id) else { continue };
        let Ok(bbox) = a.pixel_bbox(im.width, im.height) else {
            continue;
        };
        let area = a.area.round().max(1.0) as u64;
        let query = SelectionQuery {
            category: a.category.clone(),
            cell_type: a.cell_type,
            area,
            exclude_source: Some(a.image_id.clone()),
        };
        if bank.select_candidate(&query).is_err() {
            continue;
        }
        out.push(Site {
            annotation_index: i,
            image_id: a.image_id.clone(),
            region: PlannedRegion {
                annotation_index: i,
                bbox,
                orig_category: a.category.clone(),
                orig_type: a.cell_type,
                orig_area: area,
            },
        });
    }
    out
}

/// Choose `ceil(expand_ratio * |images|)` existing annotated regions to
/// recompose. With [`Targeting::TailWeighted`], categories are weighted by
/// inverse annotation count and categories under `tail_threshold` receive at
/// least half of the entries whenever any are eligible.
pub fn plan_augmentation(
    dataset: &Dataset,
    bank: &CellBank,
    expand_ratio: f64,
    targeting: Targeting,
    tail_threshold: usize,
    seed: u64,
) -> Result<AugmentationPlan> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if !expand_ratio.is_finite() || expand_ratio < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "expand_ratio {expand_ratio} must be >= 0"
        )));
    }
    let mut plan = AugmentationPlan {
        seed,
        expand_ratio,
        targeting,
        tail_threshold,
        entries: Vec::new(),
    };
    let total = planned_count(expand_ratio, dataset.images.len());
    if total == 0 {
        return Ok(plan);
    }
    let sites = eligible_sites(dataset, bank);
    if sites.is_empty() {
        return Err(Error::NoRegions);
    }

    let mut rng = seeds::substream(seed, seeds::PLAN, 0);
    let picks: Vec<usize> = match targeting {
        Targeting::Uniform => (0..total).map(|_| rng.gen_range(0..sites.len())).collect(),
        Targeting::TailWeighted => {
            let counts = dataset.category_counts();
            let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (si, s) in sites.iter().enumerate() {
                by_cat.entry(s.region.orig_category.as_str()).or_default().push(si);
            }
            let cats: Vec<&str> = by_cat.keys().copied().collect();
            let is_tail: Vec<bool> = cats.iter().map(|c| counts[*c] < tail_threshold).collect();
            let mut weights: Vec<f64> = cats.iter().map(|c| 1.0 / counts[*c] as f64).collect();

            let tail_w: f64 = weights.iter().zip(&is_tail).filter(|(_, t)| **t).map(|(w, _)| w).sum();
            let head_w: f64 = weights.iter().zip(&is_tail).filter(|(_, t)| !**t).map(|(w, _)| w).sum();
            let has_tail = tail_w > 0.0;
            if has_tail && head_w > 0.0 && tail_w < head_w {
                let scale = head_w / tail_w;
                for (w, t) in weights.iter_mut().zip(&is_tail) {
                    if *t {
                        *w *= scale;
                    }
                }
            }
            let mut quota = apportion(&weights, total);
            if has_tail {
                let need = total.div_ceil(2);
                let tail_idx = (0..cats.len())
                    .filter(|&i| is_tail[i])
                    .max_by(|&a, &b| weights[a].partial_cmp(&weights[b]).unwrap().then(b.cmp(&a)))
                    .unwrap();
                loop {
                    let have: usize = (0..cats.len()).filter(|&i| is_tail[i]).map(|i| quota[i]).sum();
                    if have >= need {
                        break;
                    }
                    let donor = (0..cats.len())
                        .filter(|&i| !is_tail[i] && quota[i] > 0)
                        .max_by_key(|&i| quota[i]);
                    let Some(d) = donor else { break };
                    quota[d] -= 1;
                    quota[tail_idx] += 1;
                }
            }
            let mut picks = Vec::with_capacity(total);
            for (ci, cat) in cats.iter().enumerate() {
                let members = &by_cat[cat];
                for _ in 0..quota[ci] {
                    picks.push(members[rng.gen_range(0..members.len())]);
                }
            }
            picks.shuffle(&mut rng);
            picks
        }
    };

    plan.entries = picks
        .into_iter()
        .enumerate()
        .map(|(k, si)| {
            let s = &sites[si];
            debug_assert_eq!(s.annotation_index, s.region.annotation_index);
            PlanEntry {
                entry_id: format!("e{k:05}"),
                background_image_id: s.image_id.clone(),
                candidate_query: SelectionQuery {
                    category: s.region.orig_category.clone(),
                    cell_type: s.region.orig_type,
                    area: s.region.orig_area,
                    exclude_source: Some(s.image_id.clone()),
                },
                region: s.region.clone(),
            }
        })
        .collect();
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellbank::testing::strip_record;
    use crate::dataio::{Annotation, ImageEntry};

    fn dataset_with(counts: &[(&str, usize)]) -> Dataset {
        let mut ds = Dataset::new(counts.iter().map(|(c, _)| c.to_string()).collect());
        for i in 0..20 {
            ds.images.push(ImageEntry {
                id: format!("im{i}"),
                path: format!("im{i}.png"),
                width: 64,
                height: 64,
            });
        }
        let mut k = 0;
        for (cat, n) in counts {
            for _ in 0..*n {
                ds.annotations.push(Annotation {
                    image_id: format!("im{}", k % 20),
                    bbox: [2.0, 2.0, 10.0, 10.0].into(),
                    category: cat.to_string(),
                    cell_type: CellType::SingleCell,
                    mask: None,
                    area: 60.0,
                });
                k += 1;
            }
        }
        ds
    }

    fn bank_for(cats: &[&str]) -> CellBank {
        let recs = cats
            .iter()
            .enumerate()
            .map(|(i, c)| strip_record(i as u64, c, CellType::SingleCell, 50, "elsewhere"))
            .collect();
        CellBank::from_records(recs).unwrap()
    }

    #[test]
    fn zero_ratio_gives_empty_plan() {
        let ds = dataset_with(&[("a", 5)]);
        let plan = plan_augmentation(&ds, &bank_for(&["a"]), 0.0, Targeting::Uniform, 500, 1).unwrap();
        assert!(plan.entries.is_empty());
    }

    #[test]
    fn count_from_published_totals() {
        assert_eq!(planned_count(5696.0 / 7410.0, 7410), 5696);
        assert_eq!(planned_count(0.5, 7), 4);
        assert_eq!(planned_count(1.0, 20), 20);
    }

    #[test]
    fn tail_category_gets_majority() {
        let ds = dataset_with(&[("rare", 10), ("common", 1000)]);
        let plan = plan_augmentation(
            &ds,
            &bank_for(&["rare", "common"]),
            2.0,
            Targeting::TailWeighted,
            500,
            3,
        )
        .unwrap();
        assert_eq!(plan.entries.len(), 40);
        let rare = plan
            .entries
            .iter()
            .filter(|e| e.candidate_query.category == "rare")
            .count();
        assert!(rare * 2 >= plan.entries.len(), "{rare}");
        for e in &plan.entries {
            assert_eq!(e.candidate_query.category, e.region.orig_category);
            assert_eq!(
                ds.annotations[e.region.annotation_index].category,
                e.region.orig_category
            );
        }
    }

    #[test]
    fn tail_floor_holds_even_when_weights_favour_head() {
        // inverse-count weights alone would give the tail only about a quarter
        let ds = dataset_with(&[("t", 499), ("h1", 500), ("h2", 500), ("h3", 500)]);
        let bank = bank_for(&["t", "h1", "h2", "h3"]);
        let plan = plan_augmentation(&ds, &bank, 0.55, Targeting::TailWeighted, 500, 0).unwrap();
        let n = plan.entries.len();
        let tail = plan.entries.iter().filter(|e| e.region.orig_category == "t").count();
        assert!(tail * 2 >= n, "{tail}/{n}");
    }

    #[test]
    fn errors_and_determinism() {
        let ds = dataset_with(&[("a", 5)]);
        let empty = CellBank::from_records(vec![]).unwrap();
        assert!(matches!(
            plan_augmentation(&ds, &empty, 1.0, Targeting::Uniform, 500, 0),
            Err(Error::EmptyBank)
        ));
        assert!(matches!(
            plan_augmentation(&ds, &bank_for(&["zzz"]), 1.0, Targeting::Uniform, 500, 0),
            Err(Error::NoRegions)
        ));
        let a = plan_augmentation(&ds, &bank_for(&["a"]), 1.0, Targeting::Uniform, 500, 5).unwrap();
        let b = plan_augmentation(&ds, &bank_for(&["a"]), 1.0, Targeting::Uniform, 500, 5).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<AugmentationPlan>(&json).unwrap(), a);
    }

    #[test]
    fn apportion_sums_to_total() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(apportion(&[3.0, 1.0], 8).iter().sum::<usize>(), 8);
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeds;

/// Number of annotations kept for a category of size `n` at `ratio`.
pub(crate) fn stratum_size(n: usize, ratio: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// Class-stratified subset: each category keeps `round(ratio * n_c)`
/// annotations (at least one), and an image survives iff it keeps at least
/// one annotation. `ratio == 1` returns the dataset unchanged.
pub fn sample_subset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    if ratio == 1.0 {
        return Ok(dataset.clone());
    }
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in dataset.annotations.iter().enumerate() {
        by_category.entry(a.category.as_str()).or_default().push(i);
    }
    let mut keep = BTreeSet::new();
    for (ci, members) in by_category.values().enumerate() {
        let mut rng = seeds::substream(seed, seeds::SUBSET, ci as u64);
        let k = stratum_size(members.len(), ratio);
        keep.extend(members.choose_multiple(&mut rng, k).copied());
    }
    let annotations: Vec<_> = keep.iter().map(|&i| dataset.annotations[i].clone()).collect();
    let live: BTreeSet<&str> = annotations.iter().map(|a| a.image_id.as_str()).collect();
    let images = dataset
        .images
        .iter()
        .filter(|im| live.contains(im.id.as_str()))
        .cloned()
        .collect();
    Ok(Dataset {
        schema: dataset.schema.clone(),
        categories: dataset.categories.clone(),
        images,
        annotations,
        base_dir: dataset.base_dir.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellbank::CellType;
    use crate::dataio::{Annotation, ImageEntry};

    fn counted(counts: &[(&str, usize)]) -> Dataset {
        let mut ds = Dataset::new(counts.iter().map(|(c, _)| c.to_string()).collect());
        let mut k = 0;
        for (cat, n) in counts {
            for _ in 0..*n {
                let id = format!("im{k}");
                ds.images.push(ImageEntry {
                    id: id.clone(),
                    path: format!("{id}.png"),
                    width: 10,
                    height: 10,
                });
                ds.annotations.push(Annotation {
                    image_id: id,
                    bbox: [1.0, 1.0, 2.0, 2.0].into(),
                    category: cat.to_string(),
                    cell_type: CellType::SingleCell,
                    mask: None,
                    area: 4.0,
                });
                k += 1;
            }
        }
        ds
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(stratum_size(40, 0.1), 4);
        assert_eq!(stratum_size(3, 0.1), 1);
        assert_eq!(stratum_size(0, 0.5), 0);
        assert_eq!(stratum_size(5, 0.5), 3);
    }

    #[test]
    fn ratio_validation_and_identity() {
        let ds = counted(&[("a", 3)]);
        assert!(matches!(sample_subset(&ds, 0.0, 1), Err(Error::InvalidRatio(_))));
        assert!(matches!(sample_subset(&ds, 1.5, 1), Err(Error::InvalidRatio(_))));
        assert_eq!(sample_subset(&ds, 1.0, 1).unwrap(), ds);
    }

    #[test]
    fn stratified_counts_and_image_pruning() {
        let ds = counted(&[("a", 40), ("b", 7), ("c", 200)]);
        let sub = sample_subset(&ds, 0.1, 9).unwrap();
        let counts = sub.category_counts();
        assert_eq!(counts["a"], 4);
        assert_eq!(counts["b"], 1);
        assert_eq!(counts["c"], 20);
        assert_eq!(sub.images.len(), 25);
        sub.validate().unwrap();
        assert_eq!(sample_subset(&ds, 0.1, 9).unwrap(), sub);
    }
}

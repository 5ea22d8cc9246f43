//! Two-alternative judging of composition pairs.
//!
//! Each pair is shown to the judge once, in an order decided by a seeded
//! coin; the verdict is mapped back through that order to the kept variant.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Choice, Judge, StyleVariant};
use crate::composer::CompositionPair;
use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_TEMPLATE: &str = "harmonized-v1";

#[derive(Debug, Clone, Deserialize)]
pub struct PromptTemplate {
    /// True when the wording is a paraphrase rather than a verbatim prompt.
    pub paraphrase: bool,
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct Registry {
    templates: BTreeMap<String, PromptTemplate>,
}

fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        serde_json::from_str(include_str!("../prompts/registry.json")).expect("bundled prompt registry parses")
    })
}

pub fn template_ids() -> Vec<&'static str> {
    registry().templates.keys().map(String::as_str).collect()
}

pub fn template(id: &str) -> Result<&'static PromptTemplate> {
    registry()
        .templates
        .get(id)
        .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
}

/// Registered prompt text, placeholders left in place.
pub fn build_prompt(template_id: &str) -> Result<String> {
    Ok(template(template_id)?.text.clone())
}

/// Prompt text with `{category}` substituted.
pub fn render_prompt(template_id: &str, category: &str) -> Result<String> {
    Ok(build_prompt(template_id)?.replace("{category}", category))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    SelfFirst,
    BackgroundFirst,
}

impl PresentationOrder {
    /// Seeded fair coin.
    pub fn from_seed(seed: u64) -> PresentationOrder {
        if seeds::substream(seed, seeds::SHUFFLE, 0).gen::<bool>() {
            PresentationOrder::BackgroundFirst
        } else {
            PresentationOrder::SelfFirst
        }
    }

    /// Variant shown as image A and as image B.
    pub fn variants(self) -> (StyleVariant, StyleVariant) {
        match self {
            PresentationOrder::SelfFirst => (StyleVariant::SelfStyle, StyleVariant::BackgroundStyle),
            PresentationOrder::BackgroundFirst => (StyleVariant::BackgroundStyle, StyleVariant::SelfStyle),
        }
    }

    pub fn resolve(self, choice: Choice) -> StyleVariant {
        let (a, b) = self.variants();
        match choice {
            Choice::A => a,
            Choice::B => b,
        }
    }
}

/// What to do with a verdict that has no `Choice:` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Keep the background-style variant and flag the result.
    #[default]
    BackgroundStyle,
    /// Fail the pair.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterOptions {
    pub template_id: String,
    pub on_unparseable: UnparseablePolicy,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            template_id: DEFAULT_TEMPLATE.into(),
            on_unparseable: UnparseablePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredResult {
    pub region_id: String,
    pub kept_variant: StyleVariant,
    pub presentation_order: PresentationOrder,
    pub rationale: String,
    /// Set when the verdict was unparseable and the fallback variant was kept.
    #[serde(default)]
    pub fallback: bool,
}

pub fn filter_pair(
    pair: &CompositionPair,
    judge: &dyn Judge,
    seed: u64,
    options: &FilterOptions,
) -> Result<FilteredResult> {
    filter_pair_with_order(pair, judge, PresentationOrder::from_seed(seed), options)
}

pub fn filter_pair_with_order(
    pair: &CompositionPair,
    judge: &dyn Judge,
    order: PresentationOrder,
    options: &FilterOptions,
) -> Result<FilteredResult> {
    let prompt = render_prompt(&options.template_id, &pair.region.orig_category)?;
    if pair.self_image == pair.background_image {
        return Ok(FilteredResult {
            region_id: pair.region_id.clone(),
            kept_variant: StyleVariant::BackgroundStyle,
            presentation_order: order,
            rationale: "variants identical".into(),
            fallback: false,
        });
    }
    let (a, b) = order.variants();
    match judge.judge(pair.image(a), pair.image(b), &prompt) {
        Ok(verdict) => Ok(FilteredResult {
            region_id: pair.region_id.clone(),
            kept_variant: order.resolve(verdict.choice),
            presentation_order: order,
            rationale: verdict.rationale,
            fallback: false,
        }),
        Err(Error::UnparseableVerdict(text)) if options.on_unparseable == UnparseablePolicy::BackgroundStyle => {
            log::warn!("pair {}: unparseable verdict, keeping background_style", pair.region_id);
            Ok(FilteredResult {
                region_id: pair.region_id.clone(),
                kept_variant: StyleVariant::BackgroundStyle,
                presentation_order: order,
                rationale: format!("unparseable verdict: {text}"),
                fallback: true,
            })
        }
        Err(e) => Err(e.context(format!("pair {}", pair.region_id))),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiltrationStats {
    pub total: usize,
    pub background_kept: usize,
    pub self_kept: usize,
}

impl FiltrationStats {
    /// Share of background-style keeps; `None` when empty.
    pub fn background_ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.background_kept as f64 / self.total as f64)
    }
}

pub fn aggregate_stats(results: &[FilteredResult]) -> FiltrationStats {
    results.iter().fold(FiltrationStats::default(), |mut s, r| {
        s.total += 1;
        match r.kept_variant {
            StyleVariant::BackgroundStyle => s.background_kept += 1,
            StyleVariant::SelfStyle => s.self_kept += 1,
        }
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{parse_verdict, ReferenceBackend, VlmVerdict};
    use crate::cellbank::CellType;
    use crate::composer::StageTimings;
    use crate::imageproc::Region;
    use crate::raster::{BBox, Raster};

    fn pair(id: &str, smooth_self: bool) -> CompositionPair {
        let bg = Raster::filled(16, 16, 3, 100);
        let mut rough = bg.clone();
        for y in 4..10 {
            for x in 4..10 {
                rough.set(x, y, 0, if (x + y) % 2 == 0 { 0 } else { 255 });
            }
        }
        let mut smooth = bg.clone();
        for y in 4..10 {
            for x in 4..10 {
                smooth.set(x, y, 0, 110);
            }
        }
        let (s, b) = if smooth_self { (smooth, rough) } else { (rough, smooth) };
        CompositionPair {
            region_id: id.into(),
            region: Region::new(
                BBox::new(4, 4, 6, 6),
                Raster::filled(6, 6, 1, 255),
                "asch",
                CellType::SingleCell,
                36,
            )
            .unwrap(),
            candidate_id: 0,
            reference_id: 1,
            self_image: s,
            background_image: b,
            seed: 0,
            timings: StageTimings::default(),
        }
    }

    struct AlwaysA;
    impl Judge for AlwaysA {
        fn judge(&self, _: &Raster, _: &Raster, _: &str) -> Result<VlmVerdict> {
            parse_verdict("Choice: A\nReason: first")
        }
    }

    struct Mumbles;
    impl Judge for Mumbles {
        fn judge(&self, _: &Raster, _: &Raster, _: &str) -> Result<VlmVerdict> {
            parse_verdict("both look fine")
        }
    }

    #[test]
    fn prompts() {
        assert!(build_prompt(DEFAULT_TEMPLATE).unwrap().contains("Choice:"));
        assert!(matches!(build_prompt("nope"), Err(Error::UnknownTemplate(_))));
        let text = render_prompt(DEFAULT_TEMPLATE, "koilocyte").unwrap();
        assert!(text.contains("synthetic koilocyte cell"));
        assert!(!text.contains("{category}"));
        for id in template_ids() {
            assert!(build_prompt(id).unwrap().contains("Choice:"));
            assert!(template(id).unwrap().paraphrase);
        }
    }

    #[test]
    fn content_judge_ignores_order() {
        let judge = ReferenceBackend::new(8);
        let opts = FilterOptions::default();
        for smooth_self in [true, false] {
            let p = pair("r", smooth_self);
            let a = filter_pair_with_order(&p, &judge, PresentationOrder::SelfFirst, &opts).unwrap();
            let b = filter_pair_with_order(&p, &judge, PresentationOrder::BackgroundFirst, &opts).unwrap();
            assert_eq!(a.kept_variant, b.kept_variant);
            let want = if smooth_self {
                StyleVariant::SelfStyle
            } else {
                StyleVariant::BackgroundStyle
            };
            assert_eq!(a.kept_variant, want);
        }
    }

    #[test]
    fn positional_judge_flips_with_order() {
        let p = pair("r", true);
        let opts = FilterOptions::default();
        let a = filter_pair_with_order(&p, &AlwaysA, PresentationOrder::SelfFirst, &opts).unwrap();
        let b = filter_pair_with_order(&p, &AlwaysA, PresentationOrder::BackgroundFirst, &opts).unwrap();
        assert_eq!(a.kept_variant, StyleVariant::SelfStyle);
        assert_eq!(b.kept_variant, StyleVariant::BackgroundStyle);
        assert_eq!(a.rationale, "first");
    }

    #[test]
    fn identical_variants_skip_the_judge() {
        let mut p = pair("r", true);
        p.background_image = p.self_image.clone();
        for order in [PresentationOrder::SelfFirst, PresentationOrder::BackgroundFirst] {
            let r = filter_pair_with_order(&p, &AlwaysA, order, &FilterOptions::default()).unwrap();
            assert_eq!(r.kept_variant, StyleVariant::BackgroundStyle);
            assert!(!r.fallback);
        }
    }

    #[test]
    fn coin_is_seeded_and_roughly_fair() {
        let orders: Vec<_> = (0..200).map(PresentationOrder::from_seed).collect();
        let again: Vec<_> = (0..200).map(PresentationOrder::from_seed).collect();
        assert_eq!(orders, again);
        let first = orders.iter().filter(|o| **o == PresentationOrder::SelfFirst).count();
        assert!((70..130).contains(&first), "{first}");
    }

    #[test]
    fn unparseable_policy() {
        let p = pair("r7", true);
        let r = filter_pair(&p, &Mumbles, 3, &FilterOptions::default()).unwrap();
        assert!(r.fallback);
        assert_eq!(r.kept_variant, StyleVariant::BackgroundStyle);
        let drop = FilterOptions {
            on_unparseable: UnparseablePolicy::Drop,
            ..Default::default()
        };
        let err = filter_pair(&p, &Mumbles, 3, &drop).unwrap_err();
        assert!(err.to_string().contains("r7"));
        assert!(matches!(err.root(), Error::UnparseableVerdict(_)));
    }

    fn result(v: StyleVariant) -> FilteredResult {
        FilteredResult {
            region_id: String::new(),
            kept_variant: v,
            presentation_order: PresentationOrder::SelfFirst,
            rationale: String::new(),
            fallback: false,
        }
    }

    #[test]
    fn stats() {
        assert_eq!(aggregate_stats(&[]), FiltrationStats::default());
        assert_eq!(aggregate_stats(&[]).background_ratio(), None);
        let all_self: Vec<_> = (0..10).map(|_| result(StyleVariant::SelfStyle)).collect();
        let s = aggregate_stats(&all_self);
        assert_eq!((s.total, s.background_kept, s.self_kept), (10, 0, 10));
    }
}

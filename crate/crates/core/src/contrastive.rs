//! Contrastive explanation pipeline: best-match search over embeddings,
//! relevance ranking with quartile ranges, unique-concept differencing,
//! and template rendering.
//!
//! The quartile ranges partition concepts by *cumulative* relevance: with
//! positive scores sorted descending and P their sum, a concept whose
//! cumulative start fraction (sum of scores before it, over P) falls in
//! `[0, .25)` is VeryStrong, `[.25, .5)` Strong, `[.5, .75)` Low and
//! `[.75, 1]` VeryLow. Channels with nonpositive relevance carry no share
//! of the positive mass and are appended to VeryLow.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::crp::{concept_scores_from_trace, ConceptAttribution};
use crate::error::{Error, Result};
use crate::network::{Dataset, Network};
use crate::tensor::cosine_similarity;

/// Quartile band of cumulative concept relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelevanceRange {
    VeryStrong,
    Strong,
    Low,
    VeryLow,
}

impl RelevanceRange {
    pub const ALL: [RelevanceRange; 4] = [
        RelevanceRange::VeryStrong,
        RelevanceRange::Strong,
        RelevanceRange::Low,
        RelevanceRange::VeryLow,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RelevanceRange::VeryStrong => "very_strong",
            RelevanceRange::Strong => "strong",
            RelevanceRange::Low => "low",
            RelevanceRange::VeryLow => "very_low",
        }
    }

    /// Range whose interval contains the cumulative start fraction.
    fn from_start_fraction(start: f64) -> RelevanceRange {
        if start < 0.25 {
            RelevanceRange::VeryStrong
        } else if start < 0.5 {
            RelevanceRange::Strong
        } else if start < 0.75 {
            RelevanceRange::Low
        } else {
            RelevanceRange::VeryLow
        }
    }
}

impl fmt::Display for RelevanceRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RelevanceRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "very_strong" => Ok(RelevanceRange::VeryStrong),
            "strong" => Ok(RelevanceRange::Strong),
            "low" => Ok(RelevanceRange::Low),
            "very_low" => Ok(RelevanceRange::VeryLow),
            other => Err(Error::InvalidConfigValue {
                key: "range".into(),
                details: format!(
                    "unknown relevance range {other:?} \
                     (expected very_strong, strong, low, or very_low)"
                ),
            }),
        }
    }
}

/// One concept channel with its relevance score and assigned range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedConcept {
    pub channel: usize,
    pub score: f64,
    pub range: RelevanceRange,
}

/// All concept channels of one attribution, sorted by descending score
/// (ties by ascending channel id), each with its range.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedConcepts {
    pub instance_id: String,
    pub entries: Vec<RankedConcept>,
}

impl RankedConcepts {
    /// Channels assigned to `range`, ascending.
    pub fn range_set(&self, range: RelevanceRange) -> Vec<usize> {
        let mut set: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.range == range)
            .map(|e| e.channel)
            .collect();
        set.sort_unstable();
        set
    }
}

/// Result of the best-match scan over opposite-class candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatch {
    pub target_id: String,
    pub best_match_id: String,
    pub similarity: f64,
    /// Remaining candidates, best first (similarity descending, then id).
    pub runners_up: Vec<(String, f64)>,
}

/// A fully rendered contrastive explanation for one target instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveExplanation {
    pub target_id: String,
    pub match_id: String,
    pub similarity: f64,
    pub target_class: String,
    pub contrast_class: String,
    pub range: RelevanceRange,
    /// Channels unique to the target's range-set, ascending.
    pub present: Vec<usize>,
    /// Channels unique to the contrast's range-set, ascending.
    pub absent: Vec<usize>,
    /// `|present| + |absent|`.
    pub length: usize,
    pub rendered: String,
}

/// Optional human names for concept channels, loaded from a tab-separated
/// file with one `channel_id<TAB>name` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNames {
    channel_count: usize,
    names: BTreeMap<usize, String>,
}

impl ConceptNames {
    /// No names at all: every channel falls back to `concept#<id>`.
    pub fn unnamed(channel_count: usize) -> Self {
        ConceptNames {
            channel_count,
            names: BTreeMap::new(),
        }
    }

    /// Parses the tab-separated name map. Ids must be unique, in range for
    /// `channel_count`, and names nonempty. Blank lines are permitted.
    pub fn parse(text: &str, channel_count: usize) -> Result<Self> {
        let mut names = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (id_part, name) = raw.split_once('\t').ok_or_else(|| Error::NameMap {
                line,
                details: "expected `channel_id<TAB>name`".into(),
            })?;
            let id: usize = id_part.trim().parse().map_err(|_| Error::NameMap {
                line,
                details: format!("invalid channel id {id_part:?}"),
            })?;
            if id >= channel_count {
                return Err(Error::NameMap {
                    line,
                    details: format!(
                        "channel id {id} out of range (model has {channel_count} concepts)"
                    ),
                });
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::NameMap {
                    line,
                    details: format!("empty name for channel {id}"),
                });
            }
            if names.insert(id, name.to_string()).is_some() {
                return Err(Error::NameMap {
                    line,
                    details: format!("duplicate entry for channel {id}"),
                });
            }
        }
        Ok(ConceptNames {
            channel_count,
            names,
        })
    }

    pub fn load(path: &Path, channel_count: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, channel_count)
    }

    /// Name for a channel, falling back to `concept#<id>`.
    pub fn name(&self, channel: usize) -> String {
        self.names
            .get(&channel)
            .cloned()
            .unwrap_or_else(|| format!("concept#{channel}"))
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }
}

/// Scans opposite-class candidates for the highest cosine similarity to the
/// target embedding. Ties break to the lexicographically smallest id.
pub fn best_match(
    target_id: &str,
    target_embedding: &[f64],
    candidates: &[(String, Vec<f64>)],
) -> Result<SimilarityMatch> {
    if candidates.is_empty() {
        return Err(Error::NoContrast);
    }
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
    for (id, emb) in candidates {
        scored.push((id.clone(), cosine_similarity(target_embedding, emb)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (best_match_id, similarity) = scored.remove(0);
    Ok(SimilarityMatch {
        target_id: target_id.to_string(),
        best_match_id,
        similarity,
        runners_up: scored,
    })
}

/// Sorts concepts by descending relevance and assigns quartile ranges by
/// cumulative start fraction. Channels with nonpositive scores join
/// VeryLow. Errors when no score is strictly positive.
pub fn rank_and_partition(attr: &ConceptAttribution) -> Result<RankedConcepts> {
    let mut positive: Vec<(usize, f64)> = Vec::new();
    let mut rest: Vec<(usize, f64)> = Vec::new();
    for (channel, &score) in attr.scores.iter().enumerate() {
        if score > 0.0 {
            positive.push((channel, score));
        } else {
            rest.push((channel, score));
        }
    }
    if positive.is_empty() {
        return Err(Error::DegenerateAttribution);
    }
    let by_score_desc = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
    };
    positive.sort_by(by_score_desc);
    rest.sort_by(by_score_desc);

    let total: f64 = positive.iter().map(|(_, s)| s).sum();
    let mut entries = Vec::with_capacity(attr.scores.len());
    let mut cumulative = 0.0;
    for (channel, score) in positive {
        entries.push(RankedConcept {
            channel,
            score,
            range: RelevanceRange::from_start_fraction(cumulative / total),
        });
        cumulative += score;
    }
    for (channel, score) in rest {
        entries.push(RankedConcept {
            channel,
            score,
            range: RelevanceRange::VeryLow,
        });
    }
    Ok(RankedConcepts {
        instance_id: attr.instance_id.clone(),
        entries,
    })
}

/// Restricts both rankings to `range` and removes shared channels:
/// `present` is unique to the target's set, `absent` unique to the
/// contrast's, both ascending.
pub fn unique_difference(
    c1: &RankedConcepts,
    c0: &RankedConcepts,
    range: RelevanceRange,
) -> (Vec<usize>, Vec<usize>) {
    let set1 = c1.range_set(range);
    let set0 = c0.range_set(range);
    let present: Vec<usize> = set1.iter().copied().filter(|c| !set0.contains(c)).collect();
    let absent: Vec<usize> = set0.iter().copied().filter(|c| !set1.contains(c)).collect();
    (present, absent)
}

fn concept_list(channels: &[usize], names: &ConceptNames) -> String {
    channels
        .iter()
        .map(|&c| names.name(c))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Builds the final explanation, rendering the template
/// "The model classified the image as a T instead of a C because it
/// contains the concepts ..., and does not contain the concepts ...".
/// Empty lists render as "contains no distinguishing concepts" /
/// "lacks no distinguishing concepts".
#[allow(clippy::too_many_arguments)]
pub fn render(
    target_id: &str,
    match_id: &str,
    similarity: f64,
    target_class: &str,
    contrast_class: &str,
    range: RelevanceRange,
    present: Vec<usize>,
    absent: Vec<usize>,
    names: &ConceptNames,
) -> ContrastiveExplanation {
    let present_clause = if present.is_empty() {
        "it contains no distinguishing concepts".to_string()
    } else {
        format!("it contains the concepts {}", concept_list(&present, names))
    };
    let absent_clause = if absent.is_empty() {
        "lacks no distinguishing concepts".to_string()
    } else {
        format!(
            "does not contain the concepts {}",
            concept_list(&absent, names)
        )
    };
    let rendered = format!(
        "The model classified the image as a {target_class} instead of a {contrast_class} \
         because {present_clause}, and {absent_clause}."
    );
    ContrastiveExplanation {
        target_id: target_id.to_string(),
        match_id: match_id.to_string(),
        similarity,
        target_class: target_class.to_string(),
        contrast_class: contrast_class.to_string(),
        range,
        length: present.len() + absent.len(),
        present,
        absent,
        rendered,
    }
}

/// End-to-end explanation of one correctly classified test instance:
/// embedding -> best opposite-class match -> concept attribution of each
/// image's own predicted class -> ranking -> unique difference at `range`
/// -> rendered template.
pub fn explain(
    net: &Network,
    data: &Dataset,
    target_id: &str,
    range: RelevanceRange,
    names: &ConceptNames,
    class_names: &[String],
    rule_epsilon: f64,
) -> Result<ContrastiveExplanation> {
    if class_names.len() != net.class_count() || class_names.iter().any(|n| n.is_empty()) {
        return Err(Error::InvalidConfigValue {
            key: "class_names".into(),
            details: format!(
                "need {} nonempty class names, got {class_names:?}",
                net.class_count()
            ),
        });
    }

    let target = data.get(target_id)?;
    let target_trace = net.forward(&target.image)?;
    let predicted = target_trace.predicted_class();
    if predicted != target.label {
        return Err(Error::NotExplainable {
            id: target.id.clone(),
            predicted: class_names[predicted].clone(),
            actual: class_names[target.label].clone(),
        });
    }

    // Correctly classified opposite-class pool.
    let mut candidates: Vec<(String, Vec<f64>)> = Vec::new();
    for inst in data.instances() {
        if inst.label == target.label {
            continue;
        }
        let trace = net.forward(&inst.image)?;
        if trace.predicted_class() == inst.label {
            candidates.push((inst.id.clone(), net.embedding_from_trace(&trace)));
        }
    }

    let target_embedding = net.embedding_from_trace(&target_trace);
    let matched = best_match(target_id, &target_embedding, &candidates)?;
    let match_inst = data.get(&matched.best_match_id)?;
    let match_trace = net.forward(&match_inst.image)?;

    let attr_target = concept_scores_from_trace(
        net,
        &target_trace,
        target_id,
        predicted,
        rule_epsilon,
    )?;
    let attr_match = concept_scores_from_trace(
        net,
        &match_trace,
        &match_inst.id,
        match_trace.predicted_class(),
        rule_epsilon,
    )?;

    let c1 = rank_and_partition(&attr_target)?;
    let c0 = rank_and_partition(&attr_match)?;
    let (present, absent) = unique_difference(&c1, &c0, range);

    Ok(render(
        target_id,
        &matched.best_match_id,
        matched.similarity,
        &class_names[target.label],
        &class_names[match_inst.label],
        range,
        present,
        absent,
        names,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Instance, Layer, Split};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn attr(scores: &[f64]) -> ConceptAttribution {
        ConceptAttribution {
            instance_id: "t/0".into(),
            class_index: 0,
            scores: scores.to_vec(),
            total: scores.iter().sum(),
        }
    }

    fn ranked_with_sets(id: &str, sets: &[(RelevanceRange, &[usize])]) -> RankedConcepts {
        let mut entries = Vec::new();
        let mut score = 100.0;
        for (range, channels) in sets {
            for &channel in *channels {
                entries.push(RankedConcept {
                    channel,
                    score,
                    range: *range,
                });
                score -= 1.0;
            }
        }
        RankedConcepts {
            instance_id: id.into(),
            entries,
        }
    }

    #[test]
    fn range_labels_round_trip() {
        for range in RelevanceRange::ALL {
            assert_eq!(range.label().parse::<RelevanceRange>().unwrap(), range);
        }
        assert!("verystrong".parse::<RelevanceRange>().is_err());
    }

    #[test]
    fn best_match_prefers_duplicate_embedding() {
        let target = [0.5, 1.0, -0.25];
        let candidates = vec![
            ("vase/te0001".to_string(), vec![1.0, 0.0, 0.0]),
            ("vase/te0002".to_string(), vec![0.5, 1.0, -0.25]),
        ];
        let m = best_match("teapot/te0000", &target, &candidates).unwrap();
        assert_eq!(m.best_match_id, "vase/te0002");
        assert!((m.similarity - 1.0).abs() < 1e-12);
        assert_eq!(m.runners_up.len(), 1);
    }

    #[test]
    fn best_match_single_candidate_is_forced() {
        let m = best_match("t/0", &[1.0, 0.0], &[("c/0".to_string(), vec![-1.0, 0.0])])
            .unwrap();
        assert_eq!(m.best_match_id, "c/0");
        assert!((m.similarity + 1.0).abs() < 1e-12);
    }

    #[test]
    fn best_match_hand_similarities() {
        // candidates on the unit circle: similarity to [1,0] is the x part
        let mk = |x: f64| vec![x, (1.0 - x * x).sqrt()];
        let candidates = vec![
            ("a/1".to_string(), mk(0.2)),
            ("a/2".to_string(), mk(0.9)),
            ("a/3".to_string(), mk(0.5)),
        ];
        let m = best_match("t/0", &[1.0, 0.0], &candidates).unwrap();
        assert_eq!(m.best_match_id, "a/2");
        assert!((m.similarity - 0.9).abs() < 1e-12);
        assert_eq!(m.runners_up[0].0, "a/3");
        assert_eq!(m.runners_up[1].0, "a/1");
    }

    #[test]
    fn best_match_tie_breaks_lexicographically() {
        let candidates = vec![
            ("b/9".to_string(), vec![2.0, 0.0]),
            ("a/5".to_string(), vec![3.0, 0.0]),
        ];
        let m = best_match("t/0", &[1.0, 0.0], &candidates).unwrap();
        assert_eq!(m.best_match_id, "a/5");
    }

    #[test]
    fn best_match_empty_pool_is_no_contrast() {
        assert!(matches!(
            best_match("t/0", &[1.0], &[]).unwrap_err(),
            Error::NoContrast
        ));
    }

    #[test]
    fn equal_scores_fill_one_range_each() {
        let ranked = rank_and_partition(&attr(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        let ranges: Vec<RelevanceRange> = ranked.entries.iter().map(|e| e.range).collect();
        assert_eq!(ranges, RelevanceRange::ALL);
        // ties sort by ascending channel
        let channels: Vec<usize> = ranked.entries.iter().map(|e| e.channel).collect();
        assert_eq!(channels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn hand_cumulative_fractions() {
        // starts: 0, 0.4, 0.7, 0.9
        let ranked = rank_and_partition(&attr(&[4.0, 3.0, 2.0, 1.0])).unwrap();
        let got: Vec<(usize, RelevanceRange)> =
            ranked.entries.iter().map(|e| (e.channel, e.range)).collect();
        assert_eq!(
            got,
            vec![
                (0, RelevanceRange::VeryStrong),
                (1, RelevanceRange::Strong),
                (2, RelevanceRange::Low),
                (3, RelevanceRange::VeryLow),
            ]
        );
    }

    #[test]
    fn single_positive_concept_is_very_strong() {
        let ranked = rank_and_partition(&attr(&[-0.5, 2.0, 0.0])).unwrap();
        assert_eq!(ranked.entries[0].channel, 1);
        assert_eq!(ranked.entries[0].range, RelevanceRange::VeryStrong);
        // all channels covered; nonpositives in very_low, scores descending
        assert_eq!(ranked.entries.len(), 3);
        assert_eq!(ranked.entries[1].channel, 2);
        assert_eq!(ranked.entries[1].range, RelevanceRange::VeryLow);
        assert_eq!(ranked.entries[2].channel, 0);
        assert_eq!(ranked.entries[2].range, RelevanceRange::VeryLow);
    }

    #[test]
    fn all_nonpositive_scores_are_degenerate() {
        assert!(matches!(
            rank_and_partition(&attr(&[0.0, -1.0])).unwrap_err(),
            Error::DegenerateAttribution
        ));
    }

    #[test]
    fn hand_set_difference() {
        let c1 = ranked_with_sets("t/0", &[(RelevanceRange::VeryStrong, &[1, 2, 3])]);
        let c0 = ranked_with_sets("m/0", &[(RelevanceRange::VeryStrong, &[2, 4])]);
        let (present, absent) = unique_difference(&c1, &c0, RelevanceRange::VeryStrong);
        assert_eq!(present, vec![1, 3]);
        assert_eq!(absent, vec![4]);
    }

    #[test]
    fn identical_sets_difference_to_nothing() {
        let c1 = ranked_with_sets("t/0", &[(RelevanceRange::Strong, &[0, 5])]);
        let c0 = ranked_with_sets("m/0", &[(RelevanceRange::Strong, &[0, 5])]);
        let (present, absent) = unique_difference(&c1, &c0, RelevanceRange::Strong);
        assert!(present.is_empty() && absent.is_empty());
    }

    #[test]
    fn disjoint_sets_sum_their_sizes() {
        let c1 = ranked_with_sets("t/0", &[(RelevanceRange::Low, &[0, 1, 2])]);
        let c0 = ranked_with_sets("m/0", &[(RelevanceRange::Low, &[3, 4])]);
        let (present, absent) = unique_difference(&c1, &c0, RelevanceRange::Low);
        assert_eq!(present.len() + absent.len(), 5);
    }

    #[test]
    fn render_matches_template_exactly() {
        let names = ConceptNames::parse("0\thandle\n1\tspout\n2\tneck\n", 8).unwrap();
        let e = render(
            "teapot/te0000",
            "vase/te0003",
            0.87,
            "teapot",
            "vase",
            RelevanceRange::VeryStrong,
            vec![0, 1],
            vec![2],
            &names,
        );
        assert_eq!(
            e.rendered,
            "The model classified the image as a teapot instead of a vase because it \
             contains the concepts handle, spout, and does not contain the concepts neck."
        );
        assert_eq!(e.length, 3);
    }

    #[test]
    fn render_empty_lists_use_no_concept_clauses() {
        let names = ConceptNames::unnamed(4);
        let e = render(
            "t/0",
            "m/0",
            0.5,
            "teapot",
            "vase",
            RelevanceRange::Low,
            vec![],
            vec![],
            &names,
        );
        assert_eq!(
            e.rendered,
            "The model classified the image as a teapot instead of a vase because it \
             contains no distinguishing concepts, and lacks no distinguishing concepts."
        );
        assert_eq!(e.length, 0);
    }

    #[test]
    fn render_falls_back_to_concept_ids() {
        let names = ConceptNames::unnamed(8);
        let e = render(
            "t/0",
            "m/0",
            0.1,
            "vase",
            "teapot",
            RelevanceRange::Strong,
            vec![7],
            vec![],
            &names,
        );
        assert!(e.rendered.contains("concept#7"), "{}", e.rendered);
    }

    #[test]
    fn name_map_negative_cases() {
        assert!(matches!(
            ConceptNames::parse("0 handle\n", 4).unwrap_err(),
            Error::NameMap { line: 1, .. }
        ));
        assert!(matches!(
            ConceptNames::parse("9\thandle\n", 4).unwrap_err(),
            Error::NameMap { line: 1, .. }
        ));
        assert!(matches!(
            ConceptNames::parse("x\thandle\n", 4).unwrap_err(),
            Error::NameMap { line: 1, .. }
        ));
        assert!(matches!(
            ConceptNames::parse("1\ta\n1\tb\n", 4).unwrap_err(),
            Error::NameMap { line: 2, .. }
        ));
        assert!(matches!(
            ConceptNames::parse("1\t \n", 4).unwrap_err(),
            Error::NameMap { line: 1, .. }
        ));
        let ok = ConceptNames::parse("\n2\tspout\n", 4).unwrap();
        assert_eq!(ok.name(2), "spout");
        assert_eq!(ok.name(0), "concept#0");
    }

    /// Tiny hand-tuned network: 1x1x2 image, two 1x2 conv channels pick out
    /// one pixel each, so concepts = pixels; identity head means class 0
    /// wins when pixel 0 dominates.
    fn pixel_net() -> Network {
        Network::new(
            vec![1, 1, 2],
            vec![
                Layer::Conv {
                    kernels: Tensor::new(vec![2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                    bias: vec![0.0, 0.0],
                    stride: 1,
                    padding: 0,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Linear {
                    weights: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                    bias: vec![0.0, 0.0],
                },
            ],
            0,
            1,
        )
        .unwrap()
    }

    fn pixel_dataset() -> Dataset {
        let mk = |id: &str, label: usize, a: f64, b: f64| Instance {
            image: Tensor::new(vec![1, 1, 2], vec![a, b]).unwrap(),
            label,
            id: id.into(),
        };
        Dataset::new(
            vec![
                mk("teapot/te0000", 0, 1.0, 0.1),
                mk("teapot/te0001", 0, 0.9, 0.2),
                mk("vase/te0000", 1, 0.1, 1.0),
                mk("vase/te0001", 1, 0.2, 0.8),
            ],
            Split::Test,
        )
        .unwrap()
    }

    fn class_names() -> Vec<String> {
        vec!["teapot".into(), "vase".into()]
    }

    #[test]
    fn explain_is_deterministic_and_composed() {
        let net = pixel_net();
        let data = pixel_dataset();
        let names = ConceptNames::unnamed(2);
        let a = explain(
            &net,
            &data,
            "teapot/te0000",
            RelevanceRange::VeryStrong,
            &names,
            &class_names(),
            1e-6,
        )
        .unwrap();
        let b = explain(
            &net,
            &data,
            "teapot/te0000",
            RelevanceRange::VeryStrong,
            &names,
            &class_names(),
            1e-6,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target_class, "teapot");
        assert_eq!(a.contrast_class, "vase");
        assert!(a.match_id.starts_with("vase/"));
        assert_eq!(a.length, a.present.len() + a.absent.len());
        assert!(a.length <= 2 * net.concept_channels());
        // pixel 0 dominates the teapot, pixel 1 the vase: with one channel
        // per pixel, the very-strong concepts differ
        assert_eq!(a.present, vec![0]);
        assert_eq!(a.absent, vec![1]);
        assert_eq!(
            a.rendered,
            "The model classified the image as a teapot instead of a vase because it \
             contains the concepts concept#0, and does not contain the concepts concept#1."
        );
    }

    #[test]
    fn explain_rejects_misclassified_target() {
        let net = pixel_net();
        let mut instances: Vec<Instance> = pixel_dataset().instances().to_vec();
        // mislabel a vase-looking image as teapot
        instances.push(Instance {
            image: Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap(),
            label: 0,
            id: "teapot/te0099".into(),
        });
        let data = Dataset::new(instances, Split::Test).unwrap();
        let err = explain(
            &net,
            &data,
            "teapot/te0099",
            RelevanceRange::VeryStrong,
            &ConceptNames::unnamed(2),
            &class_names(),
            1e-6,
        )
        .unwrap_err();
        match err {
            Error::NotExplainable { predicted, actual, .. } => {
                assert_eq!(predicted, "vase");
                assert_eq!(actual, "teapot");
            }
            other => panic!("expected NotExplainable, got {other:?}"),
        }
    }

    #[test]
    fn explain_needs_a_contrast_pool() {
        let net = pixel_net();
        let mk = |id: &str, label: usize, a: f64, b: f64| Instance {
            image: Tensor::new(vec![1, 1, 2], vec![a, b]).unwrap(),
            label,
            id: id.into(),
        };
        // the only vase is misclassified (looks like a teapot)
        let data = Dataset::new(
            vec![
                mk("teapot/te0000", 0, 1.0, 0.1),
                mk("vase/te0000", 1, 1.0, 0.1),
            ],
            Split::Test,
        )
        .unwrap();
        let err = explain(
            &net,
            &data,
            "teapot/te0000",
            RelevanceRange::VeryStrong,
            &ConceptNames::unnamed(2),
            &class_names(),
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoContrast));
    }

    #[test]
    fn explain_unknown_target() {
        let err = explain(
            &pixel_net(),
            &pixel_dataset(),
            "teapot/missing",
            RelevanceRange::Low,
            &ConceptNames::unnamed(2),
            &class_names(),
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownInstance(_)));
    }

    proptest! {
        #[test]
        fn partition_is_a_disjoint_cover(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..20)
        ) {
            prop_assume!(scores.iter().any(|&s| s > 0.0));
            let ranked = rank_and_partition(&attr(&scores)).unwrap();
            // every channel exactly once
            let mut channels: Vec<usize> =
                ranked.entries.iter().map(|e| e.channel).collect();
            channels.sort_unstable();
            prop_assert_eq!(channels, (0..scores.len()).collect::<Vec<_>>());
            // scores non-increasing
            for pair in ranked.entries.windows(2) {
                prop_assert!(pair[0].score >= pair[1].score);
            }
            // positive channels: range matches recomputed start fraction;
            // nonpositive: very_low
            let total: f64 = scores.iter().filter(|&&s| s > 0.0).sum();
            let mut cumulative = 0.0;
            for e in &ranked.entries {
                if e.score > 0.0 {
                    let expected = RelevanceRange::from_start_fraction(cumulative / total);
                    prop_assert_eq!(e.range, expected);
                    cumulative += e.score;
                } else {
                    prop_assert_eq!(e.range, RelevanceRange::VeryLow);
                }
            }
            // union of range sets covers all channels
            let union: usize = RelevanceRange::ALL
                .iter()
                .map(|&r| ranked.range_set(r).len())
                .sum();
            prop_assert_eq!(union, scores.len());
        }

        #[test]
        fn summed_range_lengths_match_label_mismatch_count(
            s1 in proptest::collection::vec(-5.0f64..5.0, 6..=6),
            s0 in proptest::collection::vec(-5.0f64..5.0, 6..=6),
        ) {
            prop_assume!(s1.iter().any(|&s| s > 0.0));
            prop_assume!(s0.iter().any(|&s| s > 0.0));
            let c1 = rank_and_partition(&attr(&s1)).unwrap();
            let c0 = rank_and_partition(&attr(&s0)).unwrap();
            let total_length: usize = RelevanceRange::ALL
                .iter()
                .map(|&r| {
                    let (p, a) = unique_difference(&c1, &c0, r);
                    p.len() + a.len()
                })
                .sum();
            // brute force: a channel contributes twice when its range
            // labels differ between the two rankings, else zero
            let label_of = |rc: &RankedConcepts, ch: usize| {
                rc.entries.iter().find(|e| e.channel == ch).unwrap().range
            };
            let mut expected = 0usize;
            for ch in 0..6 {
                if label_of(&c1, ch) != label_of(&c0, ch) {
                    expected += 2;
                }
            }
            prop_assert_eq!(total_length, expected);
        }

        #[test]
        fn best_match_invariances(
            embeddings in proptest::collection::vec(
                proptest::collection::vec(-3.0f64..3.0, 3..=3), 2..8),
            scale in 0.1f64..50.0,
        ) {
            let target = vec![1.0, 0.5, -0.2];
            prop_assume!(embeddings.iter().all(|e| e.iter().any(|&v| v.abs() > 1e-3)));
            let candidates: Vec<(String, Vec<f64>)> = embeddings
                .iter()
                .enumerate()
                .map(|(i, e)| (format!("c/{i:03}"), e.clone()))
                .collect();
            let base = best_match("t/0", &target, &candidates).unwrap();

            // independent naive scan
            let mut best_sim = f64::NEG_INFINITY;
            let mut best_id = String::new();
            for (id, e) in &candidates {
                let s = cosine_similarity(&target, e).unwrap();
                if s > best_sim || (s == best_sim && *id < best_id) {
                    best_sim = s;
                    best_id = id.clone();
                }
            }
            prop_assert_eq!(&base.best_match_id, &best_id);

            // positive scaling of an embedding leaves similarity unchanged
            let mut scaled = candidates.clone();
            for v in &mut scaled[0].1 {
                *v *= scale;
            }
            let scaled_match = best_match("t/0", &target, &scaled).unwrap();
            prop_assert!((scaled_match.similarity - base.similarity).abs() < 1e-9);

            // appending strictly worse candidates keeps the winner
            let mut worse: Vec<f64> = target.iter().map(|v| -v).collect();
            worse[0] += 0.01;
            let mut extended = candidates.clone();
            extended.push(("z/999".to_string(), worse));
            let ext = best_match("t/0", &target, &extended).unwrap();
            prop_assert_eq!(ext.best_match_id, base.best_match_id);
        }
    }
}

//! Automatic context retrieval: the meta-wise attribute-selection round trip,
//! batched instance-wise relevance scoring, and top-k selection of the
//! context records.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::contextparse::serialize_record;
use crate::datalake::{sample_records, CellValue, DataLake, Record, Table};
use crate::llmclient::{CompletionResponse, LlmClient, LlmError, RequestTemplate};
use crate::taskmodel::{
    candidate_attributes, QueryString, TaskDescription, TaskError, TaskInstance, TaskKind,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("candidate attribute set is empty")]
    EmptyCandidateSet,
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    DataLake(#[from] crate::datalake::DataLakeError),
}

/// Knobs for the retrieval stage. Defaults follow the engine's standard
/// operating point: top-3 records out of a 50-record sample, one attribute
/// from the candidate set.
#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub sample_size: usize,
    pub top_k: usize,
    pub attr_count: usize,
    pub score_batch_size: usize,
    pub seed: u64,
    /// Also project context records onto the target attributes, so
    /// demonstration records expose the answer column.
    pub include_target_attribute: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            sample_size: 50,
            top_k: 3,
            attr_count: 1,
            score_batch_size: 10,
            seed: 0,
            include_target_attribute: true,
        }
    }
}

/// An instance relevance score in [0, 3].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelevanceScore(pub u8);

/// A record projected onto the context attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextRecord {
    pub row: usize,
    pub cells: Vec<CellValue>,
}

/// Where the context came from: sampled rows, their scores, and degradation
/// flags surfaced in the run report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub sampled_rows: Vec<usize>,
    pub scores: Vec<u8>,
    pub selected_attributes: Vec<String>,
    pub attribute_fallback_used: bool,
    pub zero_score_defaults: usize,
    pub score_batches: usize,
}

/// Retrieved context: attribute names, projected records, provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Context {
    pub attributes: Vec<String>,
    pub records: Vec<ContextRecord>,
    pub provenance: Provenance,
}

/// Render the meta-wise retrieval prompt over the candidate attributes.
pub fn render_meta_prompt(
    description: &TaskDescription,
    query: &QueryString,
    candidates: &[String],
) -> Result<String, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::EmptyCandidateSet);
    }
    Ok(format!(
        "The task is {}. The target query is {}. The candidate attributes are [{}]. Which attributes are helpful for the task and the query?",
        description.as_str(),
        query.as_str(),
        candidates.join(",")
    ))
}

/// Scan the reply for candidate names (case-insensitive, whole-token,
/// longest-name-first) and keep the first `attr_count` distinct hits in reply
/// order. Falls back to the leading candidates when nothing matches.
pub fn parse_attribute_selection(
    reply: &str,
    candidates: &[String],
    attr_count: usize,
) -> (Vec<String>, bool) {
    let lowered = reply.to_lowercase();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';

    let mut by_length: Vec<&String> = candidates.iter().collect();
    by_length.sort_by_key(|name| std::cmp::Reverse(name.len()));

    // (position, name) for every whole-token occurrence outside an interval
    // already claimed by a longer name.
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut hits: Vec<(usize, &String)> = Vec::new();
    for name in by_length {
        let needle = name.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(offset) = lowered[from..].find(&needle) {
            let start = from + offset;
            let end = start + needle.len();
            from = start + 1;
            let before_ok = start == 0
                || !lowered[..start].chars().next_back().map_or(false, is_word);
            let after_ok = end == lowered.len()
                || !lowered[end..].chars().next().map_or(false, is_word);
            let overlaps = claimed.iter().any(|&(s, e)| start < e && end > s);
            if before_ok && after_ok && !overlaps {
                claimed.push((start, end));
                hits.push((start, name));
                break;
            }
        }
    }
    hits.sort_by_key(|&(pos, _)| pos);
    let selected: Vec<String> = hits
        .into_iter()
        .map(|(_, name)| name.clone())
        .take(attr_count)
        .collect();

    if selected.is_empty() {
        (
            candidates.iter().take(attr_count).cloned().collect(),
            true,
        )
    } else {
        (selected, false)
    }
}

/// Render the instance-wise scoring prompt for one batch of candidates,
/// each already serialized and numbered 1..m.
pub fn render_instance_prompt(
    description: &TaskDescription,
    query: &QueryString,
    serialized_candidates: &[String],
) -> String {
    let mut prompt = format!(
        "The task is {}. The target query is {}. To score the relevance (range from 0 to 3) of given instances based on the task and the query:",
        description.as_str(),
        query.as_str()
    );
    for (i, candidate) in serialized_candidates.iter().enumerate() {
        prompt.push_str(&format!("\n{}: {candidate}", i + 1));
    }
    prompt.push_str("\nAnswer with one line per instance in the form \"i: score\".");
    prompt
}

/// Extract the integer after each `i:` marker. Values are clamped to [0, 3];
/// absent indices score 0; extra indices are ignored. Lenient by design so
/// malformed replies degrade instead of aborting a run.
pub fn parse_scores(reply: &str, m: usize) -> Vec<RelevanceScore> {
    let pattern = Regex::new(r"(\d+)\s*:\s*(-?\d+)").expect("static regex");
    let mut scores = vec![None; m];
    for capture in pattern.captures_iter(reply) {
        let index: usize = match capture[1].parse() {
            Ok(i) => i,
            Err(_) => continue,
        };
        if index == 0 || index > m || scores[index - 1].is_some() {
            continue;
        }
        let value: i64 = capture[2].parse().unwrap_or(0);
        scores[index - 1] = Some(value.clamp(0, 3) as u8);
    }
    scores
        .into_iter()
        .map(|s| RelevanceScore(s.unwrap_or(0)))
        .collect()
}

/// The k highest-scoring records; ties broken by ascending original index,
/// output in index order.
pub fn top_k(records: &[Record], scores: &[RelevanceScore], k: usize) -> Vec<Record> {
    debug_assert_eq!(records.len(), scores.len());
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(scores[i].0), i));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| records[i].clone()).collect()
}

fn project(record: &Record, table: &Table, attributes: &[String]) -> ContextRecord {
    let cells = attributes
        .iter()
        .map(|attr| {
            let pos = table
                .attribute_position(attr)
                .expect("projection attribute exists");
            record.cells[pos].clone()
        })
        .collect();
    ContextRecord {
        row: record.index,
        cells,
    }
}

/// Context attributes in schema order: the selected attributes, plus the
/// target attributes when configured.
fn context_attributes(
    table: &Table,
    selected: &[String],
    targets: &[String],
    include_targets: bool,
) -> Vec<String> {
    let mut names: Vec<String> = selected.to_vec();
    if include_targets {
        for target in targets {
            if !names.contains(target) && table.attribute_position(target).is_ok() {
                names.push(target.clone());
            }
        }
    }
    names.sort_by_key(|n| table.attribute_position(n).unwrap_or(usize::MAX));
    names
}

/// Whole-table seeded sampling used when retrieval is disabled: the same
/// number of records retrieval would return, over all attributes.
pub fn sample_context(
    task: &TaskInstance,
    lake: &DataLake,
    config: &RetrievalConfig,
) -> Result<Context, RetrievalError> {
    let table = lake.table(&task.table)?;
    let exclude: HashSet<usize> = task.target_rows().into_iter().collect();
    let sample = sample_records(table, config.top_k, config.seed, &exclude);
    let attributes = table.attribute_names();
    let records: Vec<ContextRecord> = sample
        .iter()
        .map(|r| project(r, table, &attributes))
        .collect();
    let sampled_rows = records.iter().map(|r| r.row).collect();
    Ok(Context {
        attributes,
        records,
        provenance: Provenance {
            sampled_rows,
            ..Default::default()
        },
    })
}

/// Full retrieval: sample candidates, select attributes meta-wise, score
/// instances in batches, take the top-k.
///
/// `meta_enabled` / `instance_enabled` degrade the corresponding stage to
/// seeded random selection instead of an LLM round trip.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_context(
    task: &TaskInstance,
    lake: &DataLake,
    config: &RetrievalConfig,
    client: &LlmClient,
    template: &RequestTemplate,
    description: &TaskDescription,
    query: &QueryString,
    meta_enabled: bool,
    instance_enabled: bool,
    mut on_exchange: impl FnMut(&'static str, &str, &CompletionResponse),
) -> Result<Context, RetrievalError> {
    if task.kind == TaskKind::JoinDiscovery {
        return retrieve_join_context(
            task,
            lake,
            config,
            client,
            template,
            description,
            query,
            instance_enabled,
            on_exchange,
        );
    }

    let table = lake.table(&task.table)?;
    let exclude: HashSet<usize> = task.target_rows().into_iter().collect();
    let sample = sample_records(table, config.sample_size, config.seed, &exclude);
    let candidates = candidate_attributes(task, lake)?;

    let mut provenance = Provenance {
        sampled_rows: sample.iter().map(|r| r.index).collect(),
        ..Default::default()
    };

    // Meta-wise: pick the task-relevant attributes S^t.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let selected: Vec<String> = if candidates.is_empty() {
        Vec::new()
    } else if meta_enabled {
        let prompt = render_meta_prompt(description, query, &candidates)?;
        let reply = client.complete(&template.request(&prompt))?;
        on_exchange("meta", &prompt, &reply);
        let (selected, fallback) =
            parse_attribute_selection(&reply.text, &candidates, config.attr_count);
        provenance.attribute_fallback_used = fallback;
        selected
    } else {
        let mut shuffled = candidates.clone();
        shuffled.shuffle(&mut rng);
        let mut picked: Vec<String> = shuffled.into_iter().take(config.attr_count).collect();
        picked.sort_by_key(|n| table.attribute_position(n).unwrap_or(usize::MAX));
        picked
    };
    provenance.selected_attributes = selected.clone();

    // Instance-wise: score the sample and keep the top-k.
    let chosen: Vec<Record> = if instance_enabled && !sample.is_empty() {
        let score_attrs: Vec<String> = if selected.is_empty() {
            table.attribute_names()
        } else {
            selected.clone()
        };
        let mut scores: Vec<RelevanceScore> = Vec::with_capacity(sample.len());
        for batch in sample.chunks(config.score_batch_size.max(1)) {
            let serialized: Vec<String> = batch
                .iter()
                .map(|r| {
                    let projected = project(r, table, &score_attrs);
                    serialize_record(&score_attrs, &projected.cells)
                })
                .collect();
            let prompt = render_instance_prompt(description, query, &serialized);
            let reply = client.complete(&template.request(&prompt))?;
            on_exchange("instance", &prompt, &reply);
            scores.extend(parse_scores(&reply.text, batch.len()));
            provenance.score_batches += 1;
        }
        provenance.zero_score_defaults = scores.iter().filter(|s| s.0 == 0).count();
        provenance.scores = scores.iter().map(|s| s.0).collect();
        top_k(&sample, &scores, config.top_k)
    } else {
        let mut indices: Vec<usize> = (0..sample.len()).collect();
        indices.shuffle(&mut rng);
        let mut picked: Vec<usize> = indices.into_iter().take(config.top_k).collect();
        picked.sort_unstable();
        picked.into_iter().map(|i| sample[i].clone()).collect()
    };

    let attributes = if selected.is_empty() {
        table.attribute_names()
    } else {
        context_attributes(
            table,
            &selected,
            &task.attributes,
            config.include_target_attribute,
        )
    };
    let records: Vec<ContextRecord> = chosen
        .iter()
        .map(|r| project(r, table, &attributes))
        .collect();
    Ok(Context {
        attributes,
        records,
        provenance,
    })
}

/// Join discovery samples values from the two named columns directly; there
/// is no meta-wise step. Each side is scored and trimmed independently, then
/// merged under qualified `table.column` attribute names.
#[allow(clippy::too_many_arguments)]
fn retrieve_join_context(
    task: &TaskInstance,
    lake: &DataLake,
    config: &RetrievalConfig,
    client: &LlmClient,
    template: &RequestTemplate,
    description: &TaskDescription,
    query: &QueryString,
    instance_enabled: bool,
    mut on_exchange: impl FnMut(&'static str, &str, &CompletionResponse),
) -> Result<Context, RetrievalError> {
    let second = task.table2.as_deref().unwrap_or(&task.table);
    let sides = [
        (task.table.as_str(), task.attributes[0].as_str()),
        (second, task.attributes[1].as_str()),
    ];

    let mut provenance = Provenance::default();
    let mut merged: Vec<ContextRecord> = Vec::new();
    for (side, (table_name, column)) in sides.iter().enumerate() {
        let table = lake.table(table_name)?;
        table.attribute_position(column)?;
        let sample = sample_records(
            table,
            config.sample_size,
            config.seed.wrapping_add(side as u64),
            &HashSet::new(),
        );
        provenance
            .sampled_rows
            .extend(sample.iter().map(|r| r.index));
        let column_attrs = vec![column.to_string()];

        let chosen: Vec<Record> = if instance_enabled && !sample.is_empty() {
            let mut scores = Vec::with_capacity(sample.len());
            for batch in sample.chunks(config.score_batch_size.max(1)) {
                let serialized: Vec<String> = batch
                    .iter()
                    .map(|r| {
                        let projected = project(r, table, &column_attrs);
                        serialize_record(&column_attrs, &projected.cells)
                    })
                    .collect();
                let prompt = render_instance_prompt(description, query, &serialized);
                let reply = client.complete(&template.request(&prompt))?;
                on_exchange("instance", &prompt, &reply);
                scores.extend(parse_scores(&reply.text, batch.len()));
                provenance.score_batches += 1;
            }
            provenance.zero_score_defaults += scores.iter().filter(|s: &&_| s.0 == 0).count();
            top_k(&sample, &scores, config.top_k)
        } else {
            sample.into_iter().take(config.top_k).collect()
        };

        for record in chosen {
            let value = record.cells[table.attribute_position(column)?].clone();
            let cells = if side == 0 {
                vec![value, CellValue::Missing]
            } else {
                vec![CellValue::Missing, value]
            };
            merged.push(ContextRecord {
                row: record.index,
                cells,
            });
        }
    }

    let attributes = sides
        .iter()
        .map(|(t, c)| format!("{t}.{c}"))
        .collect();
    Ok(Context {
        attributes,
        records: merged,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc() -> TaskDescription {
        TaskDescription("data imputation".to_string())
    }

    fn query() -> QueryString {
        QueryString("Copenhagen, timezone".to_string())
    }

    #[test]
    fn meta_prompt_matches_template() {
        let p = render_meta_prompt(
            &desc(),
            &query(),
            &["city".to_string(), "country".to_string()],
        )
        .unwrap();
        assert_eq!(
            p,
            "The task is data imputation. The target query is Copenhagen, timezone. The candidate attributes are [city,country]. Which attributes are helpful for the task and the query?"
        );
    }

    #[test]
    fn meta_prompt_single_candidate_and_empty_set() {
        let p = render_meta_prompt(&desc(), &query(), &["x".to_string()]).unwrap();
        assert!(p.contains("The candidate attributes are [x]."));
        assert!(matches!(
            render_meta_prompt(&desc(), &query(), &[]),
            Err(RetrievalError::EmptyCandidateSet)
        ));
    }

    #[test]
    fn attribute_selection_finds_named_candidate() {
        let candidates = vec!["city".to_string(), "country".to_string()];
        let (selected, fallback) =
            parse_attribute_selection("The attribute country is most helpful.", &candidates, 1);
        assert_eq!(selected, vec!["country"]);
        assert!(!fallback);
    }

    #[test]
    fn attribute_selection_falls_back() {
        let candidates = vec!["city".to_string(), "country".to_string()];
        let (selected, fallback) = parse_attribute_selection("none of these", &candidates, 1);
        assert_eq!(selected, vec!["city"]);
        assert!(fallback);
    }

    #[test]
    fn attribute_selection_is_case_insensitive_and_ordered_by_reply() {
        let candidates = vec!["city".to_string(), "country".to_string()];
        let (selected, _) = parse_attribute_selection("Country, then CITY", &candidates, 2);
        assert_eq!(selected, vec!["country", "city"]);
    }

    #[test]
    fn attribute_selection_ignores_substring_shadows() {
        let candidates = vec!["city".to_string(), "city_code".to_string()];
        let (selected, _) = parse_attribute_selection("use city_code here", &candidates, 2);
        assert_eq!(selected, vec!["city_code"]);
    }

    #[test]
    fn instance_prompt_numbers_candidates() {
        let p = render_instance_prompt(
            &desc(),
            &query(),
            &["a:1".to_string(), "b:2".to_string(), "c:3".to_string()],
        );
        assert!(p.contains("score the relevance (range from 0 to 3)"));
        assert!(p.contains("\n1: a:1"));
        assert!(p.contains("\n2: b:2"));
        assert!(p.contains("\n3: c:3"));
    }

    #[test]
    fn scores_parse_clamp_and_default() {
        let scores = parse_scores("1: 3\n2: 0\n3: 2", 3);
        assert_eq!(scores, vec![RelevanceScore(3), RelevanceScore(0), RelevanceScore(2)]);
        assert_eq!(
            parse_scores("1: 7", 2),
            vec![RelevanceScore(3), RelevanceScore(0)]
        );
        assert_eq!(
            parse_scores("2: 1\n1: 2", 2),
            vec![RelevanceScore(2), RelevanceScore(1)]
        );
        assert_eq!(parse_scores("garbage", 2).len(), 2);
    }

    fn records(n: usize) -> Vec<Record> {
        (0..n)
            .map(|index| Record {
                index,
                cells: vec![CellValue::Present(format!("v{index}"))],
            })
            .collect()
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let recs = records(3);
        let scores = vec![RelevanceScore(3), RelevanceScore(0), RelevanceScore(2)];
        let picked = top_k(&recs, &scores, 2);
        assert_eq!(picked.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 2]);

        let equal = vec![RelevanceScore(1); 3];
        let picked = top_k(&recs, &equal, 2);
        assert_eq!(picked.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn top_k_matches_brute_force_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let k = rng.gen_range(0..n + 3);
            let recs = records(n);
            let scores: Vec<RelevanceScore> =
                (0..n).map(|_| RelevanceScore(rng.gen_range(0..=3))).collect();
            let fast: Vec<usize> = top_k(&recs, &scores, k).iter().map(|r| r.index).collect();
            // independent route: full sort by (-score, index), take k, sort
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b].0.cmp(&scores[a].0).then(a.cmp(&b))
            });
            let mut expected: Vec<usize> = order.into_iter().take(k).collect();
            expected.sort_unstable();
            assert_eq!(fast, expected);
        }
    }

    proptest::proptest! {
        #[test]
        fn top_k_returns_a_sorted_subset_of_the_right_size(
            raw in proptest::collection::vec(0u8..=3, 1..30),
            k in 0usize..35,
        ) {
            let recs = records(raw.len());
            let scores: Vec<RelevanceScore> = raw.iter().map(|&s| RelevanceScore(s)).collect();
            let picked = top_k(&recs, &scores, k);
            proptest::prop_assert_eq!(picked.len(), k.min(raw.len()));
            let indices: Vec<usize> = picked.iter().map(|r| r.index).collect();
            proptest::prop_assert!(indices.windows(2).all(|w| w[0] < w[1]));
            // nothing outside the k best scores sneaks in
            let mut sorted: Vec<u8> = raw.clone();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            let cutoff = sorted[..k.min(raw.len())].last().copied().unwrap_or(0);
            proptest::prop_assert!(indices.iter().all(|&i| raw[i] >= cutoff));
        }
    }
}

//! Claim-detection and stance datasets, episode-grouped splits and corpus statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    histogram, AggregationStatus, CheckworthyLabel, ClaimType, DocStance, Motivation, NotCheckableReason, Relevance,
    Verdict,
};
use crate::feed::Category;
use crate::ids::EpisodeId;
use crate::store::{FactCheckRecord, UtteranceRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimExample {
    pub text: String,
    pub label: bool,
    pub episode_id: EpisodeId,
    pub topic: Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceExample {
    pub claim: String,
    pub evidence: String,
    pub label: Verdict,
    /// Grouping key for splits; not part of the exported line.
    #[serde(skip)]
    pub episode_id: EpisodeId,
}

/// One example per retained utterance, positive when the label is check-worthy.
pub fn build_claim_dataset(records: &[UtteranceRecord]) -> Vec<ClaimExample> {
    records
        .iter()
        .filter(|r| r.aggregate.status == AggregationStatus::Retained)
        .map(|r| ClaimExample {
            text: r.utterance.best_text().to_owned(),
            label: r.aggregate.label == Some(CheckworthyLabel::CheckWorthy),
            episode_id: r.utterance.episode_id.clone(),
            topic: r.topic,
        })
        .collect()
}

/// One example per relevant supporting or refuting document of a decided fact-check.
pub fn build_stance_dataset(records: &[FactCheckRecord]) -> Vec<StanceExample> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.factcheck.verdict.is_some()) {
        for e in r.factcheck.evidence.iter().filter(|e| e.relevance == Relevance::Relevant) {
            let label = match e.doc_stance {
                DocStance::Supports => Verdict::Supports,
                DocStance::Refutes => Verdict::Refutes,
                DocStance::Neutral => continue,
            };
            if r.claim.trim().is_empty() || e.snippet.trim().is_empty() {
                continue;
            }
            out.push(StanceExample {
                claim: r.claim.clone(),
                evidence: e.snippet.clone(),
                label,
                episode_id: r.episode_id.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| DatasetError::InvalidSpec(format!("unknown split {s:?}")))
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Target sizes in (train, dev, test) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSizes {
    Fractions([f64; 3]),
    Counts([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitSpec {
    pub fn counts(train: usize, dev: usize, test: usize, seed: u64) -> Self {
        Self {
            sizes: SplitSizes::Counts([train, dev, test]),
            seed,
        }
    }

    pub fn fractions(train: f64, dev: f64, test: f64, seed: u64) -> Result<Self, DatasetError> {
        let f = [train, dev, test];
        if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-6 {
            return Err(DatasetError::InvalidSpec(format!(
                "fractions must be non-negative and sum to 1, got {train}, {dev}, {test}"
            )));
        }
        Ok(Self {
            sizes: SplitSizes::Fractions(f),
            seed,
        })
    }

    /// Parses `train,dev,test` as counts (`1404,380,176`) or fractions (`0.72,0.19,0.09`).
    pub fn parse(sizes: &str, seed: u64) -> Result<Self, DatasetError> {
        let parts: Vec<&str> = sizes.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(DatasetError::InvalidSpec(format!(
                "expected three comma-separated sizes, got {sizes:?}"
            )));
        }
        if parts.iter().any(|p| p.contains('.')) {
            let mut f = [0.0; 3];
            for (slot, p) in f.iter_mut().zip(&parts) {
                *slot = p
                    .parse()
                    .map_err(|_| DatasetError::InvalidSpec(format!("bad fraction {p:?}")))?;
            }
            Self::fractions(f[0], f[1], f[2], seed)
        } else {
            let mut c = [0usize; 3];
            for (slot, p) in c.iter_mut().zip(&parts) {
                *slot = p.parse().map_err(|_| DatasetError::InvalidSpec(format!("bad count {p:?}")))?;
            }
            Ok(Self::counts(c[0], c[1], c[2], seed))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn get(&self, name: SplitName) -> &[T] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    fn from_assignment(items: Vec<T>, group_of_item: &[usize], assignment: &[SplitName]) -> Self {
        let mut out = Splits {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        for (item, g) in items.into_iter().zip(group_of_item) {
            match assignment[*g] {
                SplitName::Train => out.train.push(item),
                SplitName::Dev => out.dev.push(item),
                SplitName::Test => out.test.push(item),
            }
        }
        out
    }
}

/// Largest DP table (in cells) the joint dev/test packing may allocate.
const JOINT_PACKING_CELLS: usize = 1 << 24;

/// Partitions `items` so that every group (episode) lands in exactly one split.
///
/// Groups are shuffled with the seed before packing; items keep their input
/// order inside each split. Exact counts are packed by subset-sum over group
/// sizes and fail when no grouping reaches them.
pub fn split<T, K: AsRef<str>>(items: Vec<T>, group: impl Fn(&T) -> K, spec: &SplitSpec) -> Result<Splits<T>, DatasetError> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut sizes: Vec<usize> = Vec::new();
    let group_of_item: Vec<usize> = items
        .iter()
        .map(|item| {
            let key = group(item).as_ref().to_owned();
            let next = index.len();
            let g = *index.entry(key).or_insert(next);
            if g == sizes.len() {
                sizes.push(0);
            }
            sizes[g] += 1;
            g
        })
        .collect();

    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let assignment = match spec.sizes {
        SplitSizes::Fractions(f) => by_fractions(&sizes, &order, f, items.len()),
        SplitSizes::Counts(c) => {
            if c.iter().sum::<usize>() != items.len() {
                return Err(DatasetError::InvalidSpec(format!(
                    "counts {c:?} sum to {}, corpus has {} examples",
                    c.iter().sum::<usize>(),
                    items.len()
                )));
            }
            by_counts(&sizes, &order, c)?
        }
    };
    Ok(Splits::from_assignment(items, &group_of_item, &assignment))
}

/// Each group goes to the split furthest below its target; ties favour train, then dev.
fn by_fractions(sizes: &[usize], order: &[usize], f: [f64; 3], total: usize) -> Vec<SplitName> {
    let target = f.map(|x| x * total as f64);
    let mut filled = [0usize; 3];
    let mut out = vec![SplitName::Train; sizes.len()];
    for &g in order {
        let mut best = 0;
        for s in 1..3 {
            if target[s] - filled[s] as f64 > target[best] - filled[best] as f64 {
                best = s;
            }
        }
        filled[best] += sizes[g];
        out[g] = SplitName::ALL[best];
    }
    out
}

fn by_counts(sizes: &[usize], order: &[usize], [_, dev, test]: [usize; 3]) -> Result<Vec<SplitName>, DatasetError> {
    let infeasible = || {
        DatasetError::SplitInfeasible(format!(
            "no assignment of {} episode group(s) reaches dev={dev}, test={test}",
            sizes.len()
        ))
    };
    let ordered: Vec<usize> = order.iter().map(|&g| sizes[g]).collect();
    let picks = if (test + 1) * (dev + 1) * (ordered.len() + 1) <= JOINT_PACKING_CELLS {
        joint_pack(&ordered, test, dev).ok_or_else(infeasible)?
    } else {
        sequential_pack(&ordered, test, dev).ok_or_else(infeasible)?
    };
    let mut out = vec![SplitName::Train; sizes.len()];
    for (pos, s) in picks.into_iter().enumerate() {
        out[order[pos]] = s;
    }
    Ok(out)
}

/// Two-dimensional subset sum: which groups go to test and dev so both hit their targets.
fn joint_pack(sizes: &[usize], test: usize, dev: usize) -> Option<Vec<SplitName>> {
    let width = dev + 1;
    let cells = (test + 1) * width;
    // reach[i][t * width + d]: the first i groups can fill test to t and dev to d.
    let mut reach = vec![vec![false; cells]];
    reach[0][0] = true;
    for &s in sizes {
        let prev = reach.last().expect("non-empty");
        let mut next = prev.clone();
        for t in 0..=test {
            for d in 0..=dev {
                if !prev[t * width + d] {
                    continue;
                }
                if t + s <= test {
                    next[(t + s) * width + d] = true;
                }
                if d + s <= dev {
                    next[t * width + d + s] = true;
                }
            }
        }
        reach.push(next);
    }
    if !reach[sizes.len()][test * width + dev] {
        return None;
    }
    let (mut t, mut d) = (test, dev);
    let mut out = vec![SplitName::Train; sizes.len()];
    for i in (0..sizes.len()).rev() {
        let s = sizes[i];
        let prev = &reach[i];
        if prev[t * width + d] {
            out[i] = SplitName::Train;
        } else if t >= s && prev[(t - s) * width + d] {
            out[i] = SplitName::Test;
            t -= s;
        } else {
            out[i] = SplitName::Dev;
            d -= s;
        }
    }
    Some(out)
}

/// Test first, then dev among the remaining groups. Used when the joint table is too large.
fn sequential_pack(sizes: &[usize], test: usize, dev: usize) -> Option<Vec<SplitName>> {
    let mut out = vec![SplitName::Train; sizes.len()];
    for (target, name) in [(test, SplitName::Test), (dev, SplitName::Dev)] {
        let free: Vec<usize> = (0..sizes.len()).filter(|&i| out[i] == SplitName::Train).collect();
        for i in subset_sum(&free.iter().map(|&i| sizes[i]).collect::<Vec<_>>(), target)? {
            out[free[i]] = name;
        }
    }
    Some(out)
}

fn subset_sum(sizes: &[usize], target: usize) -> Option<Vec<usize>> {
    let mut reach = vec![vec![false; target + 1]];
    reach[0][0] = true;
    for &s in sizes {
        let prev = reach.last().expect("non-empty");
        let mut next = prev.clone();
        for v in (0..=target.saturating_sub(s)).rev() {
            if prev[v] && v + s <= target {
                next[v + s] = true;
            }
        }
        reach.push(next);
    }
    if !reach[sizes.len()][target] {
        return None;
    }
    let mut v = target;
    let mut picked = Vec::new();
    for i in (0..sizes.len()).rev() {
        if !reach[i][v] {
            picked.push(i);
            v -= sizes[i];
        }
    }
    Some(picked)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCounts {
    pub check_worthy: usize,
    pub not_check_worthy: usize,
}

impl TopicCounts {
    pub fn total(&self) -> usize {
        self.check_worthy + self.not_check_worthy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub name: String,
    pub count: usize,
    /// Share of the histogram total, truncated to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub topics: BTreeMap<Category, TopicCounts>,
    pub totals: TopicCounts,
    pub claim_types: Vec<HistogramRow>,
    pub not_checkable_reasons: Vec<HistogramRow>,
    pub motivations: Vec<HistogramRow>,
}

/// `count / total` as a percentage truncated to one decimal place.
pub fn percent_of(count: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    ((count as u128 * 1000) / total as u128) as f64 / 10.0
}

fn rows<T: Ord + Copy>(all: &[T], name: impl Fn(T) -> &'static str, values: impl IntoIterator<Item = T>) -> Vec<HistogramRow> {
    let counts = histogram(values);
    let total: usize = counts.values().sum();
    all.iter()
        .map(|v| {
            let count = counts.get(v).copied().unwrap_or(0);
            HistogramRow {
                name: name(*v).to_owned(),
                count,
                percent: percent_of(count, total),
            }
        })
        .collect()
}

/// Distribution statistics over retained labels.
pub fn stats(records: &[UtteranceRecord]) -> StatisticsReport {
    let retained: Vec<&UtteranceRecord> = records
        .iter()
        .filter(|r| r.aggregate.status == AggregationStatus::Retained)
        .collect();
    let mut topics: BTreeMap<Category, TopicCounts> = BTreeMap::new();
    let mut totals = TopicCounts::default();
    for r in &retained {
        let entry = topics.entry(r.topic).or_default();
        if r.aggregate.label == Some(CheckworthyLabel::CheckWorthy) {
            entry.check_worthy += 1;
            totals.check_worthy += 1;
        } else {
            entry.not_check_worthy += 1;
            totals.not_check_worthy += 1;
        }
    }
    let positive = || retained.iter().filter(|r| r.aggregate.label == Some(CheckworthyLabel::CheckWorthy));
    StatisticsReport {
        topics,
        totals,
        claim_types: rows(ClaimType::ALL, ClaimType::as_str, positive().filter_map(|r| r.aggregate.claim_type)),
        not_checkable_reasons: rows(
            NotCheckableReason::ALL,
            NotCheckableReason::as_str,
            retained.iter().filter_map(|r| r.aggregate.reason),
        ),
        motivations: rows(
            Motivation::ALL,
            Motivation::as_str,
            positive().flat_map(|r| r.aggregate.motivations.iter().copied()),
        ),
    }
}

impl StatisticsReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Topic | Check-worthy | Not check-worthy |");
        let _ = writeln!(out, "|---|---|---|");
        for (topic, c) in &self.topics {
            let _ = writeln!(out, "| {} | {} | {} |", topic.as_str(), c.check_worthy, c.not_check_worthy);
        }
        let _ = writeln!(out, "| Total | {} | {} |", self.totals.check_worthy, self.totals.not_check_worthy);
        for (title, rows) in [
            ("Claim type", &self.claim_types),
            ("Not-checkable reason", &self.not_checkable_reasons),
            ("Motivation", &self.motivations),
        ] {
            let _ = writeln!(out, "\n| {title} | Count | % |");
            let _ = writeln!(out, "|---|---|---|");
            for r in rows {
                let _ = writeln!(out, "| {} | {} | {:.1} |", r.name, r.count, r.percent);
            }
        }
        out
    }
}

/// Serializes examples one JSON object per line.
pub fn write_jsonl<T: Serialize>(examples: &[T], mut out: impl Write) -> std::io::Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_jsonl<T: Serialize>(examples: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(examples, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    Claims,
    Stance,
}

impl FromStr for ExportKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "claims" => Ok(ExportKind::Claims),
            "stance" => Ok(ExportKind::Stance),
            other => Err(DatasetError::InvalidSpec(format!("unknown dataset {other:?}; expected claims or stance"))),
        }
    }
}

/// JSONL bytes for a whole dataset, or for each split when a spec is given.
/// The CLI writes these to files and the API streams them, so both agree byte for byte.
pub fn export_jsonl(
    kind: ExportKind,
    utterances: &[UtteranceRecord],
    factchecks: &[FactCheckRecord],
    spec: Option<&SplitSpec>,
) -> Result<Vec<(Option<SplitName>, Vec<u8>)>, DatasetError> {
    fn parts<T: Serialize>(
        examples: Vec<T>,
        group: impl Fn(&T) -> &EpisodeId,
        spec: Option<&SplitSpec>,
    ) -> Result<Vec<(Option<SplitName>, Vec<u8>)>, DatasetError> {
        match spec {
            None => Ok(vec![(None, to_jsonl(&examples))]),
            Some(spec) => {
                let s = split(examples, |e| group(e).as_str().to_owned(), spec)?;
                Ok(SplitName::ALL.iter().map(|n| (Some(*n), to_jsonl(s.get(*n)))).collect())
            }
        }
    }
    match kind {
        ExportKind::Claims => parts(build_claim_dataset(utterances), |e| &e.episode_id, spec),
        ExportKind::Stance => parts(build_stance_dataset(factchecks), |e| &e.episode_id, spec),
    }
}

//! Leakage-free train/validation/test splits and five-vowel feature rows.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SegmentKey, Vowel};
use crate::error::{Error, Result};
use crate::graph_metrics::MetricVector;
use crate::rng::{hash_str, rng_for};

pub const FEATURE_COUNT: usize = 20;
pub const DEFAULT_COMBINATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Val, SplitPart::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Config(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.4,
            val: 0.3,
            test: 0.3,
        }
    }
}

impl SplitRatios {
    /// Partition sizes for `n` items: train and test are rounded half to
    /// even, validation takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64).round_ties_even() as usize;
        let test = ((self.test * n as f64).round_ties_even() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, n - train - test, test)
    }
}

pub type GroupKey = (String, Vowel);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub train: Vec<SegmentKey>,
    pub val: Vec<SegmentKey>,
    pub test: Vec<SegmentKey>,
}

impl GroupSplit {
    pub fn part(&self, part: SplitPart) -> &[SegmentKey] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub groups: BTreeMap<String, BTreeMap<Vowel, GroupSplit>>,
}

impl Splits {
    pub fn group(&self, subject: &str, vowel: Vowel) -> Option<&GroupSplit> {
        self.groups.get(subject).and_then(|m| m.get(&vowel))
    }

    pub fn subjects(&self) -> Vec<String> {
        self.groups.keys().cloned().collect()
    }
}

/// Shuffle each group with a seed derived from `(seed, subject, vowel)` and
/// cut it into train/val/test.
pub fn split_segments(
    groups: &BTreeMap<GroupKey, Vec<SegmentKey>>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Splits> {
    let mut splits = Splits::default();
    for ((subject, vowel), ids) in groups {
        if ids.len() < 3 {
            return Err(Error::InsufficientData {
                group: format!("{subject}/{vowel}"),
                reason: format!("{} segments, need at least 3", ids.len()),
            });
        }
        let mut ids = ids.clone();
        ids.sort();
        ids.shuffle(&mut rng_for(seed, &[hash_str(subject), vowel.index() as u64]));
        let (train, val, _) = ratios.sizes(ids.len());
        let group = GroupSplit {
            test: ids.split_off(train + val),
            val: ids.split_off(train),
            train: ids,
        };
        splits.groups.entry(subject.clone()).or_default().insert(*vowel, group);
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// `(vowel a..u) x (density, aspl, cc, q)`.
    pub features: Vec<f64>,
    pub label: String,
    /// Contributing segment per vowel, in vowel order.
    pub provenance: Vec<SegmentKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub part: SplitPart,
    pub seed: u64,
    pub rows: Vec<FeatureRow>,
}

pub fn feature_names() -> Vec<String> {
    Vowel::ALL
        .iter()
        .flat_map(|v| MetricVector::NAMES.iter().map(move |m| format!("{v}_{m}")))
        .collect()
}

impl FeatureTable {
    pub fn new(part: SplitPart, seed: u64) -> Self {
        Self {
            part,
            seed,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = feature_names().join(",");
        out.push_str(",label");
        for v in Vowel::ALL {
            let _ = write!(out, ",seg_{v}");
        }
        out.push('\n');
        for row in &self.rows {
            for f in &row.features {
                let _ = write!(out, "{f},");
            }
            out.push_str(&row.label);
            for p in &row.provenance {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, part: SplitPart, seed: u64) -> Result<Self> {
        let mut table = FeatureTable::new(part, seed);
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != FEATURE_COUNT + 1 + Vowel::ALL.len() {
                return Err(Error::Config(format!("feature CSV line {}: wrong column count", line_no + 1)));
            }
            let features = cells[..FEATURE_COUNT]
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Config(format!("feature CSV line {}: bad number `{c}`", line_no + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            let provenance = cells[FEATURE_COUNT + 1..]
                .iter()
                .map(|c| c.parse())
                .collect::<Result<Vec<SegmentKey>>>()?;
            table.rows.push(FeatureRow {
                features,
                label: cells[FEATURE_COUNT].to_string(),
                provenance,
            });
        }
        Ok(table)
    }
}

/// Result of sampling one subject's combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub table: FeatureTable,
    /// Size of the Cartesian product when it was smaller than the request.
    pub capped_at: Option<usize>,
}

/// Draw `k` distinct five-vowel tuples of one subject's segments within one
/// partition and assemble their feature rows.
pub fn sample_combinations(
    splits: &Splits,
    metrics: &BTreeMap<SegmentKey, MetricVector>,
    subject: &str,
    part: SplitPart,
    k: usize,
    seed: u64,
) -> Result<Sampled> {
    let mut pools: Vec<Vec<SegmentKey>> = Vec::with_capacity(5);
    for vowel in Vowel::ALL {
        let ids = splits.group(subject, vowel).map(|g| g.part(part)).unwrap_or(&[]);
        if ids.is_empty() {
            return Err(Error::IncompleteVowel {
                subject: subject.to_string(),
                vowel: vowel.to_string(),
                part: part.to_string(),
            });
        }
        let mut ids = ids.to_vec();
        ids.sort();
        pools.push(ids);
    }
    let radices: Vec<usize> = pools.iter().map(Vec::len).collect();
    let product = radices.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r)).unwrap_or(usize::MAX);
    let mut rng = rng_for(seed, &[hash_str(subject), part as u64]);

    let decode = |mut code: usize| -> Vec<usize> {
        let mut digits = vec![0; 5];
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = code % r;
            code /= r;
        }
        digits
    };
    let encode = |digits: &[usize]| digits.iter().zip(&radices).fold(0usize, |acc, (&d, &r)| acc * r + d);

    let codes: Vec<usize> = if product <= k.saturating_mul(4) {
        let mut all: Vec<usize> = (0..product).collect();
        all.shuffle(&mut rng);
        all.truncate(k);
        all
    } else {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let digits: Vec<usize> = radices.iter().map(|&r| rng.gen_range(0..r)).collect();
            let code = encode(&digits);
            if seen.insert(code) {
                out.push(code);
            }
        }
        out
    };

    let mut table = FeatureTable::new(part, seed);
    for code in codes {
        let digits = decode(code);
        let mut features = Vec::with_capacity(FEATURE_COUNT);
        let mut provenance = Vec::with_capacity(5);
        for (pool, &d) in pools.iter().zip(&digits) {
            let key = &pool[d];
            let mv = metrics.get(key).ok_or_else(|| Error::InsufficientData {
                group: key.to_string(),
                reason: "no metric vector for segment".into(),
            })?;
            features.extend_from_slice(&mv.as_array());
            provenance.push(key.clone());
        }
        table.rows.push(FeatureRow {
            features,
            label: subject.to_string(),
            provenance,
        });
    }
    Ok(Sampled {
        table,
        capped_at: (product < k).then_some(product),
    })
}

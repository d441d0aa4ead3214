//! Per-column statistics features.
//!
//! Progression, string, number-range and distribution features. Features
//! that are undefined for a column are `None`, never NaN.
//!
//! * String-level features (`changeRate`, `cardinality`, `major`, the
//!   prefix/suffix/percent shares) look at every non-empty cell. Numeric
//!   cells compare by value, so `1` and `1.0` are the same value.
//! * Numeric features use the integer/real cells only and need at least
//!   two of them.
//! * Moments are population moments; `variance` is the population standard
//!   deviation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatisticsFeatureSet {
    pub change_rate: Option<f64>,
    pub partial_ordered: Option<f64>,
    pub ordered_confidence: Option<f64>,
    pub aggr_percent_formatted: Option<f64>,
    pub common_prefix: Option<f64>,
    pub common_suffix: Option<f64>,
    pub aggr01_ranged: Option<f64>,
    pub aggr0100_ranged: Option<f64>,
    pub aggr_integers: Option<f64>,
    pub aggr_negative: Option<f64>,
    pub variance: Option<f64>,
    pub range: Option<f64>,
    pub cardinality: Option<f64>,
    pub spread: Option<f64>,
    pub major: Option<f64>,
    pub benford: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub gini: Option<f64>,
}

impl StatisticsFeatureSet {
    /// `(name, value)` for every feature in declaration order.
    pub fn features(&self) -> [(&'static str, Option<f64>); 19] {
        [
            ("changeRate", self.change_rate),
            ("partialOrdered", self.partial_ordered),
            ("orderedConfidence", self.ordered_confidence),
            ("aggrPercentFormatted", self.aggr_percent_formatted),
            ("commonPrefix", self.common_prefix),
            ("commonSuffix", self.common_suffix),
            ("aggr01Ranged", self.aggr01_ranged),
            ("aggr0100Ranged", self.aggr0100_ranged),
            ("aggrIntegers", self.aggr_integers),
            ("aggrNegative", self.aggr_negative),
            ("variance", self.variance),
            ("range", self.range),
            ("cardinality", self.cardinality),
            ("spread", self.spread),
            ("major", self.major),
            ("benford", self.benford),
            ("skewness", self.skewness),
            ("kurtosis", self.kurtosis),
            ("gini", self.gini),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.features()
            .into_iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, v)| v)
    }
}

/// Expected first-digit share for digit `d` under Benford's law.
pub fn benford_expected(d: u32) -> f64 {
    (1.0 + 1.0 / f64::from(d)).log10()
}

/// L1 distance between the observed first-digit shares (`counts[d - 1]`
/// values with leading digit `d`) and Benford's law. `None` for no values.
pub fn benford_distance(counts: &[u64; 9]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        (1..=9u32)
            .map(|d| (counts[d as usize - 1] as f64 / total as f64 - benford_expected(d)).abs())
            .sum(),
    )
}

/// Leading decimal digit of `x >= 1`.
pub fn leading_digit(x: f64) -> u32 {
    // Scientific formatting is exact about the first significant digit.
    let s = format!("{:e}", x.abs());
    s.chars().next().and_then(|c| c.to_digit(10)).unwrap_or(0)
}

#[derive(PartialEq, Eq, Hash)]
enum ValueKey<'a> {
    Num(u64),
    Text(&'a str),
}

fn key(c: &Cell) -> ValueKey<'_> {
    match c.number() {
        // -0.0 and 0.0 are one value
        Some(x) => ValueKey::Num((x + 0.0).to_bits()),
        None => ValueKey::Text(c.text()),
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    n as f64 / d as f64
}

fn modal_share<T: std::hash::Hash + Eq>(items: impl Iterator<Item = T>, m: usize) -> f64 {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for i in items {
        *counts.entry(i).or_default() += 1;
    }
    ratio(counts.values().copied().max().unwrap_or(0), m)
}

pub fn compute_statistics(table: &Table, col: usize) -> Result<StatisticsFeatureSet> {
    let cells: Vec<&Cell> = table
        .column(col)?
        .into_iter()
        .filter(|c| !c.is_empty())
        .collect();
    Ok(statistics_of_cells(&cells))
}

pub(crate) fn statistics_of_cells(cells: &[&Cell]) -> StatisticsFeatureSet {
    let mut f = StatisticsFeatureSet::default();
    let m = cells.len();
    if m == 0 {
        return f;
    }
    let keys: Vec<ValueKey> = cells.iter().map(|c| key(c)).collect();
    if m >= 2 {
        let changes = keys.windows(2).filter(|w| w[0] != w[1]).count();
        f.change_rate = Some(ratio(changes, m - 1));
    }
    let texts: Vec<&str> = cells.iter().map(|c| c.text().trim()).collect();
    f.aggr_percent_formatted = Some(ratio(texts.iter().filter(|t| t.ends_with('%')).count(), m));
    f.common_prefix = Some(modal_share(texts.iter().map(|t| t.chars().next()), m));
    f.common_suffix = Some(modal_share(texts.iter().map(|t| t.chars().next_back()), m));
    f.major = Some(modal_share(keys.iter(), m));
    let distinct = keys.iter().collect::<std::collections::HashSet<_>>().len();
    let cardinality = ratio(distinct, m);
    f.cardinality = Some(cardinality);

    let nums: Vec<f64> = cells.iter().filter_map(|c| c.number()).collect();
    let k = nums.len();
    if k < 2 {
        return f;
    }
    let kf = k as f64;

    let inc = nums.windows(2).filter(|w| w[1] > w[0]).count();
    let dec = nums.windows(2).filter(|w| w[1] < w[0]).count();
    let partial = ratio(inc.max(dec), k - 1);
    f.partial_ordered = Some(partial);
    f.ordered_confidence = Some(if inc == k - 1 || dec == k - 1 {
        1.0
    } else {
        partial
    });

    f.aggr01_ranged = Some(ratio(
        nums.iter().filter(|x| (0.0..=1.0).contains(*x)).count(),
        k,
    ));
    f.aggr0100_ranged = Some(ratio(
        nums.iter().filter(|x| (0.0..=100.0).contains(*x)).count(),
        k,
    ));
    f.aggr_integers = Some(ratio(nums.iter().filter(|x| x.fract() == 0.0).count(), k));
    f.aggr_negative = Some(ratio(nums.iter().filter(|x| **x < 0.0).count(), k));

    let mean = nums.iter().sum::<f64>() / kf;
    let central = |p: i32| nums.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / kf;
    let m2 = central(2);
    f.variance = Some(m2.sqrt());
    let min = nums.iter().copied().fold(f64::INFINITY, f64::min);
    let max = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    f.range = Some(range);
    if range > 0.0 {
        f.spread = Some(cardinality / range);
        f.skewness = Some(central(3) / m2.powf(1.5));
        f.kurtosis = Some(central(4) / (m2 * m2) - 3.0);
    }

    let mut digit_counts = [0u64; 9];
    for x in nums.iter().map(|x| x.abs()).filter(|x| *x >= 1.0) {
        digit_counts[leading_digit(x) as usize - 1] += 1;
    }
    f.benford = benford_distance(&digit_counts);

    let sum: f64 = nums.iter().sum();
    if nums.iter().all(|x| *x >= 0.0) && sum > 0.0 {
        let mut sorted = nums.clone();
        sorted.sort_by(f64::total_cmp);
        let weighted: f64 = sorted
            .iter()
            .enumerate()
            .map(|(i, x)| (i as f64 + 1.0) * x)
            .sum();
        f.gini = Some(2.0 * weighted / (kf * sum) - (kf + 1.0) / kf);
    }
    f
}

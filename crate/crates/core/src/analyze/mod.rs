//! Longitudinal statistics over inferred offsets: yearly densities, concentration,
//! growth relative to a base year, and agreement with external population shares.

pub mod deconv;

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

pub use deconv::{deconvolve, DeconvConfig, DeconvolutionResult, Objective};

use crate::circular::hour_class;
use crate::error::{Error, Result};

/// Offset bins -11..=12 h.
pub const OFFSET_BINS: usize = 24;
pub const GROWTH_EPSILON: f64 = 1e-9;
pub const DEFAULT_BASE_YEAR: i32 = 2012;

/// Bin index (0..24) of an offset in minutes.
pub fn offset_bin(offset_minutes: i32) -> usize {
    (hour_class(offset_minutes) + 11) as usize
}

/// Offset in hours represented by a bin index.
pub fn bin_offset_hours(bin: usize) -> i32 {
    bin as i32 - 11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyOffsetDistribution {
    pub year: i32,
    /// Mass per offset in minutes.
    pub mass: BTreeMap<i32, f64>,
}

impl YearlyOffsetDistribution {
    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    /// Mass aggregated onto the 24 whole-hour bins.
    pub fn bins(&self) -> [f64; OFFSET_BINS] {
        let mut out = [0.0; OFFSET_BINS];
        for (o, m) in &self.mass {
            out[offset_bin(*o)] += m;
        }
        out
    }

    pub fn shares(&self) -> Self {
        let t = self.total();
        YearlyOffsetDistribution {
            year: self.year,
            mass: self
                .mass
                .iter()
                .map(|(o, m)| (*o, if t > 0.0 { m / t } else { 0.0 }))
                .collect(),
        }
    }
}

/// Calendar year (UTC) of an epoch-hour index.
pub fn year_of_epoch_hour(hour: i64) -> i32 {
    DateTime::from_timestamp(hour * 3600, 0)
        .map(|d| d.year())
        .unwrap_or(1970)
}

/// One community's inferred offset, attribution year and activity volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityYear {
    pub community_id: String,
    pub offset_minutes: i32,
    pub year: i32,
    pub volume: f64,
}

/// Per-year offset distributions. Each community counts once, or by its volume.
pub fn yearly_distributions(items: &[CommunityYear], weight_by_volume: bool) -> Vec<YearlyOffsetDistribution> {
    let mut by_year: BTreeMap<i32, BTreeMap<i32, f64>> = BTreeMap::new();
    for it in items {
        let w = if weight_by_volume { it.volume } else { 1.0 };
        *by_year
            .entry(it.year)
            .or_default()
            .entry(it.offset_minutes)
            .or_default() += w;
    }
    by_year
        .into_iter()
        .map(|(year, mass)| YearlyOffsetDistribution { year, mass })
        .collect()
}

/// Discrete Gini coefficient over the offset bins.
pub fn gini(mass: &[f64]) -> Result<f64> {
    if mass.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::Degenerate("negative mass in gini input"));
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all-zero distribution has no gini coefficient"));
    }
    let mut diff = 0.0;
    for a in mass {
        for b in mass {
            diff += (a - b).abs();
        }
    }
    Ok(diff / (2.0 * mass.len() as f64 * total))
}

/// `(year, gini)` for each year with non-zero mass.
pub fn gini_by_year(yearly: &[YearlyOffsetDistribution]) -> Vec<(i32, f64)> {
    yearly
        .iter()
        .filter_map(|y| gini(&y.bins()).ok().map(|g| (y.year, g)))
        .collect()
}

/// log2 fold change of each year's bin mass relative to the base year.
pub fn growth_index(yearly: &[YearlyOffsetDistribution], base_year: i32) -> Result<BTreeMap<i32, [f64; OFFSET_BINS]>> {
    let base = yearly
        .iter()
        .find(|y| y.year == base_year)
        .ok_or_else(|| Error::Config(format!("base year {base_year} has no communities")))?
        .bins();
    Ok(yearly
        .iter()
        .map(|y| {
            let m = y.bins();
            let mut out = [0.0; OFFSET_BINS];
            for k in 0..OFFSET_BINS {
                out[k] = ((m[k] + GROWTH_EPSILON) / (base[k] + GROWTH_EPSILON)).log2();
            }
            (y.year, out)
        })
        .collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Pearson and Spearman coefficients between inferred and external shares per bin.
pub fn population_correlation(inferred: &[f64; OFFSET_BINS], external: &[f64; OFFSET_BINS]) -> (f64, f64) {
    (pearson(inferred, external), spearman(inferred, external))
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    offset_minutes: i32,
    real_share: f64,
}

/// Read an `offset_minutes,real_share` table onto the offset bins. Offsets that do
/// not appear are taken as zero share.
pub fn read_population(reader: impl Read) -> Result<[f64; OFFSET_BINS]> {
    let mut out = [0.0; OFFSET_BINS];
    let mut seen = [false; OFFSET_BINS];
    for row in csv::Reader::from_reader(reader).deserialize::<PopulationRow>() {
        let row = row?;
        if row.real_share < 0.0 {
            return Err(Error::Config(format!(
                "negative real_share for offset {}",
                row.offset_minutes
            )));
        }
        let b = offset_bin(row.offset_minutes);
        out[b] += row.real_share;
        seen[b] = true;
    }
    let missing: Vec<i32> = (0..OFFSET_BINS).filter(|b| !seen[*b]).map(bin_offset_hours).collect();
    if !missing.is_empty() {
        log::warn!("population table has no share for offsets {missing:?} h; using 0");
    }
    Ok(out)
}

/// The published population comparison table shipped with the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ShippedTable {
    pub offset_minutes: Vec<i32>,
    pub real_share: Vec<f64>,
    pub inferred_pure: Vec<f64>,
    pub inferred_optimized: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ShippedRow {
    offset_minutes: i32,
    real_share: f64,
    inferred_pure: f64,
    inferred_optimized: f64,
}

pub const SHIPPED_TABLE_CSV: &str = include_str!("../../data/table3.csv");

impl ShippedTable {
    pub fn load() -> Self {
        let mut t = ShippedTable {
            offset_minutes: Vec::new(),
            real_share: Vec::new(),
            inferred_pure: Vec::new(),
            inferred_optimized: Vec::new(),
        };
        for row in csv::Reader::from_reader(SHIPPED_TABLE_CSV.as_bytes()).deserialize::<ShippedRow>() {
            let row = row.expect("shipped table is well formed");
            t.offset_minutes.push(row.offset_minutes);
            t.real_share.push(row.real_share);
            t.inferred_pure.push(row.inferred_pure);
            t.inferred_optimized.push(row.inferred_optimized);
        }
        t
    }
}

//! Per-item quantile binning of measurement values.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    bins: usize,
    boundaries: BTreeMap<String, Vec<f64>>,
}

impl BinSpec {
    /// Number of bins requested at fit time (`B`).
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn boundaries(&self, item: &str) -> Option<&[f64]> {
        self.boundaries.get(item).map(Vec::as_slice)
    }

    pub fn effective_bins(&self, item: &str) -> Option<usize> {
        self.boundaries.get(item).map(|b| b.len() + 1)
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.boundaries.keys().map(String::as_str)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.boundaries.contains_key(item)
    }

    /// Writes `item_id,b1,b2,...` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (item, bounds) in &self.boundaries {
            write!(out, "{item}")?;
            for b in bounds {
                write!(out, ",{b}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Nearest-rank quantile boundaries: boundary `k` (1-based) is the sorted value
/// at position `ceil(k * n / B) - 1`. Repeated boundaries collapse to one, and
/// a boundary equal to the largest value is dropped.
/// Items with no values are left out of the spec.
pub fn fit_bins(train_values: &BTreeMap<String, Vec<f64>>, bins: usize) -> Result<BinSpec> {
    if bins == 0 {
        return Err(Error::invalid("bin count B must be at least 1"));
    }
    let mut boundaries = BTreeMap::new();
    for (item, values) in train_values {
        if values.is_empty() {
            continue;
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite training value {v} for item `{item}`")));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut bounds: Vec<f64> = Vec::with_capacity(bins - 1);
        for k in 1..bins {
            let rank = (k * n).div_ceil(bins);
            let b = sorted[rank - 1];
            // A boundary at the training maximum splits nothing off.
            if bounds.last() != Some(&b) && b < sorted[n - 1] {
                bounds.push(b);
            }
        }
        boundaries.insert(item.clone(), bounds);
    }
    Ok(BinSpec { bins, boundaries })
}

/// Bin index = number of boundaries strictly below `value`.
pub fn assign_bin(item: &str, value: f64, spec: &BinSpec) -> Result<usize> {
    if !value.is_finite() {
        return Err(Error::invalid(format!("non-finite value {value} for item `{item}`")));
    }
    let bounds = spec
        .boundaries(item)
        .ok_or_else(|| Error::invalid(format!("item `{item}` has no fitted bins")))?;
    Ok(bounds.partition_point(|b| *b < value))
}

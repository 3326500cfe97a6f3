use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::patterns::{check_k, n_cells, CapturePattern};
use crate::error::{invalid, mismatch, Error, Result};

/// Sentinel stored in place of a censored count.
pub const CENSORED: i64 = -1;

/// Inclusive disclosure-control interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u64; 2]", into = "[u64; 2]")]
pub struct CensorInterval {
    lo: u64,
    hi: u64,
}

impl CensorInterval {
    pub fn new(lo: u64, hi: u64) -> Result<Self> {
        if lo > hi {
            return Err(invalid(format!("censor interval [{lo}, {hi}] has lo > hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }

    pub fn contains(&self, n: u64) -> bool {
        (self.lo..=self.hi).contains(&n)
    }
}

impl TryFrom<[u64; 2]> for CensorInterval {
    type Error = Error;

    fn try_from(v: [u64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<CensorInterval> for [u64; 2] {
    fn from(c: CensorInterval) -> Self {
        [c.lo, c.hi]
    }
}

impl fmt::Display for CensorInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Observed (possibly censored) counts for all `2^K - 1` capture patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    k: usize,
    counts: Vec<i64>,
    mask: Vec<bool>,
    interval: Option<CensorInterval>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant: `counts[i] == -1` iff
    /// `mask[i]`, other counts non-negative and outside the interval.
    pub fn new(k: usize, counts: Vec<i64>, mask: Vec<bool>, interval: Option<CensorInterval>) -> Result<Self> {
        check_k(k)?;
        let cells = n_cells(k);
        if counts.len() != cells || mask.len() != cells {
            return Err(mismatch(format!(
                "K={k} needs {cells} cells, got {} counts and {} mask entries",
                counts.len(),
                mask.len()
            )));
        }
        for (i, (&n, &m)) in counts.iter().zip(&mask).enumerate() {
            let pattern = CapturePattern::from_cell_index(k, i)?;
            if m {
                if n != CENSORED {
                    return Err(invalid(format!("cell {pattern} is masked but holds count {n}")));
                }
                if interval.is_none() {
                    return Err(invalid(format!("cell {pattern} is censored but the dataset has no censor interval")));
                }
            } else {
                if n < 0 {
                    return Err(invalid(format!("cell {pattern} has negative count {n} without being masked")));
                }
                if interval.is_some_and(|c| c.contains(n as u64)) {
                    return Err(invalid(format!(
                        "cell {pattern} reports count {n} inside the censor interval {}",
                        interval.unwrap()
                    )));
                }
            }
        }
        Ok(Self { k, counts, mask, interval })
    }

    /// Fully observed dataset.
    pub fn observed(k: usize, counts: &[u64]) -> Result<Self> {
        Self::censored(k, counts, None)
    }

    /// Applies the censor rule to raw simulated counts.
    pub fn censored(k: usize, counts: &[u64], interval: Option<CensorInterval>) -> Result<Self> {
        check_k(k)?;
        if counts.len() != n_cells(k) {
            return Err(mismatch(format!("K={k} needs {} counts, got {}", n_cells(k), counts.len())));
        }
        let signed: Vec<i64> = counts.iter().map(|&n| n as i64).collect();
        apply_censoring(&signed, interval)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[i64] {
        &self.counts
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn interval(&self) -> Option<CensorInterval> {
        self.interval
    }

    pub fn is_censored(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    pub fn n_censored(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sum of the uncensored counts.
    pub fn total_observed(&self) -> u64 {
        self.counts.iter().filter(|&&n| n > 0).map(|&n| n as u64).sum()
    }

    /// Network features: `log(1 + n)` per cell (0 for censored cells)
    /// followed by the mask as 0/1.
    pub fn network_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.counts.len());
        self.write_network_input(&mut v);
        v
    }

    pub(crate) fn write_network_input(&self, out: &mut Vec<f64>) {
        out.extend(self.counts.iter().zip(&self.mask).map(|(&n, &m)| if m { 0.0 } else { (n as f64).ln_1p() }));
        out.extend(self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    }

    pub fn to_file(&self) -> DatasetFile {
        let cells = self
            .counts
            .iter()
            .zip(&self.mask)
            .enumerate()
            .map(|(i, (&n, &m))| DatasetCell {
                pattern: CapturePattern::from_cell_index(self.k, i).expect("valid cell index").to_string(),
                count: if m { None } else { Some(n as u64) },
                censored: m,
            })
            .collect();
        DatasetFile { k: self.k, censor_interval: self.interval, cells }
    }

    pub fn from_file(file: &DatasetFile) -> Result<Self> {
        let k = file.k;
        check_k(k).map_err(|e| Error::Format(e.to_string()))?;
        let mut by_cell = BTreeMap::new();
        for cell in &file.cells {
            if cell.pattern.len() != k {
                return Err(Error::Format(format!("pattern {:?} does not have length K={k}", cell.pattern)));
            }
            let pattern = CapturePattern::parse(&cell.pattern).map_err(|e| Error::Format(e.to_string()))?;
            if by_cell.insert(pattern.cell_index(), cell).is_some() {
                return Err(Error::Format(format!("duplicate pattern {}", cell.pattern)));
            }
        }
        if by_cell.len() != n_cells(k) {
            return Err(Error::Format(format!("expected {} cells for K={k}, found {}", n_cells(k), by_cell.len())));
        }
        let mut counts = Vec::with_capacity(by_cell.len());
        let mut mask = Vec::with_capacity(by_cell.len());
        for cell in by_cell.values() {
            match (cell.count, cell.censored) {
                (None, true) => counts.push(CENSORED),
                (Some(n), false) => counts.push(n as i64),
                _ => {
                    return Err(Error::Format(format!(
                        "pattern {}: count must be null exactly when censored is true",
                        cell.pattern
                    )))
                }
            }
            mask.push(cell.censored);
        }
        Self::new(k, counts, mask, file.censor_interval).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_file(&file)
    }
}

/// Replaces every count inside `interval` by the sentinel and sets its mask
/// flag. Entries already holding the sentinel stay censored, so applying the
/// rule twice is a no-op.
pub fn apply_censoring(counts: &[i64], interval: Option<CensorInterval>) -> Result<Dataset> {
    let cells = counts.len();
    let k = (cells + 1).trailing_zeros() as usize;
    if cells == 0 || n_cells(k) != cells {
        return Err(mismatch(format!("{cells} counts is not 2^K - 1 for any K")));
    }
    let mut out = Vec::with_capacity(cells);
    let mut mask = Vec::with_capacity(cells);
    for &n in counts {
        let censor = n == CENSORED || interval.is_some_and(|c| n >= 0 && c.contains(n as u64));
        if n < CENSORED {
            return Err(invalid(format!("negative count {n}")));
        }
        out.push(if censor { CENSORED } else { n });
        mask.push(censor);
    }
    Dataset::new(k, out, mask, interval)
}

/// On-disk dataset layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub k: usize,
    pub censor_interval: Option<CensorInterval>,
    pub cells: Vec<DatasetCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCell {
    pub pattern: String,
    pub count: Option<u64>,
    pub censored: bool,
}

use std::fmt;

use crate::error::{invalid, Result};

pub const MAX_LISTS: usize = 20;

/// Number of observable cells, `2^K - 1`.
pub fn n_cells(k: usize) -> usize {
    (1usize << k) - 1
}

pub fn n_pairs(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Dimension of the parameter vector: intercept, K main effects, K(K-1)/2 interactions.
pub fn n_params(k: usize) -> usize {
    1 + k + n_pairs(k)
}

/// Position of the interaction between lists `i < j` (0-based) in the
/// canonical ordering (1,2), (1,3), ..., (K-1,K).
pub fn pair_index(k: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if !(2..=MAX_LISTS).contains(&k) {
        return Err(invalid(format!("number of lists must be in 2..={MAX_LISTS}, got {k}")));
    }
    Ok(())
}

/// A non-empty subset of the K lists. List 1 is the leftmost (most significant) bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CapturePattern {
    bits: u32,
    k: u8,
}

impl CapturePattern {
    pub fn new(k: usize, bits: u32) -> Result<Self> {
        check_k(k)?;
        if bits == 0 || bits >= (1u32 << k) {
            return Err(invalid(format!("pattern bits {bits:#b} out of range for K={k}")));
        }
        Ok(Self { bits, k: k as u8 })
    }

    /// Pattern at position `index` of the canonical enumeration.
    pub fn from_cell_index(k: usize, index: usize) -> Result<Self> {
        Self::new(k, index as u32 + 1)
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn cell_index(&self) -> usize {
        self.bits as usize - 1
    }

    /// Whether 0-based list `list` captured this pattern.
    pub fn contains(&self, list: usize) -> bool {
        list < self.k() && self.bits & (1 << (self.k() - 1 - list)) != 0
    }

    /// 0-based indices of the member lists, ascending.
    pub fn lists(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k()).filter(|&l| self.contains(l))
    }

    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.is_empty() || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(invalid(format!("pattern {s:?} is not a binary string")));
        }
        let bits = u32::from_str_radix(s, 2).map_err(|e| invalid(e.to_string()))?;
        Self::new(s.len(), bits)
    }
}

impl fmt::Display for CapturePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.bits, width = self.k())
    }
}

/// All non-empty patterns in canonical order (integers 1..2^K-1).
pub fn enumerate_patterns(k: usize) -> Result<Vec<CapturePattern>> {
    check_k(k)?;
    Ok((1..=n_cells(k) as u32).map(|bits| CapturePattern { bits, k: k as u8 }).collect())
}

/// Sparse design matrix of the log-linear model: for every cell, the indices
/// of the parameters summed into its log-rate.
#[derive(Clone, Debug)]
pub struct Design {
    k: usize,
    terms: Vec<Vec<usize>>,
}

impl Design {
    pub fn new(k: usize) -> Result<Self> {
        let terms = enumerate_patterns(k)?
            .iter()
            .map(|p| {
                let lists: Vec<usize> = p.lists().collect();
                let mut idx = vec![0];
                idx.extend(lists.iter().map(|&l| 1 + l));
                for (a, &i) in lists.iter().enumerate() {
                    for &j in &lists[a + 1..] {
                        idx.push(1 + k + pair_index(k, i, j));
                    }
                }
                idx
            })
            .collect();
        Ok(Self { k, terms })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.terms.len()
    }

    pub fn n_params(&self) -> usize {
        n_params(self.k)
    }

    pub fn cell_terms(&self, cell: usize) -> &[usize] {
        &self.terms[cell]
    }

    /// Log-rates of every cell for a flat parameter vector.
    pub fn log_rates_into(&self, theta: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.terms) {
            *o = terms.iter().map(|&i| theta[i]).sum();
        }
    }

    pub fn log_rates(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.terms.len()];
        self.log_rates_into(theta, &mut out);
        out
    }

    /// Accumulates `grad[param] += d[cell]` over the design (transpose product).
    pub fn accumulate_transpose(&self, per_cell: &[f64], grad: &mut [f64]) {
        for (d, terms) in per_cell.iter().zip(&self.terms) {
            for &i in terms {
                grad[i] += d;
            }
        }
    }
}

//! Dense tables over joint states of a sorted variable list.
//!
//! Tables are row-major with the last variable varying fastest. All region
//! and factor scopes in the crate are sorted ascending, so a table layout is
//! fully determined by the scope and the variable cardinalities.

use crate::VarId;

/// Smallest probability that enters a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

pub fn table_len(scope: &[VarId], cards: &[usize]) -> usize {
    scope.iter().map(|&v| cards[v]).product()
}

/// Strict inclusion for sorted, duplicate-free scopes.
pub fn is_strict_subset(small: &[VarId], big: &[VarId]) -> bool {
    small.len() < big.len() && is_subset(small, big)
}

pub fn is_subset(small: &[VarId], big: &[VarId]) -> bool {
    let mut it = big.iter();
    'outer: for s in small {
        for b in it.by_ref() {
            if b == s {
                continue 'outer;
            }
            if b > s {
                return false;
            }
        }
        return false;
    }
    true
}

pub fn intersect(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// For every entry of the table over `big`, the index of the entry of the
/// table over `small` it marginalizes onto. `small` must be a subset of `big`.
pub fn projection_map(big: &[VarId], small: &[VarId], cards: &[usize]) -> Vec<usize> {
    debug_assert!(is_subset(small, big));
    // stride in the small table for each position of `big` (0 when absent)
    let mut small_stride = vec![0usize; big.len()];
    let mut stride = 1;
    for &v in small.iter().rev() {
        let pos = big.iter().position(|&b| b == v).expect("small ⊄ big");
        small_stride[pos] = stride;
        stride *= cards[v];
    }
    let big_cards: Vec<usize> = big.iter().map(|&v| cards[v]).collect();
    let len: usize = big_cards.iter().product();
    let mut out = Vec::with_capacity(len);
    let mut state = vec![0usize; big.len()];
    let mut idx = 0usize;
    for _ in 0..len {
        out.push(idx);
        // odometer, last position fastest
        for pos in (0..big.len()).rev() {
            state[pos] += 1;
            idx += small_stride[pos];
            if state[pos] < big_cards[pos] {
                break;
            }
            idx -= small_stride[pos] * state[pos];
            state[pos] = 0;
        }
    }
    out
}

/// Decode a flat index into per-variable states for `scope`.
pub fn decode(mut index: usize, scope: &[VarId], cards: &[usize]) -> Vec<usize> {
    let mut states = vec![0; scope.len()];
    for (pos, &v) in scope.iter().enumerate().rev() {
        states[pos] = index % cards[v];
        index /= cards[v];
    }
    states
}

pub fn marginalize(table: &[f64], map: &[usize], small_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; small_len];
    for (value, &i) in table.iter().zip(map) {
        out[i] += value;
    }
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain marginalization.
pub fn log_marginalize(log_table: &[f64], map: &[usize], small_len: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; small_len];
    for (&value, &i) in log_table.iter().zip(map) {
        if value > max[i] {
            max[i] = value;
        }
    }
    let mut sum = vec![0.0; small_len];
    for (&value, &i) in log_table.iter().zip(map) {
        sum[i] += (value - max[i]).exp();
    }
    max.iter().zip(&sum).map(|(m, s)| m + s.ln()).collect()
}

/// Shift a log table so that it exponentiates to a normalized distribution.
pub fn normalize_log(log_table: &mut [f64]) {
    let lse = log_sum_exp(log_table);
    for v in log_table.iter_mut() {
        *v -= lse;
    }
}

pub fn normalize(table: &mut [f64]) {
    let sum: f64 = table.iter().sum();
    for v in table.iter_mut() {
        *v /= sum;
    }
}

pub fn exp_normalized(log_table: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_table);
    let mut out: Vec<f64> = log_table.iter().map(|v| (v - lse).exp()).collect();
    normalize(&mut out);
    out
}

/// `-Σ p log p` with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// `-Σ p log q` with `0 log q = 0` and `q` floored. Returns the number of
/// floored entries that carried positive mass in `p`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> (f64, usize) {
    let mut floored = 0;
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b < PROB_FLOOR {
                floored += 1;
            }
            acc -= a * b.max(PROB_FLOOR).ln();
        }
    }
    (acc, floored)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

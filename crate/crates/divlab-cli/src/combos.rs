//! Lexicographic enumeration of member index combinations.

use anyhow::{bail, Result};

/// All k-element subsets of 0..n in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > n {
        bail!("cannot choose {k} members from a pool of {n}");
    }
    if k == 0 {
        return Ok(vec![Vec::new()]);
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // advance: find the rightmost index that can still move up
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if current[i] < n - (k - i) {
                break;
            }
        }
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result = 1usize;
    for i in 0..k {
        result = result * (n - i) / (i + 1);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_counts() {
        assert_eq!(combinations(14, 3).unwrap().len(), 364);
        assert_eq!(combinations(11, 3).unwrap().len(), 165);
        assert_eq!(combinations(3, 3).unwrap(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn lexicographic_order_and_binomial_match() {
        for n in 1..=20 {
            for k in 1..=5.min(n) {
                let combos = combinations(n, k).unwrap();
                assert_eq!(combos.len(), binomial(n, k), "C({n},{k})");
                for w in combos.windows(2) {
                    assert!(w[0] < w[1], "not lexicographic at n={n} k={k}");
                }
                for c in &combos {
                    assert!(c.windows(2).all(|w| w[0] < w[1]));
                    assert!(c.iter().all(|&i| i < n));
                }
            }
        }
    }

    #[test]
    fn k_greater_than_n_rejected() {
        assert!(combinations(3, 4).is_err());
    }
}

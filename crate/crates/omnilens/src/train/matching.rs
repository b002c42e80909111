//! Set matching between the fixed query slots and variable-size ground truth:
//! exact minimum-cost one-to-one assignment, with unmatched queries paying
//! their NO_OBJECT cost. Ground-truth counts are tiny (<= queries, typically
//! <= 6), so a subset DP over ground-truth bitmasks is exact and fast.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Minimum-cost assignment. `cost[[q, g]]` is the cost of matching query `q`
/// to ground-truth object `g`; `no_object[q]` is what query `q` pays when
/// left unmatched. Every ground-truth object must be matched. Ties are broken
/// toward matching the lowest query index (and then the lowest object index).
///
/// Returns `(pairs sorted by query index, total cost)`.
pub fn hungarian_match(
    cost: &Array2<f64>,
    no_object: &[f64],
) -> Result<(Vec<(usize, usize)>, f64)> {
    let (m, n) = cost.dim();
    if no_object.len() != m {
        return Err(Error::Validation("no_object costs must cover every query".into()));
    }
    if n > m {
        return Err(Error::TrainingData(format!("{n} objects exceed {m} queries")));
    }
    if cost.iter().chain(no_object).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite matching cost".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), no_object.iter().sum()));
    }
    let full = (1usize << n) - 1;
    // dp[q][mask]: min cost using queries q.. to cover the objects in `mask`,
    // with queries q.. that stay unmatched paying their NO_OBJECT cost.
    // Computed backward so reconstruction can walk forward and apply the
    // lowest-query-index tie-break directly.
    let mut dp = vec![vec![f64::INFINITY; full + 1]; m + 1];
    dp[m][0] = 0.0;
    for q in (0..m).rev() {
        for mask in 0..=full {
            let mut best = dp[q + 1][mask] + no_object[q];
            for g in 0..n {
                if mask & (1 << g) != 0 {
                    let c = cost[[q, g]] + dp[q + 1][mask & !(1 << g)];
                    if c < best {
                        best = c;
                    }
                }
            }
            dp[q][mask] = best;
        }
    }
    let total = dp[0][full];
    // forward reconstruction: prefer matching (lowest object index) over
    // skipping whenever the totals tie
    let mut pairs = Vec::with_capacity(n);
    let mut mask = full;
    for q in 0..m {
        let skip = dp[q + 1][mask] + no_object[q];
        let mut chosen = None;
        let mut best = skip;
        for g in 0..n {
            if mask & (1 << g) != 0 {
                let c = cost[[q, g]] + dp[q + 1][mask & !(1 << g)];
                if c < best || (c == best && chosen.is_none() && c <= skip) {
                    best = c;
                    chosen = Some(g);
                }
            }
        }
        if let Some(g) = chosen {
            pairs.push((q, g));
            mask &= !(1 << g);
        }
    }
    debug_assert_eq!(mask, 0);
    Ok((pairs, total))
}

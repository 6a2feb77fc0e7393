/// `(#{pos > neg} + ½ #{pos = neg}) / (n_pos n_neg)` by visiting every pair.
pub fn auroc_brute_force(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice: u128 = 0;
    for &p in pos {
        for &n in neg {
            if p > n {
                twice += 2;
            } else if p == n {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
}

/// Average precision of a fixed ranking, walking it from the top.
///
/// `ranked` holds labels in rank order (true = positive).
pub fn ap_of_ranking(ranked: &[bool]) -> f64 {
    let n_pos = ranked.iter().filter(|&&y| y).count();
    let mut tp = 0u64;
    let mut total = 0.0;
    for (i, &y) in ranked.iter().enumerate() {
        if y {
            tp += 1;
            total += tp as f64 / (i + 1) as f64;
        }
    }
    total / n_pos as f64
}

fn labelled(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
    pos.iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect()
}

/// Rank-walk average precision; panics if any two scores tie.
pub fn ap_rank_walk(pos: &[f64], neg: &[f64]) -> f64 {
    let mut items = labelled(pos, neg);
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    assert!(
        items.windows(2).all(|w| w[0].0 != w[1].0),
        "rank walk needs distinct scores"
    );
    ap_of_ranking(&items.iter().map(|x| x.1).collect::<Vec<_>>())
}

/// Expected average precision under uniformly random tie-breaking, by
/// enumerating every permutation of the items as the tie-break key.
///
/// Cost is `n!`; keep instances to eight items or fewer.
pub fn ap_tie_expectation(pos: &[f64], neg: &[f64]) -> f64 {
    let items = labelled(pos, neg);
    let n = items.len();
    assert!(n <= 8, "permutation oracle is exponential");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0u64;
    heap_permutations(&mut perm, n, &mut |key| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| items[b].0.total_cmp(&items[a].0).then(key[a].cmp(&key[b])));
        total += ap_of_ranking(&order.iter().map(|&i| items[i].1).collect::<Vec<_>>());
        count += 1;
    });
    total / count as f64
}

fn heap_permutations(a: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k <= 1 {
        visit(a);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(a, k - 1, visit);
        if k.is_multiple_of(2) {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permutations(a, k - 1, visit);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_agree_on_hand_examples() {
        assert_eq!(auroc_brute_force(&[0.8, 0.4], &[0.6, 0.2]), 0.75);
        assert_eq!(ap_rank_walk(&[0.4], &[0.6]), 0.5);
        // one positive tied with one negative at the top: ranks 1 or 2 equally likely
        assert!((ap_tie_expectation(&[0.5], &[0.5]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn enumerates_every_permutation() {
        let mut seen = 0;
        heap_permutations(&mut [0, 1, 2, 3], 4, &mut |_| seen += 1);
        assert_eq!(seen, 24);
    }
}

//! Age-of-update state and client selection.
//!
//! Every client carries an age counter: the number of rounds since the
//! server last aggregated its local model. Ages reset to 1 on
//! selection and increment otherwise. Selection weight is the
//! normalized age; the selecting list ranks clients by weight times
//! local sample count, and ACS walks that list taking feasible clients
//! until the per-round budget is exhausted. RCS draws a uniform random
//! subset instead.

use rand::seq::SliceRandom;
use rand::Rng;

/// Per-client age counters; every entry is at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AouState {
    ages: Vec<u64>,
}

impl AouState {
    /// Fresh state with every age initialized to 1.
    pub fn new(n_clients: usize) -> AouState {
        assert!(n_clients >= 1, "need at least one client");
        AouState { ages: vec![1; n_clients] }
    }

    pub fn from_ages(ages: Vec<u64>) -> AouState {
        assert!(!ages.is_empty() && ages.iter().all(|&a| a >= 1), "ages must be >= 1");
        AouState { ages }
    }

    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    pub fn n_clients(&self) -> usize {
        self.ages.len()
    }
}

/// One round's selection decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Selection flags, one per client.
    pub selected: Vec<bool>,
    /// Full priority permutation of all clients (the selecting list).
    pub ranked_list: Vec<usize>,
    /// Ranking weights; sums to 1.
    pub weights: Vec<f64>,
}

impl SelectionOutcome {
    /// Indices of selected clients in ranked order.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.ranked_list.iter().copied().filter(|&n| self.selected[n]).collect()
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Age transition: selected clients reset to 1, everyone else ages by 1.
pub fn update_aou(state: &AouState, selected_last_round: &[usize]) -> AouState {
    let mut ages: Vec<u64> = state.ages.iter().map(|a| a + 1).collect();
    for &n in selected_last_round {
        ages[n] = 1;
    }
    AouState { ages }
}

/// Normalized selection weights `a_n = A_n / sum_i A_i`.
pub fn weights(state: &AouState) -> Vec<f64> {
    let total: u64 = state.ages.iter().sum();
    state.ages.iter().map(|&a| a as f64 / total as f64).collect()
}

/// Selecting list: clients sorted by `a_n * beta_n` descending.
/// Ties prefer the larger weight (equivalently the larger raw age),
/// then the lower index, so runs are reproducible.
pub fn rank_clients(weights: &[f64], sample_counts: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), sample_counts.len(), "weights/counts length mismatch");
    assert!(sample_counts.iter().all(|&b| b > 0), "sample counts must be positive");
    let score = |n: usize| weights[n] * sample_counts[n] as f64;
    let mut ranked: Vec<usize> = (0..weights.len()).collect();
    ranked.sort_by(|&a, &b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(weights[b].partial_cmp(&weights[a]).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.cmp(&b))
    });
    ranked
}

/// ACS: walk the ranked list, taking clients that pass the feasibility
/// check, until `k_max` are taken or the list is exhausted. An empty
/// selection is a valid outcome when nothing is feasible.
pub fn select_acs(
    ranked: &[usize],
    weights: &[f64],
    k_max: usize,
    mut feasible: impl FnMut(usize) -> bool,
) -> SelectionOutcome {
    assert!(k_max >= 1, "k_max must be at least 1");
    let mut selected = vec![false; ranked.len()];
    let mut taken = 0;
    for &n in ranked {
        if taken == k_max {
            break;
        }
        if feasible(n) {
            selected[n] = true;
            taken += 1;
        }
    }
    SelectionOutcome { selected, ranked_list: ranked.to_vec(), weights: weights.to_vec() }
}

/// RCS: a uniform random `k_max`-subset without replacement. The
/// ranked list is a uniform random permutation whose prefix is the
/// selection, so infeasibility fallbacks can walk it like ACS does.
pub fn select_rcs(n_clients: usize, k_max: usize, rng: &mut impl Rng) -> SelectionOutcome {
    assert!(k_max <= n_clients, "k_max cannot exceed the population");
    let mut ranked: Vec<usize> = (0..n_clients).collect();
    ranked.shuffle(rng);
    let mut selected = vec![false; n_clients];
    for &n in ranked.iter().take(k_max) {
        selected[n] = true;
    }
    SelectionOutcome {
        selected,
        ranked_list: ranked,
        weights: vec![1.0 / n_clients as f64; n_clients],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn aou_resets_selected_and_ages_the_rest() {
        let s = AouState::from_ages(vec![1, 1, 1, 1]);
        let s = update_aou(&s, &[0, 1]);
        assert_eq!(s.ages(), &[1, 1, 2, 2]);

        let s = AouState::from_ages(vec![5, 2]);
        assert_eq!(update_aou(&s, &[]).ages(), &[6, 3]);

        let s = AouState::from_ages(vec![7]);
        assert_eq!(update_aou(&s, &[0]).ages(), &[1]);
    }

    #[test]
    fn weights_normalize_ages() {
        let w = weights(&AouState::from_ages(vec![1, 1, 1, 1]));
        assert_eq!(w, vec![0.25; 4]);
        let w = weights(&AouState::from_ages(vec![3, 1]));
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(weights(&AouState::from_ages(vec![9])), vec![1.0]);
        let w = weights(&AouState::from_ages(vec![4, 9, 2, 2, 1]));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_sorts_by_weighted_sample_count() {
        // scores 0.75*100 = 75 vs 0.25*500 = 125
        assert_eq!(rank_clients(&[0.75, 0.25], &[100, 500]), vec![1, 0]);
        // equal weights and counts: index order
        assert_eq!(rank_clients(&[0.5, 0.5], &[10, 10]), vec![0, 1]);
        assert_eq!(rank_clients(&[0.5, 0.5], &[10, 20]), vec![1, 0]);
    }

    #[test]
    fn ranking_matches_brute_force_on_random_instances() {
        let mut rng = substream(11, Stream::Selection);
        for _ in 0..50 {
            let n = rng.gen_range(1..12);
            let ages: Vec<u64> = (0..n).map(|_| rng.gen_range(1..20)).collect();
            let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..50)).collect();
            let w = weights(&AouState::from_ages(ages.clone()));
            let ranked = rank_clients(&w, &counts);
            // brute force: stable max-extraction on the same key
            let mut rest: Vec<usize> = (0..n).collect();
            let mut expect = Vec::new();
            while !rest.is_empty() {
                let best = *rest
                    .iter()
                    .min_by(|&&a, &&b| {
                        let sa = w[a] * counts[a] as f64;
                        let sb = w[b] * counts[b] as f64;
                        sb.partial_cmp(&sa)
                            .unwrap()
                            .then(ages[b].cmp(&ages[a]))
                            .then(a.cmp(&b))
                    })
                    .unwrap();
                expect.push(best);
                rest.retain(|&x| x != best);
            }
            assert_eq!(ranked, expect, "ages {ages:?} counts {counts:?}");
        }
    }

    #[test]
    fn acs_takes_ranked_prefix_when_all_feasible() {
        let out = select_acs(&[2, 0, 1], &[0.2, 0.3, 0.5], 2, |_| true);
        assert_eq!(out.selected_indices(), vec![2, 0]);
        assert_eq!(out.n_selected(), 2);
    }

    #[test]
    fn acs_skips_infeasible_and_pulls_next_in_sequence() {
        let out = select_acs(&[2, 0, 1], &[0.2, 0.3, 0.5], 2, |n| n != 0);
        assert_eq!(out.selected_indices(), vec![2, 1]);
    }

    #[test]
    fn acs_caps_at_k_max_with_many_clients() {
        let ranked: Vec<usize> = (0..64).collect();
        let w = vec![1.0 / 64.0; 64];
        let out = select_acs(&ranked, &w, 8, |_| true);
        assert_eq!(out.n_selected(), 8);
    }

    #[test]
    fn acs_returns_empty_when_nothing_feasible() {
        let out = select_acs(&[0, 1, 2], &[0.4, 0.3, 0.3], 2, |_| false);
        assert_eq!(out.n_selected(), 0);
    }

    #[test]
    fn rcs_full_set_and_determinism() {
        let mut rng = substream(4, Stream::Selection);
        let out = select_rcs(4, 4, &mut rng);
        assert_eq!(out.n_selected(), 4);

        let a = select_rcs(64, 8, &mut substream(4, Stream::Selection));
        let b = select_rcs(64, 8, &mut substream(4, Stream::Selection));
        assert_eq!(a, b);
        assert_eq!(a.n_selected(), 8);
    }

    #[test]
    fn rcs_is_uniform_over_clients() {
        // n = 4, k = 1: each client should be hit ~1/4 of the time.
        let mut rng = substream(100, Stream::Selection);
        let mut hits = [0u32; 4];
        let reps = 100_000;
        for _ in 0..reps {
            let out = select_rcs(4, 1, &mut rng);
            hits[out.selected_indices()[0]] += 1;
        }
        for h in hits {
            let f = h as f64 / reps as f64;
            assert!((f - 0.25).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn round_robin_emerges_under_uniform_data() {
        // With equal sample counts and everything feasible, every client
        // is selected at least once within ceil(N / k_max) rounds.
        let n = 13;
        let k = 4;
        let counts = vec![10; n];
        let mut state = AouState::new(n);
        let mut seen = vec![false; n];
        let rounds_needed = n.div_ceil(k);
        for _ in 0..rounds_needed {
            let w = weights(&state);
            let ranked = rank_clients(&w, &counts);
            let out = select_acs(&ranked, &w, k, |_| true);
            let sel = out.selected_indices();
            for &c in &sel {
                seen[c] = true;
            }
            state = update_aou(&state, &sel);
        }
        assert!(seen.iter().all(|&s| s), "seen = {seen:?}");
        // max age after T rounds from all-ones start is bounded by T+1
        assert!(state.ages().iter().all(|&a| a <= rounds_needed as u64 + 1));
    }
}

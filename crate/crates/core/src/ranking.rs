//! Leave-one-out split and sampled-candidate construction for ranking
//! evaluation of link predictors.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::Result;
use crate::metrics::{RankedEval, UserCandidates};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    /// `(user, item)` pairs kept for training.
    pub train: Vec<(usize, usize)>,
    /// One held-out `(user, item)` per user with at least two distinct items.
    pub held_out: Vec<(usize, usize)>,
}

/// Holds out one interaction per eligible user, chosen uniformly from the
/// `Split` stream. Duplicate interactions are merged first.
pub fn leave_one_out(interactions: &[(usize, usize)], seed: u64) -> LeaveOneOut {
    let unique: BTreeSet<(usize, usize)> = interactions.iter().copied().collect();
    let mut rng = stream_rng(seed, Stream::Split);
    let mut train = Vec::with_capacity(unique.len());
    let mut held_out = Vec::new();
    let mut iter = unique.into_iter().peekable();
    while let Some(&(user, _)) = iter.peek() {
        let mut items = Vec::new();
        while let Some(&(u, i)) = iter.peek() {
            if u != user {
                break;
            }
            items.push(i);
            iter.next();
        }
        if items.len() >= 2 {
            let pick = rng.random_range(0..items.len());
            held_out.push((user, items[pick]));
            train.extend(items.iter().enumerate().filter(|&(j, _)| j != pick).map(|(_, &i)| (user, i)));
        } else {
            train.extend(items.iter().map(|&i| (user, i)));
        }
    }
    LeaveOneOut { train, held_out }
}

/// Candidate items per held-out pair: the positive at index 0 followed by up
/// to `num_negatives` distinct items the user never interacted with.
pub fn sample_candidates(
    held_out: &[(usize, usize)],
    all_interactions: &[(usize, usize)],
    num_items: usize,
    num_negatives: usize,
    seed: u64,
) -> Vec<(usize, Vec<usize>)> {
    let seen: BTreeSet<(usize, usize)> = all_interactions.iter().copied().collect();
    let mut rng = stream_rng(seed, Stream::Negatives);
    held_out
        .iter()
        .map(|&(user, pos)| {
            let pool: Vec<usize> = (0..num_items).filter(|&i| !seen.contains(&(user, i))).collect();
            let mut items = Vec::with_capacity(num_negatives + 1);
            items.push(pos);
            items.extend(pool.choose_multiple(&mut rng, num_negatives.min(pool.len())).copied());
            (user, items)
        })
        .collect()
}

/// Scores every candidate list with `score(user, item)`.
pub fn build_ranked_eval<F>(candidates: &[(usize, Vec<usize>)], k: usize, mut score: F) -> Result<RankedEval>
where
    F: FnMut(usize, &[usize]) -> Result<Vec<f64>>,
{
    let users = candidates
        .iter()
        .map(|(user, items)| {
            Ok(UserCandidates {
                scores: score(*user, items)?,
                items: items.clone(),
                positive: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedEval { users, k })
}

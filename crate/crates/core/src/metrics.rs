//! Classification, regression and single-positive ranking metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_lengths(pred: usize, truth: usize, min: usize, what: &'static str) -> Result<()> {
    if pred != truth {
        return Err(Error::DimensionMismatch {
            context: "prediction count",
            expected: truth,
            found: pred,
        });
    }
    if truth < min {
        return Err(Error::EmptyInput(what));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len(), 1, "accuracy")?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean absolute error and coefficient of determination.
pub fn mae_r2(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_lengths(pred.len(), truth.len(), 2, "mae_r2")?;
    let n = truth.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((mae, 1.0 - ss_res / ss_tot))
}

/// One user's candidate list; `positive` indexes the held-out item.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCandidates {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    pub positive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEval {
    pub users: Vec<UserCandidates>,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// 1-based rank of the positive after sorting by score descending, ties
/// broken by item id ascending.
pub fn positive_rank(user: &UserCandidates, user_index: usize) -> Result<usize> {
    if user.items.len() != user.scores.len() {
        return Err(Error::DimensionMismatch {
            context: "candidate scores",
            expected: user.items.len(),
            found: user.scores.len(),
        });
    }
    let pos_item = *user
        .items
        .get(user.positive)
        .ok_or(Error::PositiveMissing(user_index))?;
    if user.items.iter().filter(|&&i| i == pos_item).count() != 1 {
        return Err(Error::PositiveMissing(user_index));
    }
    if user.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(user_index));
    }
    let pos_score = user.scores[user.positive];
    let ahead = user
        .items
        .iter()
        .zip(&user.scores)
        .filter(|&(&item, &s)| s > pos_score || (s == pos_score && item < pos_item))
        .count();
    Ok(ahead + 1)
}

/// HR@k, MRR@k and NDCG@k averaged over users.
pub fn rank_metrics(eval: &RankedEval) -> Result<RankMetrics> {
    if eval.users.is_empty() {
        return Err(Error::EmptyInput("rank_metrics"));
    }
    let (mut hr, mut mrr, mut ndcg) = (0.0, 0.0, 0.0);
    for (u, user) in eval.users.iter().enumerate() {
        let r = positive_rank(user, u)?;
        if r <= eval.k {
            hr += 1.0;
            mrr += 1.0 / r as f64;
            ndcg += 1.0 / libm::log2((r + 1) as f64);
        }
    }
    let n = eval.users.len() as f64;
    Ok(RankMetrics {
        hr: hr / n,
        mrr: mrr / n,
        ndcg: ndcg / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 0], &[0, 1, 1]).unwrap(), 2.0 / 3.0);
        assert_eq!(accuracy(&[2, 1], &[2, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&[1], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn regression_cases() {
        assert_eq!(mae_r2(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), (0.0, 1.0));
        let (_, r2) = mae_r2(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r2, 0.0);
        assert_eq!(mae_r2(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), (1.0, 0.0));
        assert_eq!(mae_r2(&[1.0, 1.0], &[3.0, 3.0]), Err(Error::ConstantTruth));
    }

    fn user_with_rank(rank: usize) -> UserCandidates {
        // Positive is item 0 with score 0; `rank - 1` items score higher.
        let n = rank.max(2) + 1;
        let items: Vec<usize> = (0..n).collect();
        let scores = items
            .iter()
            .map(|&i| if i == 0 { 0.0 } else if i < rank { 1.0 } else { -1.0 })
            .collect();
        UserCandidates {
            items,
            scores,
            positive: 0,
        }
    }

    #[test]
    fn rank_hand_cases() {
        let eval = |r| rank_metrics(&RankedEval { users: vec![user_with_rank(r)], k: 10 }).unwrap();
        assert_eq!(eval(1), RankMetrics { hr: 1.0, mrr: 1.0, ndcg: 1.0 });
        let m3 = eval(3);
        assert_eq!((m3.hr, m3.mrr, m3.ndcg), (1.0, 1.0 / 3.0, 0.5));
        assert_eq!(eval(11), RankMetrics { hr: 0.0, mrr: 0.0, ndcg: 0.0 });
    }

    #[test]
    fn ties_break_by_item_id() {
        let user = UserCandidates {
            items: vec![5, 3, 9],
            scores: vec![1.0, 1.0, 1.0],
            positive: 0,
        };
        assert_eq!(positive_rank(&user, 0).unwrap(), 2);
    }

    #[test]
    fn missing_positive_is_an_error() {
        let user = UserCandidates {
            items: vec![1, 2],
            scores: vec![0.0, 1.0],
            positive: 4,
        };
        let eval = RankedEval { users: vec![user], k: 10 };
        assert_eq!(rank_metrics(&eval), Err(Error::PositiveMissing(0)));
    }
}

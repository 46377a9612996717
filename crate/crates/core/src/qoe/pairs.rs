use rand::Rng;
use serde::Serialize;

use super::{QoeError, RelLabel};
use crate::data::RatingDataset;

/// Relative score gap under which a model is said to agree with a tie.
pub const TIE_TOLERANCE: f64 = 0.05;

/// Two sessions of one query, ordered by one user's scores.
///
/// Sessions and users are indices into the dataset the sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairSample {
    pub query: usize,
    pub user: usize,
    pub session_i: usize,
    pub session_j: usize,
    pub label: RelLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub d_ri: f64,
    pub d_rj: f64,
}

/// Logistic loss on the score difference for ordered pairs and squared
/// difference for ties.
pub fn pair_loss(r_i: f64, r_j: f64, label: RelLabel) -> PairLoss {
    let diff = r_i - r_j;
    match label {
        RelLabel::Tie => PairLoss {
            loss: diff * diff,
            d_ri: 2.0 * diff,
            d_rj: -2.0 * diff,
        },
        _ => {
            let a = label.value();
            let x = a * diff;
            // -log σ(x) = softplus(-x), evaluated without overflow.
            let loss = if x > 0.0 {
                (-x).exp().ln_1p()
            } else {
                -x + x.exp().ln_1p()
            };
            let sig_neg = if x >= 0.0 {
                let e = (-x).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + x.exp())
            };
            let d_ri = -a * sig_neg;
            PairLoss {
                loss,
                d_ri,
                d_rj: -d_ri,
            }
        }
    }
}

/// Draws `k` pairs: a query uniformly among those with a rater, a rater of
/// that query uniformly, then an ordered pair of distinct sessions the rater
/// scored, uniformly.
pub fn sample_batch(
    d: &RatingDataset,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PairSample>, QoeError> {
    let eligible: Vec<usize> = (0..d.queries().len())
        .filter(|&q| !d.raters(q).is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(QoeError::InsufficientSessions);
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let q = eligible[rng.random_range(0..eligible.len())];
        let raters = d.raters(q);
        let rater = &raters[rng.random_range(0..raters.len())];
        let m = rater.scores.len();
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let (si, yi) = rater.scores[i];
        let (sj, yj) = rater.scores[j];
        out.push(PairSample {
            query: q,
            user: rater.user,
            session_i: si,
            session_j: sj,
            label: RelLabel::from_scores(yi, yj),
        });
    }
    Ok(out)
}

/// Every unordered same-user, same-query pair (lower session index first).
pub fn enumerate_pairs(d: &RatingDataset) -> Vec<PairSample> {
    let mut out = Vec::new();
    for q in 0..d.queries().len() {
        for rater in d.raters(q) {
            for (a, &(si, yi)) in rater.scores.iter().enumerate() {
                for &(sj, yj) in &rater.scores[a + 1..] {
                    out.push(PairSample {
                        query: q,
                        user: rater.user,
                        session_i: si,
                        session_j: sj,
                        label: RelLabel::from_scores(yi, yj),
                    });
                }
            }
        }
    }
    out
}

/// Percentage of pairs whose model ordering agrees with the user's.
pub fn identity_rate(
    pairs: &[PairSample],
    mut score: impl FnMut(usize) -> f64,
) -> Result<f64, QoeError> {
    if pairs.is_empty() {
        return Err(QoeError::EmptyTestSet);
    }
    let hits = pairs
        .iter()
        .filter(|p| {
            let ri = score(p.session_i);
            let rj = score(p.session_j);
            match p.label {
                RelLabel::Tie => {
                    (ri - rj).abs() / ri.abs().max(rj.abs()).max(1e-6) < TIE_TOLERANCE
                }
                l => l.value() * (ri - rj) > 0.0,
            }
        })
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

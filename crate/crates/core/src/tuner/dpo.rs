use crate::error::{dim_check, Error, Result};
use crate::l2d::scenario_weights_softmax;
use crate::l2d::ContextFeatures;
use crate::linalg::Mat;

/// A comparison resolved to scenario indices and features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub feats: ContextFeatures,
    pub winner: usize,
    pub loser: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoOutcome {
    pub scorer: Mat,
    pub loss_before: f64,
    pub loss_after: f64,
}

fn log_softmax_gap(scorer: &Mat, pair: &PreferencePair) -> Result<f64> {
    let p = scenario_weights_softmax(scorer, &pair.feats)?;
    Ok(p[pair.winner].ln() - p[pair.loser].ln())
}

/// `z = β[(log π(w) − log π_ref(w)) − (log π(l) − log π_ref(l))]`.
fn margin(scorer: &Mat, reference: &Mat, pair: &PreferencePair, beta: f64) -> Result<f64> {
    Ok(beta * (log_softmax_gap(scorer, pair)? - log_softmax_gap(reference, pair)?))
}

/// `−log σ(z) = ln(1 + e^{−z})`, evaluated without overflow.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn check(scorer: &Mat, reference: &Mat, batch: &[PreferencePair]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("DPO batch is empty".into()));
    }
    dim_check("reference scorer rows", scorer.nrows(), reference.nrows())?;
    dim_check("reference scorer columns", scorer.ncols(), reference.ncols())?;
    for pair in batch {
        if pair.winner >= scorer.nrows() || pair.loser >= scorer.nrows() || pair.winner == pair.loser {
            return Err(Error::InvalidParameter(format!(
                "bad preference pair ({}, {})",
                pair.winner, pair.loser
            )));
        }
    }
    Ok(())
}

/// Mean pairwise DPO loss over the batch.
pub fn dpo_loss(scorer: &Mat, reference: &Mat, batch: &[PreferencePair], beta: f64) -> Result<f64> {
    check(scorer, reference, batch)?;
    let mut total = 0.0;
    for pair in batch {
        total += neg_log_sigmoid(margin(scorer, reference, pair, beta)?);
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`dpo_loss`] with respect to the scorer:
/// `−σ(−z) β (e_w − e_l) φᵀ` per pair, averaged.
pub fn dpo_gradient(scorer: &Mat, reference: &Mat, batch: &[PreferencePair], beta: f64) -> Result<Mat> {
    check(scorer, reference, batch)?;
    let mut grad = Mat::zeros(scorer.nrows(), scorer.ncols());
    for pair in batch {
        let z = margin(scorer, reference, pair, beta)?;
        let coeff = -beta / (1.0 + z.exp());
        for i in 0..scorer.ncols() {
            grad[(pair.winner, i)] += coeff * pair.feats.phi[i];
            grad[(pair.loser, i)] -= coeff * pair.feats.phi[i];
        }
    }
    Ok(grad / batch.len() as f64)
}

/// One full-batch gradient step on the DPO loss.
pub fn dpo_update(
    scorer: &Mat,
    reference: &Mat,
    batch: &[PreferencePair],
    beta: f64,
    step: f64,
) -> Result<DpoOutcome> {
    if !(beta > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("DPO needs beta, step > 0 (got {beta}, {step})")));
    }
    let loss_before = dpo_loss(scorer, reference, batch, beta)?;
    let grad = dpo_gradient(scorer, reference, batch, beta)?;
    let next = scorer - grad * step;
    let loss_after = dpo_loss(&next, reference, batch, beta)?;
    Ok(DpoOutcome { scorer: next, loss_before, loss_after })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::l2d::{featurize, Vocabulary};

    fn pairs() -> Vec<PreferencePair> {
        let vocab = Vocabulary::new(["wind", "calm"]);
        vec![
            PreferencePair { feats: featurize("wind", &vocab), winner: 1, loser: 0 },
            PreferencePair { feats: featurize("calm", &vocab), winner: 0, loser: 1 },
            PreferencePair { feats: featurize("wind", &vocab), winner: 1, loser: 0 },
        ]
    }

    #[test]
    fn reference_point_is_log_two() {
        let s = Mat::from_row_slice(2, 3, &[0.3, -0.2, 0.1, 0.0, 0.5, -0.4]);
        let loss = dpo_loss(&s, &s, &pairs(), 0.1).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_fails() {
        let s = Mat::zeros(2, 3);
        assert!(dpo_update(&s, &s, &[], 0.1, 1e-2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let reference = Mat::from_row_slice(2, 3, &[0.3, -0.2, 0.1, 0.0, 0.5, -0.4]);
        let s = Mat::from_row_slice(2, 3, &[1.0, 0.2, -0.3, -0.5, 0.7, 0.2]);
        let batch = pairs();
        let grad = dpo_gradient(&s, &reference, &batch, 0.7).unwrap();
        let h = 1e-6;
        for idx in 0..s.len() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (dpo_loss(&plus, &reference, &batch, 0.7).unwrap()
                - dpo_loss(&minus, &reference, &batch, 0.7).unwrap())
                / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-8, "{idx}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn step_descends_and_favors_winner() {
        let vocab = Vocabulary::new(["wind"]);
        let feats = featurize("wind", &vocab);
        let batch = vec![PreferencePair { feats: feats.clone(), winner: 1, loser: 0 }];
        let reference = Mat::zeros(2, 2);
        let out = dpo_update(&reference, &reference, &batch, 0.1, 1e-2).unwrap();
        assert!(out.loss_after < out.loss_before);
        let before = scenario_weights_softmax(&reference, &feats).unwrap();
        let after = scenario_weights_softmax(&out.scorer, &feats).unwrap();
        assert!(after[1] >= before[1]);
    }
}

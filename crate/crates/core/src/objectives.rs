//! Training objectives: supervised cosine cross-entropy, the minimax
//! Shannon-entropy term on unlabeled data, and the labeledness BCE.
//!
//! All logs are natural logs guarded at [`LOG_EPS`]. Entropy is never
//! normalized by `ln K`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Bound, Discriminator, Encoder, PrototypeClassifier, NORM_EPS};
use crate::tensor::{NodeId, Tape, LOG_EPS};

/// A scalar loss on a tape together with the number of rows behind it.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub node: NodeId,
    pub n_samples: usize,
}

impl LossValue {
    pub fn value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.node)
    }
}

/// Mean of `-ln p[i, label_i]`.
pub fn cross_entropy(tape: &mut Tape, probs: NodeId, labels: &[usize]) -> Result<LossValue> {
    let (n, k) = tape.value(probs).dim();
    if n == 0 {
        return Err(Error::Contract("cross_entropy on an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let picked = tape.pick(probs, labels)?;
    let logp = tape.log(picked, LOG_EPS);
    let mean = tape.mean(logp);
    Ok(LossValue {
        node: tape.scale(mean, -1.0),
        n_samples: n,
    })
}

/// Mean over rows of `-Σ_k p_k ln p_k`.
pub fn shannon_entropy(tape: &mut Tape, probs: NodeId) -> Result<LossValue> {
    let n = tape.value(probs).nrows();
    if n == 0 {
        return Err(Error::Contract("entropy of an empty batch".into()));
    }
    let logp = tape.log(probs, LOG_EPS);
    let plogp = tape.mul(probs, logp)?;
    let per_row = tape.sum_rows(plogp);
    let mean = tape.mean(per_row);
    Ok(LossValue {
        node: tape.scale(mean, -1.0),
        n_samples: n,
    })
}

/// Per-row entropy of a probability table, without a tape.
pub fn row_entropies(probs: &Array2<f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|r| -r.iter().map(|&p| p * p.max(LOG_EPS).ln()).sum::<f64>())
        .collect()
}

/// Which side of the entropy game the encoder plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// Encoder minimizes entropy, classifier maximizes it.
    #[default]
    Minimax,
    /// Reversed roles: encoder ascends, classifier descends.
    Alg1,
}

/// Result of [`minimax_entropy_term`].
#[derive(Debug, Clone, Copy)]
pub struct MinimaxTerm {
    /// Scalar that both the encoder and classifier optimizers DESCEND.
    pub objective: LossValue,
    /// Mean unlabeled entropy at the current parameters.
    pub entropy: f64,
}

/// Builds the adversarial entropy objective on an unlabeled batch.
///
/// A gradient reversal node of strength `lambda` sits between the normalized
/// features and the classifier. With [`EntropySign::Minimax`] the returned
/// objective is `-weight * H`: descending it raises `H` in the classifier,
/// while the reversal turns the encoder's step into a descent on `H`.
/// [`EntropySign::Alg1`] returns `+weight * H`, swapping both roles.
#[allow(clippy::too_many_arguments)]
pub fn minimax_entropy_term(
    tape: &mut Tape,
    encoder: &Encoder,
    encoder_params: &Bound,
    classifier: &PrototypeClassifier,
    classifier_params: &Bound,
    x_unlabeled: &Array2<f64>,
    lambda: f64,
    weight: f64,
    sign: EntropySign,
) -> Result<MinimaxTerm> {
    if x_unlabeled.nrows() == 0 {
        return Err(Error::Contract("minimax entropy on an empty batch".into()));
    }
    if lambda < 0.0 {
        return Err(Error::Contract(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let x = tape.constant(x_unlabeled.clone());
    let feats = encoder.encode(tape, encoder_params, x)?;
    let z = tape.l2_normalize_rows(feats, NORM_EPS);
    let z = tape.grad_reverse(z, lambda);
    let logits = classifier.classify_normalized(tape, classifier_params, z)?;
    let probs = tape.softmax_rows(logits);
    let h = shannon_entropy(tape, probs)?;
    let entropy = h.value(tape);
    let factor = match sign {
        EntropySign::Minimax => -weight,
        EntropySign::Alg1 => weight,
    };
    Ok(MinimaxTerm {
        objective: LossValue {
            node: tape.scale(h.node, factor),
            n_samples: h.n_samples,
        },
        entropy,
    })
}

/// `-mean ln D(z_L) - mean ln(1 - D(z_U))` on detached normalized features.
///
/// Feature matrices are plain arrays, so no gradient can reach the encoder.
pub fn discriminator_bce(
    tape: &mut Tape,
    disc: &Discriminator,
    disc_params: &Bound,
    feats_labeled: &Array2<f64>,
    feats_unlabeled: &Array2<f64>,
) -> Result<LossValue> {
    if feats_labeled.nrows() == 0 || feats_unlabeled.nrows() == 0 {
        return Err(Error::Contract(
            "discriminator BCE needs both a labeled and an unlabeled batch".into(),
        ));
    }
    let zl = tape.constant(feats_labeled.clone());
    let zu = tape.constant(feats_unlabeled.clone());
    let pl = disc.discriminate(tape, disc_params, zl)?;
    let pu = disc.discriminate(tape, disc_params, zu)?;
    let total = bce_from_probs(tape, pl, pu)?;
    Ok(LossValue {
        node: total,
        n_samples: feats_labeled.nrows() + feats_unlabeled.nrows(),
    })
}

/// BCE on labeledness probabilities already on the tape.
pub fn bce_from_probs(tape: &mut Tape, p_labeled: NodeId, p_unlabeled: NodeId) -> Result<NodeId> {
    let log_l = tape.log(p_labeled, LOG_EPS);
    let mean_l = tape.mean(log_l);
    let neg_u = tape.scale(p_unlabeled, -1.0);
    let one_minus = tape.add_scalar(neg_u, 1.0);
    let log_u = tape.log(one_minus, LOG_EPS);
    let mean_u = tape.mean(log_u);
    let both = tape.add(mean_l, mean_u)?;
    Ok(tape.scale(both, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ce(p: Array2<f64>, y: &[usize]) -> Result<f64> {
        let mut t = Tape::new();
        let p = t.constant(p);
        Ok(cross_entropy(&mut t, p, y)?.value(&t))
    }

    fn ent(p: Array2<f64>) -> f64 {
        let mut t = Tape::new();
        let p = t.constant(p);
        shannon_entropy(&mut t, p).unwrap().value(&t)
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(ce(array![[0.0, 1.0]], &[1]).unwrap(), 0.0);
        let uniform = Array2::from_elem((1, 100), 0.01);
        assert!((ce(uniform, &[37]).unwrap() - 100f64.ln()).abs() < 1e-12);
        // hand evaluation: (-ln 0.7 - ln 0.2) / 2
        let expected = (-(0.7f64).ln() - (0.2f64).ln()) / 2.0;
        let got = ce(array![[0.7, 0.3], [0.8, 0.2]], &[0, 1]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!(ce(array![[0.5, 0.5]], &[2]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((ent(Array2::from_elem((1, 4), 0.25)) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(ent(array![[0.0, 1.0, 0.0]]), 0.0);
        assert!((ent(array![[0.5, 0.25, 0.25]]) - 1.039_720_770_839_918).abs() < 1e-12);
        let rows = row_entropies(&array![[0.5, 0.25, 0.25], [1.0, 0.0, 0.0]]);
        assert!((rows[0] - 1.039_720_770_839_918).abs() < 1e-12);
        assert_eq!(rows[1], 0.0);
    }

    fn bce(pl: Array2<f64>, pu: Array2<f64>) -> f64 {
        let mut t = Tape::new();
        let a = t.constant(pl);
        let b = t.constant(pu);
        let l = bce_from_probs(&mut t, a, b).unwrap();
        t.scalar(l)
    }

    #[test]
    fn bce_examples() {
        let half = Array2::from_elem((3, 1), 0.5);
        assert!((bce(half.clone(), half) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let near = bce(array![[1.0 - 1e-13]], array![[1e-13]]);
        assert!(near < 1e-12);
        assert!((bce(array![[0.8]], array![[0.3]]) - 0.579_818_495_252_942).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_empty_side() {
        let d = Discriminator::init(0, 3, &[4, 2]).unwrap();
        let mut t = Tape::new();
        let p = Bound::bind(&mut t, &d, true);
        let r = discriminator_bce(
            &mut t,
            &d,
            &p,
            &Array2::zeros((0, 3)),
            &Array2::ones((2, 3)),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}

//! Confusion matrices, per-class precision/recall/F1 and macro-F1.
//!
//! Macro-F1 is evaluated in exact rational arithmetic and rounded once, so the
//! value recomputed from a stored confusion matrix is bit-identical to the
//! reported one regardless of summation order.

use serde::{Deserialize, Serialize};

use crate::corpus::{Scheme, StanceLabel};
use crate::error::{Error, Result};

/// `counts[gold][predicted]`, indexed by position in the scheme.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub scheme: Scheme,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(scheme: Scheme) -> Self {
        let k = scheme.num_classes();
        ConfusionMatrix {
            scheme,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_predictions(predictions: &[StanceLabel], gold: &[StanceLabel]) -> Result<Self> {
        if predictions.len() != gold.len() {
            return Err(Error::DimMismatch {
                expected: gold.len(),
                got: predictions.len(),
            });
        }
        let scheme = match gold.first() {
            Some(l) => l.scheme(),
            None => return Err(Error::invalid("no predictions to score")),
        };
        let mut m = ConfusionMatrix::new(scheme);
        for (&p, &g) in predictions.iter().zip(gold) {
            for l in [p, g] {
                if l.scheme() != scheme {
                    return Err(Error::SchemeMismatch {
                        expected: scheme.to_string(),
                        found: l.scheme().to_string(),
                    });
                }
            }
            m.counts[g.index()][p.index()] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, label: StanceLabel) -> u64 {
        let c = label.index();
        self.counts[c][c]
    }

    pub fn false_positives(&self, label: StanceLabel) -> u64 {
        let c = label.index();
        (0..self.counts.len()).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    pub fn false_negatives(&self, label: StanceLabel) -> u64 {
        let c = label.index();
        (0..self.counts.len()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn class_scores(&self, label: StanceLabel) -> ClassScores {
        let tp = self.true_positives(label);
        let fp = self.false_positives(label);
        let fne = self.false_negatives(label);
        ClassScores {
            label,
            tp,
            fp,
            fn_: fne,
            precision: ratio_or_zero(tp, tp + fp),
            recall: ratio_or_zero(tp, tp + fne),
            f1: ratio_or_zero(2 * tp, 2 * tp + fp + fne),
        }
    }

    /// Unweighted mean of per-class F1 over `classes`.
    pub fn macro_f1(&self, classes: &[StanceLabel]) -> Result<f64> {
        if classes.is_empty() {
            return Err(Error::invalid("classes_of_interest is empty"));
        }
        for l in classes {
            if l.scheme() != self.scheme {
                return Err(Error::SchemeMismatch {
                    expected: self.scheme.to_string(),
                    found: l.scheme().to_string(),
                });
            }
        }
        let fractions: Vec<(u128, u128)> = classes
            .iter()
            .map(|&l| {
                let tp = self.true_positives(l) as u128;
                let den = 2 * tp + self.false_positives(l) as u128 + self.false_negatives(l) as u128;
                if den == 0 {
                    (0, 1)
                } else {
                    (2 * tp, den)
                }
            })
            .collect();
        Ok(mean_of_fractions(&fractions))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: StanceLabel,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_zero(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        exact_ratio(num as u128, den as u128)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `(Σ n_i / d_i) / k`, exact when the intermediate fraction fits in 126 bits,
/// otherwise summed in f64.
fn mean_of_fractions(fractions: &[(u128, u128)]) -> f64 {
    const LIMIT: u128 = 1 << 126;
    let mut acc: Option<(u128, u128)> = Some((0, 1));
    for &(n, d) in fractions {
        acc = acc.and_then(|(an, ad)| {
            let g = gcd(ad, d);
            let l = (ad / g).checked_mul(d)?;
            let num = an.checked_mul(l / ad)?.checked_add(n.checked_mul(l / d)?)?;
            let r = gcd(num, l).max(1);
            Some((num / r, l / r))
        });
    }
    let k = fractions.len() as u128;
    match acc.and_then(|(n, d)| Some((n, d.checked_mul(k)?))) {
        Some((n, d)) if d < LIMIT => exact_ratio(n, d),
        _ => fractions.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / k as f64,
    }
}

/// `num / den` rounded once to the nearest f64 (ties to even).
pub(crate) fn exact_ratio(num: u128, den: u128) -> f64 {
    assert!(den != 0 && den < (1 << 126), "denominator out of range");
    if num == 0 {
        return 0.0;
    }
    let mut q = num / den;
    let mut r = num % den;
    let mut exp: i32 = 0;
    let mut sticky = false;
    // Bring q to exactly 54 significant bits: 53 for the mantissa plus one
    // rounding bit. Bits shifted out (or the remainder) form the sticky bit.
    while q >= (1u128 << 54) {
        sticky |= q & 1 == 1;
        q >>= 1;
        exp += 1;
    }
    if exp > 0 {
        sticky |= r != 0;
        r = 0;
    }
    while q < (1u128 << 53) {
        r <<= 1;
        q <<= 1;
        if r >= den {
            r -= den;
            q |= 1;
        }
        exp -= 1;
    }
    sticky |= r != 0;
    let round_bit = q & 1 == 1;
    let mut mantissa = q >> 1;
    exp += 1;
    if round_bit && (sticky || mantissa & 1 == 1) {
        mantissa += 1;
    }
    mantissa as f64 * 2f64.powi(exp)
}

/// Scores of one evaluation: confusion matrix, per-class scores over the whole
/// scheme, and macro-F1 over the classes of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassScores>,
    pub classes_of_interest: Vec<StanceLabel>,
    pub macro_f1: f64,
}

pub fn evaluate(predictions: &[StanceLabel], gold: &[StanceLabel], classes_of_interest: &[StanceLabel]) -> Result<Evaluation> {
    let confusion = ConfusionMatrix::from_predictions(predictions, gold)?;
    let macro_f1 = confusion.macro_f1(classes_of_interest)?;
    let per_class = confusion
        .scheme
        .labels()
        .iter()
        .map(|&l| confusion.class_scores(l))
        .collect();
    Ok(Evaluation {
        confusion,
        per_class,
        classes_of_interest: classes_of_interest.to_vec(),
        macro_f1,
    })
}

/// Macro-F1 of `predictions` against `gold` over `classes_of_interest`.
/// Predictions of excluded classes still count as misses for the included
/// ones.
pub fn macro_f1(predictions: &[StanceLabel], gold: &[StanceLabel], classes_of_interest: &[StanceLabel]) -> Result<f64> {
    if classes_of_interest.is_empty() {
        return Err(Error::invalid("classes_of_interest is empty"));
    }
    ConfusionMatrix::from_predictions(predictions, gold)?.macro_f1(classes_of_interest)
}

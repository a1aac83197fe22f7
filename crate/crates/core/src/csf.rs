//! Confidence score functions `g(p)`.

use std::fmt;
use std::str::FromStr;

use crate::batch::{argmax, clamp_prob};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CsfKind {
    /// Maximum softmax probability.
    Msp,
    /// Top probability minus runner-up.
    SoftmaxMargin,
    /// `Σ p_i ln p_i` over the probability vector.
    NegativeEntropy,
    /// `−ℓ` for a supplied per-sample loss; orders samples exactly by loss.
    NegLossOracle,
}

impl CsfKind {
    pub fn name(&self) -> &'static str {
        match self {
            CsfKind::Msp => "msp",
            CsfKind::SoftmaxMargin => "margin",
            CsfKind::NegativeEntropy => "negentropy",
            CsfKind::NegLossOracle => "negloss",
        }
    }
}

impl fmt::Display for CsfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CsfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(CsfKind::Msp),
            "margin" => Ok(CsfKind::SoftmaxMargin),
            "negentropy" => Ok(CsfKind::NegativeEntropy),
            "negloss" => Ok(CsfKind::NegLossOracle),
            other => Err(Error::InvalidArgument(format!(
                "unknown CSF '{other}' (expected msp, margin, negentropy or negloss)"
            ))),
        }
    }
}

/// Top index (argmax tie rule) and runner-up index.
fn top_two(p: &[f64]) -> (usize, usize) {
    let top = argmax(p);
    let mut second = if top == 0 { 1 } else { 0 };
    for (i, &v) in p.iter().enumerate() {
        if i != top && v > p[second] {
            second = i;
        }
    }
    (top, second)
}

pub fn csf_score(kind: CsfKind, p: &[f64], loss: Option<f64>) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::Shape(format!("CSF needs at least 2 classes, got {}", p.len())));
    }
    Ok(match kind {
        CsfKind::Msp => p[argmax(p)],
        CsfKind::SoftmaxMargin => {
            let (top, second) = top_two(p);
            p[top] - p[second]
        }
        CsfKind::NegativeEntropy => p.iter().map(|&v| v * clamp_prob(v).ln()).sum(),
        CsfKind::NegLossOracle => match loss {
            Some(l) => -l,
            None => {
                return Err(Error::InvalidArgument(
                    "negloss CSF needs the per-sample loss".into(),
                ))
            }
        },
    })
}

/// `∂g/∂p`. MSP and margin return their (sub)gradients at the argmax tie rule.
pub fn csf_gradient(kind: CsfKind, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(Error::Shape(format!("CSF needs at least 2 classes, got {}", p.len())));
    }
    let mut grad = vec![0.0; p.len()];
    match kind {
        CsfKind::Msp => grad[argmax(p)] = 1.0,
        CsfKind::SoftmaxMargin => {
            let (top, second) = top_two(p);
            grad[top] = 1.0;
            grad[second] = -1.0;
        }
        CsfKind::NegativeEntropy => {
            for (g, &v) in grad.iter_mut().zip(p) {
                *g = clamp_prob(v).ln() + 1.0;
            }
        }
        CsfKind::NegLossOracle => {
            return Err(Error::InvalidArgument(
                "negloss CSF has no gradient independent of the loss".into(),
            ))
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        let p = [0.7, 0.2, 0.1];
        assert_abs_diff_eq!(csf_score(CsfKind::Msp, &p, None).unwrap(), 0.7);
        assert_abs_diff_eq!(csf_score(CsfKind::SoftmaxMargin, &p, None).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            csf_score(CsfKind::NegativeEntropy, &[0.5, 0.5], None).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(csf_score(CsfKind::NegLossOracle, &p, Some(0.3)).unwrap(), -0.3);
        assert!(csf_score(CsfKind::NegLossOracle, &p, None).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(csf_gradient(CsfKind::Msp, &[0.7, 0.3]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(csf_gradient(CsfKind::Msp, &[0.5, 0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            csf_gradient(CsfKind::SoftmaxMargin, &[0.7, 0.2, 0.1]).unwrap(),
            vec![1.0, -1.0, 0.0]
        );
        assert_eq!(
            csf_gradient(CsfKind::SoftmaxMargin, &[0.1, 0.2, 0.7]).unwrap(),
            vec![0.0, -1.0, 1.0]
        );
    }

    #[test]
    fn names_round_trip() {
        for kind in [
            CsfKind::Msp,
            CsfKind::SoftmaxMargin,
            CsfKind::NegativeEntropy,
            CsfKind::NegLossOracle,
        ] {
            assert_eq!(kind.name().parse::<CsfKind>().unwrap(), kind);
        }
        assert!("entropy".parse::<CsfKind>().is_err());
    }

    fn interior_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, 2..7).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn negentropy_gradient_matches_central_differences(p in interior_point()) {
            let h = 1e-6;
            let grad = csf_gradient(CsfKind::NegativeEntropy, &p).unwrap();
            for j in 0..p.len() {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (csf_score(CsfKind::NegativeEntropy, &plus, None).unwrap()
                    - csf_score(CsfKind::NegativeEntropy, &minus, None).unwrap())
                    / (2.0 * h);
                let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-6);
                prop_assert!(rel <= 1e-6, "rel err {rel} at {j}");
            }
        }

        #[test]
        fn top_scores_ignore_non_top_permutations(p in interior_point(), seed in 0u64..1000) {
            let top = argmax(&p);
            let (_, second) = top_two(&p);
            let mut rest: Vec<usize> = (0..p.len()).filter(|&i| i != top).collect();
            // deterministic rotation of the non-top coordinates
            let shift = (seed as usize) % rest.len();
            rest.rotate_left(shift);
            let mut q = p.clone();
            let others: Vec<f64> = (0..p.len()).filter(|&i| i != top).map(|i| p[i]).collect();
            for (slot, v) in rest.iter().zip(others) {
                q[*slot] = v;
            }
            prop_assume!(argmax(&q) == top);
            prop_assert_eq!(csf_score(CsfKind::Msp, &p, None).unwrap(), csf_score(CsfKind::Msp, &q, None).unwrap());
            let runner = p[second];
            let (_, second_q) = top_two(&q);
            prop_assert_eq!(q[second_q], runner);
            prop_assert_eq!(
                csf_score(CsfKind::SoftmaxMargin, &p, None).unwrap(),
                csf_score(CsfKind::SoftmaxMargin, &q, None).unwrap()
            );
        }
    }
}

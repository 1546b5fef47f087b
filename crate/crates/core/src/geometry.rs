//! Vector math shared by the rest of the crate: projection onto a rationale
//! axis, the Bradley–Terry preference probability and a stable softmax.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Returns `a` scaled to unit Euclidean norm.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !n.is_finite() {
        return Err(Error::NonFinite("vector"));
    }
    if n == 0.0 {
        return Err(Error::DegenerateAxis);
    }
    Ok(a.iter().map(|x| x / n).collect())
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Split of a vector into the part along an axis and the orthogonal residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub parallel: Vec<f64>,
    pub perpendicular: Vec<f64>,
}

/// Orthogonal projection of `phi` onto the line spanned by `psi`.
///
/// `parallel = (phiᵀpsi / ‖psi‖²) psi` and `perpendicular = phi - parallel`.
/// The result does not depend on the scale of `psi`.
pub fn project_decompose(phi: &[f64], psi: &[f64]) -> Result<Decomposition> {
    check_dim(phi.len(), psi.len())?;
    check_finite(phi, "trajectory embedding")?;
    check_finite(psi, "rationale embedding")?;
    let coef = projection_coefficient(phi, psi)?;
    let parallel: Vec<f64> = psi.iter().map(|p| coef * p).collect();
    let perpendicular = phi.iter().zip(&parallel).map(|(f, p)| f - p).collect();
    Ok(Decomposition {
        parallel,
        perpendicular,
    })
}

/// `phiᵀpsi / ‖psi‖²`.
pub fn projection_coefficient(phi: &[f64], psi: &[f64]) -> Result<f64> {
    let sq = dot(psi, psi);
    if sq == 0.0 {
        return Err(Error::DegenerateAxis);
    }
    Ok(dot(phi, psi) / sq)
}

/// Probability that the first item is preferred under a Bradley–Terry model,
/// `exp(a) / (exp(a) + exp(b))`, evaluated after subtracting the max.
pub fn bt_probability(reward_a: f64, reward_b: f64) -> Result<f64> {
    if !reward_a.is_finite() || !reward_b.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    let m = reward_a.max(reward_b);
    let ea = (reward_a - m).exp();
    let eb = (reward_b - m).exp();
    Ok(ea / (ea + eb))
}

/// `ln σ(x)`, computed without overflow for either sign of `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax scores"));
    }
    check_finite(scores, "softmax scores")?;
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn projects_onto_first_axis() {
        let d = project_decompose(&[3.0, 4.0], &[1.0, 0.0]).unwrap();
        assert_eq!(d.parallel, vec![3.0, 0.0]);
        assert_eq!(d.perpendicular, vec![0.0, 4.0]);
    }

    #[test]
    fn vector_on_axis_has_no_residual() {
        let psi = [0.3, -1.2, 2.0];
        let phi: Vec<f64> = psi.iter().map(|p| -2.5 * p).collect();
        let d = project_decompose(&phi, &psi).unwrap();
        assert!(d.perpendicular.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn orthogonal_vector_has_no_parallel_part() {
        let d = project_decompose(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(d.parallel, vec![0.0, 0.0]);
        assert_eq!(d.perpendicular, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_axis_is_rejected() {
        let err = project_decompose(&[1.0, 2.0], &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("degenerate rationale embedding"));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            project_decompose(&[1.0, 2.0, 3.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bt_probability_values() {
        assert_eq!(bt_probability(0.7, 0.7).unwrap(), 0.5);
        assert!(close(bt_probability(1.0, 0.0).unwrap(), 0.7310585786, 1e-10));
        assert!(bt_probability(f64::NAN, 0.0).is_err());
        assert!(bt_probability(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn bt_probability_large_gap_is_stable() {
        // 1 / (1 + e^50) evaluated with 50 significant digits.
        const TAIL: f64 = 1.928_749_847_963_917_783_017_7e-22;
        let p = bt_probability(50.0, 0.0).unwrap();
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
        assert!((1.0 - p) < 1e-15);
        let q = bt_probability(0.0, 50.0).unwrap();
        assert!(q > 0.0);
        assert!(((q - TAIL) / TAIL).abs() < 1e-12);
        // Without max subtraction exp(800) overflows.
        let r = bt_probability(800.0, 799.0).unwrap();
        assert!(close(r, 0.7310585786, 1e-10));
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[3.0f64.ln(), 0.0]).unwrap();
        assert!(close(p[0], 0.75, 1e-15) && close(p[1], 0.25, 1e-15));
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
        let big = softmax(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!(big.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn log_sigmoid_matches_direct_form() {
        for x in [-30.0, -2.0, -0.1, 0.0, 0.5, 3.0, 40.0] {
            let direct = (1.0 / (1.0 + (-x as f64).exp())).ln();
            assert!(close(log_sigmoid(x), direct, 1e-12), "{x}");
        }
        assert!(close(log_sigmoid(-800.0), -800.0, 1e-9));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    fn pair_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))
    }

    proptest! {
        #[test]
        fn decomposition_is_exact_and_orthogonal((phi, psi) in pair_strategy()) {
            prop_assume!(norm(&psi) > 1e-3);
            let d = project_decompose(&phi, &psi).unwrap();
            let scale = norm(&phi);
            for i in 0..phi.len() {
                prop_assert!((d.parallel[i] + d.perpendicular[i] - phi[i]).abs() <= 1e-12 * scale.max(1.0));
            }
            prop_assert!(dot(&d.parallel, &d.perpendicular).abs() <= 1e-9 * (scale * scale).max(1.0));
            let again = project_decompose(&d.parallel, &psi).unwrap();
            for i in 0..phi.len() {
                prop_assert!((again.parallel[i] - d.parallel[i]).abs() <= 1e-12 * scale.max(1.0));
            }
        }

        #[test]
        fn decomposition_ignores_axis_scale((phi, psi) in pair_strategy(), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            prop_assume!(norm(&psi) > 1e-3);
            let a = project_decompose(&phi, &psi).unwrap();
            let scaled: Vec<f64> = psi.iter().map(|p| c * p).collect();
            let b = project_decompose(&phi, &scaled).unwrap();
            for i in 0..phi.len() {
                prop_assert!((a.parallel[i] - b.parallel[i]).abs() <= 1e-10);
                prop_assert!((a.perpendicular[i] - b.perpendicular[i]).abs() <= 1e-10);
            }
        }

        #[test]
        fn bt_probability_is_complementary_and_shift_invariant(a in -100.0f64..100.0, b in -100.0f64..100.0, c in -100.0f64..100.0) {
            let p = bt_probability(a, b).unwrap();
            let q = bt_probability(b, a).unwrap();
            prop_assert!((p + q - 1.0).abs() <= 1e-12);
            prop_assert!((bt_probability(a + c, b + c).unwrap() - p).abs() <= 1e-12);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(s in prop::collection::vec(-500.0f64..500.0, 1..12), c in -1000.0f64..1000.0) {
            let p = softmax(&s).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

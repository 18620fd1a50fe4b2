//! Central-difference gradient checking.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::tensor::{Primitive, Tensor};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all probed coordinates.
    pub max_relative_error: f64,
    /// Worst relative error per checked tensor, in input order.
    pub per_input: Vec<f64>,
    pub probes: usize,
}

/// Relative error between analytic and numeric gradient entries.
///
/// Each coordinate is scaled by `max(|a|, |n|, floor)` where the floor is
/// 1e-3 of the largest magnitude in the set, so coordinates whose true
/// gradient is (nearly) zero are judged against the tensor's own scale
/// instead of blowing up.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 1e-3 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Check a primitive's backward pass against central differences.
///
/// The output is reduced to a scalar through a fixed random projection
/// `L = Σ r ⊙ op(inputs)`, so one backward call with upstream `r` yields
/// the exact gradient of `L`. Dropout runs in training mode with the same
/// seed for every evaluation, which freezes its mask.
pub fn grad_check(op: &Primitive, inputs: &[Tensor], eps: f64, seed: u64) -> Result<GradCheckReport> {
    check_eps(eps, inputs)?;
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        Ok(op.forward(&refs, true, &mut crate::rng(seed))?.value)
    };
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let pair = op.forward(&refs, true, &mut crate::rng(seed))?;
    let projection = Tensor::randn(pair.value.shape(), 1.0, &mut crate::rng(seed ^ 0x5eed));
    let analytic = pair.backward(&refs, &projection)?;
    finite_difference(inputs.to_vec(), &projection, eval, &analytic, None, eps, seed)
}

fn check_eps(eps: f64, inputs: &[Tensor]) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {eps}")));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("gradient check inputs must be finite"));
    }
    Ok(())
}

/// Compare `analytic[i]` against central differences of `Σ projection ⊙ eval(inputs)`.
///
/// With `max_probes = Some(k)`, at most `k` coordinates per tensor are probed,
/// chosen uniformly with the given seed.
pub(crate) fn finite_difference<F>(
    mut inputs: Vec<Tensor>,
    projection: &Tensor,
    mut eval: F,
    analytic: &[Tensor],
    max_probes: Option<usize>,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    let mut objective = |xs: &[Tensor]| -> Result<f64> {
        let out = eval(xs)?;
        Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };
    let mut rng = crate::rng(seed.wrapping_add(17));
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probes = 0;
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let positions: Vec<usize> = match max_probes {
            Some(k) if k < n => {
                let mut p = sample(&mut rng, n, k).into_vec();
                p.sort_unstable();
                p
            }
            _ => (0..n).collect(),
        };
        let mut numeric = Vec::with_capacity(positions.len());
        let mut wanted = Vec::with_capacity(positions.len());
        for &p in &positions {
            let orig = inputs[i].data()[p];
            inputs[i].data_mut()[p] = orig + eps;
            let plus = objective(&inputs)?;
            inputs[i].data_mut()[p] = orig - eps;
            let minus = objective(&inputs)?;
            inputs[i].data_mut()[p] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
            wanted.push(analytic[i].data()[p]);
        }
        probes += positions.len();
        per_input.push(relative_error(&wanted, &numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Padding, PoolMode};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut crate::rng(seed))
    }

    /// Distinct values spaced well beyond eps so max/relu kinks are never crossed.
    fn spaced(shape: &[usize], seed: u64) -> Tensor {
        use rand::seq::SliceRandom;
        let n: usize = shape.iter().product();
        let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01 + 0.003).collect();
        vals.shuffle(&mut crate::rng(seed));
        Tensor::new(shape, vals).unwrap()
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!(relative_error(&[1.0, 1e-9], &[1.0, 2e-9]) < 1e-5);
        assert!((relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn dense_matches_finite_differences() {
        let r = grad_check(&Primitive::Dense, &[randn(&[4, 5], 1), randn(&[5, 3], 2), randn(&[3], 3)], 1e-5, 0).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        let r = grad_check(&Primitive::Dense, &[randn(&[3, 4], 4), randn(&[4, 2], 5), randn(&[2], 6)], 1e-5, 1).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn conv_matches_finite_differences() {
        for (padding, stride) in [(Padding::Valid, 1), (Padding::Same, 1), (Padding::Same, 2), (Padding::Valid, 2)] {
            let r = grad_check(
                &Primitive::Conv2d { padding, stride },
                &[randn(&[2, 3, 8, 8], 7), randn(&[4, 3, 3, 3], 8), randn(&[4], 9)],
                1e-5,
                2,
            )
            .unwrap();
            assert!(r.max_relative_error < 1e-4, "{padding:?}/{stride}: {r:?}");
        }
    }

    #[test]
    fn conv_is_exact_for_fixed_kernel() {
        // Linear in the input: central differences are exact up to roundoff.
        let op = Primitive::Conv2d {
            padding: Padding::Valid,
            stride: 1,
        };
        let k = randn(&[2, 1, 3, 3], 12);
        let b = randn(&[2], 13);
        let x = randn(&[1, 1, 6, 6], 14);
        let pair = op.forward(&[&x, &k, &b], false, &mut crate::rng(0)).unwrap();
        let proj = randn(pair.value.shape(), 15);
        let analytic = pair.backward(&[&x, &k, &b], &proj).unwrap();
        let r = finite_difference(
            vec![x],
            &proj,
            |xs| Ok(op.forward(&[&xs[0], &k, &b], false, &mut crate::rng(0))?.value),
            &analytic[..1],
            None,
            1e-5,
            0,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn maxpool_matches_away_from_ties() {
        let op = Primitive::MaxPool2d {
            window: 2,
            stride: 2,
            padding: Padding::Valid,
        };
        let r = grad_check(&op, &[spaced(&[1, 2, 6, 6], 21)], 1e-5, 3).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        let op = Primitive::MaxPool2d {
            window: 3,
            stride: 1,
            padding: Padding::Same,
        };
        let r = grad_check(&op, &[spaced(&[1, 2, 5, 5], 22)], 1e-5, 3).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn global_pools_match() {
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let r = grad_check(&Primitive::GlobalPool { mode }, &[spaced(&[2, 3, 4, 4], 31)], 1e-5, 4).unwrap();
            assert!(r.max_relative_error < 1e-4, "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn activations_match() {
        let relu = Primitive::Activation { kind: Activation::Relu };
        let r = grad_check(&relu, &[spaced(&[3, 7], 41)], 1e-5, 5).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        let sig = Primitive::Activation {
            kind: Activation::Sigmoid,
        };
        let r = grad_check(&sig, &[randn(&[3, 7], 42)], 1e-5, 5).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn structural_ops_match() {
        let r = grad_check(&Primitive::Concat, &[randn(&[2, 3, 2, 2], 51), randn(&[2, 1, 2, 2], 52)], 1e-5, 6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        let r = grad_check(&Primitive::Add, &[randn(&[2, 5], 53), randn(&[2, 5], 54), randn(&[2, 5], 55)], 1e-5, 6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        let r = grad_check(&Primitive::Flatten, &[randn(&[2, 3, 2, 2], 56)], 1e-5, 6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        let r = grad_check(&Primitive::Dropout { rate: 0.3 }, &[randn(&[4, 6], 57)], 1e-5, 6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(grad_check(&Primitive::Flatten, &[randn(&[1, 2], 1)], 0.0, 0).is_err());
    }
}

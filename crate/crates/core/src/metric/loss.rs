//! Triplet hinge loss on Euclidean distances and its gradient through the
//! shared projection.

use super::nn::{ProjectionCache, ProjectionParams, Scalar};
use crate::error::{Error, Result};

fn distance<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt()
}

fn check_equal_dims(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::DimMismatch {
            expected: a,
            got: if a != b { b } else { c },
        });
    }
    Ok(())
}

/// `max(0, d(a, p) - d(a, n) + margin)` with `d` the Euclidean distance.
pub fn triplet_loss<T: Scalar>(a: &[T], p: &[T], n: &[T], margin: T) -> Result<T> {
    check_equal_dims(a.len(), p.len(), n.len())?;
    Ok((distance(a, p) - distance(a, n) + margin).max(T::zero()))
}

/// Loss value and parameter gradients for one input triplet.
#[derive(Clone, Debug)]
pub struct TripletGrad<T> {
    pub loss: T,
    pub active: bool,
    pub grads: ProjectionParams<T>,
}

/// Gradient of `d(u, v)` w.r.t. `u`; the zero vector when `u == v`.
fn unit_diff<T: Scalar>(u: &[T], v: &[T], dist: T) -> Vec<T> {
    if dist == T::zero() {
        return vec![T::zero(); u.len()];
    }
    u.iter().zip(v).map(|(&a, &b)| (a - b) / dist).collect()
}

/// Accumulates the gradient of the triplet loss at already-projected
/// branches into `grads`. Returns the loss and whether the hinge was active
/// (strictly positive).
pub fn accumulate_triplet_grad<T: Scalar>(
    params: &ProjectionParams<T>,
    ca: &ProjectionCache<T>,
    cp: &ProjectionCache<T>,
    cn: &ProjectionCache<T>,
    margin: T,
    grads: &mut ProjectionParams<T>,
) -> (T, bool) {
    let (ya, yp, yn) = (&ca.output, &cp.output, &cn.output);
    let dap = distance(ya, yp);
    let dan = distance(ya, yn);
    let raw = dap - dan + margin;
    if raw <= T::zero() {
        return (T::zero(), false);
    }
    let gap = unit_diff(ya, yp, dap);
    let gan = unit_diff(ya, yn, dan);
    let grad_a: Vec<T> = gap.iter().zip(&gan).map(|(&x, &y)| x - y).collect();
    let grad_p: Vec<T> = gap.iter().map(|&x| -x).collect();
    params.backward(ca, &grad_a, grads);
    params.backward(cp, &grad_p, grads);
    params.backward(cn, &gan, grads);
    (raw, true)
}

/// Loss and gradients of the triplet loss w.r.t. every projection parameter,
/// for raw inputs `a`, `p`, `n` passed through the same network.
///
/// At the hinge boundary and at zero projected distance the gradient
/// contribution is zero.
pub fn grad_triplet<T: Scalar>(
    a: &[T],
    p: &[T],
    n: &[T],
    params: &ProjectionParams<T>,
    margin: T,
) -> Result<TripletGrad<T>> {
    check_equal_dims(a.len(), p.len(), n.len())?;
    let ca = params.forward_cached(a)?;
    let cp = params.forward_cached(p)?;
    let cn = params.forward_cached(n)?;
    let mut grads = params.zeros_like();
    let (loss, active) = accumulate_triplet_grad(params, &ca, &cp, &cn, margin, &mut grads);
    if !super::nn::Parameters::is_finite(&grads) {
        return Err(Error::Diverged("triplet gradient".into()));
    }
    Ok(TripletGrad { loss, active, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::nn::{Linear, Parameters};

    #[test]
    fn loss_examples() {
        let a = [0.0f64, 0.0];
        assert_eq!(triplet_loss(&a, &a, &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&a, &a, &a, 1.0).unwrap(), 1.0);
        assert_eq!(triplet_loss(&a, &[3.0, 4.0], &[1.0, 0.0], 1.0).unwrap(), 5.0);
        assert!(triplet_loss(&a, &[1.0], &a, 1.0).is_err());
    }

    #[test]
    fn inactive_hinge_gives_exact_zero_gradients() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let params = ProjectionParams::<f64>::xavier(3, 4, 2, &mut rng);
        let a = [1.0, 0.5, -0.2];
        let n = [-40.0, 30.0, 25.0];
        let g = grad_triplet(&a, &a, &n, &params, 0.5).unwrap();
        assert!(!g.active);
        assert_eq!(g.loss, 0.0);
        assert!(g.grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_layer_gradient_matches_closed_form() {
        // layer1 = identity on nonnegative inputs, so the projection is
        // y = W2 x + b2 and the loss is |W2(a - p)| - |W2(a - n)| + m.
        // d/dW2 = u (a - p)^T - w (a - n)^T with u, w the unit differences.
        let mut params = ProjectionParams::<f64>::zeros(2, 2, 2);
        params.layer1.weight = vec![1.0, 0.0, 0.0, 1.0];
        params.layer2 = Linear {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, 0.5, 0.0, 2.0],
            bias: vec![0.1, -0.3],
        };
        let (a, p, n) = ([1.0, 2.0], [3.0, 1.0], [1.5, 2.5]);
        let g = grad_triplet(&a, &p, &n, &params, 1.0).unwrap();
        assert!(g.active);

        let w = &params.layer2.weight;
        let proj = |x: &[f64; 2]| [w[0] * x[0] + w[1] * x[1], w[2] * x[0] + w[3] * x[1]];
        let (ya, yp, yn) = (proj(&a), proj(&p), proj(&n));
        let dap = ((ya[0] - yp[0]).powi(2) + (ya[1] - yp[1]).powi(2)).sqrt();
        let dan = ((ya[0] - yn[0]).powi(2) + (ya[1] - yn[1]).powi(2)).sqrt();
        assert!((g.loss - (dap - dan + 1.0)).abs() < 1e-12);
        let u = [(ya[0] - yp[0]) / dap, (ya[1] - yp[1]) / dap];
        let v = [(ya[0] - yn[0]) / dan, (ya[1] - yn[1]) / dan];
        let (dp, dn) = ([a[0] - p[0], a[1] - p[1]], [a[0] - n[0], a[1] - n[1]]);
        for r in 0..2 {
            for c in 0..2 {
                let expected = u[r] * dp[c] - v[r] * dn[c];
                assert!((g.grads.layer2.weight[r * 2 + c] - expected).abs() < 1e-12);
            }
            // bias terms cancel: u - u - v + v
            assert!(g.grads.layer2.bias[r].abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_projections_use_zero_subgradient() {
        let params = ProjectionParams::<f64>::zeros(2, 2, 2);
        // every input maps to 0, so both distances vanish
        let g = grad_triplet(&[1.0, 1.0], &[2.0, 0.0], &[0.0, 3.0], &params, 1.0).unwrap();
        assert!(g.active);
        assert_eq!(g.loss, 1.0);
        assert!(g.grads.flatten().iter().all(|&v| v == 0.0));
    }
}

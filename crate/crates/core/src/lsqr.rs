//! Complex LSQR (Paige & Saunders) on a matrix-free operator.

use num_complex::Complex64;

use crate::error::Result;
use crate::fourier::FourierOperator;

#[derive(Clone, Debug)]
pub struct LsqrOutcome {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    pub converged: bool,
    /// Estimate of `‖b - A x‖`.
    pub rnorm: f64,
    /// Estimate of `‖A^H (b - A x)‖`.
    pub arnorm: f64,
    /// Frobenius-norm estimate of `A` accumulated by the bidiagonalization.
    pub anorm: f64,
    pub bnorm: f64,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn scale(v: &mut [Complex64], s: f64) {
    for z in v {
        *z *= s;
    }
}

/// Minimizes `‖A x - b‖` starting from `x = 0`.
///
/// Stops when `‖r‖ / ‖b‖ ≤ tol` (compatible system) or
/// `‖A^H r‖ / (‖A‖ ‖r‖) ≤ tol` (least-squares optimum), or after `max_iter`
/// iterations.
pub fn lsqr(
    op: &dyn FourierOperator,
    b: &[Complex64],
    max_iter: usize,
    tol: f64,
) -> Result<LsqrOutcome> {
    let n = op.n_coefficients();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];

    let mut u = b.to_vec();
    let bnorm = norm(&u);
    let mut out = LsqrOutcome {
        x: Vec::new(),
        iterations: 0,
        converged: true,
        rnorm: bnorm,
        arnorm: 0.0,
        anorm: 0.0,
        bnorm,
    };
    if bnorm == 0.0 {
        out.x = x;
        return Ok(out);
    }
    scale(&mut u, 1.0 / bnorm);
    let mut v = vec![zero; n];
    op.adjoint(&u, &mut v)?;
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        // b is orthogonal to the range; x = 0 is optimal.
        out.x = x;
        return Ok(out);
    }
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let mut phibar = bnorm;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;
    let mut av = vec![zero; u.len()];
    let mut atu = vec![zero; n];
    out.converged = false;

    for it in 1..=max_iter {
        op.forward(&v, &mut av)?;
        for (ui, ai) in u.iter_mut().zip(&av) {
            *ui = ai - *ui * alpha;
        }
        let beta = norm(&u);
        anorm2 += alpha * alpha + beta * beta;
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            op.adjoint(&u, &mut atu)?;
            for (vi, ai) in v.iter_mut().zip(&atu) {
                *vi = ai - *vi * beta;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        } else {
            alpha = 0.0;
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += *wi * t1;
            *wi = vi + *wi * t2;
        }

        let anorm = anorm2.sqrt();
        let arnorm = alpha * c.abs() * phibar;
        out.iterations = it;
        out.rnorm = phibar;
        out.arnorm = arnorm;
        out.anorm = anorm;
        let test1 = phibar / bnorm;
        let test2 = if phibar > 0.0 { arnorm / (anorm * phibar) } else { 0.0 };
        if test1 <= tol || test2 <= tol || beta == 0.0 || alpha == 0.0 {
            out.converged = true;
            break;
        }
    }
    out.x = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::Backend;
    use crate::index_sets::{AnovaTerm, BandwidthVector, GroupedIndexSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = GroupedIndexSet::new(
            2,
            vec![
                (AnovaTerm::new(vec![0]).unwrap(), BandwidthVector::new(vec![6]).unwrap()),
                (AnovaTerm::new(vec![0, 1]).unwrap(), BandwidthVector::new(vec![4, 4]).unwrap()),
            ],
            true,
        )
        .unwrap();
        let n = 60;
        let points: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        let b: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let op = Backend::Naive.build(&points, &set).unwrap();
        let sol = lsqr(op.as_ref(), &b, 200, 1e-14).unwrap();
        assert!(sol.converged);

        // Dense normal equations via nalgebra.
        let p = set.len();
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(n, p);
        let mut e = vec![Complex64::new(0.0, 0.0); p];
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..p {
            e.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            e[j] = Complex64::new(1.0, 0.0);
            op.forward(&e, &mut col).unwrap();
            for i in 0..n {
                a[(i, j)] = col[i];
            }
        }
        let bb = nalgebra::DVector::from_vec(b.clone());
        let ah = a.adjoint();
        let want = (&ah * &a).lu().solve(&(&ah * &bb)).unwrap();
        for (x, y) in sol.x.iter().zip(want.iter()) {
            assert!((x - y).norm() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let set = GroupedIndexSet::constant_only(1);
        let points = [0.3];
        let op = Backend::DirectCached.build(&points, &set).unwrap();
        let sol = lsqr(op.as_ref(), &[Complex64::new(0.0, 0.0)], 10, 1e-8).unwrap();
        assert_eq!(sol.x, vec![Complex64::new(0.0, 0.0)]);
        assert_eq!(sol.iterations, 0);
    }
}

//! Truncated heat-kernel-PageRank diffusion.
//!
//! Features are smoothed as `sum_k e^{-l} l^k / k! * P^k X`, truncated at
//! `K = ceil(l + 3 sqrt(l))`. The same weights drive both the original-side
//! and condensed-side diffusion. The untruncated ground truth for tests is a
//! dense eigendecomposition of `I - P` with filter `exp(-l * mu)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::mat::Mat;
use crate::sparse::SymOp;

pub const ORACLE_NODE_CAP: usize = 500;

/// Poisson path-length weights `w_k = e^{-l} l^k / k!` up to order `K`.
#[derive(Debug, Clone)]
pub struct PoissonWeights {
    pub lambda: f64,
    pub k: usize,
    pub weights: Vec<f64>,
    pub residual_mass: f64,
}

impl PoissonWeights {
    pub fn new(lambda: f64, k: usize) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidLambda(lambda));
        }
        let mut weights = Vec::with_capacity(k + 1);
        let mut w = (-lambda).exp();
        weights.push(w);
        for i in 1..=k {
            w *= lambda / i as f64;
            weights.push(w);
        }
        let mass: f64 = weights.iter().sum();
        Ok(PoissonWeights {
            lambda,
            k,
            weights,
            residual_mass: (1.0 - mass).max(0.0),
        })
    }

    pub fn truncated(lambda: f64) -> Result<Self> {
        Self::new(lambda, truncation_order(lambda)?)
    }
}

/// `K = ceil(lambda + 3 sqrt(lambda))`.
pub fn truncation_order(lambda: f64) -> Result<usize> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    Ok((lambda + 3.0 * lambda.sqrt()).ceil() as usize)
}

/// Diffused features plus the parameters that produced them.
#[derive(Debug, Clone)]
pub struct DiffusedFeatures {
    pub values: Mat,
    pub lambda: f64,
    pub k: usize,
}

/// Horner-style truncated diffusion: K applications of the operator, with the
/// running power accumulated in ascending k. Truncated weights are not
/// renormalized: the partial sum is the filter as written.
pub fn hkpr_diffuse(op: &dyn SymOp, x: &Mat, lambda: f64, k: usize) -> Result<DiffusedFeatures> {
    if op.dim() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "hkpr_diffuse",
            a_rows: op.dim(),
            a_cols: op.dim(),
            b_rows: x.rows(),
            b_cols: x.cols(),
        });
    }
    let w = PoissonWeights::new(lambda, k)?;
    let mut acc = x.scale(w.weights[0]);
    let mut power = x.clone();
    for &wk in &w.weights[1..] {
        power = op.apply(&power);
        let mut term = power.scale(wk);
        std::mem::swap(&mut acc, &mut term);
        acc.add_assign(&term);
    }
    Ok(DiffusedFeatures {
        values: acc,
        lambda,
        k,
    })
}

/// Untruncated diffusion through the eigendecomposition of `I - P`:
/// `U diag(exp(-l mu)) U^T X`. Dense, so capped at small instances; used as
/// the test-side ground truth only.
pub fn spectral_oracle(h: &Hypergraph, x: &Mat, lambda: f64) -> Result<Mat> {
    let n = h.num_nodes();
    if n > ORACLE_NODE_CAP {
        return Err(Error::OracleTooLarge {
            n,
            cap: ORACLE_NODE_CAP,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    let p = h.propagation()?.materialize();
    let (eigvals, u) = laplacian_eigen(&p);
    // U^T X
    let ut_x = u.transpose().matmul(x)?;
    let mut filtered = ut_x;
    for i in 0..n {
        let g = (-lambda * eigvals[i]).exp();
        for v in filtered.row_mut(i) {
            *v *= g;
        }
    }
    u.matmul(&filtered)
}

/// Eigenvalues and eigenvectors of the Laplacian `I - P` for a dense `P`.
pub fn laplacian_eigen(p: &Mat) -> (Vec<f64>, Mat) {
    let n = p.rows();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            lap[(i, j)] = if i == j { 1.0 - p.get(i, j) } else { -p.get(i, j) };
        }
    }
    let eig = lap.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut vecs = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            vecs.set(i, j, eig.eigenvectors[(i, j)]);
        }
    }
    (vals, vecs)
}

/// Chernoff-style Poisson tail bound `exp(-t^2 / (2 + t / sqrt(lambda)))` on
/// `Pr[N >= lambda + t sqrt(lambda)]`.
pub fn tail_bound(lambda: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    if !(t > 0.0) {
        return Err(Error::Config(format!("t must be positive, got {t}")));
    }
    Ok((-(t * t) / (2.0 + t / lambda.sqrt())).exp())
}

/// Exact tail `Pr[N >= ceil(lambda + t sqrt(lambda))]` by pmf summation.
pub fn exact_poisson_tail(lambda: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) || lambda > 500.0 {
        return Err(Error::InvalidLambda(lambda));
    }
    let threshold = (lambda + t * lambda.sqrt()).ceil() as usize;
    // Head mass pmf(0..threshold), subtracted from 1.
    let mut pmf = (-lambda).exp();
    let mut head = 0.0;
    for k in 0..threshold {
        head += pmf;
        pmf *= lambda / (k + 1) as f64;
    }
    Ok((1.0 - head).max(0.0))
}

/// Checks the analytic bound against the exact tail; errors are reserved for
/// domain violations, the comparison result is returned.
pub fn verify_tail_bound(lambda: f64, t: f64) -> Result<(f64, f64, bool)> {
    let bound = tail_bound(lambda, t)?;
    let exact = exact_poisson_tail(lambda, t)?;
    Ok((exact, bound, exact <= bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Hypergraph;
    use crate::sparse::DenseSym;
    use approx::assert_abs_diff_eq;

    fn tiny_path() -> Hypergraph {
        Hypergraph::new(
            vec![vec![0, 1], vec![1, 2]],
            Mat::identity(3),
            vec![0, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn truncation_order_values() {
        assert_eq!(truncation_order(1.0).unwrap(), 4);
        assert_eq!(truncation_order(3.0).unwrap(), 9);
        assert_eq!(truncation_order(5.0).unwrap(), 12);
        assert!(truncation_order(0.0).is_err());
        assert!(truncation_order(-1.0).is_err());
    }

    #[test]
    fn identity_operator_scales_by_poisson_mass() {
        let x = Mat::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let op = DenseSym(Mat::identity(3));
        let out = hkpr_diffuse(&op, &x, 1.0, 4).unwrap();
        let mass: f64 = PoissonWeights::new(1.0, 4).unwrap().weights.iter().sum();
        assert_abs_diff_eq!(mass, 0.99634, epsilon = 1e-5);
        for (o, i) in out.values.as_slice().iter().zip(x.as_slice()) {
            assert_abs_diff_eq!(o, &(i * mass), epsilon = 1e-14);
        }
    }

    #[test]
    fn poisson_weights_invariants() {
        let w = PoissonWeights::truncated(3.0).unwrap();
        assert_eq!(w.k, 9);
        assert!(w.weights.iter().all(|&x| x > 0.0));
        let mass: f64 = w.weights.iter().sum();
        assert!(mass <= 1.0);
        // Lemma-style residual control at t = 3.
        let bound = tail_bound(3.0, 3.0).unwrap();
        assert!(w.residual_mass <= bound);
    }

    #[test]
    fn path_hypergraph_matches_dense_power_sum() {
        // Brute-force sum of w_k P^k X with dense matrix powers.
        let h = tiny_path();
        let p = h.propagation().unwrap().materialize();
        let x = Mat::identity(3);
        let lambda = 1.0;
        let k = 4;
        let w = PoissonWeights::new(lambda, k).unwrap();
        let mut expect = Mat::zeros(3, 3);
        let mut power = Mat::identity(3);
        for i in 0..=k {
            expect.add_assign(&power.scale(w.weights[i]));
            power = p.matmul(&power).unwrap();
        }
        let got = hkpr_diffuse(&h.propagation().unwrap(), &x, lambda, k).unwrap();
        for (a, b) in got.values.as_slice().iter().zip(expect.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_is_identity_when_p_is_identity() {
        let h = Hypergraph::new(
            vec![vec![0], vec![1], vec![2]],
            Mat::identity(3),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let x = Mat::from_vec(3, 1, vec![1.0, -2.0, 0.5]);
        let out = spectral_oracle(&h, &x, 2.0).unwrap();
        for (a, b) in out.as_slice().iter().zip(x.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn laplacian_spectrum_within_theorem_range() {
        let h = tiny_path();
        let p = h.propagation().unwrap().materialize();
        let (vals, _) = laplacian_eigen(&p);
        for v in vals {
            assert!(v >= -1e-9 && v <= 2.0 + 1e-9, "eigenvalue {v} out of range");
        }
    }

    #[test]
    fn truncation_error_shrinks_with_k() {
        let h = tiny_path();
        let x = Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, -1.0]);
        let oracle = spectral_oracle(&h, &x, 1.0).unwrap();
        let prop = h.propagation().unwrap();
        let err = |k: usize| -> f64 {
            let d = hkpr_diffuse(&prop, &x, 1.0, k).unwrap();
            d.values
                .as_slice()
                .iter()
                .zip(oracle.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max)
        };
        assert!(err(7) < err(4));
        assert!(err(10) < err(7));
    }

    #[test]
    fn tail_bound_examples() {
        let (exact, bound, ok) = verify_tail_bound(4.0, 3.0).unwrap();
        assert_abs_diff_eq!(bound, (-9.0_f64 / 3.5).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(bound, 0.0764, epsilon = 1e-4);
        assert_abs_diff_eq!(exact, 0.00813, epsilon = 1e-4);
        assert!(ok);

        let (exact, bound, ok) = verify_tail_bound(1.0, 3.0).unwrap();
        assert_abs_diff_eq!(bound, 0.1653, epsilon = 1e-4);
        assert!(exact <= bound);
        assert!(ok);
    }

    #[test]
    fn tail_bound_monotone_in_t() {
        let mut prev = f64::INFINITY;
        for i in 1..40 {
            let t = i as f64 * 0.25;
            let b = tail_bound(2.0, t).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn diffusion_is_linear() {
        let h = tiny_path();
        let prop = h.propagation().unwrap();
        let x = Mat::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        let z = Mat::from_vec(3, 1, vec![-0.5, 4.0, 0.25]);
        let (a, b) = (0.7, -1.3);
        let combo = x.scale(a).zip(&z.scale(b), |u, v| u + v).unwrap();
        let lhs = hkpr_diffuse(&prop, &combo, 2.0, 7).unwrap().values;
        let dx = hkpr_diffuse(&prop, &x, 2.0, 7).unwrap().values;
        let dz = hkpr_diffuse(&prop, &z, 2.0, 7).unwrap().values;
        for i in 0..3 {
            assert_abs_diff_eq!(
                lhs.get(i, 0),
                a * dx.get(i, 0) + b * dz.get(i, 0),
                epsilon = 1e-12
            );
        }
    }
}

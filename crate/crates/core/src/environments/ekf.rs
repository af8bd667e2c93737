//! Extended Kalman filter over small fixed-size states, generic over [`Real`] so the whole
//! filter can be recorded on a tape.
//!
//! Matrix products are recorded as fused dot products that drop structurally zero constant
//! factors, which keeps the sparse Jacobians from inflating the graph.

use crate::autodiff::Real;
use crate::error::{Error, Result};

pub type Vector<R, const N: usize> = [R; N];
pub type Matrix<R, const M: usize, const N: usize> = [[R; N]; M];

pub fn zeros<R: Real, const M: usize, const N: usize>() -> Matrix<R, M, N> {
    [[R::constant(0.0); N]; M]
}

pub fn identity<R: Real, const N: usize>() -> Matrix<R, N, N> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = R::constant(1.0);
    }
    m
}

pub fn diagonal<R: Real, const N: usize>(d: [f64; N]) -> Matrix<R, N, N> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = R::constant(d[i]);
    }
    m
}

fn is_zero<R: Real>(x: R) -> bool {
    x.is_constant() && x.value() == 0.0
}

pub fn matmul<R: Real, const M: usize, const K: usize, const N: usize>(
    a: &Matrix<R, M, K>,
    b: &Matrix<R, K, N>,
) -> Matrix<R, M, N> {
    let mut out = zeros();
    for i in 0..M {
        for j in 0..N {
            let col: [R; K] = std::array::from_fn(|k| b[k][j]);
            out[i][j] = R::dot(R::constant(0.0), &a[i], &col);
        }
    }
    out
}

pub fn transpose<R: Real, const M: usize, const N: usize>(a: &Matrix<R, M, N>) -> Matrix<R, N, M> {
    let mut out = zeros();
    for i in 0..M {
        for j in 0..N {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn matvec<R: Real, const M: usize, const N: usize>(
    a: &Matrix<R, M, N>,
    x: &Vector<R, N>,
) -> Vector<R, M> {
    std::array::from_fn(|i| R::dot(R::constant(0.0), &a[i], x))
}

fn add<R: Real, const M: usize, const N: usize>(
    a: &Matrix<R, M, N>,
    b: &Matrix<R, M, N>,
) -> Matrix<R, M, N> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| match (is_zero(a[i][j]), is_zero(b[i][j])) {
            (true, _) => b[i][j],
            (_, true) => a[i][j],
            _ => a[i][j] + b[i][j],
        })
    })
}

/// `(a + a^T) / 2`.
pub fn symmetrize<R: Real, const N: usize>(a: &Matrix<R, N, N>) -> Matrix<R, N, N> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            if i == j {
                a[i][i]
            } else {
                (a[i][j] + a[j][i]) * 0.5
            }
        })
    })
}

/// Inverse of a 3x3 matrix by the adjugate formula.
pub fn inverse3<R: Real>(m: &Matrix<R, 3, 3>) -> Result<Matrix<R, 3, 3>> {
    let c =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.value().abs()));
    if !det.value().is_finite() || det.value().abs() <= 1e-14 * scale.powi(3) {
        return Err(Error::SingularInnovation);
    }
    // adj = cof^T
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| cof[j][i] / det)
    }))
}

/// Gaussian belief `N(mean, cov)`.
#[derive(Debug, Clone, Copy)]
pub struct EkfBelief<R, const N: usize> {
    pub mean: Vector<R, N>,
    pub cov: Matrix<R, N, N>,
}

impl<R: Real, const N: usize> EkfBelief<R, N> {
    pub fn new(mean: Vector<R, N>, cov: Matrix<R, N, N>) -> Self {
        Self { mean, cov }
    }

    pub fn values(&self) -> EkfBelief<f64, N> {
        EkfBelief {
            mean: self.mean.map(|x| x.value()),
            cov: self.cov.map(|row| row.map(|x| x.value())),
        }
    }

    /// Largest `|P_ij - P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..N {
            for j in 0..N {
                worst = worst.max((self.cov[i][j].value() - self.cov[j][i].value()).abs());
            }
        }
        worst
    }
}

/// Predict step: `mean' = f(mean)`, `P' = F P F^T + Q`.
pub fn predict<R: Real, const N: usize>(
    belief: &EkfBelief<R, N>,
    propagated_mean: Vector<R, N>,
    jacobian: &Matrix<R, N, N>,
    process_noise: &Matrix<R, N, N>,
) -> EkfBelief<R, N> {
    let fp = matmul(jacobian, &belief.cov);
    let cov = add(&matmul(&fp, &transpose(jacobian)), process_noise);
    EkfBelief {
        mean: propagated_mean,
        cov: symmetrize(&cov),
    }
}

/// Measurement update with a three-dimensional observation, Joseph form.
pub fn update<R: Real, const N: usize>(
    prior: &EkfBelief<R, N>,
    innovation: Vector<R, 3>,
    jacobian: &Matrix<R, 3, N>,
    noise: &Matrix<R, 3, 3>,
) -> Result<EkfBelief<R, N>> {
    let ht = transpose(jacobian);
    let pht = matmul(&prior.cov, &ht);
    let s = symmetrize(&add(&matmul(jacobian, &pht), noise));
    let gain = matmul(&pht, &inverse3(&s)?);
    let correction = matvec(&gain, &innovation);
    let mean = std::array::from_fn(|i| prior.mean[i] + correction[i]);

    let kh = matmul(&gain, jacobian);
    let i_kh: Matrix<R, N, N> = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let id = if i == j { 1.0 } else { 0.0 };
            if is_zero(kh[i][j]) {
                R::constant(id)
            } else {
                -kh[i][j] + id
            }
        })
    });
    let joseph = matmul(&matmul(&i_kh, &prior.cov), &transpose(&i_kh));
    let krk = matmul(&matmul(&gain, noise), &transpose(&gain));
    Ok(EkfBelief {
        mean,
        cov: symmetrize(&add(&joseph, &krk)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let m = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let inv = inverse3(&m).unwrap();
        let prod = matmul(&m, &inv);
        for (i, row) in prod.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-14);
            }
        }
        let singular = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(matches!(
            inverse3(&singular),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn exact_observation_of_known_state_keeps_mean() {
        let b = EkfBelief::<f64, 3>::new([1.0, 2.0, 3.0], diagonal([0.5, 0.5, 0.5]));
        let p = predict(&b, b.mean, &identity(), &zeros());
        let u = update(&p, [0.0; 3], &identity(), &diagonal([0.1, 0.1, 0.1])).unwrap();
        assert_eq!(u.mean, b.mean);
        let trace = |m: &Matrix<f64, 3, 3>| m[0][0] + m[1][1] + m[2][2];
        assert!(trace(&u.cov) <= trace(&b.cov));
    }

    /// Scalar Kalman filter written out longhand.
    #[test]
    fn scalar_special_case_matches_closed_form() {
        let (p0, q, r, a) = (2.0, 0.1, 0.5, 0.9);
        let mut m: Matrix<f64, 3, 3> = zeros();
        m[0][0] = a;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        let b = EkfBelief::new([1.0, 0.0, 0.0], diagonal([p0, 1.0, 1.0]));
        let pred = predict(&b, [a * 1.0, 0.0, 0.0], &m, &diagonal([q, 0.0, 0.0]));
        let z = 1.7;
        let post = update(
            &pred,
            [z - pred.mean[0], 0.0, 0.0],
            &identity(),
            &diagonal([r, 1.0, 1.0]),
        )
        .unwrap();
        let p_pred = a * a * p0 + q;
        let k = p_pred / (p_pred + r);
        assert!((post.mean[0] - (a + k * (z - a))).abs() < 1e-12);
        assert!((post.cov[0][0] - (1.0 - k) * p_pred).abs() < 1e-12);
    }
}

//! Small dense affine maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x ↦ A x + b` with `A` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn identity(d: usize) -> Self {
        let a = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Affine { a, b: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() + bi)
            .collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.a[i][j])
    }

    fn from_parts(m: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let d = b.len();
        Affine {
            a: (0..d)
                .map(|i| (0..d).map(|j| m[(i, j)]).collect())
                .collect(),
            b: b.iter().copied().collect(),
        }
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn inverse(&self) -> Result<Affine> {
        let m = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("singular affine map".into()))?;
        let b = -(&m * DVector::from_column_slice(&self.b));
        Ok(Affine::from_parts(&m, &b))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Affine) -> Affine {
        let m = self.matrix() * inner.matrix();
        let b = self.matrix() * DVector::from_column_slice(&inner.b)
            + DVector::from_column_slice(&self.b);
        Affine::from_parts(&m, &b)
    }

    /// The affine map sending `src[i]` to `dst[i]` for `d + 1` affinely independent points.
    pub fn from_vertices(src: &[Vec<f64>], dst: &[Vec<f64>]) -> Result<Affine> {
        let d = src[0].len();
        if src.len() != d + 1 || dst.len() != d + 1 {
            return Err(Error::InvalidInput("need d+1 vertex pairs".into()));
        }
        let e = DMatrix::from_fn(d, d, |i, j| src[j + 1][i] - src[0][i]);
        let f = DMatrix::from_fn(d, d, |i, j| dst[j + 1][i] - dst[0][i]);
        let scale = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(e.determinant().abs() > 1e-14 * scale.powi(d as i32)) {
            return Err(Error::InvalidInput("degenerate source simplex".into()));
        }
        let einv = e
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("degenerate source simplex".into()))?;
        let m = f * einv;
        let b = DVector::from_column_slice(&dst[0]) - &m * DVector::from_column_slice(&src[0]);
        Ok(Affine::from_parts(&m, &b))
    }
}

/// Signed volume of the simplex `v_0..v_d`.
pub fn signed_volume(v: &[Vec<f64>]) -> f64 {
    let d = v[0].len();
    let e = DMatrix::from_fn(d, d, |i, j| v[j + 1][i] - v[0][i]);
    e.determinant() / factorial(d)
}

pub fn factorial(d: usize) -> f64 {
    (1..=d).map(|k| k as f64).product()
}

/// Barycentric coordinates of `x` with respect to `v_0..v_d`.
pub fn barycentric(v: &[Vec<f64>], x: &[f64]) -> Option<Vec<f64>> {
    let d = x.len();
    let e = DMatrix::from_fn(d, d, |i, j| v[j + 1][i] - v[0][i]);
    let rhs = DVector::from_fn(d, |i, _| x[i] - v[0][i]);
    let lam = e.lu().solve(&rhs)?;
    let mut out = Vec::with_capacity(d + 1);
    out.push(1.0 - lam.sum());
    out.extend(lam.iter().copied());
    Some(out)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

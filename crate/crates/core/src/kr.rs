//! Gridded densities and the Knöthe–Rosenblatt rearrangement between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ravel, unravel};

/// Nodal values on a tensor grid with `shape[k]` nodes per axis spanning `[lower_k, upper_k]`.
/// Values are interpolated multilinearly and integrated with the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
    /// Row-major, last axis fastest.
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Non-negative nodal values; no normalization is applied.
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let d = shape.len();
        if d == 0 || lower.len() != d || upper.len() != d {
            return Err(Error::InvalidInput("grid density dimensions".into()));
        }
        if shape.iter().any(|n| *n < 2) || (0..d).any(|k| !(upper[k] > lower[k])) {
            return Err(Error::InvalidInput(
                "need >= 2 nodes and a non-empty box per axis".into(),
            ));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidInput(format!(
                "{} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::DensityDegenerate(format!("value {v}")));
        }
        Ok(GridDensity {
            lower,
            upper,
            shape,
            values,
        })
    }

    /// Samples `f` at the nodes of `[0,1]^d` and normalizes.
    pub fn from_fn(shape: &[usize], f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = shape.len();
        GridDensity::from_fn_on(vec![0.0; d], vec![1.0; d], shape, f)?.normalized()
    }

    /// Samples `f` at the nodes of a box, without normalization.
    pub fn from_fn_on(
        lower: Vec<f64>,
        upper: Vec<f64>,
        shape: &[usize],
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut g = GridDensity {
            lower,
            upper,
            shape: shape.to_vec(),
            values: vec![0.0; n],
        };
        for i in 0..n {
            let x = g.node(i);
            g.values[i] = f(&x);
        }
        GridDensity::new(g.lower, g.upper, g.shape, g.values)
    }

    pub fn uniform(d: usize, n: usize) -> Self {
        GridDensity::from_fn(&vec![n; d], |_| 1.0).expect("uniform density")
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.shape[k] - 1) as f64
    }

    pub fn coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.shape[k] {
            self.upper[k]
        } else {
            self.lower[k] + i as f64 * self.spacing(k)
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        unravel(idx, &self.shape)
            .iter()
            .enumerate()
            .map(|(k, i)| self.coord(k, *i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weight of node `idx`.
    pub fn weight(&self, idx: usize) -> f64 {
        unravel(idx, &self.shape)
            .iter()
            .enumerate()
            .map(|(k, i)| {
                let w = self.spacing(k);
                if *i == 0 || *i + 1 == self.shape[k] {
                    0.5 * w
                } else {
                    w
                }
            })
            .product()
    }

    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.weight(i))
            .sum()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DensityDegenerate(format!("integral {total}")));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.shape == other.shape && self.lower == other.lower && self.upper == other.upper
    }

    /// Multilinear interpolation; zero outside the box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            if !(x[k] >= self.lower[k] && x[k] <= self.upper[k]) {
                return 0.0;
            }
            let t = (x[k] - self.lower[k]) / self.spacing(k);
            let i = (t.floor() as usize).min(self.shape[k] - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut total = 0.0;
        let mut m = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                m[k] = base[k] + bit;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if w != 0.0 {
                total += w * self.values[ravel(&m, &self.shape)];
            }
        }
        total
    }

    /// Largest nodal value.
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Largest difference quotient between neighbouring nodes.
    pub fn lipschitz(&self) -> f64 {
        let d = self.dim();
        let mut lip = 0.0f64;
        for idx in 0..self.len() {
            let m = unravel(idx, &self.shape);
            for k in 0..d {
                if m[k] + 1 < self.shape[k] {
                    let mut n = m.clone();
                    n[k] += 1;
                    let diff = (self.values[ravel(&n, &self.shape)] - self.values[idx]).abs();
                    lip = lip.max(diff / self.spacing(k));
                }
            }
        }
        lip
    }
}

/// Marginal on the first `k` axes, integrating the trailing ones with the trapezoid rule.
pub fn marginal(rho: &GridDensity, k: usize) -> Result<GridDensity> {
    let d = rho.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "marginal order {k} in dimension {d}"
        )));
    }
    let lead: usize = rho.shape[..k].iter().product();
    let trail_shape = &rho.shape[k..];
    let trail: usize = trail_shape.iter().product();
    let trail_w: Vec<f64> = (0..trail)
        .map(|t| {
            unravel(t, trail_shape)
                .iter()
                .enumerate()
                .map(|(j, i)| {
                    let w = rho.spacing(k + j);
                    if *i == 0 || *i + 1 == trail_shape[j] {
                        0.5 * w
                    } else {
                        w
                    }
                })
                .product()
        })
        .collect();
    let values = (0..lead)
        .map(|l| {
            rho.values[l * trail..(l + 1) * trail]
                .iter()
                .zip(&trail_w)
                .map(|(v, w)| v * w)
                .sum()
        })
        .collect();
    GridDensity::new(
        rho.lower[..k].to_vec(),
        rho.upper[..k].to_vec(),
        rho.shape[..k].to_vec(),
        values,
    )
}

/// Conditional CDFs of a density, one table per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTables {
    /// `marginals[k]` is the marginal on axes `0..=k`.
    marginals: Vec<GridDensity>,
}

/// Piecewise-linear conditional density along one axis, with cumulative trapezoid sums.
#[derive(Debug, Clone)]
struct Slice {
    lower: f64,
    step: f64,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Slice {
    fn new(lower: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(values.len());
        cumulative.push(0.0);
        for i in 1..values.len() {
            let prev = cumulative[i - 1];
            cumulative.push(prev + 0.5 * step * (values[i - 1] + values[i]));
        }
        let total = *cumulative.last().unwrap();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DensityDegenerate(format!(
                "conditional slice integral {total}"
            )));
        }
        Ok(Slice {
            lower,
            step,
            values,
            cumulative,
        })
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn upper(&self) -> f64 {
        self.lower + self.step * (self.values.len() - 1) as f64
    }

    /// Exact integral of the linear interpolant up to `t`, divided by the slice total.
    fn cdf(&self, t: f64) -> f64 {
        let n = self.values.len();
        if t <= self.lower {
            return 0.0;
        }
        if t >= self.upper() {
            return 1.0;
        }
        let s = (t - self.lower) / self.step;
        let i = (s.floor() as usize).min(n - 2);
        let u = s - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        let part = self.step * (a * u + 0.5 * (b - a) * u * u);
        ((self.cumulative[i] + part) / self.total()).clamp(0.0, 1.0)
    }

    /// Smallest `t` with `cdf(t) >= u`, by bisection to `1e-10`.
    fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::DensityDegenerate(format!("cdf level {u}")));
        }
        let target = u * self.total();
        let i = self
            .cumulative
            .partition_point(|c| *c < target)
            .clamp(1, self.values.len() - 1)
            - 1;
        let mut lo = self.lower + i as f64 * self.step;
        let mut hi = if i + 2 == self.values.len() {
            self.upper()
        } else {
            lo + self.step
        };
        if self.cdf(lo) > u || self.cdf(hi) < u {
            return Err(Error::DensityDegenerate("quantile not bracketed".into()));
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

impl ConditionalTables {
    pub fn new(rho: &GridDensity) -> Result<Self> {
        let d = rho.dim();
        let marginals = (1..=d)
            .map(|k| marginal(rho, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConditionalTables { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Conditional density along axis `k` at the prefix `x_{0..k}`, by multilinear
    /// interpolation of the marginal in the prefix.
    fn slice(&self, k: usize, prefix: &[f64]) -> Result<Slice> {
        let m = &self.marginals[k];
        let n = m.shape[k];
        let mut values = vec![0.0; n];
        let pshape = &m.shape[..k];
        let mut base = vec![0usize; k];
        let mut frac = vec![0.0; k];
        for j in 0..k {
            let x = prefix[j].clamp(m.lower[j], m.upper[j]);
            let t = (x - m.lower[j]) / m.spacing(j);
            let i = (t.floor() as usize).min(pshape[j] - 2);
            base[j] = i;
            frac[j] = t - i as f64;
        }
        let mut c = vec![0usize; k];
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            for j in 0..k {
                let bit = (corner >> j) & 1;
                c[j] = base[j] + bit;
                w *= if bit == 1 { frac[j] } else { 1.0 - frac[j] };
            }
            if w == 0.0 {
                continue;
            }
            let row = if k == 0 { 0 } else { ravel(&c, pshape) } * n;
            for (v, r) in values.iter_mut().zip(&m.values[row..row + n]) {
                *v += w * r;
            }
        }
        Slice::new(m.lower[k], m.spacing(k), values)
    }

    pub fn cdf(&self, k: usize, t: f64, prefix: &[f64]) -> Result<f64> {
        Ok(self.slice(k, prefix)?.cdf(t))
    }

    pub fn quantile(&self, k: usize, u: f64, prefix: &[f64]) -> Result<f64> {
        self.slice(k, prefix)?.quantile(u)
    }
}

/// `F^k(t | x_{1:k-1})` for 1-based `k`.
pub fn conditional_cdf(rho: &GridDensity, k: usize, t: f64, prefix: &[f64]) -> Result<f64> {
    if k == 0 || k > rho.dim() || prefix.len() + 1 < k {
        return Err(Error::InvalidInput(format!("conditional index {k}")));
    }
    ConditionalTables::new(rho)?.cdf(k - 1, t, prefix)
}

#[derive(Serialize, Deserialize)]
struct KrSpec {
    rho0: GridDensity,
    rho1: GridDensity,
}

/// Triangular map pushing `ρ0` to `ρ1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KrSpec", into = "KrSpec")]
pub struct KrMap {
    rho0: GridDensity,
    rho1: GridDensity,
    t0: ConditionalTables,
    t1: ConditionalTables,
}

impl TryFrom<KrSpec> for KrMap {
    type Error = Error;

    fn try_from(s: KrSpec) -> Result<Self> {
        kr_map(&s.rho0, &s.rho1)
    }
}

impl From<KrMap> for KrSpec {
    fn from(m: KrMap) -> Self {
        KrSpec {
            rho0: m.rho0,
            rho1: m.rho1,
        }
    }
}

pub fn kr_map(rho0: &GridDensity, rho1: &GridDensity) -> Result<KrMap> {
    crate::error::check_dim(rho0.dim(), rho1.dim())?;
    Ok(KrMap {
        t0: ConditionalTables::new(rho0)?,
        t1: ConditionalTables::new(rho1)?,
        rho0: rho0.clone(),
        rho1: rho1.clone(),
    })
}

impl KrMap {
    pub fn dim(&self) -> usize {
        self.rho0.dim()
    }

    pub fn source(&self) -> &GridDensity {
        &self.rho0
    }

    pub fn target(&self) -> &GridDensity {
        &self.rho1
    }

    fn transport(from: &ConditionalTables, to: &ConditionalTables, x: &[f64]) -> Result<Vec<f64>> {
        let d = from.dim();
        let mut y = Vec::with_capacity(d);
        for k in 0..d {
            let u = from.cdf(k, x[k], &x[..k])?;
            let v = to.quantile(k, u, &y)?;
            y.push(v);
        }
        Ok(y)
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim(self.dim(), x.len())?;
        KrMap::transport(&self.t0, &self.t1, x)
    }

    /// Panics on a degenerate density; use [`KrMap::try_eval`] to handle it.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.try_eval(x).expect("KR evaluation")
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim(self.dim(), y.len())?;
        KrMap::transport(&self.t1, &self.t0, y)
    }
}

/// `u(t, x) = (φ − id)(φ_t^{-1}(x))` with `φ_t = (1 − t) id + t φ`, for triangular `φ`
/// on the box `[lower, upper]`.
pub fn displacement_field(
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let d = x.len();
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Isotopy(format!("time {t}")));
    }
    // Solve (1 - t) z_k + t φ_k(z_{1:k}) = x_k one coordinate at a time.
    let mut z = x.to_vec();
    for k in 0..d {
        let comp = |zk: f64, z: &mut Vec<f64>| {
            z[k] = zk;
            (1.0 - t) * zk + t * phi(z)[k] - x[k]
        };
        let (mut lo, mut hi) = (lower[k], upper[k]);
        let (flo, fhi) = (comp(lo, &mut z), comp(hi, &mut z));
        if flo > 0.0 || fhi < 0.0 {
            return Err(Error::Isotopy(format!(
                "coordinate {k} not bracketed at {x:?}"
            )));
        }
        while hi - lo > 1e-13 * (1.0 + hi.abs()) {
            let mid = 0.5 * (lo + hi);
            if comp(mid, &mut z) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        z[k] = 0.5 * (lo + hi);
    }
    let fz = phi(&z);
    Ok(fz.iter().zip(&z).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoid_integral_and_eval() {
        let rho = GridDensity::from_fn(&[5, 9], |x| 1.0 + x[0] * x[1]).unwrap();
        assert_abs_diff_eq!(rho.integral(), 1.0, epsilon = 1e-12);
        let z = GridDensity::from_fn_on(vec![0.0], vec![2.0], &[3], |x| x[0]).unwrap();
        assert_abs_diff_eq!(z.eval(&[0.5]), 0.5, epsilon = 1e-15);
        assert_eq!(z.eval(&[2.5]), 0.0);
    }

    #[test]
    fn marginal_of_bilinear_density() {
        let rho = GridDensity::from_fn(&[257, 257], |x| 1.0 + x[0] * x[1]).unwrap();
        let m = marginal(&rho, 1).unwrap();
        for i in [0, 64, 200, 256] {
            let x = m.coord(0, i);
            // ∫∫ (1 + xy) = 5/4.
            assert_abs_diff_eq!(m.values[i], (1.0 + x / 2.0) / 1.25, epsilon = 1e-6);
        }
        let u = GridDensity::uniform(3, 5);
        let mu = marginal(&u, 2).unwrap();
        assert!(mu.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cdf_examples() {
        let u = GridDensity::uniform(1, 17);
        assert_abs_diff_eq!(
            conditional_cdf(&u, 1, 0.3, &[]).unwrap(),
            0.3,
            epsilon = 1e-14
        );
        let lin = GridDensity::from_fn(&[512], |x| 2.0 * x[0]).unwrap();
        for t in [0.1, 0.5, 0.77] {
            assert_abs_diff_eq!(
                conditional_cdf(&lin, 1, t, &[]).unwrap(),
                t * t,
                epsilon = 1e-5
            );
        }
        assert_eq!(conditional_cdf(&lin, 1, 0.0, &[]).unwrap(), 0.0);
        assert_eq!(conditional_cdf(&lin, 1, 1.0, &[]).unwrap(), 1.0);
    }

    #[test]
    fn one_dimensional_sqrt() {
        let u = GridDensity::uniform(1, 512);
        let lin = GridDensity::from_fn(&[512], |x| 2.0 * x[0]).unwrap();
        let m = kr_map(&u, &lin).unwrap();
        assert_abs_diff_eq!(m.eval(&[0.25])[0], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn identity_between_equal_densities() {
        let rho = GridDensity::from_fn(&[33, 33], |x| 1.0 + x[0] * x[1]).unwrap();
        let m = kr_map(&rho, &rho).unwrap();
        let y = m.eval(&[0.3, 0.8]);
        assert_abs_diff_eq!(y[0], 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(y[1], 0.8, epsilon = 1e-6);
    }

    #[test]
    fn zero_slice_is_degenerate() {
        let rho = GridDensity::from_fn_on(vec![0.0, 0.0], vec![1.0, 1.0], &[3, 3], |x| {
            if x[0] < 0.25 {
                0.0
            } else {
                1.0
            }
        })
        .unwrap();
        let t = ConditionalTables::new(&rho).unwrap();
        assert!(matches!(
            t.cdf(1, 0.5, &[0.0]),
            Err(Error::DensityDegenerate(_))
        ));
    }

    #[test]
    fn displacement_examples() {
        let id = |x: &[f64]| x.to_vec();
        assert_eq!(
            displacement_field(&id, &[0.0], &[1.0], 0.3, &[0.4]).unwrap(),
            vec![0.0]
        );
        let sqrt = |x: &[f64]| vec![x[0].sqrt()];
        let u = displacement_field(&sqrt, &[0.0], &[1.0], 0.0, &[0.36]).unwrap();
        assert_abs_diff_eq!(u[0], 0.6 - 0.36, epsilon = 1e-12);
    }
}

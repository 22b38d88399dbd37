//! Map errors, pushforward densities, total variation and the two counterexamples.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kr::GridDensity;
use crate::mesh::RectDomain;
use crate::schedule::{PointBatch, SegmentSource};

/// `(Σ |f − g|^p · cell volume)^{1/p}` over the cell centers of a `res^d` grid.
pub fn lp_map_error(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    g: &dyn Fn(&[f64]) -> Vec<f64>,
    domain: &RectDomain,
    p: f64,
    res: usize,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p = {p}")));
    }
    let (pts, vol) = domain.cell_centers(res);
    let fs: Vec<Vec<f64>> = pts.iter().map(|x| f(x)).collect();
    let gs: Vec<Vec<f64>> = pts.iter().map(|x| g(x)).collect();
    Ok(lp_from_values(&fs, &gs, vol, p))
}

/// `(Σ |a_i − b_i|^p w)^{1/p}` for precomputed images.
pub fn lp_from_values(a: &[Vec<f64>], b: &[Vec<f64>], weight: f64, p: f64) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| crate::linalg::dist(x, y).powf(p) * weight)
        .sum();
    total.powf(1.0 / p)
}

/// `det ∇f(x)` by central differences with step `step`.
pub fn fd_jacobian_det(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> f64 {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for j in 0..d {
        p[j] = x[j] + step;
        let fp = f(&p);
        p[j] = x[j] - step;
        let fm = f(&p);
        p[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac.determinant()
}

/// A transport whose pushforward density can be evaluated.
pub enum Transport<'a> {
    /// A schedule: inverted by the reverse flow, with exact log-Jacobian.
    Flow(&'a dyn SegmentSource),
    /// A map with an explicit inverse; the Jacobian is taken by finite differences.
    Map {
        forward: &'a dyn Fn(&[f64]) -> Vec<f64>,
        inverse: &'a dyn Fn(&[f64]) -> Result<Vec<f64>>,
    },
}

/// Density of the pushforward of `rho` at the nodes of `grid` (whose values are ignored).
pub fn pushforward_density(
    transport: &Transport<'_>,
    rho: &GridDensity,
    grid: &GridDensity,
) -> Result<GridDensity> {
    crate::error::check_dim(rho.dim(), grid.dim())?;
    let nodes = grid.nodes();
    let values = match transport {
        Transport::Flow(source) => {
            let mut batch = PointBatch::new(grid.dim(), &nodes);
            batch.flow(*source, true);
            (0..nodes.len())
                .map(|i| rho.eval(&batch.point(i)) * batch.logdets()[i].exp())
                .collect()
        }
        Transport::Map { forward, inverse } => {
            let mut out = Vec::with_capacity(nodes.len());
            for y in &nodes {
                let x = inverse(y)?;
                let r = rho.eval(&x);
                if r == 0.0 {
                    out.push(0.0);
                    continue;
                }
                let det = fd_jacobian_det(*forward, &x, 1e-6).abs();
                if !(det > 1e-12) {
                    return Err(Error::SingularTransport(x));
                }
                out.push(r / det);
            }
            out
        }
    };
    GridDensity::new(
        grid.lower.clone(),
        grid.upper.clone(),
        grid.shape.clone(),
        values,
    )
}

/// Trapezoid `∫ |ρ1 − ρ2|`.
pub fn tv_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch(format!(
            "{:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .enumerate()
        .map(|(i, (x, y))| (x - y).abs() * a.weight(i))
        .sum())
}

/// Right side of the TV stability estimate for `η` sampled with equal weights `weight`:
/// `e^M ‖ρ‖_{C^{0,1}} ‖η − id‖_{L¹} + e^M ‖ρ‖_∞ ‖log det ∇η‖_{L¹}`, with `M = max |log det ∇η|`.
pub fn tv_stability_bound(
    displacements: &[f64],
    logdets: &[f64],
    weight: f64,
    rho: &GridDensity,
) -> f64 {
    let m = logdets.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let disp: f64 = displacements.iter().map(|v| v.abs()).sum::<f64>() * weight;
    let ld: f64 = logdets.iter().map(|v| v.abs()).sum::<f64>() * weight;
    let lip = rho.sup() + rho.lipschitz();
    m.exp() * (lip * disp + rho.sup() * ld)
}

/// `(TV(φ#μ1, φ#μ2), TV(μ1, μ2))` on the grid of `mu1`.
pub fn contraction_check(
    transport: &Transport<'_>,
    mu1: &GridDensity,
    mu2: &GridDensity,
) -> Result<(f64, f64)> {
    let rhs = tv_distance(mu1, mu2)?;
    let p1 = pushforward_density(transport, mu1, mu1)?;
    let p2 = pushforward_density(transport, mu2, mu1)?;
    Ok((tv_distance(&p1, &p2)?, rhs))
}

/// `ψ_h(x) = x + α h sin(2πx/h)` on the unit circle: returns `(sup |ψ_h − id|, TV(μ, ψ_h#μ))`
/// for the uniform `μ`.
pub fn oscillation_counterexample(alpha: f64, h: f64) -> Result<(f64, f64)> {
    let two_pi = 2.0 * std::f64::consts::PI;
    if !(alpha > 0.0 && alpha < 1.0 / two_pi) {
        return Err(Error::InvalidInput(format!(
            "alpha = {alpha} outside (0, 1/2π)"
        )));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidInput(format!("h = {h} outside (0, 1)")));
    }
    let n = 1 << 16;
    let mut sup = 0.0f64;
    let mut tv = 0.0;
    for i in 0..n {
        let x = i as f64 / n as f64;
        sup = sup.max((alpha * h * (two_pi * x / h).sin()).abs());
        let xm = (i as f64 + 0.5) / n as f64;
        tv += (two_pi * xm / h).cos().abs();
    }
    Ok((sup, two_pi * alpha * tv / n as f64))
}

/// Histogram TV between the uniform density on `[0, 1]` and its pushforward by rounding
/// down to the grid `hZ`, with histogram bins of width `h / refine`.
pub fn rounding_tv(h: f64, refine: usize) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) || refine == 0 {
        return Err(Error::InvalidInput(format!("h = {h}, refine = {refine}")));
    }
    let atoms = (1.0 / h).round() as usize;
    if ((atoms as f64) * h - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("1/h must be an integer".into()));
    }
    let bins = atoms * refine;
    let width = 1.0 / bins as f64;
    // Atom k carries mass h and sits at the left edge of bin k * refine.
    let tv = (0..bins)
        .map(|b| {
            let mass = if b % refine == 0 { h } else { 0.0 };
            (mass / width - 1.0).abs() * width
        })
        .sum();
    Ok(tv)
}

/// Rounding counterexample at 8× histogram refinement.
pub fn rounding_counterexample(h: f64) -> Result<f64> {
    rounding_tv(h, 8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::dilation_1d;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lp_examples() {
        let dom = RectDomain::unit(2);
        let id = |x: &[f64]| x.to_vec();
        assert_eq!(lp_map_error(&id, &id, &dom, 2.0, 8).unwrap(), 0.0);
        let shifted = |x: &[f64]| vec![x[0] + 0.3, x[1]];
        assert_abs_diff_eq!(
            lp_map_error(&id, &shifted, &dom, 3.0, 8).unwrap(),
            0.3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tv_examples() {
        let u = GridDensity::uniform(1, 1025);
        let lin = GridDensity::from_fn(&[1025], |x| 2.0 * x[0]).unwrap();
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
        assert_abs_diff_eq!(tv_distance(&u, &lin).unwrap(), 0.5, epsilon = 1e-5);
        let other = GridDensity::uniform(1, 17);
        assert!(matches!(
            tv_distance(&u, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn dilation_pushforward() {
        let s = dilation_1d(2f64.ln(), 0.0, 1, 1.0).unwrap();
        let rho = GridDensity::uniform(1, 65);
        let grid = GridDensity::from_fn_on(vec![0.0], vec![2.0], &[129], |_| 0.0).unwrap();
        let p = pushforward_density(&Transport::Flow(&s), &rho, &grid).unwrap();
        assert_abs_diff_eq!(p.eval(&[1.3]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.integral(), 1.0, epsilon = 1e-2);
    }

    #[test]
    fn oscillation_values() {
        let (sup, tv) = oscillation_counterexample(0.1, 1.0 / 64.0).unwrap();
        assert_abs_diff_eq!(sup, 0.1 / 64.0, epsilon = 1e-9);
        assert!((tv - 0.4).abs() < 0.008);
        assert!(oscillation_counterexample(0.2, 0.1).is_err());
    }

    #[test]
    fn rounding_values() {
        assert_abs_diff_eq!(
            rounding_counterexample(0.125).unwrap(),
            1.75,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(rounding_tv(0.125, 1).unwrap(), 0.0, epsilon = 1e-12);
    }
}

//! Boxes, Kuhn triangulations, point location and Lagrange interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{factorial, signed_volume, Affine};

/// Tolerance for "inside the domain" and barycentric containment.
pub const LOCATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RectDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidInput("box needs lower < upper".into()));
        }
        Ok(RectDomain { lower, upper })
    }

    pub fn unit(d: usize) -> Self {
        RectDomain {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn side(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.side(k)).product()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Centers of a uniform `res^d` grid of cells, with the cell volume.
    pub fn cell_centers(&self, res: usize) -> (Vec<Vec<f64>>, f64) {
        let d = self.dim();
        let n = res.pow(d as u32);
        let mut pts = Vec::with_capacity(n);
        for idx in 0..n {
            let mut rem = idx;
            let mut p = vec![0.0; d];
            for k in (0..d).rev() {
                let i = rem % res;
                rem /= res;
                p[k] = self.lower[k] + (i as f64 + 0.5) * self.side(k) / res as f64;
            }
            pts.push(p);
        }
        (pts, self.volume() / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
}

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let d = vertices.first().map_or(0, |v| v.len());
        if vertices.len() != d + 1 || vertices.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidInput(
                "simplex needs d+1 points in R^d".into(),
            ));
        }
        let s = Simplex { vertices };
        if s.volume() <= 0.0 {
            return Err(Error::InvalidInput("degenerate simplex".into()));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn volume(&self) -> f64 {
        signed_volume(&self.vertices).abs()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let n = self.vertices.len() as f64;
        (0..self.dim())
            .map(|k| self.vertices.iter().map(|v| v[k]).sum::<f64>() / n)
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        crate::linalg::barycentric(&self.vertices, x).is_some_and(|l| l.iter().all(|v| *v >= -tol))
    }

    /// Point with the given (unnormalized, non-negative) barycentric weights.
    pub fn point(&self, weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        (0..self.dim())
            .map(|k| {
                self.vertices
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| v[k] * w)
                    .sum::<f64>()
                    / total
            })
            .collect()
    }
}

/// Structured grid data of a Kuhn triangulation, used for constant-time point location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuhnGrid {
    pub lower: Vec<f64>,
    pub counts: Vec<usize>,
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub d: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
    pub h: f64,
    pub grid: Option<KuhnGrid>,
}

/// Permutations of `0..d` in lexicographic order.
pub fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(cur, used, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; d], &mut out);
    out
}

/// Row-major multi-index helpers (last axis fastest).
pub(crate) fn unravel(mut idx: usize, counts: &[usize]) -> Vec<usize> {
    let mut out = vec![0; counts.len()];
    for k in (0..counts.len()).rev() {
        out[k] = idx % counts[k];
        idx /= counts[k];
    }
    out
}

pub(crate) fn ravel(multi: &[usize], counts: &[usize]) -> usize {
    multi.iter().zip(counts).fold(0, |acc, (m, c)| acc * c + m)
}

/// Uniform grid split into `d!` Kuhn simplices per cell. If `h` does not divide a side,
/// that axis uses the largest step below `h` that does.
pub fn kuhn_triangulate(domain: &RectDomain, h: f64) -> Result<Triangulation> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("mesh size {h}")));
    }
    let d = domain.dim();
    let counts: Vec<usize> = (0..d)
        .map(|k| ((domain.side(k) / h) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let steps: Vec<f64> = (0..d).map(|k| domain.side(k) / counts[k] as f64).collect();
    let vcounts: Vec<usize> = counts.iter().map(|c| c + 1).collect();
    let nv: usize = vcounts.iter().product();
    let vertices: Vec<Vec<f64>> = (0..nv)
        .map(|i| {
            let m = unravel(i, &vcounts);
            (0..d)
                .map(|k| {
                    if m[k] == counts[k] {
                        domain.upper[k]
                    } else {
                        domain.lower[k] + m[k] as f64 * steps[k]
                    }
                })
                .collect()
        })
        .collect();
    let perms = permutations(d);
    let ncells: usize = counts.iter().product();
    let mut simplices = Vec::with_capacity(ncells * perms.len());
    for c in 0..ncells {
        let corner = unravel(c, &counts);
        for p in &perms {
            let mut m = corner.clone();
            let mut s = Vec::with_capacity(d + 1);
            s.push(ravel(&m, &vcounts));
            for &axis in p {
                m[axis] += 1;
                s.push(ravel(&m, &vcounts));
            }
            simplices.push(s);
        }
    }
    Ok(Triangulation {
        d,
        vertices,
        simplices,
        h: steps.iter().fold(0.0f64, |a, b| a.max(*b)),
        grid: Some(KuhnGrid {
            lower: domain.lower.clone(),
            counts,
            steps,
        }),
    })
}

impl Triangulation {
    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn simplex(&self, j: usize) -> Simplex {
        Simplex {
            vertices: self.simplices[j]
                .iter()
                .map(|&v| self.vertices[v].clone())
                .collect(),
        }
    }

    pub fn simplex_vertices(&self, j: usize) -> Vec<Vec<f64>> {
        self.simplices[j]
            .iter()
            .map(|&v| self.vertices[v].clone())
            .collect()
    }

    pub fn volume(&self, j: usize) -> f64 {
        signed_volume(&self.simplex_vertices(j)).abs()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.len()).map(|j| self.volume(j)).sum()
    }

    /// Axis-aligned bounding box of all vertices.
    pub fn bounding_box(&self) -> RectDomain {
        let mut lo = vec![f64::INFINITY; self.d];
        let mut hi = vec![f64::NEG_INFINITY; self.d];
        for v in &self.vertices {
            for k in 0..self.d {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        RectDomain {
            lower: lo,
            upper: hi,
        }
    }

    /// Containing simplex; ties on shared faces go to the lowest simplex index.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        match &self.grid {
            Some(g) => self.locate_kuhn(g, x),
            None => self.locate_brute(x),
        }
    }

    /// Reference point location by scanning every simplex.
    pub fn locate_brute(&self, x: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&j| self.simplex(j).contains(x, LOCATE_TOL))
    }

    fn locate_kuhn(&self, g: &KuhnGrid, x: &[f64]) -> Option<usize> {
        let d = self.d;
        let mut choices: Vec<Vec<(usize, f64)>> = Vec::with_capacity(d);
        for k in 0..d {
            let t = (x[k] - g.lower[k]) / g.steps[k];
            let n = g.counts[k] as f64;
            if t < -LOCATE_TOL / g.steps[k] || t > n + LOCATE_TOL / g.steps[k] {
                return None;
            }
            let c = t.floor().clamp(0.0, n - 1.0);
            let u = (t - c).clamp(0.0, 1.0);
            let mut opts = vec![(c as usize, u)];
            if u < 1e-12 && c >= 1.0 {
                opts.insert(0, (c as usize - 1, 1.0));
            }
            choices.push(opts);
        }
        // Lowest cell index first: the first choice on each axis is the lower one.
        let cell: Vec<usize> = choices.iter().map(|o| o[0].0).collect();
        let u: Vec<f64> = choices.iter().map(|o| o[0].1).collect();
        let c = ravel(&cell, &g.counts);
        let perms = permutations(d);
        let p = perms
            .iter()
            .position(|p| p.windows(2).all(|w| u[w[0]] >= u[w[1]] - 1e-12))
            .unwrap_or(0);
        Some(c * perms.len() + p)
    }
}

/// Bucket grid for locating points among arbitrary simplices.
#[derive(Debug, Clone)]
pub struct SimplexLocator {
    lower: Vec<f64>,
    cell: Vec<f64>,
    counts: Vec<usize>,
    buckets: Vec<Vec<u32>>,
    bary: Vec<Affine>,
}

impl SimplexLocator {
    pub fn new(simplices: &[Vec<Vec<f64>>]) -> Result<Self> {
        let d = simplices.first().map_or(1, |s| s[0].len());
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut size = 0.0;
        for s in simplices {
            for k in 0..d {
                let (a, b) = s
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v[k]), b.max(v[k]))
                    });
                lo[k] = lo[k].min(a);
                hi[k] = hi[k].max(b);
                size += b - a;
            }
        }
        if simplices.is_empty() {
            return Ok(SimplexLocator {
                lower: vec![0.0; d],
                cell: vec![1.0; d],
                counts: vec![1; d],
                buckets: vec![Vec::new()],
                bary: Vec::new(),
            });
        }
        let mean = (size / (simplices.len() * d) as f64).max(1e-12);
        let counts: Vec<usize> = (0..d)
            .map(|k| (((hi[k] - lo[k]) / mean).ceil() as usize).clamp(1, 4096))
            .collect();
        let cell: Vec<f64> = (0..d)
            .map(|k| ((hi[k] - lo[k]) / counts[k] as f64).max(1e-12))
            .collect();
        let total: usize = counts.iter().product();
        let mut buckets = vec![Vec::new(); total];
        let mut bary = Vec::with_capacity(simplices.len());
        let unit: Vec<Vec<f64>> = (0..=d)
            .map(|i| (0..d).map(|k| if i == k + 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        for (j, s) in simplices.iter().enumerate() {
            bary.push(Affine::from_vertices(s, &unit).map_err(|_| Error::DegenerateSimplex(j))?);
            let mut lo_i = vec![0usize; d];
            let mut hi_i = vec![0usize; d];
            for k in 0..d {
                let (a, b) = s
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v[k]), b.max(v[k]))
                    });
                lo_i[k] = (((a - lo[k]) / cell[k]).floor().max(0.0) as usize).min(counts[k] - 1);
                hi_i[k] = (((b - lo[k]) / cell[k]).floor().max(0.0) as usize).min(counts[k] - 1);
            }
            let mut m = lo_i.clone();
            'odometer: loop {
                buckets[ravel(&m, &counts)].push(j as u32);
                let mut k = d;
                while k > 0 {
                    k -= 1;
                    if m[k] < hi_i[k] {
                        m[k] += 1;
                        continue 'odometer;
                    }
                    m[k] = lo_i[k];
                }
                break;
            }
        }
        Ok(SimplexLocator {
            lower: lo,
            cell,
            counts,
            buckets,
            bary,
        })
    }

    /// Barycentric coordinates of `x` in simplex `j`.
    pub fn barycentric(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let lam = self.bary[j].apply(x);
        let mut out = Vec::with_capacity(lam.len() + 1);
        out.push(1.0 - lam.iter().sum::<f64>());
        out.extend(lam);
        out
    }

    /// Lowest-index simplex containing `x` within `tol` in barycentric coordinates.
    pub fn locate(&self, x: &[f64], tol: f64) -> Option<usize> {
        let d = self.lower.len();
        let mut m = vec![0usize; d];
        for k in 0..d {
            let t = ((x[k] - self.lower[k]) / self.cell[k]).floor();
            if t < -1.0 || t > self.counts[k] as f64 {
                return None;
            }
            m[k] = (t.max(0.0) as usize).min(self.counts[k] - 1);
        }
        self.buckets[ravel(&m, &self.counts)]
            .iter()
            .map(|&j| j as usize)
            .filter(|&j| self.barycentric(j, x).iter().all(|v| *v >= -tol))
            .min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffineMap {
    pub triangulation: Triangulation,
    pub pieces: Vec<Affine>,
}

/// Interpolates vertex values `values[v]` affinely on every simplex.
pub fn lagrange_interpolate(
    values: &[Vec<f64>],
    tri: &Triangulation,
) -> Result<PiecewiseAffineMap> {
    check_dim(tri.vertices.len(), values.len())?;
    let mut pieces = Vec::with_capacity(tri.len());
    for (j, s) in tri.simplices.iter().enumerate() {
        let src: Vec<Vec<f64>> = s.iter().map(|&v| tri.vertices[v].clone()).collect();
        let dst: Vec<Vec<f64>> = s.iter().map(|&v| values[v].clone()).collect();
        if dst
            .iter()
            .any(|p| p.len() != tri.d || p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput(format!("bad sample at simplex {j}")));
        }
        pieces.push(Affine::from_vertices(&src, &dst).map_err(|_| Error::DegenerateSimplex(j))?);
    }
    Ok(PiecewiseAffineMap {
        triangulation: tri.clone(),
        pieces,
    })
}

/// Samples `f` at the vertices and interpolates.
pub fn interpolate_fn(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    tri: &Triangulation,
) -> Result<PiecewiseAffineMap> {
    let values: Vec<Vec<f64>> = tri.vertices.iter().map(|v| f(v)).collect();
    lagrange_interpolate(&values, tri)
}

pub fn eval_pa_map(map: &PiecewiseAffineMap, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(map.triangulation.d, x.len())?;
    let j = map
        .triangulation
        .locate(x)
        .ok_or_else(|| Error::OutOfDomain(x.to_vec()))?;
    Ok(map.pieces[j].apply(x))
}

impl PiecewiseAffineMap {
    pub fn dim(&self) -> usize {
        self.triangulation.d
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        eval_pa_map(self, x)
    }

    /// Image of the vertices of simplex `j`.
    pub fn image_vertices(&self, j: usize) -> Vec<Vec<f64>> {
        self.triangulation
            .simplex_vertices(j)
            .iter()
            .map(|v| self.pieces[j].apply(v))
            .collect()
    }

    /// Largest disagreement between pieces sharing a vertex.
    pub fn max_vertex_mismatch(&self) -> f64 {
        let tri = &self.triangulation;
        let mut first: Vec<Option<Vec<f64>>> = vec![None; tri.vertices.len()];
        let mut worst = 0.0f64;
        for (j, s) in tri.simplices.iter().enumerate() {
            for &v in s {
                let y = self.pieces[j].apply(&tri.vertices[v]);
                match &first[v] {
                    None => first[v] = Some(y),
                    Some(y0) => worst = worst.max(crate::linalg::dist(y0, &y)),
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeomorphismReport {
    pub positive: usize,
    pub negative: usize,
    pub near_singular: usize,
    pub min_abs_det: f64,
    pub mixed: bool,
    pub orientation_reversing: bool,
}

impl HomeomorphismReport {
    /// Uniformly positive orientation with no near-singular pieces.
    pub fn passes(&self) -> bool {
        self.negative == 0 && self.near_singular == 0 && self.positive > 0
    }
}

pub fn validate_homeomorphism(map: &PiecewiseAffineMap) -> HomeomorphismReport {
    let mut r = HomeomorphismReport {
        positive: 0,
        negative: 0,
        near_singular: 0,
        min_abs_det: f64::INFINITY,
        mixed: false,
        orientation_reversing: false,
    };
    for p in &map.pieces {
        let det = p.det();
        r.min_abs_det = r.min_abs_det.min(det.abs());
        if det.abs() < 1e-10 {
            r.near_singular += 1;
        } else if det > 0.0 {
            r.positive += 1;
        } else {
            r.negative += 1;
        }
    }
    r.mixed = r.positive > 0 && r.negative > 0;
    r.orientation_reversing = r.negative > 0 && r.positive == 0;
    r
}

/// Number of simplices `d! Π n_k` a Kuhn triangulation with these cell counts has.
pub fn kuhn_simplex_count(counts: &[usize]) -> usize {
    factorial(counts.len()) as usize * counts.iter().product::<usize>()
}

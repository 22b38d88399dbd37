//! Factorization of a piecewise-affine homeomorphism as `m2 ∘ g ∘ m1`, with `m1`, `m2`
//! measure preserving cell exchanges and `g` a monotone map of the first coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compressible::{eval_profile, MonotoneProfile};
use crate::error::{Error, Result};
use crate::linalg::{dist, factorial, signed_volume, Affine};
use crate::mesh::{validate_homeomorphism, PiecewiseAffineMap, SimplexLocator, Triangulation};

/// One exchanged cell: `map` sends `source` onto its image and the image back by the inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub source: Vec<Vec<f64>>,
    pub map: Affine,
}

impl Cell {
    pub fn image(&self) -> Vec<Vec<f64>> {
        self.source.iter().map(|v| self.map.apply(v)).collect()
    }
}

/// Measure-preserving involution exchanging each source cell with its image; identity elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<Cell>", into = "Vec<Cell>")]
pub struct CellMap {
    cells: Vec<Cell>,
    inverses: Vec<Affine>,
    locator: SimplexLocator,
}

impl From<Vec<Cell>> for CellMap {
    fn from(cells: Vec<Cell>) -> Self {
        CellMap::new(cells).expect("cell map with degenerate cells")
    }
}

impl From<CellMap> for Vec<Cell> {
    fn from(m: CellMap) -> Self {
        m.cells
    }
}

impl CellMap {
    pub fn new(cells: Vec<Cell>) -> Result<Self> {
        let inverses = cells
            .iter()
            .map(|c| c.map.inverse())
            .collect::<Result<Vec<_>>>()?;
        let mut all: Vec<Vec<Vec<f64>>> = cells.iter().map(|c| c.source.clone()).collect();
        all.extend(cells.iter().map(|c| c.image()));
        let locator = SimplexLocator::new(&all)?;
        Ok(CellMap {
            cells,
            inverses,
            locator,
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cells.first().map_or(0, |c| c.map.dim())
    }

    /// Largest `||det A| - 1|` over cells.
    pub fn max_det_defect(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| (c.map.det().abs() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let n = self.cells.len();
        match self.locator.locate(x, 1e-12) {
            Some(k) if k < n => self.cells[k].map.apply(x),
            Some(k) => self.inverses[k - n].apply(x),
            None => x.to_vec(),
        }
    }
}

pub fn eval_cell_map(m: &CellMap, x: &[f64]) -> Vec<f64> {
    m.eval(x)
}

/// Placement of the reference simplices along `e_1` beyond the domain and its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerLayout {
    pub l: f64,
    /// Unit-volume reference simplex whose projection on `x_1` is `[0, 1]`.
    pub reference: Vec<Vec<f64>>,
    /// Edge scales `s_j = V_j^{1/d}`.
    pub scales: Vec<f64>,
    /// Partial sums of the scales in tower order.
    pub heights: Vec<f64>,
    /// Tower slot of each simplex.
    pub slot: Vec<usize>,
}

impl TowerLayout {
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let k = self.slot[j];
        (self.l + self.heights[k], self.l + self.heights[k + 1])
    }

    /// Vertices of the tower simplex `△'_j`.
    pub fn simplex(&self, j: usize) -> Vec<Vec<f64>> {
        let s = self.scales[j];
        let x0 = self.interval(j).0;
        self.reference
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = r.iter().map(|c| s * c).collect();
                v[0] += x0;
                v
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Total tower length `H_n`.
    pub fn height(&self) -> f64 {
        *self.heights.last().unwrap_or(&0.0)
    }
}

/// Kuhn simplex `{1 >= x_1 >= … >= x_d >= 0}` stretched in `x_2..x_d` to unit volume.
pub fn reference_simplex(d: usize) -> Vec<Vec<f64>> {
    let stretch = if d > 1 {
        factorial(d).powf(1.0 / (d as f64 - 1.0))
    } else {
        1.0
    };
    (0..=d)
        .map(|i| {
            (0..d)
                .map(|k| match (k < i, k) {
                    (false, _) => 0.0,
                    (true, 0) => 1.0,
                    (true, _) => stretch,
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Factorization {
    pub m1: CellMap,
    pub profile: MonotoneProfile,
    pub m2: CellMap,
    pub layout: TowerLayout,
    pub lambda: Vec<f64>,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.layout.reference[0].len()
    }

    /// `g(x) = ζ(x_1) e_1 + Σ_{k>1} x_k e_k`.
    pub fn g(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        y[0] = eval_profile(&self.profile, x[0]);
        y
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.m2.eval(&self.g(&self.m1.eval(x)))
    }

    /// Composition restricted to simplex `j`, exact on its closure.
    pub fn eval_in(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let y = self.m1.cells()[j].map.apply(x);
        self.m2.cells()[j].map.apply(&self.g(&y))
    }
}

/// Builds the tower, the exchanges `B_j`, `C_j` and the profile with slopes `λ_j`.
pub fn polar_factorize(map: &PiecewiseAffineMap) -> Result<Factorization> {
    let order: Vec<usize> = (0..map.triangulation.len()).collect();
    polar_factorize_ordered(map, &order)
}

/// Simplex order that walks the mesh cells boustrophedon-style, so consecutive tower
/// slots come from neighbouring cells.
pub fn serpentine_order(tri: &Triangulation) -> Vec<usize> {
    let d = tri.d;
    let mut lo = vec![f64::INFINITY; d];
    for v in &tri.vertices {
        for k in 0..d {
            lo[k] = lo[k].min(v[k]);
        }
    }
    let keys: Vec<Vec<i64>> = (0..tri.len())
        .map(|j| {
            let b = tri.simplex(j).barycenter();
            (0..d)
                .map(|k| ((b[k] - lo[k]) / tri.h).floor() as i64)
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..tri.len()).collect();
    // Snake key: the outermost axis is the last one; each axis reverses when the parity of
    // the coordinates outside it is odd.
    let snake = |c: &[i64]| -> Vec<i64> {
        let mut out = vec![0; d];
        let mut parity = 0;
        for k in (0..d).rev() {
            out[d - 1 - k] = if parity % 2 == 0 { c[k] } else { -c[k] };
            parity += c[k];
        }
        out
    };
    order.sort_by_key(|&j| (snake(&keys[j]), j));
    order
}

/// As [`polar_factorize`] with simplex `order[k]` placed in tower slot `k`.
pub fn polar_factorize_ordered(map: &PiecewiseAffineMap, order: &[usize]) -> Result<Factorization> {
    let report = validate_homeomorphism(map);
    if !report.passes() {
        let why = if report.mixed {
            "mixed orientation"
        } else if report.orientation_reversing {
            "orientation reversing"
        } else {
            "singular piece"
        };
        return Err(Error::NotFactorizable(why.into()));
    }
    let tri = &map.triangulation;
    let d = tri.d;
    let n = tri.len();
    let mut hi0 = f64::NEG_INFINITY;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for j in 0..n {
        for v in tri
            .simplex_vertices(j)
            .iter()
            .chain(map.image_vertices(j).iter())
        {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::TowerPlacement("non-finite vertex".into()));
            }
            for k in 0..d {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
            hi0 = hi0.max(v[0]);
        }
    }
    let extent = (0..d).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let l = hi0 + extent.max(2.0);

    let mut slot = vec![usize::MAX; n];
    for (k, &j) in order.iter().enumerate() {
        if j >= n || slot[j] != usize::MAX {
            return Err(Error::InvalidInput(
                "tower order is not a permutation".into(),
            ));
        }
        slot[j] = k;
    }
    if order.len() != n {
        return Err(Error::InvalidInput(
            "tower order is not a permutation".into(),
        ));
    }
    let reference = reference_simplex(d);
    let scales: Vec<f64> = (0..n).map(|j| tri.volume(j).powf(1.0 / d as f64)).collect();
    let mut heights = vec![0.0];
    for &j in order {
        heights.push(heights.last().unwrap() + scales[j]);
    }
    let layout = TowerLayout {
        l,
        reference,
        scales,
        heights,
        slot,
    };
    let lambda: Vec<f64> = map.pieces.iter().map(|p| p.det()).collect();

    let mut breakpoints = vec![l - 1.0];
    breakpoints.extend(layout.heights.iter().map(|h| l + h));
    breakpoints.push(l + layout.height() + 1.0);
    let mut slopes = vec![1.0];
    slopes.extend(order.iter().map(|&j| lambda[j]));
    slopes.push(1.0);
    let profile = MonotoneProfile::new(breakpoints, slopes, 0.0)?;

    let g = |x: &[f64]| {
        let mut y = x.to_vec();
        y[0] = eval_profile(&profile, x[0]);
        y
    };
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for j in 0..n {
        let src = tri.simplex_vertices(j);
        let mut tower = layout.simplex(j);
        if signed_volume(&src).signum() != signed_volume(&tower).signum() {
            tower.swap(d - 1, d);
        }
        let b = Affine::from_vertices(&src, &tower).map_err(|_| Error::DegenerateSimplex(j))?;
        let gt: Vec<Vec<f64>> = tower.iter().map(|v| g(v)).collect();
        let c = Affine::from_vertices(&gt, &map.image_vertices(j))
            .map_err(|_| Error::DegenerateSimplex(j))?;
        c1.push(Cell {
            source: src,
            map: b,
        });
        c2.push(Cell { source: gt, map: c });
    }
    let f = Factorization {
        m1: CellMap::new(c1)?,
        profile,
        m2: CellMap::new(c2)?,
        layout,
        lambda,
    };
    let err = vertex_error(map, &f);
    if !(err <= 1e-9 * (1.0 + extent)) {
        return Err(Error::NotFactorizable(format!(
            "vertex identity fails by {err:e}"
        )));
    }
    Ok(f)
}

/// Largest `|m2 g m1 (v) − φ(v)|` over simplex vertices, composed cell by cell.
pub fn vertex_error(map: &PiecewiseAffineMap, f: &Factorization) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..map.triangulation.len() {
        for v in map.triangulation.simplex_vertices(j) {
            worst = worst.max(dist(&f.eval_in(j, &v), &map.pieces[j].apply(&v)));
        }
    }
    worst
}

/// Largest `|m2 g m1 (x) − φ(x)|` over barycenters, composed through the cell maps.
pub fn barycenter_error(map: &PiecewiseAffineMap, f: &Factorization) -> f64 {
    (0..map.triangulation.len())
        .map(|j| {
            let b = map.triangulation.simplex(j).barycenter();
            dist(&f.eval(&b), &map.pieces[j].apply(&b))
        })
        .fold(0.0, f64::max)
}

/// Largest composition error over `n_samples` points drawn inside the simplices.
pub fn check_factorization(map: &PiecewiseAffineMap, f: &Factorization, n_samples: usize) -> f64 {
    let tri = &map.triangulation;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = tri.d;
    let mut worst = 0.0f64;
    for s in 0..n_samples {
        let j = s % tri.len();
        // Uniform barycentric weights, kept away from the faces.
        let mut w: Vec<f64> = (0..=d)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3)
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let x = tri.simplex(j).point(&w);
        worst = worst.max(dist(&f.eval(&x), &map.pieces[j].apply(&x)));
    }
    worst
}

/// Volumes `Σ |g(△'_j)|` and `Σ |φ(△_j)|`.
pub fn volume_ledger(map: &PiecewiseAffineMap, f: &Factorization) -> (f64, f64) {
    let tower: f64 =
        f.m2.cells()
            .iter()
            .map(|c| signed_volume(&c.source).abs())
            .sum();
    let image: f64 = (0..map.triangulation.len())
        .map(|j| signed_volume(&map.image_vertices(j)).abs())
        .sum();
    (tower, image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interpolate_fn, kuhn_triangulate, RectDomain, Triangulation};
    use approx::assert_abs_diff_eq;

    fn single(vertices: Vec<Vec<f64>>) -> Triangulation {
        Triangulation {
            d: vertices[0].len(),
            simplices: vec![(0..vertices.len()).collect()],
            vertices,
            h: 1.0,
            grid: None,
        }
    }

    #[test]
    fn reference_simplex_has_unit_volume() {
        for d in 1..=4 {
            let r = reference_simplex(d);
            assert_abs_diff_eq!(signed_volume(&r).abs(), 1.0, epsilon = 1e-12);
            let (lo, hi) = r
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v[0]), b.max(v[0]))
                });
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn identity_on_one_simplex() {
        let tri = single(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let map = interpolate_fn(&|x| x.to_vec(), &tri).unwrap();
        let f = polar_factorize(&map).unwrap();
        assert_abs_diff_eq!(f.lambda[0], 1.0, epsilon = 1e-14);
        assert!(f.profile.slopes.iter().all(|s| (s - 1.0).abs() < 1e-14));
        assert!(vertex_error(&map, &f) < 1e-12);
        assert!(check_factorization(&map, &f, 100) < 1e-12);
    }

    #[test]
    fn scaled_simplex_gets_lambda_two() {
        let tri = single(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let map = interpolate_fn(&|x| vec![2.0 * x[0], x[1]], &tri).unwrap();
        let f = polar_factorize(&map).unwrap();
        assert_abs_diff_eq!(f.lambda[0], 2.0, epsilon = 1e-14);
        assert_eq!(f.profile.slopes, vec![1.0, f.lambda[0], 1.0]);
        let (a, b) = f.layout.interval(0);
        assert_abs_diff_eq!(b - a, 0.5f64.sqrt(), epsilon = 1e-14);
        assert!(f.m1.max_det_defect() < 1e-12 && f.m2.max_det_defect() < 1e-12);
    }

    #[test]
    fn sine_shear_square() {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 1.0).unwrap();
        let map = interpolate_fn(
            &|x| vec![x[0], x[1] + 0.25 * (std::f64::consts::PI * x[0]).sin()],
            &tri,
        )
        .unwrap();
        let f = polar_factorize(&map).unwrap();
        assert!(vertex_error(&map, &f) <= 1e-9);
        assert!(check_factorization(&map, &f, 1000) <= 1e-9);
    }

    #[test]
    fn cell_map_is_an_involution() {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 0.25).unwrap();
        let map = interpolate_fn(&|x| vec![x[0] + 0.3 * x[1], 1.5 * x[1]], &tri).unwrap();
        let f = polar_factorize(&map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = vec![rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
            assert!(dist(&f.m1.eval(&f.m1.eval(&x)), &x) < 1e-10);
        }
        let outside = vec![-3.0, 0.5];
        assert_eq!(f.m1.eval(&outside), outside);
        let (t, i) = volume_ledger(&map, &f);
        assert_abs_diff_eq!(t, i, epsilon = 1e-9);
    }

    #[test]
    fn serpentine_order_is_adjacent() {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 0.25).unwrap();
        let order = serpentine_order(&tri);
        let mut seen = order.clone();
        seen.sort();
        assert_eq!(seen, (0..tri.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            let a = tri.simplex(w[0]).barycenter();
            let b = tri.simplex(w[1]).barycenter();
            assert!(dist(&a, &b) < 0.25 * 1.5, "{a:?} {b:?}");
        }
        let map = interpolate_fn(&|x| vec![x[0] + 0.3 * x[1], 1.5 * x[1]], &tri).unwrap();
        let f = polar_factorize_ordered(&map, &order).unwrap();
        assert!(check_factorization(&map, &f, 500) < 1e-10);
        assert!(polar_factorize_ordered(&map, &order[1..]).is_err());
    }

    #[test]
    fn rejects_mixed_orientation() {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 0.5).unwrap();
        let fold = |x: &[f64]| vec![(x[0] - 0.5).abs(), x[1]];
        let map = interpolate_fn(&fold, &tri).unwrap();
        assert!(matches!(
            polar_factorize(&map),
            Err(Error::NotFactorizable(_))
        ));
    }
}

//! End-to-end realization of a target map: interpolation, polar factorization and the
//! three flow stages (cube exchange, profile, cube exchange), with error evaluation.

use serde::{Deserialize, Serialize};

use crate::catalog::TargetMap;
use crate::compressible::{eval_profile, invert_profile, profile_schedule, MonotoneProfile};
use crate::error::{Error, Result};
use crate::factorize::{polar_factorize_ordered, serpentine_order, Factorization};
use crate::incompressible::{
    mp_realize, permutation_to_adjacent_transpositions, CubeGrid, MpOptions, MpRealization,
    MpReport, Pairing, Permutation, SwapPlan,
};
use crate::kr::GridDensity;
use crate::linalg::Affine;
use crate::mesh::{
    interpolate_fn, kuhn_triangulate, PiecewiseAffineMap, RectDomain, SimplexLocator,
};
use crate::metrics::lp_from_values;
use crate::schedule::{ControlSchedule, PointBatch, SegmentRef, SegmentSource};

/// Where the domain is parked while the profile stage acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tower {
    /// A row of whole cubes, one profile piece per cube.
    #[default]
    CubeRow,
    /// The simplex tower of the polar factorization.
    Simplicial,
}

/// Order of the simplices along the simplicial tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TowerOrder {
    /// Simplices enter the tower in mesh order.
    Natural,
    /// Boustrophedon walk over the mesh cells.
    #[default]
    Serpentine,
}

/// Map realized by the second cube exchange of the simplicial tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondExchange {
    /// The cell map `m2` of the factorization.
    Factorized,
    /// `φ_L ∘ M1⁻¹ ∘ G⁻¹` on the image of the tower and its inverse on `φ_L(Ω)`, where `M1`
    /// is the realized cube permutation. Coincides with `m2` when `M1 = m1`.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target: TargetMap,
    pub domain: RectDomain,
    /// Source density on the domain; `None` is uniform.
    #[serde(default)]
    pub density: Option<GridDensity>,
    pub mesh_h: f64,
    pub cube_h: f64,
    pub delta: f64,
    pub p: f64,
    /// Both errors must stay below this for the run to pass.
    pub epsilon: f64,
    /// Cells per axis for the `L^p` error.
    pub eval_res: usize,
    /// Nodes per axis for the TV error.
    pub tv_res: usize,
    #[serde(default)]
    pub tower: Tower,
    #[serde(default)]
    pub tower_order: TowerOrder,
    #[serde(default)]
    pub second_exchange: SecondExchange,
    #[serde(default = "default_pairing")]
    pub pairing: Pairing,
}

/// Default gap between cube cores relative to the cube side.
pub const DEFAULT_GAP: f64 = 1.0 / 1048576.0;

fn default_pairing() -> Pairing {
    Pairing::MinCost
}

impl PipelineConfig {
    /// Uniform density on `[0,1]^d`, `p = 2`, cube gap `h · 2⁻²⁰`.
    pub fn unit(target: TargetMap, d: usize, h: f64) -> Self {
        PipelineConfig {
            target,
            domain: RectDomain::unit(d),
            density: None,
            mesh_h: h,
            cube_h: h,
            delta: h * DEFAULT_GAP,
            p: 2.0,
            epsilon: 0.1,
            eval_res: 128,
            tv_res: 257,
            tower: Tower::default(),
            tower_order: TowerOrder::default(),
            second_exchange: SecondExchange::default(),
            pairing: Pairing::MinCost,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain.dim();
        self.target.validate(d)?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.mesh_h) || !positive(self.cube_h) || !positive(self.epsilon) {
            return Err(Error::InvalidInput(
                "mesh_h, cube_h and epsilon must be positive".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < self.cube_h) {
            return Err(Error::InvalidInput("need 0 < delta < cube_h".into()));
        }
        if !(self.p >= 1.0) || self.eval_res == 0 || self.tv_res < 2 {
            return Err(Error::InvalidInput(
                "need p >= 1, eval_res >= 1, tv_res >= 2".into(),
            ));
        }
        if let Some(rho) = &self.density {
            crate::error::check_dim(rho.dim(), d)?;
        }
        Ok(())
    }

    fn rho(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        let vol = self.domain.volume();
        move |x: &[f64]| match &self.density {
            Some(g) => g.eval(x),
            None if self.domain.contains(x, 0.0) => 1.0 / vol,
            None => 0.0,
        }
    }
}

/// Result of [`PipelinePlan::flow_points`].
#[derive(Debug, Clone, PartialEq)]
pub struct Flowed {
    pub points: Vec<Vec<f64>>,
    pub logdets: Vec<f64>,
    /// Points that sat outside every core at some swap (counted once per swap stage).
    pub gap_points: usize,
}

/// The concatenated schedule in compact form: two swap plans around a profile schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub d: usize,
    pub m1: Option<SwapPlan>,
    pub g: ControlSchedule,
    pub m2: Option<SwapPlan>,
}

impl PipelinePlan {
    pub fn empty(d: usize) -> Self {
        PipelinePlan {
            d,
            m1: None,
            g: ControlSchedule::new(d),
            m2: None,
        }
    }

    fn parts(&self) -> Vec<&dyn SegmentSource> {
        let mut parts: Vec<&dyn SegmentSource> = Vec::new();
        if let Some(m) = &self.m1 {
            parts.push(m);
        }
        parts.push(&self.g);
        if let Some(m) = &self.m2 {
            parts.push(m);
        }
        parts
    }

    /// Flows `points` forward (or backward). Swap stages use the sparse evaluator and
    /// carry no log-Jacobian.
    pub fn flow_points(&self, points: &[Vec<f64>], inverse: bool) -> Flowed {
        let mut gap_points = 0;
        let mut swap = |m: &Option<SwapPlan>, pts: Vec<Vec<f64>>| match m {
            Some(m) => {
                let (out, loose) = m.flow_points_counted(&pts, inverse, 1e-9 * m.grid.h);
                gap_points += loose;
                out
            }
            None => pts,
        };
        let profile = |pts: Vec<Vec<f64>>| {
            let mut batch = PointBatch::new(self.d, &pts);
            batch.flow(&self.g, inverse);
            (batch.points(), batch.logdets().to_vec())
        };
        let (first, last) = if inverse {
            (&self.m2, &self.m1)
        } else {
            (&self.m1, &self.m2)
        };
        let pts = swap(first, points.to_vec());
        let (pts, logdets) = profile(pts);
        let points = swap(last, pts);
        Flowed {
            points,
            logdets,
            gap_points,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

impl SegmentSource for PipelinePlan {
    fn dim(&self) -> usize {
        self.d
    }

    fn segment_count(&self) -> usize {
        self.parts().iter().map(|p| p.segment_count()).sum()
    }

    fn visit(&self, inverse: bool, f: &mut dyn FnMut(SegmentRef<'_>)) {
        crate::schedule::Chain::new(self.d, self.parts()).visit(inverse, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub segments: usize,
    pub swaps: usize,
    pub moved_cubes: usize,
    pub grid_cubes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub errors: Evaluation,
    pub simplices: usize,
    pub stages: Vec<StageReport>,
    /// Total switches of the concatenated schedule.
    pub switch_count: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct Realization {
    pub plan: PipelinePlan,
    pub report: PipelineReport,
    pub factorization: Option<Factorization>,
}

/// Builds the plan for `config` and evaluates it.
pub fn realize(config: &PipelineConfig) -> Result<Realization> {
    let (plan, factorization, mut stages, simplices) = build_plan(config)?;
    let eval = evaluate(config, &plan)?;
    stages[1].segments = plan.g.len();
    let total = plan.segment_count();
    Ok(Realization {
        report: PipelineReport {
            errors: eval,
            simplices,
            stages,
            switch_count: total.saturating_sub(1),
            passed: eval.lp_error <= config.epsilon && eval.tv_error <= config.epsilon,
        },
        plan,
        factorization,
    })
}

type Built = (PipelinePlan, Option<Factorization>, Vec<StageReport>, usize);

fn stage(name: &str, plan: Option<&SwapPlan>, moved: usize) -> StageReport {
    StageReport {
        name: name.into(),
        segments: plan.map_or(0, |p| p.segment_count()),
        swaps: plan.map_or(0, |p| p.swaps.len()),
        moved_cubes: moved,
        grid_cubes: plan.map_or(0, |p| p.grid.len()),
    }
}

fn build_plan(config: &PipelineConfig) -> Result<Built> {
    config.validate()?;
    let d = config.domain.dim();
    let mut plan = PipelinePlan::empty(d);
    match &config.target {
        TargetMap::Identity => {
            let stages = vec![
                stage("m1", None, 0),
                stage("g", None, 0),
                stage("m2", None, 0),
            ];
            return Ok((plan, None, stages, 0));
        }
        TargetMap::Profile { profile } => {
            plan.g = profile_schedule(profile, d)?;
            let stages = vec![
                stage("m1", None, 0),
                stage("g", None, 0),
                stage("m2", None, 0),
            ];
            return Ok((plan, None, stages, 0));
        }
        _ => {}
    }
    let tri = kuhn_triangulate(&config.domain, config.mesh_h)?;
    let pa = interpolate_fn(&|x| config.target.eval(x), &tri)?;
    let report = crate::mesh::validate_homeomorphism(&pa);
    if !report.passes() {
        return Err(Error::NotFactorizable(
            "interpolant is not orientation preserving".into(),
        ));
    }
    let options = MpOptions {
        pairing: config.pairing,
        p: config.p,
        residual_samples: 0,
    };
    let images: Vec<Vec<f64>> = (0..pa.triangulation.len())
        .flat_map(|j| pa.image_vertices(j))
        .collect();
    let mut cloud = images;
    cloud.push(config.domain.lower.clone());
    cloud.push(config.domain.upper.clone());
    let (m1, m2, fact) = match config.tower {
        Tower::CubeRow => {
            let (m1, m2) = cube_row(config, &pa, &mut plan, cloud, options)?;
            (m1, m2, None)
        }
        Tower::Simplicial => {
            let (m1, m2, fact) = simplicial(config, &pa, &mut plan, cloud, options)?;
            (m1, m2, Some(fact))
        }
    };
    let stages = vec![
        stage("m1", Some(&m1.plan), m1.report.moved_cubes),
        stage("g", None, 0),
        stage("m2", Some(&m2.plan), m2.report.moved_cubes),
    ];
    plan.m1 = Some(m1.plan);
    plan.m2 = Some(m2.plan);
    Ok((plan, fact, stages, tri.len()))
}

fn second_exchange(
    config: &PipelineConfig,
    pa: &PiecewiseAffineMap,
    profile: &MonotoneProfile,
    grid: &CubeGrid,
    m1: &MpRealization,
    row: Option<(f64, f64)>,
    options: MpOptions,
) -> Result<MpRealization> {
    let mut c = Corrected::new(&config.domain, pa, profile, grid, &m1.permutation)?;
    c.row = row;
    mp_realize(&|y| c.eval(y), grid, options)
}

/// Tower of whole cubes: the domain cubes, in boustrophedon order, are exchanged into one
/// row to the right of everything, the profile stretches cube `k` of the row by the
/// volume ratio `|φ_L(□_k)| / |□_k|`, and the second exchange sends the stretched row onto
/// `φ_L(Ω)`.
fn cube_row(
    config: &PipelineConfig,
    pa: &PiecewiseAffineMap,
    plan: &mut PipelinePlan,
    mut cloud: Vec<Vec<f64>>,
    options: MpOptions,
) -> Result<(MpRealization, MpRealization)> {
    let d = config.domain.dim();
    let (h, delta) = (config.cube_h, config.delta);
    let anchor = &config.domain.lower;
    let margin = window_pad(config) + h;
    // Cubes of the domain, on a grid aligned with its lower corner.
    let counts: Vec<usize> = (0..d)
        .map(|k| ((config.domain.side(k) / h) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let local = CubeGrid::new(anchor.clone(), counts.clone(), h, delta)?;
    let mut cells: Vec<usize> = (0..local.len()).collect();
    cells.sort_by_key(|&i| snake_key(&local.multi(i)));
    let ratios: Vec<f64> = cells
        .iter()
        .map(|&i| volume_ratio(pa, &local.corner(i), h))
        .collect::<Result<_>>()?;

    let right = cloud.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max) + margin;
    let start = anchor[0] + ((right + 2.0 - anchor[0]) / h).ceil() * h;
    let n = cells.len() as f64;
    let stretched: f64 = ratios.iter().sum::<f64>() * h;
    let mut row_end = anchor.clone();
    row_end[0] = start + n.max(stretched / h) * h + margin;
    cloud.push(row_end);
    let grid = aligned_grid(anchor, &cloud, margin, h, delta)?;

    // First exchange: domain cube `k` (in walk order) ↔ row cube `k`.
    let offset: Vec<usize> = (0..d)
        .map(|k| ((anchor[k] - grid.origin[k]) / h).round() as usize)
        .collect();
    let first_col = ((start - grid.origin[0]) / h).round() as usize;
    let mut sigma: Vec<usize> = (0..grid.len()).collect();
    for (k, &i) in cells.iter().enumerate() {
        let m = local.multi(i);
        let src: Vec<usize> = (0..d).map(|a| m[a] + offset[a]).collect();
        let mut dst = offset.clone();
        dst[0] = first_col + k;
        let (a, b) = (grid.index(&src), grid.index(&dst));
        sigma[a] = b;
        sigma[b] = a;
    }
    let m1 = realize_permutation(Permutation::new(sigma)?, &grid)?;

    let mut breakpoints = vec![start - 1.0];
    breakpoints.extend((0..=cells.len()).map(|k| start + k as f64 * h));
    breakpoints.push(start + n * h + 1.0);
    let mut slopes = vec![1.0];
    slopes.extend(&ratios);
    slopes.push(1.0);
    let profile = MonotoneProfile::new(breakpoints, slopes, 0.0)?;
    plan.g = profile_schedule(&profile, d)?;
    let row = Some((start, start + n * h));
    let m2 = second_exchange(config, pa, &profile, &grid, &m1, row, options)?;
    Ok((m1, m2))
}

/// Boustrophedon key: the last axis is outermost and each axis reverses with the parity of
/// the coordinates outside it.
fn snake_key(m: &[usize]) -> Vec<i64> {
    let d = m.len();
    let mut out = vec![0; d];
    let mut parity = 0;
    for k in (0..d).rev() {
        let c = m[k] as i64;
        out[d - 1 - k] = if parity % 2 == 0 { c } else { -c };
        parity += c;
    }
    out
}

/// `|φ_L(□)| / |□|` for the cube with corner `corner` and side `h`, by midpoint quadrature
/// of the piecewise-constant Jacobian.
fn volume_ratio(pa: &PiecewiseAffineMap, corner: &[f64], h: f64) -> Result<f64> {
    let d = corner.len();
    let q = 8usize;
    let total = q.pow(d as u32);
    let mut sum = 0.0;
    for n in 0..total {
        let mut rem = n;
        let x: Vec<f64> = (0..d)
            .map(|k| {
                let i = rem % q;
                rem /= q;
                corner[k] + (i as f64 + 0.5) * h / q as f64
            })
            .collect();
        let j = pa
            .triangulation
            .locate(&x)
            .ok_or_else(|| Error::InvalidInput(format!("cube point {x:?} outside the mesh")))?;
        sum += pa.pieces[j].det();
    }
    Ok(sum / total as f64)
}

fn realize_permutation(sigma: Permutation, grid: &CubeGrid) -> Result<MpRealization> {
    let swaps = permutation_to_adjacent_transpositions(&sigma, grid);
    let plan = SwapPlan::new(grid.clone(), swaps)?;
    let segments = plan.segment_count();
    Ok(MpRealization {
        report: MpReport {
            residual: None,
            swaps: plan.swaps.len(),
            switch_count: segments.saturating_sub(1),
            moved_cubes: sigma
                .map
                .iter()
                .enumerate()
                .filter(|(i, j)| *i != **j)
                .count(),
        },
        permutation: sigma,
        plan,
    })
}

/// The simplicial tower of the polar factorization, each cell map realized on cubes.
fn simplicial(
    config: &PipelineConfig,
    pa: &PiecewiseAffineMap,
    plan: &mut PipelinePlan,
    mut cloud: Vec<Vec<f64>>,
    options: MpOptions,
) -> Result<(MpRealization, MpRealization, Factorization)> {
    let d = config.domain.dim();
    let tri = &pa.triangulation;
    let order = match config.tower_order {
        TowerOrder::Natural => (0..tri.len()).collect(),
        TowerOrder::Serpentine => serpentine_order(tri),
    };
    let fact = polar_factorize_ordered(pa, &order)?;
    let (h, delta) = (config.cube_h, config.delta);
    // One grid serves both exchanges: it covers the domain, its image, the tower and the
    // raised tower, with a margin that contains the TV window.
    cloud.extend(fact.m1.cells().iter().flat_map(|c| c.image()));
    cloud.extend(fact.m2.cells().iter().flat_map(|c| c.source.clone()));
    let margin = window_pad(config) + h;
    let grid = aligned_grid(&config.domain.lower, &cloud, margin, h, delta)?;
    let m1 = mp_realize(&|x| fact.m1.eval(x), &grid, options)?;
    plan.g = profile_schedule(&fact.profile, d)?;
    let m2 = match config.second_exchange {
        SecondExchange::Factorized => mp_realize(&|y| fact.m2.eval(y), &grid, options)?,
        SecondExchange::Corrected => {
            second_exchange(config, pa, &fact.profile, &grid, &m1, None, options)?
        }
    };
    Ok((m1, m2, fact))
}

/// Padding of the TV window around the target image of the domain.
fn window_pad(config: &PipelineConfig) -> f64 {
    2.0 * config.cube_h.max(config.mesh_h)
}

/// Smallest grid of spacing `h` aligned with `anchor` that covers `points` widened by `margin`.
fn aligned_grid(
    anchor: &[f64],
    points: &[Vec<f64>],
    margin: f64,
    h: f64,
    delta: f64,
) -> Result<CubeGrid> {
    let d = anchor.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in points {
        for k in 0..d {
            lo[k] = lo[k].min(v[k] - margin);
            hi[k] = hi[k].max(v[k] + margin);
        }
    }
    let origin: Vec<f64> = (0..d)
        .map(|k| anchor[k] + ((lo[k] - anchor[k]) / h + 1e-9).floor() * h)
        .collect();
    CubeGrid::covering(&origin, &hi, h, delta)
}

/// `φ_L ∘ M1⁻¹ ∘ G⁻¹` on the raised tower and its inverse on `φ_L(Ω)`; identity elsewhere.
struct Corrected<'a> {
    domain: &'a RectDomain,
    pa: &'a PiecewiseAffineMap,
    profile: &'a MonotoneProfile,
    profile_inv: MonotoneProfile,
    grid: &'a CubeGrid,
    sigma: &'a Permutation,
    sigma_inv: Permutation,
    images: SimplexLocator,
    inverses: Vec<Affine>,
    /// `x_1`-range of the cube row, if the tower is one.
    row: Option<(f64, f64)>,
}

impl<'a> Corrected<'a> {
    fn new(
        domain: &'a RectDomain,
        pa: &'a PiecewiseAffineMap,
        profile: &'a MonotoneProfile,
        grid: &'a CubeGrid,
        sigma: &'a Permutation,
    ) -> Result<Self> {
        let simplices: Vec<Vec<Vec<f64>>> = (0..pa.triangulation.len())
            .map(|j| pa.image_vertices(j))
            .collect();
        let inverses = pa
            .pieces
            .iter()
            .map(|a| a.inverse())
            .collect::<Result<Vec<_>>>()?;
        Ok(Corrected {
            domain,
            pa,
            profile,
            profile_inv: invert_profile(profile),
            grid,
            sigma,
            sigma_inv: sigma.inverse(),
            images: SimplexLocator::new(&simplices)?,
            inverses,
            row: None,
        })
    }

    fn moved(&self, x: &[f64], from: usize, to: usize) -> Vec<f64> {
        let a = self.grid.corner(from);
        let b = self.grid.corner(to);
        (0..x.len()).map(|k| x[k] - a[k] + b[k]).collect()
    }

    fn in_domain(&self, cube: usize) -> bool {
        self.domain.contains(&self.grid.center(cube), 0.0)
    }

    fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        x[0] = eval_profile(&self.profile_inv, y[0]);
        if let Some((_, end)) = self.row {
            // The raised row ends inside a cube; its empty part follows the last cube.
            if x[0] >= end && x[0] < end + self.grid.h {
                x[0] = end - 0.5 * self.grid.core_side();
            }
        }
        if let Some(to) = self.grid.cube_of(&x) {
            let from = self.sigma_inv.map[to];
            if from != to && self.in_domain(from) {
                let mut src = self.moved(&x, to, from);
                for (k, v) in src.iter_mut().enumerate() {
                    *v = v.clamp(self.domain.lower[k], self.domain.upper[k]);
                }
                return self.pa.eval(&src).unwrap_or(src);
            }
        }
        if let Some(j) = self.images.locate(y, 1e-12) {
            let src = self.inverses[j].apply(y);
            if let Some(from) = self.grid.cube_of(&src) {
                let to = self.sigma.map[from];
                let mut out = self.moved(&src, from, to);
                out[0] = eval_profile(self.profile, out[0]);
                return out;
            }
        }
        y.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub lp_error: f64,
    pub tv_error: f64,
    /// Mass carried outside the TV window (counted in `tv_error`).
    pub escaped_mass: f64,
    /// Fraction of `L^p` sample points that crossed a gap between cores.
    pub gap_fraction: f64,
}

/// Errors of `plan` against the configured target.
pub fn evaluate(config: &PipelineConfig, plan: &PipelinePlan) -> Result<Evaluation> {
    let rho = config.rho();
    let target = &config.target;
    let (pts, vol) = config.domain.cell_centers(config.eval_res);
    let forward = plan.flow_points(&pts, false);
    let images = forward.points;
    let wanted: Vec<Vec<f64>> = pts.iter().map(|x| target.eval(x)).collect();
    let lp = lp_from_values(&images, &wanted, vol, config.p);

    // TV window: the target image of the domain, padded by two cubes.
    let d = config.domain.dim();
    let pad = window_pad(config);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for y in &wanted {
        for k in 0..d {
            lo[k] = lo[k].min(y[k] - pad);
            hi[k] = hi[k].max(y[k] + pad);
        }
    }
    let shape = vec![config.tv_res; d];
    let grid = GridDensity::from_fn_on(lo.clone(), hi.clone(), &shape, |_| 0.0)?;
    let nodes = grid.nodes();
    let mut exact = Vec::with_capacity(nodes.len());
    for y in &nodes {
        let x = target.inverse(y)?;
        let r = rho(&x);
        exact.push(if r == 0.0 {
            0.0
        } else {
            r / target.jacobian_det(&x).abs()
        });
    }
    let backward = plan.flow_points(&nodes, true);
    let (back, logdets) = (backward.points, backward.logdets);
    let realized: Vec<f64> = back
        .iter()
        .zip(&logdets)
        .map(|(x, ld)| rho(x) * ld.exp())
        .collect();
    let window = RectDomain::new(lo, hi)?;
    let escaped: f64 = pts
        .iter()
        .zip(&images)
        .filter(|(_, y)| !window.contains(y, 0.0))
        .map(|(x, _)| rho(x) * vol)
        .fold(0.0, |a, b| a + b);
    let a = GridDensity::new(grid.lower.clone(), grid.upper.clone(), shape.clone(), exact)?;
    let b = GridDensity::new(grid.lower, grid.upper, shape, realized)?;
    let tv = crate::metrics::tv_distance(&a, &b)? + escaped;
    Ok(Evaluation {
        lp_error: lp,
        tv_error: tv,
        escaped_mass: escaped,
        gap_fraction: forward.gap_points as f64 / pts.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_target_gives_empty_plan() {
        let r = realize(&PipelineConfig::unit(TargetMap::Identity, 2, 0.25)).unwrap();
        assert_eq!(r.plan.segment_count(), 0);
        assert_eq!(r.report.errors.lp_error, 0.0);
        assert_eq!(r.report.errors.tv_error, 0.0);
        assert!(r.report.passed);
    }

    #[test]
    fn profile_target_is_exact() {
        let profile =
            MonotoneProfile::new(vec![0.0, 0.3, 0.7, 1.0], vec![0.5, 2.0, 0.75], 0.1).unwrap();
        let mut config = PipelineConfig::unit(
            TargetMap::Profile {
                profile: profile.clone(),
            },
            2,
            0.25,
        );
        config.eval_res = 32;
        config.tv_res = 65;
        let r = realize(&config).unwrap();
        assert_eq!(r.plan.g, profile_schedule(&profile, 2).unwrap());
        assert!(
            r.report.errors.lp_error <= 1e-9,
            "{}",
            r.report.errors.lp_error
        );
    }

    #[test]
    fn plan_round_trips_through_json() {
        let mut config = PipelineConfig::unit(TargetMap::sine_shear(0.25), 2, 0.5);
        config.eval_res = 8;
        config.tv_res = 9;
        let r = realize(&config).unwrap();
        let back = PipelinePlan::from_json(&r.plan.to_json()).unwrap();
        assert_eq!(back, r.plan);
    }
}

//! Measure-preserving maps realized by cube permutations.
//!
//! A map is reduced to a permutation of the cores of a cube grid, the permutation to
//! adjacent transpositions, and each transposition to a divergence-free swap flow built
//! from shear translations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadgets::push_shear;
use crate::mesh::{ravel, unravel};
use crate::schedule::{ControlSchedule, PointBatch, SegmentRef, SegmentSource};

/// Cubes `origin + h·k` for `0 <= k < counts`, with cores `[c, c + h - δ]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeGrid {
    pub origin: Vec<f64>,
    pub counts: Vec<usize>,
    pub h: f64,
    pub delta: f64,
}

impl CubeGrid {
    pub fn new(origin: Vec<f64>, counts: Vec<usize>, h: f64, delta: f64) -> Result<Self> {
        if !(h > 0.0) || !(delta > 0.0) || !(delta < h) {
            return Err(Error::InvalidInput(format!(
                "need 0 < δ < h, got h={h}, δ={delta}"
            )));
        }
        if origin.len() != counts.len() || counts.contains(&0) {
            return Err(Error::InvalidInput(
                "grid needs at least one cube per axis".into(),
            ));
        }
        Ok(CubeGrid {
            origin,
            counts,
            h,
            delta,
        })
    }

    /// The box `[-l, l]^d`.
    pub fn symmetric(l: f64, h: f64, delta: f64, d: usize) -> Result<Self> {
        let n = ((2.0 * l / h) - 1e-9).ceil().max(1.0) as usize;
        CubeGrid::new(vec![-l; d], vec![n; d], h, delta)
    }

    /// Smallest grid with origin `lower` covering `[lower, upper]`.
    pub fn covering(lower: &[f64], upper: &[f64], h: f64, delta: f64) -> Result<Self> {
        let counts = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| (((u - l) / h) - 1e-9).ceil().max(1.0) as usize)
            .collect();
        CubeGrid::new(lower.to_vec(), counts, h, delta)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi(&self, idx: usize) -> Vec<usize> {
        unravel(idx, &self.counts)
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        ravel(multi, &self.counts)
    }

    pub fn corner(&self, idx: usize) -> Vec<f64> {
        self.multi(idx)
            .iter()
            .zip(&self.origin)
            .map(|(m, o)| o + *m as f64 * self.h)
            .collect()
    }

    pub fn extent(&self, k: usize) -> f64 {
        self.counts[k] as f64 * self.h
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.origin[k] + self.extent(k))
            .collect()
    }

    /// Side length of a core.
    pub fn core_side(&self) -> f64 {
        self.h - self.delta
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let half = 0.5 * self.core_side();
        self.corner(idx).iter().map(|c| c + half).collect()
    }

    /// Cube whose half-open cell `[c, c + h)` contains `x`.
    pub fn cube_of(&self, x: &[f64]) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = ((x[k] - self.origin[k]) / self.h).floor();
            if t < 0.0 || t >= self.counts[k] as f64 {
                return None;
            }
            m.push(t as usize);
        }
        Some(self.index(&m))
    }

    /// Whether `x` lies in core `idx` shrunk by `margin` (negative margins enlarge).
    pub fn in_core(&self, idx: usize, x: &[f64], margin: f64) -> bool {
        let side = self.core_side();
        self.corner(idx)
            .iter()
            .zip(x)
            .all(|(c, v)| *v >= c + margin && *v <= c + side - margin)
    }

    /// Core containing `x` up to `tol`, if any.
    pub fn core_of(&self, x: &[f64], tol: f64) -> Option<usize> {
        let side = self.core_side();
        let mut m = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = (x[k] - self.origin[k]) / self.h;
            let c = t.floor();
            let mut pick = None;
            for cand in [c, c - 1.0] {
                if cand < 0.0 || cand >= self.counts[k] as f64 {
                    continue;
                }
                let lo = self.origin[k] + cand * self.h;
                if x[k] >= lo - tol && x[k] <= lo + side + tol {
                    pick = Some(cand as usize);
                    break;
                }
            }
            m.push(pick?);
        }
        Some(self.index(&m))
    }

    /// `3^d` stencil of core points: corners, edge midpoints and the center.
    pub fn stencil(&self, idx: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let corner = self.corner(idx);
        let side = self.core_side();
        let three = vec![3; d];
        (0..3usize.pow(d as u32))
            .map(|s| {
                unravel(s, &three)
                    .iter()
                    .zip(&corner)
                    .map(|(k, c)| c + 0.5 * side * *k as f64)
                    .collect()
            })
            .collect()
    }

    /// `k^d` midpoint samples of core `idx`, each carrying volume `side^d / k^d`.
    pub fn core_samples(&self, idx: usize, k: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let corner = self.corner(idx);
        let side = self.core_side();
        let ks = vec![k; d];
        (0..k.pow(d as u32))
            .map(|s| {
                unravel(s, &ks)
                    .iter()
                    .zip(&corner)
                    .map(|(i, c)| c + side * (*i as f64 + 0.5) / k as f64)
                    .collect()
            })
            .collect()
    }

    /// Whether two cubes differ by one step along exactly one axis; returns that axis.
    pub fn adjacent_axis(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.multi(i), self.multi(j));
        let diff: Vec<usize> = (0..self.dim()).filter(|&k| a[k] != b[k]).collect();
        match diff.as_slice() {
            [k] if a[*k].abs_diff(b[*k]) == 1 => Some(*k),
            _ => None,
        }
    }
}

/// Bijection on cube indices in array form: the core `i` is sent to core `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || seen[j] {
                return Err(Error::InvalidInput("not a bijection".into()));
            }
            seen[j] = true;
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, j)| i == *j)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { map: inv }
    }

    /// Nontrivial cycles `(a_1 … a_k)` with `map[a_r] = a_{r+1}`.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.map.len()];
        let mut out = Vec::new();
        for start in 0..self.map.len() {
            if seen[start] || self.map[start] == start {
                continue;
            }
            let mut cyc = Vec::new();
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                cyc.push(i);
                i = self.map[i];
            }
            out.push(cyc);
        }
        out
    }

    /// Permutation produced by exchanging contents along `swaps` in time order.
    pub fn from_swaps(n: usize, swaps: &[(usize, usize)]) -> Permutation {
        // content[p] = original index of the content sitting at position p.
        let mut content: Vec<usize> = (0..n).collect();
        for &(a, b) in swaps {
            content.swap(a, b);
        }
        let mut map = vec![0; n];
        for (pos, &orig) in content.iter().enumerate() {
            map[orig] = pos;
        }
        Permutation { map }
    }
}

/// How cubes without a clean image core are paired with unclaimed targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    /// Minimum total squared distance between the image of the source center and the target center.
    MinCost,
    /// Sorted sources against sorted targets.
    Lexicographic,
}

/// Reduces `m` to a permutation of grid cores.
pub fn mp_to_permutation(
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    grid: &CubeGrid,
    pairing: Pairing,
) -> Result<Permutation> {
    let n = grid.len();
    let tol = 1e-9 * grid.h;
    let mut target = vec![usize::MAX; n];
    let mut claimed_by = vec![usize::MAX; n];
    let mut bad = Vec::new();
    for i in 0..n {
        let mut good = None;
        for (s, p) in grid.stencil(i).iter().enumerate() {
            let j = grid.core_of(&m(p), tol);
            match (s, j, good) {
                (0, Some(j), _) => good = Some(j),
                (_, Some(j), Some(g)) if j == g => {}
                _ => {
                    good = None;
                    break;
                }
            }
        }
        match good {
            Some(j) => {
                if claimed_by[j] != usize::MAX {
                    return Err(Error::Conflict {
                        first: claimed_by[j],
                        second: i,
                        target: j,
                    });
                }
                claimed_by[j] = i;
                target[i] = j;
            }
            None => bad.push(i),
        }
    }
    let free: Vec<usize> = (0..n).filter(|j| claimed_by[*j] == usize::MAX).collect();
    debug_assert_eq!(free.len(), bad.len());
    match pairing {
        Pairing::Lexicographic => {
            for (i, j) in bad.iter().zip(&free) {
                target[*i] = *j;
            }
        }
        Pairing::MinCost => {
            let images: Vec<Vec<f64>> = bad.iter().map(|&i| m(&grid.center(i))).collect();
            let centers: Vec<Vec<f64>> = free.iter().map(|&j| grid.center(j)).collect();
            let assign = min_cost_assignment(images.len(), |r, c| {
                images[r]
                    .iter()
                    .zip(&centers[c])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            });
            for (r, c) in assign.into_iter().enumerate() {
                target[bad[r]] = free[c];
            }
        }
    }
    Permutation::new(target)
}

/// Square assignment problem by the shortest-augmenting-path Hungarian method.
/// Returns the column chosen for each row.
pub fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Grid path from `a` to `b` moving along axis 0 first, then axis 1, and so on.
fn grid_path(grid: &CubeGrid, a: usize, b: usize) -> Vec<usize> {
    let mut cur = grid.multi(a);
    let goal = grid.multi(b);
    let mut out = vec![a];
    for k in 0..grid.dim() {
        while cur[k] != goal[k] {
            if cur[k] < goal[k] {
                cur[k] += 1;
            } else {
                cur[k] -= 1;
            }
            out.push(grid.index(&cur));
        }
    }
    out
}

/// Adjacent swaps, in time order, whose composition is `σ`.
pub fn permutation_to_adjacent_transpositions(
    sigma: &Permutation,
    grid: &CubeGrid,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for cyc in sigma.cycles() {
        let hub = cyc[0];
        for &other in &cyc[1..] {
            let path = grid_path(grid, hub, other);
            let steps: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0], w[1])).collect();
            out.extend_from_slice(&steps);
            out.extend(steps.iter().rev().skip(1));
        }
    }
    out
}

/// Translation of `{x_axis >= c}` by `tau e_shift`, identity on `{x_axis <= c - ramp}`.
fn shift_above(s: &mut ControlSchedule, axis: usize, c: f64, ramp: f64, shift: usize, tau: f64) {
    push_shear(s, axis, shift, 1, -(c - ramp), ramp, tau).expect("valid shear");
}

/// Translation of `{x_axis <= c}` by `tau e_shift`, identity on `{x_axis >= c + ramp}`.
fn shift_below(s: &mut ControlSchedule, axis: usize, c: f64, ramp: f64, shift: usize, tau: f64) {
    push_shear(s, axis, shift, -1, c + ramp, ramp, tau).expect("valid shear");
}

fn check_pair(grid: &CubeGrid, i: usize, j: usize) -> Result<usize> {
    if grid.dim() < 2 {
        return Err(Error::Unsupported(
            "swaps need a transverse axis (d >= 2)".into(),
        ));
    }
    if i >= grid.len() || j >= grid.len() {
        return Err(Error::InvalidInput(format!(
            "cube index out of range: ({i}, {j})"
        )));
    }
    grid.adjacent_axis(i, j)
        .ok_or_else(|| Error::InvalidInput(format!("cubes {i} and {j} are not adjacent")))
}

/// Appends the swap of adjacent cores `i`, `j` to `out`.
pub fn push_swap(out: &mut ControlSchedule, i: usize, j: usize, grid: &CubeGrid) -> Result<()> {
    let s = check_pair(grid, i, j)?;
    let (lo, _) = if grid.multi(i)[s] < grid.multi(j)[s] {
        (i, j)
    } else {
        (j, i)
    };
    let d = grid.dim();
    let t = if s == 0 { 1 } else { 0 };
    let (h, delta) = (grid.h, grid.delta);
    let c = grid.corner(lo);
    let (cs, ct) = (c[s], c[t]);
    let shift_s = (grid.counts[s] + 2) as f64 * h;
    let shift_t = (grid.counts[t] + 2) as f64 * h;

    let mut iso = ControlSchedule::with_capacity(d, 2 * (4 + 2 * (d - 2)));
    // Park every other core in the quadrant x_s <= c_s - δ, x_t <= c_t - δ.
    shift_above(&mut iso, t, ct + h, delta, s, -shift_s);
    shift_above(&mut iso, s, cs + 2.0 * h, delta, t, -shift_t);
    shift_below(&mut iso, s, cs - delta, delta, t, -shift_t);
    for m in (0..d).filter(|m| *m != s && *m != t) {
        shift_above(&mut iso, m, c[m] + h, delta, t, -shift_t);
        shift_below(&mut iso, m, c[m] - delta, delta, t, -shift_t);
    }
    shift_below(&mut iso, t, ct - delta, delta, s, -shift_s);
    out.extend(&iso);
    // Exchange using the empty cells to the right of and above the pair.
    shift_above(out, t, ct, delta, s, h);
    shift_above(out, s, cs + 2.0 * h, delta, t, h);
    shift_above(out, t, ct + h, delta, s, -2.0 * h);
    shift_above(out, s, cs, delta, t, -h);
    shift_above(out, s, cs + h, delta, t, h);
    out.extend(&crate::schedule::invert_schedule(&iso));
    Ok(())
}

/// Divergence-free schedule exchanging the cores of adjacent cubes `i` and `j`.
pub fn swap_schedule(i: usize, j: usize, grid: &CubeGrid) -> Result<ControlSchedule> {
    let mut out = ControlSchedule::new(grid.dim());
    push_swap(&mut out, i, j, grid)?;
    Ok(out)
}

/// Segments per swap in dimension `d`.
pub fn swap_segment_count(d: usize) -> usize {
    2 * (2 * (4 + 2 * (d - 2)) + 5)
}

/// A sequence of swaps whose segments are generated on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapPlan {
    pub grid: CubeGrid,
    pub swaps: Vec<(usize, usize)>,
}

impl SwapPlan {
    pub fn new(grid: CubeGrid, swaps: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &swaps {
            check_pair(&grid, i, j)?;
        }
        Ok(SwapPlan { grid, swaps })
    }
}

impl SegmentSource for SwapPlan {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn segment_count(&self) -> usize {
        self.swaps.len() * swap_segment_count(self.grid.dim())
    }

    fn visit(&self, inverse: bool, f: &mut dyn FnMut(SegmentRef<'_>)) {
        let mut buf = ControlSchedule::with_capacity(self.dim(), swap_segment_count(self.dim()));
        let mut emit = |&(i, j): &(usize, usize)| {
            buf.clear();
            push_swap(&mut buf, i, j, &self.grid).expect("validated swap");
            buf.visit(inverse, f);
        };
        if inverse {
            self.swaps.iter().rev().for_each(&mut emit);
        } else {
            self.swaps.iter().for_each(&mut emit);
        }
    }
}

impl SwapPlan {
    /// Flows `points` through the plan.
    ///
    /// A swap translates core `i` onto core `j` and back and fixes every other core, so
    /// points within `tol` of a core are moved by the exact corner offset; only points
    /// in no core are integrated through the swap segments. Agrees with a full
    /// evaluation up to rounding.
    pub fn flow_points(&self, points: &[Vec<f64>], inverse: bool, tol: f64) -> Vec<Vec<f64>> {
        self.flow_points_counted(points, inverse, tol).0
    }

    /// As [`SwapPlan::flow_points`], also returning how many points were outside every
    /// core at some swap.
    pub fn flow_points_counted(
        &self,
        points: &[Vec<f64>],
        inverse: bool,
        tol: f64,
    ) -> (Vec<Vec<f64>>, usize) {
        let d = self.dim();
        let mut pos: Vec<Vec<f64>> = points.to_vec();
        let mut bucket: Vec<Vec<u32>> = vec![Vec::new(); self.grid.len()];
        let mut loose: Vec<u32> = Vec::new();
        let mut touched = vec![false; points.len()];
        for (n, x) in pos.iter().enumerate() {
            match self.grid.core_of(x, tol) {
                Some(k) => bucket[k].push(n as u32),
                None => loose.push(n as u32),
            }
        }
        let mut buf = ControlSchedule::with_capacity(d, swap_segment_count(d));
        let mut moving: Vec<u32> = Vec::new();
        let mut run = |&(i, j): &(usize, usize)| {
            let (ci, cj) = (self.grid.corner(i), self.grid.corner(j));
            let mut from_i = std::mem::take(&mut bucket[i]);
            let mut from_j = std::mem::take(&mut bucket[j]);
            for &n in &from_i {
                let x = &mut pos[n as usize];
                for k in 0..d {
                    x[k] += cj[k] - ci[k];
                }
            }
            for &n in &from_j {
                let x = &mut pos[n as usize];
                for k in 0..d {
                    x[k] += ci[k] - cj[k];
                }
            }
            bucket[j].append(&mut from_i);
            bucket[i].append(&mut from_j);
            if loose.is_empty() {
                return;
            }
            moving.clear();
            moving.append(&mut loose);
            buf.clear();
            push_swap(&mut buf, i, j, &self.grid).expect("validated swap");
            let subset: Vec<Vec<f64>> = moving.iter().map(|&n| pos[n as usize].clone()).collect();
            let mut batch = PointBatch::new(d, &subset);
            batch.flow(&buf, inverse);
            for (k, &n) in moving.iter().enumerate() {
                touched[n as usize] = true;
                let y = batch.point(k);
                match self.grid.core_of(&y, tol) {
                    Some(c) => bucket[c].push(n),
                    None => loose.push(n),
                }
                pos[n as usize] = y;
            }
        };
        if inverse {
            self.swaps.iter().rev().for_each(&mut run);
        } else {
            self.swaps.iter().for_each(&mut run);
        }
        (pos, touched.iter().filter(|t| **t).count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpReport {
    /// `‖m − flow‖_{L^p}` over the grid cores, when requested.
    pub residual: Option<f64>,
    pub swaps: usize,
    pub switch_count: usize,
    pub moved_cubes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpRealization {
    pub permutation: Permutation,
    pub plan: SwapPlan,
    pub report: MpReport,
}

impl MpRealization {
    pub fn schedule(&self) -> ControlSchedule {
        self.plan.to_schedule()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpOptions {
    pub pairing: Pairing,
    pub p: f64,
    /// Core samples per axis for the residual; `0` skips it.
    pub residual_samples: usize,
}

impl Default for MpOptions {
    fn default() -> Self {
        MpOptions {
            pairing: Pairing::MinCost,
            p: 2.0,
            residual_samples: 2,
        }
    }
}

/// `‖m − flow‖_{L^p}` on midpoint samples of every core.
pub fn core_residual(
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    flow: &dyn SegmentSource,
    grid: &CubeGrid,
    p: f64,
    k: usize,
) -> f64 {
    let pts: Vec<Vec<f64>> = (0..grid.len())
        .flat_map(|i| grid.core_samples(i, k))
        .collect();
    let weight = grid.core_side().powi(grid.dim() as i32) / k.pow(grid.dim() as u32) as f64;
    let mut batch = PointBatch::new(grid.dim(), &pts);
    batch.flow(flow, false);
    let total: f64 = pts
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let y = batch.point(n);
            crate::linalg::dist(&m(x), &y).powf(p) * weight
        })
        .sum();
    total.powf(1.0 / p)
}

/// Map → permutation → adjacent swaps, with an optional core residual.
pub fn mp_realize(
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    grid: &CubeGrid,
    options: MpOptions,
) -> Result<MpRealization> {
    let sigma = mp_to_permutation(m, grid, options.pairing)?;
    let swaps = permutation_to_adjacent_transpositions(&sigma, grid);
    let plan = SwapPlan {
        grid: grid.clone(),
        swaps,
    };
    let segments = plan.segment_count();
    let residual = (options.residual_samples > 0)
        .then(|| core_residual(m, &plan, grid, options.p, options.residual_samples));
    Ok(MpRealization {
        report: MpReport {
            residual,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::flow_schedule;

    fn grid4() -> CubeGrid {
        CubeGrid::symmetric(1.0, 0.5, 0.125, 2).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = grid4();
        assert_eq!(g.len(), 16);
        assert_eq!(g.corner(0), vec![-1.0, -1.0]);
        assert_eq!(g.corner(1), vec![-1.0, -0.5]);
        assert_eq!(g.corner(4), vec![-0.5, -1.0]);
        assert_eq!(g.cube_of(&[0.1, 0.9]), Some(g.index(&[2, 3])));
        assert_eq!(g.core_of(&[0.45, 0.0], 1e-12), None);
        assert_eq!(g.core_of(&[0.3, 0.0], 1e-12), Some(g.index(&[2, 2])));
        assert_eq!(g.adjacent_axis(0, 1), Some(1));
        assert_eq!(g.adjacent_axis(0, 4), Some(0));
        assert_eq!(g.adjacent_axis(0, 5), None);
        assert_eq!(g.stencil(0).len(), 9);
    }

    #[test]
    fn hungarian_small_cases() {
        let c = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = min_cost_assignment(3, |i, j| c[i][j]);
        let total: f64 = a.iter().enumerate().map(|(i, j)| c[i][*j]).sum();
        assert_eq!(total, 5.0);
        assert!(min_cost_assignment(0, |_, _| 0.0).is_empty());
    }

    #[test]
    fn identity_map_is_identity_permutation() {
        let g = grid4();
        let p = mp_to_permutation(&|x| x.to_vec(), &g, Pairing::MinCost).unwrap();
        assert!(p.is_identity());
        assert!(permutation_to_adjacent_transpositions(&p, &g).is_empty());
    }

    #[test]
    fn single_adjacent_transposition() {
        let g = grid4();
        let mut map: Vec<usize> = (0..16).collect();
        map.swap(5, 6);
        let p = Permutation::new(map).unwrap();
        assert_eq!(permutation_to_adjacent_transpositions(&p, &g), vec![(5, 6)]);
    }

    #[test]
    fn three_cycle_on_a_line() {
        let g = CubeGrid::new(vec![0.0, 0.0], vec![3, 1], 1.0, 0.25).unwrap();
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let swaps = permutation_to_adjacent_transpositions(&p, &g);
        assert_eq!(Permutation::from_swaps(3, &swaps), p);
        assert!(swaps.iter().all(|(a, b)| g.adjacent_axis(*a, *b).is_some()));
    }

    #[test]
    fn conflict_is_reported() {
        let g = grid4();
        let squash = |x: &[f64]| vec![-0.9 + 0.01 * (x[0] + 1.0), -0.9 + 0.01 * (x[1] + 1.0)];
        assert!(matches!(
            mp_to_permutation(&squash, &g, Pairing::MinCost),
            Err(Error::Conflict { .. })
        ));
    }

    #[test]
    fn swap_rejects_bad_pairs() {
        let g = grid4();
        assert!(swap_schedule(3, 3, &g).is_err());
        assert!(swap_schedule(0, 5, &g).is_err());
        let line = CubeGrid::new(vec![0.0], vec![4], 1.0, 0.25).unwrap();
        assert!(matches!(
            swap_schedule(0, 1, &line),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn swap_moves_cores_exactly() {
        let g = grid4();
        let (i, j) = (g.index(&[1, 2]), g.index(&[2, 2]));
        let s = swap_schedule(i, j, &g).unwrap();
        assert_eq!(s.len(), swap_segment_count(2));
        for k in 0..g.len() {
            for x in g.core_samples(k, 3) {
                let y = flow_schedule(&x, &s).unwrap();
                assert_eq!(y.logdet, 0.0);
                let expect = if k == i {
                    j
                } else if k == j {
                    i
                } else {
                    k
                };
                let shift: Vec<f64> = g
                    .corner(expect)
                    .iter()
                    .zip(g.corner(k))
                    .map(|(a, b)| a - b)
                    .collect();
                for d in 0..2 {
                    assert!((y.x[d] - x[d] - shift[d]).abs() < 1e-12, "cube {k}");
                }
            }
        }
    }

    #[test]
    fn swap_plan_streams_same_segments() {
        let g = grid4();
        let plan = SwapPlan::new(g.clone(), vec![(0, 1), (5, 9)]).unwrap();
        let s = plan.to_schedule();
        let mut direct = swap_schedule(0, 1, &g).unwrap();
        direct.extend(&swap_schedule(5, 9, &g).unwrap());
        assert_eq!(s, direct);
        let mut inv = ControlSchedule::new(2);
        plan.visit(true, &mut |seg| inv.push_ref(seg));
        assert_eq!(inv, crate::schedule::invert_schedule(&direct));
    }

    #[test]
    fn sparse_flow_matches_full_flow() {
        let g = CubeGrid::symmetric(1.0, 0.25, 0.02, 2).unwrap();
        let rot = |x: &[f64]| vec![-x[1], x[0]];
        let r = mp_realize(&rot, &g, MpOptions::default()).unwrap();
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|k| {
                vec![
                    -1.1 + 2.2 * (k % 20) as f64 / 19.0,
                    -1.1 + 2.2 * (k / 20) as f64 / 19.0,
                ]
            })
            .collect();
        for inverse in [false, true] {
            let fast = r.plan.flow_points(&pts, inverse, 1e-9);
            let mut full = PointBatch::new(2, &pts);
            full.flow(&r.plan, inverse);
            for (k, y) in fast.iter().enumerate() {
                assert!(crate::linalg::dist(y, &full.point(k)) < 1e-9, "point {k}");
            }
        }
    }
}

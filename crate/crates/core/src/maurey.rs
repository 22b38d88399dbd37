//! Time-dependent Barron mixtures and their sampling by one neuron per time interval.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::schedule::{ControlSchedule, Neuron, PointBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarronAtom {
    pub neuron: Neuron,
    pub mass: f64,
}

impl BarronAtom {
    /// `c(θ) = |w| (R|a| + |b|)`.
    pub fn cost(&self, radius: f64) -> f64 {
        cost(&self.neuron, radius)
    }
}

pub fn cost(n: &Neuron, radius: f64) -> f64 {
    norm(&n.w) * (radius * norm(&n.a) + n.b.abs())
}

/// Field piecewise constant in time on the cells `[edges[i], edges[i+1])` of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMixture {
    pub d: usize,
    pub edges: Vec<f64>,
    pub cells: Vec<Vec<BarronAtom>>,
    pub radius: f64,
}

impl TimeMixture {
    pub fn new(
        d: usize,
        edges: Vec<f64>,
        cells: Vec<Vec<BarronAtom>>,
        radius: f64,
    ) -> Result<Self> {
        let m = TimeMixture {
            d,
            edges,
            cells,
            radius,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.edges;
        if e.len() != self.cells.len() + 1 || e.len() < 2 {
            return Err(Error::InvalidInput("need one more edge than cells".into()));
        }
        if e[0] != 0.0 || *e.last().unwrap() != 1.0 || e.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "time edges must increase from 0 to 1".into(),
            ));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidInput("radius must be positive".into()));
        }
        for atom in self.cells.iter().flatten() {
            crate::error::check_dim(self.d, atom.neuron.dim())?;
            if !(atom.mass >= 0.0) || !atom.neuron.is_finite() {
                return Err(Error::InvalidInput(
                    "atom masses must be finite and >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Cell containing `t`; `t = 1` belongs to the last cell.
    pub fn cell(&self, t: f64) -> usize {
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.partition_point(|e| *e <= t)
    }

    /// `r` on cell `i`: `Σ mass · c(θ)`.
    pub fn cell_rate(&self, i: usize) -> f64 {
        self.cells[i]
            .iter()
            .map(|a| a.mass * a.cost(self.radius))
            .sum()
    }

    /// `∫_s^t r`, exact for the piecewise-constant rate.
    pub fn rate_integral(&self, s: f64, t: f64) -> f64 {
        self.overlaps(s, t)
            .map(|(i, len)| len * self.cell_rate(i))
            .sum()
    }

    /// `(cell, overlap length)` for the cells meeting `[s, t]`.
    fn overlaps(&self, s: f64, t: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.cells.len()).filter_map(move |i| {
            let len = t.min(self.edges[i + 1]) - s.max(self.edges[i]);
            (len > 0.0).then_some((i, len))
        })
    }

    /// `∫_s^t u(τ, x) dτ`.
    pub fn field_integral(&self, s: f64, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (i, len) in self.overlaps(s, t) {
            let (v, _) = cell_field(&self.cells[i], x, self.d);
            for k in 0..self.d {
                out[k] += len * v[k];
            }
        }
        out
    }
}

fn cell_field(atoms: &[BarronAtom], x: &[f64], d: usize) -> (Vec<f64>, f64) {
    let mut v = vec![0.0; d];
    let mut div = 0.0;
    for atom in atoms {
        let f = atom.neuron.field(x);
        for k in 0..d {
            v[k] += atom.mass * f[k];
        }
        div += atom.mass * atom.neuron.divergence(x);
    }
    (v, div)
}

/// Field `u(t, x)` and its divergence.
pub fn eval_mixture(m: &TimeMixture, t: f64, x: &[f64]) -> (Vec<f64>, f64) {
    cell_field(&m.cells[m.cell(t)], x, m.d)
}

/// One draw per interval `I_k = [(k-1)/N, k/N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub n: usize,
    pub seed: u64,
    /// Sampled neurons `θ_k` (unscaled).
    pub neurons: Vec<Neuron>,
    /// `r_k = ∫_{I_k} r`.
    pub rates: Vec<f64>,
    /// Scaled output weights `w'_k = N r_k w_k / c(θ_k)`.
    pub weights: Vec<Vec<f64>>,
    pub schedule: ControlSchedule,
}

/// Cost-weighted law `ν_k` over the atoms active on `I_k`: `(atom, weight)` pairs.
pub fn interval_law(m: &TimeMixture, s: f64, t: f64) -> Vec<(&BarronAtom, f64)> {
    m.overlaps(s, t)
        .flat_map(|(i, len)| {
            m.cells[i]
                .iter()
                .map(move |a| (a, len * a.mass * a.cost(m.radius)))
        })
        .filter(|(_, w)| *w > 0.0)
        .collect()
}

/// Draws one neuron per interval with probability proportional to its cost-weighted mass.
pub fn sample_schedule(m: &TimeMixture, n: usize, seed: u64) -> Result<SampleRun> {
    m.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("N must be positive".into()));
    }
    if m.rate_integral(0.0, 1.0) <= 0.0 {
        return Err(Error::DegenerateMixture);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / n as f64;
    let mut run = SampleRun {
        n,
        seed,
        neurons: Vec::with_capacity(n),
        rates: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        schedule: ControlSchedule::with_capacity(m.d, n),
    };
    for k in 0..n {
        let (s, t) = (k as f64 * dt, (k + 1) as f64 * dt);
        let law = interval_law(m, s, t);
        let r_k: f64 = law.iter().map(|(_, w)| w).sum();
        let (neuron, w) = if law.is_empty() {
            let zero = Neuron::new(vec![0.0; m.d], vec![0.0; m.d], 0.0)?;
            (zero, vec![0.0; m.d])
        } else {
            let dist = WeightedIndex::new(law.iter().map(|(_, w)| *w))
                .map_err(|_| Error::DegenerateMixture)?;
            let atom = law[dist.sample(&mut rng)].0;
            let scale = n as f64 * r_k / atom.cost(m.radius);
            let w = atom.neuron.w.iter().map(|v| scale * v).collect();
            (atom.neuron.clone(), w)
        };
        run.schedule.push(&w, &neuron.a, neuron.b, dt);
        run.neurons.push(neuron);
        run.rates.push(r_k);
        run.weights.push(w);
    }
    Ok(run)
}

/// Monte-Carlo mean and standard error of `r_k g_{θ_k}(z)` over `draws` samples of
/// `θ_k ~ ν_k` on the interval `[s, t]`.
pub fn increment_estimate(
    m: &TimeMixture,
    s: f64,
    t: f64,
    z: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = interval_law(m, s, t);
    if law.is_empty() || draws < 2 {
        return Err(Error::DegenerateMixture);
    }
    let r_k: f64 = law.iter().map(|(_, w)| w).sum();
    let dist =
        WeightedIndex::new(law.iter().map(|(_, w)| *w)).map_err(|_| Error::DegenerateMixture)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; m.d];
    let mut sq = vec![0.0; m.d];
    for _ in 0..draws {
        let atom = law[dist.sample(&mut rng)].0;
        let f = atom.neuron.field(z);
        let c = atom.cost(m.radius);
        for k in 0..m.d {
            let v = r_k * f[k] / c;
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
    let se = sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| ((q / n - mu * mu).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok((mean, se))
}

/// Reference flow `X(1)` and `log det ∇X(1)` by classical RK4 with steps of at most `step`,
/// restarted at every mixture cell edge.
pub fn reference_flow(m: &TimeMixture, x: &[f64], step: f64) -> (Vec<f64>, f64) {
    let d = m.d;
    let mut y: Vec<f64> = x.to_vec();
    y.push(0.0);
    let rhs = |cell: usize, y: &[f64]| -> Vec<f64> {
        let (mut v, div) = cell_field(&m.cells[cell], &y[..d], d);
        v.push(div);
        v
    };
    let axpy = |y: &[f64], h: f64, k: &[f64]| -> Vec<f64> {
        y.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    for cell in 0..m.cells.len() {
        let len = m.edges[cell + 1] - m.edges[cell];
        let steps = (len / step).ceil().max(1.0) as usize;
        let h = len / steps as f64;
        for _ in 0..steps {
            let k1 = rhs(cell, &y);
            let k2 = rhs(cell, &axpy(&y, 0.5 * h, &k1));
            let k3 = rhs(cell, &axpy(&y, 0.5 * h, &k2));
            let k4 = rhs(cell, &axpy(&y, h, &k3));
            for i in 0..=d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    let q = y.pop().unwrap();
    (y, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunErrors {
    /// RMS of `|X(1) − Y(1)|` over the evaluation points.
    pub e_n: f64,
    /// RMS of `|log det ∇X(1) − log det ∇Y(1)|`.
    pub delta_n: f64,
    /// Points whose reference or sampled endpoint left the ball of radius `R`.
    pub ball_violations: usize,
}

/// Reference endpoints for a fixed set of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub points: Vec<Vec<f64>>,
    pub ends: Vec<Vec<f64>>,
    pub logdets: Vec<f64>,
}

impl Reference {
    pub fn new(m: &TimeMixture, points: &[Vec<f64>], step: f64) -> Self {
        let (ends, logdets) = points.iter().map(|x| reference_flow(m, x, step)).unzip();
        Reference {
            points: points.to_vec(),
            ends,
            logdets,
        }
    }

    pub fn errors(&self, run: &SampleRun, radius: f64) -> RunErrors {
        let d = run.schedule.dim();
        let mut batch = PointBatch::new(d, &self.points);
        batch.flow(&run.schedule, false);
        let n = self.points.len().max(1) as f64;
        let mut e = 0.0;
        let mut q = 0.0;
        let mut out = 0;
        for i in 0..self.points.len() {
            let y = batch.point(i);
            e += crate::linalg::dist(&y, &self.ends[i]).powi(2);
            q += (batch.logdets()[i] - self.logdets[i]).powi(2);
            if norm(&y) > radius || norm(&self.ends[i]) > radius {
                out += 1;
            }
        }
        RunErrors {
            e_n: (e / n).sqrt(),
            delta_n: (q / n).sqrt(),
            ball_violations: out,
        }
    }
}

/// `(e_N, δ_N)` of a run against an RK4 reference with step `1e-4`.
pub fn run_errors(run: &SampleRun, m: &TimeMixture, points: &[Vec<f64>]) -> RunErrors {
    Reference::new(m, points, 1e-4).errors(run, m.radius)
}

/// Least-squares slope of `log e` against `log N`.
pub fn rate_fit(runs: &[(f64, f64)]) -> Result<f64> {
    if runs.len() < 4 || runs.iter().any(|(n, e)| !(*n > 0.0) || !(*e > 0.0)) {
        return Err(Error::InvalidInput(
            "need at least four positive (N, e) pairs".into(),
        ));
    }
    let xs: Vec<f64> = runs.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = runs.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Points of the grid `{-1 + 2i/(n-1)}^d` inside the ball of radius `r`.
pub fn ball_grid(d: usize, n: usize, r: f64) -> Vec<Vec<f64>> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % n;
                    idx /= n;
                    r * (-1.0 + 2.0 * i as f64 / (n - 1) as f64)
                })
                .collect::<Vec<f64>>()
        })
        .filter(|x| norm(x) <= r)
        .collect()
}

/// Three atoms in the plane whose masses oscillate over 16 time cells, with `R = 2`
/// (the unit ball plus one).
pub fn builtin_mixture() -> TimeMixture {
    let atoms = [
        (vec![0.0, 0.5], vec![1.0, 0.0], 0.2, 0.25, 0.0),
        (vec![-0.4, 0.1], vec![0.0, 1.0], 0.3, 0.2, 1.0 / 3.0),
        (vec![0.3, 0.3], vec![-0.6, 0.8], 0.1, 0.25, 2.0 / 3.0),
    ];
    let cells = 16;
    let edges: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
    let cells: Vec<Vec<BarronAtom>> = (0..cells)
        .map(|c| {
            let t = (c as f64 + 0.5) / cells as f64;
            atoms
                .iter()
                .map(|(w, a, b, base, phase)| BarronAtom {
                    neuron: Neuron {
                        w: w.clone(),
                        a: a.clone(),
                        b: *b,
                    },
                    mass: base * (1.0 + 0.8 * (2.0 * std::f64::consts::PI * (t + phase)).sin()),
                })
                .collect()
        })
        .collect();
    TimeMixture {
        d: 2,
        edges,
        cells,
        radius: 2.0,
    }
}

/// Ridge dictionary: ridge `i` has a random unit normal `a`, offset `b ∈ [-R, R]`, and one
/// atom per output direction `±e_k`. Atom `j` depends only on `(seed, j)`, so smaller
/// dictionaries are prefixes of larger ones.
pub fn ridge_dictionary(d: usize, size: usize, radius: f64, seed: u64) -> Vec<Neuron> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_ridge = 2 * d;
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let mut a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = norm(&a).max(1e-12);
        a.iter_mut().for_each(|v| *v /= len);
        let b = rng.gen_range(-radius..radius);
        for j in 0..per_ridge {
            if out.len() == size {
                break;
            }
            let mut w = vec![0.0; d];
            w[j / 2] = if j % 2 == 0 { 1.0 } else { -1.0 };
            out.push(Neuron { w, a: a.clone(), b });
        }
    }
    out
}

/// Lawson–Hanson non-negative least squares `min |A x − y|, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0) * y.norm().max(1.0);
    for _ in 0..3 * n.max(1) {
        let grad = a.transpose() * (y - a * &x);
        let pick = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = pick else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z = sub
                .clone()
                .svd(true, true)
                .solve(y, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if z.iter().all(|v| *v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // Step towards z until a passive coordinate hits zero.
            let mut alpha = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub mixture: TimeMixture,
    /// RMS residual over all samples and cells.
    pub residual: f64,
}

/// Fits non-negative masses on a ridge dictionary, cell by cell.
///
/// `values[c][i]` is the field sampled in time cell `c` at `points[i]`.
pub fn fit_mixture(
    edges: Vec<f64>,
    points: &[Vec<f64>],
    values: &[Vec<Vec<f64>>],
    radius: f64,
    size: usize,
    seed: u64,
) -> Result<MixtureFit> {
    let d = points.first().map_or(0, |p| p.len());
    if d == 0 || values.len() + 1 != edges.len() {
        return Err(Error::InvalidInput(
            "need points and one value set per time cell".into(),
        ));
    }
    let dict = ridge_dictionary(d, size, radius, seed);
    let rows = points.len() * d;
    let mut a = DMatrix::zeros(rows, dict.len());
    for (i, x) in points.iter().enumerate() {
        for (j, n) in dict.iter().enumerate() {
            let f = n.field(x);
            for k in 0..d {
                a[(i * d + k, j)] = f[k];
            }
        }
    }
    let mut cells = Vec::with_capacity(values.len());
    let mut sq = 0.0;
    for vals in values {
        if vals.len() != points.len() {
            return Err(Error::InvalidInput("one value per point".into()));
        }
        let y = DVector::from_iterator(rows, vals.iter().flat_map(|v| v.iter().copied()));
        let mass = nnls(&a, &y);
        sq += (&a * &mass - &y).norm_squared();
        cells.push(
            dict.iter()
                .zip(mass.iter())
                .filter(|(_, m)| **m > 0.0)
                .map(|(n, m)| BarronAtom {
                    neuron: n.clone(),
                    mass: *m,
                })
                .collect(),
        );
    }
    let mixture = TimeMixture::new(d, edges, cells, radius)?;
    Ok(MixtureFit {
        mixture,
        residual: (sq / (rows * values.len()) as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(mass: f64) -> TimeMixture {
        let atom = BarronAtom {
            neuron: Neuron::new(vec![0.0, 1.0], vec![1.0, 0.0], 0.0).unwrap(),
            mass,
        };
        TimeMixture::new(2, vec![0.0, 1.0], vec![vec![atom]], 2.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        let (v, div) = eval_mixture(&single(1.0), 0.3, &[1.0, 0.0]);
        assert_eq!((v, div), (vec![0.0, 1.0], 0.0));
        let empty = TimeMixture::new(2, vec![0.0, 1.0], vec![vec![]], 1.0).unwrap();
        assert_eq!(eval_mixture(&empty, 0.5, &[0.2, 0.1]).0, vec![0.0, 0.0]);
        let mut m = single(1.0);
        let mut neg = m.cells[0][0].clone();
        neg.neuron.w = vec![0.0, -1.0];
        m.cells[0].push(neg);
        assert_eq!(eval_mixture(&m, 0.5, &[0.7, -0.2]).0, vec![0.0, 0.0]);
    }

    #[test]
    fn single_atom_sampling_is_exact() {
        let m = single(0.5);
        let run = sample_schedule(&m, 8, 3).unwrap();
        assert_eq!(run.schedule.len(), 8);
        let pts = ball_grid(2, 7, 0.8);
        let err = run_errors(&run, &m, &pts);
        assert!(err.e_n <= 1e-6 && err.delta_n <= 1e-6, "{err:?}");
        assert_eq!(sample_schedule(&m, 8, 3).unwrap(), run);
    }

    #[test]
    fn zero_field_has_zero_error() {
        let m = single(0.0);
        let run = SampleRun {
            n: 0,
            seed: 0,
            neurons: vec![],
            rates: vec![],
            weights: vec![],
            schedule: ControlSchedule::new(2),
        };
        let err = run_errors(&run, &m, &ball_grid(2, 5, 1.0));
        assert_eq!((err.e_n, err.delta_n), (0.0, 0.0));
    }

    #[test]
    fn increments_are_unbiased() {
        let m = builtin_mixture();
        let (s, t) = (0.3, 0.35);
        let z = [0.2, -0.4];
        let (mean, se) = increment_estimate(&m, s, t, &z, 4000, 5).unwrap();
        let exact = m.field_integral(s, t, &z);
        for k in 0..2 {
            assert!(
                (mean[k] - exact[k]).abs() <= 4.0 * se[k] + 1e-15,
                "{mean:?} {exact:?} {se:?}"
            );
        }
    }

    #[test]
    fn zero_mixture_is_degenerate() {
        assert!(matches!(
            sample_schedule(&single(0.0), 4, 0),
            Err(Error::DegenerateMixture)
        ));
    }

    #[test]
    fn weight_identity() {
        let m = builtin_mixture();
        let run = sample_schedule(&m, 32, 7).unwrap();
        for k in 0..run.n {
            let c = cost(&run.neurons[k], m.radius);
            let expect = 32.0 * run.rates[k] * norm(&run.neurons[k].w) / c;
            assert_abs_diff_eq!(norm(&run.weights[k]), expect, epsilon = 1e-12);
        }
        let total: f64 = run.rates.iter().sum();
        assert_abs_diff_eq!(total, m.rate_integral(0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn rate_fit_examples() {
        let sqrt: Vec<(f64, f64)> = [16.0f64, 32.0, 64.0, 128.0]
            .iter()
            .map(|n| (*n, 3.0 / n.sqrt()))
            .collect();
        assert_abs_diff_eq!(rate_fit(&sqrt).unwrap(), -0.5, epsilon = 1e-12);
        let lin: Vec<(f64, f64)> = [16.0f64, 32.0, 64.0, 128.0]
            .iter()
            .map(|n| (*n, 2.0 / n))
            .collect();
        assert_abs_diff_eq!(rate_fit(&lin).unwrap(), -1.0, epsilon = 1e-12);
        assert!(rate_fit(&lin[..3]).is_err());
    }

    #[test]
    fn nnls_matches_known_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let x = nnls(&a, &y);
        // Unconstrained optimum has x2 < 0; the constrained one is x = (1/2, 0).
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-12);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn fit_recovers_dictionary_atoms() {
        let pts = ball_grid(2, 9, 1.0);
        let dict = ridge_dictionary(2, 40, 2.0, 11);
        let field = |x: &[f64]| -> Vec<f64> {
            let mut v = vec![0.0; 2];
            for (j, m) in [(3usize, 0.7), (10, 0.2), (25, 1.3)] {
                let f = dict[j].field(x);
                v[0] += m * f[0];
                v[1] += m * f[1];
            }
            v
        };
        let values = vec![pts.iter().map(|x| field(x)).collect()];
        let fit = fit_mixture(vec![0.0, 1.0], &pts, &values, 2.0, 40, 11).unwrap();
        assert!(fit.residual <= 1e-8, "{}", fit.residual);
    }
}

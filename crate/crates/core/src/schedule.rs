//! Control schedules and the closed-form flow of a single ReLU neuron.
//!
//! A neuron `(w, a, b)` drives `x' = w (a·x + b)_+`. Along one segment the sign of
//! `z = a·x + b` never changes, so the flow and its log-Jacobian are explicit.

use serde::de::Deserializer;
use serde::ser::{SerializeSeq, SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest admissible `a·w * duration` before `exp` is considered to overflow.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl Neuron {
    pub fn new(w: Vec<f64>, a: Vec<f64>, b: f64) -> Result<Self> {
        check_dim(w.len(), a.len())?;
        let n = Neuron { w, a, b };
        if !n.is_finite() {
            return Err(Error::InvalidInput("neuron has non-finite entries".into()));
        }
        Ok(n)
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().chain(&self.a).all(|v| v.is_finite())
    }

    /// Field value `w (a·x + b)_+`.
    pub fn field(&self, x: &[f64]) -> Vec<f64> {
        let z = preactivation(&self.a, self.b, x).max(0.0);
        self.w.iter().map(|w| w * z).collect()
    }

    /// Divergence `(a·w) 1{a·x + b > 0}`.
    pub fn divergence(&self, x: &[f64]) -> f64 {
        if preactivation(&self.a, self.b, x) > 0.0 {
            dot(&self.a, &self.w)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub neuron: Neuron,
    pub duration: f64,
}

impl Segment {
    pub fn new(neuron: Neuron, duration: f64) -> Result<Self> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::InvalidInput(format!("segment duration {duration}")));
        }
        Ok(Segment { neuron, duration })
    }

    pub fn as_ref(&self) -> SegmentRef<'_> {
        SegmentRef {
            w: &self.neuron.w,
            a: &self.neuron.a,
            b: self.neuron.b,
            duration: self.duration,
        }
    }
}

/// Borrowed view of one segment.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRef<'a> {
    pub w: &'a [f64],
    pub a: &'a [f64],
    pub b: f64,
    pub duration: f64,
}

impl SegmentRef<'_> {
    pub fn to_segment(&self) -> Segment {
        Segment {
            neuron: Neuron {
                w: self.w.to_vec(),
                a: self.a.to_vec(),
                b: self.b,
            },
            duration: self.duration,
        }
    }

    /// `a·w * duration`, the log-Jacobian increment on the active side.
    pub fn exponent(&self) -> f64 {
        dot(self.a, self.w) * self.duration
    }

    pub fn coefficients(&self) -> SegmentCoefficients {
        SegmentCoefficients::new(self.w, self.a, self.duration)
    }
}

/// Per-segment constants shared by the scalar and batched flows.
#[derive(Debug, Clone, Copy)]
pub struct SegmentCoefficients {
    /// Multiplier of `w z` in the displacement.
    pub factor: f64,
    /// Log-Jacobian increment on the active side.
    pub logdet: f64,
}

impl SegmentCoefficients {
    pub fn new(w: &[f64], a: &[f64], duration: f64) -> Self {
        let s = dot(a, w);
        if s != 0.0 {
            SegmentCoefficients {
                factor: (s * duration).exp_m1() / s,
                logdet: s * duration,
            }
        } else {
            SegmentCoefficients {
                factor: duration,
                logdet: 0.0,
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `b + Σ a_k x_k`, skipping zero coefficients; the batched flow uses the same order.
#[inline]
pub(crate) fn preactivation(a: &[f64], b: f64, x: &[f64]) -> f64 {
    let mut z = b;
    for (ak, xk) in a.iter().zip(x) {
        if *ak != 0.0 {
            z += ak * xk;
        }
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub x: Vec<f64>,
    pub logdet: f64,
}

impl FlowState {
    pub fn new(x: Vec<f64>) -> Self {
        FlowState { x, logdet: 0.0 }
    }
}

fn check_segment(seg: &SegmentRef<'_>, d: usize, index: usize) -> Result<()> {
    check_dim(d, seg.w.len())?;
    check_dim(d, seg.a.len())?;
    if !(seg.duration >= 0.0) || !seg.duration.is_finite() {
        return Err(Error::InvalidInput(format!(
            "segment {index}: duration {}",
            seg.duration
        )));
    }
    if !seg.b.is_finite() || !seg.w.iter().chain(seg.a).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "segment {index}: non-finite neuron"
        )));
    }
    let e = seg.exponent();
    if e > MAX_EXPONENT {
        return Err(Error::Overflow {
            segment: index,
            exponent: e,
        });
    }
    Ok(())
}

#[inline]
fn advance(state: &mut FlowState, seg: &SegmentRef<'_>, c: SegmentCoefficients) {
    let z = preactivation(seg.a, seg.b, &state.x);
    if z > 0.0 {
        let r = z * c.factor;
        for (xk, wk) in state.x.iter_mut().zip(seg.w) {
            if *wk != 0.0 {
                *xk += wk * r;
            }
        }
        state.logdet += c.logdet;
    }
}

fn flow_segment_indexed(
    state: &FlowState,
    seg: &SegmentRef<'_>,
    index: usize,
) -> Result<FlowState> {
    check_segment(seg, state.x.len(), index)?;
    if !state.logdet.is_finite() || !state.x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite flow state".into()));
    }
    let mut out = state.clone();
    advance(&mut out, seg, seg.coefficients());
    if !out.x.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow {
            segment: index,
            exponent: seg.exponent(),
        });
    }
    Ok(out)
}

/// Exact flow of one neuron for `duration`.
pub fn flow_segment(state: &FlowState, neuron: &Neuron, duration: f64) -> Result<FlowState> {
    let seg = SegmentRef {
        w: &neuron.w,
        a: &neuron.a,
        b: neuron.b,
        duration,
    };
    flow_segment_indexed(state, &seg, 0)
}

/// Piecewise-constant control: segments stored flat as `w | a | b | duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    d: usize,
    data: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(d: usize) -> Self {
        ControlSchedule {
            d,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(d: usize, segments: usize) -> Self {
        ControlSchedule {
            d,
            data: Vec::with_capacity(segments * (2 * d + 2)),
        }
    }

    pub fn from_segments(d: usize, segments: &[Segment]) -> Result<Self> {
        let mut s = ControlSchedule::with_capacity(d, segments.len());
        for seg in segments {
            s.try_push(seg)?;
        }
        Ok(s)
    }

    fn stride(&self) -> usize {
        2 * self.d + 2
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        if self.d == 0 && self.data.is_empty() {
            return 0;
        }
        self.data.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of control switches, i.e. segments minus one.
    pub fn switch_count(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn total_duration(&self) -> f64 {
        self.iter().map(|s| s.duration).sum()
    }

    /// Appends a segment. Panics on dimension mismatch or negative duration.
    pub fn push(&mut self, w: &[f64], a: &[f64], b: f64, duration: f64) {
        assert!(w.len() == self.d && a.len() == self.d, "segment dimension");
        assert!(duration >= 0.0, "negative segment duration");
        self.data.extend_from_slice(w);
        self.data.extend_from_slice(a);
        self.data.push(b);
        self.data.push(duration);
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    pub fn push_ref(&mut self, seg: SegmentRef<'_>) {
        self.push(seg.w, seg.a, seg.b, seg.duration);
    }

    pub fn try_push(&mut self, seg: &Segment) -> Result<()> {
        check_dim(self.d, seg.neuron.w.len())?;
        check_dim(self.d, seg.neuron.a.len())?;
        if !(seg.duration >= 0.0) {
            return Err(Error::InvalidInput(format!("duration {}", seg.duration)));
        }
        self.push_ref(seg.as_ref());
        Ok(())
    }

    pub fn extend(&mut self, other: &ControlSchedule) {
        assert_eq!(self.d, other.d, "schedule dimension");
        self.data.extend_from_slice(&other.data);
    }

    pub fn segment(&self, k: usize) -> SegmentRef<'_> {
        let st = self.stride();
        let row = &self.data[k * st..(k + 1) * st];
        SegmentRef {
            w: &row[..self.d],
            a: &row[self.d..2 * self.d],
            b: row[2 * self.d],
            duration: row[2 * self.d + 1],
        }
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = SegmentRef<'_>> + '_ {
        (0..self.len()).map(move |k| self.segment(k))
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.iter().map(|s| s.to_segment()).collect()
    }

    /// Rescales to total time `total` keeping every product `w * duration`.
    pub fn rescaled(&self, total: f64) -> Result<ControlSchedule> {
        let current = self.total_duration();
        if !(total > 0.0) || !(current > 0.0) {
            return Err(Error::InvalidInput(
                "rescaling needs positive durations".into(),
            ));
        }
        let k = total / current;
        let mut out = ControlSchedule::with_capacity(self.d, self.len());
        for s in self.iter() {
            let w: Vec<f64> = s.w.iter().map(|v| v / k).collect();
            out.push(&w, s.a, s.b, s.duration * k);
        }
        Ok(out)
    }

    /// Checks finiteness and the overflow guard for every segment.
    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.iter().enumerate() {
            check_segment(&s, self.d, k)?;
        }
        Ok(())
    }
}

/// Left-to-right composition of segment flows.
pub fn flow_schedule(x: &[f64], schedule: &ControlSchedule) -> Result<FlowState> {
    check_dim(schedule.dim(), x.len())?;
    let mut state = FlowState::new(x.to_vec());
    for (k, seg) in schedule.iter().enumerate() {
        state = flow_segment_indexed(&state, &seg, k)?;
    }
    Ok(state)
}

/// Time reversal: segments in reverse order with negated outer weights.
pub fn invert_schedule(schedule: &ControlSchedule) -> ControlSchedule {
    let mut out = ControlSchedule::with_capacity(schedule.dim(), schedule.len());
    let mut w = vec![0.0; schedule.dim()];
    for seg in schedule.iter().rev() {
        for (o, v) in w.iter_mut().zip(seg.w) {
            *o = -v;
        }
        out.push(&w, seg.a, seg.b, seg.duration);
    }
    out
}

/// Classical RK4 integration of the flow and of `q' = div v`, used as a test oracle.
pub fn oracle_flow(x: &[f64], schedule: &ControlSchedule, step: f64) -> FlowState {
    assert!(step > 0.0, "step must be positive");
    let d = x.len();
    let mut y: Vec<f64> = x.iter().copied().chain([0.0]).collect();
    let mut k = vec![vec![0.0; d + 1]; 4];
    let mut tmp = vec![0.0; d + 1];
    for seg in schedule.iter() {
        if seg.duration == 0.0 {
            continue;
        }
        let n = (seg.duration / step).ceil().max(1.0) as usize;
        let dt = seg.duration / n as f64;
        let s = dot(seg.a, seg.w);
        let rhs = |p: &[f64], out: &mut [f64]| {
            let z = preactivation(seg.a, seg.b, &p[..d]);
            let r = z.max(0.0);
            for i in 0..d {
                out[i] = seg.w[i] * r;
            }
            out[d] = if z > 0.0 { s } else { 0.0 };
        };
        for _ in 0..n {
            rhs(&y, &mut k[0]);
            for i in 0..=d {
                tmp[i] = y[i] + 0.5 * dt * k[0][i];
            }
            rhs(&tmp, &mut k[1]);
            for i in 0..=d {
                tmp[i] = y[i] + 0.5 * dt * k[1][i];
            }
            rhs(&tmp, &mut k[2]);
            for i in 0..=d {
                tmp[i] = y[i] + dt * k[2][i];
            }
            rhs(&tmp, &mut k[3]);
            for i in 0..=d {
                y[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
        }
    }
    let logdet = y.pop().unwrap_or(0.0);
    FlowState { x: y, logdet }
}

/// Anything that can enumerate segments in time order, possibly without storing them.
pub trait SegmentSource: Sync {
    fn dim(&self) -> usize;

    fn segment_count(&self) -> usize;

    /// Visits the segments in time order, or the inverse schedule when `inverse` is set.
    fn visit(&self, inverse: bool, f: &mut dyn FnMut(SegmentRef<'_>));

    fn to_schedule(&self) -> ControlSchedule {
        let mut out = ControlSchedule::with_capacity(self.dim(), self.segment_count());
        self.visit(false, &mut |s| out.push_ref(s));
        out
    }
}

impl SegmentSource for ControlSchedule {
    fn dim(&self) -> usize {
        self.d
    }

    fn segment_count(&self) -> usize {
        self.len()
    }

    fn visit(&self, inverse: bool, f: &mut dyn FnMut(SegmentRef<'_>)) {
        if inverse {
            let mut w = vec![0.0; self.d];
            for seg in self.iter().rev() {
                for (o, v) in w.iter_mut().zip(seg.w) {
                    *o = -v;
                }
                f(SegmentRef { w: &w, ..seg });
            }
        } else {
            for seg in self.iter() {
                f(seg);
            }
        }
    }

    fn to_schedule(&self) -> ControlSchedule {
        self.clone()
    }
}

/// A sequence of segment sources applied one after another.
pub struct Chain<'a> {
    d: usize,
    parts: Vec<&'a dyn SegmentSource>,
}

impl<'a> Chain<'a> {
    pub fn new(d: usize, parts: Vec<&'a dyn SegmentSource>) -> Self {
        Chain { d, parts }
    }
}

impl SegmentSource for Chain<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn segment_count(&self) -> usize {
        self.parts.iter().map(|p| p.segment_count()).sum()
    }

    fn visit(&self, inverse: bool, f: &mut dyn FnMut(SegmentRef<'_>)) {
        if inverse {
            for p in self.parts.iter().rev() {
                p.visit(true, f);
            }
        } else {
            for p in &self.parts {
                p.visit(false, f);
            }
        }
    }
}

/// Structure-of-arrays point cloud carried through a flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    coords: Vec<Vec<f64>>,
    logdet: Vec<f64>,
    scratch: Vec<f64>,
}

impl PointBatch {
    pub fn new(d: usize, points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut coords = vec![Vec::with_capacity(n); d];
        for p in points {
            assert_eq!(p.len(), d, "point dimension");
            for (c, v) in coords.iter_mut().zip(p) {
                c.push(*v);
            }
        }
        PointBatch {
            coords,
            logdet: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    /// Batch whose log-determinants start at `logdets` instead of zero.
    pub fn with_logdets(d: usize, points: &[Vec<f64>], logdets: &[f64]) -> Self {
        assert_eq!(points.len(), logdets.len(), "one logdet per point");
        let mut batch = PointBatch::new(d, points);
        batch.logdet.copy_from_slice(logdets);
        batch
    }

    pub fn len(&self) -> usize {
        self.logdet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logdet.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.iter().map(|c| c[i]).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn logdets(&self) -> &[f64] {
        &self.logdet
    }

    pub fn states(&self) -> Vec<FlowState> {
        (0..self.len())
            .map(|i| FlowState {
                x: self.point(i),
                logdet: self.logdet[i],
            })
            .collect()
    }

    /// Applies one segment to every point, with arithmetic identical to [`flow_segment`].
    pub fn apply(&mut self, seg: SegmentRef<'_>) {
        let c = seg.coefficients();
        let z = &mut self.scratch;
        z.iter_mut().for_each(|v| *v = seg.b);
        for (ak, xs) in seg.a.iter().zip(&self.coords) {
            if *ak != 0.0 {
                for (zi, xi) in z.iter_mut().zip(xs) {
                    *zi += ak * xi;
                }
            }
        }
        if c.logdet != 0.0 {
            for (ld, zi) in self.logdet.iter_mut().zip(z.iter()) {
                if *zi > 0.0 {
                    *ld += c.logdet;
                }
            }
        }
        for zi in z.iter_mut() {
            *zi = if *zi > 0.0 { *zi * c.factor } else { 0.0 };
        }
        for (wk, xs) in seg.w.iter().zip(self.coords.iter_mut()) {
            if *wk != 0.0 {
                for (xi, ri) in xs.iter_mut().zip(z.iter()) {
                    *xi += wk * ri;
                }
            }
        }
    }

    pub fn flow(&mut self, source: &dyn SegmentSource, inverse: bool) {
        assert_eq!(source.dim(), self.dim(), "source dimension");
        source.visit(inverse, &mut |s| self.apply(s));
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    w: Vec<f64>,
    a: Vec<f64>,
    b: f64,
    duration: f64,
}

#[derive(Deserialize)]
struct ScheduleRecord {
    d: usize,
    segments: Vec<SegmentRecord>,
}

struct SegmentsSer<'a>(&'a ControlSchedule);

impl Serialize for SegmentsSer<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for s in self.0.iter() {
            seq.serialize_element(&SegmentRecordRef {
                w: s.w,
                a: s.a,
                b: s.b,
                duration: s.duration,
            })?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct SegmentRecordRef<'a> {
    w: &'a [f64],
    a: &'a [f64],
    b: f64,
    duration: f64,
}

impl Serialize for ControlSchedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("ControlSchedule", 2)?;
        st.serialize_field("d", &self.d)?;
        st.serialize_field("segments", &SegmentsSer(self))?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ControlSchedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rec = ScheduleRecord::deserialize(deserializer)?;
        let mut out = ControlSchedule::with_capacity(rec.d, rec.segments.len());
        for (k, s) in rec.segments.iter().enumerate() {
            if s.w.len() != rec.d || s.a.len() != rec.d {
                return Err(serde::de::Error::custom(format!(
                    "segment {k}: expected dimension {}",
                    rec.d
                )));
            }
            if !(s.duration >= 0.0) {
                return Err(serde::de::Error::custom(format!(
                    "segment {k}: negative duration"
                )));
            }
            out.push(&s.w, &s.a, s.b, s.duration);
        }
        Ok(out)
    }
}

impl ControlSchedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seg(w: &[f64], a: &[f64], b: f64, t: f64) -> Segment {
        Segment::new(Neuron::new(w.to_vec(), a.to_vec(), b).unwrap(), t).unwrap()
    }

    #[test]
    fn dilation_doubles() {
        let n = Neuron::new(vec![1.0], vec![1.0], 0.0).unwrap();
        let s = flow_segment(&FlowState::new(vec![1.0]), &n, 2f64.ln()).unwrap();
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.logdet, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn inactive_side_is_fixed() {
        let n = Neuron::new(vec![3.0], vec![1.0], 0.0).unwrap();
        let s = flow_segment(&FlowState::new(vec![-1.0]), &n, 5.0).unwrap();
        assert_eq!(s, FlowState::new(vec![-1.0]));
        let s = flow_segment(&FlowState::new(vec![0.0]), &n, 5.0).unwrap();
        assert_eq!(s.x, vec![0.0]);
    }

    #[test]
    fn shear_has_zero_logdet() {
        let n = Neuron::new(vec![0.0, 2.0], vec![1.0, 0.0], 0.0).unwrap();
        let s = flow_segment(&FlowState::new(vec![0.5, 0.0]), &n, 1.0).unwrap();
        assert_abs_diff_eq!(s.x[0], 0.5);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-15);
        assert_eq!(s.logdet, 0.0);
    }

    #[test]
    fn overflow_reports_segment() {
        let mut s = ControlSchedule::new(1);
        s.push(&[0.0], &[1.0], 0.0, 1.0);
        s.push(&[10.0], &[10.0], 0.0, 8.0);
        match flow_schedule(&[1.0], &s) {
            Err(Error::Overflow { segment, .. }) => assert_eq!(segment, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let n = Neuron {
            w: vec![f64::NAN],
            a: vec![1.0],
            b: 0.0,
        };
        assert!(matches!(
            flow_segment(&FlowState::new(vec![1.0]), &n, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(Neuron::new(vec![1.0], vec![f64::INFINITY], 0.0).is_err());
    }

    #[test]
    fn empty_schedule_is_identity() {
        let s = ControlSchedule::new(2);
        let st = flow_schedule(&[0.3, -0.2], &s).unwrap();
        assert_eq!(st, FlowState::new(vec![0.3, -0.2]));
        assert_eq!(s.switch_count(), 0);
        assert!(invert_schedule(&s).is_empty());
    }

    #[test]
    fn invert_single_segment_negates_w() {
        let s =
            ControlSchedule::from_segments(2, &[seg(&[1.0, -2.0], &[0.5, 1.0], 0.1, 0.3)]).unwrap();
        let inv = invert_schedule(&s);
        assert_eq!(
            inv.segments(),
            vec![seg(&[-1.0, 2.0], &[0.5, 1.0], 0.1, 0.3)]
        );
    }

    #[test]
    fn oracle_agrees_on_examples() {
        let mut s = ControlSchedule::new(1);
        s.push(&[1.0], &[1.0], 0.0, 2f64.ln());
        let o = oracle_flow(&[1.0], &s, 1e-4);
        assert_abs_diff_eq!(o.x[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(o.logdet, 2f64.ln(), epsilon = 1e-6);
        let o = oracle_flow(&[-1.0], &s, 1e-4);
        assert_eq!(o.x, vec![-1.0]);
        assert_eq!(o.logdet, 0.0);
        let mut s = ControlSchedule::new(2);
        s.push(&[0.0, 2.0], &[1.0, 0.0], 0.0, 1.0);
        let o = oracle_flow(&[0.5, 0.0], &s, 1e-4);
        assert_abs_diff_eq!(o.x[1], 1.0, epsilon = 1e-8);
        assert_eq!(o.logdet, 0.0);
    }

    #[test]
    fn batch_matches_scalar_bitwise() {
        let mut s = ControlSchedule::new(2);
        s.push(&[0.3, -0.7], &[1.2, 0.4], -0.1, 0.8);
        s.push(&[0.0, 1.0], &[1.0, 0.0], 0.2, 0.5);
        s.push(&[-1.1, 0.2], &[-0.3, 0.9], 0.05, 1.3);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin() * 2.0, (i as f64 * 0.91).cos() * 2.0])
            .collect();
        let mut batch = PointBatch::new(2, &pts);
        batch.flow(&s, false);
        for (i, p) in pts.iter().enumerate() {
            let st = flow_schedule(p, &s).unwrap();
            assert_eq!(batch.point(i), st.x);
            assert_eq!(batch.logdets()[i], st.logdet);
        }
        batch.flow(&s, true);
        for (i, p) in pts.iter().enumerate() {
            let back = batch.point(i);
            assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
            assert!(batch.logdets()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let mut s = ControlSchedule::new(2);
        s.push(
            &[0.1, 1.0 / 3.0],
            &[std::f64::consts::PI, -0.0],
            1e-300,
            0.7,
        );
        s.push(&[2.5e17, -4.0], &[0.0, 1.0], -3.25, 0.0);
        let text = s.to_json();
        let back = ControlSchedule::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), text);
        assert!(text.starts_with("{\"d\":2,\"segments\":[{\"w\":"));
    }

    #[test]
    fn json_rejects_wrong_dimension() {
        let text = r#"{"d":2,"segments":[{"w":[1.0],"a":[1.0,0.0],"b":0.0,"duration":1.0}]}"#;
        assert!(matches!(
            ControlSchedule::from_json(text),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rescaling_keeps_flow() {
        let mut s = ControlSchedule::new(1);
        s.push(&[1.0], &[1.0], 0.0, 0.5);
        s.push(&[-2.0], &[1.0], -0.3, 1.5);
        let r = s.rescaled(1.0).unwrap();
        assert_abs_diff_eq!(r.total_duration(), 1.0, epsilon = 1e-15);
        let a = flow_schedule(&[0.7], &s).unwrap();
        let b = flow_schedule(&[0.7], &r).unwrap();
        assert_abs_diff_eq!(a.x[0], b.x[0], epsilon = 1e-12);
    }
}

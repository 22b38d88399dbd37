//! Elementary schedules: 1D dilations, the half-line translation, shear translations
//! of half-spaces and slope-change stages.

use crate::error::{Error, Result};
use crate::schedule::{ControlSchedule, Neuron, Segment};

fn unit(d: usize, k: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[k] = scale;
    v
}

/// One 1D segment: `sign = +1` dilates `x >= b` about `b` by `e^{w duration}`;
/// `sign = -1` uses the neuron `w (b - x)_+`, which scales `x <= b` about `b` by `e^{-w duration}`.
pub fn dilation_1d(w: f64, b: f64, sign: i32, duration: f64) -> Result<ControlSchedule> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidInput(format!("duration {duration}")));
    }
    let mut s = ControlSchedule::new(1);
    match sign {
        1 => s.push(&[w], &[1.0], -b, duration),
        -1 => s.push(&[w], &[-1.0], b, duration),
        _ => return Err(Error::InvalidInput(format!("sign {sign}"))),
    }
    Ok(s)
}

/// Two-stage 1D schedule: identity on `x <= c`, `x + tau` on `x >= c + h`.
///
/// Accepts `tau > -h` as well; a negative shift is the same construction with a
/// contraction first.
pub fn translation_gadget(c: f64, h: f64, tau: f64, total_time: f64) -> Result<ControlSchedule> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("ramp width {h}")));
    }
    if !(total_time > 0.0) {
        return Err(Error::InvalidInput(format!("total time {total_time}")));
    }
    if !(tau > -h) || !tau.is_finite() || !c.is_finite() {
        return Err(Error::InvalidInput(format!("shift {tau} with ramp {h}")));
    }
    let half = total_time / 2.0;
    let w = (tau / h).ln_1p() / half;
    let eta = tau + h;
    let mut s = ControlSchedule::new(1);
    s.push(&[w], &[1.0], -c, half);
    s.push(&[-w], &[1.0], -(c + eta), half);
    Ok(s)
}

/// Embeds a 1D schedule into `R^d` acting on coordinate `axis` only.
pub fn lift(schedule: &ControlSchedule, d: usize, axis: usize) -> ControlSchedule {
    assert_eq!(schedule.dim(), 1, "lift expects a 1D schedule");
    assert!(axis < d);
    let mut out = ControlSchedule::with_capacity(d, schedule.len());
    for seg in schedule.iter() {
        out.push(
            &unit(d, axis, seg.w[0]),
            &unit(d, axis, seg.a[0]),
            seg.b,
            seg.duration,
        );
    }
    out
}

/// Divergence-free translation of a half-space by `tau` along `e_l` (0-based axes).
///
/// With `n = a_sign e_k`: points with `x·n + b >= h` move by `tau e_l`, points with
/// `x·n + b <= 0` stay, and the strip in between is sheared linearly.
pub fn shear_translation(
    k: usize,
    l: usize,
    a_sign: i32,
    b: f64,
    h: f64,
    tau: f64,
    d: usize,
) -> Result<ControlSchedule> {
    let mut s = ControlSchedule::with_capacity(d, 2);
    push_shear(&mut s, k, l, a_sign, b, h, tau)?;
    Ok(s)
}

/// Appends the two shear segments to `s`.
pub fn push_shear(
    s: &mut ControlSchedule,
    k: usize,
    l: usize,
    a_sign: i32,
    b: f64,
    h: f64,
    tau: f64,
) -> Result<()> {
    let d = s.dim();
    if k == l {
        return Err(Error::InvalidInput("shear axes must differ".into()));
    }
    if k >= d || l >= d {
        return Err(Error::InvalidInput(format!(
            "axes ({k}, {l}) in dimension {d}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("ramp width {h}")));
    }
    if a_sign != 1 && a_sign != -1 {
        return Err(Error::InvalidInput(format!("sign {a_sign}")));
    }
    let dir = if tau < 0.0 { -1.0 } else { 1.0 };
    let t = tau.abs() / h;
    let n = unit(d, k, a_sign as f64);
    s.push(&unit(d, l, -dir), &n, b - h, t);
    s.push(&unit(d, l, dir), &n, b, t);
    Ok(())
}

/// Slope change at `c`: fixes `x <= c`, maps `x >= c` to `c + ratio (x - c)` along `e_1`.
pub fn slope_change_stage(c: f64, ratio: f64, h: f64, d: usize) -> Result<Segment> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::InvalidInput(format!("slope ratio {ratio}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("stage duration {h}")));
    }
    let gamma = ratio.ln() / h;
    Segment::new(Neuron::new(unit(d, 0, gamma), unit(d, 0, 1.0), -c)?, h)
}

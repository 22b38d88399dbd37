//! Monotone piecewise-affine profiles and their exact realization by slope-change stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadgets::{lift, slope_change_stage, translation_gadget};
use crate::schedule::ControlSchedule;

/// `ζ(x) = α_i x + β_i` on `[y_i, y_{i+1})`, extended affinely beyond the end pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneProfile {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercept: f64,
}

impl MonotoneProfile {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, intercept: f64) -> Result<Self> {
        let p = MonotoneProfile {
            breakpoints,
            slopes,
            intercept,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(lo: f64, hi: f64) -> Self {
        MonotoneProfile {
            breakpoints: vec![lo, hi],
            slopes: vec![1.0],
            intercept: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slopes.is_empty() || self.breakpoints.len() != self.slopes.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} breakpoints for {} slopes",
                self.breakpoints.len(),
                self.slopes.len()
            )));
        }
        if !self.breakpoints.iter().all(|y| y.is_finite())
            || self.breakpoints.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidInput(
                "breakpoints must increase strictly".into(),
            ));
        }
        if let Some(a) = self.slopes.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidInput(format!("non-positive slope {a}")));
        }
        if !self.intercept.is_finite() {
            return Err(Error::InvalidInput("non-finite intercept".into()));
        }
        Ok(())
    }

    /// Number of interior breakpoints.
    pub fn pieces(&self) -> usize {
        self.slopes.len()
    }

    /// Continuity constants `β_i`.
    pub fn intercepts(&self) -> Vec<f64> {
        let mut beta = Vec::with_capacity(self.slopes.len());
        beta.push(self.intercept);
        for i in 1..self.slopes.len() {
            let prev = beta[i - 1];
            beta.push(prev + (self.slopes[i - 1] - self.slopes[i]) * self.breakpoints[i]);
        }
        beta
    }

    /// Index of the piece containing `x`; at a breakpoint the right piece is used.
    pub fn piece(&self, x: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.partition_point(|y| *y <= x)
    }

    fn piece_left(&self, x: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.partition_point(|y| *y < x)
    }
}

pub fn eval_profile(p: &MonotoneProfile, x: f64) -> f64 {
    let i = p.piece(x);
    let beta = p.intercepts();
    p.slopes[i] * x + beta[i]
}

/// The inverse profile `ζ^{-1}` on `[ζ(y_0), ζ(y_{n+1})]`.
pub fn invert_profile(p: &MonotoneProfile) -> MonotoneProfile {
    let beta = p.intercepts();
    MonotoneProfile {
        breakpoints: p.breakpoints.iter().map(|y| eval_profile(p, *y)).collect(),
        slopes: p.slopes.iter().map(|a| 1.0 / a).collect(),
        intercept: -beta[0] / p.slopes[0],
    }
}

/// `log α_i` of the piece containing `x`; at a breakpoint the left piece is used.
pub fn profile_logdet(p: &MonotoneProfile, x: f64) -> f64 {
    p.slopes[p.piece_left(x)].ln()
}

/// Exact schedule for the profile lifted to `R^d` along `e_1`.
///
/// The flow equals `ζ` on `[y_0, y_{n+1}]`. A translation is prepended when
/// `ζ(y_0) ≠ y_0`; the slope-change stages then act on the shifted breakpoints.
pub fn profile_schedule(p: &MonotoneProfile, d: usize) -> Result<ControlSchedule> {
    p.validate()?;
    if d == 0 {
        return Err(Error::InvalidInput("dimension 0".into()));
    }
    let y0 = p.breakpoints[0];
    let shift = eval_profile(p, y0) - y0;
    let mut out = ControlSchedule::with_capacity(d, p.slopes.len() + 2);
    if shift != 0.0 {
        let ramp = (2.0 * shift.abs()).max(1.0);
        let c = y0 - 1.0 - ramp;
        out.extend(&lift(&translation_gadget(c, ramp, shift, 1.0)?, d, 0));
    }
    let mut c = y0 + shift;
    let mut prev_slope = 1.0;
    for (i, &alpha) in p.slopes.iter().enumerate() {
        if i > 0 {
            c += p.slopes[i - 1] * (p.breakpoints[i] - p.breakpoints[i - 1]);
        }
        let h = p.breakpoints[i + 1] - p.breakpoints[i];
        let seg = slope_change_stage(c, alpha / prev_slope, h, d)?;
        out.push_ref(seg.as_ref());
        prev_slope = alpha;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::flow_schedule;
    use approx::assert_abs_diff_eq;

    fn example() -> MonotoneProfile {
        MonotoneProfile::new(vec![0.0, 0.5, 1.0], vec![2.0, 0.5], 0.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        let id = MonotoneProfile::identity(0.0, 1.0);
        assert_eq!(eval_profile(&id, 0.37), 0.37);
        let p = example();
        assert_abs_diff_eq!(p.intercepts()[1], 0.75);
        assert_abs_diff_eq!(eval_profile(&p, 0.5), 1.0);
        assert_abs_diff_eq!(eval_profile(&p, 0.75), 1.125);
        let q = MonotoneProfile {
            intercept: 0.2,
            ..p.clone()
        };
        for x in [0.1, 0.5, 0.9, 1.4] {
            assert_abs_diff_eq!(
                eval_profile(&q, x),
                eval_profile(&p, x) + 0.2,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn schedule_examples() {
        let p = example();
        let s = profile_schedule(&p, 1).unwrap();
        assert_eq!(s.switch_count(), 1);
        let st = flow_schedule(&[0.75], &s).unwrap();
        assert_abs_diff_eq!(st.x[0], 1.125, epsilon = 1e-14);
        assert_abs_diff_eq!(st.logdet, 0.5f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            flow_schedule(&[0.5], &s).unwrap().x[0],
            1.0,
            epsilon = 1e-14
        );
        let st = flow_schedule(&[0.25], &s).unwrap();
        assert_abs_diff_eq!(st.logdet, 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn logdet_examples() {
        let p = example();
        assert_eq!(
            profile_logdet(&MonotoneProfile::identity(0.0, 1.0), 0.3),
            0.0
        );
        assert_abs_diff_eq!(profile_logdet(&p, 0.25), 2f64.ln());
        assert_abs_diff_eq!(profile_logdet(&p, 0.75), 0.5f64.ln());
        assert_abs_diff_eq!(profile_logdet(&p, 0.5), 2f64.ln());
    }

    #[test]
    fn translation_prepend() {
        let p = MonotoneProfile::new(vec![0.0, 1.0], vec![1.0], 0.25).unwrap();
        let s = profile_schedule(&p, 2).unwrap();
        assert_eq!(s.switch_count(), 2);
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            let st = flow_schedule(&[x, 0.3], &s).unwrap();
            assert_abs_diff_eq!(st.x[0], x + 0.25, epsilon = 1e-14);
            assert_eq!(st.x[1], 0.3);
        }
    }

    #[test]
    fn offset_interval_with_negative_shift() {
        let p =
            MonotoneProfile::new(vec![10.0, 10.5, 11.0, 12.0], vec![0.5, 3.0, 1.0], 4.0).unwrap();
        let s = profile_schedule(&p, 1).unwrap();
        assert_eq!(s.switch_count(), 4);
        for k in 0..=200 {
            let x = 10.0 + 2.0 * k as f64 / 200.0;
            let st = flow_schedule(&[x], &s).unwrap();
            assert_abs_diff_eq!(st.x[0], eval_profile(&p, x), epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_profile_round_trip() {
        let p = MonotoneProfile::new(vec![-1.0, 0.5, 2.0, 3.0], vec![0.5, 4.0, 1.5], 0.3).unwrap();
        let q = invert_profile(&p);
        for k in 0..=40 {
            let x = -1.5 + 5.0 * k as f64 / 40.0;
            assert_abs_diff_eq!(eval_profile(&q, eval_profile(&p, x)), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_profiles() {
        assert!(MonotoneProfile::new(vec![0.0, 1.0], vec![0.0], 0.0).is_err());
        assert!(MonotoneProfile::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0], 0.0).is_err());
        assert!(MonotoneProfile::new(vec![0.0, 1.0], vec![1.0, 2.0], 0.0).is_err());
    }
}

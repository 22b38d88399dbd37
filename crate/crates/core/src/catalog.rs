//! Built-in target maps for the end-to-end pipeline.

use serde::{Deserialize, Serialize};

use crate::compressible::{eval_profile, invert_profile, MonotoneProfile};
use crate::error::{Error, Result};
use crate::kr::KrMap;
use crate::linalg::Affine;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetMap {
    Identity,
    Affine {
        map: Affine,
    },
    /// `x_2 += amplitude · sin(π x_1)`.
    SineShear {
        amplitude: f64,
    },
    /// `c + (x - c)(1 - strength · exp(-|x - c|² / width²))`.
    RadialCompress {
        center: Vec<f64>,
        strength: f64,
        width: f64,
    },
    /// Monotone profile acting on `x_1`, identity on the other coordinates.
    Profile {
        profile: MonotoneProfile,
    },
    /// Knöthe–Rosenblatt map between two grid densities on the unit cube.
    Kr {
        map: Box<KrMap>,
    },
    /// `outer ∘ inner`.
    Compose {
        outer: Box<TargetMap>,
        inner: Box<TargetMap>,
    },
}

impl TargetMap {
    pub fn sine_shear(amplitude: f64) -> Self {
        TargetMap::SineShear { amplitude }
    }

    /// Radial compression about the center of `[0,1]^d` with strength 0.3 and width 0.35.
    pub fn radial_compress(d: usize) -> Self {
        TargetMap::RadialCompress {
            center: vec![0.5; d],
            strength: 0.3,
            width: 0.35,
        }
    }

    pub fn compose(outer: TargetMap, inner: TargetMap) -> Self {
        TargetMap::Compose {
            outer: Box::new(outer),
            inner: Box::new(inner),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            TargetMap::Identity => Ok(()),
            TargetMap::Affine { map } => {
                if map.dim() != d || !(map.det() > 0.0) {
                    return Err(Error::InvalidInput("affine target needs det > 0".into()));
                }
                Ok(())
            }
            TargetMap::SineShear { amplitude } => {
                if d < 2 || !amplitude.is_finite() {
                    return Err(Error::InvalidInput("sine shear needs d >= 2".into()));
                }
                Ok(())
            }
            TargetMap::RadialCompress {
                center,
                strength,
                width,
            } => {
                if center.len() != d || !(0.0..1.0).contains(strength) || !(*width > 0.0) {
                    return Err(Error::InvalidInput(
                        "radial compression needs 0 <= strength < 1, width > 0".into(),
                    ));
                }
                Ok(())
            }
            TargetMap::Profile { profile } => profile.validate(),
            TargetMap::Kr { map } => crate::error::check_dim(map.dim(), d),
            TargetMap::Compose { outer, inner } => {
                outer.validate(d)?;
                inner.validate(d)
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TargetMap::Identity => x.to_vec(),
            TargetMap::Affine { map } => map.apply(x),
            TargetMap::SineShear { amplitude } => {
                let mut y = x.to_vec();
                y[1] += amplitude * (std::f64::consts::PI * x[0]).sin();
                y
            }
            TargetMap::RadialCompress {
                center,
                strength,
                width,
            } => {
                let r = radius(x, center);
                let f = radial_factor(r, *strength, *width);
                x.iter().zip(center).map(|(v, c)| c + (v - c) * f).collect()
            }
            TargetMap::Profile { profile } => {
                let mut y = x.to_vec();
                y[0] = eval_profile(profile, x[0]);
                y
            }
            TargetMap::Kr { map } => map.eval(x),
            TargetMap::Compose { outer, inner } => outer.eval(&inner.eval(x)),
        }
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            TargetMap::Identity => Ok(y.to_vec()),
            TargetMap::Affine { map } => Ok(map.inverse()?.apply(y)),
            TargetMap::SineShear { amplitude } => {
                let mut x = y.to_vec();
                x[1] -= amplitude * (std::f64::consts::PI * y[0]).sin();
                Ok(x)
            }
            TargetMap::RadialCompress {
                center,
                strength,
                width,
            } => {
                let target = radius(y, center);
                if target == 0.0 {
                    return Ok(y.to_vec());
                }
                let g = |r: f64| r * radial_factor(r, *strength, *width) - target;
                // r f(r) is increasing with slope in [1 - strength, ...] and r f(r) <= r.
                let (mut lo, mut hi) = (target, target / (1.0 - strength));
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-16 * hi {
                        break;
                    }
                }
                let r = 0.5 * (lo + hi);
                let scale = r / target;
                Ok(y.iter()
                    .zip(center)
                    .map(|(v, c)| c + (v - c) * scale)
                    .collect())
            }
            TargetMap::Profile { profile } => {
                let mut x = y.to_vec();
                x[0] = eval_profile(&invert_profile(profile), y[0]);
                Ok(x)
            }
            TargetMap::Kr { map } => map.inverse(y),
            TargetMap::Compose { outer, inner } => inner.inverse(&outer.inverse(y)?),
        }
    }

    /// `det ∇φ(x)`: exact for the affine-type maps, central differences otherwise.
    pub fn jacobian_det(&self, x: &[f64]) -> f64 {
        match self {
            TargetMap::Identity => 1.0,
            TargetMap::Affine { map } => map.det(),
            TargetMap::Profile { profile } => profile.slopes[profile.piece(x[0])],
            _ => crate::metrics::fd_jacobian_det(&|p| self.eval(p), x, 1e-6),
        }
    }
}

fn radius(x: &[f64], c: &[f64]) -> f64 {
    crate::linalg::dist(x, c)
}

fn radial_factor(r: f64, strength: f64, width: f64) -> f64 {
    1.0 - strength * (-(r * r) / (width * width)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;

    #[test]
    fn inverses_round_trip() {
        let maps = [
            TargetMap::sine_shear(0.25),
            TargetMap::radial_compress(2),
            TargetMap::compose(TargetMap::sine_shear(0.25), TargetMap::radial_compress(2)),
        ];
        for m in &maps {
            m.validate(2).unwrap();
            for k in 0..100 {
                let x = vec![(k % 10) as f64 / 9.0, (k / 10) as f64 / 9.0];
                let back = m.inverse(&m.eval(&x)).unwrap();
                assert!(dist(&back, &x) < 1e-12, "{m:?} at {x:?}");
            }
        }
    }

    #[test]
    fn radial_determinant_matches_closed_form() {
        let m = TargetMap::radial_compress(2);
        let x = [0.7, 0.4];
        let r = dist(&x, &[0.5, 0.5]);
        let (s, w) = (0.3f64, 0.35f64);
        let f = 1.0 - s * (-(r * r) / (w * w)).exp();
        let df = s * 2.0 * r / (w * w) * (-(r * r) / (w * w)).exp();
        let det = f * (f + r * df);
        assert!((m.jacobian_det(&x) - det).abs() < 1e-8);
        assert!((TargetMap::sine_shear(0.25).jacobian_det(&x) - 1.0).abs() < 1e-8);
    }
}

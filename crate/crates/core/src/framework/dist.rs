//! Parameterized distributions used by machine states for timeouts, action
//! amounts, and limits.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("uniform bounds out of order: a={a} > b={b}")]
    BoundsOrder { a: f64, b: f64 },
    #[error("discrete uniform range [{a}, {b}] contains no integer")]
    EmptyIntegerRange { a: f64, b: f64 },
    #[error("normal standard deviation must be >= 0, got {0}")]
    NegativeStd(f64),
    #[error("rayleigh scale must be > 0, got {0}")]
    NonPositiveScale(f64),
    #[error("clamp bounds out of order: min={min} > max={max}")]
    ClampOrder { min: f64, max: f64 },
    #[error("parameter is NaN")]
    NotANumber,
}

/// Distribution family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    UniformContinuous {
        a: f64,
        b: f64,
    },
    /// Integers in `[a, b]`, inclusive.
    UniformDiscrete {
        a: f64,
        b: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
    Rayleigh {
        scale: f64,
    },
    PointMass(f64),
}

/// A distribution family plus optional clamping applied after sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    pub family: Family,
    pub clamp_min: Option<f64>,
    pub clamp_max: Option<f64>,
}

impl DistributionSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            clamp_min: None,
            clamp_max: None,
        }
    }

    pub fn point(value: f64) -> Self {
        Self::new(Family::PointMass(value))
    }

    pub fn uniform(a: f64, b: f64) -> Self {
        Self::new(Family::UniformContinuous { a, b })
    }

    pub fn uniform_int(a: f64, b: f64) -> Self {
        Self::new(Family::UniformDiscrete { a, b })
    }

    pub fn normal(mean: f64, std: f64) -> Self {
        Self::new(Family::Normal { mean, std })
    }

    pub fn rayleigh(scale: f64) -> Self {
        Self::new(Family::Rayleigh { scale })
    }

    pub fn clamped(mut self, min: Option<f64>, max: Option<f64>) -> Self {
        self.clamp_min = min;
        self.clamp_max = max;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let params: &[f64] = match &self.family {
            Family::UniformContinuous { a, b } | Family::UniformDiscrete { a, b } => &[*a, *b],
            Family::Normal { mean, std } => &[*mean, *std],
            Family::Rayleigh { scale } => &[*scale],
            Family::PointMass(v) => &[*v],
        };
        if params.iter().any(|p| p.is_nan())
            || self.clamp_min.is_some_and(f64::is_nan)
            || self.clamp_max.is_some_and(f64::is_nan)
        {
            return Err(ParamError::NotANumber);
        }
        match self.family {
            Family::UniformContinuous { a, b } if a > b => {
                return Err(ParamError::BoundsOrder { a, b });
            }
            Family::UniformDiscrete { a, b } => {
                if a > b {
                    return Err(ParamError::BoundsOrder { a, b });
                }
                if a.ceil() > b.floor() {
                    return Err(ParamError::EmptyIntegerRange { a, b });
                }
            }
            Family::Normal { std, .. } if std < 0.0 => return Err(ParamError::NegativeStd(std)),
            Family::Rayleigh { scale } if scale <= 0.0 => {
                return Err(ParamError::NonPositiveScale(scale));
            }
            _ => {}
        }
        if let (Some(min), Some(max)) = (self.clamp_min, self.clamp_max) {
            if min > max {
                return Err(ParamError::ClampOrder { min, max });
            }
        }
        Ok(())
    }

    /// Draws one value, then clamps it. Parameters must already be valid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match self.family {
            Family::PointMass(v) => v,
            Family::UniformContinuous { a, b } => {
                if a == b {
                    a
                } else {
                    a + (b - a) * rng.random::<f64>()
                }
            }
            Family::UniformDiscrete { a, b } => {
                let lo = a.ceil() as i64;
                let hi = b.floor() as i64;
                rng.random_range(lo..=hi) as f64
            }
            Family::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            Family::Rayleigh { scale } => rayleigh_inverse_cdf(scale, rng.random::<f64>()),
        };
        self.clamp(raw)
    }

    fn clamp(&self, mut v: f64) -> f64 {
        if let Some(min) = self.clamp_min {
            v = v.max(min);
        }
        if let Some(max) = self.clamp_max {
            v = v.min(max);
        }
        v
    }
}

/// Inverse CDF of the Rayleigh distribution, `u` in `[0, 1)`.
pub fn rayleigh_inverse_cdf(scale: f64, u: f64) -> f64 {
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

pub fn rayleigh_cdf(scale: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        1.0 - (-(t * t) / (2.0 * scale * scale)).exp()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

// family:params:clamp_min,clamp_max
impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::UniformContinuous { a, b } => write!(f, "uniform:{a},{b}")?,
            Family::UniformDiscrete { a, b } => write!(f, "uniform_int:{a},{b}")?,
            Family::Normal { mean, std } => write!(f, "normal:{mean},{std}")?,
            Family::Rayleigh { scale } => write!(f, "rayleigh:{scale}")?,
            Family::PointMass(v) => write!(f, "point:{v}")?,
        }
        write!(
            f,
            ":{},{}",
            fmt_opt(self.clamp_min),
            fmt_opt(self.clamp_max)
        )
    }
}

impl std::str::FromStr for DistributionSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let (Some(name), Some(params), Some(clamp), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(format!("expected family:params:clamp, got {s:?}"));
        };
        let nums = params
            .split(',')
            .map(|p| p.parse::<f64>().map_err(|_| format!("bad number {p:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        let arity = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(format!("{name} takes {n} parameter(s), got {}", nums.len()))
            }
        };
        let family = match name {
            "uniform" => {
                arity(2)?;
                Family::UniformContinuous {
                    a: nums[0],
                    b: nums[1],
                }
            }
            "uniform_int" => {
                arity(2)?;
                Family::UniformDiscrete {
                    a: nums[0],
                    b: nums[1],
                }
            }
            "normal" => {
                arity(2)?;
                Family::Normal {
                    mean: nums[0],
                    std: nums[1],
                }
            }
            "rayleigh" => {
                arity(1)?;
                Family::Rayleigh { scale: nums[0] }
            }
            "point" => {
                arity(1)?;
                Family::PointMass(nums[0])
            }
            other => return Err(format!("unknown distribution family {other:?}")),
        };
        let Some((lo, hi)) = clamp.split_once(',') else {
            return Err(format!("bad clamp {clamp:?}"));
        };
        let bound = |b: &str| -> Result<Option<f64>, String> {
            if b == "-" {
                Ok(None)
            } else {
                b.parse()
                    .map(Some)
                    .map_err(|_| format!("bad clamp bound {b:?}"))
            }
        };
        let spec = DistributionSpec {
            family,
            clamp_min: bound(lo)?,
            clamp_max: bound(hi)?,
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn point_mass_is_degenerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(DistributionSpec::point(5.0).sample(&mut rng), 5.0);
    }

    #[test]
    fn degenerate_uniform_gives_cell_size() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let d = DistributionSpec::uniform(512.0, 512.0);
        for _ in 0..10 {
            assert_eq!(d.sample(&mut rng), 512.0);
        }
    }

    #[test]
    fn clamped_normal_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let d = DistributionSpec::normal(10.0, 2.0).clamped(Some(0.0), Some(20.0));
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = d.sample(&mut rng);
            assert!((0.0..=20.0).contains(&v));
            sum += v;
        }
        let mean = sum / n as f64;
        assert!((mean - 10.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn discrete_uniform_is_inclusive() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let d = DistributionSpec::uniform_int(1.0, 3.0);
        let mut seen = [false; 4];
        for _ in 0..1000 {
            let v = d.sample(&mut rng);
            assert_eq!(v.fract(), 0.0);
            seen[v as usize] = true;
        }
        assert_eq!(seen, [false, true, true, true]);
    }

    #[test]
    fn rayleigh_inverse_matches_cdf() {
        for &u in &[0.0, 0.1, 0.5, 0.9, 0.999] {
            let t = rayleigh_inverse_cdf(2.0, u);
            assert!((rayleigh_cdf(2.0, t) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(
            DistributionSpec::uniform(3.0, 1.0).validate(),
            Err(ParamError::BoundsOrder { .. })
        ));
        assert!(matches!(
            DistributionSpec::normal(0.0, -1.0).validate(),
            Err(ParamError::NegativeStd(_))
        ));
        assert!(matches!(
            DistributionSpec::rayleigh(0.0).validate(),
            Err(ParamError::NonPositiveScale(_))
        ));
        assert!(matches!(
            DistributionSpec::uniform_int(1.2, 1.8).validate(),
            Err(ParamError::EmptyIntegerRange { .. })
        ));
    }

    #[test]
    fn text_form_round_trips() {
        let specs = [
            DistributionSpec::normal(9333.333333333334, 9478.0).clamped(Some(0.0), Some(18666.7)),
            DistributionSpec::point(f64::INFINITY),
            DistributionSpec::uniform_int(1.0, 50.0),
            DistributionSpec::rayleigh(2.5).clamped(None, Some(10.0)),
        ];
        for s in specs {
            let back: DistributionSpec = s.to_string().parse().unwrap();
            assert_eq!(back, s);
        }
        assert!("normal:1:-,-".parse::<DistributionSpec>().is_err());
        assert!("gamma:1,2:-,-".parse::<DistributionSpec>().is_err());
    }
}

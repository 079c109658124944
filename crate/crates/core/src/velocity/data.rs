use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::{standard_normal_point, Rng};
use crate::spec::{parse_f64, split_call};

/// Toy data distributions for pretraining.
#[derive(Debug, Clone, PartialEq)]
pub enum DataDist {
    /// Point mass at `c`.
    Delta(Point),
    /// `N(0, scale^2 I)` in `dim` dimensions.
    Gaussian { dim: usize, scale: f64 },
    /// Equal-weight isotropic Gaussian mixture.
    Mixture { means: Vec<Point>, std: f64 },
}

impl DataDist {
    pub fn dim(&self) -> usize {
        match self {
            DataDist::Delta(c) => c.dim(),
            DataDist::Gaussian { dim, .. } => *dim,
            DataDist::Mixture { means, .. } => means[0].dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataDist::Delta(c) if c.dim() == 0 || !c.is_finite() => {
                Err(Error::Domain("point mass needs a finite, non-empty centre".into()))
            }
            DataDist::Gaussian { dim, scale } if *dim == 0 || !(*scale > 0.0) => {
                Err(Error::Domain("gaussian needs dim >= 1 and scale > 0".into()))
            }
            DataDist::Mixture { means, std } => {
                if means.is_empty() || !(*std > 0.0) {
                    return Err(Error::Domain(
                        "mixture needs at least one mean and std > 0".into(),
                    ));
                }
                let d = means[0].dim();
                if d == 0 || means.iter().any(|m| m.dim() != d || !m.is_finite()) {
                    return Err(Error::Domain(
                        "mixture means must share one non-zero dimension".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Point {
        match self {
            DataDist::Delta(c) => c.clone(),
            DataDist::Gaussian { dim, scale } => standard_normal_point(rng, *dim).scale(*scale),
            DataDist::Mixture { means, std } => {
                let k = rng.random_range(0..means.len());
                let z = standard_normal_point(rng, means[k].dim());
                means[k].add_scaled(*std, &z)
            }
        }
    }
}

fn fmt_point(p: &Point) -> String {
    p.coords()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_point(s: &str, ctx: &str) -> Result<Point> {
    let coords = s
        .split_whitespace()
        .map(|c| parse_f64(c, ctx))
        .collect::<Result<Vec<_>>>()?;
    if coords.is_empty() {
        return Err(Error::Domain(format!("empty point in `{}`", ctx.trim())));
    }
    Ok(Point(coords))
}

/// Text forms: `delta(1 1)`, `gaussian(2, 1.0)`, `mixture(0.3, -2 0, 2 0)`.
impl fmt::Display for DataDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataDist::Delta(c) => write!(f, "delta({})", fmt_point(c)),
            DataDist::Gaussian { dim, scale } => write!(f, "gaussian({dim}, {scale})"),
            DataDist::Mixture { means, std } => {
                write!(f, "mixture({std}")?;
                for m in means {
                    write!(f, ", {}", fmt_point(m))?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for DataDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let dist = match name.as_str() {
            "delta" if args.len() == 1 => DataDist::Delta(parse_point(&args[0], s)?),
            "gaussian" if args.len() == 2 => DataDist::Gaussian {
                dim: args[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad dimension in `{}`", s.trim())))?,
                scale: parse_f64(&args[1], s)?,
            },
            "mixture" if args.len() >= 2 => DataDist::Mixture {
                std: parse_f64(&args[0], s)?,
                means: args[1..]
                    .iter()
                    .map(|a| parse_point(a, s))
                    .collect::<Result<_>>()?,
            },
            _ => {
                return Err(Error::Domain(format!(
                    "unrecognised data distribution `{}`",
                    s.trim()
                )))
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn parse_and_print() {
        for text in ["delta(1 1)", "gaussian(2, 1)", "mixture(0.3, -2 0, 2 0)"] {
            let d: DataDist = text.parse().unwrap();
            assert_eq!(d.to_string(), text);
            assert_eq!(d.dim(), 2);
        }
        assert!("mixture(0, 1 1)".parse::<DataDist>().is_err());
        assert!("mixture(0.3, 1 1, 2)".parse::<DataDist>().is_err());
        assert!("uniform(2)".parse::<DataDist>().is_err());
    }

    #[test]
    fn mixture_samples_near_means() {
        let d: DataDist = "mixture(0.05, -2 0, 2 0)".parse().unwrap();
        let mut rng = rng_from(0);
        let mut left = 0;
        for _ in 0..2000 {
            let p = d.sample(&mut rng);
            assert!((p[0].abs() - 2.0).abs() < 0.5);
            if p[0] < 0.0 {
                left += 1;
            }
        }
        assert!((800..1200).contains(&left));
    }
}

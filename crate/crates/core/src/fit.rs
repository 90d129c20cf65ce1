//! Least-squares power-law fits on log–log data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values below this are treated as exact zeros.
pub const NORM_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    /// Exponent `p` in `y ≈ C x^p`; `+∞` when every `y` is below the floor.
    #[serde(with = "crate::fit::extended")]
    pub slope: f64,
    #[serde(with = "crate::fit::extended")]
    pub intercept: f64,
    /// Root-mean-square residual of `log y` about the fitted line.
    #[serde(with = "crate::fit::extended")]
    pub residual: f64,
}

/// Fits `log y = intercept + slope · log x`. Entries of `y` are floored at
/// [`NORM_FLOOR`].
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: xs.len() });
    }
    if xs.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive abscissae".into()));
    }
    if ys.iter().all(|y| *y < NORM_FLOOR) {
        return Ok(LogLogFit { slope: f64::INFINITY, intercept: f64::NEG_INFINITY, residual: 0.0 });
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(NORM_FLOOR).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("log-log fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LogLogFit { slope, intercept, residual: (ss / n).sqrt() })
}

/// Serde adapter writing non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub mod extended {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Num(f64),
            Text(String),
        }
        match Doc::deserialize(d)? {
            Doc::Num(v) => Ok(v),
            Doc::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("`{t}` is not a number"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs: Vec<f64> = (1..10).map(|j| 1.0 / j as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(2.5)).collect();
        let f = loglog_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn all_zero_is_infinite_slope() {
        let f = loglog_fit(&[0.5, 0.25], &[0.0, 0.0]).unwrap();
        assert_eq!(f.slope, f64::INFINITY);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(loglog_fit(&[0.5], &[1.0]).is_err());
        assert!(loglog_fit(&[0.5, 0.5], &[1.0, 2.0]).is_err());
        assert!(loglog_fit(&[0.5, -1.0], &[1.0, 2.0]).is_err());
    }
}

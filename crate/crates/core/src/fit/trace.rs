use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace x and y lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("trace sigma length {sigma} differs from {n} points")]
    SigmaLength { sigma: usize, n: usize },
    #[error("trace x not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("trace sigma must be positive (index {0})")]
    NonPositiveSigma(usize),
    #[error("trace contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("trace is empty")]
    Empty,
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace CSV header must start with x,y (optionally x,y,sigma), found {0:?}")]
    Header(Vec<String>),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampled data for a one-dimensional fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl Trace {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, TraceError> {
        Self::with_sigma(x, y, None)
    }

    pub fn with_sigma(
        x: Vec<f64>,
        y: Vec<f64>,
        sigma: Option<Vec<f64>>,
    ) -> Result<Self, TraceError> {
        let t = Self { x, y, sigma };
        t.validate()?;
        Ok(t)
    }

    /// Samples `f` on `x`.
    pub fn from_fn(x: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self, TraceError> {
        let y = x.iter().map(|&v| f(v)).collect();
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.x.is_empty() {
            return Err(TraceError::Empty);
        }
        if self.x.len() != self.y.len() {
            return Err(TraceError::LengthMismatch {
                x: self.x.len(),
                y: self.y.len(),
            });
        }
        for (i, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(TraceError::NonFinite(i));
            }
        }
        if let Some(i) = self.x.windows(2).position(|w| w[1] <= w[0]) {
            return Err(TraceError::NotIncreasing(i + 1));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.x.len() {
                return Err(TraceError::SigmaLength {
                    sigma: s.len(),
                    n: self.x.len(),
                });
            }
            if let Some(i) = s.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(TraceError::NonPositiveSigma(i));
            }
        }
        Ok(())
    }

    /// Reads `x,y[,sigma]` CSV with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let has_sigma = match headers.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["x", "y"] => false,
            ["x", "y", "sigma"] => true,
            _ => return Err(TraceError::Header(headers)),
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut sigma = Vec::new();
        if has_sigma {
            for rec in rdr.deserialize::<(f64, f64, f64)>() {
                let (a, b, s) = rec?;
                x.push(a);
                y.push(b);
                sigma.push(s);
            }
        } else {
            for rec in rdr.deserialize::<(f64, f64)>() {
                let (a, b) = rec?;
                x.push(a);
                y.push(b);
            }
        }
        Self::with_sigma(x, y, has_sigma.then_some(sigma))
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(writer);
        match &self.sigma {
            Some(s) => {
                w.write_record(["x", "y", "sigma"])?;
                for i in 0..self.len() {
                    w.serialize((self.x[i], self.y[i], s[i]))?;
                }
            }
            None => {
                w.write_record(["x", "y"])?;
                for i in 0..self.len() {
                    w.serialize((self.x[i], self.y[i]))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = Trace::with_sigma(
            vec![0.1, 0.2, 1.0 / 3.0],
            vec![1e-9, -2.5e7, std::f64::consts::PI],
            Some(vec![0.01, 0.02, 0.03]),
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(Trace::read_csv(&buf[..]).unwrap(), t);

        let plain = Trace::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        plain.write_csv(&mut buf).unwrap();
        assert_eq!(Trace::read_csv(&buf[..]).unwrap(), plain);
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(matches!(
            Trace::new(vec![0.0, 0.0], vec![1.0, 2.0]),
            Err(TraceError::NotIncreasing(1))
        ));
        assert!(Trace::new(vec![0.0], vec![]).is_err());
        assert!(Trace::with_sigma(vec![0.0], vec![1.0], Some(vec![0.0])).is_err());
        assert!(Trace::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}

//! Scattered samples on the torus and their CSV representation.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise bookkeeping attached to synthetic samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub sigma2: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// `n` points in `[0,1)^d` (row-major) with complex values.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSet {
    d: usize,
    points: Vec<f64>,
    values: Vec<Complex64>,
    noise: Option<NoiseMeta>,
}

impl SamplingSet {
    pub fn new(d: usize, points: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSamples("dimension must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::Empty("sampling set has no points"));
        }
        if points.len() != d * values.len() {
            return Err(Error::DimensionMismatch {
                expected: d * values.len(),
                actual: points.len(),
            });
        }
        if let Some(x) = points.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(Error::InvalidSamples(format!(
                "coordinate {x} outside [0, 1)"
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidSamples("non-finite sample value".into()));
        }
        Ok(SamplingSet {
            d,
            points,
            values,
            noise: None,
        })
    }

    pub fn with_noise(mut self, noise: NoiseMeta) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn noise(&self) -> Option<&NoiseMeta> {
        self.noise.as_ref()
    }

    /// Same points, different values.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        let mut out = SamplingSet::new(self.d, self.points.clone(), values)?;
        out.noise = self.noise;
        Ok(out)
    }

    /// Writes `x1,…,xd,y_re,y_im` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("y_re".into());
        header.push("y_im".into());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.d + 2);
        for (i, v) in self.values.iter().enumerate() {
            row.clear();
            row.extend(self.point(i).iter().map(|x| format!("{x:.16e}")));
            row.push(format!("{:.16e}", v.re));
            row.push(format!("{:.16e}", v.im));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[cols - 2] != "y_re" || &header[cols - 1] != "y_im" {
            return Err(Error::InvalidSamples(
                "expected header x1,...,xd,y_re,y_im".into(),
            ));
        }
        let d = cols - 2;
        let mut points = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidSamples(format!("bad number `{s}`: {e}")))
            };
            for field in record.iter().take(d) {
                points.push(parse(field)?);
            }
            values.push(Complex64::new(parse(&record[d])?, parse(&record[d + 1])?));
        }
        SamplingSet::new(d, points, values)
    }
}

/// Reads a points-only CSV (`x1,…,xd`, extra `y_*` columns ignored).
pub fn read_points_csv<R: Read>(reader: R) -> Result<(usize, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let d = header.iter().take_while(|h| h.starts_with('x')).count();
    if d == 0 {
        return Err(Error::InvalidSamples("no x columns in header".into()));
    }
    let mut points = Vec::new();
    for record in r.records() {
        let record = record?;
        for field in record.iter().take(d) {
            points.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidSamples(format!("bad number `{field}`: {e}")))?,
            );
        }
    }
    Ok((d, points))
}

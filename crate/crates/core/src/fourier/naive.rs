use num_complex::Complex64;
use rayon::prelude::*;

use super::{cis_turns, reduced_turns, FourierOperator};
use crate::error::Result;
use crate::index_sets::GroupedIndexSet;

/// Builds every matrix entry from scratch. `O(n |I| d)` work.
pub struct NaiveOperator<'a> {
    d: usize,
    points: &'a [f64],
    frequencies: Vec<Vec<f64>>,
}

impl<'a> NaiveOperator<'a> {
    pub fn new(points: &'a [f64], index_set: &GroupedIndexSet) -> Self {
        NaiveOperator {
            d: index_set.d(),
            points,
            frequencies: index_set
                .frequencies()
                .map(|k| k.into_iter().map(|v| v as f64).collect())
                .collect(),
        }
    }

    fn entry(&self, i: usize, k: &[f64]) -> Complex64 {
        let x = &self.points[i * self.d..(i + 1) * self.d];
        let t: f64 = k.iter().zip(x).map(|(&kj, &xj)| reduced_turns(kj, xj)).sum();
        cis_turns(t - t.round())
    }
}

impl FourierOperator for NaiveOperator<'_> {
    fn n_points(&self) -> usize {
        self.points.len() / self.d
    }

    fn n_coefficients(&self) -> usize {
        self.frequencies.len()
    }

    fn forward(&self, coeffs: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        self.check_forward(coeffs, out)?;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = self
                .frequencies
                .iter()
                .zip(coeffs)
                .map(|(k, c)| c * self.entry(i, k))
                .sum();
        });
        Ok(())
    }

    fn adjoint(&self, values: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        self.check_adjoint(values, out)?;
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let k = &self.frequencies[p];
            *o = values
                .iter()
                .enumerate()
                .map(|(i, v)| v * self.entry(i, k).conj())
                .sum();
        });
        Ok(())
    }
}

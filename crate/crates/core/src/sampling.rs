//! Deterministic evaluation of independent per-sample quadratic forms.
//!
//! Samples are grouped into fixed chunks of [`CHUNK`] consecutive indices.
//! Chunks are evaluated in parallel, but the per-sample values are reduced
//! strictly in index order, so the result does not depend on the size of
//! the rayon pool.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::Result;

/// Probes evaluated together as one block of column vectors.
pub(crate) const CHUNK: usize = 32;

/// Chunks evaluated between two sequential reduction passes; bounds the
/// memory held when samples are not retained.
const CHUNKS_PER_PASS: usize = 512;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SampleSummary {
    pub mean: f64,
    pub samples: Vec<f64>,
    pub matvecs: u64,
    pub min_sample: f64,
}

/// Runs `kernel` over samples `0..m` and reduces the results.
///
/// The kernel receives a contiguous index range (never longer than
/// [`CHUNK`]) and must push exactly one value per index, returning the
/// number of matvecs it spent.
pub(crate) fn run_samples<F>(m: usize, retain: bool, kernel: F) -> Result<SampleSummary>
where
    F: Fn(Range<u64>, &mut Vec<f64>) -> Result<u64> + Sync,
{
    let n_chunks = m.div_ceil(CHUNK);
    let mut acc = CompensatedSum::default();
    let mut samples = if retain { Vec::with_capacity(m) } else { Vec::new() };
    let mut matvecs = 0u64;
    let mut min_sample = f64::INFINITY;

    let mut first = 0;
    while first < n_chunks {
        let last = (first + CHUNKS_PER_PASS).min(n_chunks);
        let pass: Vec<Result<(Vec<f64>, u64)>> = (first..last)
            .into_par_iter()
            .map(|c| {
                let start = (c * CHUNK) as u64;
                let end = ((c + 1) * CHUNK).min(m) as u64;
                let mut out = Vec::with_capacity(CHUNK);
                let mv = kernel(start..end, &mut out)?;
                debug_assert_eq!(out.len() as u64, end - start);
                Ok((out, mv))
            })
            .collect();
        for chunk in pass {
            let (values, mv) = chunk?;
            matvecs += mv;
            for v in &values {
                acc.add(*v);
                min_sample = min_sample.min(*v);
            }
            if retain {
                samples.extend_from_slice(&values);
            }
        }
        first = last;
    }

    Ok(SampleSummary {
        mean: acc.value() / m as f64,
        samples,
        matvecs,
        min_sample,
    })
}

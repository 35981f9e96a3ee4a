//! Two-dimensional complex FFT over row-major planes.
//!
//! Forward transforms use the `exp(-j2πfx)` kernel and are unnormalized; the
//! inverse carries the `1/(W·H)` factor.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("width", &self.width).field("height", &self.height).finish()
    }
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let norm = 1.0 / (self.width * self.height) as f64;
        data.iter_mut().for_each(|z| *z *= norm);
    }

    fn transform(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        assert_eq!(data.len(), w * h, "plane length does not match FFT size");
        rows.process(data);
        if h == 1 {
            return;
        }
        let mut transposed = vec![Complex64::new(0.0, 0.0); w * h];
        transpose(data, &mut transposed, w, h);
        cols.process(&mut transposed);
        transpose(&transposed, data, h, w);
    }
}

/// `src` is `rows x cols` row-major; `dst` receives the `cols x rows` transpose.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Signed DFT frequency index of bin `i` for an `n`-point transform, in
/// `[-n/2, n/2)` for even `n`.
pub fn freq_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

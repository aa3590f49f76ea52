//! Free-space convolution on uniform grids by FFT on the zero-padded doubled
//! box. Padding to at least `2n - 1` points per axis makes the circular
//! convolution coincide with the linear one, emulating a problem posed on all
//! of space rather than on a torus.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::exec;
use crate::grid::SpatialGrid;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache");
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place n-dimensional complex FFT, row-major layout. Unnormalized, like
/// the underlying 1D transforms; callers divide by the total length after a
/// forward/inverse round trip.
pub fn fftnd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total);
    let ndim = dims.len();

    // Last axis is contiguous.
    let last = dims[ndim - 1];
    let fft = plan(last, inverse);
    exec::chunks_mut(data, last, |_, line| fft.process(line));

    // Remaining axes via gather/scatter on strided lines.
    for axis in (0..ndim - 1).rev() {
        let m = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        let block = m * stride;
        let fft = plan(m, inverse);
        exec::chunks_mut(data, block, |_, slab| {
            let mut line = vec![Complex64::default(); m];
            for j in 0..stride {
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = slab[i * stride + j];
                }
                fft.process(&mut line);
                for (i, &v) in line.iter().enumerate() {
                    slab[i * stride + j] = v;
                }
            }
        });
    }
}

/// Prepared free-space convolution with a fixed kernel on a fixed grid.
///
/// Stores the forward transform of the kernel displacement table scaled by the
/// cell volume, so each convolution costs two FFTs.
#[derive(Clone)]
pub struct FreeConv {
    nodes: Vec<usize>,
    padded: Vec<usize>,
    spacing: Vec<f64>,
    khat: Vec<Complex64>,
}

impl FreeConv {
    /// Build from kernel values at displacements `(m_1 h_1, ..., m_d h_d)`,
    /// `m_k` ranging over `[-(n_k - 1), n_k - 1]`.
    pub fn from_displacements(grid: &SpatialGrid, sample: impl Fn(&[i64; 3]) -> f64) -> Self {
        let dim = grid.dim();
        let nodes: Vec<usize> = grid.nodes_per_axis().to_vec();
        let padded: Vec<usize> = nodes.iter().map(|&n| (2 * n - 1).next_power_of_two()).collect();
        let spacing: Vec<f64> = (0..dim).map(|k| grid.spacing(k)).collect();
        let total: usize = padded.iter().product();
        let cell: f64 = spacing.iter().product();

        let mut buf = vec![Complex64::default(); total];
        // Embed displacement m at padded index (m + M) mod M per axis.
        let mut offsets = [0i64; 3];
        embed_recursive(&mut buf, &padded, &nodes, 0, 0, &mut offsets, &sample);
        for v in buf.iter_mut() {
            *v *= cell;
        }
        fftnd(&mut buf, &padded, false);
        Self { nodes, padded, spacing, khat: buf }
    }

    pub fn padded_dims(&self) -> &[usize] {
        &self.padded
    }

    /// Forward spectrum of the kernel (approximation of its Fourier transform
    /// at the discrete frequencies returned by [`Self::frequency`]).
    pub fn spectrum(&self) -> &[Complex64] {
        &self.khat
    }

    /// Frequency vector of a flat padded index.
    pub fn frequency(&self, mut flat: usize) -> [f64; 3] {
        let mut xi = [0.0; 3];
        for k in (0..self.padded.len()).rev() {
            let m = self.padded[k];
            let p = flat % m;
            flat /= m;
            let signed = if p <= m / 2 { p as i64 } else { p as i64 - m as i64 };
            xi[k] = 2.0 * std::f64::consts::PI * signed as f64 / (m as f64 * self.spacing[k]);
        }
        xi
    }

    /// Volume of one discrete frequency cell, `prod 2 pi / (M_k h_k)`.
    pub fn frequency_cell(&self) -> f64 {
        self.padded
            .iter()
            .zip(&self.spacing)
            .map(|(&m, &h)| 2.0 * std::f64::consts::PI / (m as f64 * h))
            .product()
    }

    /// Convolve grid samples with the kernel (`adjoint` uses the reversed
    /// kernel, i.e. the formal adjoint of the convolution operator).
    pub fn convolve(&self, rho: &[f64], adjoint: bool) -> Vec<f64> {
        let total: usize = self.padded.iter().product();
        let mut buf = vec![Complex64::default(); total];
        scatter_padded(&mut buf, &self.padded, &self.nodes, rho);
        fftnd(&mut buf, &self.padded, false);
        if adjoint {
            // Real kernel: reversed table transforms to the conjugate spectrum.
            for (v, k) in buf.iter_mut().zip(&self.khat) {
                *v *= k.conj();
            }
        } else {
            for (v, k) in buf.iter_mut().zip(&self.khat) {
                *v *= k;
            }
        }
        fftnd(&mut buf, &self.padded, true);
        let scale = 1.0 / total as f64;
        gather_padded(&buf, &self.padded, &self.nodes, scale)
    }
}

fn embed_recursive(
    buf: &mut [Complex64],
    padded: &[usize],
    nodes: &[usize],
    axis: usize,
    base: usize,
    offsets: &mut [i64; 3],
    sample: &impl Fn(&[i64; 3]) -> f64,
) {
    let m = padded[axis];
    let n = nodes[axis] as i64;
    for disp in -(n - 1)..n {
        let p = disp.rem_euclid(m as i64) as usize;
        offsets[axis] = disp;
        let idx = base * m + p;
        if axis + 1 == padded.len() {
            buf[idx] = Complex64::new(sample(offsets), 0.0);
        } else {
            embed_recursive(buf, padded, nodes, axis + 1, idx, offsets, sample);
        }
    }
    offsets[axis] = 0;
}

fn scatter_padded(buf: &mut [Complex64], padded: &[usize], nodes: &[usize], rho: &[f64]) {
    let dim = padded.len();
    match dim {
        1 => {
            for (i, &v) in rho.iter().enumerate() {
                buf[i] = Complex64::new(v, 0.0);
            }
        }
        2 => {
            let (n0, n1) = (nodes[0], nodes[1]);
            let m1 = padded[1];
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    buf[i0 * m1 + i1] = Complex64::new(rho[i0 * n1 + i1], 0.0);
                }
            }
        }
        3 => {
            let (n0, n1, n2) = (nodes[0], nodes[1], nodes[2]);
            let (m1, m2) = (padded[1], padded[2]);
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    let src = (i0 * n1 + i1) * n2;
                    let dst = (i0 * m1 + i1) * m2;
                    for i2 in 0..n2 {
                        buf[dst + i2] = Complex64::new(rho[src + i2], 0.0);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

fn gather_padded(buf: &[Complex64], padded: &[usize], nodes: &[usize], scale: f64) -> Vec<f64> {
    let dim = padded.len();
    let total: usize = nodes.iter().product();
    let mut out = vec![0.0; total];
    match dim {
        1 => {
            for (i, v) in out.iter_mut().enumerate() {
                *v = buf[i].re * scale;
            }
        }
        2 => {
            let (n0, n1) = (nodes[0], nodes[1]);
            let m1 = padded[1];
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    out[i0 * n1 + i1] = buf[i0 * m1 + i1].re * scale;
                }
            }
        }
        3 => {
            let (n0, n1, n2) = (nodes[0], nodes[1], nodes[2]);
            let (m1, m2) = (padded[1], padded[2]);
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    let dst = (i0 * n1 + i1) * n2;
                    let src = (i0 * m1 + i1) * m2;
                    for i2 in 0..n2 {
                        out[dst + i2] = buf[src + i2].re * scale;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

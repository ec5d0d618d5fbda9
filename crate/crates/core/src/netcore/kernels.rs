//! Raw 1-D convolution kernels over `[batch, channels, length]` buffers.

use std::borrow::Cow;

/// Geometry of a grouped, strided, zero-padded 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn out_len(&self) -> usize {
        (self.in_len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Output positions `t` with `t * stride + offset` inside the input.
    #[inline]
    fn valid_range(&self, offset: isize) -> (usize, usize) {
        let s = self.stride;
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset) as usize).div_ceil(s)
        };
        let last = self.in_len as isize - 1 - offset;
        let hi = if last < 0 {
            0
        } else {
            (last as usize / s + 1).min(self.out_len())
        };
        (lo, hi.max(lo))
    }
}

/// `y[i] += a * x[i]`.
#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Rows of length `len` split into `stride` phases: phase `r` of a row holds
/// `x[r], x[r + stride], ...`, padded to a common phase length. Stride 1
/// borrows the rows unchanged.
struct Phased<'a> {
    stride: usize,
    phase_len: usize,
    data: Cow<'a, [f64]>,
}

impl<'a> Phased<'a> {
    fn zeros(rows: usize, len: usize, stride: usize) -> Self {
        let phase_len = len.div_ceil(stride);
        Phased {
            stride,
            phase_len,
            data: Cow::Owned(vec![0.0; rows * stride * phase_len]),
        }
    }

    fn split(x: &'a [f64], len: usize, stride: usize) -> Self {
        if stride == 1 {
            return Phased {
                stride,
                phase_len: len,
                data: Cow::Borrowed(x),
            };
        }
        let mut p = Phased::zeros(x.len() / len, len, stride);
        let data = p.data.to_mut();
        let phase_len = p.phase_len;
        for (row, src) in x.chunks_exact(len).enumerate() {
            for (i, &v) in src.iter().enumerate() {
                data[(row * stride + i % stride) * phase_len + i / stride] = v;
            }
        }
        p
    }

    #[inline]
    fn index(&self, row: usize, phase: usize, u: usize) -> usize {
        (row * self.stride + phase) * self.phase_len + u
    }

    fn phase(&self, row: usize, phase: usize) -> &[f64] {
        let i = self.index(row, phase, 0);
        &self.data[i..i + self.phase_len]
    }

    fn phase_mut(&mut self, row: usize, phase: usize) -> &mut [f64] {
        let i = self.index(row, phase, 0);
        &mut self.data.to_mut()[i..i + self.phase_len]
    }

    fn merge_into(&self, out: &mut [f64], len: usize) {
        for (row, dst) in out.chunks_exact_mut(len).enumerate() {
            for (i, v) in dst.iter_mut().enumerate() {
                *v += self.data[self.index(row, i % self.stride, i / self.stride)];
            }
        }
    }
}

/// Where tap offset `offset` lands in the phased input: the phase, the
/// output range `[lo, hi)` that stays inside the input, and the start of the
/// matching phase slice.
#[inline]
fn tap_window(g: &ConvGeometry, offset: isize) -> (usize, usize, usize, usize) {
    let s = g.stride as isize;
    let q = offset.div_euclid(s);
    let r = offset.rem_euclid(s) as usize;
    let (lo, hi) = g.valid_range(offset);
    let start = if hi > lo { (lo as isize + q) as usize } else { 0 };
    (r, lo, hi, start)
}

/// `y[b, co, t] = sum_{j, k} w[co, j, k] * x[b, g*cin_g + j, t*stride + k - pad]`.
pub fn conv_forward(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
    let lout = g.out_len();
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let phased = Phased::split(x, g.in_len, g.stride);
    let taps: Vec<_> = (0..g.kernel)
        .map(|k| tap_window(g, k as isize - g.pad as isize))
        .collect();
    let mut y = vec![0.0; g.batch * g.out_channels * lout];
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let group = co / cout_g;
            let yrow = &mut y[(b * g.out_channels + co) * lout..][..lout];
            for j in 0..cin_g {
                let row = b * g.in_channels + group * cin_g + j;
                for (k, &(phase, lo, hi, start)) in taps.iter().enumerate() {
                    let wv = w[(co * cin_g + j) * g.kernel + k];
                    axpy(&mut yrow[lo..hi], wv, &phased.phase(row, phase)[start..start + hi - lo]);
                }
            }
        }
    }
    y
}

/// Accumulates input and weight gradients of [`conv_forward`].
pub fn conv_backward(g: &ConvGeometry, x: &[f64], w: &[f64], dy: &[f64], dx: &mut [f64], dw: &mut [f64]) {
    let lout = g.out_len();
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let phased = Phased::split(x, g.in_len, g.stride);
    let taps: Vec<_> = (0..g.kernel)
        .map(|k| tap_window(g, k as isize - g.pad as isize))
        .collect();
    let mut strided = (g.stride > 1).then(|| Phased::zeros(g.batch * g.in_channels, g.in_len, g.stride));
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let group = co / cout_g;
            let dyrow = &dy[(b * g.out_channels + co) * lout..][..lout];
            for j in 0..cin_g {
                let row = b * g.in_channels + group * cin_g + j;
                for (k, &(phase, lo, hi, start)) in taps.iter().enumerate() {
                    let widx = (co * cin_g + j) * g.kernel + k;
                    let n = hi - lo;
                    let d = &dyrow[lo..hi];
                    let target = match strided.as_mut() {
                        Some(p) => &mut p.phase_mut(row, phase)[start..start + n],
                        None => &mut dx[row * g.in_len + start..][..n],
                    };
                    axpy(target, w[widx], d);
                    dw[widx] += dot(d, &phased.phase(row, phase)[start..start + n]);
                }
            }
        }
    }
    if let Some(p) = strided {
        p.merge_into(dx, g.in_len);
    }
}

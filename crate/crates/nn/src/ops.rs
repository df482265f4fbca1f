//! Low-level kernels: strided GEMM plus the im2col/col2im pair used by the
//! convolution layers.

/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical_dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + a · b`, with `c` row-major `m × n`.
pub fn gemm(a: Mat<'_>, b: Mat<'_>, c: &mut [f32], beta: f32) {
    let (m, k) = a.logical_dims();
    let (k2, n) = b.logical_dims();
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert_eq!(c.len(), m * n, "gemm output size mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: operand lengths and strides were checked against the logical
    // dimensions above, so every index matrixmultiply touches is in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a sliding-window operation over one (C, H, W) plane stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Range of output indices `o` whose tap `o*stride + k - padding` lands
    /// inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if extent + p > k { ((extent - 1 + p - k) / s + 1).min(out) } else { 0 };
        lo..hi.max(lo)
    }

    /// Invokes `f(col_row, position_start, input_start, count)` for every
    /// contiguous run of in-bounds taps; the input advances by `stride`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels {
            for ky in 0..k {
                let ys = self.valid_range(ky, self.height, oh);
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let xs = self.valid_range(kx, self.width, ow);
                    if xs.is_empty() {
                        continue;
                    }
                    for oy in ys.clone() {
                        let iy = oy * self.stride + ky - self.padding;
                        let base = (c * self.height + iy) * self.width;
                        let ix0 = xs.start * self.stride + kx - self.padding;
                        f(row, oy * ow + xs.start, base + ix0, xs.len());
                    }
                }
            }
        }
    }
}

/// Unfolds a batch of images into a `(C*k*k) × (N*P)` column matrix, where
/// column `n*P + p` holds the receptive field of output position `p` of
/// sample `n`.
pub fn im2col(input: &[f32], batch: usize, win: &Window) -> Vec<f32> {
    let sample = win.channels * win.height * win.width;
    let p = win.positions();
    let ld = batch * p;
    let mut cols = vec![0.0; win.col_rows() * ld];
    for n in 0..batch {
        let x = &input[n * sample..(n + 1) * sample];
        let off = n * p;
        let stride = win.stride;
        win.for_each_run(|row, pos, idx, count| {
            let dst = &mut cols[row * ld + off + pos..row * ld + off + pos + count];
            if stride == 1 {
                dst.copy_from_slice(&x[idx..idx + count]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = x[idx + j * stride];
                }
            }
        });
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlapping taps.
pub fn col2im(cols: &[f32], batch: usize, win: &Window) -> Vec<f32> {
    let sample = win.channels * win.height * win.width;
    let p = win.positions();
    let ld = batch * p;
    assert_eq!(cols.len(), win.col_rows() * ld);
    let mut out = vec![0.0; batch * sample];
    for n in 0..batch {
        let x = &mut out[n * sample..(n + 1) * sample];
        let off = n * p;
        let stride = win.stride;
        win.for_each_run(|row, pos, idx, count| {
            let src = &cols[row * ld + off + pos..row * ld + off + pos + count];
            for (j, v) in src.iter().enumerate() {
                x[idx + j * stride] += *v;
            }
        });
    }
    out
}

/// `(N, C, P)` → `(C, N*P)`.
pub fn batch_to_channel_major(x: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    let ld = batch * plane;
    for n in 0..batch {
        for c in 0..channels {
            let src = &x[(n * channels + c) * plane..(n * channels + c + 1) * plane];
            out[c * ld + n * plane..c * ld + (n + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// `(C, N*P)` → `(N, C, P)`.
pub fn channel_major_to_batch(x: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    let ld = batch * plane;
    for n in 0..batch {
        for c in 0..channels {
            out[(n * channels + c) * plane..(n * channels + c + 1) * plane]
                .copy_from_slice(&x[c * ld + n * plane..c * ld + (n + 1) * plane]);
        }
    }
    out
}

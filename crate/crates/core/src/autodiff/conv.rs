//! im2col convolution on top of `matrixmultiply::dgemm`.

pub(super) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Row-major `c = a * b + beta * c` with optional transposition of either
/// operand. `a` is `m x k` after transposition, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: slice lengths checked above; strides describe row-major
    // (or transposed row-major) layouts that stay inside each slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(geo: &ConvGeometry, image: &[f64], col: &mut [f64]) {
    let (h, w, k) = (geo.height, geo.width, geo.kernel);
    let pad = k / 2;
    let plane = geo.plane();
    for c in 0..geo.in_channels {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let line = &mut dst[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h || x_lo >= x_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let sy = sy - pad;
                    line[..x_lo].fill(0.0);
                    line[x_hi..].fill(0.0);
                    let sx0 = x_lo + kx - pad;
                    line[x_lo..x_hi].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im_add(geo: &ConvGeometry, col: &[f64], image: &mut [f64]) {
    let (h, w, k) = (geo.height, geo.width, geo.kernel);
    let pad = k / 2;
    let plane = geo.plane();
    for c in 0..geo.in_channels {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    let sx0 = x_lo + kx - pad;
                    let out = &mut dst[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
                    for (o, &v) in out.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Returns the output and the per-image column buffers kept for backward.
/// 1x1 kernels skip im2col and keep an empty buffer.
pub(super) fn forward(geo: &ConvGeometry, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let plane = geo.plane();
    let patch = geo.patch();
    let in_size = geo.in_channels * plane;
    let out_size = geo.out_channels * plane;
    let mut out = vec![0.0; geo.batch * out_size];
    let mut cols = if geo.kernel == 1 {
        Vec::new()
    } else {
        vec![0.0; geo.batch * patch * plane]
    };
    for n in 0..geo.batch {
        let image = &input[n * in_size..(n + 1) * in_size];
        let col: &[f64] = if geo.kernel == 1 {
            image
        } else {
            let col = &mut cols[n * patch * plane..(n + 1) * patch * plane];
            im2col(geo, image, col);
            col
        };
        let dst = &mut out[n * out_size..(n + 1) * out_size];
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                dst[o * plane..(o + 1) * plane].fill(bo);
            }
        }
        gemm(
            geo.out_channels,
            patch,
            plane,
            weight,
            false,
            col,
            false,
            if bias.is_some() { 1.0 } else { 0.0 },
            dst,
        );
    }
    (out, cols)
}

pub(super) fn backward_bias(geo: &ConvGeometry, grad_out: &[f64], db: &mut [f64]) {
    let plane = geo.plane();
    for n in 0..geo.batch {
        for (o, d) in db.iter_mut().enumerate() {
            let start = (n * geo.out_channels + o) * plane;
            *d += grad_out[start..start + plane].iter().sum::<f64>();
        }
    }
}

pub(super) fn backward_weight(geo: &ConvGeometry, grad_out: &[f64], cols: &[f64], dw: &mut [f64]) {
    // For 1x1 kernels `cols` is the layer input itself.
    let plane = geo.plane();
    let patch = geo.patch();
    let out_size = geo.out_channels * plane;
    for n in 0..geo.batch {
        gemm(
            geo.out_channels,
            plane,
            patch,
            &grad_out[n * out_size..(n + 1) * out_size],
            false,
            &cols[n * patch * plane..(n + 1) * patch * plane],
            true,
            1.0,
            dw,
        );
    }
}

pub(super) fn backward_input(geo: &ConvGeometry, grad_out: &[f64], weight: &[f64], dx: &mut [f64]) {
    let plane = geo.plane();
    let patch = geo.patch();
    let in_size = geo.in_channels * plane;
    let out_size = geo.out_channels * plane;
    let mut dcol = vec![0.0; patch * plane];
    for n in 0..geo.batch {
        let g = &grad_out[n * out_size..(n + 1) * out_size];
        let dst = &mut dx[n * in_size..(n + 1) * in_size];
        if geo.kernel == 1 {
            gemm(patch, geo.out_channels, plane, weight, true, g, false, 1.0, dst);
        } else {
            gemm(patch, geo.out_channels, plane, weight, true, g, false, 0.0, &mut dcol);
            col2im_add(geo, &dcol, dst);
        }
    }
}

/// Direct seven-loop convolution, used as an oracle in tests.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reference(
    input: &[f64],
    batch: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    weight: &[f64],
    out_channels: usize,
    kernel: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let pad = kernel as isize / 2;
    let mut out = vec![0.0; batch * out_channels * height * width];
    for n in 0..batch {
        for o in 0..out_channels {
            for y in 0..height {
                for x in 0..width {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for c in 0..in_channels {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let sy = y as isize + ky as isize - pad;
                                let sx = x as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= height as isize || sx >= width as isize {
                                    continue;
                                }
                                let xi = ((n * in_channels + c) * height + sy as usize) * width + sx as usize;
                                let wi = ((o * in_channels + c) * kernel + ky) * kernel + kx;
                                acc += input[xi] * weight[wi];
                            }
                        }
                    }
                    out[((n * out_channels + o) * height + y) * width + x] = acc;
                }
            }
        }
    }
    out
}

//! Dense numeric kernels behind the tape operations.

use matrixmultiply::dgemm;

/// Geometry of a same-padded square-kernel convolution on an `(H, W, C)` map.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        ConvGeom {
            h,
            w,
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
            ho: h.div_ceil(stride),
            wo: w.div_ceil(stride),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// `c = a (m×k) · b (k×n)`, or `c += ...` when `accumulate`.
/// `ta`/`tb` read the operand as transposed storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover m×k, k×n and m×n elements under the strides above.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.ho * g.wo * patch];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let patch = g.patch();
    let mut x = vec![0.0; g.h * g.w * g.cin];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for c in 0..g.cin {
                        x[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    x
}

/// Returns the output and, unless the kernel is pointwise, the im2col buffer.
pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
    let rows = g.ho * g.wo;
    let mut out = vec![0.0; rows * g.cout];
    if let Some(b) = b {
        for row in out.chunks_exact_mut(g.cout) {
            row.copy_from_slice(b);
        }
    }
    if g.is_pointwise() {
        gemm(rows, g.cin, g.cout, x, false, w, false, &mut out, true);
        (out, None)
    } else {
        let cols = im2col(g, x);
        gemm(rows, g.patch(), g.cout, &cols, false, w, false, &mut out, true);
        (out, Some(cols))
    }
}

/// `cols` is the im2col buffer, or the raw input for pointwise kernels.
pub(crate) fn conv2d_weight_grad(g: &ConvGeom, cols: &[f64], dy: &[f64]) -> Vec<f64> {
    let mut gw = vec![0.0; g.patch() * g.cout];
    gemm(g.patch(), g.ho * g.wo, g.cout, cols, true, dy, false, &mut gw, false);
    gw
}

pub(crate) fn conv2d_input_grad(g: &ConvGeom, w: &[f64], dy: &[f64]) -> Vec<f64> {
    let rows = g.ho * g.wo;
    let mut dcols = vec![0.0; rows * g.patch()];
    gemm(rows, g.cout, g.patch(), dy, false, w, true, &mut dcols, false);
    if g.is_pointwise() {
        dcols
    } else {
        col2im(g, &dcols)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub(crate) fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    let sig = 1.0 / (1.0 + (-x).exp());
    t + x * (1.0 - t * t) * sig
}

/// Returns `(output, xhat, rstd)` for normalization over rows of length `c`.
pub(crate) fn layer_norm_forward(x: &[f64], c: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / c.max(1);
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        // shifted by the first element so constant rows normalize exactly
        let mean = row[0] + row.iter().map(|v| v - row[0]).sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rs = 1.0 / (var + super::tape::LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..c {
            let xh = (row[i] - mean) * rs;
            xhat[r * c + i] = xh;
            out[r * c + i] = gamma[i] * xh + beta[i];
        }
    }
    (out, xhat, rstd)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    c: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; dy.len()];
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    let n = c as f64;
    for (r, &rs) in rstd.iter().enumerate() {
        let dyr = &dy[r * c..(r + 1) * c];
        let xh = &xhat[r * c..(r + 1) * c];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..c {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            let d = dyr[i] * gamma[i];
            m1 += d;
            m2 += d * xh[i];
        }
        m1 /= n;
        m2 /= n;
        for i in 0..c {
            dx[r * c + i] = rs * (dyr[i] * gamma[i] - m1 - xh[i] * m2);
        }
    }
    (dx, dg, db)
}

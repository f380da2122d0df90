//! Raw numeric kernels over flat buffers. No shape checking happens here;
//! callers on the tape validate geometry first.

use super::Real;

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), with `op(a)` of
/// shape `[m, k]` and `op(b)` of shape `[k, n]`. A transposed operand is
/// stored with its dimensions swapped.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::ZERO);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm(
            m,
            k,
            n,
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

/// Geometry of a 2-D cross-correlation over `N,H,W,C` input and
/// `kh,kw,Cin,Cout` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: [usize; 4], kernel: [usize; 4], stride: usize, pad: usize) -> Result<Self, String> {
        let [n, h, w, cin] = input;
        let [kh, kw, kcin, cout] = kernel;
        if kh == 0 || kw == 0 {
            return Err(format!("kernel extents must be positive, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err("stride must be positive".into());
        }
        if kcin != cin {
            return Err(format!("input has {cin} channels but kernel expects {kcin}"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(format!(
                "padded input {}x{} is smaller than kernel {kh}x{kw}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.ho, self.wo, self.cout]
    }
}

/// Samples per im2col chunk; bounds scratch memory for large batches.
const CHUNK: usize = 8;

/// Valid kernel columns `[lo, hi)` for output column `ox`; the matching
/// input columns are contiguous.
fn kx_range(g: &ConvGeom, ox: usize) -> (usize, usize) {
    let start = ox * g.stride;
    let lo = g.pad.saturating_sub(start).min(g.kw);
    let hi = (g.w + g.pad).saturating_sub(start).min(g.kw).max(lo);
    (lo, hi)
}

/// Fills `col` row by row with appends, so no element is written twice.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, n0: usize, n1: usize, col: &mut Vec<T>) {
    let row_len = g.kw * g.cin;
    col.clear();
    col.reserve((n1 - n0) * g.ho * g.wo * g.patch());
    let zeros = vec![T::ZERO; row_len];
    for n in n0..n1 {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let (lo, hi) = kx_range(g, ox);
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        col.extend_from_slice(&zeros);
                        continue;
                    }
                    let ix0 = ox * g.stride + lo - g.pad;
                    let src = ((n * g.h + iy as usize) * g.w + ix0) * g.cin;
                    col.extend_from_slice(&zeros[..lo * g.cin]);
                    col.extend_from_slice(&x[src..src + (hi - lo) * g.cin]);
                    col.extend_from_slice(&zeros[hi * g.cin..]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, n0: usize, n1: usize, dx: &mut [T]) {
    let patch = g.patch();
    let row_len = g.kw * g.cin;
    let mut row = 0;
    for n in n0..n1 {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let (lo, hi) = kx_range(g, ox);
                let base = row * patch;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        continue;
                    }
                    let ix0 = ox * g.stride + lo - g.pad;
                    let dst = ((n * g.h + iy as usize) * g.w + ix0) * g.cin;
                    let src = base + ky * row_len + lo * g.cin;
                    let len = (hi - lo) * g.cin;
                    for (d, s) in dx[dst..dst + len].iter_mut().zip(&col[src..src + len]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv_forward<T: Real>(x: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let rows_per_sample = g.ho * g.wo;
    let mut out = vec![T::ZERO; g.n * rows_per_sample * g.cout];
    if g.is_pointwise() {
        gemm(
            g.n * rows_per_sample,
            g.cin,
            g.cout,
            x,
            false,
            kernel,
            false,
            &mut out,
            false,
        );
        return out;
    }
    let mut col = Vec::new();
    let mut n0 = 0;
    while n0 < g.n {
        let n1 = (n0 + CHUNK).min(g.n);
        im2col(x, g, n0, n1, &mut col);
        let m = (n1 - n0) * rows_per_sample;
        let dst = &mut out[n0 * rows_per_sample * g.cout..n1 * rows_per_sample * g.cout];
        gemm(m, g.patch(), g.cout, &col, false, kernel, false, dst, false);
        n0 = n1;
    }
    out
}

/// Gradient of the convolution output w.r.t. its input, given `dy`.
pub fn conv_input_grad<T: Real>(dy: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let rows_per_sample = g.ho * g.wo;
    let mut dx = vec![T::ZERO; g.n * g.h * g.w * g.cin];
    if g.is_pointwise() {
        gemm(
            g.n * rows_per_sample,
            g.cout,
            g.cin,
            dy,
            false,
            kernel,
            true,
            &mut dx,
            false,
        );
        return dx;
    }
    let mut col = Vec::new();
    let mut n0 = 0;
    while n0 < g.n {
        let n1 = (n0 + CHUNK).min(g.n);
        let m = (n1 - n0) * rows_per_sample;
        col.resize(m * g.patch(), T::ZERO);
        let src = &dy[n0 * rows_per_sample * g.cout..n1 * rows_per_sample * g.cout];
        gemm(m, g.cout, g.patch(), src, false, kernel, true, &mut col, false);
        col2im_add(&col, g, n0, n1, &mut dx);
        n0 = n1;
    }
    dx
}

/// Gradient of the convolution output w.r.t. its kernel, given input `x` and `dy`.
pub fn conv_weight_grad<T: Real>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let rows_per_sample = g.ho * g.wo;
    let mut dw = vec![T::ZERO; g.patch() * g.cout];
    if g.is_pointwise() {
        gemm(g.cin, g.n * rows_per_sample, g.cout, x, true, dy, false, &mut dw, false);
        return dw;
    }
    let mut col = Vec::new();
    let mut n0 = 0;
    while n0 < g.n {
        let n1 = (n0 + CHUNK).min(g.n);
        im2col(x, g, n0, n1, &mut col);
        let m = (n1 - n0) * rows_per_sample;
        let src = &dy[n0 * rows_per_sample * g.cout..n1 * rows_per_sample * g.cout];
        gemm(g.patch(), m, g.cout, &col, true, src, false, &mut dw, n0 > 0);
        n0 = n1;
    }
    dw
}

/// Nearest-neighbour 2x upsampling of `N,H,W,C`.
pub fn upsample2<T: Real>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; n * h2 * w2 * c];
    for b in 0..n {
        for y in 0..h2 {
            for xx in 0..w2 {
                let src = ((b * h + y / 2) * w + xx / 2) * c;
                let dst = ((b * h2 + y) * w2 + xx) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

/// Sum over non-overlapping 2x2 windows of `N,H,W,C` (H, W even).
pub fn sumpool2<T: Real>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![T::ZERO; n * h2 * w2 * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let src = ((b * h + y) * w + xx) * c;
                let dst = ((b * h2 + y / 2) * w2 + xx / 2) * c;
                for k in 0..c {
                    out[dst + k] += x[src + k];
                }
            }
        }
    }
    out
}

//! Raw numeric kernels shared by the graph ops and the plain tensor paths.

use super::Real;

/// `c = a * b + beta * c`, with `a` logically `m x k` and `b` logically `k x n`.
/// `ta`/`tb` mean the operand is stored transposed (row-major).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// Valid `x` range `[lo, hi)` such that `x + off` stays inside `[0, w)`.
fn span(w: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (w as isize - off).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let p = (k / 2) as isize;
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let oy = ky as isize - p;
                let ox = kx as isize - p;
                let (xlo, xhi) = span(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    for xx in xlo..xhi {
                        line[xx] = src[(xx as isize + ox) as usize];
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, col: &[T], gx: &mut [T]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let p = (k / 2) as isize;
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let oy = ky as isize - p;
                let ox = kx as isize - p;
                let (xlo, xhi) = span(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let line = &src[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xx in xlo..xhi {
                        let d = &mut dst[(xx as isize + ox) as usize];
                        *d = *d + line[xx];
                    }
                }
            }
        }
    }
}

/// Same-padded cross-correlation. `w` is `[cout, cin, k, k]` flattened.
pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let hw = g.hw();
    let rows = g.rows();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut col = if g.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    for s in 0..g.n {
        let xs = &x[s * g.cin * hw..(s + 1) * g.cin * hw];
        let os = &mut out[s * g.cout * hw..(s + 1) * g.cout * hw];
        let src: &[T] = if g.k == 1 {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        gemm(g.cout, rows, hw, w, false, src, false, T::zero(), os);
        if let Some(b) = b {
            for (co, plane) in os.chunks_mut(hw).enumerate() {
                let bias = b[co];
                plane.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub w: Option<Vec<T>>,
    pub b: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> ConvGrads<T> {
    let hw = g.hw();
    let rows = g.rows();
    let mut gx = need_x.then(|| vec![T::zero(); g.n * g.cin * hw]);
    let mut gw = need_w.then(|| vec![T::zero(); g.cout * rows]);
    let mut gb = need_b.then(|| vec![T::zero(); g.cout]);
    let mut col = if g.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    let mut gcol = if g.k == 1 || !need_x {
        Vec::new()
    } else {
        vec![T::zero(); rows * hw]
    };
    for s in 0..g.n {
        let go = &gout[s * g.cout * hw..(s + 1) * g.cout * hw];
        if let Some(gb) = gb.as_mut() {
            for (co, plane) in go.chunks(hw).enumerate() {
                gb[co] = gb[co] + plane.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let xs = &x[s * g.cin * hw..(s + 1) * g.cin * hw];
            let src: &[T] = if g.k == 1 {
                xs
            } else {
                im2col(g, xs, &mut col);
                &col
            };
            gemm(g.cout, hw, rows, go, false, src, true, T::one(), gw);
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * g.cin * hw..(s + 1) * g.cin * hw];
            if g.k == 1 {
                gemm(rows, g.cout, hw, w, true, go, false, T::zero(), gxs);
            } else {
                gemm(rows, g.cout, hw, w, true, go, false, T::zero(), &mut gcol);
                col2im_add(g, &gcol, gxs);
            }
        }
    }
    ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}

/// Space-to-depth by 2: output channel `c*4 + 2*dy + dx` holds input pixel
/// `(2i+dy, 2j+dx)` of channel `c`.
pub(crate) fn squeeze<T: Real>(n: usize, c: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for dy in 0..2 {
                for dx in 0..2 {
                    let oc = ch * 4 + 2 * dy + dx;
                    let dst = &mut out[(b * 4 * c + oc) * ho * wo..(b * 4 * c + oc + 1) * ho * wo];
                    for i in 0..ho {
                        for j in 0..wo {
                            dst[i * wo + j] = src[(2 * i + dy) * w + 2 * j + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`squeeze`]; `(n, c, h, w)` describe the squeezed tensor.
pub(crate) fn unsqueeze<T: Real>(n: usize, c: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let co = c / 4;
    let (ho, wo) = (h * 2, w * 2);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..co {
            let dst = &mut out[(b * co + ch) * ho * wo..(b * co + ch + 1) * ho * wo];
            for dy in 0..2 {
                for dx in 0..2 {
                    let ic = ch * 4 + 2 * dy + dx;
                    let src = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                    for i in 0..h {
                        for j in 0..w {
                            dst[(2 * i + dy) * wo + 2 * j + dx] = src[i * w + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Channels `[start, start + len)` of an NCHW buffer.
pub(crate) fn slice_channels<T: Real>(
    n: usize,
    c: usize,
    hw: usize,
    x: &[T],
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        out.extend_from_slice(&x[(b * c + start) * hw..(b * c + start + len) * hw]);
    }
    out
}

pub(crate) fn concat_channels<T: Real>(
    n: usize,
    ca: usize,
    cb: usize,
    hw: usize,
    a: &[T],
    b: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        out.extend_from_slice(&a[s * ca * hw..(s + 1) * ca * hw]);
        out.extend_from_slice(&b[s * cb * hw..(s + 1) * cb * hw]);
    }
    out
}

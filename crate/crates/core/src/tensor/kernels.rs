// Raw forward/backward kernels shared by the tape.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// C = A·B + beta·C where A is m×k and B is k×n, optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index dgemm touches for the given strides.
    unsafe {
        matrixmultiply::dgemm(
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

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut col = vec![0.0; g.col_rows() * n];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, out) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *out = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

pub(crate) fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut out = vec![0.0; g.cout * n];
    for (co, row) in out.chunks_mut(n).enumerate() {
        row.fill(b[co]);
    }
    if g.is_pointwise() {
        gemm(g.cout, g.cin, n, w, false, x, false, 1.0, &mut out);
    } else {
        let col = im2col(x, g);
        gemm(g.cout, g.col_rows(), n, w, false, &col, false, 1.0, &mut out);
    }
    out
}

/// Accumulates input, weight and bias gradients for one conv2d node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let n = g.col_cols();
    let k = g.col_rows();
    if let Some(db) = db {
        for (co, row) in dout.chunks(n).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
    }
    if g.is_pointwise() {
        if let Some(dw) = dw {
            gemm(g.cout, n, k, dout, false, x, true, 1.0, dw);
        }
        if let Some(dx) = dx {
            gemm(k, g.cout, n, w, true, dout, false, 1.0, dx);
        }
        return;
    }
    if let Some(dw) = dw {
        let col = im2col(x, g);
        gemm(g.cout, n, k, dout, false, &col, true, 1.0, dw);
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; k * n];
        gemm(k, g.cout, n, w, true, dout, false, 0.0, &mut dcol);
        col2im_add(&dcol, g, dx);
    }
}

/// Same-size correlation of every channel with one fixed `k×k` kernel.
/// Borders replicate the nearest edge pixel.
pub(crate) fn depthwise_forward(x: &[f64], c: usize, h: usize, w: usize, kernel: &[f64], k: usize) -> Vec<f64> {
    let r = k / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut padded = vec![0.0; ph * pw];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for py in 0..ph {
            let sy = py.saturating_sub(r).min(h - 1);
            let row = &src[sy * w..(sy + 1) * w];
            let dst = &mut padded[py * pw..(py + 1) * pw];
            dst[..r].fill(row[0]);
            dst[r..r + w].copy_from_slice(row);
            dst[r + w..].fill(row[w - 1]);
        }
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let orow = &mut dst[y * w..(y + 1) * w];
            for ky in 0..k {
                let prow = &padded[(y + ky) * pw..(y + ky + 1) * pw];
                for kx in 0..k {
                    let kv = kernel[ky * k + kx];
                    for (o, &p) in orow.iter_mut().zip(&prow[kx..kx + w]) {
                        *o += kv * p;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward(
    dout: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    k: usize,
    dx: &mut [f64],
) {
    let r = k / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut padded = vec![0.0; ph * pw];
    for ch in 0..c {
        padded.fill(0.0);
        let g = &dout[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let grow = &g[y * w..(y + 1) * w];
            for ky in 0..k {
                let prow = &mut padded[(y + ky) * pw..(y + ky + 1) * pw];
                for kx in 0..k {
                    let kv = kernel[ky * k + kx];
                    for (p, &gv) in prow[kx..kx + w].iter_mut().zip(grow) {
                        *p += kv * gv;
                    }
                }
            }
        }
        // Fold the replicated border back onto the edge pixels.
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for py in 0..ph {
            let sy = py.saturating_sub(r).min(h - 1);
            let prow = &padded[py * pw..(py + 1) * pw];
            let drow = &mut d[sy * w..(sy + 1) * w];
            drow[0] += prow[..r].iter().sum::<f64>();
            for (dv, &p) in drow.iter_mut().zip(&prow[r..r + w]) {
                *dv += p;
            }
            drow[w - 1] += prow[r + w..].iter().sum::<f64>();
        }
    }
}

/// Per destination index: (low source index, high source index, weight of high).
pub(crate) fn bilinear_taps(src_len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..src_len * scale)
        .map(|d| {
            let s = ((d as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src_len - 1);
            let i1 = (i0 + 1).min(src_len - 1);
            let t = (s - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, if i1 == i0 { 0.0 } else { t })
        })
        .collect()
}

pub(crate) fn upsample_forward(x: &[f64], c: usize, h: usize, w: usize, scale: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, scale);
    let tx = bilinear_taps(w, scale);
    let (ho, wo) = (h * scale, w * scale);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                // Lerp form keeps constant regions bit-exact.
                let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                let top = a + (b - a) * wx;
                let (a, b) = (src[y1 * w + x0], src[y1 * w + x1]);
                let bot = a + (b - a) * wx;
                dst[oy * wo + ox] = top + (bot - top) * wy;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(dout: &[f64], c: usize, h: usize, w: usize, scale: usize, dx: &mut [f64]) {
    let ty = bilinear_taps(h, scale);
    let tx = bilinear_taps(w, scale);
    let (ho, wo) = (h * scale, w * scale);
    for ch in 0..c {
        let g = &dout[ch * ho * wo..(ch + 1) * ho * wo];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let gv = g[oy * wo + ox];
                d[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                d[y0 * w + x1] += gv * (1.0 - wy) * wx;
                d[y1 * w + x0] += gv * wy * (1.0 - wx);
                d[y1 * w + x1] += gv * wy * wx;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

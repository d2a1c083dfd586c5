//! Raw numeric kernels over contiguous slices: GEMM and 2-D convolution.
//!
//! Layouts are row-major NCHW for activations and `(C_out, C_in / groups, K, K)`
//! for convolution weights.

/// `C = op(A) · op(B) + beta · C` for row-major operands.
///
/// `op(A)` is `m × k`; when `trans_a` is set, `a` holds the `k × m` matrix.
/// Likewise `op(B)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertion above bounds every index matrixmultiply
    // derives from (m, k, n) and the strides.
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

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn cin_g(&self) -> usize {
        self.in_channels / self.groups
    }

    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.cin_g() * self.kernel * self.kernel
    }
}

fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for c in 0..g.cin_g() {
        let xc = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *d = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for c in 0..g.cin_g() {
        let dxc = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dxc[iy as usize * g.in_w + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with optional bias.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let in_plane = g.in_h * g.in_w;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = g.kernel * g.kernel;
    let mut out = vec![0.0; g.batch * g.out_channels * plane];
    let mut cols = if g.pointwise() || g.depthwise() {
        Vec::new()
    } else {
        vec![0.0; cin_g * kk * plane]
    };

    for n in 0..g.batch {
        for grp in 0..g.groups {
            let xg = &x[(n * g.in_channels + grp * cin_g) * in_plane..][..cin_g * in_plane];
            let wg = &w[grp * cout_g * cin_g * kk..][..cout_g * cin_g * kk];
            let og = &mut out[(n * g.out_channels + grp * cout_g) * plane..][..cout_g * plane];
            if g.pointwise() {
                gemm(cout_g, cin_g, plane, wg, false, xg, false, og, 0.0);
            } else if g.depthwise() {
                depthwise_forward(xg, wg, og, g);
            } else {
                im2col(xg, g, &mut cols);
                gemm(cout_g, cin_g * kk, plane, wg, false, &cols, false, og, 0.0);
            }
        }
        if let Some(b) = bias {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut out[(n * g.out_channels + c) * plane..][..plane] {
                    *v += bc;
                }
            }
        }
    }
    out
}

fn depthwise_forward(x: &[f64], w: &[f64], out: &mut [f64], g: &ConvGeometry) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let (ho, wo) = (g.out_h(), g.out_w());
    for oy in 0..ho {
        for ox in 0..wo {
            let mut acc = 0.0;
            for ky in 0..k {
                let iy = (oy * s + ky) as isize - p;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s + kx) as isize - p;
                    if ix >= 0 && ix < g.in_w as isize {
                        acc += w[ky * k + kx] * x[iy as usize * g.in_w + ix as usize];
                    }
                }
            }
            out[oy * wo + ox] = acc;
        }
    }
}

fn depthwise_backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeometry, dx: Option<&mut [f64]>, dw: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut dx = dx;
    for oy in 0..ho {
        for ox in 0..wo {
            let d = dy[oy * wo + ox];
            if d == 0.0 {
                continue;
            }
            for ky in 0..k {
                let iy = (oy * s + ky) as isize - p;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s + kx) as isize - p;
                    if ix >= 0 && ix < g.in_w as isize {
                        let xi = iy as usize * g.in_w + ix as usize;
                        dw[ky * k + kx] += d * x[xi];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi] += d * w[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeometry,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let in_plane = g.in_h * g.in_w;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = g.kernel * g.kernel;
    let general = !(g.pointwise() || g.depthwise());
    let mut cols = if general {
        vec![0.0; cin_g * kk * plane]
    } else {
        Vec::new()
    };
    let mut dcols = if general && dx.is_some() {
        vec![0.0; cin_g * kk * plane]
    } else {
        Vec::new()
    };

    if let Some(db) = db {
        for n in 0..g.batch {
            for (c, d) in db.iter_mut().enumerate() {
                *d += dy[(n * g.out_channels + c) * plane..][..plane].iter().sum::<f64>();
            }
        }
    }

    for n in 0..g.batch {
        for grp in 0..g.groups {
            let x_off = (n * g.in_channels + grp * cin_g) * in_plane;
            let xg = &x[x_off..][..cin_g * in_plane];
            let w_off = grp * cout_g * cin_g * kk;
            let wg = &w[w_off..][..cout_g * cin_g * kk];
            let dwg = &mut dw[w_off..][..cout_g * cin_g * kk];
            let dyg = &dy[(n * g.out_channels + grp * cout_g) * plane..][..cout_g * plane];
            let dxg = dx.as_deref_mut().map(|d| &mut d[x_off..][..cin_g * in_plane]);
            if g.pointwise() {
                gemm(cout_g, plane, cin_g, dyg, false, xg, true, dwg, 1.0);
                if let Some(dxg) = dxg {
                    gemm(cin_g, cout_g, plane, wg, true, dyg, false, dxg, 1.0);
                }
            } else if g.depthwise() {
                depthwise_backward(xg, wg, dyg, g, dxg, dwg);
            } else {
                im2col(xg, g, &mut cols);
                gemm(cout_g, plane, cin_g * kk, dyg, false, &cols, true, dwg, 1.0);
                if let Some(dxg) = dxg {
                    gemm(cin_g * kk, cout_g, plane, wg, true, dyg, false, &mut dcols, 0.0);
                    col2im_add(&dcols, g, dxg);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 1.0);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    // Direct six-loop convolution used as the reference.
    fn naive(x: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let (ho, wo) = (g.out_h(), g.out_w());
        let (cin_g, cout_g) = (g.in_channels / g.groups, g.out_channels / g.groups);
        let k = g.kernel;
        let mut out = vec![0.0; g.batch * g.out_channels * ho * wo];
        for n in 0..g.batch {
            for co in 0..g.out_channels {
                let grp = co / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            let c = grp * cin_g + ci;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                        acc += w[((co * cin_g + ci) * k + ky) * k + kx]
                                            * x[((n * g.in_channels + c) * g.in_h + iy as usize) * g.in_w
                                                + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((n * g.out_channels + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_paths_match_naive() {
        let cases = [
            (2, 3, 7, 6, 4, 3, 1, 1, 1),
            (1, 4, 5, 5, 4, 3, 1, 1, 4),
            (2, 4, 6, 6, 6, 1, 1, 0, 2),
            (1, 2, 9, 8, 3, 3, 2, 0, 1),
            (1, 1, 11, 11, 2, 7, 2, 3, 1),
            (1, 4, 4, 4, 4, 1, 1, 0, 1),
        ];
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for (batch, cin, h, w, cout, k, s, p, grp) in cases {
            let g = ConvGeometry {
                batch,
                in_channels: cin,
                in_h: h,
                in_w: w,
                out_channels: cout,
                kernel: k,
                stride: s,
                pad: p,
                groups: grp,
            };
            let x: Vec<f64> = (0..batch * cin * h * w).map(|_| next()).collect();
            let wt: Vec<f64> = (0..g.weight_len()).map(|_| next()).collect();
            let got = conv2d_forward(&x, &wt, None, &g);
            let want = naive(&x, &wt, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{g:?}");
            }
        }
    }
}

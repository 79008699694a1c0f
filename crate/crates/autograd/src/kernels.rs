//! Raw numeric kernels behind the graph ops. All buffers are row-major `f64`.

/// `c = a · b + beta · c` for an `m×k` by `k×n` product with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(
        a.len() >= span(m, k, rsa, csa),
        "gemm: lhs buffer too small"
    );
    assert!(
        b.len() >= span(k, n, rsb, csb),
        "gemm: rhs buffer too small"
    );
    assert!(
        c.len() >= span(m, n, rsc, csc),
        "gemm: output buffer too small"
    );
    // SAFETY: the asserts above bound every index the kernel touches.
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
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds one `[cin, h, w]` image into `[cin·k·k, h·w]` patch columns for a
/// stride-1 convolution with symmetric zero padding `pad`.
pub(crate) fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    col: &mut [f64],
) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for oy in 0..h {
                    let out_row = &mut dst[oy * w..(oy + 1) * w];
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || x_lo >= x_hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..x_lo].fill(0.0);
                    let shift = kx as isize - pad as isize;
                    for ox in x_lo..x_hi {
                        out_row[ox] = src_row[(ox as isize + shift) as usize];
                    }
                    out_row[x_hi..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back onto the image, adding.
pub(crate) fn col2im_add(
    col: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    x: &mut [f64],
) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                let shift = kx as isize - pad as isize;
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * w..(oy + 1) * w];
                    for ox in x_lo..x_hi {
                        dst_row[(ox as isize + shift) as usize] += src_row[ox];
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvShape {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

pub(crate) fn conv2d_forward(s: &ConvShape, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let hw = s.h * s.w;
    let patch = s.patch();
    let mut out = vec![0.0; s.n * s.cout * hw];
    let mut col = if s.k == 1 {
        Vec::new()
    } else {
        vec![0.0; patch * hw]
    };
    for b in 0..s.n {
        let xb = &x[b * s.cin * hw..(b + 1) * s.cin * hw];
        let ob = &mut out[b * s.cout * hw..(b + 1) * s.cout * hw];
        for (co, row) in ob.chunks_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        let cols: &[f64] = if s.k == 1 {
            xb
        } else {
            im2col(xb, s.cin, s.h, s.w, s.k, s.pad, &mut col);
            &col
        };
        gemm(
            s.cout,
            patch,
            hw,
            weight,
            (patch, 1),
            cols,
            (hw, 1),
            1.0,
            ob,
            (hw, 1),
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is only computed when `need_dx`.
pub(crate) fn conv2d_backward(
    s: &ConvShape,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = s.h * s.w;
    let patch = s.patch();
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; weight.len()]);
    let mut db = need_dw.then(|| vec![0.0; s.cout]);
    let mut col = if s.k == 1 {
        Vec::new()
    } else {
        vec![0.0; patch * hw]
    };
    let mut dcol = if need_dx && s.k != 1 {
        vec![0.0; patch * hw]
    } else {
        Vec::new()
    };
    for b in 0..s.n {
        let xb = &x[b * s.cin * hw..(b + 1) * s.cin * hw];
        let gb = &dout[b * s.cout * hw..(b + 1) * s.cout * hw];
        if let (Some(dw), Some(db)) = (dw.as_mut(), db.as_mut()) {
            let cols: &[f64] = if s.k == 1 {
                xb
            } else {
                im2col(xb, s.cin, s.h, s.w, s.k, s.pad, &mut col);
                &col
            };
            gemm(
                s.cout,
                hw,
                patch,
                gb,
                (hw, 1),
                cols,
                (1, hw),
                1.0,
                dw,
                (patch, 1),
            );
            for (co, row) in gb.chunks(hw).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * s.cin * hw..(b + 1) * s.cin * hw];
            if s.k == 1 {
                gemm(
                    patch,
                    s.cout,
                    hw,
                    weight,
                    (1, patch),
                    gb,
                    (hw, 1),
                    1.0,
                    dxb,
                    (hw, 1),
                );
            } else {
                gemm(
                    patch,
                    s.cout,
                    hw,
                    weight,
                    (1, patch),
                    gb,
                    (hw, 1),
                    0.0,
                    &mut dcol,
                    (hw, 1),
                );
                col2im_add(&dcol, s.cin, s.h, s.w, s.k, s.pad, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// 2×2 stride-2 transposed convolution. `weight` is `[cin, cout, 2, 2]`.
pub(crate) fn conv_t2_forward(
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let hw = h * w;
    let rows = cout * 4;
    let mut y = vec![0.0; rows * hw];
    let mut out = vec![0.0; n * cout * 4 * hw];
    let (oh, ow) = (2 * h, 2 * w);
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        // y[(co,a,c), p] = sum_ci weight[ci, (co,a,c)] * x[ci, p]
        gemm(
            rows,
            cin,
            hw,
            weight,
            (1, rows),
            xb,
            (hw, 1),
            0.0,
            &mut y,
            (hw, 1),
        );
        let ob = &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for a in 0..2 {
                for c in 0..2 {
                    let src = &y[((co * 2 + a) * 2 + c) * hw..][..hw];
                    for i in 0..h {
                        let dst = &mut ob[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for j in 0..w {
                            dst[2 * j + c] = src[i * w + j] + bias[co];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t2_backward(
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = h * w;
    let rows = cout * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dy = vec![0.0; rows * hw];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; weight.len()]);
    let mut db = need_dw.then(|| vec![0.0; cout]);
    for b in 0..n {
        let gb = &dout[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for a in 0..2 {
                for c in 0..2 {
                    let dst = &mut dy[((co * 2 + a) * 2 + c) * hw..][..hw];
                    for i in 0..h {
                        let src = &gb[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for j in 0..w {
                            dst[i * w + j] = src[2 * j + c];
                        }
                    }
                }
            }
        }
        if let Some(db) = db.as_mut() {
            for (co, v) in db.iter_mut().enumerate() {
                *v += dy[co * 4 * hw..(co + 1) * 4 * hw].iter().sum::<f64>();
            }
        }
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        if let Some(dw) = dw.as_mut() {
            // dweight[ci, r] += sum_p x[ci, p] * dy[r, p]
            gemm(cin, hw, rows, xb, (hw, 1), &dy, (1, hw), 1.0, dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * cin * hw..(b + 1) * cin * hw];
            gemm(
                cin,
                rows,
                hw,
                weight,
                (rows, 1),
                &dy,
                (hw, 1),
                1.0,
                dxb,
                (hw, 1),
            );
        }
    }
    (dx, dw, db)
}

/// `y = x · weightᵀ + bias` for `x: [n, fin]`, `weight: [fout, fin]`.
pub(crate) fn linear_forward(
    n: usize,
    fin: usize,
    fout: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * fout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(
        n,
        fin,
        fout,
        x,
        (fin, 1),
        weight,
        (1, fin),
        1.0,
        &mut y,
        (fout, 1),
    );
    y
}

pub(crate) fn avg_pool2_forward(n: usize, c: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let r0 = 2 * i * w + 2 * j;
                let r1 = r0 + w;
                dst[i * ow + j] = 0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(n: usize, c: usize, h: usize, w: usize, dout: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = 0.25 * src[i * ow + j];
                let r0 = 2 * i * w + 2 * j;
                let r1 = r0 + w;
                dst[r0] = g;
                dst[r0 + 1] = g;
                dst[r1] = g;
                dst[r1 + 1] = g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(s: &ConvShape, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.n * s.cout * s.h * s.w];
        for b in 0..s.n {
            for co in 0..s.cout {
                for oy in 0..s.h {
                    for ox in 0..s.w {
                        let mut acc = bias[co];
                        for ci in 0..s.cin {
                            for ky in 0..s.k {
                                for kx in 0..s.k {
                                    let iy = oy as isize + ky as isize - s.pad as isize;
                                    let ix = ox as isize + kx as isize - s.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize
                                    {
                                        continue;
                                    }
                                    acc += wt[((co * s.cin + ci) * s.k + ky) * s.k + kx]
                                        * x[((b * s.cin + ci) * s.h + iy as usize) * s.w
                                            + ix as usize];
                                }
                            }
                        }
                        out[((b * s.cout + co) * s.h + oy) * s.w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) * scale)
            .collect()
    }

    #[test]
    fn conv_matches_direct_loop() {
        for (k, pad) in [(3, 1), (1, 0), (3, 0), (5, 2)] {
            let s = ConvShape {
                n: 2,
                cin: 3,
                cout: 4,
                h: 5,
                w: 6,
                k,
                pad,
            };
            let x = seq(s.n * s.cin * s.h * s.w, 0.1);
            let wt = seq(s.cout * s.cin * k * k, 0.05);
            let bias = vec![0.1, -0.2, 0.3, 0.0];
            let fast = conv2d_forward(&s, &x, &wt, &bias);
            let slow = naive_conv(&s, &x, &wt, &bias);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "k={k} pad={pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (cin, h, w, k, pad) = (2, 4, 5, 3, 1);
        let x = seq(cin * h * w, 0.3);
        let y = seq(cin * k * k * h * w, 0.7);
        let mut col = vec![0.0; y.len()];
        im2col(&x, cin, h, w, k, pad, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, cin, h, w, k, pad, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn transposed_conv_places_blocks() {
        // one input channel, one output channel: each pixel expands to weight * value
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let wt = vec![1.0, 10.0, 100.0, 1000.0];
        let out = conv_t2_forward(1, 1, 1, 2, 2, &x, &wt, &[0.5]);
        assert_eq!(out.len(), 16);
        assert_eq!(out[0], 1.5);
        assert_eq!(out[1], 10.5);
        assert_eq!(out[4], 100.5);
        assert_eq!(out[5], 1000.5);
        assert_eq!(out[2], 2.5);
        assert_eq!(out[15], 4000.5);
    }

    #[test]
    fn avg_pool_averages_quads() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let out = avg_pool2_forward(1, 1, 4, 4, &x);
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }
}

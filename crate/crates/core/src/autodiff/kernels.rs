//! Raw loops behind the graph operations. Layouts are `[n][c][t]` row-major.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    /// Padded input length.
    pub t_pad: usize,
    pub t_out: usize,
}

/// Replication padding: edge samples repeated `pad` times on each side.
pub(crate) fn replicate_pad(x: &[f64], rows: usize, t: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return x.to_vec();
    }
    let tp = t + 2 * pad;
    let mut out = vec![0.0; rows * tp];
    for (src, dst) in x.chunks_exact(t).zip(out.chunks_exact_mut(tp)) {
        dst[..pad].fill(src[0]);
        dst[pad..pad + t].copy_from_slice(src);
        dst[pad + t..].fill(src[t - 1]);
    }
    out
}

/// Adjoint of [`replicate_pad`]: edge gradients fold back onto the first and last sample.
pub(crate) fn fold_pad_grad(gp: &[f64], rows: usize, t: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return gp.to_vec();
    }
    let tp = t + 2 * pad;
    let mut out = vec![0.0; rows * t];
    for (src, dst) in gp.chunks_exact(tp).zip(out.chunks_exact_mut(t)) {
        dst.copy_from_slice(&src[pad..pad + t]);
        dst[0] += src[..pad].iter().sum::<f64>();
        dst[t - 1] += src[pad + t..].iter().sum::<f64>();
    }
    out
}

pub(crate) fn conv_forward(xp: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.c_out * d.t_out];
    for n in 0..d.n {
        for o in 0..d.c_out {
            let out_row = &mut out[(n * d.c_out + o) * d.t_out..][..d.t_out];
            for c in 0..d.c_in {
                let x_row = &xp[(n * d.c_in + c) * d.t_pad..][..d.t_pad];
                let w_row = &w[(o * d.c_in + c) * d.k..][..d.k];
                for (k, &wk) in w_row.iter().enumerate() {
                    if d.stride == 1 {
                        for (y, &xv) in out_row.iter_mut().zip(&x_row[k..k + d.t_out]) {
                            *y += wk * xv;
                        }
                    } else {
                        for (y, &xv) in out_row.iter_mut().zip(x_row[k..].iter().step_by(d.stride)) {
                            *y += wk * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient with respect to the padded input.
pub(crate) fn conv_backward_input(gout: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let mut gxp = vec![0.0; d.n * d.c_in * d.t_pad];
    for n in 0..d.n {
        for o in 0..d.c_out {
            let g_row = &gout[(n * d.c_out + o) * d.t_out..][..d.t_out];
            for c in 0..d.c_in {
                let gx_row = &mut gxp[(n * d.c_in + c) * d.t_pad..][..d.t_pad];
                let w_row = &w[(o * d.c_in + c) * d.k..][..d.k];
                for (k, &wk) in w_row.iter().enumerate() {
                    if d.stride == 1 {
                        for (gx, &g) in gx_row[k..k + d.t_out].iter_mut().zip(g_row) {
                            *gx += wk * g;
                        }
                    } else {
                        for (gx, &g) in gx_row[k..].iter_mut().step_by(d.stride).zip(g_row) {
                            *gx += wk * g;
                        }
                    }
                }
            }
        }
    }
    gxp
}

pub(crate) fn conv_backward_kernel(gout: &[f64], xp: &[f64], d: ConvDims) -> Vec<f64> {
    let mut gw = vec![0.0; d.c_out * d.c_in * d.k];
    for n in 0..d.n {
        for o in 0..d.c_out {
            let g_row = &gout[(n * d.c_out + o) * d.t_out..][..d.t_out];
            for c in 0..d.c_in {
                let x_row = &xp[(n * d.c_in + c) * d.t_pad..][..d.t_pad];
                let gw_row = &mut gw[(o * d.c_in + c) * d.k..][..d.k];
                for (k, gwk) in gw_row.iter_mut().enumerate() {
                    let acc: f64 = if d.stride == 1 {
                        g_row.iter().zip(&x_row[k..k + d.t_out]).map(|(a, b)| a * b).sum()
                    } else {
                        g_row
                            .iter()
                            .zip(x_row[k..].iter().step_by(d.stride))
                            .map(|(a, b)| a * b)
                            .sum()
                    };
                    *gwk += acc;
                }
            }
        }
    }
    gw
}

//! 3x3 zero-padded convolutions lowered to GEMM over row bands.
//!
//! Tensors are channel-major: `[channels][rows][cols]`. Weights are
//! `[c_out][c_in][3][3]`. Bands are fixed-size so every reduction happens in
//! the same order regardless of how the work is scheduled.

const BAND_ROWS: usize = 8;

/// Fills `col` (`c_in*9` rows by `band_len` columns) with the 3x3
/// neighborhoods of rows `r0..r1`.
fn im2col_band(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    r0: usize,
    r1: usize,
    col: &mut [f64],
) {
    let npix = (r1 - r0) * w;
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[((ci * 9) + ky * 3 + kx) * npix..][..npix];
                for r in r0..r1 {
                    let out_row = &mut dst[(r - r0) * w..(r - r0 + 1) * w];
                    let src_r = r as isize + ky as isize - 1;
                    if src_r < 0 || src_r >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[src_r as usize * w..(src_r as usize + 1) * w];
                    match kx {
                        0 => {
                            out_row[0] = 0.0;
                            out_row[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out_row.copy_from_slice(src),
                        _ => {
                            out_row[..w - 1].copy_from_slice(&src[1..]);
                            out_row[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

fn bands(h: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..h)
        .step_by(BAND_ROWS)
        .map(move |r0| (r0, (r0 + BAND_ROWS).min(h)))
}

/// `out = weights * input` with zero padding 1. `out` has `c_out*h*w` entries.
pub fn conv3x3(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(weights.len(), c_out * c_in * 9);
    assert_eq!(out.len(), c_out * h * w);
    let k = c_in * 9;
    let mut col = vec![0.0; k * BAND_ROWS * w];
    for (r0, r1) in bands(h) {
        let npix = (r1 - r0) * w;
        im2col_band(input, c_in, h, w, r0, r1, &mut col);
        // SAFETY: the strides describe in-bounds views: `weights` is c_out x k,
        // `col` holds k x npix, and the output view covers rows r0..r1 of each
        // of the c_out planes of `out`.
        unsafe {
            matrixmultiply::dgemm(
                c_out,
                k,
                npix,
                1.0,
                weights.as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                npix as isize,
                1,
                0.0,
                out.as_mut_ptr().add(r0 * w),
                (h * w) as isize,
                1,
            );
        }
    }
}

/// Accumulates the weight gradient `grad += d_out * im2col(input)^T`.
pub fn conv3x3_weight_grad(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    d_out: &[f64],
    c_out: usize,
    grad: &mut [f64],
) {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(d_out.len(), c_out * h * w);
    assert_eq!(grad.len(), c_out * c_in * 9);
    let k = c_in * 9;
    let mut col = vec![0.0; k * BAND_ROWS * w];
    for (r0, r1) in bands(h) {
        let npix = (r1 - r0) * w;
        im2col_band(input, c_in, h, w, r0, r1, &mut col);
        // SAFETY: d_out view is c_out x npix with row stride h*w starting at
        // row r0; col is read transposed as npix x k; grad is c_out x k.
        unsafe {
            matrixmultiply::dgemm(
                c_out,
                npix,
                k,
                1.0,
                d_out.as_ptr().add(r0 * w),
                (h * w) as isize,
                1,
                col.as_ptr(),
                1,
                npix as isize,
                1.0,
                grad.as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
}

/// Weights of the adjoint convolution: `[c_in][c_out][3][3]`, spatially flipped.
pub fn adjoint_weights(weights: &[f64], c_out: usize, c_in: usize) -> Vec<f64> {
    let mut adj = vec![0.0; weights.len()];
    for co in 0..c_out {
        for ci in 0..c_in {
            for t in 0..9 {
                adj[(ci * c_out + co) * 9 + (8 - t)] = weights[(co * c_in + ci) * 9 + t];
            }
        }
    }
    adj
}

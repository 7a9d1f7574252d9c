use rayon::prelude::*;

use super::{dims_str, Tensor};
use crate::error::{CmfError, Result};

/// Parameters of a 3D convolution layer (shared by the forward and the
/// transposed kernels). Weights are laid out `[c_out, c_in, kd, kh, kw]`,
/// bias `[c_out]`. Only zero padding is supported; no dilation or groups.
#[derive(Clone, Debug)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv3dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        let spec = Conv3dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
            self.kernel.2,
        ];
        if self.weights.dims() != expected {
            return Err(CmfError::shape(
                "conv3d spec",
                format!(
                    "weights are {} but spec requires {}",
                    dims_str(self.weights.dims()),
                    dims_str(&expected)
                ),
            ));
        }
        if self.bias.dims() != [self.out_channels] {
            return Err(CmfError::shape(
                "conv3d spec",
                format!(
                    "bias is {} but spec requires {}",
                    dims_str(self.bias.dims()),
                    self.out_channels
                ),
            ));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 || self.stride.2 == 0 {
            return Err(CmfError::invalid("conv3d spec", "stride must be positive"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.kernel.2 == 0 {
            return Err(CmfError::invalid("conv3d spec", "kernel must be positive"));
        }
        Ok(())
    }
}

fn check_input(op: &'static str, input: &Tensor, spec: &Conv3dSpec) -> Result<()> {
    spec.validate()?;
    if input.rank() != 4 {
        return Err(CmfError::shape(
            op,
            format!("input must be CxDxHxW, got {}", dims_str(input.dims())),
        ));
    }
    if input.dims()[0] != spec.in_channels {
        return Err(CmfError::shape(
            op,
            format!(
                "input has {} channels, spec expects {}",
                input.dims()[0],
                spec.in_channels
            ),
        ));
    }
    Ok(())
}

fn conv_extent(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(CmfError::shape(
            op,
            format!("kernel {kernel} exceeds padded input extent {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output dims (`[c_out, d, h, w]`) of `conv3d` for the given input dims.
pub fn conv3d_output_dims(input_dims: &[usize], spec: &Conv3dSpec) -> Result<[usize; 4]> {
    let d = conv_extent(
        "conv3d",
        input_dims[1],
        spec.kernel.0,
        spec.stride.0,
        spec.padding.0,
    )?;
    let h = conv_extent(
        "conv3d",
        input_dims[2],
        spec.kernel.1,
        spec.stride.1,
        spec.padding.1,
    )?;
    let w = conv_extent(
        "conv3d",
        input_dims[3],
        spec.kernel.2,
        spec.stride.2,
        spec.padding.2,
    )?;
    Ok([spec.out_channels, d, h, w])
}

/// `acc[i] += w * src[i]`; sources are pre-padded so no bounds logic is
/// needed. Kept out-of-line so the loops vectorize in isolation.
#[inline(never)]
fn zip_tap(acc: &mut [f64], src: &[f32], w: f64) {
    for (a, &v) in acc.iter_mut().zip(src) {
        *a += w * v as f64;
    }
}

/// Two taps fused into one accumulator pass (term order: tap 0 then tap 1).
#[inline(never)]
fn zip_tap2(acc: &mut [f64], s0: &[f32], w0: f64, s1: &[f32], w1: f64) {
    let n = acc.len();
    let (s0, s1) = (&s0[..n], &s1[..n]);
    for i in 0..n {
        acc[i] += w0 * s0[i] as f64 + w1 * s1[i] as f64;
    }
}

/// Three taps fused into one accumulator pass (term order: 0, 1, 2).
#[inline(never)]
fn zip_tap3(acc: &mut [f64], s0: &[f32], w0: f64, s1: &[f32], w1: f64, s2: &[f32], w2: f64) {
    let n = acc.len();
    let (s0, s1, s2) = (&s0[..n], &s1[..n], &s2[..n]);
    for i in 0..n {
        acc[i] += w0 * s0[i] as f64 + w1 * s1[i] as f64 + w2 * s2[i] as f64;
    }
}

/// `acc[i] += w * src[i * stride]` for strides the fast paths do not cover.
#[inline(never)]
fn strided_tap(acc: &mut [f64], src: &[f32], w: f64, stride: usize) {
    for (i, a) in acc.iter_mut().enumerate() {
        *a += w * src[i * stride] as f64;
    }
}

/// Input rows copied with `pad` zeros on both sides of the W axis, so kernel
/// taps can read full-width slices with the zero padding materialized.
fn pad_rows(x: &[f32], w_in: usize, pad: usize) -> (Vec<f32>, usize) {
    let w_row = w_in + 2 * pad;
    let rows = x.len() / w_in;
    let mut buf = vec![0.0f32; rows * w_row];
    for (src, dst) in x.chunks_exact(w_in).zip(buf.chunks_exact_mut(w_row)) {
        dst[pad..pad + w_in].copy_from_slice(src);
    }
    (buf, w_row)
}

/// Padded rows additionally split by W parity (even indices first), so
/// stride-2 kernels read contiguously: row layout `[x0 x2 ..][x1 x3 ..]`.
fn deinterleave_rows(buf: &[f32], w_row: usize) -> (Vec<f32>, usize) {
    let n_even = w_row - w_row / 2;
    let mut out = vec![0.0f32; buf.len()];
    for (src, dst) in buf.chunks_exact(w_row).zip(out.chunks_exact_mut(w_row)) {
        for j in 0..n_even {
            dst[j] = src[2 * j];
        }
        for j in 0..w_row / 2 {
            dst[n_even + j] = src[2 * j + 1];
        }
    }
    (out, n_even)
}

/// 3D cross-correlation with zero padding.
///
/// `D\' = (D + 2*pd - kd) / sd + 1`, likewise for H and W. Terms accumulate in
/// f64 (bias last, one rounding to f32); per-element term order is c_in outer,
/// then kd, kh, kw innermost, and parallelism only splits output elements, so
/// results are bit-identical for any thread count.
pub fn conv3d(input: &Tensor, spec: &Conv3dSpec) -> Result<Tensor> {
    check_input("conv3d", input, spec)?;
    let [c_out, d_out, h_out, w_out] = conv3d_output_dims(input.dims(), spec)?;
    let (c_in, d_in, h_in, w_in) = (
        input.dims()[0],
        input.dims()[1],
        input.dims()[2],
        input.dims()[3],
    );
    let (kdm, khm, kwm) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let wts = spec.weights.data();
    let bias = spec.bias.data();

    let (xp, w_row) = pad_rows(input.data(), w_in, pw);
    let (xd, n_even) = if sw == 2 {
        deinterleave_rows(&xp, w_row)
    } else {
        (Vec::new(), 0)
    };
    // tap source for stride 2: (even half?, start offset within the half)
    let half = |row: usize, kw: usize| -> (usize, usize) {
        let base = row * w_row;
        if kw % 2 == 0 {
            (base, kw / 2)
        } else {
            (base + n_even, kw / 2)
        }
    };

    // valid (kd, id) pairs per output depth and (kh, ih) pairs per output row
    let kd_map: Vec<Vec<(usize, usize)>> = (0..d_out)
        .map(|od| {
            (0..kdm)
                .filter_map(|kd| {
                    let id = (od * sd + kd) as isize - pd as isize;
                    (id >= 0 && id < d_in as isize).then_some((kd, id as usize))
                })
                .collect()
        })
        .collect();
    let ih_map: Vec<Vec<(usize, usize)>> = (0..h_out)
        .map(|oh| {
            (0..khm)
                .filter_map(|kh| {
                    let ih = (oh * sh + kh) as isize - ph as isize;
                    (ih >= 0 && ih < h_in as isize).then_some((kh, ih as usize))
                })
                .collect()
        })
        .collect();

    // Output channels are processed in blocks that share one streaming pass
    // over the input rows; each block is one parallel task (a contiguous
    // slab of the output).
    let blk = CO_BLOCK.min(c_out);
    let mut out = vec![0.0f32; c_out * d_out * h_out * w_out];
    let plane = h_out * w_out;
    out.par_chunks_mut(blk * d_out * plane)
        .enumerate()
        .for_each(|(t, chunk)| {
            let co0 = t * blk;
            let nb = chunk.len() / (d_out * plane);
            let mut acc = vec![0.0f64; nb * w_out];
            for od in 0..d_out {
                let kd_ids = &kd_map[od];
                for oh in 0..h_out {
                    acc.fill(0.0);
                    let ihs = &ih_map[oh];
                    for ci in 0..c_in {
                        let in_c = ci * d_in * h_in;
                        for &(kd, id) in kd_ids {
                            let rows = in_c + id * h_in;
                            for &(kh, ih) in ihs {
                                let row = rows + ih;
                                for (j, a) in acc.chunks_mut(w_out).enumerate() {
                                    let wb =
                                        ((((co0 + j) * c_in + ci) * kdm + kd) * khm + kh) * kwm;
                                    let wr = &wts[wb..][..kwm];
                                    match (sw, kwm) {
                                        (1, 3) => {
                                            let pr = &xp[row * w_row..][..w_row];
                                            zip_tap3(
                                                a,
                                                &pr[0..],
                                                wr[0] as f64,
                                                &pr[1..],
                                                wr[1] as f64,
                                                &pr[2..],
                                                wr[2] as f64,
                                            );
                                        }
                                        (1, 1) => {
                                            let pr = &xp[row * w_row..][..w_row];
                                            zip_tap(a, pr, wr[0] as f64);
                                        }
                                        (1, _) => {
                                            let pr = &xp[row * w_row..][..w_row];
                                            for (kw, &w) in wr.iter().enumerate() {
                                                zip_tap(a, &pr[kw..], w as f64);
                                            }
                                        }
                                        (2, 3) => {
                                            let (b0, o0) = half(row, 0);
                                            let (b1, o1) = half(row, 1);
                                            let (b2, o2) = half(row, 2);
                                            zip_tap2(
                                                a,
                                                &xd[b0 + o0..],
                                                wr[0] as f64,
                                                &xd[b1 + o1..],
                                                wr[1] as f64,
                                            );
                                            zip_tap(a, &xd[b2 + o2..], wr[2] as f64);
                                        }
                                        (2, _) => {
                                            for (kw, &w) in wr.iter().enumerate() {
                                                let (b, o) = half(row, kw);
                                                zip_tap(a, &xd[b + o..], w as f64);
                                            }
                                        }
                                        _ => {
                                            let pr = &xp[row * w_row..][..w_row];
                                            for (kw, &w) in wr.iter().enumerate() {
                                                strided_tap(a, &pr[kw..], w as f64, sw);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for (j, a) in acc.chunks(w_out).enumerate() {
                        let b = bias[co0 + j] as f64;
                        let dst = &mut chunk[(j * d_out + od) * plane + oh * w_out..][..w_out];
                        for (o, &v) in dst.iter_mut().zip(a.iter()) {
                            *o = (v + b) as f32;
                        }
                    }
                }
            }
        });
    Tensor::new(vec![c_out, d_out, h_out, w_out], out)
}

/// Output channels processed per parallel task; they share one streaming
/// pass over the input rows, keeping the kernels compute-bound.
const CO_BLOCK: usize = 16;

/// Output dims of `transposed_conv3d`: `D\' = (D - 1)*sd - 2*pd + kd`.
pub fn transposed_conv3d_output_dims(
    input_dims: &[usize],
    spec: &Conv3dSpec,
) -> Result<[usize; 4]> {
    let ext = |i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
        let full = (i - 1) * s + k;
        if full < 2 * p + 1 {
            return Err(CmfError::shape(
                "transposed_conv3d",
                format!(
                    "padding {p} leaves no output for input extent {i}, kernel {k}, stride {s}"
                ),
            ));
        }
        Ok(full - 2 * p)
    };
    let d = ext(input_dims[1], spec.kernel.0, spec.stride.0, spec.padding.0)?;
    let h = ext(input_dims[2], spec.kernel.1, spec.stride.1, spec.padding.1)?;
    let w = ext(input_dims[3], spec.kernel.2, spec.stride.2, spec.padding.2)?;
    Ok([spec.out_channels, d, h, w])
}

/// 3D transposed convolution (the adjoint of `conv3d` in its spatial
/// structure). With stride 2, kernel 4, padding 1 every spatial dim doubles;
/// with stride 1, kernel `(D, 1, 1)`, padding `(D-1, 0, 0)` it collapses the
/// depth axis to 1 while reading every input plane. Same accumulation
/// discipline as `conv3d`.
pub fn transposed_conv3d(input: &Tensor, spec: &Conv3dSpec) -> Result<Tensor> {
    check_input("transposed_conv3d", input, spec)?;
    let [c_out, d_out, h_out, w_out] = transposed_conv3d_output_dims(input.dims(), spec)?;
    let (c_in, d_in, h_in, w_in) = (
        input.dims()[0],
        input.dims()[1],
        input.dims()[2],
        input.dims()[3],
    );
    let (kdm, khm, kwm) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let wts = spec.weights.data();
    let bias = spec.bias.data();

    // Accumulate into a W-padded row covering the uncropped extent
    // (iw*sw + kw for all taps); the writeback drops the `pw` margin. Rows
    // get a small zero margin so same-parity taps can fuse without edge
    // logic (the extra terms multiply zeros and change nothing).
    const PADR: usize = 2;
    let acc_len = (w_in - 1) * sw + kwm;
    let (xp, w_row) = pad_rows(input.data(), w_in, PADR);

    let kd_map: Vec<Vec<(usize, usize)>> = (0..d_out)
        .map(|od| {
            (0..kdm)
                .filter_map(|kd| {
                    let tdepth = od + pd;
                    if tdepth < kd || (tdepth - kd) % sd != 0 {
                        return None;
                    }
                    let id = (tdepth - kd) / sd;
                    (id < d_in).then_some((kd, id))
                })
                .collect()
        })
        .collect();
    let ih_map: Vec<Vec<(usize, usize)>> = (0..h_out)
        .map(|oh| {
            (0..khm)
                .filter_map(|kh| {
                    let th = oh + ph;
                    if th < kh || (th - kh) % sh != 0 {
                        return None;
                    }
                    let ih = (th - kh) / sh;
                    (ih < h_in).then_some((kh, ih))
                })
                .collect()
        })
        .collect();

    let use_parity = sw == 2;
    // parity split of the padded accumulator: index 2j <-> even buf j
    let n_even = acc_len - acc_len / 2;
    let span = |kw: usize| -> usize {
        // elements of the parity buffer a tap with offset kw/2 can touch
        w_in + kw / 2
    };

    let blk = CO_BLOCK.min(c_out);
    let mut out = vec![0.0f32; c_out * d_out * h_out * w_out];
    let plane = h_out * w_out;
    out.par_chunks_mut(blk * d_out * plane)
        .enumerate()
        .for_each(|(t, chunk)| {
            let co0 = t * blk;
            let nb = chunk.len() / (d_out * plane);
            let mut acc_e = vec![0.0f64; if use_parity { nb * n_even } else { 0 }];
            let mut acc_o = vec![0.0f64; if use_parity { nb * (acc_len / 2) } else { 0 }];
            let mut acc = vec![0.0f64; if use_parity { 0 } else { nb * acc_len }];
            for od in 0..d_out {
                let kd_ids = &kd_map[od];
                for oh in 0..h_out {
                    let ihs = &ih_map[oh];
                    acc_e.fill(0.0);
                    acc_o.fill(0.0);
                    acc.fill(0.0);
                    for ci in 0..c_in {
                        let in_c = ci * d_in * h_in;
                        for &(kd, id) in kd_ids {
                            let rows = in_c + id * h_in;
                            for &(kh, ih) in ihs {
                                let pr = &xp[(rows + ih) * w_row..][..w_row];
                                let row = &pr[PADR..PADR + w_in];
                                for j in 0..nb {
                                    let wb =
                                        ((((co0 + j) * c_in + ci) * kdm + kd) * khm + kh) * kwm;
                                    let wr = &wts[wb..][..kwm];
                                    if use_parity {
                                        if kwm == 4 {
                                            // even taps kw 0, 2; odd taps kw 1, 3
                                            let ae = &mut acc_e[j * n_even..][..n_even];
                                            let m = span(2).min(ae.len());
                                            zip_tap2(
                                                &mut ae[..m],
                                                &pr[PADR..],
                                                wr[0] as f64,
                                                &pr[PADR - 1..],
                                                wr[2] as f64,
                                            );
                                            let ao = &mut acc_o[j * (acc_len / 2)..][..acc_len / 2];
                                            let m = span(3).min(ao.len());
                                            zip_tap2(
                                                &mut ao[..m],
                                                &pr[PADR..],
                                                wr[1] as f64,
                                                &pr[PADR - 1..],
                                                wr[3] as f64,
                                            );
                                        } else {
                                            for (kw, &w) in wr.iter().enumerate() {
                                                let (buf, len) = if kw % 2 == 0 {
                                                    (&mut acc_e[j * n_even..][..n_even], n_even)
                                                } else {
                                                    (
                                                        &mut acc_o[j * (acc_len / 2)..]
                                                            [..acc_len / 2],
                                                        acc_len / 2,
                                                    )
                                                };
                                                let off = kw / 2;
                                                let m = (len - off).min(w_in);
                                                zip_tap(
                                                    &mut buf[off..off + m],
                                                    &row[..m],
                                                    w as f64,
                                                );
                                            }
                                        }
                                    } else if sw == 1 {
                                        let a = &mut acc[j * acc_len..][..acc_len];
                                        for (kw, &w) in wr.iter().enumerate() {
                                            zip_tap(&mut a[kw..kw + w_in], row, w as f64);
                                        }
                                    } else {
                                        let a = &mut acc[j * acc_len..][..acc_len];
                                        for (kw, &w) in wr.iter().enumerate() {
                                            let wf = w as f64;
                                            for (iw, &v) in row.iter().enumerate() {
                                                a[iw * sw + kw] += wf * v as f64;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for j in 0..nb {
                        let b = bias[co0 + j] as f64;
                        let dst = &mut chunk[(j * d_out + od) * plane + oh * w_out..][..w_out];
                        if use_parity {
                            let ae = &acc_e[j * n_even..][..n_even];
                            let ao = &acc_o[j * (acc_len / 2)..][..acc_len / 2];
                            for (ow, o) in dst.iter_mut().enumerate() {
                                let idx = ow + pw;
                                let a = if idx % 2 == 0 {
                                    ae[idx / 2]
                                } else {
                                    ao[idx / 2]
                                };
                                *o = (a + b) as f32;
                            }
                        } else {
                            let a = &acc[j * acc_len..][..acc_len];
                            for (ow, o) in dst.iter_mut().enumerate() {
                                *o = (a[ow + pw] + b) as f32;
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(vec![c_out, d_out, h_out, w_out], out)
}

/// Per-pixel linear map across channels (a 1x1 2D convolution).
///
/// `input` is `C_in x H x W`, `weights` `C_out x C_in`, `bias` `C_out`.
pub fn pointwise_conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(CmfError::shape(
            "pointwise_conv2d",
            format!("input must be CxHxW, got {}", dims_str(input.dims())),
        ));
    }
    if weights.rank() != 2 || weights.dims()[1] != input.dims()[0] {
        return Err(CmfError::shape(
            "pointwise_conv2d",
            format!(
                "weights {} do not map input channels {}",
                dims_str(weights.dims()),
                input.dims()[0]
            ),
        ));
    }
    let c_out = weights.dims()[0];
    if bias.dims() != [c_out] {
        return Err(CmfError::shape(
            "pointwise_conv2d",
            format!("bias is {} but needs {}", dims_str(bias.dims()), c_out),
        ));
    }
    let c_in = input.dims()[0];
    let (h, w) = (input.dims()[1], input.dims()[2]);
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0f32; c_out * plane];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(co, slab)| {
            let b = bias.data()[co] as f64;
            let mut acc = vec![0.0f64; plane];
            for ci in 0..c_in {
                let wf = weights.data()[co * c_in + ci] as f64;
                let src = &x[ci * plane..][..plane];
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += wf * v as f64;
                }
            }
            for (o, &a) in slab.iter_mut().zip(acc.iter()) {
                *o = (a + b) as f32;
            }
        });
    Tensor::new(vec![c_out, h, w], out)
}

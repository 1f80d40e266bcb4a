//! Patch-expansion convolution and max-pooling kernels.
//!
//! Convolution is computed by expanding input windows into a patch matrix
//! (one column per output position) and feeding the tested matrix product;
//! the backward pass scatters gradients through the same index map.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_geometry(
    input_shape: &[usize],
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    if input_shape.len() != 4 || input_shape[1] != in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv input",
            expected: vec![0, in_channels, 0, 0],
            actual: input_shape.to_vec(),
        });
    }
    let (in_h, in_w) = (input_shape[2], input_shape[3]);
    let padded_h = in_h + 2 * pad;
    let padded_w = in_w + 2 * pad;
    if padded_h < kernel_h || padded_w < kernel_w || stride == 0 {
        return Err(Error::ShapeMismatch {
            context: "conv kernel larger than input",
            expected: vec![kernel_h, kernel_w],
            actual: vec![padded_h, padded_w],
        });
    }
    Ok(ConvGeom {
        batch: input_shape[0],
        in_channels,
        in_h,
        in_w,
        kernel_h,
        kernel_w,
        stride,
        pad,
        out_h: (padded_h - kernel_h) / stride + 1,
        out_w: (padded_w - kernel_w) / stride + 1,
    })
}

/// Expand windows of `input` (batch, c, h, w) into a matrix with one row per
/// (channel, ky, kx) and one column per (image, y, x) output position.
pub(crate) fn im2col<T: Element>(input: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let rows = g.in_channels * g.kernel_h * g.kernel_w;
    let cols = g.batch * g.out_h * g.out_w;
    let mut patches = vec![T::zero(); rows * cols];
    let data = input.data();
    let plane = g.in_h * g.in_w;
    let image = g.in_channels * plane;

    for r in 0..rows {
        let kx = r % g.kernel_w;
        let ky = (r / g.kernel_w) % g.kernel_h;
        let c = r / (g.kernel_w * g.kernel_h);
        let out_row = &mut patches[r * cols..(r + 1) * cols];
        let mut col = 0;
        for img in 0..g.batch {
            let base = img * image + c * plane;
            for y in 0..g.out_h {
                let in_y = (y * g.stride + ky) as isize - g.pad as isize;
                for x in 0..g.out_w {
                    let in_x = (x * g.stride + kx) as isize - g.pad as isize;
                    if in_y >= 0 && in_y < g.in_h as isize && in_x >= 0 && in_x < g.in_w as isize {
                        out_row[col] = data[base + in_y as usize * g.in_w + in_x as usize];
                    }
                    col += 1;
                }
            }
        }
    }
    Tensor::from_vec(&[rows, cols], patches).expect("im2col: internal shape bug")
}

/// Scatter-add a patch-matrix gradient back onto the input layout.
pub(crate) fn col2im<T: Element>(dpatches: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let rows = g.in_channels * g.kernel_h * g.kernel_w;
    let cols = g.batch * g.out_h * g.out_w;
    debug_assert_eq!(dpatches.shape(), &[rows, cols]);
    let mut dinput = Tensor::zeros(&[g.batch, g.in_channels, g.in_h, g.in_w]);
    let out = dinput.data_mut();
    let src = dpatches.data();
    let plane = g.in_h * g.in_w;
    let image = g.in_channels * plane;

    for r in 0..rows {
        let kx = r % g.kernel_w;
        let ky = (r / g.kernel_w) % g.kernel_h;
        let c = r / (g.kernel_w * g.kernel_h);
        let src_row = &src[r * cols..(r + 1) * cols];
        let mut col = 0;
        for img in 0..g.batch {
            let base = img * image + c * plane;
            for y in 0..g.out_h {
                let in_y = (y * g.stride + ky) as isize - g.pad as isize;
                for x in 0..g.out_w {
                    let in_x = (x * g.stride + kx) as isize - g.pad as isize;
                    if in_y >= 0 && in_y < g.in_h as isize && in_x >= 0 && in_x < g.in_w as isize {
                        out[base + in_y as usize * g.in_w + in_x as usize] += src_row[col];
                    }
                    col += 1;
                }
            }
        }
    }
    dinput
}

/// (out_ch, batch*oh*ow) matrix -> (batch, out_ch, oh, ow) tensor.
pub(crate) fn fold_conv_output<T: Element>(mat: &Tensor<T>, g: &ConvGeom, out_ch: usize) -> Tensor<T> {
    let spatial = g.out_h * g.out_w;
    let cols = g.batch * spatial;
    debug_assert_eq!(mat.shape(), &[out_ch, cols]);
    let mut out = vec![T::zero(); g.batch * out_ch * spatial];
    let src = mat.data();
    for o in 0..out_ch {
        let row = &src[o * cols..(o + 1) * cols];
        for img in 0..g.batch {
            let dst = &mut out[(img * out_ch + o) * spatial..(img * out_ch + o + 1) * spatial];
            dst.copy_from_slice(&row[img * spatial..(img + 1) * spatial]);
        }
    }
    Tensor::from_vec(&[g.batch, out_ch, g.out_h, g.out_w], out).expect("fold: internal shape bug")
}

/// Inverse of `fold_conv_output`.
pub(crate) fn unfold_conv_grad<T: Element>(dout: &Tensor<T>, g: &ConvGeom, out_ch: usize) -> Tensor<T> {
    let spatial = g.out_h * g.out_w;
    let cols = g.batch * spatial;
    let mut mat = vec![T::zero(); out_ch * cols];
    let src = dout.data();
    for o in 0..out_ch {
        let row = &mut mat[o * cols..(o + 1) * cols];
        for img in 0..g.batch {
            row[img * spatial..(img + 1) * spatial]
                .copy_from_slice(&src[(img * out_ch + o) * spatial..(img * out_ch + o + 1) * spatial]);
        }
    }
    Tensor::from_vec(&[out_ch, cols], mat).expect("unfold: internal shape bug")
}

/// Max pooling; returns the pooled tensor and, per output element, the flat
/// index of its argmax in the input (first occurrence wins on ties).
pub(crate) fn max_pool<T: Element>(
    input: &Tensor<T>,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "max_pool input",
            expected: vec![0, 0, 0, 0],
            actual: shape.to_vec(),
        });
    }
    let (batch, channels, in_h, in_w) = (shape[0], shape[1], shape[2], shape[3]);
    if in_h < kernel_h || in_w < kernel_w || stride == 0 {
        return Err(Error::ShapeMismatch {
            context: "max_pool kernel larger than input",
            expected: vec![kernel_h, kernel_w],
            actual: vec![in_h, in_w],
        });
    }
    let out_h = (in_h - kernel_h) / stride + 1;
    let out_w = (in_w - kernel_w) / stride + 1;
    let mut out = vec![T::zero(); batch * channels * out_h * out_w];
    let mut argmax = vec![0usize; out.len()];
    let data = input.data();

    let mut idx = 0;
    for img in 0..batch {
        for c in 0..channels {
            let base = (img * channels + c) * in_h * in_w;
            for y in 0..out_h {
                for x in 0..out_w {
                    let mut best = T::neg_infinity();
                    let mut best_at = base;
                    for ky in 0..kernel_h {
                        let row = base + (y * stride + ky) * in_w + x * stride;
                        for kx in 0..kernel_w {
                            let v = data[row + kx];
                            if v > best {
                                best = v;
                                best_at = row + kx;
                            }
                        }
                    }
                    out[idx] = best;
                    argmax[idx] = best_at;
                    idx += 1;
                }
            }
        }
    }
    let t = Tensor::from_vec(&[batch, channels, out_h, out_w], out)?;
    Ok((t, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_identity_kernel_geometry() {
        // 1x1 kernel, stride 1: patches == input laid out per column
        let input =
            Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let g = conv_geometry(input.shape(), 1, 1, 1, 1, 0).unwrap();
        let p = im2col(&input, &g);
        assert_eq!(p.shape(), &[1, 4]);
        assert_eq!(p.data(), input.data());
    }

    #[test]
    fn im2col_3x3_single_patch() {
        let input = Tensor::from_vec(
            &[1, 1, 3, 3],
            (1..=9).map(|v| v as f64).collect(),
        )
        .unwrap();
        let g = conv_geometry(input.shape(), 1, 3, 3, 1, 0).unwrap();
        let p = im2col(&input, &g);
        assert_eq!(p.shape(), &[9, 1]);
        assert_eq!(p.data(), input.data());
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y: the two index maps
        // are transposes of each other.
        let mut rng = crate::tensor::Rng::new(4);
        let x = rng.normal_tensor::<f64>(&[2, 3, 5, 5], 1.0);
        let g = conv_geometry(x.shape(), 3, 3, 3, 2, 1).unwrap();
        let px = im2col(&x, &g);
        let y = rng.normal_tensor::<f64>(px.shape(), 1.0);
        let lhs: f64 = px.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g);
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn max_pool_2x2() {
        let input = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                1.0f64, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                9.0, 10.0, 13.0, 14.0, //
                11.0, 12.0, 15.0, 16.0,
            ],
        )
        .unwrap();
        let (out, argmax) = max_pool(&input, 2, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[4.0, 8.0, 12.0, 16.0]);
        assert_eq!(argmax, vec![5, 7, 13, 15]);
    }

    #[test]
    fn max_pool_tie_takes_first() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![3.0f64, 3.0, 3.0, 3.0]).unwrap();
        let (_, argmax) = max_pool(&input, 2, 2, 2).unwrap();
        assert_eq!(argmax, vec![0]);
    }
}

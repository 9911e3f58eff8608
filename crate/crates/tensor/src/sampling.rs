//! Max pooling and bilinear resampling kernels.

use crate::{Result, Shape, Tensor, TensorError};

/// Max pooling with a square window; padded taps never win.
pub(crate) fn max_pool_forward(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let s = x.shape();
    if kernel == 0 || stride == 0 || padding >= kernel || s.h + 2 * padding < kernel || s.w + 2 * padding < kernel {
        return Err(TensorError::InvalidArgument(format!(
            "max pool {kernel}x{kernel}/{stride} pad {padding} on {s}"
        )));
    }
    let oh = (s.h + 2 * padding - kernel) / stride + 1;
    let ow = (s.w + 2 * padding - kernel) / stride + 1;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.numel()];
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let idx = iy as usize * s.w + ix as usize;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out.data_mut()[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub(crate) fn max_pool_backward(input: Shape, dy: &Tensor, argmax: &[u32]) -> Tensor {
    let mut dx = Tensor::zeros(input);
    let out_plane = dy.shape().plane();
    for (nc, chunk) in dy.data().chunks(out_plane).enumerate() {
        let base = nc * input.plane();
        for (o, &g) in chunk.iter().enumerate() {
            dx.data_mut()[base + argmax[nc * out_plane + o] as usize] += g;
        }
    }
    dx
}

/// One output coordinate's two source taps and the weight of the second.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

/// Half-pixel-centred (corner-unaligned) bilinear taps along one axis.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub(crate) struct ResizePlan {
    pub input: Shape,
    pub output: Shape,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl ResizePlan {
    pub fn new(input: Shape, height: usize, width: usize) -> Result<Self> {
        if input.h == 0 || input.w == 0 || height == 0 || width == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "cannot resize {input} to {height}x{width}"
            )));
        }
        Ok(Self {
            input,
            output: Shape::new(input.n, input.c, height, width),
            rows: taps(input.h, height),
            cols: taps(input.w, width),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (iw, ow) = (self.input.w, self.output.w);
        let mut out = Tensor::zeros(self.output);
        let out_plane = self.output.plane();
        for nc in 0..self.input.n * self.input.c {
            let src = &x.data()[nc * self.input.plane()..][..self.input.plane()];
            let dst = &mut out.data_mut()[nc * out_plane..][..out_plane];
            for (oy, ty) in self.rows.iter().enumerate() {
                let r0 = &src[ty.lo * iw..][..iw];
                let r1 = &src[ty.hi * iw..][..iw];
                for (ox, tx) in self.cols.iter().enumerate() {
                    let top = r0[tx.lo] + tx.frac * (r0[tx.hi] - r0[tx.lo]);
                    let bottom = r1[tx.lo] + tx.frac * (r1[tx.hi] - r1[tx.lo]);
                    dst[oy * ow + ox] = top + ty.frac * (bottom - top);
                }
            }
        }
        out
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let (iw, ow) = (self.input.w, self.output.w);
        let mut dx = Tensor::zeros(self.input);
        let out_plane = self.output.plane();
        for nc in 0..self.input.n * self.input.c {
            let g = &dy.data()[nc * out_plane..][..out_plane];
            let dst = &mut dx.data_mut()[nc * self.input.plane()..][..self.input.plane()];
            for (oy, ty) in self.rows.iter().enumerate() {
                for (ox, tx) in self.cols.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    let top = v * (1.0 - ty.frac);
                    let bottom = v * ty.frac;
                    dst[ty.lo * iw + tx.lo] += top * (1.0 - tx.frac);
                    dst[ty.lo * iw + tx.hi] += top * tx.frac;
                    dst[ty.hi * iw + tx.lo] += bottom * (1.0 - tx.frac);
                    dst[ty.hi * iw + tx.hi] += bottom * tx.frac;
                }
            }
        }
        dx
    }
}

/// Bilinear resampling without building a graph node (e.g. for inference outputs).
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    Ok(ResizePlan::new(x.shape(), height, width)?.forward(x))
}

//! Grouped, strided, dilated 2-D convolution lowered to GEMM via im2col.

use crate::{Result, Shape, Tensor, TensorError};

/// Hyperparameters of a 2-D convolution. Padding is symmetric and zero-filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dGeom {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dGeom {
    /// Padding that keeps the spatial size for an odd kernel at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn out_dim(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvPlan {
    pub input: Shape,
    pub weight: Shape,
    pub output: Shape,
    pub geom: Conv2dGeom,
}

impl ConvPlan {
    pub fn new(input: Shape, weight: Shape, geom: Conv2dGeom) -> Result<Self> {
        let invalid = |msg: String| Err(TensorError::InvalidArgument(msg));
        if geom.stride == 0 || geom.dilation == 0 || geom.groups == 0 {
            return invalid(format!("degenerate convolution geometry {geom:?}"));
        }
        if !input.c.is_multiple_of(geom.groups) || !weight.n.is_multiple_of(geom.groups) {
            return invalid(format!(
                "channels {} -> {} not divisible by {} groups",
                input.c, weight.n, geom.groups
            ));
        }
        if weight.c != input.c / geom.groups {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: Shape::new(weight.n, input.c / geom.groups, weight.h, weight.w),
                got: weight,
            });
        }
        let (Some(oh), Some(ow)) = (geom.out_dim(input.h, weight.h), geom.out_dim(input.w, weight.w))
        else {
            return invalid(format!("input {input} too small for kernel {weight} with {geom:?}"));
        };
        Ok(Self {
            input,
            weight,
            output: Shape::new(input.n, weight.n, oh, ow),
            geom,
        })
    }

    fn cin_g(&self) -> usize {
        self.input.c / self.geom.groups
    }

    fn cout_g(&self) -> usize {
        self.weight.n / self.geom.groups
    }

    fn k(&self) -> usize {
        self.cin_g() * self.weight.h * self.weight.w
    }

    fn pointwise(&self) -> bool {
        self.weight.h == 1 && self.weight.w == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let Shape { h, w, .. } = self.input;
        let (kh, kw) = (self.weight.h, self.weight.w);
        let (oh, ow) = (self.output.h, self.output.w);
        let Conv2dGeom {
            stride,
            padding,
            dilation,
            ..
        } = self.geom;
        let p = oh * ow;
        for ci in 0..self.cin_g() {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = &mut col[((ci * kh + ki) * kw + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            *d = if ix < 0 || ix >= w as isize {
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

    fn col2im(&self, col: &[f32], dx: &mut [f32]) {
        let Shape { h, w, .. } = self.input;
        let (kh, kw) = (self.weight.h, self.weight.w);
        let (oh, ow) = (self.output.h, self.output.w);
        let Conv2dGeom {
            stride,
            padding,
            dilation,
            ..
        } = self.geom;
        let p = oh * ow;
        for ci in 0..self.cin_g() {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = &col[((ci * kh + ki) * kw + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a·b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above spell out the bounds each caller upholds;
    // every operand is a live slice and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
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
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(plan: &ConvPlan, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let mut out = Tensor::zeros(plan.output);
    let (cin_g, cout_g, k) = (plan.cin_g(), plan.cout_g(), plan.k());
    let in_plane = plan.input.plane();
    let p = plan.output.plane();
    let mut col = if plan.pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..plan.input.n {
        for g in 0..plan.geom.groups {
            let x_ng = &x.data()[(n * plan.input.c + g * cin_g) * in_plane..][..cin_g * in_plane];
            let w_g = &w.data()[g * cout_g * k..][..cout_g * k];
            let out_ng = &mut out.data_mut()[(n * plan.output.c + g * cout_g) * p..][..cout_g * p];
            let b: &[f32] = if plan.pointwise() {
                x_ng
            } else {
                plan.im2col(x_ng, &mut col);
                &col
            };
            gemm(cout_g, k, p, w_g, (k, 1), b, (p, 1), 0.0, out_ng);
        }
    }
    if let Some(bias) = bias {
        let b = bias.data();
        for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
            let v = b[i % plan.output.c];
            plane.iter_mut().for_each(|o| *o += v);
        }
    }
    out
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn backward(
    plan: &ConvPlan,
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    want_dx: bool,
    want_bias: bool,
) -> (Option<Tensor>, Tensor, Option<Tensor>) {
    let (cin_g, cout_g, k) = (plan.cin_g(), plan.cout_g(), plan.k());
    let in_plane = plan.input.plane();
    let p = plan.output.plane();
    let mut dx = want_dx.then(|| Tensor::zeros(plan.input));
    let mut dw = Tensor::zeros(plan.weight);
    let mut col = if plan.pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..plan.input.n {
        for g in 0..plan.geom.groups {
            let x_ng = &x.data()[(n * plan.input.c + g * cin_g) * in_plane..][..cin_g * in_plane];
            let w_g = &w.data()[g * cout_g * k..][..cout_g * k];
            let dy_ng = &dy.data()[(n * plan.output.c + g * cout_g) * p..][..cout_g * p];
            // dW_g += dY_g · colᵀ
            {
                let b: &[f32] = if plan.pointwise() {
                    x_ng
                } else {
                    plan.im2col(x_ng, &mut col);
                    &col
                };
                let dw_g = &mut dw.data_mut()[g * cout_g * k..][..cout_g * k];
                gemm(cout_g, p, k, dy_ng, (p, 1), b, (1, p), 1.0, dw_g);
            }
            // dcol = W_gᵀ · dY_g
            if let Some(dx) = dx.as_mut() {
                let dx_ng =
                    &mut dx.data_mut()[(n * plan.input.c + g * cin_g) * in_plane..][..cin_g * in_plane];
                if plan.pointwise() {
                    gemm(k, cout_g, p, w_g, (1, k), dy_ng, (p, 1), 1.0, dx_ng);
                } else {
                    gemm(k, cout_g, p, w_g, (1, k), dy_ng, (p, 1), 0.0, &mut col);
                    plan.col2im(&col, dx_ng);
                }
            }
        }
    }
    let db = want_bias.then(|| {
        let mut db = Tensor::zeros(Shape::channels(plan.output.c));
        for (i, plane) in dy.data().chunks(p).enumerate() {
            db.data_mut()[i % plan.output.c] += plane.iter().sum::<f32>();
        }
        db
    });
    (dx, dw, db)
}

//! Grouped 2-D convolution. Standard (`groups == 1`), depthwise (`groups == in_channels`)
//! and pointwise (1×1 kernel) convolutions are all instances of the same kernel.
//!
//! Each (sample, group) pair is lowered to one GEMM over an im2col buffer.

use rayon::prelude::*;

use crate::tensor::{gemm, BackwardCtx, BackwardRule, Float, Result, Tape, TensorError, Transpose, Var};

/// Samples per partial weight-gradient buffer. Fixed so the reduction order does not
/// depend on the thread count.
const WGRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    /// Square kernel, stride 1, "same" padding, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (kernel / 2, kernel / 2),
            groups: 1,
            bias: true,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = (stride, stride);
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = (padding, padding);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TensorError::InvalidArgument { op: "conv2d", msg });
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return bad(format!("channel and group counts must be positive: {self:?}"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return bad("kernel and stride must be positive".into());
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel.0 * self.kernel.1
            + if self.bias { self.out_channels } else { 0 }
    }

    /// Spatial output extent: `(H + 2p − k) / s + 1`, floored.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let extent = |n: usize, p: usize, k: usize, s: usize| -> Option<usize> {
            (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
        };
        match (
            extent(h, self.padding.0, self.kernel.0, self.stride.0),
            extent(w, self.padding.1, self.kernel.1, self.stride.1),
        ) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok((ho, wo)),
            _ => Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: format!("kernel {:?} does not fit a {h}×{w} input", self.kernel),
            }),
        }
    }

    /// Multiply–accumulate count for one sample: `H'·W'·Cout·(Cin/groups)·kh·kw`.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((ho * wo * self.out_channels * self.in_per_group() * self.kernel.0 * self.kernel.1)
            as u64)
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: F = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().copied().sum::<F>() + tail
}

/// Resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeometry {
    pub fn new(spec: &Conv2dSpec, input: &[usize]) -> Result<Self> {
        spec.validate()?;
        let &[n, c, h, w] = input else {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: format!("expected NCHW input, got {input:?}"),
            });
        };
        if c != spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: spec.weight_shape().to_vec(),
            });
        }
        let (ho, wo) = spec.output_hw(h, w)?;
        Ok(Self {
            n,
            h,
            w,
            ho,
            wo,
            cin: spec.in_channels,
            cout: spec.out_channels,
            groups: spec.groups,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        })
    }

    fn cg(&self) -> usize {
        self.cin / self.groups
    }

    fn og(&self) -> usize {
        self.cout / self.groups
    }

    fn kdim(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.cout * self.out_pixels()
    }

    /// 1×1, stride 1, no padding: the input group already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// One input and one output channel per group: handled by direct plane kernels,
    /// since a GEMM with a single output row is mostly packing overhead.
    fn is_depthwise(&self) -> bool {
        self.cg() == 1 && self.og() == 1
    }

    /// `out += w ⋆ x` for one channel plane.
    fn dw_forward<F: Float>(&self, x: &[F], w: &[F], out: &mut [F]) {
        for oy in 0..self.ho {
            let dst = &mut out[oy * self.wo..(oy + 1) * self.wo];
            for ki in 0..self.kh {
                let Some(iy) = self.src_row(oy, ki) else { continue };
                let src = &x[iy * self.w..(iy + 1) * self.w];
                for kj in 0..self.kw {
                    let wk = w[ki * self.kw + kj];
                    let (lo, hi) = self.valid_cols(kj);
                    if self.sw == 1 {
                        let s = &src[lo + kj - self.pw..hi + kj - self.pw];
                        for (d, &v) in dst[lo..hi].iter_mut().zip(s) {
                            *d = *d + wk * v;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox] = dst[ox] + wk * src[ox * self.sw + kj - self.pw];
                        }
                    }
                }
            }
        }
    }

    /// `dx += wᵀ ⋆ dy` for one channel plane.
    fn dw_input_grad<F: Float>(&self, w: &[F], dy: &[F], dx: &mut [F]) {
        for oy in 0..self.ho {
            let g = &dy[oy * self.wo..(oy + 1) * self.wo];
            for ki in 0..self.kh {
                let Some(iy) = self.src_row(oy, ki) else { continue };
                let dst = &mut dx[iy * self.w..(iy + 1) * self.w];
                for kj in 0..self.kw {
                    let wk = w[ki * self.kw + kj];
                    let (lo, hi) = self.valid_cols(kj);
                    if self.sw == 1 {
                        let d = &mut dst[lo + kj - self.pw..hi + kj - self.pw];
                        for (d, &v) in d.iter_mut().zip(&g[lo..hi]) {
                            *d = *d + wk * v;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = ox * self.sw + kj - self.pw;
                            dst[ix] = dst[ix] + wk * g[ox];
                        }
                    }
                }
            }
        }
    }

    /// `dw += Σ dy · shifted x` for one channel plane.
    fn dw_weight_grad<F: Float>(&self, x: &[F], dy: &[F], dw: &mut [F]) {
        for oy in 0..self.ho {
            let g = &dy[oy * self.wo..(oy + 1) * self.wo];
            for ki in 0..self.kh {
                let Some(iy) = self.src_row(oy, ki) else { continue };
                let src = &x[iy * self.w..(iy + 1) * self.w];
                for kj in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kj);
                    let acc = if self.sw == 1 {
                        dot(&g[lo..hi], &src[lo + kj - self.pw..hi + kj - self.pw])
                    } else {
                        (lo..hi).fold(F::zero(), |a, ox| a + g[ox] * src[ox * self.sw + kj - self.pw])
                    };
                    let k = ki * self.kw + kj;
                    dw[k] = dw[k] + acc;
                }
            }
        }
    }

    /// Input row feeding output row `oy` through kernel row `ki`, if inside the image.
    fn src_row(&self, oy: usize, ki: usize) -> Option<usize> {
        (oy * self.sh + ki).checked_sub(self.ph).filter(|&r| r < self.h)
    }

    /// Range of output columns whose tap `kj` lands inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pw {
            0
        } else {
            (self.pw - kj).div_ceil(self.sw)
        };
        let limit = self.w + self.pw;
        let hi = if limit <= kj {
            0
        } else {
            ((limit - kj - 1) / self.sw + 1).min(self.wo)
        };
        let lo = lo.min(self.wo);
        (lo, hi.max(lo))
    }

    /// Lowers one group of one sample (`cg × H × W`) into `[cg·kh·kw, H'·W']`.
    fn im2col<F: Float>(&self, x: &[F], cols: &mut [F]) {
        let px = self.out_pixels();
        for ci in 0..self.cg() {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * px..(row + 1) * px];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let Some(iy) = self.src_row(oy, ki) else {
                            out.fill(F::zero());
                            continue;
                        };
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        out[..lo].fill(F::zero());
                        out[hi..].fill(F::zero());
                        if self.sw == 1 {
                            let start = lo + kj - self.pw;
                            out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (ox, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                                *o = src[ox * self.sw + kj - self.pw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters columns back onto an image, accumulating.
    fn col2im<F: Float>(&self, cols: &[F], dx: &mut [F]) {
        let px = self.out_pixels();
        for ci in 0..self.cg() {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * px..(row + 1) * px];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let Some(iy) = self.src_row(oy, ki) else {
                            continue;
                        };
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for ox in lo..hi {
                            let ix = ox * self.sw + kj - self.pw;
                            dst[ix] = dst[ix] + line[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward_raw<F: Float>(
    geo: &ConvGeometry,
    x: &[F],
    weight: &[F],
    bias: Option<&[F]>,
) -> Vec<F> {
    let (cg, og, kdim, px) = (geo.cg(), geo.og(), geo.kdim(), geo.out_pixels());
    let mut out = vec![F::zero(); geo.n * geo.out_sample()];
    out.par_chunks_mut(geo.out_sample())
        .zip(x.par_chunks(geo.in_sample()))
        .for_each(|(y, xs)| {
            let mut cols = if geo.is_pointwise() || geo.is_depthwise() {
                Vec::new()
            } else {
                vec![F::zero(); kdim * px]
            };
            for g in 0..geo.groups {
                let xg = &xs[g * cg * geo.h * geo.w..(g + 1) * cg * geo.h * geo.w];
                if geo.is_depthwise() {
                    geo.dw_forward(xg, &weight[g * kdim..(g + 1) * kdim], &mut y[g * px..(g + 1) * px]);
                    continue;
                }
                let colsg: &[F] = if geo.is_pointwise() {
                    xg
                } else {
                    geo.im2col(xg, &mut cols);
                    &cols
                };
                let wg = &weight[g * og * kdim..(g + 1) * og * kdim];
                let yg = &mut y[g * og * px..(g + 1) * og * px];
                gemm(Transpose::No, Transpose::No, og, px, kdim, F::one(), wg, colsg, F::zero(), yg);
            }
            if let Some(b) = bias {
                for (o, plane) in y.chunks_mut(px).enumerate() {
                    plane.iter_mut().for_each(|v| *v = *v + b[o]);
                }
            }
        });
    out
}

pub(crate) fn conv2d_input_grad<F: Float>(geo: &ConvGeometry, weight: &[F], dy: &[F]) -> Vec<F> {
    let (cg, og, kdim, px) = (geo.cg(), geo.og(), geo.kdim(), geo.out_pixels());
    let mut dx = vec![F::zero(); geo.n * geo.in_sample()];
    dx.par_chunks_mut(geo.in_sample())
        .zip(dy.par_chunks(geo.out_sample()))
        .for_each(|(dxs, dys)| {
            let mut dcols = vec![F::zero(); if geo.is_depthwise() { 0 } else { kdim * px }];
            for g in 0..geo.groups {
                let wg = &weight[g * og * kdim..(g + 1) * og * kdim];
                let dyg = &dys[g * og * px..(g + 1) * og * px];
                let dxg = &mut dxs[g * cg * geo.h * geo.w..(g + 1) * cg * geo.h * geo.w];
                if geo.is_depthwise() {
                    geo.dw_input_grad(wg, dyg, dxg);
                } else if geo.is_pointwise() {
                    gemm(Transpose::Yes, Transpose::No, kdim, px, og, F::one(), wg, dyg, F::zero(), dxg);
                } else {
                    gemm(Transpose::Yes, Transpose::No, kdim, px, og, F::one(), wg, dyg, F::zero(), &mut dcols);
                    geo.col2im(&dcols, dxg);
                }
            }
        });
    dx
}

pub(crate) fn conv2d_weight_grad<F: Float>(geo: &ConvGeometry, x: &[F], dy: &[F]) -> Vec<F> {
    let (cg, og, kdim, px) = (geo.cg(), geo.og(), geo.kdim(), geo.out_pixels());
    let wlen = geo.cout * kdim;
    let partials: Vec<Vec<F>> = x
        .par_chunks(geo.in_sample() * WGRAD_CHUNK)
        .zip(dy.par_chunks(geo.out_sample() * WGRAD_CHUNK))
        .map(|(xc, dyc)| {
            let mut dw = vec![F::zero(); wlen];
            let direct = geo.is_pointwise() || geo.is_depthwise();
            let mut cols = vec![F::zero(); if direct { 0 } else { kdim * px }];
            for (xs, dys) in xc.chunks(geo.in_sample()).zip(dyc.chunks(geo.out_sample())) {
                for g in 0..geo.groups {
                    let xg = &xs[g * cg * geo.h * geo.w..(g + 1) * cg * geo.h * geo.w];
                    if geo.is_depthwise() {
                        let dyg = &dys[g * px..(g + 1) * px];
                        geo.dw_weight_grad(xg, dyg, &mut dw[g * kdim..(g + 1) * kdim]);
                        continue;
                    }
                    let colsg: &[F] = if geo.is_pointwise() {
                        xg
                    } else {
                        geo.im2col(xg, &mut cols);
                        &cols
                    };
                    let dyg = &dys[g * og * px..(g + 1) * og * px];
                    let dwg = &mut dw[g * og * kdim..(g + 1) * og * kdim];
                    gemm(Transpose::No, Transpose::Yes, og, kdim, px, F::one(), dyg, colsg, F::one(), dwg);
                }
            }
            dw
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| vec![F::zero(); wlen]);
    for p in iter {
        total.iter_mut().zip(&p).for_each(|(a, &b)| *a = *a + b);
    }
    total
}

pub(crate) fn conv2d_bias_grad<F: Float>(geo: &ConvGeometry, dy: &[F]) -> Vec<F> {
    let px = geo.out_pixels();
    let mut db = vec![F::zero(); geo.cout];
    for sample in dy.chunks(geo.out_sample()) {
        for (o, plane) in sample.chunks(px).enumerate() {
            db[o] = db[o] + plane.iter().copied().sum::<F>();
        }
    }
    db
}

struct Conv2dRule {
    geo: ConvGeometry,
    x: Var,
    weight: Var,
    bias: Option<Var>,
}

impl<F: Float> BackwardRule<F> for Conv2dRule {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.weight];
        v.extend(self.bias);
        v
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let dx = needs[0].then(|| conv2d_input_grad(&self.geo, ctx.value(self.weight).data(), grad_out));
        let dw = needs[1].then(|| conv2d_weight_grad(&self.geo, ctx.value(self.x).data(), grad_out));
        let mut grads = vec![dx, dw];
        if self.bias.is_some() {
            grads.push(needs[2].then(|| conv2d_bias_grad(&self.geo, grad_out)));
        }
        Ok(grads)
    }
}

impl<F: Float> Tape<F> {
    /// Grouped convolution of an NCHW input with weight `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, spec: &Conv2dSpec, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let geo = ConvGeometry::new(spec, self.shape(x)?)?;
        let wv = self.value(weight)?;
        if wv.shape() != spec.weight_shape() {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d weight",
                lhs: wv.shape().to_vec(),
                rhs: spec.weight_shape().to_vec(),
            });
        }
        if bias.is_some() != spec.bias {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: format!("spec bias={} but bias tensor given={}", spec.bias, bias.is_some()),
            });
        }
        let bias_data = match bias {
            Some(b) => {
                let bv = self.value(b)?;
                if bv.shape() != [spec.out_channels] {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: bv.shape().to_vec(),
                        rhs: vec![spec.out_channels],
                    });
                }
                Some(bv.data())
            }
            None => None,
        };
        let out = conv2d_forward_raw(&geo, self.value(x)?.data(), wv.data(), bias_data);
        self.record(
            "conv2d",
            vec![geo.n, geo.cout, geo.ho, geo.wo],
            out,
            Conv2dRule { geo, x, weight, bias },
        )
    }
}

/// Depthwise convolution (one filter per channel) followed by a pointwise 1×1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthwiseSeparableSpec {
    pub depthwise: Conv2dSpec,
    pub pointwise: Conv2dSpec,
}

impl DepthwiseSeparableSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, bias: bool) -> Self {
        Self {
            depthwise: Conv2dSpec::new(in_channels, in_channels, kernel)
                .with_groups(in_channels)
                .with_bias(bias),
            pointwise: Conv2dSpec::new(in_channels, out_channels, 1).with_bias(bias),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dw = &self.depthwise;
        let pw = &self.pointwise;
        dw.validate()?;
        pw.validate()?;
        if dw.groups != dw.in_channels || dw.in_channels != dw.out_channels {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_separable",
                msg: format!("depthwise stage must have groups == in == out, got {dw:?}"),
            });
        }
        if pw.kernel != (1, 1) || pw.padding != (0, 0) || pw.in_channels != dw.out_channels {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_separable",
                msg: format!("pointwise stage must be 1×1 over {} channels, got {pw:?}", dw.out_channels),
            });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (h, w) = self.depthwise.output_hw(h, w)?;
        self.pointwise.output_hw(h, w)
    }

    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (ho, wo) = self.depthwise.output_hw(h, w)?;
        Ok(self.depthwise.macs(h, w)? + self.pointwise.macs(ho, wo)?)
    }
}

/// Parameter handles of a depthwise-separable layer.
#[derive(Debug, Clone, Copy)]
pub struct SeparableParams {
    pub dw_weight: Var,
    pub dw_bias: Option<Var>,
    pub pw_weight: Var,
    pub pw_bias: Option<Var>,
}

impl<F: Float> Tape<F> {
    pub fn depthwise_separable(
        &mut self,
        spec: &DepthwiseSeparableSpec,
        x: Var,
        params: SeparableParams,
    ) -> Result<Var> {
        spec.validate()?;
        let mid = self.conv2d(&spec.depthwise, x, params.dw_weight, params.dw_bias)?;
        self.conv2d(&spec.pointwise, mid, params.pw_weight, params.pw_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_kernel_is_identity() {
        let spec = Conv2dSpec::new(1, 1, 1);
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let x = tape.constant(Tensor::from_vec([1, 1, 3, 4], data.clone()).unwrap());
        let w = tape.constant(Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap());
        let b = tape.constant(Tensor::zeros([1]).unwrap());
        let y = tape.conv2d(&spec, x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &data[..]);
    }

    #[test]
    fn first_layer_parameter_count() {
        assert_eq!(Conv2dSpec::new(1, 64, 5).param_count(), 1664);
        assert_eq!(Conv2dSpec::new(1, 64, 5).with_bias(false).param_count(), 1600);
    }

    #[test]
    fn grouped_counts() {
        let c = Conv2dSpec::new(64, 128, 5).with_bias(false);
        assert_eq!(c.param_count(), 204_800);
        assert_eq!(Conv2dSpec::new(64, 128, 5).with_groups(32).param_count(), 6_528);
        assert_eq!(Conv2dSpec::new(128, 256, 5).with_groups(8).param_count(), 102_656);
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(Conv2dSpec::new(64, 128, 5).with_groups(3).validate().is_err());
        assert!(Conv2dSpec::new(6, 4, 3).with_groups(3).validate().is_err());
    }

    #[test]
    fn kernel_larger_than_padded_input_fails() {
        let spec = Conv2dSpec::new(1, 1, 5).with_padding(0);
        assert!(spec.output_hw(3, 8).is_err());
        assert_eq!(spec.output_hw(5, 8).unwrap(), (1, 4));
    }

    #[test]
    fn same_padding_keeps_geometry() {
        assert_eq!(Conv2dSpec::new(1, 64, 5).output_hw(640, 64).unwrap(), (640, 64));
        assert_eq!(
            Conv2dSpec::new(1, 1, 3).with_stride(2).with_padding(1).output_hw(7, 8).unwrap(),
            (4, 4)
        );
    }

    #[test]
    fn macs_trivial() {
        let spec = Conv2dSpec::new(1, 1, 1);
        assert_eq!(spec.macs(1, 1).unwrap(), 1);
    }

    #[test]
    fn separable_validation() {
        let ok = DepthwiseSeparableSpec::new(8, 16, 3, true);
        ok.validate().unwrap();
        let mut bad = ok;
        bad.depthwise.groups = 1;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.pointwise.kernel = (3, 3);
        assert!(bad.validate().is_err());
        assert_eq!(DepthwiseSeparableSpec::new(64, 64, 5, true).depthwise.param_count(), 1664);
    }
}

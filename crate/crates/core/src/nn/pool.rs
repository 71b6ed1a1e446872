use crate::tensor::{BackwardCtx, BackwardRule, Float, Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dSpec {
    pub kind: PoolKind,
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl Pool2dSpec {
    pub fn avg2() -> Self {
        Self {
            kind: PoolKind::Avg,
            window: (2, 2),
            stride: (2, 2),
        }
    }

    pub fn max2() -> Self {
        Self {
            kind: PoolKind::Max,
            ..Self::avg2()
        }
    }

    /// Output extent; the window must tile the input exactly along each axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, k: usize, s: usize| -> Option<usize> {
            if k == 0 || s == 0 || n < k || !(n - k).is_multiple_of(s) {
                None
            } else {
                Some((n - k) / s + 1)
            }
        };
        match (
            axis(h, self.window.0, self.stride.0),
            axis(w, self.window.1, self.stride.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(TensorError::InvalidArgument {
                op: "pool2d",
                msg: format!(
                    "{h}×{w} input is not tiled by window {:?} stride {:?}",
                    self.window, self.stride
                ),
            }),
        }
    }
}

struct PoolRule {
    x: Var,
    spec: Pool2dSpec,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Flat input index receiving each output's gradient (max pooling only).
    argmax: Vec<usize>,
}

impl<F: Float> BackwardRule<F> for PoolRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        _ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let [n, c, h, w] = self.in_shape;
        let (ho, wo) = self.out_hw;
        let (kh, kw) = self.spec.window;
        let (sh, sw) = self.spec.stride;
        let mut dx = vec![F::zero(); n * c * h * w];
        match self.spec.kind {
            PoolKind::Max => {
                for (&src, &g) in self.argmax.iter().zip(grad_out) {
                    dx[src] = dx[src] + g;
                }
            }
            PoolKind::Avg => {
                let area = F::from_usize(kh * kw).unwrap();
                for plane in 0..n * c {
                    let ib = plane * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = grad_out[(plane * ho + oy) * wo + ox] / area;
                            for ky in 0..kh {
                                let row = ib + (oy * sh + ky) * w + ox * sw;
                                for kx in 0..kw {
                                    dx[row + kx] = dx[row + kx] + g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

struct GlobalAvgRule {
    x: Var,
    hw: usize,
}

impl<F: Float> BackwardRule<F> for GlobalAvgRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        _ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let area = F::from_usize(self.hw).unwrap();
        let dx = grad_out
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / area, self.hw))
            .collect();
        Ok(vec![Some(dx)])
    }
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape).map_err(|_| TensorError::InvalidArgument {
        op,
        msg: format!("expected NCHW input, got {shape:?}"),
    })
}

impl<F: Float> Tape<F> {
    /// Windowed max or average pooling. Max pooling routes the gradient to the first
    /// maximal element in row-major window order.
    pub fn pool2d(&mut self, spec: &Pool2dSpec, x: Var) -> Result<Var> {
        let in_shape = nchw("pool2d", self.shape(x)?)?;
        let [n, c, h, w] = in_shape;
        let (ho, wo) = spec.output_hw(h, w)?;
        let (kh, kw) = spec.window;
        let (sh, sw) = spec.stride;
        let xd = self.value(x)?.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::new();
        let area = F::from_usize(kh * kw).unwrap();
        for plane in 0..n * c {
            let ib = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let origin = ib + oy * sh * w + ox * sw;
                    match spec.kind {
                        PoolKind::Avg => {
                            let mut acc = F::zero();
                            for ky in 0..kh {
                                let row = origin + ky * w;
                                acc = acc + xd[row..row + kw].iter().copied().sum::<F>();
                            }
                            out.push(acc / area);
                        }
                        PoolKind::Max => {
                            let mut best = origin;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let i = origin + ky * w + kx;
                                    if xd[i] > xd[best] {
                                        best = i;
                                    }
                                }
                            }
                            out.push(xd[best]);
                            argmax.push(best);
                        }
                    }
                }
            }
        }
        self.record(
            "pool2d",
            vec![n, c, ho, wo],
            out,
            PoolRule {
                x,
                spec: *spec,
                in_shape,
                out_hw: (ho, wo),
                argmax,
            },
        )
    }

    /// `[N, C, H, W] → [N, C]` by spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("global_avg_pool", self.shape(x)?)?;
        let hw = h * w;
        let area = F::from_usize(hw).unwrap();
        let out = self
            .value(x)?
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<F>() / area)
            .collect();
        self.record("global_avg_pool", vec![n, c], out, GlobalAvgRule { x, hw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn square() -> Tensor<f64> {
        Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn avg_pool_of_two_by_two() {
        let mut tape = Tape::new();
        let x = tape.constant(square());
        let y = tape.pool2d(&Pool2dSpec::avg2(), x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[2.5]);
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(square());
        let y = tape.pool2d(&Pool2dSpec::max2(), x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[4.0]);
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_pool_tie_goes_to_first() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec([1, 1, 2, 2], vec![5.0, 1.0, 5.0, 5.0]).unwrap());
        let y = tape.pool2d(&Pool2dSpec::max2(), x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn halving_chain() {
        let spec = Pool2dSpec::avg2();
        let mut hw = (640, 64);
        let mut trace = vec![hw];
        for _ in 0..4 {
            hw = spec.output_hw(hw.0, hw.1).unwrap();
            trace.push(hw);
        }
        assert_eq!(trace, [(640, 64), (320, 32), (160, 16), (80, 8), (40, 4)]);
    }

    #[test]
    fn non_divisible_extent_is_an_error() {
        assert!(Pool2dSpec::avg2().output_hw(5, 4).is_err());
    }

    #[test]
    fn global_average() {
        let mut tape = Tape::new();
        let x = tape.param(square());
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).unwrap().shape(), &[1, 1]);
        assert_eq!(tape.value(y).unwrap().data(), &[2.5]);
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25; 4]);
    }
}

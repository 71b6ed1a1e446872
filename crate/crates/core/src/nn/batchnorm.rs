use crate::tensor::{BackwardCtx, BackwardRule, Float, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm2dSpec {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2dSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// gamma and beta; running statistics are buffers.
    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !(self.eps > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm2d",
                msg: format!("invalid spec {self:?}"),
            });
        }
        Ok(())
    }
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

impl<F: Float> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]).expect("positive channel count"),
            var: Tensor::full([channels], F::one()).expect("positive channel count"),
        }
    }
}

struct BatchNormRule<F> {
    x: Var,
    gamma: Var,
    beta: Var,
    /// Per-channel 1/sqrt(var + eps) of the statistics actually used.
    inv_std: Vec<F>,
    mean: Vec<F>,
    train: bool,
}

fn dims(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2] * shape[3])
}

impl<F: Float> BackwardRule<F> for BatchNormRule<F> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let xv = ctx.value(self.x);
        let gamma = ctx.value(self.gamma).data();
        let (n, c, hw) = dims(xv.shape());
        let x = xv.data();
        let m = F::from_usize(n * hw).unwrap();

        let mut sum_dy = vec![F::zero(); c];
        let mut sum_dy_xhat = vec![F::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, is) = (self.mean[ch], self.inv_std[ch]);
                for i in base..base + hw {
                    sum_dy[ch] = sum_dy[ch] + grad_out[i];
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + grad_out[i] * (x[i] - mu) * is;
                }
            }
        }

        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); x.len()];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let (mu, is) = (self.mean[ch], self.inv_std[ch]);
                    let scale = gamma[ch] * is;
                    for i in base..base + hw {
                        dx[i] = if self.train {
                            let xhat = (x[i] - mu) * is;
                            scale * (grad_out[i] - sum_dy[ch] / m - xhat * sum_dy_xhat[ch] / m)
                        } else {
                            scale * grad_out[i]
                        };
                    }
                }
            }
            dx
        });
        Ok(vec![
            dx,
            needs[1].then(|| sum_dy_xhat.clone()),
            needs[2].then(|| sum_dy.clone()),
        ])
    }
}

impl<F: Float> Tape<F> {
    /// Batch normalization over NCHW input. Train mode normalizes with batch statistics
    /// and folds them into `running` with the spec momentum; eval mode uses `running`.
    pub fn batch_norm2d(
        &mut self,
        spec: &BatchNorm2dSpec,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<F>,
        train: bool,
    ) -> Result<Var> {
        spec.validate()?;
        let xv = self.value(x)?;
        let shape = xv.shape().to_vec();
        if shape.len() != 4 || shape[1] != spec.channels {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm2d",
                lhs: shape,
                rhs: vec![spec.channels],
            });
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v)? != [spec.channels] {
                return Err(TensorError::InvalidArgument {
                    op: "batch_norm2d",
                    msg: format!("{name} must have shape [{}]", spec.channels),
                });
            }
        }
        let (n, c, hw) = dims(&shape);
        let m = n * hw;
        let eps = F::from_f64_lossy(spec.eps);
        let x_data = self.value(x)?.data();

        let (mean, var) = if train {
            if m < 2 {
                return Err(TensorError::InvalidArgument {
                    op: "batch_norm2d",
                    msg: format!("batch×H×W = {m} < 2, variance undefined"),
                });
            }
            let mf = F::from_usize(m).unwrap();
            let mut mean = vec![F::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    mean[ch] = mean[ch] + x_data[base..base + hw].iter().copied().sum::<F>();
                }
            }
            mean.iter_mut().for_each(|v| *v = *v / mf);
            let mut var = vec![F::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let mu = mean[ch];
                    var[ch] = var[ch]
                        + x_data[base..base + hw]
                            .iter()
                            .map(|&v| (v - mu) * (v - mu))
                            .sum::<F>();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / mf);
            (mean, var)
        } else {
            (running.mean.data().to_vec(), running.var.data().to_vec())
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();

        let g = self.value(gamma)?.data();
        let b = self.value(beta)?.data();
        let mut out = vec![F::zero(); x_data.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                for i in base..base + hw {
                    out[i] = (x_data[i] - mu) * is * gg + bb;
                }
            }
        }

        if train {
            let mom = F::from_f64_lossy(spec.momentum);
            let unbias = F::from_usize(m).unwrap() / F::from_usize(m - 1).unwrap();
            for ch in 0..c {
                let rm = &mut running.mean.data_mut()[ch];
                *rm = (F::one() - mom) * *rm + mom * mean[ch];
                let rv = &mut running.var.data_mut()[ch];
                *rv = (F::one() - mom) * *rv + mom * var[ch] * unbias;
            }
        }

        self.record(
            "batch_norm2d",
            shape,
            out,
            BatchNormRule {
                x,
                gamma,
                beta,
                inv_std,
                mean,
                train,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_twice_channels() {
        assert_eq!(BatchNorm2dSpec::new(64).param_count(), 128);
    }

    #[test]
    fn train_mode_needs_two_values_per_channel() {
        let spec = BatchNorm2dSpec::new(2);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 1, 1]).unwrap());
        let g = tape.constant(Tensor::full([2], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros([2]).unwrap());
        let mut rs = RunningStats::new(2);
        assert!(tape.batch_norm2d(&spec, x, g, b, &mut rs, true).is_err());
        assert!(tape.batch_norm2d(&spec, x, g, b, &mut rs, false).is_ok());
    }

    #[test]
    fn normalized_input_passes_through() {
        // Each channel holds {-1, 1} repeated: zero mean, unit (biased) variance.
        let spec = BatchNorm2dSpec::new(2);
        let data: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([2, 2, 2, 2], data.clone()).unwrap());
        let g = tape.constant(Tensor::full([2], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros([2]).unwrap());
        let mut rs = RunningStats::new(2);
        let y = tape.batch_norm2d(&spec, x, g, b, &mut rs, true).unwrap();
        let diff = tape
            .value(y)
            .unwrap()
            .data()
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-5, "{diff}");
        // momentum 0.1 applied to mean 0 and unbiased variance 8/7
        assert!(rs.mean.data().iter().all(|&v| v == 0.0));
        assert!((rs.var.data()[0] - (0.9 + 0.1 * 8.0 / 7.0)).abs() < 1e-12);
    }
}

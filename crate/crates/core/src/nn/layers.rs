use candle_core::{Tensor, Var, D};

use super::unfold::{col2im, im2col, Geometry};
use super::{Mode, ParamStore, INIT_STD, LEAKY_SLOPE};
use crate::error::{Error, Result};

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// 2-D convolution with (possibly asymmetric) zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    pad_before: usize,
    pad_after: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_before: usize,
        pad_after: usize,
    ) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            INIT_STD,
        )?;
        let bias = store.constant(&format!("{name}.bias"), &[out_channels], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            pad_before,
            pad_after,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    /// Output spatial size for an input of `size`.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let padded = size + self.pad_before + self.pad_after;
        padded
            .checked_sub(self.kernel())
            .map(|v| v / self.stride + 1)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "Conv2d",
                format!("{} input channels", self.in_channels()),
                c,
            ));
        }
        let (b, _, h, w) = x.dims4()?;
        let (out_h, out_w) = match (self.output_size(h), self.output_size(w)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "Conv2d",
                    format!("input of at least {} pixels", self.kernel()),
                    h.min(w),
                ))
            }
        };
        let k = self.kernel();
        let g = Geometry {
            batch: b,
            channels: c,
            height: h,
            width: w,
            out_h,
            out_w,
            kernel: k,
            stride: self.stride,
            pad: self.pad_before,
        };
        let o = self.out_channels();
        let y = self
            .weight
            .reshape((o, c * k * k))?
            .matmul(&im2col(x, g)?)?
            .reshape((o, b, out_h, out_w))?
            .transpose(0, 1)?;
        let b = self.bias.reshape((1, self.out_channels(), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Transposed convolution; output size `(in - 1) * stride - 2 * padding + kernel + output_padding`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
            INIT_STD,
        )?;
        let bias = store.constant(&format!("{name}.bias"), &[out_channels], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "ConvTranspose2d",
                format!("{} input channels", self.in_channels()),
                c,
            ));
        }
        let (b, _, h, w) = x.dims4()?;
        let k = self.weight.dim(2)?;
        let size = |n: usize| {
            ((n - 1) * self.stride + k + self.output_padding).checked_sub(2 * self.padding)
        };
        let (out_h, out_w) = match (size(h), size(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => return Err(Error::shape("ConvTranspose2d", "positive output size", 0)),
        };
        let g = Geometry {
            batch: b,
            channels: self.out_channels(),
            height: out_h,
            width: out_w,
            out_h: h,
            out_w: w,
            kernel: k,
            stride: self.stride,
            pad: self.padding,
        };
        let xm = x.transpose(0, 1)?.contiguous()?.reshape((c, b * h * w))?;
        let cols = self
            .weight
            .reshape((c, self.out_channels() * k * k))?
            .t()?
            .matmul(&xm)?;
        let y = col2im(&cols, g)?;
        let b = self.bias.reshape((1, self.out_channels(), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[out_features, in_features],
            INIT_STD,
        )?;
        let bias = store.constant(&format!("{name}.bias"), &[out_features], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    /// `x: [B, in] -> [B, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(D::Minus1)?;
        if n != self.in_features() {
            return Err(Error::shape(
                "Linear",
                format!("{} features", self.in_features()),
                n,
            ));
        }
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Batch normalization over `[B, C, H, W]` with learned affine parameters.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered
                    .sqr()?
                    .mean_keepdim(0)?
                    .mean_keepdim(2)?
                    .mean_keepdim(3)?;
                let n = (b * h * w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let batch_mean = mean.detach().flatten_all()?;
                let batch_var = (var.detach().flatten_all()? * unbiased)?;
                let rm = ((self.running_mean.as_detached_tensor() * (1.0 - BN_MOMENTUM))?
                    + (batch_mean * BN_MOMENTUM)?)?;
                let rv = ((self.running_var.as_detached_tensor() * (1.0 - BN_MOMENTUM))?
                    + (batch_var * BN_MOMENTUM)?)?;
                self.running_mean.set(&rm)?;
                self.running_var.set(&rv)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_detached_tensor().reshape(shape)?,
                self.running_var.as_detached_tensor().reshape(shape)?,
            ),
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

/// Lookup table of learned row vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    table: Var,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: store.normal(&format!("{name}.table"), &[rows, dim], INIT_STD)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dims()[1]
    }

    pub fn table(&self) -> &Var {
        &self.table
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        let rows = self.table.dims()[0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "embedding index {bad} >= {rows}"
            )));
        }
        let idx: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
        let idx = Tensor::from_vec(idx, ids.len(), self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn conv_output_sizes() {
        let mut s = ParamStore::new(DType::F32, 0);
        let c = Conv2d::new(&mut s, "c", 3, 4, 5, 2, 2, 2).unwrap();
        assert_eq!(c.output_size(128), Some(64));
        let c = Conv2d::new(&mut s, "d", 3, 4, 4, 1, 1, 2).unwrap();
        assert_eq!(c.output_size(16), Some(16));
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, s.device()).unwrap();
        assert_eq!(c.forward(&x).unwrap().dims(), &[2, 4, 16, 16]);
    }

    #[test]
    fn transposed_conv_matches_direct_op() {
        let mut s = ParamStore::new(DType::F64, 3);
        for &(k, st, p, op) in &[
            (4usize, 2usize, 1usize, 0usize),
            (5, 2, 2, 1),
            (3, 1, 1, 0),
            (4, 1, 0, 0),
        ] {
            let t = ConvTranspose2d::new(&mut s, &format!("t{k}{st}{p}{op}"), 3, 5, k, st, p, op)
                .unwrap();
            let x = Var::from_tensor(&Tensor::randn(0f64, 1., (2, 3, 5, 5), s.device()).unwrap())
                .unwrap();
            let ours = t.forward(&x).unwrap();
            let direct = x
                .conv_transpose2d(&t.weight, p, op, st, 1)
                .unwrap()
                .broadcast_add(&t.bias.reshape((1, 5, 1, 1)).unwrap())
                .unwrap();
            assert_eq!(ours.dims(), direct.dims());
            let d: f64 = (&ours - &direct)
                .unwrap()
                .abs()
                .unwrap()
                .flatten_all()
                .unwrap()
                .max(0)
                .unwrap()
                .to_scalar()
                .unwrap();
            assert!(d < 1e-10);
            let probe = Tensor::randn(0f64, 1., ours.shape(), s.device()).unwrap();
            let ga = (ours * &probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap();
            let gb = (direct * &probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap();
            for v in [x.as_tensor(), t.weight.as_tensor()] {
                let d: f64 = (ga.get(v).unwrap() - gb.get(v).unwrap())
                    .unwrap()
                    .abs()
                    .unwrap()
                    .flatten_all()
                    .unwrap()
                    .max(0)
                    .unwrap()
                    .to_scalar()
                    .unwrap();
                assert!(d < 1e-9);
            }
        }
    }

    #[test]
    fn batch_norm_train_mode_normalizes() {
        let mut s = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm2d::new(&mut s, "bn", 2).unwrap();
        let x = Tensor::randn(3.0f64, 2.0, (4, 2, 3, 3), s.device()).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let m: f64 = y.mean_all().unwrap().to_scalar().unwrap();
        assert!(m.abs() < 1e-9);
        let rm: Vec<f64> = s.buffers()["bn.running_mean"].to_vec1().unwrap();
        assert!(rm.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn leaky_relu_slope() {
        let x = Tensor::new(&[-1.0f64, 2.0], &candle_core::Device::Cpu).unwrap();
        assert_eq!(
            leaky_relu(&x).unwrap().to_vec1::<f64>().unwrap(),
            vec![-0.2, 2.0]
        );
        let s = sigmoid(&Tensor::new(&[0.0f64], &candle_core::Device::Cpu).unwrap()).unwrap();
        assert_eq!(s.to_vec1::<f64>().unwrap(), vec![0.5]);
    }
}

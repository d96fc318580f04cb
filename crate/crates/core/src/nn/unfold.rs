//! Patch extraction (`im2col`) and its adjoint (`col2im`) as custom ops, so that
//! convolutions and their gradients reduce to matrix products.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

/// Sliding-window geometry: a `[batch, channels, height, width]` image and an
/// `out_h x out_w` grid of `kernel x kernel` windows placed every `stride` pixels,
/// starting `pad` pixels before the image origin. Out-of-image taps read as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    fn image_len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Input coordinate of grid position `o` and tap `k`, if inside the image.
    fn tap(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad)
            .filter(|&i| i < size)
    }

    fn im2col<T: WithDType>(&self, img: &[T]) -> Vec<T> {
        let (k, l) = (self.kernel, self.out_h * self.out_w);
        let mut out = vec![T::zero(); self.rows() * self.cols()];
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * self.cols();
                    for b in 0..self.batch {
                        let plane = (b * self.channels + c) * self.height * self.width;
                        for oh in 0..self.out_h {
                            let Some(ih) = self.tap(oh, ki, self.height) else {
                                continue;
                            };
                            let dst = row + b * l + oh * self.out_w;
                            let src = plane + ih * self.width;
                            for ow in 0..self.out_w {
                                if let Some(iw) = self.tap(ow, kj, self.width) {
                                    out[dst + ow] = img[src + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im<T: WithDType>(&self, cols: &[T]) -> Vec<T> {
        let (k, l) = (self.kernel, self.out_h * self.out_w);
        let mut out = vec![T::zero(); self.image_len()];
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * self.cols();
                    for b in 0..self.batch {
                        let plane = (b * self.channels + c) * self.height * self.width;
                        for oh in 0..self.out_h {
                            let Some(ih) = self.tap(oh, ki, self.height) else {
                                continue;
                            };
                            let src = row + b * l + oh * self.out_w;
                            let dst = plane + ih * self.width;
                            for ow in 0..self.out_w {
                                if let Some(iw) = self.tap(ow, kj, self.width) {
                                    out[dst + iw] += cols[src + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn contiguous<'a, T>(
    data: &'a [T],
    layout: &Layout,
    len: usize,
    op: &str,
) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) if end - start == len => Ok(&data[start..end]),
        _ => Err(candle_core::Error::Msg(format!(
            "{op}: expected a contiguous input of {len} elements"
        ))),
    }
}

/// `[B, C, H, W]` image to `[C * k * k, B * out_h * out_w]` patch matrix.
pub struct Im2Col(pub Geometry);

/// Adjoint of [`Im2Col`]: scatter-adds a patch matrix back onto the image grid.
pub struct Col2Im(pub Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let n = g.image_len();
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(g.im2col(contiguous(d, layout, n, "im2col")?)),
            CpuStorage::F64(d) => CpuStorage::F64(g.im2col(contiguous(d, layout, n, "im2col")?)),
            _ => {
                return Err(candle_core::Error::Msg(
                    "im2col supports f32 and f64 only".into(),
                ))
            }
        };
        Ok((out, Shape::from((g.rows(), g.cols()))))
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        col2im(&grad.contiguous()?, self.0).map(Some)
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let n = g.rows() * g.cols();
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(g.col2im(contiguous(d, layout, n, "col2im")?)),
            CpuStorage::F64(d) => CpuStorage::F64(g.col2im(contiguous(d, layout, n, "col2im")?)),
            _ => {
                return Err(candle_core::Error::Msg(
                    "col2im supports f32 and f64 only".into(),
                ))
            }
        };
        Ok((out, Shape::from((g.batch, g.channels, g.height, g.width))))
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        im2col(&grad.contiguous()?, self.0).map(Some)
    }
}

pub fn im2col(x: &Tensor, g: Geometry) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Im2Col(g))
}

pub fn col2im(x: &Tensor, g: Geometry) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Col2Im(g))
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device, Var};

    use super::*;

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let dev = Device::Cpu;
        for &(h, k, s, p) in &[
            (9usize, 3usize, 1usize, 1usize),
            (8, 4, 2, 1),
            (7, 5, 2, 2),
            (6, 3, 3, 0),
        ] {
            let x =
                Var::from_tensor(&Tensor::randn(0f64, 1., (2, 3, h, h), &dev).unwrap()).unwrap();
            let w =
                Var::from_tensor(&Tensor::randn(0f64, 1., (4, 3, k, k), &dev).unwrap()).unwrap();
            let oh = (h + 2 * p - k) / s + 1;
            let g = Geometry {
                batch: 2,
                channels: 3,
                height: h,
                width: h,
                out_h: oh,
                out_w: oh,
                kernel: k,
                stride: s,
                pad: p,
            };
            let ours = w
                .reshape((4, 3 * k * k))
                .unwrap()
                .matmul(&im2col(&x, g).unwrap())
                .unwrap()
                .reshape((4, 2, oh, oh))
                .unwrap()
                .transpose(0, 1)
                .unwrap();
            let direct = x.conv2d(&w, p, s, 1, 1).unwrap();
            assert!(max_diff(&ours, &direct) < 1e-10);

            let probe = Tensor::randn(0f64, 1., direct.shape(), &dev).unwrap();
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
            for v in [&x, &w] {
                assert!(max_diff(ga.get(v).unwrap(), gb.get(v).unwrap()) < 1e-9);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let dev = Device::Cpu;
        let g = Geometry {
            batch: 2,
            channels: 2,
            height: 5,
            width: 5,
            out_h: 3,
            out_w: 3,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = Tensor::randn(0f64, 1., (2, 2, 5, 5), &dev).unwrap();
        let y = Tensor::randn(0f64, 1., (18, 18), &dev).unwrap();
        let lhs = (im2col(&x, g).unwrap() * &y)
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let rhs = (col2im(&y, g).unwrap() * &x)
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!(
            im2col(&x.to_dtype(DType::F32).unwrap(), g).unwrap().dims(),
            &[18, 18]
        );
    }
}

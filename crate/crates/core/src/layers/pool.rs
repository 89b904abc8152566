use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max-pooling over `[batch, maps, h, w]`; gradient flows to the arg-max,
/// first index in row-major order on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Dimension("pool size and stride must be positive".into()));
        }
        Ok(Self { size, stride, cache: None })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.size > h || self.size > w {
            return Err(Error::Dimension(format!("pool {} exceeds input {h}×{w}", self.size)));
        }
        Ok(((h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1))
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let &[b, m, h, w] = x.shape() else {
            return Err(Error::Dimension(format!("pool input {:?} is not 4-D", x.shape())));
        };
        let (oh, ow) = self.output_hw(h, w)?;
        let mut out = vec![0.0; b * m * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..b * m {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.size {
                        for kx in 0..self.size {
                            let idx = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if x.data()[idx] > x.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = x.data()[best];
                    arg[o] = best;
                }
            }
        }
        self.cache = train.then(|| (arg, x.shape().to_vec()));
        Tensor::new(vec![b, m, oh, ow], out)
    }

    pub fn backward(&mut self, grad_y: &Tensor) -> Result<Tensor> {
        let (arg, shape) =
            self.cache.take().ok_or_else(|| Error::State("pool backward without forward".into()))?;
        if grad_y.len() != arg.len() {
            return Err(Error::Dimension(format!("pool gradient {:?}", grad_y.shape())));
        }
        let mut gx = Tensor::zeros(&shape);
        for (&i, &g) in arg.iter().zip(grad_y.data()) {
            gx.data_mut()[i] += g;
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_pool() {
        let x = Tensor::new(
            vec![1, 1, 4, 4],
            vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16.],
        )
        .unwrap();
        let mut p = MaxPool::new(2, 2).unwrap();
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[6., 8., 14., 16.]);
        let g = p.backward(&Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap()).unwrap();
        let mut expected = vec![0.0; 16];
        expected[5] = 1.;
        expected[7] = 2.;
        expected[13] = 3.;
        expected[15] = 4.;
        assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn tie_goes_to_first_index() {
        let x = Tensor::full(&[1, 1, 2, 2], 3.0);
        let mut p = MaxPool::new(2, 2).unwrap();
        p.forward(&x, true).unwrap();
        let g = p.backward(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_needs_forward() {
        let mut p = MaxPool::new(2, 2).unwrap();
        assert!(matches!(p.backward(&Tensor::zeros(&[1, 1, 1, 1])), Err(Error::State(_))));
    }
}

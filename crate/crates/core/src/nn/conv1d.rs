//! Strided 1-D convolution via im2col, for the waveform backbone.

use ndarray::{Array2, Array3, Axis, Ix1, Ix2};
use rand::Rng;

use crate::scalar::Scalar;

use super::{scoped, Net, Param};

#[derive(Debug, Clone)]
pub struct Conv1d<S> {
    /// (in_ch * kernel, out_ch)
    pub w: Param<S>,
    pub b: Param<S>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

pub struct Conv1dCache<S> {
    /// (batch * t_out, in_ch * kernel)
    cols: Array2<S>,
    t_in: usize,
    t_out: usize,
    batch: usize,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv1d {
            w: Param::uniform(&[fan_in, out_ch], bound, rng),
            b: Param::uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn t_out(&self, t_in: usize) -> usize {
        assert!(t_in >= self.kernel, "input shorter than kernel");
        (t_in - self.kernel) / self.stride + 1
    }

    /// x: (batch, in_ch, t_in) -> (batch, out_ch, t_out), valid padding.
    pub fn forward(&self, x: &Array3<S>) -> (Array3<S>, Conv1dCache<S>) {
        let (batch, in_ch, t_in) = x.dim();
        assert_eq!(in_ch, self.in_ch);
        let t_out = self.t_out(t_in);

        let mut cols = Array2::<S>::zeros((batch * t_out, self.in_ch * self.kernel));
        {
            let xs = x.as_slice().expect("standard layout");
            let cs = cols.as_slice_mut().unwrap();
            let row_w = self.in_ch * self.kernel;
            for bi in 0..batch {
                let xb = &xs[bi * in_ch * t_in..(bi + 1) * in_ch * t_in];
                for t in 0..t_out {
                    let dst = &mut cs[(bi * t_out + t) * row_w..(bi * t_out + t + 1) * row_w];
                    let start = t * self.stride;
                    for c in 0..in_ch {
                        dst[c * self.kernel..(c + 1) * self.kernel]
                            .copy_from_slice(&xb[c * t_in + start..c * t_in + start + self.kernel]);
                    }
                }
            }
        }

        let mut y2 = cols.dot(&self.w.v2());
        y2 += &self.b.v1();

        let mut y = Array3::<S>::zeros((batch, self.out_ch, t_out));
        {
            let ys = y.as_slice_mut().unwrap();
            let y2s = y2.as_slice().unwrap();
            for bi in 0..batch {
                for t in 0..t_out {
                    let src = &y2s[(bi * t_out + t) * self.out_ch..(bi * t_out + t + 1) * self.out_ch];
                    for (oc, &v) in src.iter().enumerate() {
                        ys[bi * self.out_ch * t_out + oc * t_out + t] = v;
                    }
                }
            }
        }
        (y, Conv1dCache { cols, t_in, t_out, batch })
    }

    /// Accumulates dW, db; returns dx of shape (batch, in_ch, t_in).
    pub fn backward(&mut self, cache: &Conv1dCache<S>, dy: &Array3<S>) -> Array3<S> {
        let (batch, t_in, t_out) = (cache.batch, cache.t_in, cache.t_out);
        let mut dy2 = Array2::<S>::zeros((batch * t_out, self.out_ch));
        {
            let ds = dy.as_slice().expect("standard layout");
            let d2 = dy2.as_slice_mut().unwrap();
            for bi in 0..batch {
                for oc in 0..self.out_ch {
                    let src = &ds[bi * self.out_ch * t_out + oc * t_out..][..t_out];
                    for (t, &v) in src.iter().enumerate() {
                        d2[(bi * t_out + t) * self.out_ch + oc] = v;
                    }
                }
            }
        }

        {
            let mut gw = self.w.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gw += &cache.cols.t().dot(&dy2);
            let mut gb = self.b.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &dy2.sum_axis(Axis(0));
        }

        let dcols = dy2.dot(&self.w.v2().t());
        let mut dx = Array3::<S>::zeros((batch, self.in_ch, t_in));
        {
            let dxs = dx.as_slice_mut().unwrap();
            let dcs = dcols.as_slice().unwrap();
            let row_w = self.in_ch * self.kernel;
            for bi in 0..batch {
                let xb = &mut dxs[bi * self.in_ch * t_in..(bi + 1) * self.in_ch * t_in];
                for t in 0..t_out {
                    let src = &dcs[(bi * t_out + t) * row_w..(bi * t_out + t + 1) * row_w];
                    let start = t * self.stride;
                    for c in 0..self.in_ch {
                        let dst = &mut xb[c * t_in + start..c * t_in + start + self.kernel];
                        for (d, &v) in dst.iter_mut().zip(&src[c * self.kernel..(c + 1) * self.kernel]) {
                            *d += v;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<S: Scalar> Net<S> for Conv1d<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&scoped(prefix, "w"), &mut self.w);
        f(&scoped(prefix, "b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, RngSeed};
    use ndarray::array;

    #[test]
    fn known_convolution() {
        let mut rng = stream(RngSeed(1), "conv", &[], &[]);
        let mut conv = Conv1d::<f64>::new(1, 1, 2, 2, &mut rng);
        conv.w.value.assign(&array![[1.0], [2.0]].into_dyn());
        conv.b.value.assign(&array![0.0].into_dyn());
        let x = Array3::from_shape_vec((1, 1, 6), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, _) = conv.forward(&x);
        // windows (1,2), (3,4), (5,6) with taps (1,2)
        assert_eq!(y.as_slice().unwrap(), &[5.0, 11.0, 17.0]);
    }

    #[test]
    fn output_length_and_backward_shape() {
        let mut rng = stream(RngSeed(2), "conv", &[], &[]);
        let mut conv = Conv1d::<f64>::new(3, 5, 4, 3, &mut rng);
        let x = Array3::from_shape_fn((2, 3, 20), |(b, c, t)| (b + c + t) as f64 * 0.01);
        let (y, cache) = conv.forward(&x);
        assert_eq!(y.dim(), (2, 5, 6));
        let dx = conv.backward(&cache, &y);
        assert_eq!(dx.dim(), x.dim());
    }
}

//! Pointwise arithmetic, activations and reductions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, &[a, b], |args| {
            vec![
                args.needs[0].then(|| args.grad.clone()),
                args.needs[1].then(|| args.grad.clone()),
            ]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, &[a, b], |args| {
            vec![
                args.needs[0].then(|| args.grad.clone()),
                args.needs[1].then(|| args.grad.map(|g| -g)),
            ]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, &[a, b], |args| {
            vec![
                args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y)),
                args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x)),
            ]
        }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(out, &[a, b], |args| {
            vec![
                args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g / y)),
                args.needs[1].then(|| {
                    let gy = args.grad.zip_map(args.output, |g, q| g * q);
                    gy.zip_map(args.inputs[1], |v, y| -v / y)
                }),
            ]
        }))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, &[x], move |args| vec![Some(args.grad.map(|g| g * c))])
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, &[x], |args| vec![Some(args.grad.clone())])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("scale_by", format!("scale must be one element, got {:?}", self.shape(s))));
        }
        let c = self.value(s).item();
        let out = self.value(x).map(|v| v * c);
        Ok(self.push(out, &[x, s], |args| {
            let c = args.inputs[1].item();
            vec![
                args.needs[0].then(|| args.grad.map(|g| g * c)),
                args.needs[1].then(|| Tensor::scalar(args.grad.dot(args.inputs[0]))),
            ]
        }))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / v);
        self.push(out, &[x], |args| vec![Some(args.grad.zip_map(args.output, |g, r| -g * r * r))])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, &[x], |args| {
            vec![Some(args.grad.zip_map(args.inputs[0], |g, v| g * (v + v)))]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, &[x], |args| {
            vec![Some(args.grad.zip_map(args.inputs[0], |g, v| if v > T::zero() { g } else { T::zero() }))]
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::lit(GELU_C);
        let a = T::lit(0.044715);
        let half = T::lit(0.5);
        let out = self.value(x).map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.push(out, &[x], move |args| {
            vec![Some(args.grad.zip_map(args.inputs[0], |g, v| {
                let u = c * (v + a * v * v * v);
                let t = u.tanh();
                let du = c * (T::one() + T::lit(3.0) * a * v * v);
                g * (half * (T::one() + t) + half * v * (T::one() - t * t) * du)
            }))]
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, &[x], |args| {
            vec![Some(args.grad.zip_map(args.output, |g, s| g * s * (T::one() - s)))]
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, &[x], |args| vec![Some(args.grad.zip_map(args.inputs[0], |g, v| g * sigmoid(v)))])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, &[x], |args| {
            let g = args.grad.item();
            vec![Some(Tensor::full(args.inputs[0].shape().to_vec(), g))]
        })
    }

    /// Squared Frobenius norm `Σ x²`.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.dot(v));
        self.push(out, &[x], |args| {
            let g = args.grad.item();
            let two = g + g;
            vec![Some(args.inputs[0].map(|v| two * v))]
        })
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(v: T) -> T {
    // ln(1+e^v) = max(v,0) + ln(1+e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}

//! Matrix products.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::Tensor;

/// Extents of `op(x)` for a `rows×cols` operand.
fn op_dims(shape: &[usize], trans: bool) -> (usize, usize) {
    if trans { (shape[1], shape[0]) } else { (shape[0], shape[1]) }
}

impl<T: Scalar> Graph<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` for rank-2 operands, `op` being an optional transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim("matmul", format!("rank-2 operands required, got {sa:?} and {sb:?}")));
        }
        let (m, k) = op_dims(&sa, ta);
        let (k2, n) = op_dims(&sb, tb);
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner extents {k} vs {k2} ({sa:?}, {sb:?})")));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(self.value(a).data(), ta, self.value(b).data(), tb, m, k, n, out.data_mut(), false);
        Ok(self.push(out, &[a, b], move |args| {
            let (av, bv, g) = (args.inputs[0], args.inputs[1], args.grad.data());
            // C = op(A) op(B): dop(A) = G op(B)ᵀ, dop(B) = op(A)ᵀ G
            let da = args.needs[0].then(|| {
                let mut d = Tensor::zeros(av.shape().to_vec());
                if ta {
                    // dA = op(B) Gᵀ  (k×n · n×m)
                    gemm(bv.data(), tb, g, true, k, n, m, d.data_mut(), false);
                } else {
                    gemm(g, false, bv.data(), !tb, m, n, k, d.data_mut(), false);
                }
                d
            });
            let db = args.needs[1].then(|| {
                let mut d = Tensor::zeros(bv.shape().to_vec());
                if tb {
                    // dB = Gᵀ op(A)  (n×m · m×k)
                    gemm(g, true, av.data(), ta, n, m, k, d.data_mut(), false);
                } else {
                    gemm(av.data(), !ta, g, false, k, m, n, d.data_mut(), false);
                }
                d
            });
            vec![da, db]
        }))
    }

    /// Batched `op(a[i])·op(b[i])` over the leading axis of rank-3 operands.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", format!("{sa:?} vs {sb:?}")));
        }
        let batch = sa[0];
        let (m, k) = op_dims(&sa[1..], ta);
        let (k2, n) = op_dims(&sb[1..], tb);
        if k != k2 {
            return Err(Error::dim("bmm", format!("inner extents {k} vs {k2}")));
        }
        let (la, lb, lc) = (sa[1] * sa[2], sb[1] * sb[2], m * n);
        let mut out = Tensor::zeros(vec![batch, m, n]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for (i, c) in out.data_mut().chunks_mut(lc).enumerate() {
                gemm(&av[i * la..(i + 1) * la], ta, &bv[i * lb..(i + 1) * lb], tb, m, k, n, c, false);
            }
        }
        Ok(self.push(out, &[a, b], move |args| {
            let (av, bv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let da = args.needs[0].then(|| {
                let mut d = Tensor::zeros(args.inputs[0].shape().to_vec());
                for (i, di) in d.data_mut().chunks_mut(la).enumerate() {
                    let (bi, gi) = (&bv[i * lb..(i + 1) * lb], &g[i * lc..(i + 1) * lc]);
                    if ta {
                        gemm(bi, tb, gi, true, k, n, m, di, false);
                    } else {
                        gemm(gi, false, bi, !tb, m, n, k, di, false);
                    }
                }
                d
            });
            let db = args.needs[1].then(|| {
                let mut d = Tensor::zeros(args.inputs[1].shape().to_vec());
                for (i, di) in d.data_mut().chunks_mut(lb).enumerate() {
                    let (ai, gi) = (&av[i * la..(i + 1) * la], &g[i * lc..(i + 1) * lc]);
                    if tb {
                        gemm(gi, true, ai, ta, n, m, k, di, false);
                    } else {
                        gemm(ai, !ta, gi, false, k, m, n, di, false);
                    }
                }
                d
            });
            vec![da, db]
        }))
    }
}

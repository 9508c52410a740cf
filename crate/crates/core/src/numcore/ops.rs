//! Forward rules for every primitive on the tape.

use super::graph::{bmm_dims, dims3, im2col, operand_strides, permute_runs, Graph, Op, Var};
use super::linalg::{gemm, Strides};
use super::tensor::axis_extents;
use super::{NumError, Tensor};

/// Epsilon added to the variance in layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NumError {
    NumError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), NumError> {
    if axis >= shape.len() {
        return Err(NumError::BadAxis {
            op,
            axis,
            ndim: shape.len(),
        });
    }
    Ok(())
}

impl Graph {
    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        self.batch_matmul(a, b, false, false)
    }

    /// Batched product over the leading axis of two rank-3 tensors (rank 2 is a
    /// batch of one), with optional transposition of either operand's trailing two axes.
    pub fn batch_matmul(
        &mut self,
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = bmm_dims(&sa, &sb, trans_a, trans_b)
            .ok_or_else(|| mismatch("batch_matmul", &sa, &sb))?;
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let (da3, db3) = (dims3(&sa), dims3(&sb));
            let str_a = operand_strides(da3[1], da3[2], trans_a);
            let str_b = operand_strides(db3[1], db3[2], trans_b);
            for t in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &av[t * m * k..],
                    str_a,
                    &bv[t * k * n..],
                    str_b,
                    0.0,
                    &mut out[t * m * n..],
                    Strides::row_major(n),
                );
            }
        }
        self.push(
            "batch_matmul",
            Tensor::from_vec(
                if sa.len() == 2 {
                    vec![m, n]
                } else {
                    vec![batch, m, n]
                },
                out,
            ),
            Op::BatchMatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
        )
    }

    /// Returns (larger, smaller) when the smaller shape is a trailing suffix of the larger.
    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var), NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (big, small) = if sa.len() >= sb.len() { (a, b) } else { (b, a) };
        let (sbig, ssmall) = (self.shape(big), self.shape(small));
        if ssmall.len() > sbig.len() || sbig[sbig.len() - ssmall.len()..] != *ssmall {
            return Err(mismatch(op, sa, sb));
        }
        Ok((big, small))
    }

    /// Elementwise sum; the lower-rank operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (big, small) = self.broadcast_pair("add", a, b)?;
        let bv = self.value(small).data();
        let nb = bv.len().max(1);
        let out: Vec<f64> = self
            .value(big)
            .data()
            .chunks(nb)
            .flat_map(|c| c.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(big).to_vec();
        self.push("add", Tensor::from_vec(shape, out), Op::Add(big, small))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (big, small) = self.broadcast_pair("mul", a, b)?;
        let bv = self.value(small).data();
        let nb = bv.len().max(1);
        let out: Vec<f64> = self
            .value(big)
            .data()
            .chunks(nb)
            .flat_map(|c| c.iter().zip(bv).map(|(x, y)| x * y))
            .collect();
        let shape = self.shape(big).to_vec();
        self.push("mul", Tensor::from_vec(shape, out), Op::Mul(big, small))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let v = self.value(a);
        let out = Tensor::from_vec(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect());
        self.push("scale", out, Op::Scale(a, c))
    }

    /// Add a constant scalar.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumError> {
        let first = inputs
            .first()
            .ok_or(NumError::EmptyInput { op: "concat" })?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut axis_len = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            axis_len += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_len;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let w = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * w..(o + 1) * w]);
            }
        }
        self.push(
            "concat",
            Tensor::from_vec(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Select rows (first-axis slices) of `table`.
    pub fn embedding_gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() {
            return Err(mismatch("embedding_gather", &shape, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(NumError::IndexOutOfRange {
                op: "embedding_gather",
                index: bad,
                len: shape[0],
            });
        }
        let row = shape[1..].iter().product::<usize>();
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&data[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        self.push(
            "embedding_gather",
            Tensor::from_vec(out_shape, out),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a);
        let out = Tensor::from_vec(
            v.shape().to_vec(),
            v.data().iter().map(|x| x.max(0.0)).collect(),
        );
        self.push("relu", out, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, n, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for q in 0..inner {
                let base = o * n * inner + q;
                let max = (0..n)
                    .map(|j| x[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (x[base + j * inner] - max).exp();
                    y[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    y[base + j * inner] /= sum;
                }
            }
        }
        self.push(
            "softmax",
            Tensor::from_vec(shape, y),
            Op::Softmax { input: a, axis },
        )
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        check_axis("log_softmax", &shape, axis)?;
        let (outer, n, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for q in 0..inner {
                let base = o * n * inner + q;
                let max = (0..n)
                    .map(|j| x[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + (0..n)
                        .map(|j| (x[base + j * inner] - max).exp())
                        .sum::<f64>()
                        .ln();
                for j in 0..n {
                    y[base + j * inner] = x[base + j * inner] - lse;
                }
            }
        }
        self.push(
            "log_softmax",
            Tensor::from_vec(shape, y),
            Op::LogSoftmax { input: a, axis },
        )
    }

    /// Log-softmax over consecutive segments of a rank-1 tensor; `groups` lists segment lengths.
    pub fn group_log_softmax(&mut self, a: Var, groups: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        let total: usize = groups.iter().sum();
        if shape.len() != 1 || total != shape[0] {
            return Err(mismatch("group_log_softmax", &shape, &[total]));
        }
        if groups.iter().any(|&g| g == 0) {
            return Err(NumError::EmptyInput {
                op: "group_log_softmax",
            });
        }
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        let mut start = 0;
        for &len in groups {
            let seg = &x[start..start + len];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + seg.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (dst, v) in y[start..start + len].iter_mut().zip(seg) {
                *dst = v - lse;
            }
            start += len;
        }
        self.push(
            "group_log_softmax",
            Tensor::from_vec(shape, y),
            Op::GroupLogSoftmax {
                input: a,
                groups: groups.to_vec(),
            },
        )
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a);
        let out = Tensor::from_vec(
            v.shape().to_vec(),
            v.data().iter().map(|x| x.ln()).collect(),
        );
        self.push("log", out, Op::Log(a))
    }

    /// `max(x, min)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, min: f64) -> Result<Var, NumError> {
        let v = self.value(a);
        let out = Tensor::from_vec(
            v.shape().to_vec(),
            v.data().iter().map(|x| x.max(min)).collect(),
        );
        self.push("clamp_min", out, Op::ClampMin { input: a, min })
    }

    /// Standardise along `axis` (no scale or shift).
    pub fn layer_norm(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        check_axis("layernorm", &shape, axis)?;
        let (outer, n, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let nf = n as f64;
        for o in 0..outer {
            for q in 0..inner {
                let base = o * n * inner + q;
                let mean = (0..n).map(|j| x[base + j * inner]).sum::<f64>() / nf;
                let var = (0..n)
                    .map(|j| {
                        let d = x[base + j * inner] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / nf;
                let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[o * inner + q] = s;
                for j in 0..n {
                    y[base + j * inner] = (x[base + j * inner] - mean) * s;
                }
            }
        }
        self.push(
            "layernorm",
            Tensor::from_vec(shape, y),
            Op::LayerNorm {
                input: a,
                axis,
                inv_std,
            },
        )
    }

    /// Inverted dropout. Identity when `p == 0` or the graph is not training.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::InvalidArgument(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if p == 0.0 || !self.is_training() {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.uniform() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(a);
        let out = Tensor::from_vec(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        self.push("dropout", out, Op::Dropout { input: a, mask })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(NumError::EmptyInput { op: "mean" });
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a))
    }

    /// Sum out one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, n, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = (o * n + j) * inner;
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(&x[src..src + inner])
                    .for_each(|(d, v)| *d += v);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push(
            "sum_axis",
            Tensor::from_vec(out_shape, out),
            Op::SumAxis { input: a, axis },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumError> {
        let v = self.value(a);
        if shape.iter().product::<usize>() != v.len() {
            return Err(mismatch("reshape", v.shape(), &shape));
        }
        let out = Tensor::from_vec(shape, v.data().to_vec());
        self.push("reshape", out, Op::Reshape(a))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(mismatch("permute", &shape, perm));
        }
        let (starts, run) = permute_runs(&shape, perm);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(x.len());
        for &s in &starts {
            out.extend_from_slice(&x[s..s + run]);
        }
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        self.push(
            "permute",
            Tensor::from_vec(out_shape, out),
            Op::Permute {
                input: a,
                perm: perm.to_vec(),
            },
        )
    }

    /// Unpadded 1-D convolution over channels-last input `[batch, steps, c_in]`
    /// with weight `[kernel * c_in, c_out]`. Output `[batch, (steps - kernel) / stride + 1, c_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
    ) -> Result<Var, NumError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if kernel == 0 || stride == 0 {
            return Err(NumError::InvalidArgument(
                "conv1d kernel and stride must be positive".into(),
            ));
        }
        if sx.len() != 3 || sw.len() != 2 || sw[0] != kernel * sx[2] || sx[1] < kernel {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let (b, t_in, c_in) = (sx[0], sx[1], sx[2]);
        let c_out = sw[1];
        let t_out = (t_in - kernel) / stride + 1;
        let width = kernel * c_in;
        let cols = im2col(self.value(x).data(), b, t_in, c_in, t_out, kernel, stride);
        let mut out = vec![0.0; b * t_out * c_out];
        gemm(
            b * t_out,
            width,
            c_out,
            1.0,
            &cols,
            Strides::row_major(width),
            self.value(w).data(),
            Strides::row_major(c_out),
            0.0,
            &mut out,
            Strides::row_major(c_out),
        );
        self.push(
            "conv1d",
            Tensor::from_vec(vec![b, t_out, c_out], out),
            Op::Conv1d {
                input: x,
                weight: w,
                kernel,
                stride,
            },
        )
    }
}

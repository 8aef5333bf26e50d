use crate::error::{IqtError, Result};

use super::{matmul_into, Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Relu(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Transpose(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Row {
        x: usize,
        index: usize,
    },
    Sum(usize),
    Mean(usize),
    Square(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, so the tape is topologically sorted
/// by construction and `backward` is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that is treated as data.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        if cfg!(debug_assertions) && inputs.iter().all(|&i| self.nodes[i].value.is_finite()) {
            assert!(
                value.is_finite(),
                "non-finite output from {:?} on finite inputs",
                std::mem::discriminant(&op)
            );
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(IqtError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a length-`D` row vector to every row of an `M×D` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, d) = self.value(a).dims2()?;
        if self.value(row).numel() != d {
            return Err(IqtError::shape("add_row", self.shape(a), self.shape(row)));
        }
        let bias = self.value(row).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(d) {
            for (o, &b) in chunk.iter_mut().zip(bias) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddRow(a.0, row.0), &[a.0, row.0]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a.0, c), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a.0), &[a.0])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::from_usize(t.numel()).expect("count fits");
        let s: T = t.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a.0), &[a.0])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(IqtError::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let out = softmax_along(self.value(x), axis);
        Ok(self.push(out, Op::Softmax { x: x.0, axis }, &[x.0]))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(IqtError::Contract("layer_norm eps must be positive".into()));
        }
        let xs = self.value(x);
        let d = *xs.shape().last().expect("non-empty shape");
        if self.value(gamma).numel() != d {
            return Err(IqtError::shape("layer_norm", xs.shape(), self.shape(gamma)));
        }
        if self.value(beta).numel() != d {
            return Err(IqtError::shape("layer_norm", xs.shape(), self.shape(beta)));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let dn = T::from_usize(d).expect("width fits");
        let rows = xs.numel() / d;
        let mut out = vec![T::zero(); xs.numel()];
        let mut xhat = vec![T::zero(); xs.numel()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xs.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mu) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(xs.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a.0), &[a.0]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if len == 0 || start + len > c {
            return Err(IqtError::Contract(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], out)?;
        Ok(self.push(out, Op::SliceCols { x: a.0, start }, &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| IqtError::Contract("concat of zero tensors".into()))?;
        let (r, _) = self.value(first).dims2()?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(IqtError::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], out)?;
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| IqtError::Contract("concat of zero tensors".into()))?;
        let (_, c) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(IqtError::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, c], out)?;
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Row `index` of a matrix as a `1×D` matrix.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if index >= r {
            return Err(IqtError::Contract(format!("row {index} out of range for {r} rows")));
        }
        let out = Tensor::new(vec![1, c], self.value(a).row(index).to_vec())?;
        Ok(self.push(out, Op::Row { x: a.0, index }, &[a.0]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(IqtError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.needs_grad).map(|g| {
                    Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let mut acc = |target: usize, contrib: Vec<T>| {
            if !self.nodes[target].needs_grad {
                return;
            }
            match &mut grads[target] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e = *e + c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |i: usize| &self.nodes[i].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("matrix");
                let (_, p) = val(*b).dims2().expect("matrix");
                if self.nodes[*a].needs_grad {
                    // dA = G · Bᵀ
                    let bt = val(*b).transpose().expect("matrix");
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g, bt.data(), &mut da, m, p, k);
                    acc(*a, da);
                }
                if self.nodes[*b].needs_grad {
                    // dB = Aᵀ · G
                    let at = val(*a).transpose().expect("matrix");
                    let mut db = vec![T::zero(); k * p];
                    matmul_into(at.data(), g, &mut db, k, m, p);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, g.iter().zip(vb).map(|(&gi, &bi)| gi * bi).collect());
                acc(*b, g.iter().zip(va).map(|(&gi, &ai)| gi * ai).collect());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.to_vec());
                let d = val(*row).numel();
                let mut dr = vec![T::zero(); d];
                for chunk in g.chunks(d) {
                    for (r, &c) in dr.iter_mut().zip(chunk) {
                        *r = *r + c;
                    }
                }
                acc(*row, dr);
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|&x| x * *c).collect()),
            Op::Relu(a) => {
                let va = val(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(&gi, &x)| if x > T::zero() { gi } else { T::zero() })
                        .collect(),
                );
            }
            Op::Square(a) => {
                let two = T::one() + T::one();
                let va = val(*a).data();
                acc(*a, g.iter().zip(va).map(|(&gi, &x)| two * x * gi).collect());
            }
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).numel()]),
            Op::Mean(a) => {
                let n = val(*a).numel();
                let share = g[0] / T::from_usize(n).expect("count fits");
                acc(*a, vec![share; n]);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * n * inner + j * inner + i;
                        let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*gamma).numel();
                let gam = val(*gamma).data();
                let dn = T::from_usize(d).expect("width fits");
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); g.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * hr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        let dh = gr[j] * gam[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx[r * d + j] = rs / dn * (dn * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2().expect("matrix");
                let gt = Tensor::new(vec![r, c], g.to_vec())
                    .and_then(|t| t.transpose())
                    .expect("matrix");
                acc(*a, gt.into_data());
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(*x).dims2().expect("matrix");
                let len = node.value.shape()[1];
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2().expect("matrix");
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    let mut dp = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + pc]);
                    }
                    acc(p, dp);
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).numel();
                    acc(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Row { x, index } => {
                let (r, c) = val(*x).dims2().expect("matrix");
                let mut dx = vec![T::zero(); r * c];
                dx[index * c..(index + 1) * c].copy_from_slice(g);
                acc(*x, dx);
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_along<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..n {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total = total + e;
            }
            for j in 0..n {
                out[idx(j)] = out[idx(j)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

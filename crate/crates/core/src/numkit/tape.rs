//! Wengert tape: forward ops append nodes, backward walks them in
//! strict reverse creation order accumulating gradients.

use crate::error::{CoreError, Result};
use crate::numkit::tensor::{
    matmul, matmul_a_bt, matmul_at_b, mish_deriv_scalar, mish_scalar, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    /// Position in the gradient vector returned by `Tape::backward`.
    pub fn index(&self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    /// x . w + bias broadcast over rows
    Affine { x: Var, w: Var, b: Var },
    Mish { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    ConcatCols { a: Var, b: Var },
    /// each row of x repeated `times` times
    RepeatRows { x: Var, times: usize },
    Mse { pred: Var, target: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// out[i,j] = sum_k x[i,k] w[k,j] + b[j]
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (_, m) = self.value(w).dims2()?;
        if self.value(b).len() != m {
            return Err(CoreError::ShapeMismatch {
                op: "affine",
                detail: format!(
                    "bias length {} vs weight columns {}",
                    self.value(b).len(),
                    m
                ),
            });
        }
        let mut out = matmul(self.value(x), self.value(w))?;
        let (rows, cols) = out.dims2()?;
        let bd: Vec<f64> = self.value(b).data().to_vec();
        let od = out.data_mut();
        for i in 0..rows {
            for j in 0..cols {
                od[i * cols + j] += bd[j];
            }
        }
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    /// Elementwise x * tanh(softplus(x)).
    pub fn mish(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| mish_scalar(e)).collect();
        let out = Tensor::from_vec(v.shape(), data).expect("same shape");
        self.push(Op::Mish { x }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(CoreError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(va.shape(), data).expect("same shape");
        Ok(self.push(op, out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| e * c).collect();
        let out = Tensor::from_vec(v.shape(), data).expect("same shape");
        self.push(Op::Scale { x, c }, out)
    }

    /// Concatenate two rank-2 tensors along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        if ar != br {
            return Err(CoreError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{} rows vs {} rows", ar, br),
            });
        }
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for i in 0..ar {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let out = Tensor::from_vec(&[ar, ac + bc], data)?;
        Ok(self.push(Op::ConcatCols { a, b }, out))
    }

    /// Repeat each row of x `times` consecutive times: [r x c] -> [r*times x c].
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut data = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let out = Tensor::from_vec(&[r * times, c], data)?;
        Ok(self.push(Op::RepeatRows { x, times }, out))
    }

    /// Mean over all entries of (pred - target)^2.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "mse",
                detail: format!("{:?} vs {:?}", vp.shape(), vt.shape()),
            });
        }
        let n = vp.len() as f64;
        let mut acc = 0.0;
        for (&p, &t) in vp.data().iter().zip(vt.data()) {
            let d = p - t;
            acc += d * d;
        }
        Ok(self.push(Op::Mse { pred, target }, Tensor::scalar(acc / n)))
    }

    /// Reverse pass from a scalar root. Returns per-var gradients
    /// (None for vars the root does not depend on).
    pub fn backward(&self, root: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(root).len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "backward",
                detail: format!("root must be scalar, got {:?}", self.value(root).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let gx = matmul_a_bt(&g, self.value(*w))?;
                    let gw = matmul_at_b(self.value(*x), &g)?;
                    let (rows, cols) = g.dims2()?;
                    let mut gb = Tensor::zeros(self.value(*b).shape());
                    for i in 0..rows {
                        for j in 0..cols {
                            gb.data_mut()[j] += g.at2(i, j);
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                    self.accumulate(&mut grads, *w, gw);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Mish { x } => {
                    let vx = self.value(*x);
                    let data = vx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&e, &go)| go * mish_deriv_scalar(e))
                        .collect();
                    let gx = Tensor::from_vec(vx.shape(), data)?;
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sub { a, b } => {
                    let mut gn = g.clone();
                    for v in gn.data_mut() {
                        *v = -*v;
                    }
                    self.accumulate(&mut grads, *a, g);
                    self.accumulate(&mut grads, *b, gn);
                }
                Op::Mul { a, b } => {
                    let ga_data: Vec<f64> = self
                        .value(*b)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &go)| go * y)
                        .collect();
                    let gb_data: Vec<f64> = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &go)| go * x)
                        .collect();
                    let ga = Tensor::from_vec(g.shape(), ga_data)?;
                    let gb = Tensor::from_vec(g.shape(), gb_data)?;
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Scale { x, c } => {
                    let data = g.data().iter().map(|&go| go * c).collect();
                    let gx = Tensor::from_vec(g.shape(), data)?;
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols { a, b } => {
                    let (_, ac) = self.value(*a).dims2()?;
                    let (rows, cols) = g.dims2()?;
                    let mut ga = Tensor::zeros(self.value(*a).shape());
                    let mut gb = Tensor::zeros(self.value(*b).shape());
                    for i in 0..rows {
                        for j in 0..cols {
                            if j < ac {
                                ga.set2(i, j, g.at2(i, j));
                            } else {
                                gb.set2(i, j - ac, g.at2(i, j));
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::RepeatRows { x, times } => {
                    let (r, c) = self.value(*x).dims2()?;
                    let mut gx = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        for t in 0..*times {
                            for j in 0..c {
                                let v = gx.at2(i, j) + g.at2(i * times + t, j);
                                gx.set2(i, j, v);
                            }
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Mse { pred, target } => {
                    let go = g.item();
                    let n = self.value(*pred).len() as f64;
                    let gp_data: Vec<f64> = self
                        .value(*pred)
                        .data()
                        .iter()
                        .zip(self.value(*target).data())
                        .map(|(&p, &t)| go * 2.0 * (p - t) / n)
                        .collect();
                    let gt_data: Vec<f64> = gp_data.iter().map(|&v| -v).collect();
                    let gp = Tensor::from_vec(self.value(*pred).shape(), gp_data)?;
                    let gt = Tensor::from_vec(self.value(*target).shape(), gt_data)?;
                    self.accumulate(&mut grads, *pred, gp);
                    self.accumulate(&mut grads, *target, gt);
                }
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], at: Var, g: Tensor) {
        match &mut grads[at.0] {
            Some(existing) => {
                for (e, n) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += n;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} holds {} entries, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(CoreError::ShapeMismatch {
                op: "dims2",
                detail: format!("expected rank 2, got shape {:?}", other),
            }),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let c = self.shape[1];
        self.data[i * c + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, where_: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite(where_.to_string()))
        }
    }
}

/// out[i,j] = sum_k a[i,k] b[k,j]
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    if ac != br {
        return Err(CoreError::ShapeMismatch {
            op: "matmul",
            detail: format!("{}x{} . {}x{}", ar, ac, br, bc),
        });
    }
    let mut out = vec![0.0; ar * bc];
    let ad = a.data();
    let bd = b.data();
    for i in 0..ar {
        let orow = &mut out[i * bc..(i + 1) * bc];
        for k in 0..ac {
            let aik = ad[i * ac + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * bc..(k + 1) * bc];
            for j in 0..bc {
                orow[j] += aik * brow[j];
            }
        }
    }
    Tensor::from_vec(&[ar, bc], out)
}

/// out = a^T . b, with a: [n x r], b: [n x c] -> [r x c]
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (an, ar) = a.dims2()?;
    let (bn, bc) = b.dims2()?;
    if an != bn {
        return Err(CoreError::ShapeMismatch {
            op: "matmul_at_b",
            detail: format!("{}x{} vs {}x{}", an, ar, bn, bc),
        });
    }
    let mut out = vec![0.0; ar * bc];
    let ad = a.data();
    let bd = b.data();
    for n in 0..an {
        let arow = &ad[n * ar..(n + 1) * ar];
        let brow = &bd[n * bc..(n + 1) * bc];
        for i in 0..ar {
            let v = arow[i];
            if v == 0.0 {
                continue;
            }
            let orow = &mut out[i * bc..(i + 1) * bc];
            for j in 0..bc {
                orow[j] += v * brow[j];
            }
        }
    }
    Tensor::from_vec(&[ar, bc], out)
}

/// out = a . b^T, with a: [r x n], b: [c x n] -> [r x c]
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ar, an) = a.dims2()?;
    let (bc, bn) = b.dims2()?;
    if an != bn {
        return Err(CoreError::ShapeMismatch {
            op: "matmul_a_bt",
            detail: format!("{}x{} vs {}x{}", ar, an, bc, bn),
        });
    }
    let mut out = vec![0.0; ar * bc];
    let ad = a.data();
    let bd = b.data();
    for i in 0..ar {
        let arow = &ad[i * an..(i + 1) * an];
        for j in 0..bc {
            let brow = &bd[j * bn..(j + 1) * bn];
            let mut acc = 0.0;
            for k in 0..an {
                acc += arow[k] * brow[k];
            }
            out[i * bc + j] = acc;
        }
    }
    Tensor::from_vec(&[ar, bc], out)
}

/// Numerically stable softplus: log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn mish_scalar(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_deriv_scalar(x: f64) -> f64 {
    let sp = softplus(x);
    let t = sp.tanh();
    let sigmoid = 1.0 / (1.0 + (-x).exp());
    t + x * (1.0 - t * t) * sigmoid
}

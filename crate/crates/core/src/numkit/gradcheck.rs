//! Central-difference gradient oracle, independent of the tape.

use crate::error::{CoreError, Result};
use crate::numkit::param::ParamStore;

/// Compare analytic gradients already accumulated in `store` against
/// central finite differences of `loss`. Returns the max relative error
/// max_i |g_ad,i - g_fd,i| / max(1, |g_fd,i|).
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(CoreError::InvalidConfig(format!(
            "grad_check eps {} outside [1e-7, 1e-4]",
            eps
        )));
    }
    let probe = loss(store)?;
    if !probe.is_finite() {
        return Err(CoreError::NonFinite("grad_check probe loss".into()));
    }

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut max_rel = 0.0_f64;
    for name in &names {
        let n = store.get(name)?.len();
        for i in 0..n {
            let orig = store.get(name)?.data()[i];
            store.get_mut(name)?.data_mut()[i] = orig + eps;
            let up = loss(store)?;
            store.get_mut(name)?.data_mut()[i] = orig - eps;
            let down = loss(store)?;
            store.get_mut(name)?.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = store.grad(name)?.data()[i];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::tape::Tape;
    use crate::numkit::tensor::Tensor;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f = 0.5 * ||w||^2, analytic gradient w
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap())
            .unwrap();
        let g = ps.get("w").unwrap().clone();
        ps.add_grad("w", &g).unwrap();
        let err = grad_check(&mut ps, 1e-5, |p| {
            let w = p.get("w")?;
            Ok(0.5 * w.data().iter().map(|v| v * v).sum::<f64>())
        })
        .unwrap();
        assert!(err < 1e-9, "err = {}", err);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let err = grad_check(&mut ps, 1e-5, |_| Ok(4.2)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::zeros(&[1])).unwrap();
        assert!(grad_check(&mut ps, 1e-2, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn non_finite_probe_rejected() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::zeros(&[1])).unwrap();
        assert!(grad_check(&mut ps, 1e-5, |_| Ok(f64::NAN)).is_err());
    }

    #[test]
    fn tape_gradient_matches_fd_on_mlp() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut ps = ParamStore::new();
        ps.insert("w1", Tensor::randn(&[3, 4], &mut rng)).unwrap();
        ps.insert("b1", Tensor::randn(&[4], &mut rng)).unwrap();
        ps.insert("w2", Tensor::randn(&[4, 2], &mut rng)).unwrap();
        ps.insert("b2", Tensor::randn(&[2], &mut rng)).unwrap();
        let x0 = Tensor::randn(&[5, 3], &mut rng);
        let t0 = Tensor::randn(&[5, 2], &mut rng);

        let forward = |p: &ParamStore| -> Result<(f64, Vec<(String, Tensor)>)> {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let w1 = tape.leaf(p.get("w1")?.clone());
            let b1 = tape.leaf(p.get("b1")?.clone());
            let w2 = tape.leaf(p.get("w2")?.clone());
            let b2 = tape.leaf(p.get("b2")?.clone());
            let t = tape.leaf(t0.clone());
            let h = tape.affine(x, w1, b1)?;
            let m = tape.mish(h);
            let y = tape.affine(m, w2, b2)?;
            let l = tape.mse(y, t)?;
            let grads = tape.backward(l)?;
            let mut out = Vec::new();
            for (name, var) in [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)] {
                out.push((name.to_string(), grads[var.0].clone().unwrap()));
            }
            Ok((tape.value(l).item(), out))
        };

        let (_, grads) = forward(&ps).unwrap();
        for (name, g) in &grads {
            ps.add_grad(name, g).unwrap();
        }
        let err = grad_check(&mut ps, 1e-5, |p| forward(p).map(|(l, _)| l)).unwrap();
        assert!(err < 1e-6, "err = {}", err);
    }
}

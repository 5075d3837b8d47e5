use super::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences with step `h`.
///
/// Returns the maximum over all input elements of
/// `|ad − fd| / max(1e-8, |ad| + |fd|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&leaves)?;
    if root.numel() != 1 {
        return Err(Error::shape("grad_check", format!("function returned shape {:?}", root.shape())));
    }
    let grads = root.backward()?;

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let probe: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut d = t.data().to_vec();
                if k == which {
                    d[idx] += delta;
                }
                Tensor::new(t.shape(), d)
            })
            .collect::<Result<_>>()?;
        f(&probe)?.item()
    };

    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let ad = grads.get_or_zeros(leaf);
        for (i, &a) in ad.iter().enumerate() {
            let fd = (eval(k, i, h)? - eval(k, i, -h)?) / (2.0 * h);
            let err = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

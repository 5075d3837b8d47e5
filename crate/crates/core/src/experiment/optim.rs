use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient {g}")));
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Adam {
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates every parameter that has a gradient. All gradients are checked
    /// for finiteness before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
            let st = self.states.entry(name.clone()).or_insert_with(|| AdamState::new(g.len()));
            adam_step(&mut p.data, g, st, lr, BETA1, BETA2, EPS)?;
        }
        Ok(())
    }
}

/// Cuts the learning rate when the monitored loss stops improving.
///
/// An epoch improves when its loss is strictly below the best seen so far.
/// After `patience` consecutive non-improving epochs the rate is multiplied
/// by `factor` and the counter restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if patience == 0 || !(factor > 0.0 && factor < 1.0) {
            return Err(Error::invalid(format!(
                "plateau scheduler needs patience ≥ 1 and factor in (0, 1), got {patience}, {factor}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            best: f64::INFINITY,
            stale: 0,
        })
    }

    /// Records one epoch's loss; returns the multiplier to apply (1 or `factor`).
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return 1.0;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            self.factor
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-3, BETA1, BETA2, EPS).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let g = [0.3, -7.0, 1e-3, 2e4];
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, 1e-3, BETA1, BETA2, EPS).unwrap();
        for (x, gv) in p.iter().zip(g) {
            // m̂ = g and v̂ = g², so the step is lr·|g|/(|g| + eps)
            let want = -1e-3 * gv / (gv.abs() + EPS);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
            assert!((x.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_states_give_identical_results() {
        let mut s1 = AdamState::new(2);
        let mut p1 = vec![0.5, 0.5];
        adam_step(&mut p1, &[1.0, 2.0], &mut s1, 0.1, BETA1, BETA2, EPS).unwrap();
        let (mut s2, mut p2) = (s1.clone(), p1.clone());
        adam_step(&mut p1, &[-0.3, 0.7], &mut s1, 0.1, BETA1, BETA2, EPS).unwrap();
        adam_step(&mut p2, &[-0.3, 0.7], &mut s2, 0.1, BETA1, BETA2, EPS).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let mut store = ParamStore::new();
        store.insert("a", &[2], vec![1.0, 1.0]);
        store.insert("b", &[1], vec![1.0]);
        let grads = BTreeMap::from([("a".to_string(), vec![1.0, 1.0]), ("b".to_string(), vec![f64::NAN])]);
        let mut adam = Adam::new();
        assert!(adam.step(&mut store, &grads, 0.1).is_err());
        assert_eq!(store.get("a").unwrap().data, vec![1.0, 1.0]);
    }

    #[test]
    fn plateau_cases() {
        let mut s = PlateauScheduler::new(30, 0.1).unwrap();
        assert!((0..100).all(|e| s.step(100.0 - e as f64) == 1.0));

        let mut s = PlateauScheduler::new(30, 0.1).unwrap();
        let cuts = (0..61).filter(|_| s.step(1.0) != 1.0).count();
        assert_eq!(cuts, 2);

        let mut s = PlateauScheduler::new(30, 0.1).unwrap();
        s.step(1.0);
        for _ in 2..29 {
            assert_eq!(s.step(1.0), 1.0);
        }
        assert_eq!(s.step(0.5), 1.0);
        assert_eq!(s.step(0.5), 1.0);

        assert!(PlateauScheduler::new(0, 0.1).is_err());
        assert!(PlateauScheduler::new(3, 1.0).is_err());
    }
}

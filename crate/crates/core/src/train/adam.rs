use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::model::{ModelParams, ParamGrads};
use crate::real::Real;

/// Bias-corrected Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments keyed by parameter name.
    pub moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let moments = params
            .iter()
            .map(|(k, t)| (String::from(k), (vec![T::zero(); t.len()], vec![T::zero(); t.len()])))
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        }
    }
}

/// One Adam update. Consumes the gradients; every parameter must have one.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: ParamGrads<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            None => bail!(Contract, "missing gradient for {}", name),
            Some(g) if g.shape() != p.shape() => {
                bail!(Contract, "gradient for {} has shape {:?}, expected {:?}", name, g.shape(), p.shape())
            }
            Some(_) => {}
        }
        if !state.moments.contains_key(name) {
            bail!(Contract, "optimizer state has no moments for {}", name);
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let (m, v) = state.moments.get_mut(name).expect("checked above");
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn grads_like(params: &ModelParams<f64>, value: f64) -> ParamGrads<f64> {
        params
            .iter()
            .map(|(k, t)| {
                let mut g = t.clone();
                g.data_mut().iter_mut().for_each(|x| *x = value);
                (String::from(k), g)
            })
            .collect()
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = ModelConfig::toy();
        let mut p = ModelParams::<f64>::filled(&cfg, 0.0).unwrap();
        let mut st = AdamState::new(&p);
        let g = grads_like(&p, 1.0);
        adam_step(&mut p, g, &mut st, 1e-4).unwrap();
        // m̂ = v̂ = 1 after bias correction
        let want = -1e-4 / (1.0 + 1e-8);
        for (_, t) in p.iter() {
            assert!(t.data().iter().all(|&x| (x - want).abs() <= 1e-18));
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = ModelConfig::toy();
        let mut p = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, grads_like(&before, 0.0), &mut st, 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_step_trace() {
        let cfg = ModelConfig::toy();
        let mut p = ModelParams::<f64>::filled(&cfg, 0.5).unwrap();
        let mut st = AdamState::new(&p);
        let (up, down) = (grads_like(&p, 2.0), grads_like(&p, -1.0));
        adam_step(&mut p, up, &mut st, 1e-2).unwrap();
        adam_step(&mut p, down, &mut st, 1e-2).unwrap();
        // m = 0.2, then 0.08; v = 0.004, then 0.004996
        let x1 = 0.5 - 1e-2 * (0.2 / 0.1) / ((0.004f64 / 0.001).sqrt() + 1e-8);
        let x2 = x1 - 1e-2 * (0.08 / 0.19) / ((0.004996f64 / (1.0 - 0.999 * 0.999)).sqrt() + 1e-8);
        for (_, t) in p.iter() {
            assert!(t.data().iter().all(|&x| (x - x2).abs() <= 1e-12), "{} vs {x2}", t.data()[0]);
        }
    }

    #[test]
    fn missing_or_misshapen_gradients_are_rejected() {
        let cfg = ModelConfig::toy();
        let mut p = ModelParams::<f64>::filled(&cfg, 0.0).unwrap();
        let mut st = AdamState::new(&p);
        let mut g = grads_like(&p, 1.0);
        let first = g.keys().next().unwrap().clone();
        g.remove(&first);
        assert!(adam_step(&mut p, g, &mut st, 1e-3).is_err());
        let mut g = grads_like(&p, 1.0);
        g.insert(first, crate::Tensor::scalar(1.0));
        assert!(adam_step(&mut p, g, &mut st, 1e-3).is_err());
        assert_eq!(st.step, 0);
    }
}

//! Warmup schedule, Adam with coupled L2 decay, and the parameter EMA.

use crate::config::OptimizerConfig;
use crate::model::ParamStore;
use crate::tensor::Tensor;

use super::TrainError;

/// `lr · min(1, ln(1 + step) / ln(1 + warmup))`, exactly `lr` once warm.
pub fn lr_schedule(step: u64, cfg: &OptimizerConfig) -> f64 {
    if step >= cfg.warmup_steps {
        return cfg.learning_rate;
    }
    let ramp = (1.0 + step as f64).ln() / (1.0 + cfg.warmup_steps as f64).ln();
    cfg.learning_rate * ramp.min(1.0)
}

/// First and second moments for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| p.trainable.then(|| Tensor::zeros(p.value.shape().to_vec())))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`. `λθ` is added to
/// each gradient first. Frozen parameters are skipped.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let i = id.index();
        let param = params.get_mut(id);
        let grad = grads
            .get(i)
            .and_then(Option::as_ref)
            .ok_or_else(|| TrainError::MissingGradient(param.name.clone()))?;
        let (Some(m), Some(v)) = (state.m[i].as_mut(), state.v[i].as_mut()) else {
            return Err(TrainError::MissingGradient(param.name.clone()));
        };
        let theta = param.value.data_mut();
        for (((th, &g), m), v) in theta
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g + cfg.weight_decay * *th;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Shadow copy of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: Vec<Option<Tensor>>,
}

impl Ema {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        Self {
            decay,
            shadow: params
                .iter()
                .map(|(_, p)| p.trainable.then(|| p.value.clone()))
                .collect(),
        }
    }

    /// `shadow ← decay · shadow + (1 − decay) · θ`.
    pub fn update(&mut self, params: &ParamStore) {
        for ((_, p), s) in params.iter().zip(&mut self.shadow) {
            if let Some(s) = s {
                for (sv, &pv) in s.data_mut().iter_mut().zip(p.value.data()) {
                    *sv = self.decay * *sv + (1.0 - self.decay) * pv;
                }
            }
        }
    }

    /// `params` with every trainable tensor replaced by its shadow.
    pub fn apply(&self, params: &ParamStore) -> ParamStore {
        let mut out = params.clone();
        let ids: Vec<_> = out.iter().map(|(id, _)| id).collect();
        for id in ids {
            if let Some(s) = &self.shadow[id.index()] {
                out.get_mut(id).value = s.clone();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new([1], vec![v]).unwrap(), true);
        s.add("frozen", Tensor::new([1], vec![7.0]).unwrap(), false);
        s
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_schedule(1000, &cfg), 0.001);
        assert_eq!(lr_schedule(5000, &cfg), 0.001);
        let first = lr_schedule(1, &cfg);
        assert!((first - 0.001 * 2f64.ln() / 1001f64.ln()).abs() < 1e-18);
        assert!((first - 1.003e-4).abs() < 1e-7);
        let mut prev = 0.0;
        for s in 1..=2000 {
            let lr = lr_schedule(s, &cfg);
            assert!(lr >= prev);
            prev = lr;
        }
    }

    #[test]
    fn one_step_moves_by_the_rate_up_to_epsilon() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut store = scalar_store(0.5);
        let mut state = AdamState::new(&store);
        let grads = vec![Some(Tensor::new([1], vec![1.0]).unwrap()), None];
        adam_step(&mut store, &grads, &mut state, &cfg, 0.001).unwrap();
        let moved = 0.5 - store.get(store.find("x").unwrap()).value.data()[0];
        assert!((moved - 0.001 / (1.0 + 1e-7)).abs() < 1e-15);
        assert_eq!(store.get(store.find("frozen").unwrap()).value.data(), &[7.0]);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut store = scalar_store(0.5);
        let mut state = AdamState::new(&store);
        let grads = vec![Some(Tensor::zeros([1])), None];
        adam_step(&mut store, &grads, &mut state, &cfg, 0.001).unwrap();
        assert_eq!(store.get(store.find("x").unwrap()).value.data(), &[0.5]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = scalar_store(0.5);
        let mut state = AdamState::new(&store);
        let err = adam_step(&mut store, &[None, None], &mut state, &OptimizerConfig::default(), 0.1);
        assert_eq!(err, Err(TrainError::MissingGradient("x".into())));
    }

    #[test]
    fn quadratic_loss_decreases() {
        let cfg = OptimizerConfig::default();
        let mut store = scalar_store(3.0);
        let mut state = AdamState::new(&store);
        let x = |s: &ParamStore| s.get(s.find("x").unwrap()).value.data()[0];
        let start = x(&store).powi(2);
        for _ in 0..100 {
            let g = 2.0 * x(&store);
            adam_step(&mut store, &[Some(Tensor::new([1], vec![g]).unwrap()), None], &mut state, &cfg, 0.01)
                .unwrap();
        }
        assert!(x(&store).powi(2) < start);
    }

    #[test]
    fn ema_geometric_closed_form() {
        let store = scalar_store(2.0);
        let mut ema = Ema::new(&scalar_store(5.0), 0.9999);
        for _ in 0..250 {
            ema.update(&store);
        }
        let expect = 2.0 + 3.0 * 0.9999f64.powi(250);
        assert!((ema.shadow[0].as_ref().unwrap().data()[0] - expect).abs() < 1e-12);
        let mut fixed = Ema::new(&store, 0.9999);
        fixed.update(&store);
        assert_eq!(fixed.shadow[0].as_ref().unwrap().data(), &[2.0]);
        assert!(fixed.shadow[1].is_none());
    }
}

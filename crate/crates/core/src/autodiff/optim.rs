//! Adam with bias correction.

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AdError;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter. Moment buffers live in the store so
/// they serialize with checkpoints; `t` starts at 1 on the first call.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    cfg: &AdamConfig,
) -> Result<(), AdError> {
    if grads.len() != store.len() {
        return Err(AdError::Param {
            detail: format!("{} grads for {} params", grads.len(), store.len()),
        });
    }
    if store.moments.is_none() {
        let zeros: Vec<Tensor> = (0..store.len())
            .map(|i| {
                let t = store.tensor(i);
                let (r, c) = t.dims2().expect("param tensors are matrices");
                Tensor::zeros(r, c)
            })
            .collect();
        store.moments = Some((zeros.clone(), zeros));
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let (m, v) = store.moments.take().expect("just initialized");
    let (mut m, mut v) = (m, v);
    for i in 0..store.len() {
        let g = grads[i].data();
        if g.len() != store.tensor(i).len() {
            store.moments = Some((m, v));
            return Err(AdError::Param {
                detail: format!(
                    "grad {} has {} values, param {:?} has {}",
                    i,
                    g.len(),
                    store.name(i),
                    store.tensor(i).len()
                ),
            });
        }
        let md = m[i].data_mut();
        let vd = v[i].data_mut();
        let pd = store.tensor_mut(i).data_mut();
        for j in 0..g.len() {
            md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * g[j];
            vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = md[j] / bc1;
            let vhat = vd[j] / bc2;
            pd[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    store.moments = Some((m, v));
    Ok(())
}

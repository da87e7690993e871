//! Small network building blocks on top of the graph primitives.

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::AdError;
use crate::rng::Prng;
use rand::Rng;

/// Weight + bias indices of one linear layer in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers a layer with uniform init in +-sqrt(6/(fan_in+fan_out)) and
    /// zero bias.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Prng,
    ) -> Result<Self, AdError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(AdError::Param {
                detail: format!("layer {name:?} has zero width ({in_dim} -> {out_dim})"),
            });
        }
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let w = store.add(&format!("{name}.w"), Tensor::new(vec![in_dim, out_dim], w)?)?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, out_dim))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// x . W + b for a batched input (B, in_dim).
    pub fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId, AdError> {
        let h = g.matmul(x, params[self.w])?;
        g.add_row(h, params[self.b])
    }

    pub fn scalar_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Parameter indices for one GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub wz: usize,
    pub uz: usize,
    pub bz: usize,
    pub wr: usize,
    pub ur: usize,
    pub br: usize,
    pub wh: usize,
    pub uh: usize,
    pub bh: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut Prng,
    ) -> Result<Self, AdError> {
        if in_dim == 0 || hidden == 0 {
            return Err(AdError::Param {
                detail: format!("gru {name:?} has zero width ({in_dim} -> {hidden})"),
            });
        }
        let mut mat = |tag: &str, r: usize, c: usize, rng: &mut Prng| -> Result<usize, AdError> {
            let bound = (6.0 / (r + c) as f64).sqrt();
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect();
            store.add(&format!("{name}.{tag}"), Tensor::new(vec![r, c], data)?)
        };
        let wz = mat("wz", in_dim, hidden, rng)?;
        let uz = mat("uz", hidden, hidden, rng)?;
        let wr = mat("wr", in_dim, hidden, rng)?;
        let ur = mat("ur", hidden, hidden, rng)?;
        let wh = mat("wh", in_dim, hidden, rng)?;
        let uh = mat("uh", hidden, hidden, rng)?;
        let bz = store.add(&format!("{name}.bz"), Tensor::zeros(1, hidden))?;
        let br = store.add(&format!("{name}.br"), Tensor::zeros(1, hidden))?;
        let bh = store.add(&format!("{name}.bh"), Tensor::zeros(1, hidden))?;
        Ok(Self {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
            in_dim,
            hidden,
        })
    }

    /// Standard GRU step:
    /// z = sigmoid(x.Wz + h.Uz + bz), r = sigmoid(x.Wr + h.Ur + br),
    /// h~ = tanh(x.Wh + (r*h).Uh + bh), h' = (1-z)*h + z*h~.
    pub fn step(
        &self,
        g: &mut Graph,
        params: &[NodeId],
        h: NodeId,
        x: NodeId,
    ) -> Result<NodeId, AdError> {
        let gate = |g: &mut Graph, w: usize, u: usize, b: usize, hh: NodeId| -> Result<NodeId, AdError> {
            let xi = g.matmul(x, params[w])?;
            let hi = g.matmul(hh, params[u])?;
            let s = g.add(xi, hi)?;
            g.add_row(s, params[b])
        };
        let z = {
            let a = gate(g, self.wz, self.uz, self.bz, h)?;
            g.sigmoid(a)?
        };
        let r = {
            let a = gate(g, self.wr, self.ur, self.br, h)?;
            g.sigmoid(a)?
        };
        let rh = g.mul(r, h)?;
        let cand = {
            let a = gate(g, self.wh, self.uh, self.bh, rh)?;
            g.tanh(a)?
        };
        // h' = h - z*h + z*h~
        let zh = g.mul(z, h)?;
        let keep = g.sub(h, zh)?;
        let upd = g.mul(z, cand)?;
        g.add(keep, upd)
    }

    pub fn scalar_count(&self) -> usize {
        3 * (self.in_dim * self.hidden + self.hidden * self.hidden + self.hidden)
    }
}

/// Binds every parameter of the store as a graph leaf, in store order.
pub fn bind_params(g: &mut Graph, store: &ParamStore) -> Result<Vec<NodeId>, AdError> {
    let mut out = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        out.push(g.param(i, store.tensor(i).clone())?);
    }
    Ok(out)
}

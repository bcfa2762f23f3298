//! RMSProp with a per-parameter running mean of squared gradients:
//! acc = 0.9*acc + 0.1*g^2, step = -lr * g / (sqrt(acc) + 1e-8).

use super::{Gradients, Network, Scalar, Stage};
use crate::{Error, Result};

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct RmsProp<S> {
    pub lr: S,
    /// One accumulator slab per stage, laid out weights-then-biases;
    /// empty slabs for parameterless stages.
    pub(crate) acc: Vec<Vec<S>>,
}

impl<S: Scalar> RmsProp<S> {
    pub fn new(net: &Network<S>, lr: f64) -> Self {
        let acc = net
            .stages
            .iter()
            .map(|s| match s {
                Stage::Conv(c) => vec![S::zero(); c.w.len() + c.b.len()],
                Stage::Dense(d) => vec![S::zero(); d.w.len() + d.b.len()],
                _ => Vec::new(),
            })
            .collect();
        RmsProp { lr: S::from_f64(lr), acc }
    }

    pub fn step(&mut self, net: &mut Network<S>, grads: &Gradients<S>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("optimizer step gradient".into()));
        }
        let decay = S::from_f64(RMSPROP_DECAY);
        let one_minus = S::from_f64(1.0 - RMSPROP_DECAY);
        let eps = S::from_f64(RMSPROP_EPS);
        let lr = self.lr;
        for (si, stage) in net.stages.iter_mut().enumerate() {
            let Some(g) = &grads.per_stage[si] else { continue };
            let acc = &mut self.acc[si];
            let (w, b) = match stage {
                Stage::Conv(c) => (&mut c.w, &mut c.b),
                Stage::Dense(d) => (&mut d.w, &mut d.b),
                _ => continue,
            };
            debug_assert_eq!(acc.len(), w.len() + b.len());
            let (acc_w, acc_b) = acc.split_at_mut(w.len());
            update(w, &g.w, acc_w, decay, one_minus, eps, lr);
            update(b, &g.b, acc_b, decay, one_minus, eps, lr);
        }
        Ok(())
    }
}

fn update<S: Scalar>(p: &mut [S], g: &[S], acc: &mut [S], decay: S, one_minus: S, eps: S, lr: S) {
    for i in 0..p.len() {
        let gi = g[i];
        acc[i] = decay * acc[i] + one_minus * gi * gi;
        p[i] = p[i] - lr * gi / (acc[i].sqrt() + eps);
    }
}

use crate::autodiff::{Gradients, ParamGrad, ParamSet, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment estimates mirroring every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .all(|(id, _, t)| self.m[id.0].shape() == t.shape() && self.v[id.0].shape() == t.shape())
    }

    /// One bias-corrected update. Tensors with no gradient at all are left
    /// alone; rows missing from a sparse gradient count as zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let [rows, cols] = p.shape();
            let mut update = |idx: usize, gi: f64| {
                let mi = BETA1 * m.data()[idx] + (1.0 - BETA1) * gi;
                let vi = BETA2 * v.data()[idx] + (1.0 - BETA2) * gi * gi;
                m.data_mut()[idx] = mi;
                v.data_mut()[idx] = vi;
                p.data_mut()[idx] -= lr * (mi / c1) / ((vi / c2).sqrt() + EPS);
            };
            match g {
                ParamGrad::Dense(gt) => {
                    for (idx, &gi) in gt.data().iter().enumerate() {
                        update(idx, gi);
                    }
                }
                ParamGrad::Rows(map) => {
                    for r in 0..rows {
                        let row_grad = map.get(&r);
                        for c in 0..cols {
                            update(r * cols + c, row_grad.map_or(0.0, |v| v[c]));
                        }
                    }
                }
            }
        }
    }
}

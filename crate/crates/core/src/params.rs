//! Every learnable tensor of the model, laid out in one [`ParamSet`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{norm, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub num_items: usize,
    pub dim: usize,
    pub num_proxies: usize,
    pub max_len: usize,
}

impl ModelDims {
    /// Width of the selector's hidden layer: `floor((d + K) / 2)`.
    pub fn selector_hidden(&self) -> usize {
        (self.dim + self.num_proxies) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub items: ParamId,
    pub proxies: ParamId,
    pub normals: ParamId,
    pub sel_w1: ParamId,
    pub sel_w2: ParamId,
    pub sel_pos: ParamId,
    pub enc_wq: ParamId,
    pub enc_wk: ParamId,
    pub enc_w1: ParamId,
    pub enc_w2: ParamId,
    pub enc_b1: ParamId,
    pub enc_b2: ParamId,
    pub enc_pos: ParamId,
    pub user_bias: ParamId,
}

pub const PARAM_NAMES: [&str; 14] = [
    "item_embeddings",
    "proxies",
    "proxy_normals",
    "selector.w1",
    "selector.w2",
    "selector.pos",
    "encoder.wq",
    "encoder.wk",
    "encoder.w1",
    "encoder.w2",
    "encoder.b1",
    "encoder.b2",
    "encoder.pos",
    "user_bias",
];

impl ParamIds {
    fn resolve(set: &ParamSet) -> Result<Self> {
        let id = |name: &str| {
            set.find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        Ok(ParamIds {
            items: id(PARAM_NAMES[0])?,
            proxies: id(PARAM_NAMES[1])?,
            normals: id(PARAM_NAMES[2])?,
            sel_w1: id(PARAM_NAMES[3])?,
            sel_w2: id(PARAM_NAMES[4])?,
            sel_pos: id(PARAM_NAMES[5])?,
            enc_wq: id(PARAM_NAMES[6])?,
            enc_wk: id(PARAM_NAMES[7])?,
            enc_w1: id(PARAM_NAMES[8])?,
            enc_w2: id(PARAM_NAMES[9])?,
            enc_b1: id(PARAM_NAMES[10])?,
            enc_b2: id(PARAM_NAMES[11])?,
            enc_pos: id(PARAM_NAMES[12])?,
            user_bias: id(PARAM_NAMES[13])?,
        })
    }
}

/// Item table, proxy bank, selector and encoder weights, and one bias row per
/// known user.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub set: ParamSet,
    pub ids: ParamIds,
    /// Known user tag -> row of the user-bias table.
    pub users: BTreeMap<String, usize>,
}

impl ModelParams {
    /// Uniform `[-1/sqrt(d), 1/sqrt(d)]` weights and embeddings, embeddings
    /// clipped into the unit ball, unit normals, zero biases and zero user
    /// biases.
    pub fn init<R: Rng + ?Sized>(
        dims: ModelDims,
        known_users: impl IntoIterator<Item = String>,
        rng: &mut R,
    ) -> Self {
        let d = dims.dim;
        let k = dims.num_proxies;
        let h = dims.selector_hidden();
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |rows, cols| Tensor::filled_with(rows, cols, || rng.gen_range(-bound..=bound));

        let users: BTreeMap<String, usize> = known_users
            .into_iter()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, u)| (u, i))
            .collect();

        let mut set = ParamSet::new();
        let tensors = [
            uniform(dims.num_items, d),
            uniform(k, d),
            uniform(k, d),
            uniform(d, h),
            uniform(h, k),
            uniform(dims.max_len, d),
            uniform(d, d),
            uniform(d, d),
            uniform(d, d),
            uniform(d, d),
            Tensor::zeros(1, d),
            Tensor::zeros(1, d),
            uniform(dims.max_len, d),
            Tensor::zeros(users.len(), k),
        ];
        for (name, t) in PARAM_NAMES.iter().zip(tensors) {
            set.add(*name, t);
        }
        let ids = ParamIds::resolve(&set).expect("all names present");
        let mut params = ModelParams {
            dims,
            set,
            ids,
            users,
        };
        params.project_constraints();
        params
    }

    pub fn from_set(set: ParamSet, users: BTreeMap<String, usize>) -> Result<Self> {
        let ids = ParamIds::resolve(&set)?;
        let items = set.get(ids.items);
        let dims = ModelDims {
            num_items: items.rows(),
            dim: items.cols(),
            num_proxies: set.get(ids.proxies).rows(),
            max_len: set.get(ids.sel_pos).rows(),
        };
        let expect = |id: ParamId, shape: [usize; 2]| -> Result<()> {
            let got = set.get(id).shape();
            if got != shape {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {got:?}, expected {shape:?}",
                    set.name(id)
                )));
            }
            Ok(())
        };
        let (d, k, h) = (dims.dim, dims.num_proxies, dims.selector_hidden());
        expect(ids.normals, [k, d])?;
        expect(ids.sel_w1, [d, h])?;
        expect(ids.sel_w2, [h, k])?;
        expect(ids.enc_pos, [dims.max_len, d])?;
        for id in [ids.enc_wq, ids.enc_wk, ids.enc_w1, ids.enc_w2] {
            expect(id, [d, d])?;
        }
        expect(ids.enc_b1, [1, d])?;
        expect(ids.enc_b2, [1, d])?;
        expect(ids.user_bias, [users.len(), k])?;
        Ok(ModelParams {
            dims,
            set,
            ids,
            users,
        })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        self.set.get(id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.set.get_mut(id)
    }

    pub fn user_row(&self, tag: &str) -> Option<usize> {
        self.users.get(tag).copied()
    }

    /// Rows of the item table and proxy bank are clipped into the unit ball;
    /// hyperplane normals are rescaled to unit length.
    pub fn project_constraints(&mut self) {
        for id in [self.ids.items, self.ids.proxies] {
            let t = self.set.get_mut(id);
            for r in 0..t.rows() {
                let row = t.row_mut(r);
                let n = norm(row);
                if n > 1.0 {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        let t = self.set.get_mut(self.ids.normals);
        for r in 0..t.rows() {
            let row = t.row_mut(r);
            let n = norm(row);
            if n > 0.0 && (n - 1.0).abs() > 1e-15 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn max_row_norm(&self, id: ParamId) -> f64 {
        self.get(id).row_norms().into_iter().fold(0.0, f64::max)
    }
}

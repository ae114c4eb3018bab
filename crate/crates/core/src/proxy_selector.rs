//! Proxy selection: session -> logits -> tempered softmax -> rescaled proxy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, norm, softmax_in_place, Graph, Tensor, Var};
use crate::dataset::{ItemId, PredictionInstance};
use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Denominator guard used while training; exact cancellation is measure-zero
/// and must not stop an epoch.
pub const TRAIN_EPS: f64 = 1e-12;

/// Training uses the whole parent session for selection and guards degenerate
/// denominators; inference sees only the prefix and reports degeneracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Exponential decay of the softmax temperature, clamped at the final value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub initial: f64,
    pub final_temp: f64,
    pub epochs: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            initial: 3.0,
            final_temp: 0.01,
            epochs: 10,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.initial > self.final_temp && self.final_temp > 0.0) {
            return Err(format!(
                "temperatures must satisfy initial > final > 0 (got {} and {})",
                self.initial, self.final_temp
            ));
        }
        if self.epochs == 0 {
            return Err("annealing needs at least one epoch".into());
        }
        Ok(())
    }
}

/// `max(T0 * (TE / T0)^(e / E), TE)`.
pub fn temperature(epoch: usize, sched: &AnnealSchedule) -> f64 {
    if epoch >= sched.epochs {
        return sched.final_temp;
    }
    let ratio = sched.final_temp / sched.initial;
    (sched.initial * ratio.powf(epoch as f64 / sched.epochs as f64)).max(sched.final_temp)
}

/// Softmax of `(alpha + bias) / tau`.
pub fn selection_distribution(alpha: &[f64], tau: f64, bias: Option<&[f64]>) -> Vec<f64> {
    assert!(tau > 0.0, "temperature must be positive");
    let mut pi: Vec<f64> = match bias {
        Some(b) => alpha.iter().zip(b).map(|(a, u)| (a + u) / tau).collect(),
        None => alpha.iter().map(|a| a / tau).collect(),
    };
    softmax_in_place(&mut pi);
    pi
}

/// Returns `(p, gamma)` where `p = gamma * sum_j pi_j P_j` and gamma makes
/// `|p| = sum_j pi_j |P_j|`.
pub fn assemble_proxy(pi: &[f64], proxies: &Tensor) -> Result<(Vec<f64>, f64)> {
    if pi.len() != proxies.rows() {
        return Err(Error::Dimension {
            op: "assemble_proxy",
            lhs: [1, pi.len()],
            rhs: proxies.shape(),
        });
    }
    let mut combined = vec![0.0; proxies.cols()];
    let mut numerator = 0.0;
    for (j, &w) in pi.iter().enumerate() {
        let row = proxies.row(j);
        numerator += w * norm(row);
        for (c, x) in combined.iter_mut().zip(row) {
            *c += w * x;
        }
    }
    let denom = norm(&combined);
    if denom < 1e-12 {
        return Err(Error::Degenerate(denom));
    }
    let gamma = numerator / denom;
    combined.iter_mut().for_each(|c| *c *= gamma);
    Ok((combined, gamma))
}

/// The items selection looks at: the full parent session during training,
/// the observed prefix otherwise.
pub fn selection_items(inst: &PredictionInstance, phase: Phase) -> &[ItemId] {
    match phase {
        Phase::Train => inst.parent_session_items(),
        Phase::Infer => inst.prefix(),
    }
}

/// Bias row for the instance's user, if the user is known to the model.
pub fn user_row(params: &ModelParams, inst: &PredictionInstance) -> Option<usize> {
    if !inst.known_user {
        return None;
    }
    inst.user_tag.as_deref().and_then(|u| params.user_row(u))
}

pub(crate) fn check_len(n: usize, max: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Contract("session must hold at least one item".into()));
    }
    if n > max {
        return Err(Error::Length { len: n, max });
    }
    Ok(())
}

/// `alpha = mean_j W2^T leaky_relu(W1^T (I[s_j] + E_P[j]))`, a `1 x K` row.
pub fn build_logits(g: &mut Graph, params: &ModelParams, items: &[ItemId]) -> Result<Var> {
    check_len(items.len(), params.dims.max_len)?;
    let ids = &params.ids;
    let emb = g.gather(ids.items, items.iter().map(|i| i.index()).collect())?;
    let pos = g.gather(ids.sel_pos, (0..items.len()).collect())?;
    let x = g.add(emb, pos)?;
    let w1 = g.param(ids.sel_w1);
    let w2 = g.param(ids.sel_w2);
    let h = g.matmul(x, w1)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let l = g.matmul(h, w2)?;
    Ok(g.mean_rows(l))
}

#[derive(Clone, Copy, Debug)]
pub struct ProxyVars {
    pub alpha: Var,
    pub pi: Var,
    pub gamma: Var,
    pub p: Var,
}

pub fn build_proxy(
    g: &mut Graph,
    params: &ModelParams,
    items: &[ItemId],
    user: Option<usize>,
    tau: f64,
    phase: Phase,
) -> Result<ProxyVars> {
    let alpha = build_logits(g, params, items)?;
    let biased = match user {
        Some(row) => {
            let u = g.gather(params.ids.user_bias, vec![row])?;
            g.add(alpha, u)?
        }
        None => alpha,
    };
    let scaled = g.scale(biased, 1.0 / tau);
    let pi = g.softmax_rows(scaled);

    let proxies = g.param(params.ids.proxies);
    let combined = g.matmul(pi, proxies)?;
    let norms = g.row_norms(proxies);
    let numerator = g.matmul(pi, norms)?;
    let mut denom = g.l2_norm(combined);
    match phase {
        Phase::Train => denom = g.add_const(denom, TRAIN_EPS),
        Phase::Infer => {
            let d = g.scalar(denom);
            if d < 1e-12 {
                return Err(Error::Degenerate(d));
            }
        }
    }
    let gamma = g.div_scalar(numerator, denom)?;
    let p = g.mul_scalar(combined, gamma)?;
    Ok(ProxyVars {
        alpha,
        pi,
        gamma,
        p,
    })
}

/// Selection logits for a session (no user bias).
pub fn encode_logits(items: &[ItemId], params: &ModelParams) -> Result<Vec<f64>> {
    let mut g = Graph::new(&params.set);
    let alpha = build_logits(&mut g, params, items)?;
    Ok(g.value(alpha).data().to_vec())
}

/// `(pi, p)` for an instance under the phase's selection rule.
pub fn select(
    inst: &PredictionInstance,
    params: &ModelParams,
    tau: f64,
    phase: Phase,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new(&params.set);
    let v = build_proxy(
        &mut g,
        params,
        selection_items(inst, phase),
        user_row(params, inst),
        tau,
        phase,
    )?;
    Ok((g.value(v.pi).data().to_vec(), g.value(v.p).data().to_vec()))
}

/// Lower bound on the largest selection probability when the top logit leads
/// every other by at least `gap`.
pub fn hard_selection_bound(k: usize, gap: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (k as f64 - 1.0) * (-gap / tau).exp())
}

/// `sum_j pi_j |P_j|`, the norm the rescaled proxy must have.
pub fn weighted_norm(pi: &[f64], proxies: &Tensor) -> f64 {
    dot(pi, &proxies.row_norms())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{expand_instances, Session, Task};
    use crate::params::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints() {
        let s = AnnealSchedule::default();
        assert_eq!(temperature(0, &s), 3.0);
        assert_eq!(temperature(10, &s), 0.01);
        assert_eq!(temperature(25, &s), 0.01);
        let mid = 3.0 * (0.01f64 / 3.0).sqrt();
        assert!((temperature(5, &s) - mid).abs() < 1e-15);
        assert!((temperature(5, &s) - 0.173_205_080_756_887_7).abs() < 1e-9);
    }

    #[test]
    fn softmax_examples() {
        let pi = selection_distribution(&[1.0, 2.0], 1.0, None);
        assert!((pi[0] - 0.268_941_421_369_995).abs() < 1e-12);
        assert!((pi[1] - 0.731_058_578_630_005).abs() < 1e-12);
        let pi = selection_distribution(&[0.0, 0.5], 0.01, None);
        assert!(pi[1] >= 1.0 - (-50f64).exp());
        let pi = selection_distribution(&[0.3; 5], 0.7, None);
        assert!(pi.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn bias_shifts_selection() {
        let pi = selection_distribution(&[0.0, 0.0], 1.0, Some(&[0.0, 1.0]));
        let plain = selection_distribution(&[0.0, 1.0], 1.0, None);
        assert_eq!(pi, plain);
    }

    #[test]
    fn assemble_examples() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (v, gamma) = assemble_proxy(&[0.0, 1.0], &p).unwrap();
        assert_eq!((v, gamma), (vec![0.0, 1.0], 1.0));
        let (v, gamma) = assemble_proxy(&[0.5, 0.5], &p).unwrap();
        assert!((gamma - 2f64.sqrt()).abs() < 1e-15);
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((norm(&v) - 1.0).abs() < 1e-15);

        let same = Tensor::from_rows(&[vec![0.3, -0.4], vec![0.3, -0.4], vec![0.3, -0.4]]).unwrap();
        let (_, gamma) = assemble_proxy(&[0.2, 0.5, 0.3], &same).unwrap();
        assert!((gamma - 1.0).abs() < 1e-15);

        let opposite = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(
            assemble_proxy(&[0.5, 0.5], &opposite),
            Err(Error::Degenerate(_))
        ));
    }

    fn tiny_params(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(
            ModelDims {
                num_items: 10,
                dim: 4,
                num_proxies: 3,
                max_len: 6,
            },
            [],
            &mut rng,
        )
    }

    #[test]
    fn zero_weights_zero_logits() {
        let mut p = tiny_params(0);
        let ids = p.ids;
        p.get_mut(ids.sel_w1).data_mut().fill(0.0);
        p.get_mut(ids.sel_w2).data_mut().fill(0.0);
        let alpha = encode_logits(&[ItemId(1), ItemId(2)], &p).unwrap();
        assert_eq!(alpha, vec![0.0; 3]);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // d = 2, K = 2 -> hidden width 2
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::init(
            ModelDims {
                num_items: 3,
                dim: 2,
                num_proxies: 2,
                max_len: 4,
            },
            [],
            &mut rng,
        );
        let ids = p.ids;
        p.get_mut(ids.items).row_mut(1).copy_from_slice(&[0.5, -0.25]);
        p.get_mut(ids.sel_pos).row_mut(0).copy_from_slice(&[0.0, 0.0]);
        *p.get_mut(ids.sel_w1) = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        *p.get_mut(ids.sel_w2) = Tensor::from_rows(&[vec![2.0, 1.0], vec![-1.0, 4.0]]).unwrap();
        // W1^T x = (1*0.5 + 3*-0.25, -2*0.5 + 0.5*-0.25) = (-0.25, -1.125)
        // leaky -> (-0.025, -0.1125)
        // W2^T h = (2*-0.025 + -1*-0.1125, 1*-0.025 + 4*-0.1125) = (0.0625, -0.475)
        let alpha = encode_logits(&[ItemId(2)], &p).unwrap();
        assert!((alpha[0] - 0.0625).abs() < 1e-15);
        assert!((alpha[1] + 0.475).abs() < 1e-15);
    }

    #[test]
    fn duplicated_summands_leave_mean_unchanged() {
        let mut p = tiny_params(3);
        let ids = p.ids;
        let row0 = p.get(ids.sel_pos).row(0).to_vec();
        for r in 0..4 {
            p.get_mut(ids.sel_pos).row_mut(r).copy_from_slice(&row0);
        }
        let one = encode_logits(&[ItemId(4), ItemId(4)], &p).unwrap();
        let two = encode_logits(&[ItemId(4); 4], &p).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = encode_logits(&[ItemId(4)], &p).unwrap();
        for (a, b) in one.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn length_limits() {
        let p = tiny_params(0);
        assert!(matches!(
            encode_logits(&[ItemId(1); 7], &p),
            Err(Error::Length { len: 7, max: 6 })
        ));
        assert!(encode_logits(&[], &p).is_err());
        assert_eq!(encode_logits(&[ItemId(1); 6], &p).unwrap().len(), 3);
    }

    #[test]
    fn whole_session_rule() {
        let p = tiny_params(5);
        let session = Session {
            items: vec![ItemId(1), ItemId(2), ItemId(3)],
            user_tag: None,
            start_day: 0,
            start_time: 0,
        };
        let inst = expand_instances(&session, Task::Repeat);
        let full = encode_logits(&session.items, &p).unwrap();
        let prefix = encode_logits(&session.items[..1], &p).unwrap();
        let tau = 0.7;
        let (pi_a, p_a) = select(&inst[0], &p, tau, Phase::Train).unwrap();
        let (pi_b, p_b) = select(&inst[1], &p, tau, Phase::Train).unwrap();
        assert_eq!((&pi_a, &p_a), (&pi_b, &p_b));
        assert_eq!(pi_a, selection_distribution(&full, tau, None));
        let (pi_test, _) = select(&inst[0], &p, tau, Phase::Infer).unwrap();
        assert_eq!(pi_test, selection_distribution(&prefix, tau, None));
    }

    #[test]
    fn graph_proxy_matches_plain() {
        let p = tiny_params(8);
        let items = [ItemId(3), ItemId(7)];
        let mut g = Graph::new(&p.set);
        let v = build_proxy(&mut g, &p, &items, None, 0.9, Phase::Infer).unwrap();
        let alpha = encode_logits(&items, &p).unwrap();
        let pi = selection_distribution(&alpha, 0.9, None);
        let (proxy, gamma) = assemble_proxy(&pi, p.get(p.ids.proxies)).unwrap();
        assert!((g.scalar(v.gamma) - gamma).abs() < 1e-12);
        for (a, b) in g.value(v.p).data().iter().zip(&proxy) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

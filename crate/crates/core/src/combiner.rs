//! Hyperplane projection and session-item dissimilarity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, norm, Graph, Tensor, Var};
use crate::dataset::ItemId;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::proxy_selector::{Phase, TRAIN_EPS};

/// How a session representation is compared to an item. Smaller is better in
/// every mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// `|(p + s_perp) - i_perp|^2`
    Full,
    /// `|p - i_perp|^2`
    ProxyOnly,
    /// `|s - i|^2`, no proxy and no projection.
    ShortOnly,
    /// `|(p + s) - i|^2`
    NoProjection,
    /// `-(p + s_perp) . i_perp`
    DotProduct,
}

impl ScoringMode {
    pub const ALL: [ScoringMode; 5] = [
        ScoringMode::Full,
        ScoringMode::ProxyOnly,
        ScoringMode::ShortOnly,
        ScoringMode::NoProjection,
        ScoringMode::DotProduct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Full => "full",
            ScoringMode::ProxyOnly => "proxy_only",
            ScoringMode::ShortOnly => "short_only",
            ScoringMode::NoProjection => "no_projection",
            ScoringMode::DotProduct => "dot_product",
        }
    }

    pub fn uses_proxy(self) -> bool {
        self != ScoringMode::ShortOnly
    }

    pub fn uses_short_term(self) -> bool {
        self != ScoringMode::ProxyOnly
    }

    pub fn projects(self) -> bool {
        matches!(
            self,
            ScoringMode::Full | ScoringMode::ProxyOnly | ScoringMode::DotProduct
        )
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ScoringMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode {s:?} (full|proxy_only|short_only|no_projection|dot_product)")
            })
    }
}

/// `v = sum_j pi_j V_j / |sum_j pi_j V_j|`.
pub fn hyperplane_normal(pi: &[f64], normals: &Tensor) -> Result<Vec<f64>> {
    if pi.len() != normals.rows() {
        return Err(Error::Dimension {
            op: "hyperplane_normal",
            lhs: [1, pi.len()],
            rhs: normals.shape(),
        });
    }
    let mut v = vec![0.0; normals.cols()];
    for (j, &w) in pi.iter().enumerate() {
        for (a, b) in v.iter_mut().zip(normals.row(j)) {
            *a += w * b;
        }
    }
    let n = norm(&v);
    if n < 1e-12 {
        return Err(Error::Degenerate(n));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// `x - (v . x) v` for unit `v`.
pub fn project(x: &[f64], v: &[f64]) -> Vec<f64> {
    debug_assert!((norm(v) - 1.0).abs() < 1e-9, "normal must be unit length");
    let c = dot(v, x);
    x.iter().zip(v).map(|(a, b)| a - c * b).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// The point an item is compared against, for modes that use one.
fn anchor(p: &[f64], s: &[f64], v: &[f64], mode: ScoringMode) -> Vec<f64> {
    match mode {
        ScoringMode::Full | ScoringMode::DotProduct => add(p, &project(s, v)),
        ScoringMode::ProxyOnly => p.to_vec(),
        ScoringMode::ShortOnly => s.to_vec(),
        ScoringMode::NoProjection => add(p, s),
    }
}

fn score_against(anchor: &[f64], item: &[f64], v: &[f64], mode: ScoringMode) -> f64 {
    match mode {
        ScoringMode::Full | ScoringMode::ProxyOnly => sq_dist(anchor, &project(item, v)),
        ScoringMode::ShortOnly | ScoringMode::NoProjection => sq_dist(anchor, item),
        ScoringMode::DotProduct => -dot(anchor, &project(item, v)),
    }
}

pub fn dissimilarity(p: &[f64], s: &[f64], item: &[f64], v: &[f64], mode: ScoringMode) -> f64 {
    score_against(&anchor(p, s, v, mode), item, v, mode)
}

/// Scores every catalog item; items in `mask` get `+inf` and so never rank.
pub fn score_catalog(
    p: &[f64],
    s: &[f64],
    v: &[f64],
    items: &Tensor,
    mask: &[ItemId],
    mode: ScoringMode,
) -> Vec<f64> {
    let a = anchor(p, s, v, mode);
    let mut scores: Vec<f64> = (0..items.rows())
        .map(|r| score_against(&a, items.row(r), v, mode))
        .collect();
    for m in mask {
        scores[m.index()] = f64::INFINITY;
    }
    scores
}

/// Graph form of [`hyperplane_normal`].
pub fn build_normal(g: &mut Graph, params: &ModelParams, pi: Var, phase: Phase) -> Result<Var> {
    let normals = g.param(params.ids.normals);
    let combined = g.matmul(pi, normals)?;
    let mut n = g.l2_norm(combined);
    match phase {
        Phase::Train => n = g.add_const(n, TRAIN_EPS),
        Phase::Infer => {
            let val = g.scalar(n);
            if val < 1e-12 {
                return Err(Error::Degenerate(val));
            }
        }
    }
    g.div_scalar(combined, n)
}

/// Row-wise `x - (x . v) v`.
pub fn build_project(g: &mut Graph, x: Var, v: Var) -> Result<Var> {
    let c = g.matmul_t(x, v)?;
    let along = g.matmul(c, v)?;
    g.sub(x, along)
}

/// Session-side vectors a scoring mode needs; absent parts are `None`.
#[derive(Clone, Copy, Debug)]
pub struct SessionVars {
    pub p: Option<Var>,
    pub s: Option<Var>,
    pub v: Option<Var>,
}

/// Scores of `candidates` (an `M x d` node) as an `M x 1` column.
pub fn build_scores(g: &mut Graph, rep: SessionVars, candidates: Var, mode: ScoringMode) -> Result<Var> {
    let need = |x: Option<Var>, what: &str| {
        x.ok_or_else(|| Error::Contract(format!("{what} missing for mode {mode}")))
    };
    match mode {
        ScoringMode::Full | ScoringMode::DotProduct => {
            let (p, s, v) = (need(rep.p, "proxy")?, need(rep.s, "short-term")?, need(rep.v, "normal")?);
            let s_perp = build_project(g, s, v)?;
            let anchor = g.add(p, s_perp)?;
            let items = build_project(g, candidates, v)?;
            if mode == ScoringMode::Full {
                g.sq_dist_rows(items, anchor)
            } else {
                let d = g.matmul_t(items, anchor)?;
                Ok(g.scale(d, -1.0))
            }
        }
        ScoringMode::ProxyOnly => {
            let (p, v) = (need(rep.p, "proxy")?, need(rep.v, "normal")?);
            let items = build_project(g, candidates, v)?;
            g.sq_dist_rows(items, p)
        }
        ScoringMode::ShortOnly => {
            let s = need(rep.s, "short-term")?;
            g.sq_dist_rows(candidates, s)
        }
        ScoringMode::NoProjection => {
            let (p, s) = (need(rep.p, "proxy")?, need(rep.s, "short-term")?);
            let anchor = g.add(p, s)?;
            g.sq_dist_rows(candidates, anchor)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    #[test]
    fn one_hot_normal() {
        let v = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        assert_eq!(hyperplane_normal(&[1.0, 0.0], &v).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn cancelling_normals() {
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(
            hyperplane_normal(&[0.5, 0.5], &v),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project(&[3.0, 4.0], &[1.0, 0.0]), vec![0.0, 4.0]);
        assert_eq!(project(&[2.5, 0.0], &[1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(project(&[0.0, 7.0], &[1.0, 0.0]), vec![0.0, 7.0]);
    }

    #[test]
    fn dissimilarity_examples() {
        let v = [1.0, 0.0];
        let d = dissimilarity(&[0.0, 1.0], &[3.0, 4.0], &[5.0, 6.0], &v, ScoringMode::Full);
        assert!((d - 1.0).abs() < 1e-15);
        // p + s_perp == item_perp
        let d = dissimilarity(&[0.0, 1.0], &[9.0, 1.0], &[-4.0, 2.0], &v, ScoringMode::Full);
        assert_eq!(d, 0.0);
        // projections are identities when v is orthogonal to s and the item
        let (p, s, i) = ([0.3, -0.2, 0.1], [0.0, 0.5, 0.2], [0.0, -0.1, 0.4]);
        let v3 = [1.0, 0.0, 0.0];
        let full = dissimilarity(&p, &s, &i, &v3, ScoringMode::Full);
        let nop = dissimilarity(&p, &s, &i, &v3, ScoringMode::NoProjection);
        assert!((full - nop).abs() < 1e-15);
    }

    #[test]
    fn modes_parse_and_display() {
        for m in ScoringMode::ALL {
            assert_eq!(m.as_str().parse::<ScoringMode>().unwrap(), m);
        }
        assert!("weighted".parse::<ScoringMode>().is_err());
    }

    #[test]
    fn catalog_mask_and_consistency() {
        let items = Tensor::from_rows(&[
            vec![0.1, 0.2],
            vec![-0.3, 0.5],
            vec![0.9, -0.1],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let (p, s, v) = ([0.2, 0.1], [0.3, -0.4], [0.6, 0.8]);
        for mode in ScoringMode::ALL {
            let scores = score_catalog(&p, &s, &v, &items, &[], mode);
            for r in 0..4 {
                assert_eq!(scores[r], dissimilarity(&p, &s, items.row(r), &v, mode));
            }
            let mask: Vec<ItemId> = [1, 2, 4].iter().map(|&i| ItemId(i)).collect();
            let masked = score_catalog(&p, &s, &v, &items, &mask, mode);
            let best = (0..4)
                .min_by(|&a, &b| masked[a].partial_cmp(&masked[b]).unwrap())
                .unwrap();
            assert_eq!(best, 2);
        }
    }

    #[test]
    fn graph_scores_match_plain() {
        let ps = ParamSet::new();
        let items = Tensor::from_rows(&[vec![0.1, 0.2, -0.3], vec![-0.3, 0.5, 0.05]]).unwrap();
        let (p, s) = ([0.2, 0.1, 0.0], [0.3, -0.4, 0.25]);
        let v = {
            let raw = [0.2, -0.5, 0.7];
            let n = norm(&raw);
            raw.map(|x| x / n)
        };
        for mode in ScoringMode::ALL {
            let mut g = Graph::new(&ps);
            let rep = SessionVars {
                p: Some(g.input(Tensor::row_vector(p.to_vec()))),
                s: Some(g.input(Tensor::row_vector(s.to_vec()))),
                v: Some(g.input(Tensor::row_vector(v.to_vec()))),
            };
            let c = g.input(items.clone());
            let out = build_scores(&mut g, rep, c, mode).unwrap();
            let plain = score_catalog(&p, &s, &v, &items, &[], mode);
            for (a, b) in g.value(out).data().iter().zip(&plain) {
                assert!((a - b).abs() < 1e-14, "{mode}: {a} vs {b}");
            }
        }
    }
}

use std::collections::BTreeMap;

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named leaf tensors, addressed by [`ParamId`] in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    AddScalar(Var, Var),
    MeanRows(Var),
    SumAll(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    SoftmaxRows(Var),
    RowNorms(Var),
    Norm(Var),
    SqDistRows(Var, Var),
    Dot(Var, Var),
    SelectRow(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Forward trace over a borrowed [`ParamSet`]. Every op appends a node whose
/// inputs precede it, so reverse iteration is a valid topological order.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    kinks: Option<Vec<f64>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            kinks: None,
        }
    }

    /// Records the inputs of every relu / leaky relu / abs node so callers can
    /// tell when a perturbation crosses a non-differentiable point.
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(Vec::new());
        self
    }

    pub fn kink_inputs(&self) -> &[f64] {
        self.kinks.as_deref().unwrap_or(&[])
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-param node carries a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.is_finite(), "non-finite output of {op:?}");
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn gather(&mut self, id: ParamId, rows: Vec<usize>) -> Result<Var> {
        let table = self.params.get(id);
        if let Some(&bad) = rows.iter().find(|&&r| r >= table.rows()) {
            return Err(Error::Contract(format!(
                "row {bad} out of range for {} ({} rows)",
                self.params.name(id),
                table.rows()
            )));
        }
        let value = table.gather_rows(&rows);
        Ok(self.push(Op::Gather(id, rows), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(Op::MatMulT(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    fn check_scalar(&self, s: Var, op: &'static str) -> Result<()> {
        let shape = self.value(s).shape();
        if shape != [1, 1] {
            return Err(Error::Dimension {
                op,
                lhs: shape,
                rhs: [1, 1],
            });
        }
        Ok(())
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check_scalar(s, "mul_scalar")?;
        let k = self.scalar(s);
        let v = self.value(a).scale(k);
        Ok(self.push(Op::MulScalar(a, s), v))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check_scalar(s, "div_scalar")?;
        let k = self.scalar(s);
        let v = self.value(a).map(|x| x / k);
        Ok(self.push(Op::DivScalar(a, s), v))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check_scalar(s, "add_scalar")?;
        let k = self.scalar(s);
        let v = self.value(a).map(|x| x + k);
        Ok(self.push(Op::AddScalar(a, s), v))
    }

    /// Mean over the row axis, giving a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    fn track(&mut self, a: Var) {
        if let Some(k) = self.kinks.as_mut() {
            let node = &self.nodes[a.0];
            let t = match node.op {
                Op::Param(id) => self.params.get(id),
                _ => node.value.as_ref().unwrap(),
            };
            k.extend_from_slice(t.data());
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.track(a);
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.track(a);
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.track(a);
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v)
    }

    /// L2 norm of every row, as an `r x 1` column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_vec(t.rows(), 1, t.row_norms()).unwrap();
        self.push(Op::RowNorms(a), v)
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(Op::Norm(a), v)
    }

    /// Squared L2 distance from each row of `a` to the single row `b`, as an
    /// `r x 1` column.
    pub fn sq_dist_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || ta.cols() != tb.cols() {
            return Err(Error::Dimension {
                op: "sq_dist_rows",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let d: Vec<f64> = (0..ta.rows())
            .map(|r| {
                ta.row(r)
                    .iter()
                    .zip(tb.row(0))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        let v = Tensor::from_vec(ta.rows(), 1, d).unwrap();
        Ok(self.push(Op::SqDistRows(a, b), v))
    }

    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).dot(self.value(b))?);
        Ok(self.push(Op::Dot(a, b), v))
    }

    pub fn select_row(&mut self, a: Var, r: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(Error::Contract(format!("row {r} of {:?}", t.shape())));
        }
        let v = t.select_row(r);
        Ok(self.push(Op::SelectRow(a, r), v))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(Error::Contract(format!(
                "rows {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let v = t.slice_rows(start, end);
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape(),
                    rhs: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let shape = self.value(output).shape();
        if shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.as_ref();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_dense(*id, &g),
                Op::Gather(id, rows) => {
                    for (k, &r) in rows.iter().enumerate() {
                        out.accumulate_row(*id, r, g.row(k));
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.mean_rows().scale(g.rows() as f64));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.scale(*k)),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = dot(g.data(), self.value(*a).data());
                    acc(&mut grads, *s, Tensor::scalar(gs));
                    acc(&mut grads, *a, g.scale(k));
                }
                Op::DivScalar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = -dot(g.data(), self.value(*a).data()) / (k * k);
                    acc(&mut grads, *s, Tensor::scalar(gs));
                    acc(&mut grads, *a, g.scale(1.0 / k));
                }
                Op::AddScalar(a, s) => {
                    acc(&mut grads, *s, Tensor::scalar(g.sum()));
                    acc(&mut grads, *a, g);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let row = g.scale(1.0 / n as f64);
                    let mut ga = Tensor::zeros(n, row.cols());
                    for r in 0..n {
                        ga.row_mut(r).copy_from_slice(row.data());
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let [r, c] = self.value(*a).shape();
                    let k = g.item();
                    acc(&mut grads, *a, Tensor::filled_with(r, c, || k));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, mask_mul(&g, x, |v| if v > 0.0 { 1.0 } else { 0.0 }));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let s = *slope;
                    acc(&mut grads, *a, mask_mul(&g, x, |v| if v > 0.0 { 1.0 } else { s }));
                }
                Op::Abs(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, mask_mul(&g, x, |v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }));
                }
                Op::SoftmaxRows(a) => {
                    let y = y.unwrap();
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner = dot(yr, gr);
                        for (o, (yv, gv)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - inner);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowNorms(a) => {
                    let x = self.value(*a);
                    let n = y.unwrap();
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let nr = n.get(r, 0);
                        if nr > 0.0 {
                            let k = g.get(r, 0) / nr;
                            for (o, v) in ga.row_mut(r).iter_mut().zip(x.row(r)) {
                                *o = k * v;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Norm(a) => {
                    let n = y.unwrap().item();
                    let x = self.value(*a);
                    let ga = if n > 0.0 {
                        x.scale(g.item() / n)
                    } else {
                        Tensor::zeros(x.rows(), x.cols())
                    };
                    acc(&mut grads, *a, ga);
                }
                Op::SqDistRows(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    let mut gb = Tensor::zeros(1, tb.cols());
                    for r in 0..ta.rows() {
                        let k = 2.0 * g.get(r, 0);
                        for (c, (&xa, &xb)) in ta.row(r).iter().zip(tb.row(0)).enumerate() {
                            let d = k * (xa - xb);
                            ga.set(r, c, d);
                            gb.data_mut()[c] -= d;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Dot(a, b) => {
                    let k = g.item();
                    let ga = self.value(*b).scale(k);
                    let gb = self.value(*a).scale(k);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SelectRow(a, r) => {
                    let [rows, cols] = self.value(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.row_mut(*r).copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let [rows, cols] = self.value(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    let off = start * cols;
                    ga.data_mut()[off..off + g.data().len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        acc(&mut grads, p, g.slice_rows(offset, offset + r));
                        offset += r;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn mask_mul(g: &Tensor, x: &Tensor, d: impl Fn(f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(gv, &xv)| gv * d(xv)).collect();
    Tensor::from_vec(g.rows(), g.cols(), data).unwrap()
}

/// Gradient of one parameter: dense, or a sparse set of touched rows for
/// lookup tables reached only through `gather`.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Tensor),
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl ParamGrad {
    pub fn to_dense(&self, rows: usize, cols: usize) -> Tensor {
        match self {
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::Rows(map) => {
                let mut t = Tensor::zeros(rows, cols);
                for (&r, v) in map {
                    t.row_mut(r).copy_from_slice(v);
                }
                t
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        match self {
            ParamGrad::Dense(t) => dot(t.data(), t.data()),
            ParamGrad::Rows(map) => map.values().map(|v| dot(v, v)).sum(),
        }
    }

    /// Visits every stored `(row, values)` pair in row order.
    pub fn for_each_row(&self, cols: usize, mut f: impl FnMut(usize, &[f64])) {
        match self {
            ParamGrad::Dense(t) => {
                debug_assert_eq!(t.cols(), cols);
                for r in 0..t.rows() {
                    f(r, t.row(r));
                }
            }
            ParamGrad::Rows(map) => {
                for (&r, v) in map {
                    f(r, v);
                }
            }
        }
    }
}

/// Per-parameter gradients from one or more backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.grads[id.0].as_ref()
    }

    pub fn dense(&self, params: &ParamSet, id: ParamId) -> Tensor {
        let [r, c] = params.get(id).shape();
        self.get(id)
            .map(|g| g.to_dense(r, c))
            .unwrap_or_else(|| Tensor::zeros(r, c))
    }

    fn accumulate_dense(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.grads[id.0] {
            Some(ParamGrad::Dense(t)) => {
                for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            Some(ParamGrad::Rows(map)) => {
                let mut t = g.clone();
                for (&r, v) in map.iter() {
                    for (a, b) in t.row_mut(r).iter_mut().zip(v) {
                        *a += b;
                    }
                }
                self.grads[id.0] = Some(ParamGrad::Dense(t));
            }
            slot @ None => *slot = Some(ParamGrad::Dense(g.clone())),
        }
    }

    fn accumulate_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        match &mut self.grads[id.0] {
            Some(ParamGrad::Dense(t)) => {
                for (a, b) in t.row_mut(row).iter_mut().zip(g) {
                    *a += b;
                }
            }
            Some(ParamGrad::Rows(map)) => match map.get_mut(&row) {
                Some(v) => {
                    for (a, b) in v.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    map.insert(row, g.to_vec());
                }
            },
            slot @ None => {
                let mut map = BTreeMap::new();
                map.insert(row, g.to_vec());
                *slot = Some(ParamGrad::Rows(map));
            }
        }
    }

    /// Adds `other` into `self`. Callers reduce in a fixed order so results
    /// are bit-reproducible.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            let id = ParamId(i);
            match g {
                None => {}
                Some(ParamGrad::Dense(t)) => self.accumulate_dense(id, t),
                Some(ParamGrad::Rows(map)) => {
                    for (&r, v) in map {
                        self.accumulate_row(id, r, v);
                    }
                }
            }
        }
    }

    pub fn norm(&self, id: ParamId) -> f64 {
        self.get(id).map_or(0.0, |g| g.sq_norm().sqrt())
    }

    pub fn total_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(ParamGrad::sq_norm)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: Vec<f64>) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::row_vector(x));
        (ps, id)
    }

    #[test]
    fn square_gradient() {
        let (ps, id) = single(vec![3.0]);
        let mut g = Graph::new(&ps);
        let x = g.param(id);
        let y = g.inner(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.dense(&ps, id).data(), &[6.0]);
    }

    #[test]
    fn squared_norm_gradient() {
        let (ps, id) = single(vec![1.0, 2.0]);
        let mut g = Graph::new(&ps);
        let x = g.param(id);
        let n = g.l2_norm(x);
        let y = g.inner(n, n).unwrap();
        let grads = g.backward(y).unwrap();
        let d = grads.dense(&ps, id);
        assert!((d.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((d.get(0, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let (ps, id) = single(vec![1.0, 2.0]);
        let mut g = Graph::new(&ps);
        let x = g.param(id);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x, 0.1);
        assert!((g.scalar(y) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn kinks_take_left_derivative() {
        let (ps, id) = single(vec![0.0]);
        let mut g = Graph::new(&ps);
        let x = g.param(id);
        let r = g.relu(x);
        let l = g.leaky_relu(x, 0.1);
        let a = g.abs(x);
        let s1 = g.add(r, l).unwrap();
        let s = g.add(s1, a).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.dense(&ps, id).data(), &[0.1]);
    }

    #[test]
    fn gather_produces_sparse_rows_and_merges() {
        let mut ps = ParamSet::new();
        let id = ps.add("table", Tensor::filled_with(5, 2, || 1.0));
        let mut g = Graph::new(&ps);
        let rows = g.gather(id, vec![3, 1, 3]).unwrap();
        let s = g.sum(rows);
        let grads = g.backward(s).unwrap();
        match grads.get(id).unwrap() {
            ParamGrad::Rows(map) => {
                assert_eq!(map.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
                assert_eq!(map[&3], vec![2.0, 2.0]);
            }
            other => panic!("expected sparse rows, got {other:?}"),
        }
        let mut total = grads.clone();
        total.merge(&grads);
        assert_eq!(total.dense(&ps, id).get(3, 1), 4.0);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let (ps, id) = single(vec![1.0, 2.0]);
        let mut g = Graph::new(&ps);
        let x = g.param(id);
        let y = g.scale(x, 3.0);
        let c = g.concat_rows(&[x, y]).unwrap();
        let bottom = g.slice_rows(c, 1, 2).unwrap();
        let top = g.select_row(c, 0).unwrap();
        let both = g.add(bottom, top).unwrap();
        let s = g.sum(both);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.dense(&ps, id).data(), &[4.0, 4.0]);
    }
}

//! A small reverse-mode tape over `f64` vectors.
//!
//! Parameters live in a [`ParamStore`] and are referenced by id from the ops
//! that consume them; the tape only stores intermediate vectors. Calling
//! [`Tape::backward`] accumulates parameter gradients into a [`Grads`] buffer
//! laid out like the store.

use std::collections::HashMap;

use rand::Rng;

use crate::sampling::{self, GumbelSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named, shaped parameter arrays in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> ParamId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "parameter {name} data does not match its shape"
        );
        assert!(!self.lookup.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.lookup.insert(name.to_string(), id);
        id
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            data: store.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Linear { x: Var, w: ParamId, b: Option<ParamId> },
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    /// Forward value is fixed; the gradient passes to `soft` unchanged.
    StraightThrough { soft: Var },
    Mean(Vec<Var>),
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Bce { probs: Var, target: Vec<f64> },
    MultiHead {
        x: Var,
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        hidden: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Clamp for probabilities entering a log.
pub const PROB_EPS: f64 = 1e-12;

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// `x · W + b` with `W` stored row-major as `[in, out]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let entry = self.params.entry(w);
        let (rows, cols) = (entry.shape[0], entry.shape[1]);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), rows, "linear input width for {}", entry.name);
        let mut out = match b {
            Some(b) => self.params.get(b).to_vec(),
            None => vec![0.0; cols],
        };
        let wd = &entry.data;
        for (i, &xi) in xv.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &wd[i * cols..(i + 1) * cols];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(v, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * factor).collect();
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sampling::sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|p| self.value(*p).iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = sampling::softmax(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// Forward `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Vec<f64>) -> Var {
        assert_eq!(hard.len(), self.value(soft).len());
        self.push(hard, Op::StraightThrough { soft })
    }

    /// Gumbel-Softmax over `logits` with fresh noise; returns the forward
    /// sample node and the sampled class.
    pub fn gumbel_softmax<R: Rng + ?Sized>(
        &mut self,
        logits: Var,
        tau: f64,
        hard: bool,
        rng: &mut R,
    ) -> (Var, usize) {
        let noise = sampling::gumbel_noise(self.value(logits).len(), rng);
        self.gumbel_softmax_with_noise(logits, &noise, tau, hard)
    }

    pub fn gumbel_softmax_with_noise(
        &mut self,
        logits: Var,
        noise: &[f64],
        tau: f64,
        hard: bool,
    ) -> (Var, usize) {
        let sample: GumbelSample =
            sampling::gumbel_softmax_with_noise(self.value(logits), noise, tau, hard);
        let g = self.input(noise.to_vec());
        let shifted = self.add(logits, g);
        let scaled = self.scale(shifted, 1.0 / tau);
        let soft = self.softmax(scaled);
        if hard {
            let v = sample.value();
            (self.straight_through(soft, v), sample.index)
        } else {
            (soft, sample.index)
        }
    }

    /// Elementwise mean of equal-width vectors.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).len();
        let mut v = vec![0.0; n];
        for p in parts {
            for (o, x) in v.iter_mut().zip(self.value(*p)) {
                *o += x;
            }
        }
        let k = parts.len() as f64;
        v.iter_mut().for_each(|x| *x /= k);
        self.push(v, Op::Mean(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().sum();
        self.push(vec![total], Op::Sum(a))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        self.push(vec![total], Op::WeightedSum(terms.to_vec()))
    }

    /// Categorical cross-entropy of `softmax(logits)` against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - l[target];
        let probs = sampling::softmax(l);
        self.push(
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    pub fn bce(&mut self, probs: Var, target: &[f64]) -> Var {
        let p = self.value(probs);
        assert_eq!(p.len(), target.len());
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        self.push(
            vec![loss],
            Op::Bce {
                probs,
                target: target.to_vec(),
            },
        )
    }

    /// `M` independent two-layer heads on a shared input, one logit each.
    /// Shapes: `w1 [M, I, D]`, `b1 [M, D]`, `w2 [M, D]`, `b2 [M]`.
    pub fn multi_head(&mut self, x: Var, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId) -> Var {
        let shape = &self.params.entry(w1).shape;
        let (m, inp, d) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        assert_eq!(xv.len(), inp);
        let (w1v, b1v, w2v, b2v) = (
            self.params.get(w1),
            self.params.get(b1),
            self.params.get(w2),
            self.params.get(b2),
        );
        let mut hidden = b1v.to_vec();
        let mut out = b2v.to_vec();
        for head in 0..m {
            let h = &mut hidden[head * d..(head + 1) * d];
            let w = &w1v[head * inp * d..(head + 1) * inp * d];
            for (i, &xi) in xv.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (hj, &wij) in h.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                    *hj += xi * wij;
                }
            }
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            out[head] += h
                .iter()
                .zip(&w2v[head * d..(head + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        self.push(
            out,
            Op::MultiHead {
                x,
                w1,
                b1,
                w2,
                b2,
                hidden,
            },
        )
    }

    /// Backpropagates d(root)/d(params), scaled by `seed`, into `grads`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(vec![seed]);
        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let entry = self.params.entry(*w);
                    let cols = entry.shape[1];
                    let xv = self.value(*x);
                    if let Some(b) = b {
                        for (gb, gi) in grads.get_mut(*b).iter_mut().zip(&g) {
                            *gb += gi;
                        }
                    }
                    let gw = grads.get_mut(*w);
                    for (i, &xi) in xv.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        for (gwij, gj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(&g) {
                            *gwij += xi * gj;
                        }
                    }
                    if self.needs_grad(*x) {
                        let wd = &entry.data;
                        let gx: Vec<f64> = (0..xv.len())
                            .map(|i| {
                                wd[i * cols..(i + 1) * cols]
                                    .iter()
                                    .zip(&g)
                                    .map(|(w, g)| w * g)
                                    .sum()
                            })
                            .collect();
                        accumulate(&mut adj, *x, &gx);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |g, y| g * y);
                    let gb = zip_map(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::OneMinus(a) => {
                    let ga: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * f).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut adj, *p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let ga = zip_map(&g, y, |g, y| y * (g - dot));
                    accumulate(&mut adj, *a, &ga);
                }
                Op::StraightThrough { soft } => accumulate(&mut adj, *soft, &g),
                Op::Mean(parts) => {
                    let k = parts.len() as f64;
                    let ga: Vec<f64> = g.iter().map(|v| v / k).collect();
                    for p in parts {
                        accumulate(&mut adj, *p, &ga);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut adj, *a, &vec![g[0]; n]);
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        if *w != 0.0 {
                            accumulate(&mut adj, *v, &[g[0] * w]);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let mut ga: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    ga[*target] -= g[0];
                    accumulate(&mut adj, *logits, &ga);
                }
                Op::Bce { probs, target } => {
                    let p = self.value(*probs);
                    let n = p.len() as f64;
                    let ga: Vec<f64> = p
                        .iter()
                        .zip(target)
                        .map(|(&p, &t)| {
                            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                                0.0
                            } else {
                                g[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n
                            }
                        })
                        .collect();
                    accumulate(&mut adj, *probs, &ga);
                }
                Op::MultiHead {
                    x,
                    w1,
                    b1,
                    w2,
                    b2,
                    hidden,
                } => self.backward_multi_head(&mut adj, grads, &g, *x, [*w1, *b1, *w2, *b2], hidden),
            }
        }
    }

    fn backward_multi_head(
        &self,
        adj: &mut [Option<Vec<f64>>],
        grads: &mut Grads,
        g: &[f64],
        x: Var,
        [w1, b1, w2, b2]: [ParamId; 4],
        hidden: &[f64],
    ) {
        let shape = &self.params.entry(w1).shape;
        let (m, inp, d) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let w1v = self.params.get(w1);
        let w2v = self.params.get(w2);
        let want_x = self.needs_grad(x);
        let mut gx = vec![0.0; inp];
        let mut dh = vec![0.0; d];
        for head in 0..m {
            let go = g[head];
            if go == 0.0 {
                continue;
            }
            grads.get_mut(b2)[head] += go;
            let h = &hidden[head * d..(head + 1) * d];
            {
                let gw2 = &mut grads.get_mut(w2)[head * d..(head + 1) * d];
                for (gw, hv) in gw2.iter_mut().zip(h) {
                    *gw += go * hv;
                }
            }
            for j in 0..d {
                dh[j] = if h[j] > 0.0 { go * w2v[head * d + j] } else { 0.0 };
            }
            {
                let gb1 = &mut grads.get_mut(b1)[head * d..(head + 1) * d];
                for (gb, v) in gb1.iter_mut().zip(&dh) {
                    *gb += v;
                }
            }
            let base = head * inp * d;
            {
                let gw1 = &mut grads.get_mut(w1)[base..base + inp * d];
                for (i, &xi) in xv.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (gw, v) in gw1[i * d..(i + 1) * d].iter_mut().zip(&dh) {
                        *gw += xi * v;
                    }
                }
            }
            if want_x {
                let w = &w1v[base..base + inp * d];
                for (i, gxi) in gx.iter_mut().enumerate() {
                    *gxi += w[i * d..(i + 1) * d]
                        .iter()
                        .zip(&dh)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        if want_x {
            accumulate(adj, x, &gx);
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise width mismatch");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> (ParamStore, [ParamId; 6]) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamStore::new();
        let mut rand = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = p.add("w", &[3, 4], rand(12));
        let b = p.add("b", &[4], rand(4));
        let w1 = p.add("h.w1", &[2, 4, 3], rand(24));
        let b1 = p.add("h.b1", &[2, 3], rand(6));
        let w2 = p.add("h.w2", &[2, 3], rand(6));
        let b2 = p.add("h.b2", &[2], rand(2));
        (p, [w, b, w1, b1, w2, b2])
    }

    fn objective(p: &ParamStore, ids: [ParamId; 6], grads: Option<&mut Grads>) -> f64 {
        let [w, b, w1, b1, w2, b2] = ids;
        let mut t = Tape::new(p);
        let x = t.input(vec![0.3, -1.2, 0.8]);
        let y = t.linear(x, w, Some(b));
        let a = t.tanh(y);
        let s = t.sigmoid(y);
        let m = t.mul(a, s);
        let om = t.one_minus(m);
        let sm = t.softmax(om);
        let heads = t.multi_head(sm, w1, b1, w2, b2);
        let probs = t.sigmoid(heads);
        let bce = t.bce(probs, &[1.0, 0.0]);
        let ce = t.cross_entropy(y, 2);
        let r = t.relu(y);
        let c = t.concat(&[r, a]);
        let mean = t.mean(&[c, c]);
        let sc = t.scale(mean, 0.5);
        let ce2 = t.cross_entropy(sc, 5);
        let total = t.weighted_sum(&[(bce, 1.0), (ce, 0.7), (ce2, 0.3)]);
        if let Some(g) = grads {
            t.backward(total, 1.0, g);
        }
        t.scalar(total)
    }

    #[test]
    fn gradients_match_central_differences() {
        let (mut p, ids) = store();
        let mut g = Grads::zeros_like(&p);
        objective(&p, ids, Some(&mut g));
        let eps = 1e-6;
        for id in ids {
            for k in 0..p.get(id).len() {
                let orig = p.get(id)[k];
                p.get_mut(id)[k] = orig + eps;
                let up = objective(&p, ids, None);
                p.get_mut(id)[k] = orig - eps;
                let down = objective(&p, ids, None);
                p.get_mut(id)[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = g.get(id)[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "{} [{k}]: {analytic} vs {numeric}",
                    p.entry(id).name
                );
            }
        }
    }

    #[test]
    fn straight_through_passes_soft_gradient() {
        // f(y) = sum_i c_i y_i over a Gumbel-Softmax sample of fixed noise
        let mut p = ParamStore::new();
        let w = p.add("w", &[1, 4], vec![0.4, -0.3, 1.1, 0.2]);
        let noise = [0.3, -0.8, 0.1, 1.4];
        let coef = [0.5, -1.5, 2.0, 0.25];
        let tau = 0.8;
        let run = |p: &ParamStore, hard: bool, grads: Option<&mut Grads>| -> f64 {
            let mut t = Tape::new(p);
            let one = t.input(vec![1.0]);
            let logits = t.linear(one, w, None);
            let (y, _) = t.gumbel_softmax_with_noise(logits, &noise, tau, hard);
            let c = t.input(coef.to_vec());
            let prod = t.mul(y, c);
            let total = t.sum(prod);
            if let Some(g) = grads {
                t.backward(total, 1.0, g);
            }
            t.scalar(total)
        };
        let mut g = Grads::zeros_like(&p);
        let hard_value = run(&p, true, Some(&mut g));
        let idx = sampling::argmax(&[0.7, -1.1, 1.2, 1.6]);
        assert_eq!(hard_value, coef[idx]);
        let eps = 1e-6;
        for k in 0..4 {
            let orig = p.get(w)[k];
            p.get_mut(w)[k] = orig + eps;
            let up = run(&p, false, None);
            p.get_mut(w)[k] = orig - eps;
            let down = run(&p, false, None);
            p.get_mut(w)[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = g.get(w)[k];
            assert!(
                (numeric - analytic).abs() <= 1e-4 * numeric.abs().max(analytic.abs()).max(1e-8),
                "{k}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn zero_weight_terms_receive_no_gradient() {
        let (p, [w, b, ..]) = store();
        let mut t = Tape::new(&p);
        let x = t.input(vec![1.0, 2.0, 3.0]);
        let y = t.linear(x, w, Some(b));
        let ce = t.cross_entropy(y, 0);
        let other = t.input(vec![2.0]);
        let total = t.weighted_sum(&[(ce, 0.0), (other, 1.0)]);
        let mut g = Grads::zeros_like(&p);
        t.backward(total, 1.0, &mut g);
        assert!(g.get(w).iter().all(|&v| v == 0.0));
    }
}

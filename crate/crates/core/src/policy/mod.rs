//! Action-masked feedforward policy with a softmax head.
//!
//! Each action's input is the block vector `φ(x,a)` of `k` slots of width
//! `d`, where slot `a` holds `x ⊙ f_a`. The sigmoid policy layers are shared
//! across actions; the score of `a` is `wᵀΦ(x,a)`. With no hidden layers the
//! score is linear in `φ`.

mod train;

use serde::{Deserialize, Serialize};

pub use train::{train, validation_loss, TrainConfig, TrainSummary};

use crate::dataset::{LoggedDataset, LoggedRecord};
use crate::error::{Error, Result};
use crate::relevance::FeatureMasks;
use crate::util::{argmax, json_digest, softmax_into, Rng};

/// Floor applied to `h(A|X)` inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    pub d: usize,
    pub k: usize,
    pub masks: FeatureMasks,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl PolicyArchitecture {
    pub fn new(masks: FeatureMasks, hidden_layers: Vec<usize>, seed: u64) -> Result<Self> {
        if hidden_layers.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        Ok(PolicyArchitecture {
            d: masks.d(),
            k: masks.k(),
            masks,
            hidden_layers,
            activation: Activation::Sigmoid,
            seed,
        })
    }

    pub fn depth(&self) -> usize {
        self.hidden_layers.len()
    }

    /// Digest of everything but the masks.
    pub fn setup_digest(&self) -> String {
        json_digest(&(self.d, self.k, &self.hidden_layers, self.activation, self.seed))
    }
}

/// `φ(x, a)`: length `d·k`, slot `a` holds `x ⊙ f_a`, other slots zero.
pub fn encode(x: &[f64], a: usize, masks: &FeatureMasks) -> Vec<f64> {
    let d = masks.d();
    let mut out = vec![0.0; d * masks.k()];
    for (i, (&v, &keep)) in x.iter().zip(masks.action(a)).enumerate() {
        if keep {
            out[a * d + i] = v;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpan {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    layers: Vec<LayerSpan>,
    head: usize,
    head_len: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &PolicyArchitecture) -> Self {
        let mut offset = 0;
        let mut inputs = arch.d * arch.k;
        let mut layers = Vec::with_capacity(arch.depth());
        for &outputs in &arch.hidden_layers {
            let w = offset;
            let b = w + inputs * outputs;
            offset = b + outputs;
            layers.push(LayerSpan {
                inputs,
                outputs,
                w,
                b,
            });
            inputs = outputs;
        }
        Layout {
            layers,
            head: offset,
            head_len: inputs,
            total: offset + inputs,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Scratch buffers reused across records.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `acts[a][l]`: output of policy layer `l` for action `a`.
    acts: Vec<Vec<Vec<f64>>>,
    scores: Vec<f64>,
    probs: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    arch: PolicyArchitecture,
    layout: Layout,
    params: Vec<f64>,
    /// Selected feature indices per action.
    active: Vec<Vec<usize>>,
}

impl PolicyNetwork {
    pub fn zeros(arch: PolicyArchitecture) -> Self {
        let layout = Layout::new(&arch);
        let active = (0..arch.k).map(|a| arch.masks.selected(a)).collect();
        PolicyNetwork {
            params: vec![0.0; layout.total],
            layout,
            arch,
            active,
        }
    }

    /// Uniform Xavier initialization of weights and the head; zero biases.
    pub fn xavier(arch: PolicyArchitecture, rng: &mut Rng) -> Self {
        use rand::Rng as _;
        let mut net = Self::zeros(arch);
        let spans = net.layout.layers.clone();
        for span in spans {
            let limit = (6.0 / (span.inputs + span.outputs) as f64).sqrt();
            for p in &mut net.params[span.w..span.b] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        let limit = (6.0 / (net.layout.head_len + 1) as f64).sqrt();
        let (head, end) = (net.layout.head, net.layout.total);
        for p in &mut net.params[head..end] {
            *p = rng.random_range(-limit..=limit);
        }
        net
    }

    pub fn architecture(&self) -> &PolicyArchitecture {
        &self.arch
    }

    pub fn k(&self) -> usize {
        self.arch.k
    }

    pub fn d(&self) -> usize {
        self.arch.d
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn head(&self) -> &[f64] {
        &self.params[self.layout.head..]
    }

    pub fn workspace(&self) -> Workspace {
        let k = self.arch.k;
        let widest = self
            .layout
            .layers
            .iter()
            .map(|l| l.outputs)
            .chain([self.layout.head_len])
            .max()
            .unwrap_or(0);
        Workspace {
            acts: vec![self.arch.hidden_layers.iter().map(|&w| vec![0.0; w]).collect(); k],
            scores: vec![0.0; k],
            probs: vec![0.0; k],
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }

    /// Scores `s_a` into `ws.scores` and probabilities into `ws.probs`.
    fn forward_ws(&self, x: &[f64], ws: &mut Workspace) {
        let d = self.arch.d;
        let p = &self.params;
        let head = &p[self.layout.head..];
        for a in 0..self.arch.k {
            let active = &self.active[a];
            if self.layout.layers.is_empty() {
                ws.scores[a] = active.iter().map(|&i| head[a * d + i] * x[i]).sum();
                continue;
            }
            for (l, span) in self.layout.layers.iter().enumerate() {
                let (before, rest) = ws.acts[a].split_at_mut(l);
                let out = &mut rest[0];
                for (o, y) in out.iter_mut().enumerate() {
                    let row = &p[span.w + o * span.inputs..span.w + (o + 1) * span.inputs];
                    let mut z = p[span.b + o];
                    if l == 0 {
                        for &i in active {
                            z += row[a * d + i] * x[i];
                        }
                    } else {
                        z += row.iter().zip(&before[l - 1]).map(|(w, v)| w * v).sum::<f64>();
                    }
                    *y = sigmoid(z);
                }
            }
            let last = ws.acts[a].last().expect("at least one layer");
            ws.scores[a] = head.iter().zip(last).map(|(w, v)| w * v).sum();
        }
        softmax_into(&ws.scores, &mut ws.probs);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.d {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.arch.d,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy input".into()));
        }
        Ok(())
    }

    fn check_params(&self) -> Result<()> {
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(())
    }

    /// Score vector `(wᵀΦ(x,a))_a`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_params()?;
        let mut ws = self.workspace();
        self.forward_ws(x, &mut ws);
        Ok(ws.scores)
    }

    /// `h(·|x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_params()?;
        let mut ws = self.workspace();
        self.forward_ws(x, &mut ws);
        Ok(ws.probs)
    }

    /// Action distributions for many contexts, sharing one workspace.
    pub fn forward_batch<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<Vec<f64>>> {
        self.check_params()?;
        let mut ws = self.workspace();
        xs.into_iter()
            .map(|x| {
                self.check_input(x)?;
                self.forward_ws(x, &mut ws);
                Ok(ws.probs.clone())
            })
            .collect()
    }

    /// `wᵀΦ` for an explicit, dense encoding `phi` of length `d·k`.
    pub fn score_encoding(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.arch.d * self.arch.k {
            return Err(Error::InvalidArgument("encoding has the wrong length".into()));
        }
        let mut input = phi.to_vec();
        for span in &self.layout.layers {
            input = (0..span.outputs)
                .map(|o| {
                    let row = &self.params[span.w + o * span.inputs..span.w + (o + 1) * span.inputs];
                    sigmoid(self.params[span.b + o] + row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>())
                })
                .collect();
        }
        Ok(self.head().iter().zip(&input).map(|(w, v)| w * v).sum())
    }

    /// `argmax_a h(a|x)`, lowest index on ties.
    pub fn recommend(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn penalty(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    /// Adds `coef · ∂(−log max(h(A|x), floor))/∂θ` into `grad` and returns
    /// `−log max(h(A|x), floor)`.
    fn accumulate(&self, x: &[f64], action: usize, coef: f64, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        self.forward_ws(x, ws);
        let h = ws.probs[action];
        let nll = -h.max(PROB_FLOOR).ln();
        if h < PROB_FLOOR || coef == 0.0 {
            return nll;
        }
        let d = self.arch.d;
        let head_off = self.layout.head;
        for a in 0..self.arch.k {
            let ds = coef * (ws.probs[a] - if a == action { 1.0 } else { 0.0 });
            if ds == 0.0 {
                continue;
            }
            let active = &self.active[a];
            if self.layout.layers.is_empty() {
                for &i in active {
                    grad[head_off + a * d + i] += ds * x[i];
                }
                continue;
            }
            let depth = self.layout.layers.len();
            let last = &ws.acts[a][depth - 1];
            let head = &self.params[head_off..];
            for (g, v) in grad[head_off..].iter_mut().zip(last) {
                *g += ds * v;
            }
            // δ at the output of the last policy layer, then back through each sigmoid.
            let width = self.layout.head_len;
            for j in 0..width {
                ws.delta[j] = ds * head[j] * last[j] * (1.0 - last[j]);
            }
            for l in (0..depth).rev() {
                let span = self.layout.layers[l];
                for o in 0..span.outputs {
                    grad[span.b + o] += ws.delta[o];
                }
                if l == 0 {
                    for o in 0..span.outputs {
                        let dz = ws.delta[o];
                        let row = span.w + o * span.inputs + a * d;
                        for &i in active {
                            grad[row + i] += dz * x[i];
                        }
                    }
                } else {
                    let input = &ws.acts[a][l - 1];
                    for v in ws.delta_next[..span.inputs].iter_mut() {
                        *v = 0.0;
                    }
                    for o in 0..span.outputs {
                        let dz = ws.delta[o];
                        let w_row = span.w + o * span.inputs;
                        for (i, inp) in input.iter().enumerate() {
                            grad[w_row + i] += dz * inp;
                            ws.delta_next[i] += dz * self.params[w_row + i];
                        }
                    }
                    for (i, inp) in input.iter().enumerate() {
                        ws.delta[i] = ws.delta_next[i] * inp * (1.0 - inp);
                    }
                }
            }
        }
        nll
    }

    /// Mean of `−w_j·r_j·log h(A_j|X_j)` over `records` plus `λ3·Σθ²`.
    pub fn loss(&self, records: &[LoggedRecord], weights: &[f64], lambda3: f64) -> Result<f64> {
        Ok(self.loss_and_gradient(records, weights, lambda3)?.0)
    }

    /// [`loss`](Self::loss) and its gradient with respect to the flat parameters.
    pub fn loss_and_gradient(
        &self,
        records: &[LoggedRecord],
        weights: &[f64],
        lambda3: f64,
    ) -> Result<(f64, Vec<f64>)> {
        if records.len() != weights.len() {
            return Err(Error::InvalidArgument("records and weights differ in length".into()));
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = self.workspace();
        let scale = 1.0 / records.len() as f64;
        let mut total = 0.0;
        for (r, &w) in records.iter().zip(weights) {
            let coef = w * r.reward;
            if coef == 0.0 {
                continue;
            }
            total += coef * self.accumulate(&r.x, r.action, coef * scale, &mut ws, &mut grad);
        }
        for (g, p) in grad.iter_mut().zip(&self.params) {
            *g += 2.0 * lambda3 * p;
        }
        Ok((total * scale + lambda3 * self.penalty(), grad))
    }

    pub fn digest(&self) -> String {
        crate::util::f64_digest(&self.params)
    }

    pub fn to_json(&self) -> NetworkJson {
        let layers = self
            .layout
            .layers
            .iter()
            .map(|span| LayerJson {
                w: (0..span.outputs)
                    .map(|o| self.params[span.w + o * span.inputs..span.w + (o + 1) * span.inputs].to_vec())
                    .collect(),
                b: self.params[span.b..span.b + span.outputs].to_vec(),
            })
            .collect();
        NetworkJson {
            architecture: self.arch.clone(),
            masks: self.arch.masks.clone(),
            layers,
            head_w: self.head().to_vec(),
        }
    }

    pub fn from_json(json: &NetworkJson) -> Result<Self> {
        let mut arch = json.architecture.clone();
        arch.masks = json.masks.clone();
        let arch = PolicyArchitecture::new(arch.masks, arch.hidden_layers, arch.seed)?;
        let mut net = Self::zeros(arch);
        if json.layers.len() != net.layout.layers.len() || json.head_w.len() != net.layout.head_len {
            return Err(Error::Schema("network layers do not match architecture".into()));
        }
        let spans = net.layout.layers.clone();
        for (span, layer) in spans.iter().zip(&json.layers) {
            if layer.w.len() != span.outputs
                || layer.b.len() != span.outputs
                || layer.w.iter().any(|r| r.len() != span.inputs)
            {
                return Err(Error::Schema("layer shape does not match architecture".into()));
            }
            for (o, row) in layer.w.iter().enumerate() {
                net.params[span.w + o * span.inputs..span.w + (o + 1) * span.inputs].copy_from_slice(row);
            }
            net.params[span.b..span.b + span.outputs].copy_from_slice(&layer.b);
        }
        let head = net.layout.head;
        net.params[head..].copy_from_slice(&json.head_w);
        net.check_params()?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub architecture: PolicyArchitecture,
    pub masks: FeatureMasks,
    pub layers: Vec<LayerJson>,
    pub head_w: Vec<f64>,
}

/// Records with positive `w·r`, their weights, and the full dataset size.
/// Only these records move the corrected loss.
pub(crate) fn rewarded(ds: &LoggedDataset, weights: &[f64]) -> (Vec<LoggedRecord>, Vec<f64>) {
    ds.records()
        .iter()
        .zip(weights)
        .filter(|(r, w)| r.reward * **w != 0.0)
        .map(|(r, w)| (r.clone(), *w))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn masks(rows: Vec<Vec<bool>>) -> FeatureMasks {
        FeatureMasks::new(rows).unwrap()
    }

    fn record(x: Vec<f64>, action: usize, reward: f64) -> LoggedRecord {
        LoggedRecord {
            x,
            action,
            reward,
            propensity: None,
        }
    }

    #[test]
    fn encoding_places_masked_context_in_its_slot() {
        let m = masks(vec![vec![true, false], vec![true, true]]);
        assert_eq!(encode(&[0.3, 0.7], 0, &m), vec![0.3, 0.0, 0.0, 0.0]);
        assert_eq!(encode(&[0.3, 0.7], 1, &m), vec![0.0, 0.0, 0.3, 0.7]);
        let m3 = FeatureMasks::all(3, 2);
        let phi = encode(&[0.3, 0.7], 1, &m3);
        assert_eq!(&phi[0..2], &[0.0, 0.0]);
        assert_eq!(&phi[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn zero_network_is_uniform_and_recommends_first_action() {
        let arch = PolicyArchitecture::new(FeatureMasks::all(4, 3), vec![5, 2], 0).unwrap();
        let net = PolicyNetwork::zeros(arch);
        let h = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        for p in &h {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(net.recommend(&[0.1, 0.2, 0.3]).unwrap(), 0);
    }

    #[test]
    fn zero_depth_matches_hand_softmax() {
        let m = masks(vec![vec![true, false], vec![true, true]]);
        let arch = PolicyArchitecture::new(m.clone(), vec![], 0).unwrap();
        let net = PolicyNetwork::xavier(arch, &mut seeded_rng(3));
        let x = [0.4, 0.9];
        let s: Vec<f64> = (0..2)
            .map(|a| {
                encode(&x, a, &m)
                    .iter()
                    .zip(net.head())
                    .map(|(u, v)| u * v)
                    .sum()
            })
            .collect();
        let want = crate::util::softmax(&s);
        for (p, q) in net.forward(&x).unwrap().iter().zip(&want) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_and_dense_scores_agree() {
        let m = masks(vec![vec![true, false, true], vec![false, true, true]]);
        let arch = PolicyArchitecture::new(m.clone(), vec![4, 3], 0).unwrap();
        let net = PolicyNetwork::xavier(arch, &mut seeded_rng(9));
        let x = [0.2, 0.5, 0.8];
        let s = net.scores(&x).unwrap();
        for (a, sa) in s.iter().enumerate() {
            let dense = net.score_encoding(&encode(&x, a, &m)).unwrap();
            assert!((sa - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_cases() {
        // h(A|X) = e^{-1}: k = 2, action 0 scores 0, action 1 scores ln(e − 1).
        let m = FeatureMasks::all(2, 1);
        let arch = PolicyArchitecture::new(m, vec![], 0).unwrap();
        let mut net = PolicyNetwork::zeros(arch);
        net.set_params(&[0.0, (std::f64::consts::E - 1.0).ln()]).unwrap();
        let r = [record(vec![1.0], 0, 1.0)];
        assert!((net.loss(&r, &[2.0], 0.0).unwrap() - 2.0).abs() < 1e-12);
        let zero = [record(vec![1.0], 0, 0.0), record(vec![0.5], 1, 0.0)];
        assert_eq!(net.loss(&zero, &[2.0, 3.0], 0.0).unwrap(), 0.0);
        // h(A|X) = 1 up to rounding.
        net.set_params(&[0.0, -800.0]).unwrap();
        assert!(net.loss(&r, &[2.0], 0.0).unwrap().abs() < 1e-300);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let arch = PolicyArchitecture::new(FeatureMasks::all(2, 2), vec![3], 0).unwrap();
        let net = PolicyNetwork::zeros(arch);
        assert!(net.forward(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = masks(vec![vec![true, false], vec![true, true], vec![false, true]]);
        let arch = PolicyArchitecture::new(m, vec![3, 2], 11).unwrap();
        let net = PolicyNetwork::xavier(arch, &mut seeded_rng(1));
        let text = serde_json::to_string(&net.to_json()).unwrap();
        let back = PolicyNetwork::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, net);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["layers"][0].get("W").is_some());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = masks(vec![vec![true, true, false], vec![false, true, true]]);
        let arch = PolicyArchitecture::new(m, vec![4, 3], 0).unwrap();
        let net = PolicyNetwork::xavier(arch, &mut seeded_rng(5));
        let recs = vec![
            record(vec![0.1, 0.9, 0.4], 0, 1.0),
            record(vec![0.7, 0.2, 0.6], 1, 0.5),
            record(vec![0.3, 0.3, 0.3], 1, 0.0),
        ];
        let w = [2.0, 1.5, 3.0];
        let (_, g) = net.loss_and_gradient(&recs, &w, 0.01).unwrap();
        let mut probe = net.clone();
        let eps = 1e-6;
        for j in 0..net.num_params() {
            let mut p = net.params().to_vec();
            p[j] += eps;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&recs, &w, 0.01).unwrap();
            p[j] -= 2.0 * eps;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&recs, &w, 0.01).unwrap();
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", g[j]);
        }
    }
}

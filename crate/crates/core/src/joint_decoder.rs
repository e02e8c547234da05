//! Joint LDPC–LDGM factor graph and flooding sum-product decoding.
//!
//! Variables are laid out as `[V_S | V_Q | V_R | dummies]` and factors as
//! `[C_S | C_R | Q]`. A one-bit Q node behaves exactly like a parity check
//! that also sees a constant dummy LLR ln((1−p_f)/p_f); the graph can be
//! built either with that constant folded into the factor or with an
//! explicit degree-one dummy variable.

use crate::ensembles::{LdgmCode, QuantizerSpec, TannerGraph};
use crate::quadrature::log_sum_exp;
use crate::{Bit, ChannelObservation, Error, RelayChannelParams, Result};

/// Default message magnitude limit.
pub const DEFAULT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub max_iters: usize,
    pub clamp: f64,
    pub early_stop: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            max_iters: 100,
            clamp: DEFAULT_CLAMP,
            early_stop: true,
        }
    }
}

/// How relay quantization enters the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizerLayer {
    /// One Q node per listened source bit with its own crossover.
    OneBit { p_f: Vec<f64> },
    /// One Q node per listened source bit over `bits_per_observation` V_Q nodes.
    Table { spec: QuantizerSpec, listened: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FactorKind {
    /// Parity check; `seed` is the LLR of a constant extra input.
    Check { seed: Option<f64> },
    /// Lookup-table Q node; the first edge is the source bit.
    Table,
}

/// Merged factor graph of the source LDPC code, the relay LDGM code and
/// the quantizer nodes that tie them together.
#[derive(Debug, Clone)]
pub struct JointFactorGraph {
    n_s: usize,
    k_r: usize,
    n_r: usize,
    n_dummy: usize,
    n_cs: usize,
    n_cr: usize,
    n_q: usize,
    factor_kind: Vec<FactorKind>,
    factor_start: Vec<usize>,
    edge_var: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    dummy_llr: Vec<f64>,
    table: Option<QuantizerSpec>,
    ldpc: TannerGraph,
    ldgm: TannerGraph,
}

impl JointFactorGraph {
    /// One-bit graph for a relay link; the first listen-length source bits
    /// get Q nodes with crossover `p_f`.
    pub fn build(ldpc: &TannerGraph, ldgm: &LdgmCode, params: &RelayChannelParams, p_f: f64) -> Result<Self> {
        if ldpc.n_var() != params.n_s {
            return Err(Error::DimensionMismatch(format!(
                "LDPC length {} but n_s = {}",
                ldpc.n_var(),
                params.n_s
            )));
        }
        if ldgm.k_r() != params.listen_len() || ldgm.n_r() != params.n_r {
            return Err(Error::DimensionMismatch(format!(
                "LDGM is {}→{} but f·n_s = {} and n_r = {}",
                ldgm.k_r(),
                ldgm.n_r(),
                params.listen_len(),
                params.n_r
            )));
        }
        Self::with_layer(
            ldpc,
            ldgm,
            QuantizerLayer::OneBit {
                p_f: vec![p_f; ldgm.k_r()],
            },
            false,
        )
    }

    /// Point-to-point LDPC decoding graph (no relay).
    pub fn point_to_point(ldpc: &TannerGraph) -> Self {
        let empty = LdgmCode::new(TannerGraph::from_edges(0, 0, Vec::new()).expect("empty graph"));
        Self::with_layer(ldpc, &empty, QuantizerLayer::OneBit { p_f: Vec::new() }, false).expect("consistent sizes")
    }

    /// General constructor. With `explicit_dummy`, one-bit Q nodes become
    /// three-edge checks on (V_S, V_Q, dummy).
    pub fn with_layer(ldpc: &TannerGraph, ldgm: &LdgmCode, layer: QuantizerLayer, explicit_dummy: bool) -> Result<Self> {
        let n_s = ldpc.n_var();
        let k_r = ldgm.k_r();
        let n_r = ldgm.n_r();
        let (n_q, bits) = match &layer {
            QuantizerLayer::OneBit { p_f } => (p_f.len(), 1),
            QuantizerLayer::Table { spec, listened } => (*listened, spec.bits_per_observation),
        };
        if n_q * bits != k_r {
            return Err(Error::DimensionMismatch(format!(
                "{n_q} Q nodes × {bits} bits do not cover k_r = {k_r}"
            )));
        }
        if n_q > n_s {
            return Err(Error::DimensionMismatch(format!("{n_q} Q nodes exceed n_s = {n_s}")));
        }
        if let QuantizerLayer::OneBit { p_f } = &layer {
            if let Some(p) = p_f.iter().find(|p| !(0.0..=0.5).contains(*p)) {
                return Err(Error::InvalidParameter(format!("p_f = {p} outside [0, 0.5]")));
            }
        }
        let v_q = n_s;
        let v_r = n_s + k_r;
        let v_d = n_s + k_r + n_r;

        let mut factor_kind = Vec::new();
        let mut factor_start = vec![0];
        let mut edge_var = Vec::new();
        let mut dummy_llr = Vec::new();
        let mut push = |kind: FactorKind, vars: &mut dyn Iterator<Item = usize>| {
            factor_kind.push(kind);
            edge_var.extend(vars);
            factor_start.push(edge_var.len());
        };

        for c in 0..ldpc.n_chk() {
            push(FactorKind::Check { seed: None }, &mut ldpc.chk_neighbors(c).iter().copied());
        }
        for c in 0..n_r {
            let mut vars = ldgm.graph.chk_neighbors(c).iter().map(|&v| v_q + v).chain([v_r + c]);
            push(FactorKind::Check { seed: None }, &mut vars);
        }
        let table = match layer {
            QuantizerLayer::OneBit { p_f } => {
                for (i, &p) in p_f.iter().enumerate() {
                    let l = dummy_constant(p);
                    if explicit_dummy {
                        let d = v_d + dummy_llr.len();
                        dummy_llr.push(l);
                        push(FactorKind::Check { seed: None }, &mut [i, v_q + i, d].into_iter());
                    } else {
                        let seed = Some(l);
                        push(FactorKind::Check { seed }, &mut [i, v_q + i].into_iter());
                    }
                }
                None
            }
            QuantizerLayer::Table { spec, listened } => {
                for i in 0..listened {
                    let mut vars = std::iter::once(i).chain((0..bits).map(|k| v_q + i * bits + k));
                    push(FactorKind::Table, &mut vars);
                }
                Some(spec)
            }
        };

        let n_vars = v_d + dummy_llr.len();
        let mut var_edges = vec![Vec::new(); n_vars];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[v].push(e);
        }
        Ok(JointFactorGraph {
            n_s,
            k_r,
            n_r,
            n_dummy: dummy_llr.len(),
            n_cs: ldpc.n_chk(),
            n_cr: n_r,
            n_q,
            factor_kind,
            factor_start,
            edge_var,
            var_edges,
            dummy_llr,
            table,
            ldpc: ldpc.clone(),
            ldgm: ldgm.graph.clone(),
        })
    }

    /// Replaces the crossovers of a one-bit quantizer layer in place.
    pub fn set_crossovers(&mut self, p_f: &[f64]) -> Result<()> {
        if self.table.is_some() {
            return Err(Error::InvalidParameter("graph has a table quantizer layer".into()));
        }
        if p_f.len() != self.n_q {
            return Err(Error::LengthMismatch {
                what: "crossover vector",
                expected: self.n_q,
                actual: p_f.len(),
            });
        }
        if let Some(p) = p_f.iter().find(|p| !(0.0..=0.5).contains(*p)) {
            return Err(Error::InvalidParameter(format!("p_f = {p} outside [0, 0.5]")));
        }
        let first = self.n_cs + self.n_cr;
        for (i, &p) in p_f.iter().enumerate() {
            let l = dummy_constant(p);
            if self.n_dummy > 0 {
                self.dummy_llr[i] = l;
            } else {
                self.factor_kind[first + i] = FactorKind::Check {
                    seed: Some(l),
                };
            }
        }
        Ok(())
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn k_r(&self) -> usize {
        self.k_r
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_q_nodes(&self) -> usize {
        self.n_q
    }

    pub fn n_dummies(&self) -> usize {
        self.n_dummy
    }

    pub fn n_vars(&self) -> usize {
        self.var_edges.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_kind.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_var.len()
    }

    /// (C_S, C_R, Q) factor counts.
    pub fn factor_counts(&self) -> (usize, usize, usize) {
        (self.n_cs, self.n_cr, self.n_q)
    }

    /// True for source bits observed by the relay.
    pub fn has_q(&self, source_bit: usize) -> bool {
        source_bit < self.n_q
    }

    /// Variables attached to factor `f`.
    pub fn factor_vars(&self, f: usize) -> &[usize] {
        &self.edge_var[self.factor_start[f]..self.factor_start[f + 1]]
    }

    /// Edge ids attached to variable `v`.
    pub fn var_edge_ids(&self, v: usize) -> &[usize] {
        &self.var_edges[v]
    }

    /// Edge ids of factor `f`.
    pub fn factor_edge_ids(&self, f: usize) -> std::ops::Range<usize> {
        self.factor_start[f]..self.factor_start[f + 1]
    }

    /// Dummy constants in Q-node order (explicit form only).
    pub fn dummy_llrs(&self) -> &[f64] {
        &self.dummy_llr
    }

    /// Full per-variable channel vector: llr_sd on V_S, 0 on V_Q, llr_rd on
    /// V_R and the dummy constants last.
    pub fn channel_vector(&self, llr_sd: &[f64], llr_rd: &[f64]) -> Result<Vec<f64>> {
        if llr_sd.len() != self.n_s {
            return Err(Error::LengthMismatch {
                what: "source-destination LLRs",
                expected: self.n_s,
                actual: llr_sd.len(),
            });
        }
        if llr_rd.len() != self.n_r {
            return Err(Error::LengthMismatch {
                what: "relay-destination LLRs",
                expected: self.n_r,
                actual: llr_rd.len(),
            });
        }
        let sanitize = |l: f64| if l.is_nan() { 0.0 } else { l.clamp(-1e12, 1e12) };
        let mut ch = Vec::with_capacity(self.n_vars());
        ch.extend(llr_sd.iter().map(|&l| sanitize(l)));
        ch.extend(std::iter::repeat_n(0.0, self.k_r));
        ch.extend(llr_rd.iter().map(|&l| sanitize(l)));
        ch.extend_from_slice(&self.dummy_llr);
        Ok(ch)
    }

    /// One flooding iteration: variable-to-factor then factor-to-variable.
    pub fn step(&self, state: &mut MessageState, channel: &[f64], clamp: f64) {
        for (v, edges) in self.var_edges.iter().enumerate() {
            if let [e] = edges[..] {
                // Exact extrinsic; total − own would round.
                state.v2c[e] = channel[v].clamp(-clamp, clamp);
                continue;
            }
            let total = channel[v] + edges.iter().map(|&e| state.c2v[e]).sum::<f64>();
            for &e in edges {
                state.v2c[e] = (total - state.c2v[e]).clamp(-clamp, clamp);
            }
        }
        let mut buf = Vec::new();
        for f in 0..self.n_factors() {
            let range = self.factor_edge_ids(f);
            match self.factor_kind[f] {
                FactorKind::Check { seed } => {
                    // Clamped like the message of an explicit dummy variable.
                    let t = seed.map_or(1.0, |l| (l.clamp(-clamp, clamp) / 2.0).tanh());
                    check_into(&state.v2c[range.clone()], t, clamp, &mut buf);
                }
                FactorKind::Table => {
                    let spec = self.table.as_ref().expect("table factors carry a spec");
                    buf = q_node_update_general(spec, &state.v2c[range.clone()]);
                    for x in buf.iter_mut() {
                        *x = x.clamp(-clamp, clamp);
                    }
                }
            }
            state.c2v[range].copy_from_slice(&buf);
        }
        state.iteration += 1;
    }

    /// Total LLR of every variable.
    pub fn beliefs(&self, state: &MessageState, channel: &[f64]) -> Vec<f64> {
        self.var_edges
            .iter()
            .enumerate()
            .map(|(v, edges)| channel[v] + edges.iter().map(|&e| state.c2v[e]).sum::<f64>())
            .collect()
    }

    fn hard(beliefs: &[f64], offset: usize, len: usize) -> Vec<Bit> {
        (offset..offset + len)
            .map(|v| {
                let l = beliefs[v];
                if l < 0.0 {
                    1
                } else if l > 0.0 {
                    0
                } else {
                    (v & 1) as Bit
                }
            })
            .collect()
    }

    /// Both component codes satisfied by the hard decisions.
    fn consistent(&self, b_s: &[Bit], b_q: &[Bit], b_r: &[Bit]) -> bool {
        if !self.ldpc.is_codeword(b_s) {
            return false;
        }
        (0..self.n_r).all(|c| self.ldgm.chk_neighbors(c).iter().fold(0u8, |a, &v| a ^ b_q[v]) == b_r[c])
    }

    /// Runs flooding BP from all-zero messages.
    pub fn decode(&self, llr_sd: &[f64], llr_rd: &[f64], cfg: &DecoderConfig) -> Result<DecodeOutput> {
        let channel = self.channel_vector(llr_sd, llr_rd)?;
        let mut state = MessageState::new(self);
        let mut out = None;
        for _ in 0..cfg.max_iters.max(1) {
            self.step(&mut state, &channel, cfg.clamp);
            let bel = self.beliefs(&state, &channel);
            let b_s = Self::hard(&bel, 0, self.n_s);
            let b_q = Self::hard(&bel, self.n_s, self.k_r);
            let b_r = Self::hard(&bel, self.n_s + self.k_r, self.n_r);
            let ok = self.consistent(&b_s, &b_q, &b_r);
            out = Some(DecodeOutput {
                b_s,
                b_q,
                b_r,
                converged: ok,
                iterations: state.iteration,
            });
            if ok && cfg.early_stop {
                break;
            }
        }
        Ok(out.expect("at least one iteration"))
    }

    /// Decodes using the destination-side parts of an observation.
    pub fn decode_observation(&self, obs: &ChannelObservation, cfg: &DecoderConfig) -> Result<DecodeOutput> {
        self.decode(&obs.llr_sd, &obs.llr_rd, cfg)
    }
}

/// Hard decisions and convergence report of one decode call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    pub b_s: Vec<Bit>,
    pub b_q: Vec<Bit>,
    pub b_r: Vec<Bit>,
    pub converged: bool,
    pub iterations: usize,
}

/// One LLR per directed edge in each direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub v2c: Vec<f64>,
    pub c2v: Vec<f64>,
    pub iteration: usize,
}

impl MessageState {
    pub fn new(graph: &JointFactorGraph) -> Self {
        MessageState {
            v2c: vec![0.0; graph.n_edges()],
            c2v: vec![0.0; graph.n_edges()],
            iteration: 0,
        }
    }
}

/// ln((1−p_f)/p_f); +∞ when p_f = 0.
pub fn dummy_constant(p_f: f64) -> f64 {
    ((1.0 - p_f) / p_f).ln()
}

fn guarded_atanh2(p: f64, clamp: f64) -> f64 {
    if p >= 1.0 {
        clamp
    } else if p <= -1.0 {
        -clamp
    } else {
        (2.0 * p.atanh()).clamp(-clamp, clamp)
    }
}

/// Check-node outputs via prefix/suffix tanh products; `seed` multiplies
/// every output as a constant virtual input.
fn check_into(incoming: &[f64], seed: f64, clamp: f64, out: &mut Vec<f64>) {
    let d = incoming.len();
    out.clear();
    out.resize(d, 0.0);
    let t: Vec<f64> = incoming.iter().map(|&w| (w / 2.0).tanh()).collect();
    let mut suffix = vec![seed; d + 1];
    for k in (0..d).rev() {
        suffix[k] = t[k] * suffix[k + 1];
    }
    let mut prefix = 1.0;
    for k in 0..d {
        out[k] = guarded_atanh2(prefix * suffix[k + 1], clamp);
        prefix *= t[k];
    }
}

/// Variable-node rule: channel plus all other incoming messages.
pub fn var_update(incoming: &[f64], channel_llr: f64) -> Vec<f64> {
    (0..incoming.len())
        .map(|e| {
            channel_llr
                + incoming
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != e)
                    .map(|(_, w)| w)
                    .sum::<f64>()
        })
        .collect()
}

/// Check-node rule with the default clamp.
pub fn chk_update(incoming: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    check_into(incoming, 1.0, DEFAULT_CLAMP, &mut out);
    out
}

/// One-bit Q node: 2·atanh((1−2p_f)·tanh(w/2)).
pub fn q_node_update(w_in: f64, p_f: f64) -> f64 {
    if p_f == 0.0 {
        return w_in;
    }
    guarded_atanh2((1.0 - 2.0 * p_f) * (w_in / 2.0).tanh(), DEFAULT_CLAMP)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// ln P(b = bit) for a message LLR = ln P(0)/P(1).
fn ln_prob(llr: f64, bit: usize) -> f64 {
    if bit == 0 {
        -softplus(-llr)
    } else {
        -softplus(llr)
    }
}

/// Sum-product marginalization of a lookup-table Q node. `incoming[0]` is
/// the source bit, the rest are its quantized bits (MSB first).
pub fn q_node_update_general(spec: &QuantizerSpec, incoming: &[f64]) -> Vec<f64> {
    let bits = spec.bits_per_observation;
    assert_eq!(incoming.len(), bits + 1, "table Q node needs 1 + bits incoming messages");
    let ln_g: Vec<[f64; 2]> = spec.table.iter().map(|r| [r[0].ln(), r[1].ln()]).collect();
    let label_bit = |u: usize, k: usize| (u >> (bits - 1 - k)) & 1;
    let mut out = Vec::with_capacity(bits + 1);
    for target in 0..=bits {
        let mut terms = [Vec::new(), Vec::new()];
        for (u, g) in ln_g.iter().enumerate() {
            for (v, &lg) in g.iter().enumerate() {
                if lg == f64::NEG_INFINITY {
                    continue;
                }
                let mut t = lg;
                if target != 0 {
                    t += ln_prob(incoming[0], v);
                }
                for k in 0..bits {
                    if target != k + 1 {
                        t += ln_prob(incoming[k + 1], label_bit(u, k));
                    }
                }
                let side = if target == 0 { v } else { label_bit(u, target - 1) };
                terms[side].push(t);
            }
        }
        let [a, b] = terms;
        out.push(log_sum_exp(a) - log_sum_exp(b));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_graph, DegreeProfile};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn var_update_examples() {
        assert_eq!(var_update(&[0.7], 1.5), vec![1.5]);
        assert_eq!(var_update(&[1.0, 2.0, 3.0], 0.0)[0], 5.0);
    }

    #[test]
    fn chk_update_examples() {
        let out = chk_update(&[0.0, 3.0, -2.0]);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 0.0);
        let inf = chk_update(&[f64::INFINITY, f64::INFINITY, 1.0]);
        assert!(inf[2] >= DEFAULT_CLAMP);
        let neg = chk_update(&[f64::INFINITY, f64::NEG_INFINITY, 1.0]);
        assert!(neg[2] <= -DEFAULT_CLAMP);
        let two = chk_update(&[2.0, 1.0]);
        let oracle = 2.0 * (1.0f64.tanh() * 0.5f64.tanh()).atanh();
        assert!((two[0] - 1.0).abs() < 1e-12);
        let three = chk_update(&[2.0, 1.0, 50.0]);
        assert!((three[2] - oracle).abs() < 1e-12);
        assert!((oracle - 0.735_325_664).abs() < 1e-8);
    }

    #[test]
    fn q_update_examples() {
        for w in [-3.0, 0.0, 2.5] {
            assert_eq!(q_node_update(w, 0.5), 0.0);
            assert_eq!(q_node_update(w, 0.0), w);
        }
        let v = q_node_update(2.0, 0.1);
        assert!((v - 2.0 * (0.8 * 1.0f64.tanh()).atanh()).abs() < 1e-14);
        assert!((v - 1.4156).abs() < 1e-4);
        // Equivalent to a check fed with the dummy constant.
        let chk = chk_update(&[2.0, dummy_constant(0.1), 0.0]);
        assert!((chk[2] - v).abs() < 1e-12);
    }

    #[test]
    fn general_q_specializes_to_one_bit() {
        let spec = QuantizerSpec::one_bit(0.1);
        let out = q_node_update_general(&spec, &[0.7, 2.0]);
        assert!((out[0] - q_node_update(2.0, 0.1)).abs() < 1e-12);
        assert!((out[1] - q_node_update(0.7, 0.1)).abs() < 1e-12);
        let uniform = QuantizerSpec::from_table(1, vec![0.0], vec![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        for x in q_node_update_general(&uniform, &[1.3, -2.0]) {
            assert!(x.abs() < 1e-15);
        }
    }

    #[test]
    fn general_q_two_bit_matches_enumeration() {
        let spec = QuantizerSpec::for_bpsk(2, vec![-1.5, 0.0, 1.5], 0.8).unwrap();
        let inc = [0.4, -1.1, 2.2];
        let out = q_node_update_general(&spec, &inc);
        let p = |l: f64, b: usize| {
            let p0 = 1.0 / (1.0 + (-l).exp());
            if b == 0 { p0 } else { 1.0 - p0 }
        };
        for target in 0..3 {
            let mut num = [0.0; 2];
            for u in 0..4usize {
                for v in 0..2usize {
                    let bits = [v, (u >> 1) & 1, u & 1];
                    let mut w = spec.table[u][v];
                    for k in 0..3 {
                        if k != target {
                            w *= p(inc[k], bits[k]);
                        }
                    }
                    num[bits[target]] += w;
                }
            }
            assert!((out[target] - (num[0] / num[1]).ln()).abs() < 1e-12, "edge {target}");
        }
    }

    fn toy_params(n_s: usize, n_r: usize) -> RelayChannelParams {
        let mut p = RelayChannelParams::new(1.0, 1.0, 1.0, 0.0, n_s).unwrap();
        p.n_r = n_r;
        p.f = (n_s - n_r) as f64 / n_s as f64;
        p
    }

    #[test]
    fn f_zero_has_no_q_nodes() {
        let ldpc = sample_graph(&DegreeProfile::regular(3, 6), 12, &mut rng_from_seed(1)).unwrap();
        let p = RelayChannelParams::new(1.0, 1.0, 1.0, 0.0, 12).unwrap();
        let ldgm = LdgmCode::new(TannerGraph::from_edges(0, 12, vec![]).unwrap());
        let g = JointFactorGraph::build(&ldpc, &ldgm, &p, 0.1).unwrap();
        assert_eq!(g.n_q_nodes(), 0);
        assert!((0..12).all(|i| !g.has_q(i)));
        // No factor touches both V_S and V_Q/V_R.
        for f in 0..g.n_factors() {
            let vars = g.factor_vars(f);
            let src = vars.iter().filter(|&&v| v < 12).count();
            assert!(src == 0 || src == vars.len());
        }
    }

    #[test]
    fn design_sized_dimensions() {
        let p = RelayChannelParams::new(10.0, 1.0, 1.0, 2.0 / 3.0, 9000).unwrap();
        assert_eq!((p.listen_len(), p.n_r), (6000, 3000));
        let ldpc = TannerGraph::from_edges(9000, 0, vec![]).unwrap();
        let ldgm = LdgmCode::sample(&DegreeProfile::regular(5, 10), 6000, &mut rng_from_seed(2)).unwrap();
        let g = JointFactorGraph::build(&ldpc, &ldgm, &p, 0.1).unwrap();
        assert_eq!(g.n_q_nodes(), 6000);
        assert_eq!(g.k_r(), 6000);
        assert_eq!(g.n_r(), 3000);
        let bad = LdgmCode::sample(&DegreeProfile::regular(5, 10), 5000, &mut rng_from_seed(2)).unwrap();
        assert!(JointFactorGraph::build(&ldpc, &bad, &p, 0.1).is_err());
    }

    /// 12-bit source, 2 LDPC checks, 4 Q nodes, 2 LDGM outputs.
    fn toy_joint() -> (TannerGraph, LdgmCode) {
        let ldpc = TannerGraph::from_edges(
            12,
            2,
            (0..6).map(|v| (v, 0)).chain((6..12).map(|v| (v, 1))).collect(),
        )
        .unwrap();
        let ldgm = LdgmCode::new(TannerGraph::from_edges(4, 2, vec![(0, 0), (1, 0), (2, 1), (3, 1), (1, 1)]).unwrap());
        (ldpc, ldgm)
    }

    #[test]
    fn toy_counts_by_hand() {
        let (ldpc, ldgm) = toy_joint();
        let g = JointFactorGraph::build(&ldpc, &ldgm, &toy_params(12, 2), 0.2);
        // listen_len would be 10 ≠ 4: the builder must reject it.
        assert!(g.is_err());
        let g = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.2; 4] }, false).unwrap();
        assert_eq!(g.n_vars(), 12 + 4 + 2);
        assert_eq!(g.factor_counts(), (2, 2, 4));
        // 12 LDPC edges + (5 LDGM + 2 relay-output) + 4·2 Q edges.
        assert_eq!(g.n_edges(), 12 + 7 + 8);
        let e = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.2; 4] }, true).unwrap();
        assert_eq!(e.n_vars(), 18 + 4);
        assert_eq!(e.n_edges(), 27 + 4);
    }

    #[test]
    fn noiseless_decoding_converges_immediately() {
        let mut rng = rng_from_seed(3);
        let ldpc = sample_graph(&DegreeProfile::regular(3, 6), 60, &mut rng).unwrap();
        let ldgm = LdgmCode::sample(&DegreeProfile::regular(2, 4), 40, &mut rng).unwrap();
        let g = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.05; 40] }, false).unwrap();
        let enc = crate::ensembles::LdpcEncoder::new(&ldpc);
        let msg: Vec<Bit> = (0..enc.k()).map(|_| rng.random_range(0..2)).collect();
        let b_s = enc.encode(&msg).unwrap();
        let b_q = b_s[..40].to_vec();
        let b_r = ldgm.encode(&b_q).unwrap();
        let sd: Vec<f64> = b_s.iter().map(|&b| if b == 0 { 50.0 } else { -50.0 }).collect();
        let rd: Vec<f64> = b_r.iter().map(|&b| if b == 0 { 50.0 } else { -50.0 }).collect();
        let out = g.decode(&sd, &rd, &DecoderConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 2);
        assert_eq!(out.b_s, b_s);
        assert_eq!(out.b_q, b_q);
        assert_eq!(out.b_r, b_r);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (ldpc, ldgm) = toy_joint();
        let g = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.2; 4] }, false).unwrap();
        assert!(g.decode(&[0.0; 11], &[0.0; 2], &DecoderConfig::default()).is_err());
        assert!(g.decode(&[0.0; 12], &[0.0; 3], &DecoderConfig::default()).is_err());
    }

    #[test]
    fn set_crossovers_matches_fresh_build() {
        let (ldpc, ldgm) = toy_joint();
        let pf = vec![0.1, 0.2, 0.3, 0.05];
        let sd: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let rd = [0.4, -0.9];
        let cfg = DecoderConfig {
            max_iters: 7,
            early_stop: false,
            ..Default::default()
        };
        for explicit in [false, true] {
            let fresh = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: pf.clone() }, explicit).unwrap();
            let mut g = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.2; 4] }, explicit).unwrap();
            g.set_crossovers(&pf).unwrap();
            assert_eq!(g.decode(&sd, &rd, &cfg).unwrap(), fresh.decode(&sd, &rd, &cfg).unwrap());
        }
        let mut g = JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: vec![0.2; 4] }, false).unwrap();
        assert!(g.set_crossovers(&[0.1; 3]).is_err());
        assert!(g.set_crossovers(&[0.6; 4]).is_err());
    }
}

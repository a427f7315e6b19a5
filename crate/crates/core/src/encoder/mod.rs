//! Bidirectional GRU sequence encoder used for questions and relation texts.
//!
//! Position `i` yields `h_i = P [→h_i; ←h_i] + b`; the pooled vector is
//! `q = P [→h_L; ←h_1] + b`, i.e. the two final states projected with the same
//! layer.

mod gru;
mod vocab;

use std::sync::OnceLock;

use rand::Rng;

use crate::graph::{RelationGraph, TextId, TextKind};
use crate::tensor::{Linear, Tensor};

pub use gru::{GruParams, GruStep};
pub use vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Tensor,
    pub forward: GruParams,
    pub backward: GruParams,
    pub proj: Linear,
}

impl EncoderParams {
    /// Embeddings uniform in ±0.1, weights uniform in ±1/√d.
    pub fn new<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        EncoderParams {
            embedding: Tensor::uniform(&[vocab_size, dim], 0.1, rng),
            forward: GruParams::new(dim, dim, rng),
            backward: GruParams::new(dim, dim, rng),
            proj: Linear::new(dim, 2 * dim, dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            embedding: self.embedding.zeros_like(),
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
            proj: self.proj.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (dir, g) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            for (name, t) in g.tensors() {
                out.push((format!("{dir}.{name}"), t));
            }
        }
        out.push(("proj.weight".into(), &self.proj.weight));
        out.push(("proj.bias".into(), &self.proj.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (dir, g) in [("fwd", &mut self.forward), ("bwd", &mut self.backward)] {
            for (name, t) in g.tensors_mut() {
                out.push((format!("{dir}.{name}"), t));
            }
        }
        out.push(("proj.weight".into(), &mut self.proj.weight));
        out.push(("proj.bias".into(), &mut self.proj.bias));
        out
    }
}

/// Encoder output plus the intermediates needed to back-propagate into it.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    /// Pooled embedding `q` (dimension d).
    pub q: Vec<f64>,
    /// Per-token hidden states `h_1..h_L`, each of dimension d.
    pub h: Vec<Vec<f64>>,
    tokens: Vec<usize>,
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
    states: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Runs the encoder over a non-empty token sequence.
pub fn encode(params: &EncoderParams, tokens: &[usize]) -> EncodedSequence {
    let tokens: Vec<usize> = if tokens.is_empty() {
        vec![Vocabulary::UNK]
    } else {
        tokens.to_vec()
    };
    let len = tokens.len();
    let hd = params.forward.hidden();

    let mut fwd = Vec::with_capacity(len);
    let mut h = vec![0.0; hd];
    for &t in &tokens {
        let st = params.forward.step(params.embedding.row(t), &h);
        h.clone_from(&st.h);
        fwd.push(st);
    }
    let mut bwd: Vec<Option<GruStep>> = vec![None; len];
    let mut h = vec![0.0; hd];
    for i in (0..len).rev() {
        let st = params.backward.step(params.embedding.row(tokens[i]), &h);
        h.clone_from(&st.h);
        bwd[i] = Some(st);
    }
    let bwd: Vec<GruStep> = bwd.into_iter().map(Option::unwrap).collect();

    let states: Vec<Vec<f64>> = (0..len)
        .map(|i| [fwd[i].h.as_slice(), bwd[i].h.as_slice()].concat())
        .collect();
    let pooled = [fwd[len - 1].h.as_slice(), bwd[0].h.as_slice()].concat();
    let hidden = states.iter().map(|s| params.proj.forward(s)).collect();
    let q = params.proj.forward(&pooled);
    EncodedSequence {
        q,
        h: hidden,
        tokens,
        fwd,
        bwd,
        states,
        pooled,
    }
}

/// Accumulates gradients for `dq` and per-position `dh` into `grads`.
/// `dh` may be empty when only the pooled vector was used.
pub fn backward(
    params: &EncoderParams,
    enc: &EncodedSequence,
    dq: &[f64],
    dh: &[Vec<f64>],
    grads: &mut EncoderParams,
) {
    let len = enc.tokens.len();
    let hd = params.forward.hidden();
    let mut d_fwd = vec![vec![0.0; hd]; len];
    let mut d_bwd = vec![vec![0.0; hd]; len];

    let mut ds = vec![0.0; 2 * hd];
    params.proj.backward(&enc.pooled, dq, &mut grads.proj, &mut ds);
    add(&mut d_fwd[len - 1], &ds[..hd]);
    add(&mut d_bwd[0], &ds[hd..]);
    for (i, g) in dh.iter().enumerate() {
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut ds = vec![0.0; 2 * hd];
        params.proj.backward(&enc.states[i], g, &mut grads.proj, &mut ds);
        add(&mut d_fwd[i], &ds[..hd]);
        add(&mut d_bwd[i], &ds[hd..]);
    }

    let dim = params.embedding.cols();
    let mut carry = vec![0.0; hd];
    for i in (0..len).rev() {
        add(&mut carry, &d_fwd[i]);
        let mut dx = vec![0.0; dim];
        carry = params
            .forward
            .step_backward(&enc.fwd[i], &carry, &mut grads.forward, &mut dx);
        add(grads.embedding.row_mut(enc.tokens[i]), &dx);
    }
    let mut carry = vec![0.0; hd];
    for i in 0..len {
        add(&mut carry, &d_bwd[i]);
        let mut dx = vec![0.0; dim];
        carry = params
            .backward
            .step_backward(&enc.bwd[i], &carry, &mut grads.backward, &mut dx);
        add(grads.embedding.row_mut(enc.tokens[i]), &dx);
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Relation-text token ids, one entry per distinct text in a graph.
/// Predicate texts are looked up as a single token.
pub fn relation_token_ids(graph: &RelationGraph, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    graph
        .texts()
        .iter()
        .map(|t| match t.kind {
            TextKind::Predicate => vec![vocab.id(&t.tokens[0])],
            TextKind::Sentence => vocab.encode(&t.tokens),
        })
        .collect()
}

/// Lazily computed relation encodings for one parameter snapshot.
///
/// Create a fresh cache after every optimizer step; entries are never
/// recomputed in place.
pub struct RelationEncodingCache<'a> {
    params: &'a EncoderParams,
    tokens: &'a [Vec<usize>],
    slots: Vec<OnceLock<EncodedSequence>>,
}

impl<'a> RelationEncodingCache<'a> {
    pub fn new(params: &'a EncoderParams, tokens: &'a [Vec<usize>]) -> Self {
        RelationEncodingCache {
            params,
            tokens,
            slots: (0..tokens.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn get(&self, text: TextId) -> &EncodedSequence {
        self.slots[text.0].get_or_init(|| encode(self.params, &self.tokens[text.0]))
    }

    pub fn vector(&self, text: TextId) -> &[f64] {
        &self.get(text).q
    }

    pub fn params(&self) -> &EncoderParams {
        self.params
    }

    pub fn computed(&self) -> usize {
        self.slots.iter().filter(|s| s.get().is_some()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;
    use rand::SeedableRng;

    fn params(seed: u64) -> EncoderParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = EncoderParams::new(10, 4, &mut rng);
        p.proj.bias = Tensor::uniform(&[4], 0.2, &mut rng);
        p
    }

    #[test]
    fn shape_contract() {
        let p = params(1);
        for len in 1..6 {
            let toks: Vec<usize> = (0..len).map(|i| 4 + i % 6).collect();
            let e = encode(&p, &toks);
            assert_eq!(e.h.len(), len);
            assert!(e.h.iter().all(|h| h.len() == 4));
            assert_eq!(e.q.len(), 4);
        }
    }

    #[test]
    fn deterministic_and_order_sensitive() {
        let p = params(2);
        let a = encode(&p, &[4, 5, 6, 7, 8]);
        let b = encode(&p, &[4, 5, 6, 7, 8]);
        assert_eq!(a.q, b.q);
        let c = encode(&p, &[4, 6, 5, 7, 8]);
        assert_ne!(a.q, c.q);
    }

    #[test]
    fn backward_matches_finite_difference() {
        let p = params(3);
        let toks = [4, 7, 5, 9, 6];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let wq = Tensor::uniform(&[4], 1.0, &mut rng);
        let wh = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let loss = |p: &EncoderParams| {
            let e = encode(p, &toks);
            dot(&e.q, &wq.data) + (0..5).map(|i| dot(&e.h[i], wh.row(i))).sum::<f64>()
        };
        let e = encode(&p, &toks);
        let mut grads = p.zeros_like();
        let dh: Vec<Vec<f64>> = (0..5).map(|i| wh.row(i).to_vec()).collect();
        backward(&p, &e, &wq.data, &dh, &mut grads);

        let eps = 1e-5;
        let analytic: Vec<(String, Vec<f64>)> = grads
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.data.clone()))
            .collect();
        for (block, (name, g)) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = p.clone();
                plus.tensors_mut()[block].1.data[i] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[block].1.data[i] -= eps;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let scale = num.abs().max(g[i].abs());
                if num.abs() + g[i].abs() < 1e-8 {
                    continue;
                }
                assert!(
                    (num - g[i]).abs() / scale < 1e-4,
                    "{name}[{i}]: analytic {} numeric {num}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn cache_computes_each_text_once() {
        let p = params(4);
        let tokens = vec![vec![2, 4, 3], vec![2, 5, 3]];
        let cache = RelationEncodingCache::new(&p, &tokens);
        assert_eq!(cache.computed(), 0);
        let a = cache.vector(TextId(1)).to_vec();
        assert_eq!(cache.vector(TextId(1)), a.as_slice());
        assert_eq!(cache.computed(), 1);
    }
}

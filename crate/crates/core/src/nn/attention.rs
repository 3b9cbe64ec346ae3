//! Multi-head self-attention and the pre-norm transformer block.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Dense, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use super::loss::softmax_in_place;
use super::{NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x n x n` row-stochastic attention weights.
    probs: Vec<f64>,
    mixed: Vec<f64>,
}

impl AttentionCache {
    pub fn weights(&self) -> &[f64] {
        &self.probs
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Shape("model width must be divisible by head count"));
        }
        Ok(Self {
            query: Dense::new(store, &format!("{name}.query"), d, d, rng)?,
            key: Dense::new(store, &format!("{name}.key"), d, d, rng)?,
            value: Dense::new(store, &format!("{name}.value"), d, d, rng)?,
            output: Dense::new(store, &format!("{name}.output"), d, d, rng)?,
            heads,
            d,
        })
    }

    fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
        let (d, dh) = (self.d, self.head_dim());
        let scale = 1.0 / libm::sqrt(dh as f64);
        let q = self.query.forward(store, x, n);
        let k = self.key.forward(store, x, n);
        let v = self.value.forward(store, x, n);
        let mut probs = vec![0.0; self.heads * n * n];
        let mut mixed = vec![0.0; n * d];
        for h in 0..self.heads {
            let off = h * dh;
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut p[i * n..(i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(row);
                let out = &mut mixed[i * d + off..i * d + off + dh];
                for (j, &a) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *o += a * vv;
                    }
                }
            }
        }
        let y = self.output.forward(store, &mixed, n);
        (
            y,
            AttentionCache {
                x: x.to_vec(),
                q,
                k,
                v,
                probs,
                mixed,
            },
        )
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttentionCache,
        n: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let (d, dh) = (self.d, self.head_dim());
        let scale = 1.0 / libm::sqrt(dh as f64);
        let dmixed = self
            .output
            .backward(store, &cache.mixed, n, dy, true)
            .unwrap_or_default();
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            let p = &cache.probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let go = &dmixed[i * d + off..i * d + off + dh];
                let pi = &p[i * n..(i + 1) * n];
                for j in 0..n {
                    let vj = &cache.v[j * d + off..j * d + off + dh];
                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for (g, &o) in dv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                        *g += pi[j] * o;
                    }
                }
                let dot: f64 = pi.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    let ds = pi[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j * d + off..j * d + off + dh];
                    let qi = &cache.q[i * d + off..i * d + off + dh];
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * kj[t];
                        dk[j * d + off + t] += ds * qi[t];
                    }
                }
            }
        }
        let mut dx = self
            .query
            .backward(store, &cache.x, n, &dq, true)
            .unwrap_or_default();
        for (part, grad) in [(&self.key, &dk), (&self.value, &dv)] {
            let g = part.backward(store, &cache.x, n, grad, true).unwrap_or_default();
            dx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        dx
    }
}

/// `x + attn(ln1(x))`, then `+ ff(ln2(.))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ff: FeedForwardCache,
}

impl TransformerBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ff_hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff_hidden, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> (Vec<f64>, BlockCache) {
        let (h1, ln1) = self.ln1.forward(store, x, n);
        let (a, attn) = self.attn.forward(store, &h1, n);
        let mid: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
        let (h2, ln2) = self.ln2.forward(store, &mid, n);
        let (f, ff) = self.ff.forward(store, &h2, n);
        let y = mid.iter().zip(&f).map(|(p, q)| p + q).collect();
        (y, BlockCache { ln1, attn, ln2, ff })
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &BlockCache,
        n: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let dh2 = self.ff.backward(store, &cache.ff, n, dy);
        let dmid_ln = self.ln2.backward(store, &cache.ln2, n, &dh2);
        let dmid: Vec<f64> = dy.iter().zip(&dmid_ln).map(|(a, b)| a + b).collect();
        let dh1 = self.attn.backward(store, &cache.attn, n, &dmid);
        let dx_ln = self.ln1.backward(store, &cache.ln1, n, &dh1);
        dmid.iter().zip(&dx_ln).map(|(a, b)| a + b).collect()
    }
}

/// Checked functional form of one transformer block over `[n_tok, d]`.
pub fn attention_block_apply(
    store: &ParamStore,
    block: &TransformerBlock,
    tokens: &Tensor,
) -> Result<Tensor, NnError> {
    if tokens.shape().len() != 2 || tokens.cols() != block.attn.d {
        return Err(NnError::Shape("token width does not match block width"));
    }
    let n = tokens.rows();
    let (y, _) = block.forward(store, tokens.data(), n);
    Tensor::new(&[n, block.attn.d], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let (_, cache) = mha.forward(&store, &random(8, &mut rng), 1);
        assert_eq!(cache.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        let (_, cache) = mha.forward(&store, &random(5 * 8, &mut rng), 5);
        for row in cache.weights().chunks_exact(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let n = 4;
        let x = random(n * 8, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 8..(i + 1) * 8].to_vec()).collect();
        let (y, _) = mha.forward(&store, &x, n);
        let (py, _) = mha.forward(&store, &px, n);
        for (r, &i) in perm.iter().enumerate() {
            for t in 0..8 {
                assert!((py[r * 8 + t] - y[i * 8 + t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_count_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 8, 3, &mut rng).is_err());
    }

    #[test]
    fn block_apply_checks_shape_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        let t = Tensor::new(&[3, 8], random(24, &mut rng)).unwrap();
        let a = attention_block_apply(&store, &block, &t).unwrap();
        let b = attention_block_apply(&store, &block, &t).unwrap();
        assert_eq!(a.shape(), &[3, 8]);
        assert_eq!(a, b);
        let bad = Tensor::new(&[3, 4], random(12, &mut rng)).unwrap();
        assert!(attention_block_apply(&store, &block, &bad).is_err());
    }
}

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{EmbeddingSource, EmbeddingVector, EncoderConfig, EncoderError};
use crate::dsp::MelSpectrogram;
use crate::ingest::{PSM_FRAMES_PER_EPOCH, PSM_FRAME_LEN};
use crate::nn::{
    mean_pool, mean_pool_backward, BlockCache, Dense, LayerNorm, LayerNormCache, ParamId,
    ParamStore, TransformerBlock,
};

/// Token matrix `[n_tokens, width]` ready for an encoder, stored compactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub n_tokens: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tokens {
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

pub type AudioTokens = Tokens;
pub type VideoTokens = Tokens;

/// Non-overlapping time patches of a spectrogram; the trailing remainder is
/// dropped. Inside a patch, runs of `time_pool` frames are averaged, so a
/// token holds `channels * n_mels * patch_len / time_pool` values.
pub fn tokenize_spectrogram(
    spec: &MelSpectrogram,
    patch_len: usize,
    time_pool: usize,
) -> Result<Tokens, EncoderError> {
    if patch_len == 0 || time_pool == 0 || patch_len % time_pool != 0 {
        return Err(EncoderError::Config("time_pool must divide a positive patch_len"));
    }
    let n_tokens = spec.n_frames / patch_len;
    if n_tokens == 0 {
        return Err(EncoderError::TooFewFrames {
            frames: spec.n_frames,
            patch: patch_len,
        });
    }
    let groups = patch_len / time_pool;
    let width = spec.channels * spec.n_mels * groups;
    let mut data = Vec::with_capacity(n_tokens * width);
    for t in 0..n_tokens {
        for row in 0..spec.channels * spec.n_mels {
            let base = row * spec.n_frames + t * patch_len;
            for g in 0..groups {
                let start = base + g * time_pool;
                let sum: f64 = spec.values[start..start + time_pool]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum();
                data.push((sum / time_pool as f64) as f32);
            }
        }
    }
    Ok(Tokens {
        n_tokens,
        width,
        data,
    })
}

/// Every `stride`-th frame of a 300-frame pressure clip, one token each.
pub fn tokenize_clip(clip: &[f32], stride: usize) -> Result<Tokens, EncoderError> {
    let expected = PSM_FRAMES_PER_EPOCH * PSM_FRAME_LEN;
    if clip.len() != expected {
        return Err(EncoderError::ClipShape {
            expected,
            found: clip.len(),
        });
    }
    if stride == 0 {
        return Err(EncoderError::Config("frame stride must be positive"));
    }
    let n_tokens = PSM_FRAMES_PER_EPOCH / stride;
    let mut data = Vec::with_capacity(n_tokens * PSM_FRAME_LEN);
    for t in 0..n_tokens {
        let f = t * stride;
        data.extend_from_slice(&clip[f * PSM_FRAME_LEN..(f + 1) * PSM_FRAME_LEN]);
    }
    Ok(Tokens {
        n_tokens,
        width: PSM_FRAME_LEN,
        data,
    })
}

/// Linear token embedding, optional learned positions, transformer blocks,
/// final layer norm, mean pool and output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoder {
    pub input: Dense,
    pub positional: Option<ParamId>,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub output: Dense,
    max_tokens: usize,
    params: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    n: usize,
    tokens: Vec<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    pooled: Vec<f64>,
}

impl TokenEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_width: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let first = store.len();
        let d = cfg.model_dim;
        let input = Dense::new(store, &format!("{prefix}.embed"), in_width, d, rng)?;
        let positional = if cfg.use_positional {
            let bound = 1.0 / libm::sqrt(d as f64);
            Some(store.add_uniform(format!("{prefix}.pos"), &[cfg.max_tokens, d], bound, rng)?)
        } else {
            None
        };
        let blocks = (0..cfg.block_count)
            .map(|b| {
                TransformerBlock::new(
                    store,
                    &format!("{prefix}.block{b}"),
                    d,
                    cfg.head_count,
                    cfg.ff_hidden,
                    rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let norm = LayerNorm::new(store, &format!("{prefix}.norm"), d)?;
        let output = Dense::new(store, &format!("{prefix}.proj"), d, cfg.embedding_dim, rng)?;
        let params = store.ids().skip(first).collect();
        Ok(Self {
            input,
            positional,
            blocks,
            norm,
            output,
            max_tokens: cfg.max_tokens,
            params,
        })
    }

    /// Every parameter owned by this encoder, in registration order.
    pub fn parameter_ids(&self) -> &[ParamId] {
        &self.params
    }

    pub fn in_width(&self) -> usize {
        self.input.d_in
    }

    pub fn embedding_dim(&self) -> usize {
        self.output.d_out
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        tokens: &[f64],
        n: usize,
    ) -> Result<(Vec<f64>, EncoderCache), EncoderError> {
        if n == 0 || tokens.len() != n * self.in_width() {
            return Err(EncoderError::TokenWidth {
                expected: self.in_width(),
                found: if n == 0 { 0 } else { tokens.len() / n },
            });
        }
        if self.positional.is_some() && n > self.max_tokens {
            return Err(EncoderError::TooManyTokens {
                tokens: n,
                max: self.max_tokens,
            });
        }
        let d = self.input.d_out;
        let mut h = self.input.forward(store, tokens, n);
        if let Some(pos) = self.positional {
            for (v, p) in h.iter_mut().zip(&store.value(pos)[..n * d]) {
                *v += p;
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &h, n);
            caches.push(cache);
            h = next;
        }
        let (normed, norm) = self.norm.forward(store, &h, n);
        let pooled = mean_pool(&normed, n, d);
        let out = self.output.forward(store, &pooled, 1);
        Ok((
            out,
            EncoderCache {
                n,
                tokens: tokens.to_vec(),
                blocks: caches,
                norm,
                pooled,
            },
        ))
    }

    /// Accumulates parameter gradients for `d_embedding`; returns the token
    /// gradient when asked.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &EncoderCache,
        d_embedding: &[f64],
        want_token_grad: bool,
    ) -> Option<Vec<f64>> {
        let n = cache.n;
        let d = self.input.d_out;
        let dpooled = self
            .output
            .backward(store, &cache.pooled, 1, d_embedding, true)
            .unwrap_or_default();
        let dnormed = mean_pool_backward(&dpooled, n);
        let mut dh = self.norm.backward(store, &cache.norm, n, &dnormed);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = block.backward(store, bc, n, &dh);
        }
        if let Some(pos) = self.positional {
            for (g, v) in store.grad_mut(pos)[..n * d].iter_mut().zip(&dh) {
                *g += v;
            }
        }
        self.input
            .backward(store, &cache.tokens, n, &dh, want_token_grad)
    }

    pub fn encode(&self, store: &ParamStore, tokens: &[f64], n: usize) -> Result<Vec<f64>, EncoderError> {
        Ok(self.forward(store, tokens, n)?.0)
    }
}

/// Toy encoder for stacked-channel log-mel spectrograms.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub net: TokenEncoder,
    channels: usize,
    n_mels: usize,
    patch_len: usize,
    time_pool: usize,
}

impl AudioEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        channels: usize,
        n_mels: usize,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        if !(1..=2).contains(&channels) || n_mels == 0 {
            return Err(EncoderError::Config("audio encoder takes 1 or 2 channels and >= 1 mel"));
        }
        let width = cfg.audio_token_width(channels, n_mels);
        Ok(Self {
            net: TokenEncoder::new(store, prefix, width, cfg, rng)?,
            channels,
            n_mels,
            patch_len: cfg.patch_len,
            time_pool: cfg.time_pool,
        })
    }

    pub fn tokenize(&self, spec: &MelSpectrogram) -> Result<Tokens, EncoderError> {
        if (spec.channels, spec.n_mels) != (self.channels, self.n_mels) {
            return Err(EncoderError::SpectrogramShape {
                expected: (self.channels, self.n_mels),
                found: (spec.channels, spec.n_mels),
            });
        }
        tokenize_spectrogram(spec, self.patch_len, self.time_pool)
    }

    pub fn encode_tokens(&self, store: &ParamStore, tokens: &Tokens) -> Result<EmbeddingVector, EncoderError> {
        let v = self.net.encode(store, &tokens.to_f64(), tokens.n_tokens)?;
        EmbeddingVector::new(v, EmbeddingSource::ToyAudio)
    }

    pub fn encode_audio(&self, store: &ParamStore, spec: &MelSpectrogram) -> Result<EmbeddingVector, EncoderError> {
        self.encode_tokens(store, &self.tokenize(spec)?)
    }
}

/// Toy encoder for 300-frame pressure clips; every `stride`-th frame
/// becomes one token.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoder {
    pub net: TokenEncoder,
    stride: usize,
}

impl VideoEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        Ok(Self {
            net: TokenEncoder::new(store, prefix, PSM_FRAME_LEN, cfg, rng)?,
            stride: cfg.frame_stride,
        })
    }

    pub fn tokenize(&self, clip: &[f32]) -> Result<Tokens, EncoderError> {
        tokenize_clip(clip, self.stride)
    }

    pub fn encode_tokens(&self, store: &ParamStore, tokens: &Tokens) -> Result<EmbeddingVector, EncoderError> {
        let v = self.net.encode(store, &tokens.to_f64(), tokens.n_tokens)?;
        EmbeddingVector::new(v, EmbeddingSource::ToyVideo)
    }

    pub fn encode_video(&self, store: &ParamStore, clip: &[f32]) -> Result<EmbeddingVector, EncoderError> {
        self.encode_tokens(store, &self.tokenize(clip)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MelSpectrogram {
            channels: 2,
            n_mels: 128,
            n_frames: frames,
            values: (0..2 * 128 * frames).map(|_| rng.random_range(-10.0..0.0)).collect(),
        }
    }

    fn audio(cfg: &EncoderConfig) -> (ParamStore, AudioEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = AudioEncoder::new(&mut store, "eog", cfg, 2, 128, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn audio_patch_count_floors() {
        let (store, enc) = audio(&EncoderConfig::default());
        let s = spec(2998, 2);
        let tokens = enc.tokenize(&s).unwrap();
        assert_eq!(tokens.n_tokens, 29);
        let e = enc.encode_audio(&store, &s).unwrap();
        assert_eq!(e.dim(), 64);
        assert_eq!(e, enc.encode_audio(&store, &s).unwrap());
        assert!(matches!(
            enc.tokenize(&spec(99, 3)),
            Err(EncoderError::TooFewFrames { frames: 99, patch: 100 })
        ));
    }

    #[test]
    fn time_pool_averages_runs() {
        let cfg = EncoderConfig {
            patch_len: 4,
            time_pool: 2,
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = AudioEncoder::new(&mut store, "eog", &cfg, 1, 1, &mut rng).unwrap();
        let s = MelSpectrogram {
            channels: 1,
            n_mels: 1,
            n_frames: 9,
            values: vec![1.0, 3.0, 5.0, 7.0, 0.0, 2.0, 4.0, 4.0, 9.0],
        };
        let t = enc.tokenize(&s).unwrap();
        assert_eq!((t.n_tokens, t.width), (2, 2));
        assert_eq!(t.data, vec![2.0, 6.0, 1.0, 4.0]);
    }

    #[test]
    fn video_tokens_and_non_degenerate_projection() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = VideoEncoder::new(&mut store, "psm", &EncoderConfig::default(), &mut rng).unwrap();
        let zeros = vec![0.0f32; 300 * 144];
        let ones = vec![1.0f32; 300 * 144];
        assert_eq!(enc.tokenize(&zeros).unwrap().n_tokens, 30);
        let a = enc.encode_video(&store, &zeros).unwrap();
        let b = enc.encode_video(&store, &ones).unwrap();
        assert_eq!(a.dim(), 64);
        assert_ne!(a, b);
        assert!(enc.encode_video(&store, &ones[..144]).is_err());
    }

    #[test]
    fn positional_terms_break_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let x: Vec<f64> = (0..n * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rev: Vec<f64> = x.chunks_exact(10).rev().flatten().copied().collect();
        for positional in [true, false] {
            let cfg = EncoderConfig {
                use_positional: positional,
                block_count: 2,
                ..EncoderConfig::default()
            };
            let mut store = ParamStore::new();
            let enc = TokenEncoder::new(&mut store, "t", 10, &cfg, &mut rng).unwrap();
            let a = enc.encode(&store, &x, n).unwrap();
            let b = enc.encode(&store, &rev, n).unwrap();
            let diff = a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            if positional {
                assert!(diff > 1e-6, "positions had no effect");
            } else {
                assert!(diff < 1e-12, "mean pool not permutation invariant: {diff}");
            }
        }
    }

    #[test]
    fn too_many_tokens_for_the_position_table() {
        let cfg = EncoderConfig {
            max_tokens: 4,
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = TokenEncoder::new(&mut store, "t", 3, &cfg, &mut rng).unwrap();
        assert!(matches!(
            enc.encode(&store, &[0.0; 15], 5),
            Err(EncoderError::TooManyTokens { tokens: 5, max: 4 })
        ));
    }
}

//! Concatenation fusion of per-modality embeddings followed by one linear
//! layer over the five stages.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    AudioEncoder, EmbeddingSource, EmbeddingVector, EncoderCache, EncoderConfig, EncoderError,
    Tokens, VideoEncoder,
};
use crate::nn::{softmax, Dense, NnError, ParamId, ParamStore};
use crate::stage::{SleepStage, STAGE_COUNT};

/// Concatenation order recorded alongside checkpoints.
pub const CONCAT_ORDER: &str = "eog,psm";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("{0} input is required by this model but missing")]
    MissingModality(&'static str),
    #[error("{what} has width {found}, expected {expected}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Fused,
    EogOnly,
    PsmOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Fused, FusionMode::EogOnly, FusionMode::PsmOnly];

    pub fn uses_eog(self) -> bool {
        self != FusionMode::PsmOnly
    }

    pub fn uses_psm(self) -> bool {
        self != FusionMode::EogOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Fused => "fused",
            FusionMode::EogOnly => "eog_only",
            FusionMode::PsmOnly => "psm_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRegime {
    LinearProbe,
    FineTune,
}

impl TrainingRegime {
    pub fn name(self) -> &'static str {
        match self {
            TrainingRegime::LinearProbe => "linear_probe",
            TrainingRegime::FineTune => "fine_tune",
        }
    }
}

/// `[e_eog ‖ e_psm]`.
pub fn fuse(e_eog: &EmbeddingVector, e_psm: &EmbeddingVector) -> Result<EmbeddingVector, FusionError> {
    let mut values = Vec::with_capacity(e_eog.dim() + e_psm.dim());
    values.extend_from_slice(&e_eog.values);
    values.extend_from_slice(&e_psm.values);
    Ok(EmbeddingVector::new(values, EmbeddingSource::Fused)?)
}

/// What one epoch offers to a model. Precomputed embeddings take priority
/// over tokens for the same modality.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInput<'a> {
    pub audio: Option<&'a Tokens>,
    pub video: Option<&'a Tokens>,
    pub eog_embedding: Option<&'a [f64]>,
    pub psm_embedding: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePrediction {
    pub logits: [f64; STAGE_COUNT],
    pub probabilities: [f64; STAGE_COUNT],
    pub predicted: SleepStage,
}

impl StagePrediction {
    pub fn from_logits(logits: [f64; STAGE_COUNT]) -> Self {
        let p = softmax(&logits);
        let mut probabilities = [0.0; STAGE_COUNT];
        probabilities.copy_from_slice(&p);
        Self {
            logits,
            probabilities,
            predicted: argmax_stage(&logits),
        }
    }
}

/// Index of the largest logit; the lowest stage code wins ties.
pub fn argmax_stage(logits: &[f64; STAGE_COUNT]) -> SleepStage {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    SleepStage::ALL[best]
}

/// Per-sample state kept between forward and backward.
#[derive(Debug, Clone)]
pub struct SampleCache {
    fused: Vec<f64>,
    eog: Option<EncoderCache>,
    psm: Option<EncoderCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub mode: FusionMode,
    pub regime: TrainingRegime,
    pub store: ParamStore,
    pub eog: Option<AudioEncoder>,
    pub psm: Option<VideoEncoder>,
    pub head: Dense,
    eog_dim: usize,
    psm_dim: usize,
    external: bool,
}

impl FusionModel {
    /// Toy encoders for the active modalities (EOG first), then the head.
    /// Parameters come from a seeded stream, so two models built with the
    /// same seed share their EOG encoder weights.
    pub fn toy(
        mode: FusionMode,
        regime: TrainingRegime,
        cfg: &EncoderConfig,
        eog_channels: usize,
        n_mels: usize,
        seed: u64,
    ) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let eog = if mode.uses_eog() {
            Some(AudioEncoder::new(&mut store, "eog", cfg, eog_channels, n_mels, &mut rng)?)
        } else {
            None
        };
        let psm = if mode.uses_psm() {
            Some(VideoEncoder::new(&mut store, "psm", cfg, &mut rng)?)
        } else {
            None
        };
        let eog_dim = if mode.uses_eog() { cfg.embedding_dim } else { 0 };
        let psm_dim = if mode.uses_psm() { cfg.embedding_dim } else { 0 };
        let head = Dense::new(&mut store, "head", eog_dim + psm_dim, STAGE_COUNT, &mut rng)?;
        let mut model = Self {
            mode,
            regime,
            store,
            eog,
            psm,
            head,
            eog_dim,
            psm_dim,
            external: false,
        };
        model.apply_regime();
        Ok(model)
    }

    /// Head over externally computed embeddings; only linear probing is
    /// possible because the encoders are not part of the model.
    pub fn external(
        mode: FusionMode,
        regime: TrainingRegime,
        eog_dim: usize,
        psm_dim: usize,
        seed: u64,
    ) -> Result<Self, FusionError> {
        if regime == TrainingRegime::FineTune {
            return Err(FusionError::Config(
                "fine_tune needs trainable encoders; external embeddings are fixed",
            ));
        }
        let eog_dim = if mode.uses_eog() { eog_dim } else { 0 };
        let psm_dim = if mode.uses_psm() { psm_dim } else { 0 };
        if (mode.uses_eog() && eog_dim == 0) || (mode.uses_psm() && psm_dim == 0) {
            return Err(FusionError::Config("active modality needs a positive embedding dim"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = Dense::new(&mut store, "head", eog_dim + psm_dim, STAGE_COUNT, &mut rng)?;
        Ok(Self {
            mode,
            regime,
            store,
            eog: None,
            psm: None,
            head,
            eog_dim,
            psm_dim,
            external: true,
        })
    }

    fn apply_regime(&mut self) {
        let frozen = self.regime == TrainingRegime::LinearProbe;
        for id in self.encoder_parameters() {
            self.store.set_trainable(id, !frozen);
        }
    }

    pub fn is_external(&self) -> bool {
        self.external
    }

    pub fn eog_dim(&self) -> usize {
        self.eog_dim
    }

    pub fn psm_dim(&self) -> usize {
        self.psm_dim
    }

    pub fn head_input_width(&self) -> usize {
        self.head.d_in
    }

    pub fn encoder_parameters(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(e) = &self.eog {
            ids.extend_from_slice(e.net.parameter_ids());
        }
        if let Some(p) = &self.psm {
            ids.extend_from_slice(p.net.parameter_ids());
        }
        ids
    }

    /// Head only under linear probing; head plus every encoder parameter
    /// under fine-tuning.
    pub fn trainable_parameters(&self) -> Vec<ParamId> {
        let mut ids = match self.regime {
            TrainingRegime::LinearProbe => Vec::new(),
            TrainingRegime::FineTune => self.encoder_parameters(),
        };
        ids.push(self.head.weight);
        ids.push(self.head.bias);
        ids
    }

    /// Embedding for the EOG side, from a precomputed vector when given.
    pub fn eog_embedding(&self, input: &ModelInput<'_>) -> Result<Vec<f64>, FusionError> {
        self.side(input.eog_embedding, input.audio, self.eog.as_ref().map(|e| &e.net), "eog", self.eog_dim)
    }

    pub fn psm_embedding(&self, input: &ModelInput<'_>) -> Result<Vec<f64>, FusionError> {
        self.side(input.psm_embedding, input.video, self.psm.as_ref().map(|e| &e.net), "psm", self.psm_dim)
    }

    fn side(
        &self,
        given: Option<&[f64]>,
        tokens: Option<&Tokens>,
        net: Option<&crate::encoders::TokenEncoder>,
        what: &'static str,
        dim: usize,
    ) -> Result<Vec<f64>, FusionError> {
        let v = match (given, tokens, net) {
            (Some(v), _, _) => v.to_vec(),
            (None, Some(t), Some(net)) => net.encode(&self.store, &t.to_f64(), t.n_tokens)?,
            _ => return Err(FusionError::MissingModality(what)),
        };
        if v.len() != dim {
            return Err(FusionError::DimMismatch {
                what,
                expected: dim,
                found: v.len(),
            });
        }
        Ok(v)
    }

    /// Head input for the active modalities, EOG first.
    pub fn head_input(&self, input: &ModelInput<'_>) -> Result<Vec<f64>, FusionError> {
        let mut v = Vec::with_capacity(self.head.d_in);
        if self.mode.uses_eog() {
            v.extend(self.eog_embedding(input)?);
        }
        if self.mode.uses_psm() {
            v.extend(self.psm_embedding(input)?);
        }
        Ok(v)
    }

    /// Logits of the head for an already fused or single-modality vector.
    pub fn head_logits(&self, x: &[f64]) -> Result<[f64; STAGE_COUNT], FusionError> {
        if x.len() != self.head.d_in {
            return Err(FusionError::DimMismatch {
                what: "head input",
                expected: self.head.d_in,
                found: x.len(),
            });
        }
        let y = self.head.forward(&self.store, x, 1);
        let mut logits = [0.0; STAGE_COUNT];
        logits.copy_from_slice(&y);
        Ok(logits)
    }

    pub fn classify(&self, input: &ModelInput<'_>) -> Result<StagePrediction, FusionError> {
        let x = self.head_input(input)?;
        Ok(StagePrediction::from_logits(self.head_logits(&x)?))
    }

    /// Forward pass keeping what backward needs. Encoders run (and are
    /// cached) only under fine-tuning with token input.
    pub fn forward_train(
        &self,
        input: &ModelInput<'_>,
    ) -> Result<([f64; STAGE_COUNT], SampleCache), FusionError> {
        let tune = self.regime == TrainingRegime::FineTune;
        let mut fused = Vec::with_capacity(self.head.d_in);
        let mut eog_cache = None;
        let mut psm_cache = None;
        if self.mode.uses_eog() {
            match (tune, input.audio, &self.eog) {
                (true, Some(t), Some(enc)) => {
                    let (e, c) = enc.net.forward(&self.store, &t.to_f64(), t.n_tokens)?;
                    fused.extend(e);
                    eog_cache = Some(c);
                }
                _ => fused.extend(self.eog_embedding(input)?),
            }
        }
        if self.mode.uses_psm() {
            match (tune, input.video, &self.psm) {
                (true, Some(t), Some(enc)) => {
                    let (e, c) = enc.net.forward(&self.store, &t.to_f64(), t.n_tokens)?;
                    fused.extend(e);
                    psm_cache = Some(c);
                }
                _ => fused.extend(self.psm_embedding(input)?),
            }
        }
        let logits = self.head_logits(&fused)?;
        Ok((
            logits,
            SampleCache {
                fused,
                eog: eog_cache,
                psm: psm_cache,
            },
        ))
    }

    /// Accumulates gradients for one sample given `d loss / d logits`.
    pub fn backward_sample(&mut self, cache: &SampleCache, dlogits: &[f64]) {
        let need_dx = cache.eog.is_some() || cache.psm.is_some();
        let dx = self
            .head
            .backward(&mut self.store, &cache.fused, 1, dlogits, need_dx);
        let Some(dx) = dx else { return };
        let (d_eog, d_psm) = dx.split_at(self.eog_dim);
        if let (Some(c), Some(enc)) = (&cache.eog, &self.eog) {
            enc.net.backward(&mut self.store, c, d_eog, false);
        }
        if let (Some(c), Some(enc)) = (&cache.psm, &self.psm) {
            enc.net.backward(&mut self.store, c, d_psm, false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            model_dim: 8,
            head_count: 2,
            ff_hidden: 8,
            embedding_dim: 4,
            ..EncoderConfig::default()
        }
    }

    fn tokens(n: usize, width: usize, seed: u64) -> Tokens {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tokens {
            n_tokens: n,
            width,
            data: (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn fuse_concatenates_eog_first() {
        let a = EmbeddingVector::new(vec![1.0, 2.0], EmbeddingSource::External).unwrap();
        let b = EmbeddingVector::new(vec![3.0], EmbeddingSource::External).unwrap();
        assert_eq!(fuse(&a, &b).unwrap().values, vec![1.0, 2.0, 3.0]);
        assert_eq!(fuse(&b, &a).unwrap().values, vec![3.0, 1.0, 2.0]);
        let big = EmbeddingVector::new(vec![0.5; 1024], EmbeddingSource::External).unwrap();
        assert_eq!(fuse(&big, &big).unwrap().dim(), 2048);
    }

    #[test]
    fn zero_head_predicts_wake_uniformly() {
        let mut m = FusionModel::external(FusionMode::Fused, TrainingRegime::LinearProbe, 3, 2, 1).unwrap();
        m.store.get_mut(m.head.weight).value.data_mut().fill(0.0);
        let e = [0.3, -1.0, 2.0];
        let p = [4.0, 1.0];
        let input = ModelInput {
            eog_embedding: Some(&e),
            psm_embedding: Some(&p),
            ..ModelInput::default()
        };
        let pred = m.classify(&input).unwrap();
        assert_eq!(pred.predicted, SleepStage::Wake);
        assert!(pred.probabilities.iter().all(|&q| (q - 0.2).abs() < 1e-15));
        let bias = m.head.bias;
        m.store.get_mut(bias).value.data_mut()[2] = 10.0;
        assert_eq!(m.classify(&input).unwrap().predicted, SleepStage::Nrem2);
    }

    #[test]
    fn trainable_sets_follow_the_regime() {
        let probe = FusionModel::toy(FusionMode::Fused, TrainingRegime::LinearProbe, &small_cfg(), 2, 4, 3).unwrap();
        assert_eq!(probe.trainable_parameters(), vec![probe.head.weight, probe.head.bias]);
        assert!(probe.encoder_parameters().iter().all(|&id| !probe.store.get(id).trainable));
        let tune = FusionModel::toy(FusionMode::Fused, TrainingRegime::FineTune, &small_cfg(), 2, 4, 3).unwrap();
        let ids = tune.trainable_parameters();
        assert_eq!(ids.len(), tune.store.len());
        assert!(matches!(
            FusionModel::external(FusionMode::Fused, TrainingRegime::FineTune, 4, 4, 0),
            Err(FusionError::Config(_))
        ));
    }

    #[test]
    fn missing_modality_and_width_errors() {
        let m = FusionModel::external(FusionMode::Fused, TrainingRegime::LinearProbe, 2, 2, 1).unwrap();
        let e = [0.0, 1.0];
        let only_eog = ModelInput {
            eog_embedding: Some(&e),
            ..ModelInput::default()
        };
        assert!(matches!(m.classify(&only_eog), Err(FusionError::MissingModality("psm"))));
        let wide = [0.0; 3];
        let bad = ModelInput {
            eog_embedding: Some(&wide),
            psm_embedding: Some(&e),
            ..ModelInput::default()
        };
        assert!(matches!(m.classify(&bad), Err(FusionError::DimMismatch { .. })));
        let eog_only = FusionModel::external(FusionMode::EogOnly, TrainingRegime::LinearProbe, 2, 0, 1).unwrap();
        assert_eq!(eog_only.head_input_width(), 2);
        assert!(eog_only.classify(&only_eog).is_ok());
    }

    #[test]
    fn psm_features_change_fused_logits() {
        let cfg = small_cfg();
        let fused = FusionModel::toy(FusionMode::Fused, TrainingRegime::FineTune, &cfg, 2, 4, 5).unwrap();
        let eog_only = FusionModel::toy(FusionMode::EogOnly, TrainingRegime::FineTune, &cfg, 2, 4, 5).unwrap();
        let a = tokens(3, cfg.audio_token_width(2, 4), 7);
        let v = tokens(30, 144, 8);
        let input = ModelInput {
            audio: Some(&a),
            video: Some(&v),
            ..ModelInput::default()
        };
        assert_eq!(
            fused.eog_embedding(&input).unwrap(),
            eog_only.eog_embedding(&input).unwrap()
        );
        assert_ne!(
            fused.classify(&input).unwrap().logits[..],
            eog_only.classify(&input).unwrap().logits[..]
        );
    }

    #[test]
    fn gradients_reach_encoders_only_when_fine_tuning() {
        let cfg = small_cfg();
        let a = tokens(3, cfg.audio_token_width(2, 4), 1);
        let v = tokens(30, 144, 2);
        let input = ModelInput {
            audio: Some(&a),
            video: Some(&v),
            ..ModelInput::default()
        };
        for (regime, expect) in [(TrainingRegime::FineTune, true), (TrainingRegime::LinearProbe, false)] {
            let mut m = FusionModel::toy(FusionMode::Fused, regime, &cfg, 2, 4, 9).unwrap();
            let (logits, cache) = m.forward_train(&input).unwrap();
            let ce = crate::nn::cross_entropy_loss(&logits, &[3]).unwrap();
            m.backward_sample(&cache, &ce.grad);
            let enc = m.encoder_parameters();
            assert_eq!(m.store.grad_norm_sq(&enc) > 0.0, expect, "{regime:?}");
            assert!(m.store.grad_norm_sq(&[m.head.weight]) > 0.0);
        }
    }

    #[test]
    fn logits_are_affine_and_argmax_is_monotone_invariant() {
        let m = FusionModel::external(FusionMode::Fused, TrainingRegime::LinearProbe, 3, 3, 4).unwrap();
        let x = [0.2, -0.7, 1.1, 0.0, 3.0, -2.0];
        let z = m.head_logits(&x).unwrap();
        let b = m.store.value(m.head.bias);
        let alpha = 2.5;
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let zs = m.head_logits(&scaled).unwrap();
        for c in 0..STAGE_COUNT {
            assert!((zs[c] - (alpha * (z[c] - b[c]) + b[c])).abs() < 1e-12);
        }
        let mut t = z;
        t.iter_mut().for_each(|v| *v = libm::exp(*v) * 3.0 + 1.0);
        assert_eq!(argmax_stage(&t), argmax_stage(&z));
    }
}

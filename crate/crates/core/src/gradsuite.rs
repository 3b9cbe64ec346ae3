//! Finite-difference checks of every differentiable fragment at random small
//! shapes. Inputs are registered as parameters so their gradients are
//! checked too, and each fragment output is reduced to a scalar with a fixed
//! random projection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoders::{EncoderConfig, EncoderError, TokenEncoder};
use crate::fusion::{FusionError, FusionMode, FusionModel, ModelInput, TrainingRegime};
use crate::nn::gradcheck::{gradcheck, GradcheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::nn::{
    cross_entropy, mean_pool, mean_pool_backward, Dense, FeedForward, LayerNorm, MultiHeadAttention, NnError, ParamId,
    ParamStore, Tensor, TransformerBlock,
};
use crate::stage::STAGE_COUNT;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("unknown fragment {0:?}")]
    UnknownFragment(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fragment {
    Dense,
    LayerNorm,
    FeedForward,
    Attention,
    TransformerBlock,
    MeanPool,
    CrossEntropy,
    FusionHead,
    ToyEncoder,
}

impl Fragment {
    pub const ALL: [Fragment; 9] = [
        Fragment::Dense,
        Fragment::LayerNorm,
        Fragment::FeedForward,
        Fragment::Attention,
        Fragment::TransformerBlock,
        Fragment::MeanPool,
        Fragment::CrossEntropy,
        Fragment::FusionHead,
        Fragment::ToyEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fragment::Dense => "dense",
            Fragment::LayerNorm => "layernorm",
            Fragment::FeedForward => "feedforward",
            Fragment::Attention => "attention",
            Fragment::TransformerBlock => "transformer_block",
            Fragment::MeanPool => "mean_pool",
            Fragment::CrossEntropy => "cross_entropy",
            Fragment::FusionHead => "fusion_head",
            Fragment::ToyEncoder => "toy_encoder",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SuiteError> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| SuiteError::UnknownFragment(name.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentResult {
    pub fragment: Fragment,
    pub seed: u64,
    pub report: GradcheckReport,
}

/// Layer norm over two values is a smoothed sign function whose curvature
/// defeats finite differences whenever the pair is nearly equal, so every
/// normalised width starts here.
const MIN_NORM_WIDTH: usize = 4;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(store: &mut ParamStore, id: ParamId, g: &[f64]) {
    store.grad_mut(id).iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Runs the checker; with `corrupt` set, analytic gradients of every
/// parameter whose name contains it are doubled first.
fn check<L, A>(store: &mut ParamStore, loss: L, analytic: A, corrupt: Option<&str>) -> Result<GradcheckReport, NnError>
where
    L: Fn(&ParamStore) -> f64,
    A: Fn(&mut ParamStore),
{
    let doubled: Vec<ParamId> = match corrupt {
        Some(frag) => store.iter().filter(|(_, p)| p.name.contains(frag)).map(|(id, _)| id).collect(),
        None => Vec::new(),
    };
    let analytic = |s: &mut ParamStore| {
        analytic(s);
        for &id in &doubled {
            s.grad_mut(id).iter_mut().for_each(|g| *g *= 2.0);
        }
    };
    gradcheck(store, loss, analytic, DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn input(store: &mut ParamStore, rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<ParamId, NnError> {
    store.add("input", Tensor::new(&[rows, cols], uniform(rng, rows * cols))?)
}

/// Checks one fragment at a shape and initialisation drawn from `seed`.
pub fn check_fragment(fragment: Fragment, seed: u64, corrupt: Option<&str>) -> Result<GradcheckReport, SuiteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n = rng.random_range(1..=4usize);
    let report = match fragment {
        Fragment::Dense => {
            let (d_in, d_out) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let layer = Dense::new(&mut store, "dense", d_in, d_out, &mut rng)?;
            let x = input(&mut store, &mut rng, n, d_in)?;
            let r = uniform(&mut rng, n * d_out);
            check(
                &mut store,
                |s| dot(&layer.forward(s, s.value(x), n), &r),
                |s| {
                    let xv = s.value(x).to_vec();
                    let dx = layer.backward(s, &xv, n, &r, true).unwrap_or_default();
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
        Fragment::LayerNorm => {
            let d = rng.random_range(MIN_NORM_WIDTH..=8);
            let ln = LayerNorm::new(&mut store, "ln", d)?;
            // Non-trivial affine so gamma and beta gradients are not at a special point.
            for id in [ln.gamma, ln.beta] {
                let v = uniform(&mut rng, d);
                store.get_mut(id).value.data_mut().copy_from_slice(&v);
            }
            let x = input(&mut store, &mut rng, n, d)?;
            let r = uniform(&mut rng, n * d);
            check(
                &mut store,
                |s| dot(&ln.forward(s, s.value(x), n).0, &r),
                |s| {
                    let (_, cache) = ln.forward(s, s.value(x), n);
                    let dx = ln.backward(s, &cache, n, &r);
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
        Fragment::FeedForward => {
            let (d, hidden) = (rng.random_range(1..=6), rng.random_range(1..=8));
            let ff = FeedForward::new(&mut store, "ff", d, hidden, &mut rng)?;
            let x = input(&mut store, &mut rng, n, d)?;
            let r = uniform(&mut rng, n * d);
            check(
                &mut store,
                |s| dot(&ff.forward(s, s.value(x), n).0, &r),
                |s| {
                    let (_, cache) = ff.forward(s, s.value(x), n);
                    let dx = ff.backward(s, &cache, n, &r);
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
        Fragment::Attention => {
            let heads = rng.random_range(1..=2);
            let d = heads * rng.random_range(1..=3);
            let mha = MultiHeadAttention::new(&mut store, "attn", d, heads, &mut rng)?;
            let x = input(&mut store, &mut rng, n, d)?;
            let r = uniform(&mut rng, n * d);
            check(
                &mut store,
                |s| dot(&mha.forward(s, s.value(x), n).0, &r),
                |s| {
                    let (_, cache) = mha.forward(s, s.value(x), n);
                    let dx = mha.backward(s, &cache, n, &r);
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
        Fragment::TransformerBlock => {
            let heads = rng.random_range(1..=2);
            let d = MIN_NORM_WIDTH + 2 * rng.random_range(0..=1);
            let block = TransformerBlock::new(&mut store, "block", d, heads, rng.random_range(1..=6), &mut rng)?;
            let x = input(&mut store, &mut rng, n, d)?;
            let r = uniform(&mut rng, n * d);
            check(
                &mut store,
                |s| dot(&block.forward(s, s.value(x), n).0, &r),
                |s| {
                    let (_, cache) = block.forward(s, s.value(x), n);
                    let dx = block.backward(s, &cache, n, &r);
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
        Fragment::MeanPool => {
            let d = rng.random_range(1..=5);
            let x = input(&mut store, &mut rng, n, d)?;
            let r = uniform(&mut rng, d);
            check(
                &mut store,
                |s| dot(&mean_pool(s.value(x), n, d), &r),
                |s| add_into(s, x, &mean_pool_backward(&r, n)),
                corrupt,
            )?
        }
        Fragment::CrossEntropy => {
            let logits: Vec<f64> = uniform(&mut rng, n * STAGE_COUNT).iter().map(|v| 3.0 * v).collect();
            let x = store.add("logits", Tensor::new(&[n, STAGE_COUNT], logits)?)?;
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..STAGE_COUNT)).collect();
            let loss = |s: &ParamStore| cross_entropy(s.value(x), &labels, STAGE_COUNT).map(|c| c.loss);
            loss(&store)?;
            check(
                &mut store,
                |s| loss(s).unwrap_or(f64::NAN),
                |s| {
                    if let Ok(ce) = cross_entropy(s.value(x), &labels, STAGE_COUNT) {
                        add_into(s, x, &ce.grad);
                    }
                },
                corrupt,
            )?
        }
        Fragment::FusionHead => {
            let (de, dp) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let mut model = FusionModel::external(FusionMode::Fused, TrainingRegime::LinearProbe, de, dp, seed)?;
            let mut store = core::mem::take(&mut model.store);
            let eog = input(&mut store, &mut rng, 1, de)?;
            let psm = store.add("input.psm", Tensor::new(&[1, dp], uniform(&mut rng, dp))?)?;
            let label = [rng.random_range(0..STAGE_COUNT)];
            let head = model.head;
            let fused = |s: &ParamStore| {
                model.head_input(&ModelInput {
                    eog_embedding: Some(s.value(eog)),
                    psm_embedding: Some(s.value(psm)),
                    ..ModelInput::default()
                })
            };
            fused(&store)?;
            return Ok(check(
                &mut store,
                |s| {
                    let x = fused(s).unwrap_or_default();
                    cross_entropy(&head.forward(s, &x, 1), &label, STAGE_COUNT).map_or(f64::NAN, |c| c.loss)
                },
                |s| {
                    let x = fused(s).unwrap_or_default();
                    let Ok(ce) = cross_entropy(&head.forward(s, &x, 1), &label, STAGE_COUNT) else {
                        return;
                    };
                    let dx = head.backward(s, &x, 1, &ce.grad, true).unwrap_or_default();
                    add_into(s, eog, &dx[..de]);
                    add_into(s, psm, &dx[de..]);
                },
                corrupt,
            )?);
        }
        Fragment::ToyEncoder => {
            let heads = rng.random_range(1..=2);
            let cfg = EncoderConfig {
                model_dim: MIN_NORM_WIDTH + 2 * rng.random_range(0..=1),
                head_count: heads,
                block_count: rng.random_range(1..=2),
                ff_hidden: rng.random_range(1..=6),
                embedding_dim: rng.random_range(1..=4),
                max_tokens: 6,
                use_positional: rng.random_bool(0.5),
                ..EncoderConfig::default()
            };
            let width = rng.random_range(1..=5);
            let enc = TokenEncoder::new(&mut store, "enc", width, &cfg, &mut rng)?;
            let x = input(&mut store, &mut rng, n, width)?;
            let r = uniform(&mut rng, cfg.embedding_dim);
            enc.encode(&store, store.value(x), n)?;
            check(
                &mut store,
                |s| enc.encode(s, s.value(x), n).map_or(f64::NAN, |e| dot(&e, &r)),
                |s| {
                    let Ok((_, cache)) = enc.forward(s, s.value(x), n) else {
                        return;
                    };
                    let dx = enc.backward(s, &cache, &r, true).unwrap_or_default();
                    add_into(s, x, &dx);
                },
                corrupt,
            )?
        }
    };
    Ok(report)
}

/// Every fragment at every seed in `seeds`.
pub fn run_suite(seeds: impl Iterator<Item = u64> + Clone) -> Result<Vec<FragmentResult>, SuiteError> {
    let mut out = Vec::new();
    for fragment in Fragment::ALL {
        for seed in seeds.clone() {
            out.push(FragmentResult {
                fragment,
                seed,
                report: check_fragment(fragment, seed, None)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fragment_passes_a_few_seeds() {
        for r in run_suite(0..3).unwrap() {
            assert!(r.report.passed(), "{} seed {}: {:?}", r.fragment.name(), r.seed, r.report);
        }
    }

    #[test]
    fn doubled_gradients_are_caught() {
        for (fragment, target) in [
            (Fragment::Dense, "dense.weight"),
            (Fragment::LayerNorm, "ln.gamma"),
            (Fragment::Attention, "attn.value"),
            (Fragment::MeanPool, "input"),
            (Fragment::CrossEntropy, "logits"),
            (Fragment::FusionHead, "head.bias"),
            (Fragment::ToyEncoder, "enc.embed"),
        ] {
            let r = check_fragment(fragment, 5, Some(target)).unwrap();
            assert!(!r.passed(), "{} with {target} doubled", fragment.name());
            let failing: Vec<&str> = r.params.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect();
            assert!(failing.iter().all(|n| n.contains(target)), "{failing:?}");
        }
    }

    #[test]
    fn names_round_trip() {
        for f in Fragment::ALL {
            assert_eq!(Fragment::from_name(f.name()).unwrap(), f);
        }
        assert!(Fragment::from_name("conv").is_err());
    }
}

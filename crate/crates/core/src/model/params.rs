//! Parameter construction, naming and tape binding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attributes::{Attribute, ATTRIBUTE_COUNT};
use crate::autodiff::{glorot_uniform, he_normal, zero_init, ParamSet, Real, Tape, Tensor, ValueId};

use super::config::ModelConfig;
use super::ModelError;

#[derive(Clone, Copy, Debug, Default)]
pub struct ConvIdx {
    pub kernel: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TwoLayerIdx {
    pub w0: usize,
    pub b0: usize,
    pub w1: usize,
    pub b1: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

/// Indices of every weight group inside the backing [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub blocks: [ConvIdx; 4],
    pub sam: TwoLayerIdx,
    pub spec: [LinearIdx; ATTRIBUTE_COUNT],
    pub ascmm: [LinearIdx; ATTRIBUTE_COUNT],
    pub caam: [TwoLayerIdx; ATTRIBUTE_COUNT],
    pub head: [TwoLayerIdx; ATTRIBUTE_COUNT],
}

/// All trainable weights of one model instance.
#[derive(Clone, Debug)]
pub struct ModelParams<F> {
    pub set: ParamSet<F>,
    pub layout: ParamLayout,
}

impl<F: Real> ModelParams<F> {
    /// Draw a fresh parameter set from a seeded stream.
    ///
    /// The draw order is fixed (backbone, SAM, specialisation, auxiliary
    /// heads, cross-attribute units, output heads) and every group is drawn
    /// whether or not its module is enabled, so ablation variants trained
    /// from the same seed start from identical shared weights.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let d = config.content_dim();
        let ah = config.attention_hidden;
        let hh = config.head_hidden;

        let mut blocks = Vec::with_capacity(4);
        let mut cin = 1usize;
        for (b, &cout) in config.preset.channels().iter().enumerate() {
            let kernel = set.insert(
                format!("backbone.block{b}.kernel"),
                he_normal(&[3, 3, cin, cout], 9 * cin, &mut rng),
            )?;
            let bias = set.insert(format!("backbone.block{b}.bias"), zero_init::<F>(&[cout]))?;
            blocks.push(ConvIdx { kernel, bias });
            cin = cout;
        }

        let sam = TwoLayerIdx {
            w0: set.insert("sam.w0", glorot_uniform(&[ah, d], d, ah, &mut rng))?,
            b0: set.insert("sam.b0", zero_init::<F>(&[ah]))?,
            w1: set.insert("sam.w1", glorot_uniform(&[1, ah], ah, 1, &mut rng))?,
            b1: set.insert("sam.b1", zero_init::<F>(&[1]))?,
        };

        let spec = per_attribute(|attr| {
            Ok(LinearIdx {
                w: set.insert(
                    format!("spec.{}.w", attr.name()),
                    glorot_uniform(&[d, d], d, d, &mut rng),
                )?,
                b: set.insert(format!("spec.{}.b", attr.name()), zero_init::<F>(&[d]))?,
            })
        })?;

        let ascmm = per_attribute(|attr| {
            Ok(LinearIdx {
                w: set.insert(
                    format!("ascmm.{}.w", attr.name()),
                    glorot_uniform(&[1, d], d, 1, &mut rng),
                )?,
                b: set.insert(format!("ascmm.{}.b", attr.name()), zero_init::<F>(&[1]))?,
            })
        })?;

        let caam = per_attribute(|attr| {
            Ok(TwoLayerIdx {
                w0: set.insert(
                    format!("caam.{}.w0", attr.name()),
                    glorot_uniform(&[ah, d], d, ah, &mut rng),
                )?,
                b0: set.insert(format!("caam.{}.b0", attr.name()), zero_init::<F>(&[ah]))?,
                w1: set.insert(
                    format!("caam.{}.w1", attr.name()),
                    glorot_uniform(&[1, ah], ah, 1, &mut rng),
                )?,
                b1: set.insert(format!("caam.{}.b1", attr.name()), zero_init::<F>(&[1]))?,
            })
        })?;

        let head = per_attribute(|attr| {
            Ok(TwoLayerIdx {
                w0: set.insert(
                    format!("head.{}.w1", attr.name()),
                    glorot_uniform(&[hh, d], d, hh, &mut rng),
                )?,
                b0: set.insert(format!("head.{}.b1", attr.name()), zero_init::<F>(&[hh]))?,
                w1: set.insert(
                    format!("head.{}.w2", attr.name()),
                    glorot_uniform(&[1, hh], hh, 1, &mut rng),
                )?,
                b1: set.insert(format!("head.{}.b2", attr.name()), zero_init::<F>(&[1]))?,
            })
        })?;

        Ok(Self {
            set,
            layout: ParamLayout {
                blocks: blocks.try_into().expect("exactly four blocks"),
                sam,
                spec,
                ascmm,
                caam,
                head,
            },
        })
    }

    /// Indices of the parameters that take part in forward/backward under
    /// the given switches. Disabled modules keep their (initialized) weights
    /// but never receive gradients or weight decay.
    pub fn active_indices(&self, config: &ModelConfig) -> Vec<usize> {
        let mut idx = Vec::new();
        for b in &self.layout.blocks {
            idx.extend([b.kernel, b.bias]);
        }
        if config.enable_sam {
            let s = &self.layout.sam;
            idx.extend([s.w0, s.b0, s.w1, s.b1]);
        }
        if config.enable_caam {
            for l in &self.layout.spec {
                idx.extend([l.w, l.b]);
            }
            for u in &self.layout.caam {
                idx.extend([u.w0, u.b0, u.w1, u.b1]);
            }
        }
        if config.enable_ascmm {
            for l in &self.layout.ascmm {
                idx.extend([l.w, l.b]);
            }
        }
        for u in &self.layout.head {
            idx.extend([u.w0, u.b0, u.w1, u.b1]);
        }
        idx
    }

    /// Insert every parameter as a tape leaf, in set order.
    pub fn bind(&self, tape: &mut Tape<F>, requires_grad: bool) -> Vec<ValueId> {
        self.set
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            set: self.set.cast(),
            layout: self.layout.clone(),
        }
    }
}

// Runs a per-attribute initializer in scoring order.
fn per_attribute<T: Copy + Default>(
    mut f: impl FnMut(Attribute) -> Result<T, ModelError>,
) -> Result<[T; ATTRIBUTE_COUNT], ModelError> {
    let mut out = [T::default(); ATTRIBUTE_COUNT];
    for (i, attr) in Attribute::ALL.iter().enumerate() {
        out[i] = f(*attr)?;
    }
    Ok(out)
}

/// Uniform slice weights used when slice attention is disabled.
pub fn uniform_slice_weights<F: Real>(m: usize) -> Tensor<F> {
    Tensor::full(&[m], F::of_f64(1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ChannelPreset;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            preset: ChannelPreset::Tiny,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::<f32>::init(&tiny_config(), 7).unwrap();
        let b = ModelParams::<f32>::init(&tiny_config(), 7).unwrap();
        for (x, y) in a.set.iter().zip(b.set.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn all_groups_drawn_regardless_of_flags() {
        // Shared weights must match between ablation variants from one seed.
        let full = ModelParams::<f64>::init(&tiny_config(), 3).unwrap();
        let bare = ModelParams::<f64>::init(
            &ModelConfig {
                preset: ChannelPreset::Tiny,
                ..ModelConfig::no_attention()
            },
            3,
        )
        .unwrap();
        assert_eq!(full.set.len(), bare.set.len());
        for (x, y) in full.set.iter().zip(bare.set.iter()) {
            assert_eq!(x.value, y.value, "group {} differs across variants", x.name);
        }
    }

    #[test]
    fn biases_start_at_zero() {
        let p = ModelParams::<f64>::init(&tiny_config(), 1).unwrap();
        for param in p.set.iter() {
            let is_bias = [".bias", ".b", ".b0", ".b1", ".b2"]
                .iter()
                .any(|s| param.name.ends_with(s));
            if is_bias {
                assert!(
                    param.value.data().iter().all(|&v| v == 0.0),
                    "{} not zero",
                    param.name
                );
            }
        }
    }

    #[test]
    fn expected_shapes_for_paper_preset() {
        let p = ModelParams::<f32>::init(&ModelConfig::default(), 0).unwrap();
        let k0 = &p.set.get(p.layout.blocks[0].kernel).value;
        assert_eq!(k0.shape(), &[3, 3, 1, 32]);
        let sam_w0 = &p.set.get(p.layout.sam.w0).value;
        assert_eq!(sam_w0.shape(), &[128, 256]);
        let head_w2 = &p.set.get(p.layout.head[8].w1).value;
        assert_eq!(head_w2.shape(), &[1, 128]);
    }

    #[test]
    fn active_indices_track_flags() {
        let p = ModelParams::<f32>::init(&tiny_config(), 0).unwrap();
        let full = p.active_indices(&tiny_config());
        assert_eq!(full.len(), p.set.len());
        let bare = p.active_indices(&ModelConfig {
            preset: ChannelPreset::Tiny,
            ..ModelConfig::no_attention()
        });
        // backbone (8) + heads (36)
        assert_eq!(bare.len(), 8 + 36);
    }
}

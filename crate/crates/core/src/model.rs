//! Full network: two-stream encoder with per-level depth purification,
//! scale alignment, shared-weight transformer enhancement and the decoder.

use tritrans_tensor::{Graph, Scalar, Tensor, Var};

use crate::backbone::{self, BackboneWeights, FeaturePyramid};
use crate::config::{FusionMode, ModelConfig};
use crate::decoder::{Decoder, DecoderOutput};
use crate::dpm::Dpm;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamRegistry, ParamStore};
use crate::scale_adjust::{AlignedLevels, ScaleAdjust};
use crate::ttem::Ttem;

#[derive(Clone, Debug)]
pub struct TriTransNet {
    cfg: ModelConfig,
    registry: ParamRegistry,
    pub rgb: BackboneWeights,
    pub depth: BackboneWeights,
    /// One purification block per level (empty in additive fusion mode).
    pub purification: Vec<Dpm>,
    pub scale: ScaleAdjust,
    pub ttem: Option<Ttem>,
    pub decoder: Decoder,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub rgb: FeaturePyramid,
    pub depth: FeaturePyramid,
    /// Fused color features, levels 1..=5.
    pub fused: Vec<Var>,
    pub aligned: AlignedLevels,
    pub enhanced: Vec<Var>,
    pub output: DecoderOutput,
}

impl TriTransNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut reg = ParamRegistry::default();
        let rgb = BackboneWeights::new(&mut reg, "backbone.rgb", &cfg.channels);
        let depth = BackboneWeights::new(&mut reg, "backbone.depth", &cfg.channels);
        let purification = match cfg.fusion {
            FusionMode::Dpm => cfg
                .channels
                .iter()
                .enumerate()
                .map(|(i, &c)| Dpm::new(&mut reg, &format!("dpm.level{}", i + 1), c, cfg.cbam_reduction, cfg.spatial_kernel))
                .collect::<Result<_>>()?,
            FusionMode::Add => Vec::new(),
        };
        let first = cfg.lowest_level();
        let scale = ScaleAdjust::new(&mut reg, &cfg.channels[first - 1..], cfg.transition_channels, first)?;
        let ttem = cfg.ttem.then(|| Ttem::new(&mut reg, cfg));
        let decoder = Decoder::new(&mut reg, cfg);
        Ok(Self { cfg: cfg.clone(), registry: reg, rgb, depth, purification, scale, ttem, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        self.registry.init(seed)
    }

    /// `rgb: [B,3,H,W]`, `depth: [B,1,H,W]` (replicated to three channels) or `[B,3,H,W]`.
    pub fn trace<T: Scalar>(&self, cx: &Ctx<T>, rgb: Var, depth: Var) -> Result<Trace> {
        let g = cx.g;
        let (sr, sd) = (g.shape(rgb), g.shape(depth));
        if sr.len() != 4 || sd.len() != 4 || sr[0] != sd[0] || sr[2..] != sd[2..] {
            return Err(Error::Invalid(format!("rgb {sr:?} and depth {sd:?} are not aligned")));
        }
        let size = self.cfg.input_size;
        if sr[2] != size || sr[3] != size {
            return Err(Error::Invalid(format!(
                "model configured for {size}x{size} input, got {}x{}",
                sr[2], sr[3]
            )));
        }
        let depth3 = match sd[1] {
            1 => g.concat(&[depth, depth, depth], 1)?,
            3 => depth,
            c => return Err(Error::Invalid(format!("depth must have 1 or 3 channels, got {c}"))),
        };
        let fr = backbone::encode(cx, rgb, &self.rgb)?;
        let fd = backbone::encode(cx, depth3, &self.depth)?;
        let fused: Vec<Var> = match self.cfg.fusion {
            FusionMode::Dpm => self
                .purification
                .iter()
                .zip(fr.levels.iter().zip(&fd.levels))
                .map(|(dpm, (&r, &d))| dpm.purify(cx, r, d))
                .collect::<Result<_>>()?,
            FusionMode::Add => fr.levels.iter().zip(&fd.levels).map(|(&r, &d)| Ok(g.add(r, d)?)).collect::<Result<_>>()?,
        };
        let first = self.cfg.lowest_level();
        let aligned = self.scale.forward(cx, &fused[first - 1..])?;
        let enhanced = match &self.ttem {
            Some(t) => t.enhance(cx, &aligned)?,
            None => aligned.levels.clone(),
        };
        let output = self.decoder.forward(cx, &enhanced, fused[1], fused[0], (sr[2], sr[3]))?;
        Ok(Trace { rgb: fr, depth: fd, fused, aligned, enhanced, output })
    }

    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, rgb: Var, depth: Var) -> Result<DecoderOutput> {
        Ok(self.trace(cx, rgb, depth)?.output)
    }

    /// Inference: final saliency map `[B,1,H,W]` in (0, 1).
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let cx = Ctx::frozen(&g, params);
        let out = self.forward(&cx, g.constant(rgb.clone()), g.constant(depth.clone()))?;
        let map = g.sigmoid(out.final_logits);
        let t = g.value(map).clone();
        Ok(t)
    }

    /// Checks that a parameter store matches this model's layout.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        let specs = self.registry.specs();
        if specs.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "model has {} parameter tensors, checkpoint has {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, value)) in specs.iter().zip(params.names().iter().zip(params.values())) {
            if &spec.name != name || spec.shape != value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter `{}` {:?} vs checkpoint `{}` {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    value.shape()
                )));
            }
        }
        Ok(())
    }
}

//! Decoding of the enhanced levels together with the level-1/2 features.
//!
//! Three-stream mode decodes every enhanced level on its own path, emits a
//! deeply supervised side output per path, and sums the side logits before a
//! single sigmoid for the final map. Single-stream mode merges the enhanced
//! levels first and runs one path.

use tritrans_tensor::{Scalar, Var};

use crate::config::{DecoderMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{spatial, Conv};
use crate::params::{Ctx, ParamRegistry};

/// One decoding path with its own parameters.
#[derive(Clone, Debug)]
pub struct StreamDecoder {
    pub low1: Conv,
    pub low2: Conv,
    pub merge2: Conv,
    pub merge1: Conv,
    pub side_refine: Conv,
    pub side_out: Conv,
}

impl StreamDecoder {
    pub fn new(reg: &mut ParamRegistry, name: &str, ch1: usize, ch2: usize, width: usize) -> Self {
        Self {
            low1: Conv::new(reg, &format!("{name}.low1"), ch1, width, 3, 1),
            low2: Conv::new(reg, &format!("{name}.low2"), ch2, width, 3, 1),
            merge2: Conv::new(reg, &format!("{name}.merge2"), 2 * width, width, 3, 1),
            merge1: Conv::new(reg, &format!("{name}.merge1"), 2 * width, width, 3, 1),
            side_refine: Conv::new(reg, &format!("{name}.side_refine"), width, width, 3, 1),
            side_out: Conv::new(reg, &format!("{name}.side_out"), width, 1, 3, 1),
        }
    }

    /// Enhanced level + level-2 + level-1 features → stride-2 map with `C_t` channels.
    /// The enhanced level is doubled until it reaches the level-2 resolution.
    pub fn decode_stream<T: Scalar>(&self, cx: &Ctx<T>, enhanced: Var, level2: Var, level1: Var) -> Result<Var> {
        let g = cx.g;
        let (eh, ew) = spatial(cx, enhanced);
        let (h2, w2) = spatial(cx, level2);
        let (h1, w1) = spatial(cx, level1);
        let doublings = (0..4).find(|&m| (eh << m, ew << m) == (h2, w2));
        let Some(doublings) = doublings.filter(|_| (h1, w1) == (2 * h2, 2 * w2)) else {
            return Err(Error::Invalid(format!(
                "decoder resolution chain broken: {eh}x{ew} -> {h2}x{w2} -> {h1}x{w1}"
            )));
        };
        let r2 = self.low2.forward_relu(cx, level2)?;
        let r1 = self.low1.forward_relu(cx, level1)?;
        let mut up = enhanced;
        for _ in 0..doublings {
            up = g.upsample2x(up)?;
        }
        let cat = g.concat(&[up, r2], 1)?;
        let x = self.merge2.forward_relu(cx, cat)?;
        let up = g.upsample2x(x)?;
        let cat = g.concat(&[up, r1], 1)?;
        self.merge1.forward_relu(cx, cat)
    }

    /// Stride-2 decoded map → pre-sigmoid logits `[B,1,H_in,W_in]`.
    pub fn side_output<T: Scalar>(&self, cx: &Ctx<T>, decoded: Var, input_hw: (usize, usize)) -> Result<Var> {
        let g = cx.g;
        let up = g.upsample2x(decoded)?;
        let x = self.side_refine.forward_relu(cx, up)?;
        let x = if spatial(cx, x) == input_hw { x } else { g.resize_bilinear(x, input_hw.0, input_hw.1)? };
        self.side_out.forward(cx, x)
    }
}

/// Final logits are the plain sum of the stream logits (summed before the sigmoid).
/// Returns `(final_logits, final_map)`.
pub fn fuse_final<T: Scalar>(cx: &Ctx<T>, logits: &[Var], streams: usize) -> Result<(Var, Var)> {
    if logits.len() != streams || logits.is_empty() {
        return Err(Error::Invalid(format!("final fusion expects {streams} stream logits, got {}", logits.len())));
    }
    let mut sum = logits[0];
    for &l in &logits[1..] {
        sum = cx.g.add(sum, l)?;
    }
    Ok((sum, cx.g.sigmoid(sum)))
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub final_logits: Var,
    /// One per stream in three-stream mode, empty in single-stream mode.
    pub side_logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub enum Decoder {
    ThreeStream(Vec<StreamDecoder>),
    SingleStream { reduce: Conv, stream: StreamDecoder },
}

impl Decoder {
    pub fn new(reg: &mut ParamRegistry, cfg: &ModelConfig) -> Self {
        let (c1, c2, ct) = (cfg.channels[0], cfg.channels[1], cfg.transition_channels);
        match cfg.decoder {
            DecoderMode::ThreeStream => Decoder::ThreeStream(
                (0..cfg.levels).map(|j| StreamDecoder::new(reg, &format!("decoder.stream{j}"), c1, c2, ct)).collect(),
            ),
            DecoderMode::SingleStream => Decoder::SingleStream {
                reduce: Conv::new(reg, "decoder.single.reduce", cfg.levels * ct, ct, 3, 1),
                stream: StreamDecoder::new(reg, "decoder.single", c1, c2, ct),
            },
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        cx: &Ctx<T>,
        enhanced: &[Var],
        level2: Var,
        level1: Var,
        input_hw: (usize, usize),
    ) -> Result<DecoderOutput> {
        match self {
            Decoder::ThreeStream(streams) => {
                if streams.len() != enhanced.len() {
                    return Err(Error::Invalid(format!(
                        "decoder has {} streams, got {} enhanced levels",
                        streams.len(),
                        enhanced.len()
                    )));
                }
                let side_logits = streams
                    .iter()
                    .zip(enhanced)
                    .map(|(s, &e)| {
                        let d = s.decode_stream(cx, e, level2, level1)?;
                        s.side_output(cx, d, input_hw)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (final_logits, _) = fuse_final(cx, &side_logits, streams.len())?;
                Ok(DecoderOutput { final_logits, side_logits })
            }
            Decoder::SingleStream { reduce, stream } => {
                let cat = cx.g.concat(enhanced, 1)?;
                let merged = reduce.forward_relu(cx, cat)?;
                let d = stream.decode_stream(cx, merged, level2, level1)?;
                let final_logits = stream.side_output(cx, d, input_hw)?;
                Ok(DecoderOutput { final_logits, side_logits: Vec::new() })
            }
        }
    }
}

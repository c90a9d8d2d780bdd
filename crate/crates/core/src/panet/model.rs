//! The three-decoder segmentation network.
//!
//! ```text
//! image ─ E1 ─ E2 ─ E3 ─┬─ E4 ─┬─ E5 ─┐
//!                       │      │      │
//!                     PDC    PDC    PDC          (optional)
//!                       │      │      │
//!                  D8 (×2)³ D16 (×2)⁴ D32 (×2)⁵
//!                       └──────┼──────┘
//!                           concat
//!                          SE block                (optional)
//!                         1×1 conv → softmax
//! ```
//!
//! Each encoder stage is two conv–BN–ReLU layers followed by 2×2 max
//! pooling. Each decoder stage is a learnable 2× upsampling that halves the
//! width, followed by conv–BN–ReLU; all three decoders end at
//! `base_channels / 2` channels and full resolution.

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{invalid, Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvSpec, Mode, PdcBlock, SeBlock, Upsample2x};
use crate::panet::config::{ModelConfig, ENCODER_STAGES, TOTAL_STRIDE};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

/// Encoder stage index (0-based) whose pooled output feeds each decoder,
/// with the decoder's upsampling depth.
pub const DECODER_TAPS: [(usize, usize, &str); 3] = [(2, 3, "s8"), (3, 4, "s16"), (4, 5, "s32")];

#[derive(Clone, Debug)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, ConvSpec::same3x3(1), rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, mode)?;
        Ok(tape.relu(y))
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Upsample2x,
    refine: ConvBnRelu,
}

#[derive(Clone, Debug)]
pub struct PaNet<T: Scalar> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    encoder: Vec<[ConvBnRelu; 2]>,
    pdc: Option<Vec<PdcBlock>>,
    decoders: Vec<Vec<DecoderStage>>,
    se: Option<SeBlock>,
    head: Conv2d,
}

impl<T: Scalar> PaNet<T> {
    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut params = ParamStore::new();
        let widths = config.encoder_channels();

        let mut encoder = Vec::with_capacity(ENCODER_STAGES);
        let mut cin = 1;
        for (s, &cout) in widths.iter().enumerate() {
            let name = format!("enc{}", s + 1);
            encoder.push([
                ConvBnRelu::new(&mut params, &format!("{name}.0"), cin, cout, &mut rng)?,
                ConvBnRelu::new(&mut params, &format!("{name}.1"), cout, cout, &mut rng)?,
            ]);
            cin = cout;
        }

        let pdc = if config.enable_pdc {
            Some(
                DECODER_TAPS
                    .iter()
                    .map(|&(stage, _, tag)| PdcBlock::new(&mut params, &format!("pdc_{tag}"), widths[stage], &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        let mut decoders = Vec::with_capacity(DECODER_TAPS.len());
        for &(stage, depth, tag) in &DECODER_TAPS {
            let mut c = widths[stage];
            let mut stages = Vec::with_capacity(depth);
            for j in 0..depth {
                let name = format!("dec_{tag}.{j}");
                let half = c / 2;
                stages.push(DecoderStage {
                    up: Upsample2x::new(&mut params, &format!("{name}.up"), c, half, &mut rng)?,
                    refine: ConvBnRelu::new(&mut params, &name, half, half, &mut rng)?,
                });
                c = half;
            }
            debug_assert_eq!(c, config.decoder_out_channels());
            decoders.push(stages);
        }

        let fused = DECODER_TAPS.len() * config.decoder_out_channels();
        let se = if config.enable_se {
            Some(SeBlock::new(&mut params, "se", fused, config.se_reduction, &mut rng)?)
        } else {
            None
        };
        let head = Conv2d::new(&mut params, "head", fused, config.num_classes, 1, ConvSpec::default(), &mut rng)?;

        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            pdc,
            decoders,
            se,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Per-pixel class probabilities `N×2×H×W` for `N×1×H×W` images sized
    /// as configured. Channel 1 is the plaque probability.
    pub fn forward(&self, tape: &mut Tape<T>, images: NodeId, mode: Mode) -> Result<NodeId> {
        self.check_configured_size(tape, images)?;
        self.forward_unchecked(&self.params, tape, images, mode)
    }

    fn check_configured_size(&self, tape: &Tape<T>, images: NodeId) -> Result<()> {
        let (_, c, h, w) = tape.value(images).dims4("panet.forward")?;
        if c != 1 || h != self.config.input_height || w != self.config.input_width {
            return Err(Error::ShapeMismatch {
                op: "panet.forward",
                lhs: vec![1, self.config.input_height, self.config.input_width],
                rhs: vec![c, h, w],
            });
        }
        Ok(())
    }

    /// Fully convolutional forward for any single-channel input whose sides
    /// are multiples of 32.
    pub fn forward_any_size(&self, tape: &mut Tape<T>, images: NodeId, mode: Mode) -> Result<NodeId> {
        let (_, c, h, w) = tape.value(images).dims4("panet.forward")?;
        if c != 1 || h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
            return Err(invalid(
                "panet.forward",
                format!("expected 1 channel with sides divisible by {TOTAL_STRIDE}, got {c}×{h}×{w}"),
            ));
        }
        self.forward_unchecked(&self.params, tape, images, mode)
    }

    /// [`PaNet::forward`] reading weights from `store` instead of
    /// `self.params`; `store` must have the same layout (e.g. a perturbed
    /// copy, as in gradient checking).
    pub fn forward_with(&self, store: &ParamStore<T>, tape: &mut Tape<T>, images: NodeId, mode: Mode) -> Result<NodeId> {
        if store.len() != self.params.len() {
            return Err(invalid(
                "panet.forward",
                format!("store has {} parameters, model has {}", store.len(), self.params.len()),
            ));
        }
        self.check_configured_size(tape, images)?;
        self.forward_unchecked(store, tape, images, mode)
    }

    fn forward_unchecked(&self, store: &ParamStore<T>, tape: &mut Tape<T>, images: NodeId, mode: Mode) -> Result<NodeId> {
        let mut x = images;
        let mut pooled = Vec::with_capacity(ENCODER_STAGES);
        for [a, b] in &self.encoder {
            x = a.forward(tape, store, x, mode)?;
            x = b.forward(tape, store, x, mode)?;
            x = tape.maxpool2d(x)?;
            pooled.push(x);
        }

        let mut branches = Vec::with_capacity(DECODER_TAPS.len());
        for (d, &(stage, _, _)) in DECODER_TAPS.iter().enumerate() {
            let mut y = pooled[stage];
            if let Some(pdc) = &self.pdc {
                y = pdc[d].forward(tape, store, y)?;
            }
            for st in &self.decoders[d] {
                y = st.up.forward(tape, store, y)?;
                y = st.refine.forward(tape, store, y, mode)?;
            }
            branches.push(y);
        }

        let mut fused = tape.concat_channels(&branches)?;
        if let Some(se) = &self.se {
            fused = se.forward(tape, store, fused)?;
        }
        let logits = self.head.forward(tape, store, fused)?;
        tape.softmax_channels(logits)
    }

    /// Inference-mode plaque probabilities for one `H×W` image in `[0, 1]`.
    /// Sides that are not multiples of 32 are reflect-padded on the
    /// bottom/right and the prediction is cropped back.
    pub fn predict_foreground(&self, height: usize, width: usize, pixels: &[f32]) -> Result<Vec<f32>> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "predict",
                lhs: vec![height, width],
                rhs: vec![pixels.len()],
            });
        }
        let ph = height.div_ceil(TOTAL_STRIDE) * TOTAL_STRIDE;
        let pw = width.div_ceil(TOTAL_STRIDE) * TOTAL_STRIDE;
        let padded = Tensor::from_fn(&[1, 1, ph, pw], |i| {
            let (r, c) = (reflect(i / pw, height), reflect(i % pw, width));
            T::from_f64_lossy(pixels[r * width + c] as f64)
        })?;
        let mut tape = Tape::new();
        let x = tape.constant(padded);
        let probs = self.forward_any_size(&mut tape, x, Mode::Inference)?;
        let fg = &tape.value(probs).data()[ph * pw..2 * ph * pw];
        let mut out = Vec::with_capacity(height * width);
        for r in 0..height {
            out.extend(fg[r * pw..r * pw + width].iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
        }
        Ok(out)
    }

    pub fn summary(&self) -> ParamSummary {
        let rows: Vec<ParamRow> = self
            .params
            .iter()
            .map(|(_, p)| ParamRow {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                count: p.value.len(),
                trainable: p.trainable,
            })
            .collect();
        ParamSummary {
            total: rows.iter().map(|r| r.count).sum(),
            trainable: rows.iter().filter(|r| r.trainable).map(|r| r.count).sum(),
            rows,
        }
    }

    /// Converts parameters to another precision, keeping layout and names.
    pub fn cast<U: Scalar>(&self) -> PaNet<U> {
        PaNet {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            pdc: self.pdc.clone(),
            decoders: self.decoders.clone(),
            se: self.se.clone(),
            head: self.head.clone(),
        }
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamSummary {
    pub rows: Vec<ParamRow>,
    /// All stored scalars, including batch-norm running statistics.
    pub total: usize,
    pub trainable: usize,
}

impl std::fmt::Display for ParamSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.rows {
            let shape = r.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let tag = if r.trainable { "" } else { " (buffer)" };
            writeln!(f, "{:<32} {:>14} {:>10}{tag}", r.name, shape, r.count)?;
        }
        writeln!(f, "trainable: {}", self.trainable)?;
        write!(f, "total: {}", self.total)
    }
}

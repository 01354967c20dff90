//! Parameterized building blocks: convolutions, normalization, BiFPN and
//! the toy backbones.

use serde::{Deserialize, Serialize};

use super::init::ParamBuilder;
use super::params::ParamId;
use super::tape::{Tape, Var};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Mish,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Mish => tape.mish(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let mut s = pb.scope(name);
        let weight = s.xavier("w", &[k, k, cin, cout])?;
        let bias = bias.then(|| s.constant("b", &[cout], 0.0));
        Ok(Conv { weight, bias, stride })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        let mut s = pb.scope(name);
        LayerNorm {
            gamma: s.constant("gamma", &[channels], 1.0),
            beta: s.constant("beta", &[channels], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Convolution, layer normalization, activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: LayerNorm,
    pub act: Activation,
}

impl ConvBlock {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        act: Activation,
    ) -> Result<Self> {
        let mut s = pb.scope(name);
        Ok(ConvBlock {
            conv: Conv::new(&mut s, "conv", 3, cin, cout, stride, false)?,
            norm: LayerNorm::new(&mut s, "norm", cout),
            act,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = self.norm.forward(tape, y)?;
        Ok(self.act.apply(tape, y))
    }
}

/// Feature maps ordered finest first, with their strides relative to the
/// network input.
#[derive(Clone, Debug)]
pub struct LevelSet {
    pub levels: Vec<Var>,
    pub strides: Vec<usize>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn shapes(&self, tape: &Tape) -> Vec<Vec<usize>> {
        self.levels.iter().map(|&v| tape.shape(v).to_vec()).collect()
    }

    pub fn truncate(&self, n: usize) -> LevelSet {
        LevelSet {
            levels: self.levels[..n].to_vec(),
            strides: self.strides[..n].to_vec(),
        }
    }
}

/// A fusion node: fast normalized fusion of its inputs, then a 3×3 block.
#[derive(Clone, Debug)]
pub struct FusionNode {
    pub weights: ParamId,
    pub block: ConvBlock,
}

impl FusionNode {
    pub fn new(pb: &mut ParamBuilder, name: &str, inputs: usize, channels: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        Ok(FusionNode {
            weights: s.constant("fuse", &[inputs], 1.0),
            block: ConvBlock::new(&mut s, "block", channels, channels, 1, Activation::Mish)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        let w = tape.param(self.weights);
        let f = tape.fuse(inputs, w)?;
        self.block.forward(tape, f)
    }
}

/// One bidirectional pyramid pass: top-down, then bottom-up.
#[derive(Clone, Debug)]
pub struct BiFpnBlock {
    top_down: Vec<FusionNode>,
    bottom_up: Vec<FusionNode>,
}

impl BiFpnBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, levels: usize, channels: usize) -> Result<Self> {
        if levels < 3 {
            return Err(Error::Config(format!("BiFPN needs at least 3 levels, got {levels}")));
        }
        let mut s = pb.scope(name);
        let top_down = (0..levels - 1)
            .map(|i| FusionNode::new(&mut s, &format!("td{i}"), 2, channels))
            .collect::<Result<_>>()?;
        let bottom_up = (1..levels)
            .map(|i| {
                let inputs = if i == levels - 1 { 2 } else { 3 };
                FusionNode::new(&mut s, &format!("bu{i}"), inputs, channels)
            })
            .collect::<Result<_>>()?;
        Ok(BiFpnBlock { top_down, bottom_up })
    }

    pub fn levels(&self) -> usize {
        self.top_down.len() + 1
    }

    pub fn forward(&self, tape: &mut Tape, input: &LevelSet) -> Result<LevelSet> {
        let n = self.levels();
        if input.len() != n {
            return Err(Error::Shape(format!("BiFPN built for {n} levels, got {}", input.len())));
        }
        let p = &input.levels;
        let mut td = p.clone();
        for i in (0..n - 1).rev() {
            let up = tape.upsample2(td[i + 1])?;
            td[i] = self.top_down[i].forward(tape, &[p[i], up])?;
        }
        let mut out = td.clone();
        for i in 1..n {
            let down = tape.avg_pool2(out[i - 1])?;
            let inputs = if i == n - 1 {
                vec![p[i], down]
            } else {
                vec![p[i], td[i], down]
            };
            out[i] = self.bottom_up[i - 1].forward(tape, &inputs)?;
        }
        Ok(LevelSet {
            levels: out,
            strides: input.strides.clone(),
        })
    }
}

/// Repeated BiFPN blocks.
#[derive(Clone, Debug)]
pub struct BiFpn {
    pub blocks: Vec<BiFpnBlock>,
}

impl BiFpn {
    pub fn new(pb: &mut ParamBuilder, name: &str, levels: usize, channels: usize, repeats: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let blocks = (0..repeats)
            .map(|r| BiFpnBlock::new(&mut s, &format!("r{r}"), levels, channels))
            .collect::<Result<_>>()?;
        Ok(BiFpn { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, input: &LevelSet) -> Result<LevelSet> {
        let mut x = input.clone();
        for b in &self.blocks {
            x = b.forward(tape, &x)?;
        }
        Ok(x)
    }
}

/// Stride-2 block chain producing P3..P7 (strides 8..128).
#[derive(Clone, Debug)]
pub struct ImageBackbone {
    blocks: Vec<ConvBlock>,
}

/// Largest stride of the image pyramid.
pub const IMAGE_MAX_STRIDE: usize = 128;
/// Strides of P3..P7.
pub const IMAGE_STRIDES: [usize; 5] = [8, 16, 32, 64, 128];

impl ImageBackbone {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_channels: usize, channels: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let blocks = (0..7)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { channels };
                ConvBlock::new(&mut s, &format!("b{i}"), cin, channels, 2, Activation::LeakyRelu)
            })
            .collect::<Result<_>>()?;
        Ok(ImageBackbone { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, image: Var) -> Result<LevelSet> {
        let s = tape.shape(image);
        if s.len() != 3 || !s[0].is_multiple_of(IMAGE_MAX_STRIDE) || !s[1].is_multiple_of(IMAGE_MAX_STRIDE) {
            return Err(Error::Shape(format!(
                "image input {s:?} must be (H, W, C) with H and W divisible by {IMAGE_MAX_STRIDE}"
            )));
        }
        let mut x = image;
        let mut levels = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(tape, x)?;
            if i >= 2 {
                levels.push(x);
            }
        }
        Ok(LevelSet {
            levels,
            strides: IMAGE_STRIDES.to_vec(),
        })
    }
}

/// Strides of L1..L3 relative to the BEV grid.
pub const BEV_STRIDES: [usize; 3] = [1, 2, 4];

/// One stride-1 block then two stride-2 blocks: L1, L2, L3.
#[derive(Clone, Debug)]
pub struct BevBackbone {
    blocks: Vec<ConvBlock>,
}

impl BevBackbone {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_channels: usize, channels: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let blocks = BEV_STRIDES
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let cin = if i == 0 { in_channels } else { channels };
                let stride = if i == 0 { 1 } else { 2 };
                ConvBlock::new(&mut s, &format!("b{i}"), cin, channels, stride, Activation::LeakyRelu)
            })
            .collect::<Result<_>>()?;
        Ok(BevBackbone { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, grid: Var) -> Result<LevelSet> {
        let s = tape.shape(grid);
        if s.len() != 3 || !s[0].is_multiple_of(4) || !s[1].is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "BEV input {s:?} must be (X, Y, C) with X and Y divisible by 4"
            )));
        }
        let mut x = grid;
        let mut levels = Vec::new();
        for b in &self.blocks {
            x = b.forward(tape, x)?;
            levels.push(x);
        }
        Ok(LevelSet {
            levels,
            strides: BEV_STRIDES.to_vec(),
        })
    }
}

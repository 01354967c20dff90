use super::anchors::ANCHORS_PER_CELL;
use crate::tensornet::{Activation, Conv, ConvBlock, LevelSet, ParamBuilder, Tape, Var};
use crate::Result;

/// Initial foreground probability encoded in the classification bias.
pub const PRIOR_PROBABILITY: f64 = 0.01;

/// Classification and box-regression head shared by all levels.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: ConvBlock,
    pub cls: Conv,
    pub reg: Conv,
    pub deltas_per_anchor: usize,
}

/// Raw head outputs of one level: `(rows, cols, 9)` logits and
/// `(rows, cols, 9 · deltas)` box deltas.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub logits: Var,
    pub deltas: Var,
}

impl Head {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, deltas_per_anchor: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let hidden = ConvBlock::new(&mut s, "hidden", channels, channels, 1, Activation::Mish)?;
        let cls = {
            let mut c = s.scope("cls");
            let weight = c.xavier("w", &[1, 1, channels, ANCHORS_PER_CELL])?;
            let prior = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln();
            let bias = c.constant("b", &[ANCHORS_PER_CELL], prior);
            Conv {
                weight,
                bias: Some(bias),
                stride: 1,
            }
        };
        let reg = Conv::new(
            &mut s,
            "reg",
            1,
            channels,
            ANCHORS_PER_CELL * deltas_per_anchor,
            1,
            true,
        )?;
        Ok(Head {
            hidden,
            cls,
            reg,
            deltas_per_anchor,
        })
    }

    pub fn forward(&self, tape: &mut Tape, levels: &LevelSet) -> Result<Vec<HeadOutput>> {
        levels
            .levels
            .iter()
            .map(|&x| {
                let h = self.hidden.forward(tape, x)?;
                Ok(HeadOutput {
                    logits: self.cls.forward(tape, h)?,
                    deltas: self.reg.forward(tape, h)?,
                })
            })
            .collect()
    }
}

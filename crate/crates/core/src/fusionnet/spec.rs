//! Network layout and its text form.

use std::fmt;

use super::NetError;
use crate::classify::ExpressionLabel;
use crate::textfmt::KvDocument;

const MAGIC: &str = "posefer-netspec";
const MAX_SIDE: usize = 4096;
const MAX_CHANNELS: usize = 4096;
const MAX_KERNEL: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub const fn new(out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            out,
            k,
            stride,
            pad,
        }
    }

    /// Output side for an input side, `None` if the kernel does not fit.
    pub fn out_side(&self, side: usize) -> Option<usize> {
        let padded = side + 2 * self.pad;
        (padded >= self.k && self.stride > 0).then(|| (padded - self.k) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub k: usize,
    pub stride: usize,
}

impl PoolSpec {
    /// Ceiling-mode output side: partial windows at the far edge count.
    pub fn out_side(&self, side: usize) -> Option<usize> {
        if side == 0 || self.k == 0 || self.stride == 0 {
            return None;
        }
        if side <= self.k {
            return Some(1);
        }
        let mut out = (side - self.k).div_ceil(self.stride) + 1;
        if (out - 1) * self.stride >= side {
            out -= 1;
        }
        Some(out)
    }
}

/// Two-branch layout. A shared `conv1` feeds the pose branch
/// (`conv2_1`, `pool2_1`, pose head) and the expression branch (`conv2_2`);
/// `pool2_1` and `conv2_2` are stacked on channels and continue through
/// `conv3..conv5`, `pool5`, concatenation with the hand-crafted vector,
/// `fc6` and the expression head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub conv1: ConvSpec,
    pub conv2_1: ConvSpec,
    pub pool2_1: PoolSpec,
    pub conv2_2: ConvSpec,
    pub conv3: ConvSpec,
    pub conv4: ConvSpec,
    pub conv5: ConvSpec,
    pub pool5: PoolSpec,
    pub fc6: usize,
    pub pose_classes: usize,
    pub handcrafted_dim: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            conv1: ConvSpec::new(16, 5, 2, 2),
            conv2_1: ConvSpec::new(16, 3, 1, 1),
            pool2_1: PoolSpec { k: 2, stride: 2 },
            conv2_2: ConvSpec::new(16, 3, 2, 1),
            conv3: ConvSpec::new(32, 3, 1, 1),
            conv4: ConvSpec::new(32, 3, 2, 1),
            conv5: ConvSpec::new(64, 3, 1, 1),
            pool5: PoolSpec { k: 2, stride: 2 },
            fc6: 128,
            pose_classes: 5,
            handcrafted_dim: 0,
        }
    }
}

/// Activation sizes `(channels, height, width)` at every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShapes {
    pub conv1: (usize, usize, usize),
    pub conv2_1: (usize, usize, usize),
    pub pool2_1: (usize, usize, usize),
    pub conv2_2: (usize, usize, usize),
    pub concat: (usize, usize, usize),
    pub conv3: (usize, usize, usize),
    pub conv4: (usize, usize, usize),
    pub conv5: (usize, usize, usize),
    pub pool5: (usize, usize, usize),
    /// `pool5` flattened plus the hand-crafted vector.
    pub fused: usize,
}

impl NetSpec {
    /// Same layout with a different input size and hand-crafted width.
    pub fn with_input(mut self, h: usize, w: usize, handcrafted_dim: usize) -> Self {
        self.input_h = h;
        self.input_w = w;
        self.handcrafted_dim = handcrafted_dim;
        self
    }

    /// Small layout for tests: 16x16 input, few channels.
    pub fn toy(pose_classes: usize, handcrafted_dim: usize) -> Self {
        Self {
            input_h: 16,
            input_w: 16,
            conv1: ConvSpec::new(3, 5, 2, 2),
            conv2_1: ConvSpec::new(3, 3, 1, 1),
            pool2_1: PoolSpec { k: 2, stride: 2 },
            conv2_2: ConvSpec::new(2, 3, 2, 1),
            conv3: ConvSpec::new(4, 3, 1, 1),
            conv4: ConvSpec::new(4, 3, 2, 1),
            conv5: ConvSpec::new(5, 3, 1, 1),
            pool5: PoolSpec { k: 2, stride: 2 },
            fc6: 6,
            pose_classes,
            handcrafted_dim,
        }
    }

    fn conv_shape(
        name: &str,
        c: &ConvSpec,
        (_, h, w): (usize, usize, usize),
    ) -> Result<(usize, usize, usize), NetError> {
        match (c.out_side(h), c.out_side(w)) {
            (Some(oh), Some(ow)) => Ok((c.out, oh, ow)),
            _ => Err(NetError::shape(name, "kernel larger than padded input")),
        }
    }

    fn pool_shape(
        name: &str,
        p: &PoolSpec,
        (ch, h, w): (usize, usize, usize),
    ) -> Result<(usize, usize, usize), NetError> {
        match (p.out_side(h), p.out_side(w)) {
            (Some(oh), Some(ow)) => Ok((ch, oh, ow)),
            _ => Err(NetError::shape(name, "invalid pooling window")),
        }
    }

    /// Checks parameter ranges and the structural size constraints, and
    /// returns every activation size.
    pub fn shapes(&self) -> Result<LayerShapes, NetError> {
        let convs = [
            ("conv1", &self.conv1),
            ("conv2_1", &self.conv2_1),
            ("conv2_2", &self.conv2_2),
            ("conv3", &self.conv3),
            ("conv4", &self.conv4),
            ("conv5", &self.conv5),
        ];
        for (name, c) in convs {
            if c.out == 0 || c.out > MAX_CHANNELS {
                return Err(NetError::shape(name, "channel count out of range"));
            }
            if c.k == 0 || c.k > MAX_KERNEL || c.stride == 0 || c.stride > MAX_KERNEL {
                return Err(NetError::shape(name, "kernel or stride out of range"));
            }
            if c.pad >= c.k {
                return Err(NetError::shape(
                    name,
                    "padding must be smaller than the kernel",
                ));
            }
        }
        for (name, p) in [("pool2_1", &self.pool2_1), ("pool5", &self.pool5)] {
            if p.k == 0 || p.k > MAX_KERNEL || p.stride == 0 || p.stride > MAX_KERNEL {
                return Err(NetError::shape(name, "window or stride out of range"));
            }
        }
        if self.input_h == 0
            || self.input_w == 0
            || self.input_h > MAX_SIDE
            || self.input_w > MAX_SIDE
        {
            return Err(NetError::shape("input", "size out of range"));
        }
        if self.fc6 == 0 || self.fc6 > 1 << 16 {
            return Err(NetError::shape("fc6", "width out of range"));
        }
        if self.pose_classes < 2 || self.pose_classes > 255 {
            return Err(NetError::shape("pose_head", "needs 2..=255 pose classes"));
        }
        if self.handcrafted_dim > 1 << 24 {
            return Err(NetError::shape("handcrafted", "dimension out of range"));
        }

        let input = (1, self.input_h, self.input_w);
        let conv1 = Self::conv_shape("conv1", &self.conv1, input)?;
        let conv2_1 = Self::conv_shape("conv2_1", &self.conv2_1, conv1)?;
        if (conv2_1.1, conv2_1.2) != (conv1.1, conv1.2) {
            return Err(NetError::shape("conv2_1", "must keep the spatial size"));
        }
        let pool2_1 = Self::pool_shape("pool2_1", &self.pool2_1, conv2_1)?;
        let conv2_2 = Self::conv_shape("conv2_2", &self.conv2_2, conv1)?;
        if (conv2_2.1, conv2_2.2) != (conv1.1.div_ceil(2), conv1.2.div_ceil(2)) {
            return Err(NetError::shape("conv2_2", "must halve the spatial size"));
        }
        if (pool2_1.1, pool2_1.2) != (conv2_2.1, conv2_2.2) {
            return Err(NetError::shape(
                "concat",
                "pool2_1 and conv2_2 sizes differ",
            ));
        }
        let concat = (pool2_1.0 + conv2_2.0, conv2_2.1, conv2_2.2);
        let conv3 = Self::conv_shape("conv3", &self.conv3, concat)?;
        let conv4 = Self::conv_shape("conv4", &self.conv4, conv3)?;
        let conv5 = Self::conv_shape("conv5", &self.conv5, conv4)?;
        let pool5 = Self::pool_shape("pool5", &self.pool5, conv5)?;
        let flat = pool5.0 * pool5.1 * pool5.2;
        Ok(LayerShapes {
            conv1,
            conv2_1,
            pool2_1,
            conv2_2,
            concat,
            conv3,
            conv4,
            conv5,
            pool5,
            fused: flat + self.handcrafted_dim,
        })
    }

    /// `(weight shape, bias length)` for each parameterized layer, in
    /// [`super::LAYER_NAMES`] order.
    pub fn param_shapes(&self) -> Result<Vec<(Vec<usize>, usize)>, NetError> {
        let s = self.shapes()?;
        let conv = |c: &ConvSpec, cin: usize| (vec![c.out, cin, c.k, c.k], c.out);
        let pool_flat = s.pool2_1.0 * s.pool2_1.1 * s.pool2_1.2;
        let shapes = vec![
            conv(&self.conv1, 1),
            conv(&self.conv2_1, s.conv1.0),
            conv(&self.conv2_2, s.conv1.0),
            conv(&self.conv3, s.concat.0),
            conv(&self.conv4, s.conv3.0),
            conv(&self.conv5, s.conv4.0),
            (vec![self.pose_classes, pool_flat], self.pose_classes),
            (vec![self.fc6, s.fused], self.fc6),
            (
                vec![ExpressionLabel::COUNT, self.fc6],
                ExpressionLabel::COUNT,
            ),
        ];
        let total = shapes.iter().try_fold(0usize, |acc, (w, b)| {
            w.iter()
                .try_fold(1usize, |p, &d| p.checked_mul(d))
                .and_then(|n| acc.checked_add(n)?.checked_add(*b))
        });
        match total {
            Some(n) if n <= 1 << 28 => Ok(shapes),
            _ => Err(NetError::shape("params", "too many parameters")),
        }
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self, NetError> {
        let d = KvDocument::parse(text)?;
        d.expect(MAGIC, 1)?;
        let input: Vec<usize> = d.values("input")?;
        let [input_h, input_w] = input[..] else {
            return Err(NetError::Config("input must be `<height> <width>`".into()));
        };
        let conv = |key: &str| {
            parse_layer(key, d.get(key)?, "conv").map(|v| ConvSpec {
                out: v[0],
                k: v[1],
                stride: v[2],
                pad: v[3],
            })
        };
        let pool = |key: &str| {
            parse_layer(key, d.get(key)?, "maxpool").map(|v| PoolSpec {
                k: v[0],
                stride: v[1],
            })
        };
        let fc = |key: &str| parse_layer(key, d.get(key)?, "fc").map(|v| v[0]);
        let expr = fc("expr_head")?;
        if expr != ExpressionLabel::COUNT {
            return Err(NetError::Config("expr_head must have 7 outputs".into()));
        }
        let spec = Self {
            input_h,
            input_w,
            conv1: conv("conv1")?,
            conv2_1: conv("conv2_1")?,
            pool2_1: pool("pool2_1")?,
            conv2_2: conv("conv2_2")?,
            conv3: conv("conv3")?,
            conv4: conv("conv4")?,
            conv5: conv("conv5")?,
            pool5: pool("pool5")?,
            fc6: fc("fc6")?,
            pose_classes: fc("pose_head")?,
            handcrafted_dim: d.value("handcrafted")?,
        };
        spec.shapes()?;
        Ok(spec)
    }
}

/// `<kind> key=value ...` with the keys each kind requires, in order.
fn parse_layer(name: &str, raw: &str, kind: &str) -> Result<Vec<usize>, NetError> {
    let keys: &[&str] = match kind {
        "conv" => &["out", "k", "stride", "pad"],
        "maxpool" => &["k", "stride"],
        _ => &["out"],
    };
    let err = |m: String| NetError::Config(format!("layer `{name}`: {m}"));
    let mut tokens = raw.split_whitespace();
    match tokens.next() {
        Some(k) if k == kind => {}
        other => return Err(err(format!("expected kind `{kind}`, found {other:?}"))),
    }
    let mut values = vec![None; keys.len()];
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found `{tok}`")))?;
        let slot = keys
            .iter()
            .position(|x| *x == k)
            .ok_or_else(|| err(format!("unknown key `{k}`")))?;
        if values[slot].is_some() {
            return Err(err(format!("duplicate key `{k}`")));
        }
        values[slot] = Some(
            v.parse::<usize>()
                .map_err(|_| err(format!("bad value `{v}`")))?,
        );
    }
    keys.iter()
        .zip(values)
        .map(|(k, v)| v.ok_or_else(|| err(format!("missing key `{k}`"))))
        .collect()
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = KvDocument::new(MAGIC, 1);
        d.push("input", format!("{} {}", self.input_h, self.input_w));
        let conv = |c: &ConvSpec| {
            format!(
                "conv out={} k={} stride={} pad={}",
                c.out, c.k, c.stride, c.pad
            )
        };
        let pool = |p: &PoolSpec| format!("maxpool k={} stride={}", p.k, p.stride);
        d.push("conv1", conv(&self.conv1));
        d.push("conv2_1", conv(&self.conv2_1));
        d.push("pool2_1", pool(&self.pool2_1));
        d.push("conv2_2", conv(&self.conv2_2));
        d.push("conv3", conv(&self.conv3));
        d.push("conv4", conv(&self.conv4));
        d.push("conv5", conv(&self.conv5));
        d.push("pool5", pool(&self.pool5));
        d.push("fc6", format!("fc out={}", self.fc6));
        d.push("pose_head", format!("fc out={}", self.pose_classes));
        d.push("expr_head", format!("fc out={}", ExpressionLabel::COUNT));
        d.push("handcrafted", self.handcrafted_dim);
        write!(f, "{d}")
    }
}

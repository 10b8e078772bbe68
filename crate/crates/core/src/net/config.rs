use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::PoolEdge;

/// Zero padding applied before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    #[default]
    Valid,
    /// `kernel - 1` zeros on each side; output grows by `kernel - 1`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Convolution, max pooling, tanh.
    Conv {
        filters: usize,
        kernel: (usize, usize),
        pool: (usize, usize),
        padding: Padding,
        edge: PoolEdge,
    },
    /// Fully connected layer followed by tanh.
    Dense { units: usize },
    /// Fully connected layer producing logits for a softmax.
    Classify { labels: usize },
}

/// One line of an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(filters: usize, k: usize, pool: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                filters,
                kernel: (k, k),
                pool: (pool, pool),
                padding: Padding::Valid,
                edge: PoolEdge::Strict,
            },
        }
    }

    /// Full-padded convolution whose pooling drops any remainder.
    pub fn conv_full(filters: usize, k: usize, pool: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                filters,
                kernel: (k, k),
                pool: (pool, pool),
                padding: Padding::Full,
                edge: PoolEdge::Floor,
            },
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units },
        }
    }

    pub fn classify(labels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Classify { labels },
        }
    }
}

/// An ordered layer list applied to inputs of shape `channels×height×width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Named architectures accepted by [`NetworkConfig::preset`].
pub const PRESETS: &[&str] = &[
    "lenet-mnist",
    "lenet-cifar",
    "mnist-depth-4",
    "mnist-depth-5",
    "mnist-depth-6",
    "mnist-depth-7",
    "mnist-depth-8",
    "cifar-depth-4",
    "cifar-depth-5",
    "cifar-depth-6",
    "cifar-depth-7",
    "cifar-depth-8",
];

/// Columns of the depth sweep, in network order. The `usize` lists which
/// depths include the column.
fn depth_columns(cifar: bool) -> [(LayerSpec, &'static [usize]); 8] {
    let (k4, f4) = if cifar { (3, 50) } else { (5, 30) };
    let p4 = if cifar { 2 } else { 4 };
    [
        (LayerSpec::conv_full(30, 1, 1), &[7, 8]),
        (LayerSpec::conv_full(30, 3, 1), &[6, 7, 8]),
        (LayerSpec::conv_full(30, 3, 2), if cifar { &[4, 5, 6, 7, 8] } else { &[5, 6, 7, 8] }),
        (LayerSpec::conv_full(f4, k4, p4), &[4, 5, 6, 7, 8]),
        (LayerSpec::conv_full(50, k4, p4), if cifar { &[5, 6, 7, 8] } else { &[4, 5, 6, 7, 8] }),
        (LayerSpec::dense(500), &[4, 5, 6, 7, 8]),
        (LayerSpec::dense(500), &[8]),
        (LayerSpec::classify(10), &[4, 5, 6, 7, 8]),
    ]
}

impl NetworkConfig {
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> Result<Self> {
        let cfg = NetworkConfig { input, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mnist = (1, 28, 28);
        let cifar = (3, 32, 32);
        let cfg = match name {
            "lenet-mnist" => NetworkConfig {
                input: mnist,
                layers: vec![
                    LayerSpec::conv(30, 5, 2),
                    LayerSpec::conv(50, 5, 2),
                    LayerSpec::dense(500),
                    LayerSpec::classify(10),
                ],
            },
            "lenet-cifar" => {
                let floor = |mut spec: LayerSpec| {
                    if let LayerKind::Conv { edge, .. } = &mut spec.kind {
                        *edge = PoolEdge::Floor;
                    }
                    spec
                };
                NetworkConfig {
                    input: cifar,
                    layers: vec![
                        floor(LayerSpec::conv(256, 3, 2)),
                        floor(LayerSpec::conv(512, 3, 2)),
                        LayerSpec::dense(1024),
                        LayerSpec::classify(10),
                    ],
                }
            }
            _ => {
                let (is_cifar, depth) = name
                    .strip_prefix("mnist-depth-")
                    .map(|d| (false, d))
                    .or_else(|| name.strip_prefix("cifar-depth-").map(|d| (true, d)))
                    .and_then(|(c, d)| d.parse::<usize>().ok().map(|d| (c, d)))
                    .filter(|(_, d)| (4..=8).contains(d))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown architecture preset {name:?}; known: {}",
                            PRESETS.join(", ")
                        ))
                    })?;
                NetworkConfig {
                    input: if is_cifar { cifar } else { mnist },
                    layers: depth_columns(is_cifar)
                        .into_iter()
                        .filter(|(_, depths)| depths.contains(&depth))
                        .map(|(spec, _)| spec)
                        .collect(),
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves a preset name, or failing that, reads an architecture file.
    pub fn from_name_or_file(arch: &str) -> Result<Self> {
        if PRESETS.contains(&arch) {
            return Self::preset(arch);
        }
        let text = std::fs::read_to_string(arch).map_err(|e| {
            Error::Config(format!("{arch:?} is neither a preset nor a readable file: {e}"))
        })?;
        text.parse()
    }

    /// Output shape after each layer (without the batch dimension), checking
    /// that the stack composes.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let layer_err = |i: usize, msg: String| Error::Config(format!("layer {}: {msg}", i + 1));
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("empty input shape {c}x{h}x{w}")));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        let mut cur = vec![c, h, w];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel: (kh, kw),
                    pool: (ph, pw),
                    padding,
                    edge,
                } => {
                    let &[_, h, w] = cur.as_slice() else {
                        return Err(layer_err(i, "convolution after a dense layer".into()));
                    };
                    if filters == 0 || kh == 0 || kw == 0 || ph == 0 || pw == 0 {
                        return Err(layer_err(i, "zero filter, kernel or pool size".into()));
                    }
                    let (ch, cw) = match padding {
                        Padding::Valid => {
                            if kh > h || kw > w {
                                return Err(layer_err(
                                    i,
                                    format!("{kh}x{kw} kernel larger than {h}x{w} input"),
                                ));
                            }
                            (h - kh + 1, w - kw + 1)
                        }
                        Padding::Full => {
                            if kh != kw {
                                return Err(layer_err(i, "full padding needs a square kernel".into()));
                            }
                            (h + kh - 1, w + kw - 1)
                        }
                    };
                    if edge == PoolEdge::Strict && (ch % ph != 0 || cw % pw != 0) {
                        return Err(layer_err(
                            i,
                            format!("{ph}x{pw} pooling does not divide {ch}x{cw} feature map"),
                        ));
                    }
                    if ch / ph == 0 || cw / pw == 0 {
                        return Err(layer_err(
                            i,
                            format!("{ph}x{pw} pooling larger than {ch}x{cw} feature map"),
                        ));
                    }
                    vec![filters, ch / ph, cw / pw]
                }
                LayerKind::Dense { units: n } | LayerKind::Classify { labels: n } => {
                    if n == 0 {
                        return Err(layer_err(i, "zero units".into()));
                    }
                    if matches!(layer.kind, LayerKind::Classify { .. }) && i + 1 != self.layers.len() {
                        return Err(layer_err(i, "classify must be the last layer".into()));
                    }
                    vec![n]
                }
            };
            out.push(cur.clone());
        }
        if !matches!(self.layers.last().map(|l| l.kind), Some(LayerKind::Classify { .. })) {
            return Err(Error::Config("last layer must be classify".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Parameter count (weights plus biases) of each layer.
    pub fn layer_param_counts(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        let (c, h, w) = self.input;
        let mut prev: Vec<usize> = vec![c, h, w];
        let mut counts = Vec::with_capacity(self.layers.len());
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            counts.push(match layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel: (kh, kw),
                    ..
                } => filters * prev[0] * kh * kw + filters,
                LayerKind::Dense { units: n } | LayerKind::Classify { labels: n } => {
                    prev.iter().product::<usize>() * n + n
                }
            });
            prev = shape.clone();
        }
        Ok(counts)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layer_param_counts()?.iter().sum())
    }

    pub fn classes(&self) -> usize {
        match self.layers.last().map(|l| l.kind) {
            Some(LayerKind::Classify { labels }) => labels,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv {
                filters,
                kernel: (kh, kw),
                pool: (ph, pw),
                padding,
                edge,
            } => {
                write!(f, "conv {filters} {kh}x{kw} pool {ph}x{pw}")?;
                if padding == Padding::Full {
                    f.write_str(" full")?;
                }
                if edge == PoolEdge::Floor {
                    f.write_str(" floor")?;
                }
                Ok(())
            }
            LayerKind::Dense { units } => write!(f, "dense {units}"),
            LayerKind::Classify { labels } => write!(f, "classify {labels}"),
        }
    }
}

/// Text form: an optional `input CxHxW` line followed by one layer per line.
impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input;
        writeln!(f, "input {c}x{h}x{w}")?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

fn parse_pair(tok: &str, line: usize) -> Result<(usize, usize)> {
    let err = || Error::Config(format!("line {line}: expected AxB, got {tok:?}"));
    let (a, b) = tok.split_once('x').ok_or_else(err)?;
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

fn parse_count(tok: Option<&str>, line: usize) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Config(format!("line {line}: expected a positive count")))
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_layer(s, 1)
    }
}

fn parse_layer(text: &str, line: usize) -> Result<LayerSpec> {
    let mut toks = text.split_whitespace();
    let kind = match toks.next() {
        Some("conv") => {
            let filters = parse_count(toks.next(), line)?;
            let kernel = parse_pair(
                toks.next()
                    .ok_or_else(|| Error::Config(format!("line {line}: missing kernel size")))?,
                line,
            )?;
            let mut pool = (1, 1);
            let mut padding = Padding::Valid;
            let mut edge = PoolEdge::Strict;
            while let Some(tok) = toks.next() {
                match tok {
                    "pool" => {
                        pool = parse_pair(
                            toks.next().ok_or_else(|| {
                                Error::Config(format!("line {line}: missing pool size"))
                            })?,
                            line,
                        )?
                    }
                    "full" => padding = Padding::Full,
                    "valid" => padding = Padding::Valid,
                    "floor" => edge = PoolEdge::Floor,
                    other => {
                        return Err(Error::Config(format!("line {line}: unexpected token {other:?}")))
                    }
                }
            }
            return Ok(LayerSpec {
                kind: LayerKind::Conv {
                    filters,
                    kernel,
                    pool,
                    padding,
                    edge,
                },
            });
        }
        Some("dense") => LayerKind::Dense {
            units: parse_count(toks.next(), line)?,
        },
        Some("classify") => LayerKind::Classify {
            labels: parse_count(toks.next(), line)?,
        },
        Some(other) => return Err(Error::Config(format!("line {line}: unknown layer {other:?}"))),
        None => return Err(Error::Config(format!("line {line}: empty layer"))),
    };
    if let Some(extra) = toks.next() {
        return Err(Error::Config(format!("line {line}: unexpected token {extra:?}")));
    }
    Ok(LayerSpec { kind })
}

/// Parses the text architecture format. Without an `input` line the input
/// defaults to a 1x28x28 image.
impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut input = (1, 28, 28);
        let mut layers = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("input") {
                let dims: Vec<usize> = rest
                    .trim()
                    .split('x')
                    .map(|d| d.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("line {}: bad input shape {rest:?}", i + 1)))?;
                let [c, h, w] = dims[..] else {
                    return Err(Error::Config(format!("line {}: input needs CxHxW", i + 1)));
                };
                input = (c, h, w);
                continue;
            }
            layers.push(parse_layer(line, i + 1)?);
        }
        NetworkConfig::new(input, layers)
    }
}

use std::borrow::Cow;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LayerKind, NetworkConfig, Padding};
use crate::error::{Error, Result};
use crate::kernels::{self, PoolEdge};
use crate::quantize::{check_bits, quantize_uniform, reconstruct, QuantizedTensor};
use crate::tensor::{Scalar, Tensor};

/// Which parameters a forward pass runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    /// The high-precision parameters `W`.
    HighPrecision,
    /// The grid reconstructions `α + δZ`.
    Quantized,
}

/// Resolved shapes of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGeometry {
    Conv {
        /// `[cout, cin, kh, kw]`
        weights: [usize; 4],
        pad: usize,
        pool: (usize, usize),
        edge: PoolEdge,
    },
    /// Dense or classify: `[k, m]`.
    Dense { weights: [usize; 2], activation: bool },
}

impl LayerGeometry {
    fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerGeometry::Conv { weights, .. } => weights.to_vec(),
            LayerGeometry::Dense { weights, .. } => weights.to_vec(),
        }
    }

    fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    fn fans(&self) -> (usize, usize) {
        match self {
            LayerGeometry::Conv {
                weights: [cout, cin, kh, kw],
                ..
            } => (cin * kh * kw, cout * kh * kw),
            LayerGeometry::Dense { weights: [k, m], .. } => (*k, *m),
        }
    }
}

/// One layer's parameter group: weights then biases, flattened, with its
/// bit-width and current grid projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub params: Tensor<T>,
    pub q: QuantizedTensor,
    pub bits: u32,
}

impl<T: Scalar> LayerState<T> {
    pub fn new(params: Tensor<T>, bits: u32) -> Result<Self> {
        let q = quantize_uniform(&params, bits)?;
        Ok(LayerState { params, q, bits })
    }

    /// Recomputes the projection from the current parameters and bits.
    pub fn project(&mut self) -> Result<()> {
        self.q = quantize_uniform(&self.params, self.bits)?;
        Ok(())
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug)]
pub struct Caches<T> {
    weights: Vec<Tensor<T>>,
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug)]
enum LayerCache<T> {
    Conv {
        input: Tensor<T>,
        conv_shape: Vec<usize>,
        argmax: Vec<usize>,
        output: Tensor<T>,
    },
    Dense {
        input: Tensor<T>,
        output: Option<Tensor<T>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    geometry: Vec<LayerGeometry>,
    layers: Vec<LayerState<T>>,
}

fn geometry(config: &NetworkConfig) -> Result<Vec<LayerGeometry>> {
    let shapes = config.shapes()?;
    let (c, h, w) = config.input;
    let mut prev = vec![c, h, w];
    let mut out = Vec::with_capacity(shapes.len());
    for (layer, shape) in config.layers.iter().zip(shapes) {
        out.push(match layer.kind {
            LayerKind::Conv {
                filters,
                kernel: (kh, kw),
                pool,
                padding,
                edge,
            } => LayerGeometry::Conv {
                weights: [filters, prev[0], kh, kw],
                pad: match padding {
                    Padding::Valid => 0,
                    Padding::Full => kh - 1,
                },
                pool,
                edge,
            },
            LayerKind::Dense { units } => LayerGeometry::Dense {
                weights: [prev.iter().product(), units],
                activation: true,
            },
            LayerKind::Classify { labels } => LayerGeometry::Dense {
                weights: [prev.iter().product(), labels],
                activation: false,
            },
        });
        prev = shape;
    }
    Ok(out)
}

/// Glorot-uniform weights, zero biases, every layer at `bits_init` bits.
pub fn init_network<T: Scalar>(config: &NetworkConfig, seed: u64, bits_init: u32) -> Result<Network<T>> {
    check_bits(bits_init)?;
    let geometry = geometry(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = geometry
        .iter()
        .map(|g| {
            let (fan_in, fan_out) = g.fans();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let bias_len = g.weight_shape()[if matches!(g, LayerGeometry::Conv { .. }) { 0 } else { 1 }];
            let n_w = g.weight_count();
            let mut params: Vec<T> = (0..n_w).map(|_| T::of_f64(dist.sample(&mut rng))).collect();
            params.resize(n_w + bias_len, T::zero());
            LayerState::new(Tensor::from_parts(vec![params.len()], params), bits_init)
        })
        .collect::<Result<_>>()?;
    Ok(Network {
        config: config.clone(),
        geometry,
        layers,
    })
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

impl<T: Scalar> Network<T> {
    /// Network whose parameters are the reconstructions of `groups`, with the
    /// given grids kept as the layers' projections.
    pub fn from_quantized(config: &NetworkConfig, groups: Vec<QuantizedTensor>) -> Result<Self> {
        let geometry = geometry(config)?;
        let counts = config.layer_param_counts()?;
        if groups.len() != counts.len() {
            return Err(Error::Config(format!(
                "{} parameter groups for {} layers",
                groups.len(),
                counts.len()
            )));
        }
        let layers = groups
            .into_iter()
            .zip(counts)
            .enumerate()
            .map(|(i, (q, n))| {
                if q.len() != n {
                    return Err(Error::Config(format!(
                        "layer {}: {} parameters, expected {n}",
                        i + 1,
                        q.len()
                    )));
                }
                check_bits(q.bits)?;
                let mut q = q;
                q.shape = vec![n];
                Ok(LayerState {
                    params: reconstruct(&q),
                    bits: q.bits,
                    q,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Network {
            config: config.clone(),
            geometry,
            layers,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn geometry(&self) -> &[LayerGeometry] {
        &self.geometry
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    pub fn bits(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.bits).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    /// Parameter groups selected by `source`.
    pub fn parameters(&self, source: WeightSource) -> Vec<Cow<'_, Tensor<T>>> {
        self.layers
            .iter()
            .map(|l| match source {
                WeightSource::HighPrecision => Cow::Borrowed(&l.params),
                WeightSource::Quantized => Cow::Owned(reconstruct(&l.q)),
            })
            .collect()
    }

    fn input_shape_check(&self, input: &Tensor<T>) -> Result<()> {
        let (c, h, w) = self.config.input;
        match input.shape() {
            [_, ic, ih, iw] if (*ic, *ih, *iw) == (c, h, w) => Ok(()),
            other => Err(Error::shape(
                "network input",
                format!("expected [batch, {c}, {h}, {w}], got {other:?}"),
            )),
        }
    }

    /// Forward pass; returns logits `[batch, classes]` and the caches the
    /// backward pass needs.
    pub fn forward(&self, input: &Tensor<T>, source: WeightSource) -> Result<(Tensor<T>, Caches<T>)> {
        let params = self.parameters(source);
        self.forward_with(&params, input, true)
    }

    /// Logits only, with explicitly supplied parameter groups.
    pub fn logits_with(&self, params: &[Cow<'_, Tensor<T>>], input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with(params, input, false)?.0)
    }

    fn forward_with(
        &self,
        params: &[Cow<'_, Tensor<T>>],
        input: &Tensor<T>,
        keep: bool,
    ) -> Result<(Tensor<T>, Caches<T>)> {
        self.input_shape_check(input)?;
        let batch = input.shape()[0];
        let mut caches = Caches {
            weights: Vec::new(),
            layers: Vec::new(),
        };
        let mut x = input.clone();
        for (i, (geo, group)) in self.geometry.iter().zip(params).enumerate() {
            let ctx = |e: Error| match e {
                Error::Shape { context, detail } => Error::Shape {
                    context: format!("layer {} ({context})", i + 1),
                    detail,
                },
                other => other,
            };
            let n_w = geo.weight_count();
            let weights = Tensor::from_parts(geo.weight_shape(), group.data()[..n_w].to_vec());
            let bias = &group.data()[n_w..];
            match geo {
                LayerGeometry::Conv { pad, pool, edge, .. } => {
                    let conv = kernels::conv2d_forward_padded(&x, &weights, bias, *pad).map_err(ctx)?;
                    let pooled = kernels::maxpool_forward(&conv, *pool, *edge).map_err(ctx)?;
                    let out = kernels::tanh_forward(&pooled.output);
                    if keep {
                        caches.layers.push(LayerCache::Conv {
                            input: std::mem::replace(&mut x, out.clone()),
                            conv_shape: conv.shape().to_vec(),
                            argmax: pooled.argmax,
                            output: out,
                        });
                    } else {
                        x = out;
                    }
                }
                LayerGeometry::Dense { weights: [k, _], activation } => {
                    let flat = if x.shape() == [batch, *k] {
                        x
                    } else {
                        x.reshape(&[batch, *k]).map_err(ctx)?
                    };
                    let mut out = kernels::dense_forward(&flat, &weights, bias).map_err(ctx)?;
                    if *activation {
                        out = kernels::tanh_forward(&out);
                    }
                    if keep {
                        caches.layers.push(LayerCache::Dense {
                            input: flat,
                            output: activation.then(|| out.clone()),
                        });
                    }
                    x = out;
                }
            }
            if keep {
                caches.weights.push(weights);
            }
        }
        Ok((x, caches))
    }

    /// Gradients of the loss with respect to every layer's parameter group,
    /// in the group's flattened weights-then-biases layout.
    pub fn backward(&self, caches: &Caches<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if caches.layers.len() != self.geometry.len() {
            return Err(Error::shape("backward", "caches do not match the network"));
        }
        let mut grads = vec![None; self.geometry.len()];
        let mut g = grad_logits.clone();
        for i in (0..self.geometry.len()).rev() {
            let want_input = i > 0;
            let weights = &caches.weights[i];
            let (gw, gb, gi) = match (&self.geometry[i], &caches.layers[i]) {
                (
                    LayerGeometry::Conv { pad, .. },
                    LayerCache::Conv {
                        input,
                        conv_shape,
                        argmax,
                        output,
                    },
                ) => {
                    let g_out = if g.shape() == output.shape() {
                        g
                    } else {
                        g.reshape(output.shape())?
                    };
                    let g_pool = kernels::tanh_backward(&g_out, output)?;
                    let g_conv = kernels::maxpool_backward(&g_pool, argmax, conv_shape)?;
                    let r = kernels::conv2d_backward_padded(&g_conv, input, weights, *pad, want_input)?;
                    (r.weights, r.bias, r.input)
                }
                (LayerGeometry::Dense { .. }, LayerCache::Dense { input, output }) => {
                    let g_lin = match output {
                        Some(out) => kernels::tanh_backward(&g, out)?,
                        None => g,
                    };
                    let r = kernels::dense_backward(&g_lin, input, weights, want_input)?;
                    (r.weights, r.bias, r.input)
                }
                _ => return Err(Error::shape("backward", format!("layer {} cache kind", i + 1))),
            };
            let mut flat = gw.into_data();
            flat.extend_from_slice(&gb);
            grads[i] = Some(Tensor::from_parts(vec![flat.len()], flat));
            g = match gi {
                Some(t) => t,
                None => break,
            };
        }
        Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
    }
}

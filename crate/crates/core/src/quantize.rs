//! Uniform grid quantization of a parameter group, its squared error and
//! gradients, and the k-means codebook used by the `kmeans-n` baseline.
//!
//! A group `W` with range `[α, β]` quantized at `B` bits uses step
//! `δ = (β-α)/2^B` and bin indices `Z = round((W-α)/δ)`, so the grid has
//! `2^B + 1` levels `α + δz`, `z = 0..=2^B`, and both endpoints are exactly
//! representable.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MIN_BITS: u32 = 1;
pub const MAX_BITS: u32 = 32;

/// How the parameters are snapped to a finite set of values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    None,
    Uniform,
    /// Lloyd's algorithm with `2^n` centers.
    KMeans,
}

/// Grid form `α + δ·Z` of a parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub alpha: f64,
    pub delta: f64,
    pub bits: u32,
    pub indices: Vec<u64>,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    /// Upper grid endpoint `α + δ·2^B`.
    pub fn beta(&self) -> f64 {
        self.value(1u64 << self.bits)
    }

    pub fn max_index(&self) -> u64 {
        1u64 << self.bits
    }

    #[inline]
    pub fn value(&self, z: u64) -> f64 {
        self.alpha + self.delta * z as f64
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn check_bits(bits: u32) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Bits(bits))
    }
}

fn min_max<T: Scalar>(w: &[T]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in w {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("quantizer input".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if w.is_empty() {
        return Err(Error::shape("quantize", "empty parameter group"));
    }
    Ok((lo, hi))
}

/// Step for range `[lo, hi]` at `levels = 2^B` intervals, adjusted by a few
/// ulps so that `lo + δ·levels` reproduces `hi` when some f64 step can. When
/// none can (the sums near `hi` are coarser than `hi`'s own ulp), `hi` is
/// missed by at most half an ulp of `hi - lo`.
fn grid_step(lo: f64, hi: f64, levels: f64) -> f64 {
    let delta = (hi - lo) / levels;
    if lo + delta * levels == hi {
        return delta;
    }
    let mut up = delta;
    let mut down = delta;
    for _ in 0..8 {
        up = next_toward(up, f64::INFINITY);
        if lo + up * levels == hi {
            return up;
        }
        down = next_toward(down, 0.0);
        if lo + down * levels == hi {
            return down;
        }
    }
    delta
}

fn next_toward(x: f64, target: f64) -> f64 {
    // positive finite x only
    let bits = x.to_bits();
    if target > x {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Projects `w` onto its `bits`-bit uniform grid.
///
/// A constant tensor has zero range; it quantizes to `δ = 0`, `Z = 0`, which
/// reconstructs it exactly.
pub fn quantize_uniform<T: Scalar>(w: &Tensor<T>, bits: u32) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    let (alpha, beta) = min_max(w.data())?;
    let shape = w.shape().to_vec();
    if alpha == beta {
        return Ok(QuantizedTensor {
            alpha,
            delta: 0.0,
            bits,
            indices: vec![0; w.len()],
            shape,
        });
    }
    let top = 1u64 << bits;
    let delta = grid_step(alpha, beta, top as f64);
    let top_f = top as f64;
    let indices = w
        .data()
        .iter()
        // f64::round is half-away-from-zero
        .map(|v| ((v.as_f64() - alpha) / delta).round().clamp(0.0, top_f) as u64)
        .collect();
    Ok(QuantizedTensor {
        alpha,
        delta,
        bits,
        indices,
        shape,
    })
}

/// Elementwise `α + δ·Z`.
pub fn reconstruct<T: Scalar>(q: &QuantizedTensor) -> Tensor<T> {
    Tensor::from_parts(
        q.shape.clone(),
        q.indices.iter().map(|&z| T::of_f64(q.value(z))).collect(),
    )
}

fn check_same_shape<T: Scalar>(w: &Tensor<T>, q: &QuantizedTensor) -> Result<()> {
    if w.shape() != q.shape.as_slice() {
        return Err(Error::shape(
            "quantization error",
            format!("tensor {:?} vs quantized {:?}", w.shape(), q.shape),
        ));
    }
    Ok(())
}

/// `½‖W̃ - W‖²` over all elements.
pub fn quant_error<T: Scalar>(w: &Tensor<T>, q: &QuantizedTensor) -> Result<f64> {
    check_same_shape(w, q)?;
    Ok(0.5
        * w.data()
            .iter()
            .zip(&q.indices)
            .map(|(v, &z)| {
                let r = q.value(z) - v.as_f64();
                r * r
            })
            .sum::<f64>())
}

/// Gradient of the quantization error with respect to each weight, holding
/// the grid point fixed: `-(w̃ - w)`.
pub fn quant_error_grad_w<T: Scalar>(w: &Tensor<T>, q: &QuantizedTensor) -> Result<Tensor<T>> {
    check_same_shape(w, q)?;
    let data = w
        .data()
        .iter()
        .zip(&q.indices)
        .map(|(v, &z)| T::of_f64(-(q.value(z) - v.as_f64())))
        .collect();
    Ok(Tensor::from_parts(w.shape().to_vec(), data))
}

/// Gradient of the quantization error with respect to the bit-width:
/// `Σ (w̃ - w)·(∂δ/∂B)·z`.
///
/// With `exact = false`, `∂δ/∂B` is taken as `-δ`; with `exact = true` it is
/// the true derivative `-δ·ln 2`. The sign is the same either way.
pub fn quant_error_grad_bits<T: Scalar>(
    w: &Tensor<T>,
    q: &QuantizedTensor,
    exact: bool,
) -> Result<f64> {
    check_same_shape(w, q)?;
    if q.delta == 0.0 {
        return Ok(0.0);
    }
    let d_delta = if exact {
        -q.delta * std::f64::consts::LN_2
    } else {
        -q.delta
    };
    let sum: f64 = w
        .data()
        .iter()
        .zip(&q.indices)
        .map(|(v, &z)| (q.value(z) - v.as_f64()) * z as f64)
        .sum();
    Ok(sum * d_delta)
}

/// Codebook produced by 1-D Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansCode {
    /// Sorted ascending.
    pub centers: Vec<f64>,
    pub assignments: Vec<u32>,
    pub shape: Vec<usize>,
    /// Sum of squared distances to the assigned center, once per assignment
    /// pass, in iteration order.
    pub objective: Vec<f64>,
}

impl KMeansCode {
    pub fn reconstruct<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            self.assignments
                .iter()
                .map(|&a| T::of_f64(self.centers[a as usize]))
                .collect(),
        )
    }

    pub fn within_cluster_error<T: Scalar>(&self, w: &Tensor<T>) -> f64 {
        w.data()
            .iter()
            .zip(&self.assignments)
            .map(|(v, &a)| (v.as_f64() - self.centers[a as usize]).powi(2))
            .sum()
    }
}

const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITER: usize = 100;

/// Index of the nearest center; ties go to the lower center.
fn nearest(centers: &[f64], v: f64) -> usize {
    let i = centers.partition_point(|&c| c < v);
    if i == 0 {
        0
    } else if i == centers.len() || v - centers[i - 1] <= centers[i] - v {
        i - 1
    } else {
        i
    }
}

/// Clusters the values of `w` into `2^n` centers.
///
/// Centers start evenly spaced over `[min, max]`. When `w` has no more than
/// `2^n` distinct values the codebook is exactly those values.
pub fn quantize_kmeans<T: Scalar>(w: &Tensor<T>, n: u32) -> Result<KMeansCode> {
    check_bits(n)?;
    let (lo, hi) = min_max(w.data())?;
    let k = 1usize << n.min(24);

    let mut sorted: Vec<f64> = w.data().iter().map(|v| v.as_f64()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let mut objective = Vec::new();
    let centers = if distinct.len() <= k {
        objective.push(0.0);
        distinct
    } else {
        // prefix sums over the sorted values let each pass run in O(k log N)
        let mut sum = vec![0.0; sorted.len() + 1];
        let mut sum_sq = vec![0.0; sorted.len() + 1];
        for (i, &v) in sorted.iter().enumerate() {
            sum[i + 1] = sum[i] + v;
            sum_sq[i + 1] = sum_sq[i] + v * v;
        }
        let mut centers: Vec<f64> = (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect();
        for _ in 0..KMEANS_MAX_ITER {
            // cluster j owns sorted[bounds[j]..bounds[j+1]]
            let mut bounds = Vec::with_capacity(k + 1);
            bounds.push(0);
            for pair in centers.windows(2) {
                let mid = 0.5 * (pair[0] + pair[1]);
                bounds.push(sorted.partition_point(|&v| v <= mid));
            }
            bounds.push(sorted.len());

            let mut sse = 0.0;
            let mut moved: f64 = 0.0;
            let mut next = centers.clone();
            for j in 0..k {
                let (a, b) = (bounds[j], bounds[j + 1]);
                if a == b {
                    continue;
                }
                let cnt = (b - a) as f64;
                let s = sum[b] - sum[a];
                let ss = sum_sq[b] - sum_sq[a];
                let c = centers[j];
                sse += (ss - 2.0 * c * s + cnt * c * c).max(0.0);
                next[j] = s / cnt;
                moved = moved.max((next[j] - c).abs());
            }
            objective.push(sse);
            next.sort_by(f64::total_cmp);
            centers = next;
            if moved < KMEANS_TOL {
                break;
            }
        }
        centers
    };

    let assignments = w
        .data()
        .iter()
        .map(|v| nearest(&centers, v.as_f64()) as u32)
        .collect();
    Ok(KMeansCode {
        centers,
        assignments,
        shape: w.shape().to_vec(),
        objective,
    })
}

/// Replaces `w` by its `n`-bit quantized reconstruction under `kind`.
pub fn apply_quantizer<T: Scalar>(kind: QuantizerKind, w: &Tensor<T>, n: u32) -> Result<Tensor<T>> {
    match kind {
        QuantizerKind::None => Ok(w.clone()),
        QuantizerKind::Uniform => Ok(reconstruct(&quantize_uniform(w, n)?)),
        QuantizerKind::KMeans => Ok(quantize_kmeans(w, n)?.reconstruct()),
    }
}

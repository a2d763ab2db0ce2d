//! Sequential convolutional feature extractor with reverse-mode gradients.
//!
//! Networks are stored as an ordered list of layers and serialize to a
//! self-describing JSON document, which is also the on-disk format for
//! converted pretrained weights.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `(out_channels, in_channels, kernel_h, kernel_w)`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `(out_features, in_features)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    /// Non-overlapping max pooling with a square window; trailing rows and
    /// columns that do not fill a window are dropped.
    MaxPool2d { size: usize },
    GlobalAvgPool,
    Flatten,
    Linear(Linear),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Map(Array3<f64>),
    Flat(Array1<f64>),
}

impl Activation {
    fn into_map(self, layer: &str) -> Result<Array3<f64>> {
        match self {
            Activation::Map(m) => Ok(m),
            Activation::Flat(_) => Err(Error::Shape(format!("{layer} expects a feature map"))),
        }
    }

    fn into_flat(self, layer: &str) -> Result<Array1<f64>> {
        match self {
            Activation::Flat(v) => Ok(v),
            Activation::Map(_) => Err(Error::Shape(format!("{layer} expects a flat vector"))),
        }
    }
}

/// Per-layer values kept from the forward pass for [`Network::backward`].
#[derive(Debug, Clone)]
enum Cache {
    Conv { cols: Array2<f64>, input: (usize, usize, usize), out: (usize, usize) },
    Relu { input: Activation },
    MaxPool { argmax: Array3<(usize, usize)>, input: (usize, usize, usize) },
    GlobalAvgPool { input: (usize, usize, usize) },
    Flatten { input: (usize, usize, usize) },
    Linear { input: Array1<f64> },
}

#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
}

/// Gradients for every trainable array, in [`Network::parameters_mut`] order.
pub type ParamGrads = Vec<ArrayD<f64>>;

fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return Err(Error::Shape(format!(
            "conv kernel {kernel} (stride {stride}, padding {padding}) does not fit input size {size}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Conv2d {
    fn kernel(&self) -> (usize, usize, usize, usize) {
        self.weight.dim()
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (o, c, kh, kw) = self.kernel();
        self.weight
            .to_shape((o, c * kh * kw))
            .expect("contiguous conv weight")
            .to_owned()
    }

    fn im2col(&self, x: &Array3<f64>) -> Result<(Array2<f64>, usize, usize)> {
        let (_, c_in, kh, kw) = self.kernel();
        let (c, h, w) = x.dim();
        if c != c_in {
            return Err(Error::Shape(format!("conv expects {c_in} input channels, got {c}")));
        }
        let ho = conv_output_dim(h, kh, self.stride, self.padding)?;
        let wo = conv_output_dim(w, kw, self.stride, self.padding)?;
        let mut cols = Array2::zeros((c * kh * kw, ho * wo));
        let pad = self.padding as isize;
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                cols[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        Ok((cols, ho, wo))
    }

    fn forward(&self, x: &Array3<f64>) -> Result<(Array3<f64>, Cache)> {
        let (cols, ho, wo) = self.im2col(x)?;
        let mut out = self.weight_matrix().dot(&cols);
        for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(&self.bias) {
            row += *b;
        }
        let o = out.nrows();
        let out = out.into_shape_with_order((o, ho, wo)).expect("conv output reshape");
        Ok((out, Cache::Conv { cols, input: x.dim(), out: (ho, wo) }))
    }

    fn backward(
        &self,
        cols: &Array2<f64>,
        input: (usize, usize, usize),
        out: (usize, usize),
        grad: &Array3<f64>,
    ) -> (Array3<f64>, ArrayD<f64>, ArrayD<f64>) {
        let (o, c, kh, kw) = self.kernel();
        let (ho, wo) = out;
        let g = grad
            .to_shape((o, ho * wo))
            .expect("conv grad reshape")
            .to_owned();
        let d_weight = g
            .dot(&cols.t())
            .into_shape_with_order((o, c, kh, kw))
            .expect("conv weight grad reshape")
            .into_dyn();
        let d_bias = g.sum_axis(Axis(1)).into_dyn();
        let d_cols = self.weight_matrix().t().dot(&g);
        let (_, h, w) = input;
        let mut dx = Array3::zeros(input);
        let pad = self.padding as isize;
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dx[[ci, iy as usize, ix as usize]] += d_cols[[row, oy * wo + ox]];
                            }
                        }
                    }
                }
            }
        }
        (dx, d_weight, d_bias)
    }
}

impl Linear {
    fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.weight.ncols() {
            return Err(Error::Shape(format!(
                "linear expects {} inputs, got {}",
                self.weight.ncols(),
                x.len()
            )));
        }
        Ok(self.weight.dot(x) + &self.bias)
    }
}

/// Pooled output plus the argmax position of every window.
type Pooled = (Array3<f64>, Array3<(usize, usize)>);

fn max_pool(x: &Array3<f64>, size: usize) -> Result<Pooled> {
    let (c, h, w) = x.dim();
    if size == 0 || h < size || w < size {
        return Err(Error::Shape(format!("max pool window {size} does not fit {h}x{w}")));
    }
    let (ho, wo) = (h / size, w / size);
    let mut out = Array3::zeros((c, ho, wo));
    let mut argmax = Array3::from_elem((c, ho, wo), (0, 0));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (oy * size, ox * size);
                for iy in oy * size..(oy + 1) * size {
                    for ix in ox * size..(ox + 1) * size {
                        if x[[ci, iy, ix]] > x[[ci, best.0, best.1]] {
                            best = (iy, ix);
                        }
                    }
                }
                out[[ci, oy, ox]] = x[[ci, best.0, best.1]];
                argmax[[ci, oy, ox]] = best;
            }
        }
    }
    Ok((out, argmax))
}

fn uniform_array<D: ndarray::Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    rng: &mut ChaCha8Rng,
    shape: Sh,
    bound: f64,
) -> ndarray::Array<f64, D> {
    ndarray::Array::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

impl Network {
    /// The built-in tiny backbone: conv(3→8, 3x3) → ReLU → 2x2 max pool →
    /// flatten → linear(→ `feature_dim`), He-uniform initialized from `seed`.
    pub fn tiny(seed: u64, input: (usize, usize), feature_dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = 8;
        let conv_bound = (6.0 / 27.0f64).sqrt();
        let conv = Conv2d {
            weight: uniform_array(&mut rng, (channels, 3, 3, 3), conv_bound),
            bias: uniform_array(&mut rng, channels, 0.1),
            stride: 1,
            padding: 1,
        };
        let (h, w) = input;
        if h < 2 || w < 2 {
            return Err(Error::Configuration(format!("tiny backbone needs at least 2x2 input, got {h}x{w}")));
        }
        let flat = channels * (h / 2) * (w / 2);
        let lin_bound = (6.0 / flat as f64).sqrt();
        let linear = Linear {
            weight: uniform_array(&mut rng, (feature_dim, flat), lin_bound),
            bias: uniform_array(&mut rng, feature_dim, 0.1),
        };
        Ok(Self {
            layers: vec![
                Layer::Conv2d(conv),
                Layer::Relu,
                Layer::MaxPool2d { size: 2 },
                Layer::Flatten,
                Layer::Linear(linear),
            ],
        })
    }

    /// Feature dimension produced for a `(height, width)` RGB input.
    pub fn output_dim(&self, input: (usize, usize)) -> Result<usize> {
        // Shape inference by running on zeros keeps one code path for all layers.
        let x = Array3::zeros((3, input.0, input.1));
        Ok(self.forward(&x)?.len())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array1<f64>> {
        self.run(x, false).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, x: &Array3<f64>) -> Result<(Array1<f64>, Trace)> {
        self.run(x, true)
    }

    fn run(&self, x: &Array3<f64>, keep: bool) -> Result<(Array1<f64>, Trace)> {
        let mut act = Activation::Map(x.clone());
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv2d(conv) => {
                    let x = act.into_map("conv2d")?;
                    let (y, cache) = conv.forward(&x)?;
                    (Activation::Map(y), cache)
                }
                Layer::Relu => {
                    let y = match &act {
                        Activation::Map(m) => Activation::Map(m.mapv(|v| v.max(0.0))),
                        Activation::Flat(v) => Activation::Flat(v.mapv(|v| v.max(0.0))),
                    };
                    (y, Cache::Relu { input: act })
                }
                Layer::MaxPool2d { size } => {
                    let x = act.into_map("max_pool2d")?;
                    let (y, argmax) = max_pool(&x, *size)?;
                    (Activation::Map(y), Cache::MaxPool { argmax, input: x.dim() })
                }
                Layer::GlobalAvgPool => {
                    let x = act.into_map("global_avg_pool")?;
                    let dim = x.dim();
                    let y = x
                        .to_shape((dim.0, dim.1 * dim.2))
                        .expect("pool reshape")
                        .mean_axis(Axis(1))
                        .ok_or_else(|| Error::Shape("global pool over empty map".into()))?;
                    (Activation::Flat(y), Cache::GlobalAvgPool { input: dim })
                }
                Layer::Flatten => {
                    let x = act.into_map("flatten")?;
                    let dim = x.dim();
                    let y = Array1::from_iter(x.iter().copied());
                    (Activation::Flat(y), Cache::Flatten { input: dim })
                }
                Layer::Linear(lin) => {
                    let x = act.into_flat("linear")?;
                    let y = lin.forward(&x)?;
                    (Activation::Flat(y), Cache::Linear { input: x })
                }
            };
            act = next;
            if keep {
                caches.push(cache);
            }
        }
        Ok((act.into_flat("network output")?, Trace { caches }))
    }

    /// Back-propagates `grad` (d loss / d output) through the traced pass and
    /// returns parameter gradients in [`Network::parameters_mut`] order.
    pub fn backward(&self, trace: &Trace, grad: &Array1<f64>) -> Result<ParamGrads> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        let mut g = Activation::Flat(grad.clone());
        let mut grads_rev: Vec<ArrayD<f64>> = Vec::new();
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv2d(conv), Cache::Conv { cols, input, out }) => {
                    let gm = g.into_map("conv2d grad")?;
                    let (dx, dw, db) = conv.backward(cols, *input, *out, &gm);
                    grads_rev.push(db);
                    grads_rev.push(dw);
                    Activation::Map(dx)
                }
                (Layer::Relu, Cache::Relu { input }) => match (g, input) {
                    (Activation::Map(gm), Activation::Map(x)) => {
                        Activation::Map(ndarray::Zip::from(&gm).and(x).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }))
                    }
                    (Activation::Flat(gv), Activation::Flat(x)) => {
                        Activation::Flat(ndarray::Zip::from(&gv).and(x).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }))
                    }
                    _ => return Err(Error::Shape("relu gradient kind mismatch".into())),
                },
                (Layer::MaxPool2d { .. }, Cache::MaxPool { argmax, input }) => {
                    let gm = g.into_map("max_pool2d grad")?;
                    let mut dx = Array3::zeros(*input);
                    for ((ci, oy, ox), &(iy, ix)) in argmax.indexed_iter() {
                        dx[[ci, iy, ix]] += gm[[ci, oy, ox]];
                    }
                    Activation::Map(dx)
                }
                (Layer::GlobalAvgPool, Cache::GlobalAvgPool { input }) => {
                    let gv = g.into_flat("global_avg_pool grad")?;
                    let area = (input.1 * input.2) as f64;
                    Activation::Map(Array3::from_shape_fn(*input, |(c, _, _)| gv[c] / area))
                }
                (Layer::Flatten, Cache::Flatten { input }) => {
                    let gv = g.into_flat("flatten grad")?;
                    Activation::Map(gv.into_shape_with_order(*input).expect("flatten grad reshape"))
                }
                (Layer::Linear(lin), Cache::Linear { input }) => {
                    let gv = g.into_flat("linear grad")?;
                    let dw = gv
                        .view()
                        .insert_axis(Axis(1))
                        .dot(&input.view().insert_axis(Axis(0)));
                    let dx = lin.weight.t().dot(&gv);
                    grads_rev.push(gv.into_dyn());
                    grads_rev.push(dw.into_dyn());
                    Activation::Flat(dx)
                }
                _ => return Err(Error::Shape("trace does not belong to this network".into())),
            };
        }
        grads_rev.reverse();
        Ok(grads_rev
            .into_iter()
            .map(|g| g.as_standard_layout().into_owned())
            .collect())
    }

    /// Trainable arrays as flat slices: for each conv or linear layer, weight then bias.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(c.weight.as_slice_mut().expect("contiguous"));
                    out.push(c.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("contiguous"));
                    out.push(l.bias.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Restores standard layout after deserialization so parameters are
    /// addressable as slices.
    pub(crate) fn make_contiguous(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    c.weight = c.weight.as_standard_layout().into_owned();
                    c.bias = c.bias.as_standard_layout().into_owned();
                }
                Layer::Linear(l) => {
                    l.weight = l.weight.as_standard_layout().into_owned();
                    l.bias = l.bias.as_standard_layout().into_owned();
                }
                _ => {}
            }
        }
    }
}

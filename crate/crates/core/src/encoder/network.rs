//! Desk-scale backbones. Both produce `(K + 1)` tokens of width `n` from a
//! shared hidden representation: token 0 is the global feature, tokens
//! `1..=K` the local ones.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchFeatures, FeatureBundle};
use crate::datasets::PersonSample;
use crate::params::{normal_init, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Feature-mode inputs: one tanh hidden layer.
    ToyMlp,
    /// Image-mode inputs: one 3×3 valid convolution, tanh, spatial mean pool.
    SmallConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channel width of every token; even so it can be halved.
    pub width: usize,
    pub locals: usize,
    pub hidden: usize,
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    pub bias: bool,
}

impl EncoderConfig {
    pub fn mlp(input_dim: usize, width: usize, locals: usize) -> Self {
        Self {
            width,
            locals,
            hidden: 64,
            architecture: Architecture::ToyMlp,
            input_shape: vec![input_dim],
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "feature width must be even and >= 4, got {}",
                self.width
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        match (self.architecture, self.input_shape.as_slice()) {
            (Architecture::ToyMlp, [d]) if *d > 0 => Ok(()),
            (Architecture::ToyMlp, [h, w, c]) if h * w * c > 0 => Ok(()),
            (Architecture::SmallConv, [h, w, c]) if *h >= 3 && *w >= 3 && *c > 0 => Ok(()),
            (arch, shape) => Err(Error::Config(format!(
                "input shape {shape:?} is not supported by {arch:?}"
            ))),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn tokens(&self) -> usize {
        self.locals + 1
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    hidden: Array2<f64>,
    conv: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    /// Per sample: im2col patches (positions × 9C).
    patches: Vec<Array2<f64>>,
    /// Per sample: tanh activations (positions × filters).
    activations: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
}

const W_IN: &str = "encoder.w_in";
const B_IN: &str = "encoder.b_in";
const W_OUT: &str = "encoder.w_out";
const B_OUT: &str = "encoder.b_out";

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn fan_in(&self) -> usize {
        match self.config.architecture {
            Architecture::ToyMlp => self.config.input_width(),
            Architecture::SmallConv => 9 * self.config.input_shape[2],
        }
    }

    /// Registers freshly initialised encoder parameters in `store`.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = &self.config;
        let fan_in = self.fan_in();
        let out = c.tokens() * c.width;
        store.insert(
            W_IN,
            normal_init(c.hidden, fan_in, 1.0 / (fan_in as f64).sqrt(), rng),
        );
        store.insert(
            W_OUT,
            normal_init(out, c.hidden, 1.0 / (c.hidden as f64).sqrt(), rng),
        );
        if c.bias {
            store.insert(B_IN, Array2::zeros((1, c.hidden)));
            store.insert(B_OUT, Array2::zeros((1, out)));
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        if self.config.bias {
            vec![W_IN, B_IN, W_OUT, B_OUT]
        } else {
            vec![W_IN, W_OUT]
        }
    }

    pub fn forward(
        &self,
        params: &ParamStore,
        inputs: ArrayView2<f64>,
    ) -> Result<(BatchFeatures, ForwardCache)> {
        let c = &self.config;
        if inputs.ncols() != c.input_width() {
            return Err(Error::Shape(format!(
                "encoder expects inputs of width {}, got {}",
                c.input_width(),
                inputs.ncols()
            )));
        }
        let w_in = params.tensor(W_IN);
        let (hidden, conv) = match c.architecture {
            Architecture::ToyMlp => {
                let mut z = inputs.dot(&w_in.t());
                if c.bias {
                    z += params.tensor(B_IN);
                }
                z.mapv_inplace(f64::tanh);
                (z, None)
            }
            Architecture::SmallConv => self.conv_forward(params, inputs),
        };
        let mut y = hidden.dot(&params.tensor(W_OUT).t());
        if c.bias {
            y += params.tensor(B_OUT);
        }
        let n = c.width;
        let features = BatchFeatures {
            global: y.slice(s![.., 0..n]).to_owned(),
            locals: (1..=c.locals)
                .map(|k| y.slice(s![.., k * n..(k + 1) * n]).to_owned())
                .collect(),
        };
        Ok((
            features,
            ForwardCache {
                inputs: inputs.to_owned(),
                hidden,
                conv,
            },
        ))
    }

    fn conv_forward(
        &self,
        params: &ParamStore,
        inputs: ArrayView2<f64>,
    ) -> (Array2<f64>, Option<ConvCache>) {
        let c = &self.config;
        let w = params.tensor(W_IN);
        let mut hidden = Array2::zeros((inputs.nrows(), c.hidden));
        let mut patches = Vec::with_capacity(inputs.nrows());
        let mut activations = Vec::with_capacity(inputs.nrows());
        for (b, x) in inputs.rows().into_iter().enumerate() {
            let cols = im2col(x.as_slice().expect("row-major input"), &c.input_shape);
            let mut a = cols.dot(&w.t());
            if c.bias {
                a += params.tensor(B_IN);
            }
            a.mapv_inplace(f64::tanh);
            hidden
                .row_mut(b)
                .assign(&a.mean_axis(Axis(0)).expect("at least one position"));
            patches.push(cols);
            activations.push(a);
        }
        (
            hidden,
            Some(ConvCache {
                patches,
                activations,
            }),
        )
    }

    /// Accumulates parameter gradients for upstream feature gradients `grad`.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &ForwardCache,
        grad: &BatchFeatures,
        grads: &mut ParamStore,
    ) {
        let c = &self.config;
        let n = c.width;
        let batch = cache.inputs.nrows();
        let mut dy = Array2::zeros((batch, c.tokens() * n));
        dy.slice_mut(s![.., 0..n]).assign(&grad.global);
        for (k, l) in grad.locals.iter().enumerate() {
            dy.slice_mut(s![.., (k + 1) * n..(k + 2) * n]).assign(l);
        }
        grads.accumulate(W_OUT, &dy.t().dot(&cache.hidden));
        if c.bias {
            grads.accumulate(B_OUT, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        let dh = dy.dot(params.tensor(W_OUT));
        match (&cache.conv, c.architecture) {
            (None, Architecture::ToyMlp) => {
                let dz = dh * cache.hidden.mapv(|h| 1.0 - h * h);
                grads.accumulate(W_IN, &dz.t().dot(&cache.inputs));
                if c.bias {
                    grads.accumulate(B_IN, &dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            (Some(conv), Architecture::SmallConv) => {
                let mut dw = Array2::zeros(params.tensor(W_IN).raw_dim());
                let mut db = Array2::zeros((1, c.hidden));
                for b in 0..batch {
                    let a = &conv.activations[b];
                    let positions = a.nrows() as f64;
                    let mut dout = a.mapv(|v| 1.0 - v * v);
                    for mut row in dout.rows_mut() {
                        row *= &(&dh.row(b) / positions);
                    }
                    dw += &dout.t().dot(&conv.patches[b]);
                    db += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                grads.accumulate(W_IN, &dw);
                if c.bias {
                    grads.accumulate(B_IN, &db);
                }
            }
            _ => unreachable!("cache built by the same architecture"),
        }
    }

    /// Single-sample inference.
    pub fn encode(&self, params: &ParamStore, sample: &PersonSample) -> Result<FeatureBundle> {
        let x = ArrayView2::from_shape((1, sample.input.len()), &sample.input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (f, _) = self.forward(params, x)?;
        Ok(f.bundle(0, sample.sample_id.clone()))
    }
}

/// 3×3 valid patches of an `H × W × C` row-major image: `(H-2)(W-2) × 9C`,
/// patch entries ordered `(dy, dx, c)`.
fn im2col(pixels: &[f64], shape: &[usize]) -> Array2<f64> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h - 2, w - 2);
    let mut cols = Array2::zeros((oh * ow, 9 * c));
    for i in 0..oh {
        for j in 0..ow {
            let mut row = cols.row_mut(i * ow + j);
            let mut k = 0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let base = ((i + dy) * w + (j + dx)) * c;
                    for ch in 0..c {
                        row[k] = pixels[base + ch];
                        k += 1;
                    }
                }
            }
        }
    }
    cols
}

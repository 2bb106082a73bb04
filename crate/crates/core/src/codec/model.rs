use rand::Rng;

use super::config::{ArchitectureConfig, TILE};
use super::CodecError;
use crate::nn::{gru_step, Graph, GruParams, GruSpec, ParamId, ParamSet};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles for every layer, derived deterministically from the
/// architecture so a checkpoint can be matched by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    e0: Conv,
    encoder: [GruParams; 3],
    binarizer: Conv,
    d0: Conv,
    decoder: [GruParams; 4],
    out: Conv,
}

fn conv<T: Scalar>(set: &mut ParamSet<T>, prefix: &str, k: usize, cin: usize, cout: usize) -> Conv {
    Conv {
        w: set.insert(format!("{prefix}.w"), Tensor::zeros(Shape::new(k, k, cin, cout))),
        b: set.insert(format!("{prefix}.b"), Tensor::zeros(Shape::new(1, 1, 1, cout))),
    }
}

impl Layout {
    fn register<T: Scalar>(config: &ArchitectureConfig, set: &mut ParamSet<T>) -> Self {
        let e = config.encoder_depths;
        let e0 = conv(set, "enc.e0", config.encoder_input_kernels[0], 3, e[0]);
        let encoder = std::array::from_fn(|i| {
            let spec = GruSpec {
                input_depth: e[i],
                hidden_depth: e[i + 1],
                input_kernel: config.encoder_input_kernels[i + 1],
                hidden_kernel: config.encoder_hidden_kernels[i],
                stride: 2,
            };
            GruParams::insert_zeros(set, &format!("enc.e{}", i + 1), spec)
        });
        let binarizer = conv(set, "enc.bin", 1, e[3], config.binarizer_depth);

        let d = config.decoder_depths;
        let d0 = conv(set, "dec.d0", config.decoder_input_kernels[0], config.binarizer_depth, config.decoder_conv_depth);
        let decoder = std::array::from_fn(|i| {
            let input_depth = if i == 0 { config.decoder_conv_depth } else { d[i - 1] / 4 };
            let spec = GruSpec {
                input_depth,
                hidden_depth: d[i],
                input_kernel: config.decoder_input_kernels[i + 1],
                hidden_kernel: config.decoder_hidden_kernels[i],
                stride: 1,
            };
            GruParams::insert_zeros(set, &format!("dec.d{}", i + 1), spec)
        });
        let out = conv(set, "dec.out", 1, d[3] / 4, 3);
        Self { e0, encoder, binarizer, d0, decoder, out }
    }

    fn biases(&self) -> Vec<ParamId> {
        let convs = [self.e0, self.binarizer, self.d0, self.out].map(|c| c.b);
        let grus = self.encoder.iter().chain(&self.decoder).flat_map(|g| g.biases());
        convs.into_iter().chain(grus).collect()
    }

    /// Kernels that act on hidden state; these start at half scale.
    fn hidden_kernels(&self) -> Vec<ParamId> {
        self.encoder.iter().chain(&self.decoder).flat_map(|g| g.hidden_kernels()).collect()
    }
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ArchitectureConfig,
    layout: Layout,
    params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    /// All-zero parameters.
    pub fn zeros(config: ArchitectureConfig) -> Result<Self, CodecError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layout = Layout::register(&config, &mut params);
        Ok(Self { config, layout, params })
    }

    /// Glorot-uniform kernels, half-scale hidden kernels, zero biases.
    pub fn init(config: ArchitectureConfig, rng: &mut impl Rng) -> Result<Self, CodecError> {
        let mut model = Self::zeros(config)?;
        let hidden = model.layout.hidden_kernels();
        let biases = model.layout.biases();
        for id in model.params.ids().collect::<Vec<_>>() {
            if biases.contains(&id) {
                continue;
            }
            let tensor = model.params.get_mut(id);
            let s = tensor.shape();
            let area = s.batch() * s.height();
            let mut limit = (6.0 / (area * (s.width() + s.channels())) as f64).sqrt();
            if hidden.contains(&id) {
                limit *= 0.5;
            }
            for v in tensor.data_mut() {
                *v = T::of(rng.random_range(-limit..limit));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    /// Priming and diffusion are controller settings; they can change
    /// without touching the parameters.
    pub fn set_priming(&mut self, k_prime: usize, k_diffuse: usize) {
        self.config.k_prime = k_prime;
        self.config.k_diffuse = k_diffuse;
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), layout: self.layout.clone(), params: self.params.cast() }
    }
}

/// Encoder hidden states for `E1..E3`; zero until the first step.
#[derive(Clone, Debug)]
pub struct EncoderState<N> {
    hidden: Option<[N; 3]>,
}

impl<N> Default for EncoderState<N> {
    fn default() -> Self {
        Self { hidden: None }
    }
}

/// Decoder hidden states for `D1..D4`; zero until the first step.
#[derive(Clone, Debug)]
pub struct DecoderState<N> {
    hidden: Option<[N; 4]>,
}

impl<N> Default for DecoderState<N> {
    fn default() -> Self {
        Self { hidden: None }
    }
}

fn zeros_node<T: Scalar, G: Graph<T>>(g: &mut G, shape: Shape) -> G::Node {
    g.constant(Tensor::zeros(shape))
}

fn conv_layer<T: Scalar, G: Graph<T>>(
    g: &mut G,
    x: &G::Node,
    c: Conv,
    stride: usize,
) -> Result<G::Node, CodecError> {
    let (w, b) = (g.param(c.w), g.param(c.b));
    let y = g.conv2d(x, &w, Some(&b), stride)?;
    Ok(g.tanh(&y))
}

/// One encoder pass: `E0..E3` then the binarizer. Returns the +/-1 codes
/// with shape `(batch, h/16, w/16, 32)`.
pub fn encode_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layout: &Layout,
    residual: &G::Node,
    state: &mut EncoderState<G::Node>,
) -> Result<G::Node, CodecError> {
    let shape = g.value(residual).shape();
    if shape.height() % TILE != 0 || shape.width() % TILE != 0 {
        return Err(CodecError::Dims { height: shape.height(), width: shape.width() });
    }
    if shape.channels() != 3 {
        return Err(CodecError::Channels(shape.channels()));
    }
    let e0 = conv_layer(g, residual, layout.e0, 2)?;
    let hidden = match state.hidden.take() {
        Some(h) => h,
        None => {
            let mut input = g.value(&e0).shape();
            let mut zero = |p: &GruParams| {
                let s = p.hidden_shape(input);
                input = s;
                zeros_node(g, s)
            };
            let h1 = zero(&layout.encoder[0]);
            let h2 = zero(&layout.encoder[1]);
            let h3 = zero(&layout.encoder[2]);
            [h1, h2, h3]
        }
    };
    let mut x = e0;
    let mut next = Vec::with_capacity(3);
    for (p, h) in layout.encoder.iter().zip(hidden.iter()) {
        x = gru_step(g, &x, h, p)?;
        next.push(x.clone());
    }
    state.hidden = Some(next.try_into().unwrap_or_else(|_| unreachable!()));
    let b = conv_layer(g, &x, layout.binarizer, 1)?;
    Ok(g.binarize(&b))
}

/// One decoder pass from a code slice `(batch, rows, cols, 32)` to an RGB
/// delta with 16x the spatial size and values in (-1, 1).
pub fn decode_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layout: &Layout,
    bits: &G::Node,
    state: &mut DecoderState<G::Node>,
) -> Result<G::Node, CodecError> {
    let shape = g.value(bits).shape();
    let depth = g.params().get(layout.d0.w).shape().width();
    if shape.channels() != depth {
        return Err(CodecError::CodeDepth(shape.channels()));
    }
    let d0 = conv_layer(g, bits, layout.d0, 1)?;
    let hidden = match state.hidden.take() {
        Some(h) => h,
        None => std::array::from_fn(|i| {
            let scale = 1 << i;
            let p = &layout.decoder[i];
            let s = Shape::new(shape.batch(), shape.height() * scale, shape.width() * scale, p.spec.hidden_depth);
            zeros_node(g, s)
        }),
    };
    let mut x = d0;
    let mut next = Vec::with_capacity(4);
    for (p, h) in layout.decoder.iter().zip(hidden.iter()) {
        let h = gru_step(g, &x, h, p)?;
        x = g.depth_to_space(&h)?;
        next.push(h);
    }
    state.hidden = Some(next.try_into().unwrap_or_else(|_| unreachable!()));
    conv_layer(g, &x, layout.out, 1)
}

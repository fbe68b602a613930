//! Bias-free convolutional autoencoders.
//!
//! An encoder is a stack of strided convolutions followed by one dense layer
//! into the latent space; the decoder mirrors it with a dense layer and
//! transposed convolutions. Neither carries bias parameters: a network with
//! biases can map every input onto a constant centre and collapse the
//! hypersphere objective.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ndgrad::conv::{conv_out_len, tconv_out_len};
use crate::ndgrad::{xavier_init, Gradients, Graph, Tensor, Var};
use crate::{Error, Result, Rng};

/// Architecture of one autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// `(channels, height, width)` of one input sample.
    pub input_shape: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub latent_dim: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Only `false` is accepted; kept in the schema so configs that ask for
    /// biases are rejected loudly instead of silently ignored.
    #[serde(default)]
    pub bias: bool,
}

fn default_slope() -> f64 {
    0.1
}

impl NetSpec {
    /// Desk-scale network for two 28x28 views.
    pub fn desk(channels: usize) -> Self {
        Self {
            input_shape: [channels, 28, 28],
            conv_channels: vec![8, 16, 32],
            kernel: 5,
            stride: 2,
            padding: 2,
            latent_dim: 32,
            leaky_slope: 0.1,
            bias: false,
        }
    }

    /// Full-resolution network (400x400 inputs, four conv layers).
    pub fn paper(channels: usize, latent_dim: usize) -> Self {
        Self {
            input_shape: [channels, 400, 400],
            conv_channels: vec![16, 32, 64, 128],
            kernel: 5,
            stride: 2,
            padding: 2,
            latent_dim,
            leaky_slope: 0.1,
            bias: false,
        }
    }

    /// Same architecture for a different channel count.
    pub fn with_channels(&self, channels: usize) -> Self {
        let mut s = self.clone();
        s.input_shape[0] = channels;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias {
            return Err(Error::Config(
                "bias terms are not supported: with biases the encoder can map every input to a \
                 constant point, which trivially minimises the hypersphere objective (collapse)"
                    .into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.input_shape.contains(&0) || self.conv_channels.contains(&0) {
            return Err(Error::Config(format!("zero-sized dimension in {self:?}")));
        }
        if !self.conv_channels.is_empty() && (self.kernel == 0 || self.stride == 0) {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope {} outside (0, 1)", self.leaky_slope)));
        }
        self.feature_maps().map(|_| ())
    }

    /// `(c, h, w)` after every encoder stage, starting with the input.
    pub fn feature_maps(&self) -> Result<Vec<[usize; 3]>> {
        let mut maps = vec![self.input_shape];
        for &ch in &self.conv_channels {
            let [_, h, w] = *maps.last().unwrap();
            let (Some(oh), Some(ow)) = (
                conv_out_len(h, self.kernel, self.stride, self.padding),
                conv_out_len(w, self.kernel, self.stride, self.padding),
            ) else {
                return Err(Error::Config(format!(
                    "spatial size collapses below 1x1 at a {h}x{w} map (kernel {}, stride {}, padding {})",
                    self.kernel, self.stride, self.padding
                )));
            };
            maps.push([ch, oh, ow]);
        }
        Ok(maps)
    }

    fn flat_dim(&self) -> Result<usize> {
        let maps = self.feature_maps()?;
        Ok(maps.last().unwrap().iter().product())
    }

    /// Output padding that makes each transposed conv land on the matching encoder size.
    fn output_paddings(&self) -> Result<Vec<usize>> {
        let maps = self.feature_maps()?;
        let mut pads = Vec::new();
        for pair in maps.windows(2).rev() {
            let (big, small) = (pair[0], pair[1]);
            let mut pad = [0usize; 2];
            for (axis, p) in pad.iter_mut().enumerate() {
                let base = tconv_out_len(small[axis + 1], self.kernel, self.stride, self.padding, 0);
                let base = base.ok_or_else(|| Error::Config("decoder cannot mirror encoder".into()))?;
                if big[axis + 1] < base || big[axis + 1] - base >= self.stride {
                    return Err(Error::Config(format!(
                        "decoder cannot reproduce a {}x{} map from {}x{}",
                        big[1], big[2], small[1], small[2]
                    )));
                }
                *p = big[axis + 1] - base;
            }
            if pad[0] != pad[1] {
                return Err(Error::Config("non-square output padding is not supported".into()));
            }
            pads.push(pad[0]);
        }
        Ok(pads)
    }

    pub fn encoder_layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            (1..=self.conv_channels.len()).map(|i| format!("enc.conv{i}")).collect();
        names.push("enc.fc".into());
        names
    }

    pub fn decoder_layer_names(&self) -> Vec<String> {
        let mut names = vec!["dec.fc".to_string()];
        names.extend((1..=self.conv_channels.len()).map(|i| format!("dec.tconv{i}")));
        names
    }
}

/// Ordered, named weight tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<(String, Tensor)>,
}

impl NetworkParams {
    pub fn new(layers: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in layers.iter().enumerate() {
            if layers[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!("duplicate layer name `{name}`")));
            }
        }
        Ok(Self { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.layers.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.layers.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every weight as a trainable leaf, in layer order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.layers
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.set_requires_grad(true);
                t.zero_grad();
                g.input(&t)
            })
            .collect()
    }

    /// Adds the gradients of the bound leaves into each weight's grad buffer.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &[Var]) -> Result<()> {
        if bound.len() != self.layers.len() {
            return Err(Error::Gradient("bound variables do not match the parameter list".into()));
        }
        for ((_, t), &v) in self.layers.iter_mut().zip(bound) {
            grads.write_into(v, t)?;
        }
        Ok(())
    }

    /// Layers of `self` followed by those of `other`.
    pub fn merged(&self, other: &NetworkParams) -> Result<NetworkParams> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        NetworkParams::new(layers)
    }

    /// Rounds every weight to the nearest `f32`.
    pub fn snap_to_f32(&mut self) {
        for (_, t) in &mut self.layers {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Contiguous stack of equally shaped `(C, H, W)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub shape: [usize; 3],
    data: Vec<f64>,
}

impl ImageSet {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || !data.len().is_multiple_of(per) {
            return Err(Error::Shape(format!("{} values do not tile samples of {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn empty(shape: [usize; 3]) -> Self {
        Self { shape, data: Vec::new() }
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.sample_len() {
            return Err(Error::Shape(format!(
                "sample of {} values pushed into a set of {:?}",
                sample.len(),
                self.shape
            )));
        }
        self.data.extend_from_slice(sample);
        Ok(())
    }

    /// `(N, C, H, W)` tensor of the selected samples.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let [c, h, w] = self.shape;
        Tensor::new(vec![indices.len(), c, h, w], data)
    }
}

/// Builds Xavier-initialised encoder and decoder weights for `spec`.
pub fn build_cae(spec: &NetSpec, rng: &mut Rng) -> Result<(NetworkParams, NetworkParams)> {
    let encoder = build_encoder(spec, rng)?;
    let decoder = build_decoder(spec, rng)?;
    Ok((encoder, decoder))
}

pub fn build_encoder(spec: &NetSpec, rng: &mut Rng) -> Result<NetworkParams> {
    spec.validate()?;
    let maps = spec.feature_maps()?;
    let names = spec.encoder_layer_names();
    let mut layers = Vec::new();
    for (i, pair) in maps.windows(2).enumerate() {
        let shape = [pair[1][0], pair[0][0], spec.kernel, spec.kernel];
        layers.push((names[i].clone(), xavier_init(&shape, rng)?));
    }
    layers.push(("enc.fc".into(), xavier_init(&[spec.flat_dim()?, spec.latent_dim], rng)?));
    NetworkParams::new(layers)
}

pub fn build_decoder(spec: &NetSpec, rng: &mut Rng) -> Result<NetworkParams> {
    spec.validate()?;
    let maps = spec.feature_maps()?;
    spec.output_paddings()?;
    let mut layers = vec![("dec.fc".to_string(), xavier_init(&[spec.latent_dim, spec.flat_dim()?], rng)?)];
    for (i, pair) in maps.windows(2).rev().enumerate() {
        let shape = [pair[1][0], pair[0][0], spec.kernel, spec.kernel];
        layers.push((format!("dec.tconv{}", i + 1), xavier_init(&shape, rng)?));
    }
    NetworkParams::new(layers)
}

/// `(N, C, H, W)` input to `(N, latent_dim)` embeddings.
pub fn encoder_forward(g: &mut Graph, spec: &NetSpec, weights: &[Var], x: Var) -> Result<Var> {
    let n_conv = spec.conv_channels.len();
    if weights.len() != n_conv + 1 {
        return Err(Error::Shape(format!("encoder expects {} weights, got {}", n_conv + 1, weights.len())));
    }
    let batch = g.shape(x)[0];
    let mut h = x;
    for &w in &weights[..n_conv] {
        h = g.conv2d(h, w, spec.stride, spec.padding)?;
        h = g.leaky_relu(h, spec.leaky_slope)?;
    }
    let flat = g.value(h).len() / batch;
    let h = g.reshape(h, vec![batch, flat])?;
    g.dense(h, weights[n_conv])
}

/// `(N, latent_dim)` embeddings back to `(N, C, H, W)` reconstructions.
pub fn decoder_forward(g: &mut Graph, spec: &NetSpec, weights: &[Var], z: Var) -> Result<Var> {
    let n_conv = spec.conv_channels.len();
    if weights.len() != n_conv + 1 {
        return Err(Error::Shape(format!("decoder expects {} weights, got {}", n_conv + 1, weights.len())));
    }
    let maps = spec.feature_maps()?;
    let pads = spec.output_paddings()?;
    let batch = g.shape(z)[0];
    let mut h = g.dense(z, weights[0])?;
    let [c, hh, ww] = *maps.last().unwrap();
    if n_conv > 0 {
        h = g.leaky_relu(h, spec.leaky_slope)?;
    }
    h = g.reshape(h, vec![batch, c, hh, ww])?;
    for (i, &w) in weights[1..].iter().enumerate() {
        h = g.tconv2d(h, w, spec.stride, spec.padding, pads[i])?;
        if i + 1 < n_conv {
            h = g.leaky_relu(h, spec.leaky_slope)?;
        }
    }
    Ok(h)
}

/// Pixel-wise reconstruction error `mse(target, decoder(encoder(input)))`.
///
/// For denoising training pass the corrupted batch as `input` and the clean
/// batch as `target`.
pub fn cae_loss(
    g: &mut Graph,
    spec: &NetSpec,
    encoder: &[Var],
    decoder: &[Var],
    input: Var,
    target: Var,
) -> Result<Var> {
    let z = encoder_forward(g, spec, encoder, input)?;
    let recon = decoder_forward(g, spec, decoder, z)?;
    g.mse(target, recon)
}

/// Reconstruction loss value for a batch, without recording gradients.
pub fn reconstruction_error(
    spec: &NetSpec,
    encoder: &NetworkParams,
    decoder: &NetworkParams,
    batch: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let enc: Vec<Var> = encoder.iter().map(|(_, t)| g.input(t)).collect();
    let dec: Vec<Var> = decoder.iter().map(|(_, t)| g.input(t)).collect();
    let x = g.input(batch);
    let loss = cae_loss(&mut g, spec, &enc, &dec, x, x)?;
    Ok(g.item(loss))
}

/// Adds `N(0, sigma^2)` noise to every element.
pub fn dae_corrupt(batch: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
    }
    let mut out = batch.clone();
    out.zero_grad();
    if sigma > 0.0 {
        for v in out.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    Ok(out)
}

/// Deep copy of the encoder layers of a pretrained autoencoder; decoder layers are dropped.
pub fn transfer_encoder(pretrained: &NetworkParams, spec: &NetSpec) -> Result<NetworkParams> {
    let layers = spec
        .encoder_layer_names()
        .into_iter()
        .map(|name| {
            let t = pretrained
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("pretrained weights lack layer `{name}`")))?;
            let mut t = t.clone();
            t.zero_grad();
            Ok((name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(layers)
}

/// Embeds every sample of `set`, processing `chunk` samples per forward pass.
pub fn embed(spec: &NetSpec, encoder: &NetworkParams, set: &ImageSet) -> Result<Vec<Vec<f64>>> {
    if set.shape != spec.input_shape {
        return Err(Error::Shape(format!(
            "encoder expects samples of {:?}, got {:?}",
            spec.input_shape, set.shape
        )));
    }
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let batch = set.gather(chunk)?;
        let mut g = Graph::new();
        let w: Vec<Var> = encoder.iter().map(|(_, t)| g.input(t)).collect();
        let x = g.input(&batch);
        let z = encoder_forward(&mut g, spec, &w, x)?;
        out.extend(g.value(z).chunks_exact(spec.latent_dim).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Embedding of a single `(C, H, W)` sample.
pub fn embed_one(spec: &NetSpec, encoder: &NetworkParams, sample: &[f64]) -> Result<Vec<f64>> {
    let set = ImageSet::new(spec.input_shape, sample.to_vec())?;
    if set.len() != 1 {
        return Err(Error::Shape(format!("expected one sample of {:?}", spec.input_shape)));
    }
    Ok(embed(spec, encoder, &set)?.remove(0))
}

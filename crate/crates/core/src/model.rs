//! Small residual encoder-decoder with skip connections.
//!
//! Each encoder level is a 3x3 entry convolution followed by a residual
//! block; levels are joined by 2x2 max pooling. The decoder mirrors the
//! encoder with nearest upsampling and channel concatenation of the skip
//! tensor. A 1x1 head and a logistic activation produce one probability
//! map per category.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, IoContext, Result};
use crate::image::ImageGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub categories: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 8,
            depth: 2,
            categories: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("model depth must be >= 1".into()));
        }
        if self.categories < 1 || self.in_channels < 1 || self.base_channels < 1 {
            return Err(Error::InvalidConfig(
                "categories, in_channels and base_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Stage {
    entry: ConvLayer,
    res_a: ConvLayer,
    res_b: ConvLayer,
}

#[derive(Debug, Clone)]
pub struct SegNet {
    config: ModelConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    head: ConvLayer,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64) -> ConvLayer {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).unwrap();
        let values = (0..cout * cin * k * k).map(|_| normal.sample(&mut self.rng)).collect();
        let weight = self.params.len();
        self.params
            .push(Tensor::new(vec![cout, cin, k, k], values).unwrap().with_grad());
        self.names.push(format!("{name}.weight"));
        self.params.push(Tensor::zeros(vec![cout]).with_grad());
        self.names.push(format!("{name}.bias"));
        ConvLayer {
            weight,
            bias: weight + 1,
        }
    }

    fn stage(&mut self, name: &str, cin: usize, cout: usize) -> Stage {
        Stage {
            entry: self.conv(&format!("{name}.entry"), cin, cout, 3, 1.0),
            res_a: self.conv(&format!("{name}.res_a"), cout, cout, 3, 1.0),
            // Damped so each residual block starts close to identity.
            res_b: self.conv(&format!("{name}.res_b"), cout, cout, 3, 0.25),
        }
    }
}

impl SegNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params: Vec::new(),
            names: Vec::new(),
        };
        let width = |level: usize| config.base_channels << level;
        let mut encoder = Vec::new();
        for level in 0..=config.depth {
            let cin = if level == 0 {
                config.in_channels
            } else {
                width(level - 1)
            };
            encoder.push(b.stage(&format!("enc{level}"), cin, width(level)));
        }
        let mut decoder = Vec::new();
        for level in (0..config.depth).rev() {
            let cin = width(level + 1) + width(level);
            decoder.push(b.stage(&format!("dec{level}"), cin, width(level)));
        }
        let head = b.conv("head", width(0), config.categories, 1, 0.5);
        Ok(Self {
            config,
            params: b.params,
            names: b.names,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// All parameter values concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.params {
            let n = t.numel();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Zero the 1x1 head so every output is exactly `logistic(0) = 0.5`.
    pub fn zero_head(&mut self) {
        for idx in [self.head.weight, self.head.bias] {
            self.params[idx].values.fill(0.0);
        }
    }

    /// Checks that `(h, w)` survives `depth` rounds of 2x pooling.
    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        let unit = 1usize << self.config.depth;
        if channels != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {channels}",
                self.config.in_channels
            )));
        }
        if h == 0 || w == 0 || !h.is_multiple_of(unit) || !w.is_multiple_of(unit) {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a positive multiple of {unit} in both dimensions"
            )));
        }
        Ok(())
    }

    /// Registers every parameter as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|t| graph.leaf(t)).collect()
    }

    /// Records the forward pass; `input` is `[N, Cin, H, W]`, the result is
    /// `[N, C, H, W]` probabilities.
    pub fn forward_graph(&self, graph: &mut Graph, params: &[Var], input: Var) -> Var {
        let conv = |g: &mut Graph, x: Var, l: ConvLayer| g.conv2d(x, params[l.weight], Some(params[l.bias]));
        let stage = |g: &mut Graph, x: Var, s: &Stage| {
            let h = conv(g, x, s.entry);
            let h = g.relu(h);
            let r = conv(g, h, s.res_a);
            let r = g.relu(r);
            let r = conv(g, r, s.res_b);
            let sum = g.add(h, r);
            g.relu(sum)
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = input;
        for (level, s) in self.encoder.iter().enumerate() {
            if level > 0 {
                x = graph.max_pool2(x);
            }
            x = stage(graph, x, s);
            if level < self.config.depth {
                skips.push(x);
            }
        }
        for s in &self.decoder {
            let up = graph.upsample2(x);
            let skip = skips.pop().unwrap();
            let cat = graph.concat_channels(up, skip);
            x = stage(graph, cat, s);
        }
        let logits = conv(graph, x, self.head);
        graph.sigmoid(logits)
    }

    /// Stacks single-channel images into a `[N, 1, H, W]` constant.
    pub fn input_batch(&self, graph: &mut Graph, images: &[&ImageGrid]) -> Result<Var> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w) = first.dims();
        self.check_input(1, h, w)?;
        let mut values = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.dims() != (h, w) {
                return Err(Error::Shape(format!("batch mixes {h}x{w} with {:?}", img.dims())));
            }
            values.extend_from_slice(img.values());
        }
        Ok(graph.constant(vec![images.len(), 1, h, w], values))
    }

    /// Inference: one probability map per category for each input image.
    pub fn forward(&self, images: &[&ImageGrid]) -> Result<Vec<Vec<ImageGrid>>> {
        let mut graph = Graph::new();
        let input = self.input_batch(&mut graph, images)?;
        let params = self.bind(&mut graph);
        let out = self.forward_graph(&mut graph, &params, input);
        let (h, w) = images[0].dims();
        let values = graph.value(out);
        let c = self.config.categories;
        Ok((0..images.len())
            .map(|n| {
                (0..c)
                    .map(|k| {
                        let start = (n * c + k) * h * w;
                        ImageGrid::new(h, w, values[start..start + h * w].to_vec()).unwrap()
                    })
                    .collect()
            })
            .collect())
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"PMIL";
const WEIGHTS_VERSION: u32 = 1;

impl SegNet {
    /// `PMIL` magic, version and parameter count, then little-endian f64
    /// values in declaration order.
    pub fn weights_bytes(&self) -> Vec<u8> {
        let flat = self.flat_params();
        let mut out = Vec::with_capacity(16 + 8 * flat.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.weights_bytes()).io_context(|| format!("writing {}", path.display()))
    }

    /// Builds a model for `config` and fills it from a weights file.
    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).io_context(|| format!("reading {}", path.display()))?;
        let bad = |reason: String| Error::Weights {
            path: path.to_path_buf(),
            reason,
        };
        let mut model = Self::new(config)?;
        if bytes.len() < 16 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(bad("missing PMIL header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if count != model.parameter_count() {
            return Err(bad(format!(
                "file holds {count} parameters, model has {}",
                model.parameter_count()
            )));
        }
        if bytes.len() != 16 + 8 * count {
            return Err(bad(format!("expected {} bytes, found {}", 16 + 8 * count, bytes.len())));
        }
        let flat: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_flat_params(&flat)?;
        Ok(model)
    }
}

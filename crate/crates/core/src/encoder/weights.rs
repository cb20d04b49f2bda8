//! Encoder parameters, initialisation and weight import.
//!
//! Linear weights are stored `in x out` so activations multiply on the left
//! (`y = x W + b`). Tensor names:
//!
//! | name                              | shape            |
//! |-----------------------------------|------------------|
//! | `patch_embed.weight` / `.bias`    | `P*P*C x D`, `D` |
//! | `cls_token`                       | `D`              |
//! | `pos_embed`                       | `1 + gh*gw x D`  |
//! | `blocks.{i}.norm1.weight`/`.bias` | `D`              |
//! | `blocks.{i}.attn.{q,k,v,o}.weight`| `D x D`          |
//! | `blocks.{i}.attn.{q,k,v,o}.bias`  | `D`              |
//! | `blocks.{i}.norm2.weight`/`.bias` | `D`              |
//! | `blocks.{i}.mlp.fc1.weight`       | `D x M`          |
//! | `blocks.{i}.mlp.fc2.weight`       | `M x D`          |
//! | `norm.weight` / `.bias`           | `D`              |
//!
//! [`VitWeights::import_timm`] maps the common PyTorch/timm layout
//! (`attn.qkv`, `attn.proj`, conv patch embedding, `out x in` linears).

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, IntoDimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;
use crate::data::container::TensorContainer;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::real::Real;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights<F> {
    pub weight: Array1<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<F> {
    pub norm1: LayerNormWeights<F>,
    pub q: LinearWeights<F>,
    pub k: LinearWeights<F>,
    pub v: LinearWeights<F>,
    pub o: LinearWeights<F>,
    pub norm2: LayerNormWeights<F>,
    pub fc1: LinearWeights<F>,
    pub fc2: LinearWeights<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitWeights<F> {
    pub config: EncoderConfig,
    pub patch_embed: LinearWeights<F>,
    pub cls_token: Array1<F>,
    pub pos_embed: Array2<F>,
    pub blocks: Vec<BlockWeights<F>>,
    pub norm: LayerNormWeights<F>,
}

struct TruncNormal {
    normal: Normal<f64>,
    limit: f64,
}

impl TruncNormal {
    fn new(std: f64) -> Self {
        TruncNormal {
            normal: Normal::new(0.0, std).unwrap(),
            limit: 2.0 * std,
        }
    }

    fn draw<F: Real>(&self, rng: &mut ChaCha8Rng) -> F {
        loop {
            let v = self.normal.sample(rng);
            if v.abs() <= self.limit {
                return F::from_f64_lossy(v);
            }
        }
    }
}

impl<F: Real> LinearWeights<F> {
    fn zeros(i: usize, o: usize) -> Self {
        LinearWeights {
            weight: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        }
    }

    fn init(i: usize, o: usize, tn: &TruncNormal, rng: &mut ChaCha8Rng) -> Self {
        LinearWeights {
            weight: Array2::from_shape_simple_fn((i, o), || tn.draw(rng)),
            bias: Array1::zeros(o),
        }
    }
}

impl<F: Real> LayerNormWeights<F> {
    fn identity(d: usize) -> Self {
        LayerNormWeights {
            weight: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNormWeights {
            weight: Array1::zeros(d),
            bias: Array1::zeros(d),
        }
    }
}

impl<F: Real> BlockWeights<F> {
    fn build(cfg: &EncoderConfig, mut lin: impl FnMut(usize, usize) -> LinearWeights<F>, ln: impl Fn(usize) -> LayerNormWeights<F>) -> Self {
        let (d, m) = (cfg.embed_dim, cfg.mlp_dim());
        BlockWeights {
            norm1: ln(d),
            q: lin(d, d),
            k: lin(d, d),
            v: lin(d, d),
            o: lin(d, d),
            norm2: ln(d),
            fc1: lin(d, m),
            fc2: lin(m, d),
        }
    }

    /// Projection by index: 0 = q, 1 = k, 2 = v, 3 = o.
    pub fn projection(&self, i: usize) -> &LinearWeights<F> {
        match i {
            0 => &self.q,
            1 => &self.k,
            2 => &self.v,
            3 => &self.o,
            _ => panic!("projection index {i} out of range"),
        }
    }

    pub fn projection_mut(&mut self, i: usize) -> &mut LinearWeights<F> {
        match i {
            0 => &mut self.q,
            1 => &mut self.k,
            2 => &mut self.v,
            3 => &mut self.o,
            _ => panic!("projection index {i} out of range"),
        }
    }
}

fn pos_rows(cfg: &EncoderConfig) -> usize {
    1 + cfg.pos_grid.0 * cfg.pos_grid.1
}

impl<F: Real> VitWeights<F> {
    /// Random initialisation: truncated normal (std 0.02) for projections,
    /// class token and positional embeddings; zero biases; identity LayerNorms.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tn = TruncNormal::new(INIT_STD);
        let d = config.embed_dim;
        let patch_embed = LinearWeights::init(config.patch_dim(), d, &tn, &mut rng);
        let cls_token = Array1::from_shape_simple_fn(d, || tn.draw(&mut rng));
        let pos_embed = Array2::from_shape_simple_fn((pos_rows(config), d), || tn.draw(&mut rng));
        let blocks = (0..config.depth)
            .map(|_| BlockWeights::build(config, |i, o| LinearWeights::init(i, o, &tn, &mut rng), LayerNormWeights::identity))
            .collect();
        Ok(VitWeights {
            config: config.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNormWeights::identity(d),
        })
    }

    /// All-zero tensors of the right shapes (gradient accumulators).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.embed_dim;
        VitWeights {
            config: config.clone(),
            patch_embed: LinearWeights::zeros(config.patch_dim(), d),
            cls_token: Array1::zeros(d),
            pos_embed: Array2::zeros((pos_rows(config), d)),
            blocks: (0..config.depth)
                .map(|_| BlockWeights::build(config, LinearWeights::zeros, LayerNormWeights::zeros))
                .collect(),
            norm: LayerNormWeights::zeros(d),
        }
    }

    pub fn from_container(config: &EncoderConfig, c: &TensorContainer) -> Result<Self> {
        config.validate()?;
        let mut w = Self::zeros(config);
        w.load_from(c)?;
        Ok(w)
    }

    /// Import a timm-style Vision Transformer state dict.
    pub fn import_timm(config: &EncoderConfig, c: &TensorContainer) -> Result<Self> {
        config.validate()?;
        let (d, p, ch) = (config.embed_dim, config.patch_size, config.in_chans);
        let mut w = Self::zeros(config);

        let conv = c.get::<F>("patch_embed.proj.weight")?;
        if conv.shape() != [d, ch, p, p] {
            return Err(Error::Dimension(format!(
                "patch_embed.proj.weight is {:?}, expected [{d}, {ch}, {p}, {p}]",
                conv.shape()
            )));
        }
        for o in 0..d {
            for py in 0..p {
                for px in 0..p {
                    for k in 0..ch {
                        w.patch_embed.weight[[(py * p + px) * ch + k, o]] = conv[[o, k, py, px].into_dimension()];
                    }
                }
            }
        }
        w.patch_embed.bias = c.get_array1("patch_embed.proj.bias")?;
        w.cls_token = Array1::from_iter(c.get::<F>("cls_token")?.iter().copied());
        let pos = c.get::<F>("pos_embed")?;
        let pos: Vec<F> = pos.iter().copied().collect();
        let rows = pos.len() / d;
        let expect = pos_rows(config);
        let pos = Array2::from_shape_vec((rows, d), pos).map_err(|e| Error::format("pos_embed", e.to_string()))?;
        if rows == expect {
            w.pos_embed = pos;
        } else if rows + 1 == expect {
            w.pos_embed.slice_mut(s![1.., ..]).assign(&pos);
        } else {
            return Err(Error::Dimension(format!("pos_embed has {rows} rows, expected {expect}")));
        }

        let linear_t = |name: &str| -> Result<Array2<F>> { Ok(c.get_array2::<F>(name)?.t().to_owned()) };
        for (i, b) in w.blocks.iter_mut().enumerate() {
            let pre = format!("blocks.{i}");
            b.norm1.weight = c.get_array1(&format!("{pre}.norm1.weight"))?;
            b.norm1.bias = c.get_array1(&format!("{pre}.norm1.bias"))?;
            let qkv = linear_t(&format!("{pre}.attn.qkv.weight"))?;
            let qkv_b = c.get_array1::<F>(&format!("{pre}.attn.qkv.bias"))?;
            if qkv.dim() != (d, 3 * d) {
                return Err(Error::Dimension(format!("{pre}.attn.qkv.weight has wrong shape")));
            }
            for (j, lin) in [&mut b.q, &mut b.k, &mut b.v].into_iter().enumerate() {
                lin.weight = qkv.slice(s![.., j * d..(j + 1) * d]).to_owned();
                lin.bias = qkv_b.slice(s![j * d..(j + 1) * d]).to_owned();
            }
            b.o.weight = linear_t(&format!("{pre}.attn.proj.weight"))?;
            b.o.bias = c.get_array1(&format!("{pre}.attn.proj.bias"))?;
            b.norm2.weight = c.get_array1(&format!("{pre}.norm2.weight"))?;
            b.norm2.bias = c.get_array1(&format!("{pre}.norm2.bias"))?;
            b.fc1.weight = linear_t(&format!("{pre}.mlp.fc1.weight"))?;
            b.fc1.bias = c.get_array1(&format!("{pre}.mlp.fc1.bias"))?;
            b.fc2.weight = linear_t(&format!("{pre}.mlp.fc2.weight"))?;
            b.fc2.bias = c.get_array1(&format!("{pre}.mlp.fc2.bias"))?;
        }
        w.norm.weight = c.get_array1("norm.weight")?;
        w.norm.bias = c.get_array1("norm.bias")?;
        // Catch silently mis-shaped tensors from the import.
        let shapes_ok = {
            let reference = Self::zeros(config);
            let mut a = Vec::new();
            reference.visit(&mut |_, t| a.push(t.shape().to_vec()));
            let mut b = Vec::new();
            w.visit(&mut |_, t| b.push(t.shape().to_vec()));
            a == b
        };
        if !shapes_ok {
            return Err(Error::Dimension("imported tensors do not match the encoder config".into()));
        }
        Ok(w)
    }
}

macro_rules! visit_body {
    ($self:ident, $f:ident, $view:ident, $iter:ident) => {{
        $f("patch_embed.weight", $self.patch_embed.weight.$view().into_dyn());
        $f("patch_embed.bias", $self.patch_embed.bias.$view().into_dyn());
        $f("cls_token", $self.cls_token.$view().into_dyn());
        $f("pos_embed", $self.pos_embed.$view().into_dyn());
        for (i, b) in $self.blocks.$iter().enumerate() {
            $f(&format!("blocks.{i}.norm1.weight"), b.norm1.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.norm1.bias"), b.norm1.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.q.weight"), b.q.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.q.bias"), b.q.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.k.weight"), b.k.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.k.bias"), b.k.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.v.weight"), b.v.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.v.bias"), b.v.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.o.weight"), b.o.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.attn.o.bias"), b.o.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.norm2.weight"), b.norm2.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.norm2.bias"), b.norm2.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.mlp.fc1.weight"), b.fc1.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.mlp.fc1.bias"), b.fc1.bias.$view().into_dyn());
            $f(&format!("blocks.{i}.mlp.fc2.weight"), b.fc2.weight.$view().into_dyn());
            $f(&format!("blocks.{i}.mlp.fc2.bias"), b.fc2.bias.$view().into_dyn());
        }
        $f("norm.weight", $self.norm.weight.$view().into_dyn());
        $f("norm.bias", $self.norm.bias.$view().into_dyn());
    }};
}

impl<F: Real> Params<F> for VitWeights<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        visit_body!(self, f, view, iter)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        visit_body!(self, f, view_mut, iter_mut)
    }
}

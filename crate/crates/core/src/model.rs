//! Encoder + adapters + probe as one trainable model.

use ndarray::{Array2, Array3, ArrayViewD, ArrayViewMutD, Zip};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterMethod, AdapterSet};
use crate::data::container::TensorContainer;
use crate::data::resize::{resize_hwc, resize_plane_adjoint};
use crate::data::sample::Mask;
use crate::encoder::vit::{self, EncoderGradNeeds, ForwardOptions};
use crate::encoder::{EncoderConfig, FeatureGrid, VitWeights};
use crate::error::{Error, Result};
use crate::head::{self, HeadOrder, ProbeHead};
use crate::objective::loss::{total_loss_grad, LossConfig};
use crate::params::Params;
use crate::real::Real;

/// Side length of the encoder input for a `size`-pixel side at `scale`,
/// rounded to a whole number of patches.
pub fn input_side(size: usize, scale: f64, patch: usize) -> usize {
    let patches = (size as f64 * scale / patch as f64).round() as usize;
    patches.max(1) * patch
}

/// Resize an `H x W x C` image to the encoder input resolution.
pub fn prepare_input<F: Real>(image: &Array3<f32>, scale: f64, patch: usize) -> Array3<F> {
    let (h, w, _) = image.dim();
    let (ih, iw) = (input_side(h, scale, patch), input_side(w, scale, patch));
    let img = image.mapv(|v| F::from_f64_lossy(v as f64));
    if (ih, iw) == (h, w) {
        img
    } else {
        resize_hwc(img.view(), ih, iw)
    }
}

/// Settings stored next to the tensors in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub encoder: EncoderConfig,
    pub adapters: AdapterConfig,
    pub order: HeadOrder,
    pub threshold: f64,
    pub train_encoder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<F> {
    pub encoder: VitWeights<F>,
    pub adapters: AdapterSet<F>,
    pub head: ProbeHead<F>,
    pub order: HeadOrder,
    /// Train every encoder tensor (only without adapters).
    pub train_encoder: bool,
}

/// Gradients with the same layout as [`SegModel`]'s trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub head: ProbeHead<F>,
    pub adapters: AdapterSet<F>,
    pub encoder: Option<VitWeights<F>>,
}

impl<F: Real> ModelGrads<F> {
    pub fn add_assign(&mut self, other: &ModelGrads<F>) {
        let mut theirs = Vec::new();
        other.visit(&mut |_, t| theirs.push(t.to_owned()));
        let mut it = theirs.into_iter();
        self.visit_mut(&mut |_, mut t| t += &it.next().expect("same layout"));
    }

    pub fn scale(&mut self, s: F) {
        self.visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v * s));
    }

    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(&mut |_, t| sq += t.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>());
        sq.sqrt()
    }
}

impl<F: Real> SegModel<F> {
    /// Probe + adapters on a frozen encoder. `seed` initialises the adapters.
    pub fn new(encoder: VitWeights<F>, adapters: &AdapterConfig, seed: u64) -> Result<Self> {
        let d = encoder.config.embed_dim;
        Ok(SegModel {
            adapters: AdapterSet::attach(adapters, &encoder, seed)?,
            encoder,
            head: ProbeHead::zeros(d),
            order: HeadOrder::default(),
            train_encoder: false,
        })
    }

    /// Every encoder tensor trainable, no adapters.
    pub fn full(encoder: VitWeights<F>) -> Result<Self> {
        let mut m = Self::new(encoder, &AdapterConfig::none(), 0)?;
        m.train_encoder = true;
        Ok(m)
    }

    pub fn patch_size(&self) -> usize {
        self.encoder.config.patch_size
    }

    pub fn features(&self, input: &Array3<F>) -> Result<FeatureGrid<F>> {
        vit::encode(input, &self.encoder, Some(&self.adapters))
    }

    /// Foreground probabilities at `h x w` for an encoder-resolution input.
    pub fn predict_proba(&self, input: &Array3<F>, h: usize, w: usize) -> Result<Array2<F>> {
        let grid = self.features(input)?;
        head::probabilities(&grid, &self.head, h, w, self.order)
    }

    /// Loss and gradients of one sample. `rng` enables adapter dropout.
    pub fn loss_and_grads(
        &self,
        input: &Array3<F>,
        target: &Mask,
        ignore: Option<&Mask>,
        loss: &LossConfig,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(F, ModelGrads<F>)> {
        let (h, w) = target.dim();
        let training = rng.is_some();
        let projections = self.adapters.projections(&self.encoder, training)?;
        let opts = ForwardOptions { rng, keep_cache: true };
        let (grid, cache) = vit::forward(&self.encoder, &projections, input, opts)?;
        let cache = cache.expect("cache requested");
        let (gh, gw, d) = grid.dim();

        let (value, dgrid, dw, db) = match self.order {
            HeadOrder::UpsampleFeatures | HeadOrder::UpsampleLogits => {
                let z = head::dense_logits(&grid, &self.head, h, w, self.order)?;
                let p = z.mapv(head::sigmoid);
                let (value, dp) = total_loss_grad(p.view(), target, ignore, loss)?;
                let dz = Zip::from(&dp).and(&p).map_collect(|&g, &p| g * p * (F::one() - p));
                let (dgrid, dw, db) = head::backward(&grid, &self.head, dz.view());
                (value, dgrid, dw, db)
            }
            HeadOrder::UpsampleProbabilities => {
                let zc = head::dense_logits(&grid, &self.head, gh, gw, HeadOrder::UpsampleLogits)?;
                let pc = zc.mapv(head::sigmoid);
                let p = head::probabilities(&grid, &self.head, h, w, self.order)?;
                let (value, dp) = total_loss_grad(p.view(), target, ignore, loss)?;
                let dpc = resize_plane_adjoint(dp.view(), gh, gw);
                let dzc = Zip::from(&dpc).and(&pc).map_collect(|&g, &p| g * p * (F::one() - p));
                let (dgrid, dw, db) = head::backward(&grid, &self.head, dzc.view());
                (value, dgrid, dw, db)
            }
        };
        if !value.is_finite() {
            return Err(Error::Training(format!("non-finite loss {value:?}")));
        }
        debug_assert_eq!(dgrid.dim(), (gh, gw, d));

        let mut needs = self.adapters.grad_needs();
        needs.full = self.train_encoder;
        let mut enc_grad = self.train_encoder.then(|| VitWeights::zeros(&self.encoder.config));
        let mut proj = vec![[None, None, None, None]; self.encoder.blocks.len()];
        if needs_any(&needs) {
            vit::backward(&self.encoder, &projections, &cache, &dgrid, &needs, enc_grad.as_mut(), &mut proj)?;
        }
        let adapters = if self.adapters.is_empty() {
            self.adapters.zeros_like()
        } else {
            self.adapters.backward(&self.encoder, &proj)?
        };
        let mut head_grad = ProbeHead::zeros(d);
        head_grad.w = dw;
        head_grad.b.fill(db);
        Ok((
            value,
            ModelGrads {
                head: head_grad,
                adapters,
                encoder: enc_grad,
            },
        ))
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            encoder: self.encoder.config.clone(),
            adapters: self.adapters.config.clone(),
            order: self.order,
            threshold: self.head.threshold,
            train_encoder: self.train_encoder,
        }
    }

    /// All tensors (encoder under `encoder.`) plus settings in metadata `model`.
    pub fn to_checkpoint(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        self.encoder.visit(&mut |name, t| {
            let data: Vec<F> = t.iter().copied().collect();
            c.insert(format!("encoder.{name}"), t.shape(), &data).expect("unique names");
        });
        c.extend(self.adapters.to_container()?)?;
        c.extend(self.head.to_container()?)?;
        c.set_metadata("model", serde_json::to_string(&self.meta())?);
        Ok(c)
    }

    pub fn from_checkpoint(c: &TensorContainer) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(
            c.metadata()
                .get("model")
                .ok_or_else(|| Error::TensorNotFound("checkpoint metadata `model`".into()))?,
        )?;
        let encoder = VitWeights::from_container(&meta.encoder, &c.subset("encoder."))?;
        let mut m = SegModel::new(encoder, &meta.adapters, 0)?;
        m.adapters.load_from(c)?;
        m.head.load_from(c)?;
        m.head.threshold = meta.threshold;
        m.order = meta.order;
        m.train_encoder = meta.train_encoder;
        Ok(m)
    }

    pub fn zero_grads(&self) -> ModelGrads<F> {
        ModelGrads {
            head: ProbeHead::zeros(self.head.w.len()),
            adapters: self.adapters.zeros_like(),
            encoder: self.train_encoder.then(|| VitWeights::zeros(&self.encoder.config)),
        }
    }

    /// Adapter method actually attached.
    pub fn method(&self) -> AdapterMethod {
        self.adapters.config.method
    }
}

fn needs_any(n: &EncoderGradNeeds) -> bool {
    n.full || n.proj.iter().flatten().any(|&b| b)
}

/// Trainable tensors only: head, adapters, then the encoder when trained.
impl<F: Real> Params<F> for SegModel<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        self.head.visit(f);
        self.adapters.visit(f);
        if self.train_encoder {
            self.encoder.visit(&mut |n, t| f(&format!("encoder.{n}"), t));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        self.head.visit_mut(f);
        self.adapters.visit_mut(f);
        if self.train_encoder {
            self.encoder.visit_mut(&mut |n, t| f(&format!("encoder.{n}"), t));
        }
    }
}

impl<F: Real> Params<F> for ModelGrads<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        self.head.visit(f);
        self.adapters.visit(f);
        if let Some(e) = &self.encoder {
            e.visit(&mut |n, t| f(&format!("encoder.{n}"), t));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        self.head.visit_mut(f);
        self.adapters.visit_mut(f);
        if let Some(e) = &mut self.encoder {
            e.visit_mut(&mut |n, t| f(&format!("encoder.{n}"), t));
        }
    }
}

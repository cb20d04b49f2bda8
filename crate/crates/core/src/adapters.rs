//! Parameter-efficient adapters on the attention projections.
//!
//! Every method keeps the base matrix `W` (`in x out`) frozen and learns a
//! replacement `W'` with `s = alpha / r`:
//!
//! * LoRA: `W' = W + s * A B` with `A: in x r` and `B: r x out`.
//! * DoRA: `V = W + s * A B`, then `W'[:, j] = m[j] * V[:, j] / |V[:, j]|`.
//! * LoHa: `W' = W + s * (A1 B1) ⊙ (A2 B2)`.
//! * LoKr: `W' = W + s * kron(W1, A2 B2)`, with `in` and `out` each split
//!   into a near-square factor pair; the second factor is low-rank unless
//!   `r` is at least half of its larger side, in which case it is dense.
//!
//! Fresh adapters have an exactly zero delta: `B` (LoRA, DoRA), `B2` (LoHa) and
//! `W1` (LoKr) start at zero, and DoRA's `m` starts at the column norms of `W`.

use std::borrow::Cow;
use std::fmt;

use ndarray::{concatenate, s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::vit::{plain_projections, LayerProjections, Projection};
use crate::encoder::{EncoderConfig, EncoderGradNeeds, FeatureGrid, VitWeights};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::real::Real;

/// Guard for DoRA column norms.
pub const DORA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMethod {
    None,
    Lora,
    Dora,
    Loha,
    Lokr,
}

impl fmt::Display for AdapterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AdapterMethod::None => "none",
            AdapterMethod::Lora => "lora",
            AdapterMethod::Dora => "dora",
            AdapterMethod::Loha => "loha",
            AdapterMethod::Lokr => "lokr",
        };
        f.write_str(s)
    }
}

/// Adapted matrix. `Qkv` treats q, k and v as one fused `D x 3D` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Q,
    K,
    V,
    O,
    Qkv,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
            Target::O => "o",
            Target::Qkv => "qkv",
        }
    }

    /// Projection indices (q = 0, k = 1, v = 2, o = 3) covered by this target.
    pub fn projections(self) -> &'static [usize] {
        match self {
            Target::Q => &[0],
            Target::K => &[1],
            Target::V => &[2],
            Target::O => &[3],
            Target::Qkv => &[0, 1, 2],
        }
    }

    pub fn shape(self, d: usize) -> (usize, usize) {
        match self {
            Target::Qkv => (d, 3 * d),
            _ => (d, d),
        }
    }
}

/// Missing fields in a serialised config take the few-shot LoRA values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub method: AdapterMethod,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<Target>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::few_shot(AdapterMethod::Lora)
    }
}

impl AdapterConfig {
    pub fn none() -> Self {
        AdapterConfig {
            method: AdapterMethod::None,
            rank: 4,
            alpha: 8.0,
            dropout: 0.0,
            targets: vec![],
        }
    }

    /// Preset for k <= 10 training samples: r = 4, alpha = 8, dropout 0.2.
    pub fn few_shot(method: AdapterMethod) -> Self {
        AdapterConfig {
            method,
            rank: 4,
            alpha: 8.0,
            dropout: 0.2,
            targets: vec![Target::Q, Target::K, Target::V],
        }
    }

    /// Preset for larger training sets: r = 8, alpha = 16, dropout 0.1.
    pub fn large_data(method: AdapterMethod) -> Self {
        AdapterConfig {
            method,
            rank: 8,
            alpha: 16.0,
            dropout: 0.1,
            targets: vec![Target::Q, Target::K, Target::V],
        }
    }

    pub fn for_shots(method: AdapterMethod, k: usize) -> Self {
        if k <= 10 {
            Self::few_shot(method)
        } else {
            Self::large_data(method)
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if self.method == AdapterMethod::None {
            return Ok(());
        }
        if self.rank == 0 {
            return Err(Error::Config("adapter rank must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("adapter dropout {} not in [0, 1)", self.dropout)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("adapter has no target matrices".into()));
        }
        let mut covered = [false; 4];
        for t in &self.targets {
            for &p in t.projections() {
                if covered[p] {
                    return Err(Error::Config(format!("projection adapted twice (target `{}`)", t.name())));
                }
                covered[p] = true;
            }
            let (i, o) = t.shape(enc.embed_dim);
            if self.rank >= i.min(o) {
                return Err(Error::Config(format!(
                    "rank {} must be smaller than the {i}x{o} `{}` matrix",
                    self.rank,
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

/// Near-square factorisation `n = a * b` with `a <= b`.
pub fn factorization(n: usize) -> (usize, usize) {
    let (mut m, mut k) = (1, n);
    while m < k {
        let mut next = m + 1;
        while n % next != 0 {
            next += 1;
        }
        let other = n / next;
        if next + other > m + k {
            break;
        }
        m = next;
        k = other;
    }
    if m > k {
        (k, m)
    } else {
        (m, k)
    }
}

/// LoKr factor shapes for an `in x out` matrix: `W1: in_a x out_a`, second
/// factor `in_b x out_b`, and whether the second factor is dense.
pub fn lokr_shapes(rows: usize, cols: usize, rank: usize) -> ((usize, usize), (usize, usize), bool) {
    let (ia, ib) = factorization(rows);
    let (oa, ob) = factorization(cols);
    let dense = 2 * rank >= ib.max(ob);
    ((ia, oa), (ib, ob), dense)
}

/// Trainable scalars for one adapted `rows x cols` matrix.
pub fn matrix_param_count(method: AdapterMethod, rows: usize, cols: usize, rank: usize) -> usize {
    match method {
        AdapterMethod::None => 0,
        AdapterMethod::Lora => rank * (rows + cols),
        AdapterMethod::Dora => rank * (rows + cols) + cols,
        AdapterMethod::Loha => 2 * rank * (rows + cols),
        AdapterMethod::Lokr => {
            let ((ia, oa), (ib, ob), dense) = lokr_shapes(rows, cols, rank);
            ia * oa + if dense { ib * ob } else { rank * (ib + ob) }
        }
    }
}

/// Exact number of trainable parameters: adapters plus, optionally, the
/// linear probe (`D` weights and one bias).
pub fn count_trainable(config: &AdapterConfig, encoder: &EncoderConfig, include_head: bool) -> usize {
    let per_layer: usize = if config.method == AdapterMethod::None {
        0
    } else {
        config
            .targets
            .iter()
            .map(|t| {
                let (i, o) = t.shape(encoder.embed_dim);
                matrix_param_count(config.method, i, o, config.rank)
            })
            .sum()
    };
    per_layer * encoder.depth + if include_head { encoder.embed_dim + 1 } else { 0 }
}

/// Trainable-parameter counts reported for a ViT-L/16 backbone, rounded to
/// thousands (probe head, LoRA, LoKr, LoHa, DoRA).
pub const REFERENCE_COUNTS: [(AdapterMethod, usize); 5] = [
    (AdapterMethod::None, 1_000),
    (AdapterMethod::Lora, 590_000),
    (AdapterMethod::Lokr, 77_000),
    (AdapterMethod::Loha, 1_180_000),
    (AdapterMethod::Dora, 689_000),
];

/// Achieved count against the reference count of the same method.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountingRow {
    pub method: AdapterMethod,
    pub targets: Vec<Target>,
    pub adapters_only: usize,
    pub with_head: usize,
    pub reference: usize,
    /// `with_head - reference`, signed.
    pub delta: i64,
    /// True when neither count rounds to the reference at 1k resolution.
    pub unexplained: bool,
}

pub fn accounting_row(config: &AdapterConfig, encoder: &EncoderConfig) -> AccountingRow {
    let adapters_only = count_trainable(config, encoder, false);
    let with_head = count_trainable(config, encoder, true);
    let reference = REFERENCE_COUNTS
        .iter()
        .find(|(m, _)| *m == config.method)
        .map(|&(_, c)| c)
        .unwrap_or(0);
    let rounds = |n: usize| ((n as f64 / 1000.0).round() as usize) * 1000 == reference;
    AccountingRow {
        method: config.method,
        targets: config.targets.clone(),
        adapters_only,
        with_head,
        reference,
        delta: with_head as i64 - reference as i64,
        unexplained: !(rounds(adapters_only) || rounds(with_head)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LokrSecond<F> {
    LowRank { a: Array2<F>, b: Array2<F> },
    Dense(Array2<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Factors<F> {
    Lora { a: Array2<F>, b: Array2<F> },
    Dora { a: Array2<F>, b: Array2<F>, m: Array1<F> },
    Loha { a1: Array2<F>, b1: Array2<F>, a2: Array2<F>, b2: Array2<F> },
    Lokr { w1: Array2<F>, w2: LokrSecond<F> },
}

/// Adapter factors for one target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixAdapter<F> {
    pub factors: Factors<F>,
    pub scale: F,
}

fn kaiming<F: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || F::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// Column norms, floored at [`DORA_EPS`].
fn column_norms<F: Real>(v: &Array2<F>) -> Array1<F> {
    let eps = F::from_f64_lossy(DORA_EPS);
    v.map_axis(Axis(0), |col| col.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps))
}

fn kron<F: Real>(a: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let v = a[[i, j]];
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&b.mapv(|x| x * v));
        }
    }
    out
}

impl<F: Real> LokrSecond<F> {
    fn matrix(&self) -> Cow<'_, Array2<F>> {
        match self {
            LokrSecond::LowRank { a, b } => Cow::Owned(a.dot(b)),
            LokrSecond::Dense(w) => Cow::Borrowed(w),
        }
    }
}

impl<F: Real> MatrixAdapter<F> {
    pub fn new(method: AdapterMethod, base: &Array2<F>, rank: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (rows, cols) = base.dim();
        let factors = match method {
            AdapterMethod::None => return Err(Error::Config("cannot build an adapter for method `none`".into())),
            AdapterMethod::Lora => Factors::Lora {
                a: kaiming(rows, rank, rng),
                b: Array2::zeros((rank, cols)),
            },
            AdapterMethod::Dora => Factors::Dora {
                a: kaiming(rows, rank, rng),
                b: Array2::zeros((rank, cols)),
                m: column_norms(base),
            },
            AdapterMethod::Loha => Factors::Loha {
                a1: kaiming(rows, rank, rng),
                b1: kaiming(rank, cols, rng),
                a2: kaiming(rows, rank, rng),
                b2: Array2::zeros((rank, cols)),
            },
            AdapterMethod::Lokr => {
                let ((ia, oa), (ib, ob), dense) = lokr_shapes(rows, cols, rank);
                let w2 = if dense {
                    LokrSecond::Dense(kaiming(ib, ob, rng))
                } else {
                    LokrSecond::LowRank {
                        a: kaiming(ib, rank, rng),
                        b: kaiming(rank, ob, rng),
                    }
                };
                Factors::Lokr {
                    w1: Array2::zeros((ia, oa)),
                    w2,
                }
            }
        };
        Ok(MatrixAdapter {
            factors,
            scale: F::from_f64_lossy(scale),
        })
    }

    pub fn method(&self) -> AdapterMethod {
        match self.factors {
            Factors::Lora { .. } => AdapterMethod::Lora,
            Factors::Dora { .. } => AdapterMethod::Dora,
            Factors::Loha { .. } => AdapterMethod::Loha,
            Factors::Lokr { .. } => AdapterMethod::Lokr,
        }
    }

    /// Additive delta for LoRA, LoHa and LoKr (`None` for DoRA, which rescales).
    pub fn delta(&self) -> Option<Array2<F>> {
        let s = self.scale;
        match &self.factors {
            Factors::Lora { a, b } => Some(a.dot(b) * s),
            Factors::Loha { a1, b1, a2, b2 } => Some(a1.dot(b1) * &a2.dot(b2) * s),
            Factors::Lokr { w1, w2 } => Some(kron(w1, &w2.matrix()) * s),
            Factors::Dora { .. } => None,
        }
    }

    pub fn effective_weight(&self, base: &Array2<F>) -> Result<Array2<F>> {
        match &self.factors {
            Factors::Dora { a, b, m } => {
                let v = base + &(a.dot(b) * self.scale);
                let norms = column_norms(&v);
                if m.len() != v.ncols() {
                    return Err(Error::Dimension("DoRA magnitude length mismatch".into()));
                }
                let ratio = m / &norms;
                Ok(v * &ratio)
            }
            _ => {
                let d = self.delta().unwrap();
                if d.dim() != base.dim() {
                    return Err(Error::Dimension(format!(
                        "adapter delta {:?} does not match base {:?}",
                        d.dim(),
                        base.dim()
                    )));
                }
                Ok(base + &d)
            }
        }
    }

    /// Gradients of the factors given `g = dL/dW'`.
    pub fn backward(&self, base: &Array2<F>, g: &Array2<F>) -> MatrixAdapter<F> {
        let s = self.scale;
        let factors = match &self.factors {
            Factors::Lora { a, b } => {
                let gs = g * s;
                Factors::Lora {
                    a: gs.dot(&b.t()),
                    b: a.t().dot(&gs),
                }
            }
            Factors::Dora { a, b, m } => {
                let v = base + &(a.dot(b) * s);
                let eps = F::from_f64_lossy(DORA_EPS);
                let raw = v.map_axis(Axis(0), |c| c.iter().map(|&x| x * x).sum::<F>().sqrt());
                let norms = raw.mapv(|n| n.max(eps));
                let gv_col = (g * &v).sum_axis(Axis(0));
                let dm = &gv_col / &norms;
                let mut dv = g * &(m / &norms);
                for j in 0..v.ncols() {
                    if raw[j] > eps {
                        let coef = m[j] * gv_col[j] / (norms[j] * norms[j] * norms[j]);
                        let vj = v.column(j).to_owned();
                        dv.column_mut(j).scaled_add(-coef, &vj);
                    }
                }
                let dvs = dv * s;
                Factors::Dora {
                    a: dvs.dot(&b.t()),
                    b: a.t().dot(&dvs),
                    m: dm,
                }
            }
            Factors::Loha { a1, b1, a2, b2 } => {
                let p1 = a1.dot(b1);
                let p2 = a2.dot(b2);
                let dp1 = g * &p2 * s;
                let dp2 = g * &p1 * s;
                Factors::Loha {
                    a1: dp1.dot(&b1.t()),
                    b1: a1.t().dot(&dp1),
                    a2: dp2.dot(&b2.t()),
                    b2: a2.t().dot(&dp2),
                }
            }
            Factors::Lokr { w1, w2 } => {
                let w2m = w2.matrix();
                let (ar, ac) = w1.dim();
                let (br, bc) = w2m.dim();
                let mut dw1 = Array2::zeros((ar, ac));
                let mut dw2 = Array2::<F>::zeros((br, bc));
                for i in 0..ar {
                    for j in 0..ac {
                        let blk = g.slice(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
                        dw1[[i, j]] = (&blk * w2m.as_ref()).sum() * s;
                        dw2.scaled_add(w1[[i, j]] * s, &blk);
                    }
                }
                let w2g = match w2 {
                    LokrSecond::LowRank { a, b } => LokrSecond::LowRank {
                        a: dw2.dot(&b.t()),
                        b: a.t().dot(&dw2),
                    },
                    LokrSecond::Dense(_) => LokrSecond::Dense(dw2),
                };
                Factors::Lokr { w1: dw1, w2: w2g }
            }
        };
        MatrixAdapter { factors, scale: s }
    }

    fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        let mut emit = |n: &str, t: ArrayViewD<'_, F>| f(&format!("{prefix}.{n}"), t);
        match &self.factors {
            Factors::Lora { a, b } => {
                emit("A", a.view().into_dyn());
                emit("B", b.view().into_dyn());
            }
            Factors::Dora { a, b, m } => {
                emit("A", a.view().into_dyn());
                emit("B", b.view().into_dyn());
                emit("m", m.view().into_dyn());
            }
            Factors::Loha { a1, b1, a2, b2 } => {
                emit("A1", a1.view().into_dyn());
                emit("B1", b1.view().into_dyn());
                emit("A2", a2.view().into_dyn());
                emit("B2", b2.view().into_dyn());
            }
            Factors::Lokr { w1, w2 } => {
                emit("W1", w1.view().into_dyn());
                match w2 {
                    LokrSecond::LowRank { a, b } => {
                        emit("A2", a.view().into_dyn());
                        emit("B2", b.view().into_dyn());
                    }
                    LokrSecond::Dense(w) => emit("W2", w.view().into_dyn()),
                }
            }
        }
    }

    fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        let mut emit = |n: &str, t: ArrayViewMutD<'_, F>| f(&format!("{prefix}.{n}"), t);
        match &mut self.factors {
            Factors::Lora { a, b } => {
                emit("A", a.view_mut().into_dyn());
                emit("B", b.view_mut().into_dyn());
            }
            Factors::Dora { a, b, m } => {
                emit("A", a.view_mut().into_dyn());
                emit("B", b.view_mut().into_dyn());
                emit("m", m.view_mut().into_dyn());
            }
            Factors::Loha { a1, b1, a2, b2 } => {
                emit("A1", a1.view_mut().into_dyn());
                emit("B1", b1.view_mut().into_dyn());
                emit("A2", a2.view_mut().into_dyn());
                emit("B2", b2.view_mut().into_dyn());
            }
            Factors::Lokr { w1, w2 } => {
                emit("W1", w1.view_mut().into_dyn());
                match w2 {
                    LokrSecond::LowRank { a, b } => {
                        emit("A2", a.view_mut().into_dyn());
                        emit("B2", b.view_mut().into_dyn());
                    }
                    LokrSecond::Dense(w) => emit("W2", w.view_mut().into_dyn()),
                }
            }
        }
    }
}

/// The frozen base matrix for a target (q, k, v fused side by side for `Qkv`).
pub fn target_base<F: Real>(weights: &VitWeights<F>, layer: usize, target: Target) -> Array2<F> {
    let b = &weights.blocks[layer];
    match target {
        Target::Q => b.q.weight.clone(),
        Target::K => b.k.weight.clone(),
        Target::V => b.v.weight.clone(),
        Target::O => b.o.weight.clone(),
        Target::Qkv => concatenate(Axis(1), &[b.q.weight.view(), b.k.weight.view(), b.v.weight.view()]).unwrap(),
    }
}

/// Adapters for every layer of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet<F> {
    pub config: AdapterConfig,
    /// `layers[l]` holds `(target, adapter)` pairs in config order.
    pub layers: Vec<Vec<(Target, MatrixAdapter<F>)>>,
}

impl<F: Real> AdapterSet<F> {
    /// Build fresh (zero-delta) adapters for `weights`.
    pub fn attach(config: &AdapterConfig, weights: &VitWeights<F>, seed: u64) -> Result<Self> {
        config.validate(&weights.config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = if config.method == AdapterMethod::None {
            vec![Vec::new(); weights.blocks.len()]
        } else {
            (0..weights.blocks.len())
                .map(|l| {
                    config
                        .targets
                        .iter()
                        .map(|&t| {
                            let base = target_base(weights, l, t);
                            MatrixAdapter::new(config.method, &base, config.rank, config.scale(), &mut rng).map(|a| (t, a))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(AdapterSet {
            config: config.clone(),
            layers,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    /// Which projection gradients the encoder backward pass must produce.
    pub fn grad_needs(&self) -> EncoderGradNeeds {
        let mut needs = EncoderGradNeeds::none(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, _) in layer {
                for &p in t.projections() {
                    needs.proj[l][p] = true;
                }
            }
        }
        needs
    }

    /// Effective projections for a forward pass. With `training` and LoRA
    /// dropout, the delta is routed through the dropout branch instead of
    /// being folded into the weight.
    pub fn projections<'w>(&self, weights: &'w VitWeights<F>, training: bool) -> Result<Vec<LayerProjections<'w, F>>> {
        if self.layers.len() != weights.blocks.len() {
            return Err(Error::Dimension(format!(
                "adapters cover {} layers, encoder has {}",
                self.layers.len(),
                weights.blocks.len()
            )));
        }
        let mut out = plain_projections(weights);
        let d = weights.config.embed_dim;
        let drop = self.config.dropout;
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, ad) in layer {
                let base = target_base(weights, l, *t);
                let use_dropout = training && drop > 0.0 && ad.method() == AdapterMethod::Lora;
                let full = if use_dropout {
                    ad.delta().unwrap()
                } else {
                    ad.effective_weight(&base)?
                };
                for (k, &p) in t.projections().iter().enumerate() {
                    let piece = if *t == Target::Qkv {
                        full.slice(s![.., k * d..(k + 1) * d]).to_owned()
                    } else {
                        full.clone()
                    };
                    if use_dropout {
                        out[l][p].dropout_delta = Some((piece, drop));
                    } else {
                        out[l][p] = Projection {
                            weight: Cow::Owned(piece),
                            bias: out[l][p].bias,
                            dropout_delta: None,
                        };
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adapter gradients from per-projection effective-weight gradients.
    pub fn backward(&self, weights: &VitWeights<F>, proj_grads: &[[Option<Array2<F>>; 4]]) -> Result<AdapterSet<F>> {
        let d = weights.config.embed_dim;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                layer
                    .iter()
                    .map(|(t, ad)| {
                        let (rows, cols) = t.shape(d);
                        let mut g = Array2::zeros((rows, cols));
                        for (k, &p) in t.projections().iter().enumerate() {
                            if let Some(gp) = &proj_grads[l][p] {
                                let c0 = if *t == Target::Qkv { k * d } else { 0 };
                                g.slice_mut(s![.., c0..c0 + gp.ncols()]).assign(gp);
                            }
                        }
                        let base = target_base(weights, l, *t);
                        Ok((*t, ad.backward(&base, &g)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdapterSet {
            config: self.config.clone(),
            layers,
        })
    }

    /// Fold the adapters into a copy of the base weights.
    pub fn merge(&self, weights: &VitWeights<F>) -> Result<VitWeights<F>> {
        let mut merged = weights.clone();
        let d = weights.config.embed_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, ad) in layer {
                let w = ad.effective_weight(&target_base(weights, l, *t))?;
                for (k, &p) in t.projections().iter().enumerate() {
                    let piece = if *t == Target::Qkv {
                        w.slice(s![.., k * d..(k + 1) * d]).to_owned()
                    } else {
                        w.clone()
                    };
                    merged.blocks[l].projection_mut(p).weight = piece;
                }
            }
        }
        Ok(merged)
    }

    pub fn zeros_like(&self) -> AdapterSet<F> {
        let mut z = self.clone();
        z.visit_mut(&mut |_, mut t| t.fill(F::zero()));
        z
    }
}

impl<F: Real> Params<F> for AdapterSet<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, ad) in layer {
                ad.visit_named(&format!("adapter.{l}.{}", t.name()), f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (t, ad) in layer {
                ad.visit_named_mut(&format!("adapter.{l}.{}", t.name()), f);
            }
        }
    }
}

/// An encoder with adapters attached. The base weights are never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedEncoder<F> {
    pub base: VitWeights<F>,
    pub adapters: AdapterSet<F>,
}

impl<F: Real> AdaptedEncoder<F> {
    pub fn attach(config: &AdapterConfig, base: VitWeights<F>, seed: u64) -> Result<Self> {
        let adapters = AdapterSet::attach(config, &base, seed)?;
        Ok(AdaptedEncoder { base, adapters })
    }

    pub fn encode(&self, image: &ndarray::Array3<F>) -> Result<FeatureGrid<F>> {
        crate::encoder::encode(image, &self.base, Some(&self.adapters))
    }

    pub fn trainable_count(&self) -> usize {
        self.adapters.num_params()
    }

    /// Plain weights computing the same function; adapters are dropped.
    pub fn merge(&self) -> Result<VitWeights<F>> {
        self.adapters.merge(&self.base)
    }
}

//! CNN+MLP fusion network: a scalogram branch and a demographics branch
//! whose four-node outputs are concatenated into a regression or
//! classification head.

mod checkpoint;
pub mod layers;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{loss_cce, loss_mpe, one_hot, Classification, Regression, Task, TaskRegistry, CCE_CLIP, MPE_MIN_TRUE};
pub use model::{dropout_mask, BnSlot, ConvSlot, DenseSlot, ForwardCache, FusionModel, Mode, ParamLayout};
pub use train::{
    batch_plan, evaluate, predict, train, Adam, Dataset, DemographicNormalizer, EpochRecord, History, Prepared,
    Sample, Target, DEMO_GUARD,
};

use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Regression,
    Classification,
}

impl HeadKind {
    pub fn n_outputs(self) -> usize {
        match self {
            HeadKind::Regression => 1,
            HeadKind::Classification => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Regression => "regression",
            HeadKind::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(HeadKind::Regression),
            "classification" => Ok(HeadKind::Classification),
            other => Err(Error::Config(format!("unknown head {other:?}"))),
        }
    }
}

pub const DEMO_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub filters: Vec<usize>,
    pub cnn_dense1: usize,
    pub cnn_dense2: usize,
    pub mlp_widths: [usize; 2],
    pub dropout: f64,
    pub head: HeadKind,
    pub image_h: usize,
    pub image_w: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 keeps it constant.
    pub lr_decay_epochs: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    /// Momentum of the batchnorm running statistics.
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters: vec![8, 16, 32, 32, 32],
            cnn_dense1: 64,
            cnn_dense2: 4,
            mlp_widths: [16, 4],
            dropout: 0.3,
            head: HeadKind::Regression,
            image_h: 256,
            image_w: 256,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay_epochs: 0,
            lr_decay_factor: 0.1,
            epochs: 150,
            bn_momentum: 0.9,
            bn_eps: 1e-3,
            seed: 0,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "filters",
    "cnn_dense1",
    "cnn_dense2",
    "mlp_widths",
    "dropout",
    "head",
    "image_h",
    "image_w",
    "batch_size",
    "learning_rate",
    "lr_decay_epochs",
    "lr_decay_factor",
    "epochs",
    "bn_momentum",
    "bn_eps",
    "seed",
];

impl ModelConfig {
    pub fn with_head(head: HeadKind, image_size: usize) -> Self {
        Self {
            head,
            image_h: image_size,
            image_w: image_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.filters.is_empty() || self.filters.contains(&0) {
            return bad("filter counts must be positive");
        }
        if self.cnn_dense1 == 0 || self.cnn_dense2 == 0 || self.mlp_widths.contains(&0) {
            return bad("dense widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.image_h == 0 || self.image_w == 0 {
            return bad("image size must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1)");
        }
        if !(self.bn_eps > 0.0) {
            return bad("bn_eps must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv = KvMap::default();
        kv.insert("filters", join(&self.filters));
        kv.insert("cnn_dense1", self.cnn_dense1);
        kv.insert("cnn_dense2", self.cnn_dense2);
        kv.insert("mlp_widths", join(&self.mlp_widths));
        kv.insert("dropout", self.dropout);
        kv.insert("head", self.head.name());
        kv.insert("image_h", self.image_h);
        kv.insert("image_w", self.image_w);
        kv.insert("batch_size", self.batch_size);
        kv.insert("learning_rate", self.learning_rate);
        kv.insert("lr_decay_epochs", self.lr_decay_epochs);
        kv.insert("lr_decay_factor", self.lr_decay_factor);
        kv.insert("epochs", self.epochs);
        kv.insert("bn_momentum", self.bn_momentum);
        kv.insert("bn_eps", self.bn_eps);
        kv.insert("seed", self.seed);
        kv
    }

    /// Reads the model keys of `kv`, on top of `self`; other keys are ignored.
    pub fn update_from_kv(mut self, kv: &KvMap) -> Result<Self> {
        if let Some(f) = kv.get_list("filters")? {
            self.filters = f;
        }
        self.cnn_dense1 = kv.get_or("cnn_dense1", self.cnn_dense1)?;
        self.cnn_dense2 = kv.get_or("cnn_dense2", self.cnn_dense2)?;
        if let Some(m) = kv.get_list::<usize>("mlp_widths")? {
            self.mlp_widths = m
                .try_into()
                .map_err(|_| Error::Config("mlp_widths needs exactly 2 values".into()))?;
        }
        self.dropout = kv.get_or("dropout", self.dropout)?;
        if let Some(h) = kv.get_str("head") {
            self.head = HeadKind::parse(h)?;
        }
        self.image_h = kv.get_or("image_h", self.image_h)?;
        self.image_w = kv.get_or("image_w", self.image_w)?;
        self.batch_size = kv.get_or("batch_size", self.batch_size)?;
        self.learning_rate = kv.get_or("learning_rate", self.learning_rate)?;
        self.lr_decay_epochs = kv.get_or("lr_decay_epochs", self.lr_decay_epochs)?;
        self.lr_decay_factor = kv.get_or("lr_decay_factor", self.lr_decay_factor)?;
        self.epochs = kv.get_or("epochs", self.epochs)?;
        self.bn_momentum = kv.get_or("bn_momentum", self.bn_momentum)?;
        self.bn_eps = kv.get_or("bn_eps", self.bn_eps)?;
        self.seed = kv.get_or("seed", self.seed)?;
        self.validate()?;
        Ok(self)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(MODEL_KEYS)?;
        Self::default().update_from_kv(kv)
    }

    /// Spatial size of the feature map entering the dense layers.
    pub fn final_spatial(&self) -> (usize, usize) {
        let mut hw = (self.image_h, self.image_w);
        for _ in &self.filters {
            hw = (layers::pooled_len(hw.0), layers::pooled_len(hw.1));
        }
        hw
    }

    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.final_spatial();
        h * w * self.filters.last().copied().unwrap_or(0)
    }
}

//! The learnable model: hyperparameters, parameter tensors, gradient
//! buffers and the checkpoint file format.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior_store::{checksum, verify_checksum, ByteReader};
use crate::domain::TimeDeltaBuckets;
use crate::error::{Result, SimError};
use crate::nn::{EmbeddingTable, Matrix, Mlp};

pub const CKPT_MAGIC: &[u8; 8] = b"SIMCKPT1";

/// Which general search unit feeds the attention stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Hard,
    Soft,
}

impl FromStr for SearchMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(SimError::Config(format!("unknown search mode {other:?}"))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
        })
    }
}

/// How the long-term history is summarised for the CTR head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongTermEncoder {
    /// Multi-head target attention over the searched sub-sequence.
    Attention,
    /// Mean of all long-term behavior embeddings; no search. Baseline only.
    AvgPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: SearchMode,
    pub encoder: LongTermEncoder,
    pub use_time_embedding: bool,
    pub embedding_dim: usize,
    pub heads: usize,
    pub hidden: Vec<usize>,
    pub n_items: usize,
    pub n_categories: usize,
    pub time_buckets: TimeDeltaBuckets,
    /// K: length of the searched sub-sequence.
    pub sbs_len: usize,
    pub short_len: usize,
    /// Long sequences are sampled down to this length for the auxiliary task.
    pub aux_sample_len: usize,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub embedding_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Hard,
            encoder: LongTermEncoder::Attention,
            use_time_embedding: true,
            embedding_dim: 4,
            heads: 4,
            hidden: vec![200, 80],
            n_items: 0,
            n_categories: 0,
            time_buckets: TimeDeltaBuckets::default(),
            sbs_len: 200,
            short_len: 10,
            aux_sample_len: 200,
            alpha: 0.0,
            beta: 1.0,
            learning_rate: 0.001,
            lr_decay: 0.9,
            batch_size: 128,
            embedding_init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn hard(n_items: usize, n_categories: usize) -> Self {
        Self {
            n_items,
            n_categories,
            ..Self::default()
        }
    }

    pub fn soft(n_items: usize, n_categories: usize) -> Self {
        Self {
            mode: SearchMode::Soft,
            alpha: 1.0,
            beta: 1.0,
            ..Self::hard(n_items, n_categories)
        }
    }

    /// The mean-pooling baseline that skips search entirely.
    pub fn avg_pool(n_items: usize, n_categories: usize) -> Self {
        Self {
            encoder: LongTermEncoder::AvgPool,
            use_time_embedding: false,
            ..Self::hard(n_items, n_categories)
        }
    }

    /// Switches between the two search modes, keeping the loss weights consistent.
    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.mode = mode;
        self.alpha = match mode {
            SearchMode::Hard => 0.0,
            SearchMode::Soft => 1.0,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SimError::Config(m.to_string()));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.heads == 0 {
            return fail("heads must be at least 1");
        }
        if self.sbs_len == 0 {
            return fail("sbs_len must be positive");
        }
        if self.aux_sample_len == 0 {
            return fail("aux_sample_len must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.mode == SearchMode::Hard && self.alpha != 0.0 {
            return fail("hard search is non-parametric: alpha must be 0");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail("loss weights must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("learning_rate must be positive and lr_decay in (0, 1]");
        }
        if !(self.embedding_init_std >= 0.0) {
            return fail("embedding_init_std must be non-negative");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden layer widths must be positive");
        }
        Ok(())
    }

    /// d: embedding width of items and categories.
    pub fn d(&self) -> usize {
        self.embedding_dim
    }

    /// Width of a behavior representation z = concat(behavior, time).
    pub fn d_z(&self) -> usize {
        2 * self.embedding_dim
    }

    /// Width of the candidate representation concat(item, category).
    pub fn candidate_dim(&self) -> usize {
        2 * self.embedding_dim
    }

    pub fn long_term_dim(&self) -> usize {
        match self.encoder {
            LongTermEncoder::Attention => self.heads * self.d_z(),
            LongTermEncoder::AvgPool => self.d(),
        }
    }

    pub fn esu_input_dim(&self) -> usize {
        self.long_term_dim() + self.d() + self.candidate_dim()
    }

    fn mlp_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(2);
        sizes
    }
}

/// General search unit parameters: the two bilinear projections and the
/// auxiliary CTR head.
#[derive(Clone, Debug, PartialEq)]
pub struct GsuParams {
    pub w_b: Matrix,
    pub w_a: Matrix,
    pub aux_mlp: Mlp,
}

/// Exact search unit parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EsuParams {
    /// Per-head behavior projections, `d_z × d_z`.
    pub w_b: Vec<Matrix>,
    /// Per-head candidate projections, `d_z × 2d`.
    pub w_a: Vec<Matrix>,
    /// Stands in for the long-term representation when there is no history.
    pub no_history: Vec<f64>,
    /// Stands in for the pooled short-term vector when it is empty.
    pub no_short: Vec<f64>,
    pub mlp: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub items: EmbeddingTable,
    pub categories: EmbeddingTable,
    pub time: EmbeddingTable,
    pub gsu: GsuParams,
    pub esu: EsuParams,
}

/// Index of each embedding table in [`Params::tensors`] order.
pub const ITEM_TENSOR: usize = 0;
pub const CATEGORY_TENSOR: usize = 1;
pub const TIME_TENSOR: usize = 2;

impl Params {
    fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d();
        let d_z = cfg.d_z();
        let std = cfg.embedding_init_std;
        let items = EmbeddingTable::new(&mut rng, cfg.n_items, d, std);
        let categories = EmbeddingTable::new(&mut rng, cfg.n_categories, d, std);
        let time = EmbeddingTable::new(&mut rng, cfg.time_buckets.len(), d, std);
        let gsu = GsuParams {
            // identity start: relevance begins as the plain inner product
            w_b: Matrix::identity(d),
            w_a: Matrix::identity(d),
            aux_mlp: Mlp::new(&mut rng, &cfg.mlp_sizes(2 * d)),
        };
        let w_b = (0..cfg.heads)
            .map(|_| Matrix::random(&mut rng, d_z, d_z, 1.0 / (d_z as f64).sqrt()))
            .collect();
        let w_a = (0..cfg.heads)
            .map(|_| Matrix::random(&mut rng, d_z, cfg.candidate_dim(), 1.0 / (cfg.candidate_dim() as f64).sqrt()))
            .collect();
        let no_history = EmbeddingTable::new(&mut rng, 0, cfg.long_term_dim().min(d_z), std).row(0).to_vec();
        let no_short = EmbeddingTable::new(&mut rng, 0, d, std).row(0).to_vec();
        let esu = EsuParams {
            w_b,
            w_a,
            no_history,
            no_short,
            mlp: Mlp::new(&mut rng, &cfg.mlp_sizes(cfg.esu_input_dim())),
        };
        Self {
            items,
            categories,
            time,
            gsu,
            esu,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            items: self.items.zeros_like(),
            categories: self.categories.zeros_like(),
            time: self.time.zeros_like(),
            gsu: GsuParams {
                w_b: Matrix::zeros(self.gsu.w_b.rows(), self.gsu.w_b.cols()),
                w_a: Matrix::zeros(self.gsu.w_a.rows(), self.gsu.w_a.cols()),
                aux_mlp: self.gsu.aux_mlp.zeros_like(),
            },
            esu: EsuParams {
                w_b: self.esu.w_b.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
                w_a: self.esu.w_a.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
                no_history: vec![0.0; self.esu.no_history.len()],
                no_short: vec![0.0; self.esu.no_short.len()],
                mlp: self.esu.mlp.zeros_like(),
            },
        }
    }

    /// Stable tensor names, parallel to [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec![
            "emb.items".to_string(),
            "emb.categories".to_string(),
            "emb.time".to_string(),
            "gsu.w_b".to_string(),
            "gsu.w_a".to_string(),
        ];
        for i in 0..self.gsu.aux_mlp.layers.len() {
            names.push(format!("gsu.mlp.{i}.weight"));
            names.push(format!("gsu.mlp.{i}.bias"));
        }
        for h in 0..self.esu.w_b.len() {
            names.push(format!("esu.head{h}.w_b"));
        }
        for h in 0..self.esu.w_a.len() {
            names.push(format!("esu.head{h}.w_a"));
        }
        names.push("esu.no_history".to_string());
        names.push("esu.no_short".to_string());
        for i in 0..self.esu.mlp.layers.len() {
            names.push(format!("esu.mlp.{i}.weight"));
            names.push(format!("esu.mlp.{i}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = vec![
            self.items.data(),
            self.categories.data(),
            self.time.data(),
            self.gsu.w_b.data(),
            self.gsu.w_a.data(),
        ];
        t.extend(self.gsu.aux_mlp.tensors());
        t.extend(self.esu.w_b.iter().map(Matrix::data));
        t.extend(self.esu.w_a.iter().map(Matrix::data));
        t.push(&self.esu.no_history);
        t.push(&self.esu.no_short);
        t.extend(self.esu.mlp.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![
            self.items.data_mut(),
            self.categories.data_mut(),
            self.time.data_mut(),
            self.gsu.w_b.data_mut(),
            self.gsu.w_a.data_mut(),
        ];
        t.extend(self.gsu.aux_mlp.tensors_mut());
        t.extend(self.esu.w_b.iter_mut().map(Matrix::data_mut));
        t.extend(self.esu.w_a.iter_mut().map(Matrix::data_mut));
        t.push(&mut self.esu.no_history);
        t.push(&mut self.esu.no_short);
        t.extend(self.esu.mlp.tensors_mut());
        t
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl SimModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Checkpoint layout: magic, length-prefixed JSON hyperparameter block,
    /// tensor count, then per tensor its name, element count and
    /// little-endian `f32` values, followed by a 64-bit checksum.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        let hyper = serde_json::to_vec(&self.config).expect("config serializes");
        buf.extend_from_slice(&(hyper.len() as u32).to_le_bytes());
        buf.extend_from_slice(&hyper);
        let names = self.params.tensor_names();
        let tensors = self.params.tensors();
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in names.iter().zip(&tensors) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for &x in t.iter() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let sum = checksum(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= CKPT_MAGIC.len() && &bytes[..CKPT_MAGIC.len()] != CKPT_MAGIC {
            return Err(SimError::BadMagic { expected: "SIMCKPT1" });
        }
        let body = verify_checksum(bytes, CKPT_MAGIC.len())?;
        let mut r = ByteReader::new(&body[CKPT_MAGIC.len()..]);
        let hyper_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(hyper_len)?)
            .map_err(|e| SimError::Corrupt(format!("hyperparameter block: {e}")))?;
        // shapes come from the config; the seed is irrelevant as every tensor is overwritten
        let mut model = Self::new(config, 0)?;
        let names = model.params.tensor_names();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(SimError::Corrupt(format!("expected {} tensors, found {count}", names.len())));
        }
        for (name, tensor) in names.iter().zip(model.params.tensors_mut()) {
            let name_len = r.u32()? as usize;
            let found = r.take(name_len)?;
            if found != name.as_bytes() {
                return Err(SimError::Corrupt(format!(
                    "expected tensor {name}, found {}",
                    String::from_utf8_lossy(found)
                )));
            }
            let len = r.u64()? as usize;
            if len != tensor.len() {
                return Err(SimError::Corrupt(format!("tensor {name}: expected {} values, found {len}", tensor.len())));
            }
            for x in tensor.iter_mut() {
                *x = f64::from(r.f32()?);
            }
        }
        if r.remaining() != 0 {
            return Err(SimError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        Ok(model)
    }
}

/// Gradient buffers shaped like [`Params`], with the set of embedding rows
/// each sample touched so updates and resets stay sparse.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Params,
    touched: [BTreeSet<usize>; 3],
}

impl Gradients {
    pub fn new(model: &SimModel) -> Self {
        Self {
            params: model.params.zeros_like(),
            touched: Default::default(),
        }
    }

    #[inline]
    pub(crate) fn add_item_row(&mut self, row: usize, g: &[f64], scale: f64) {
        self.touched[ITEM_TENSOR].insert(row);
        crate::nn::axpy(scale, g, self.params.items.row_mut(row));
    }

    #[inline]
    pub(crate) fn add_category_row(&mut self, row: usize, g: &[f64], scale: f64) {
        self.touched[CATEGORY_TENSOR].insert(row);
        crate::nn::axpy(scale, g, self.params.categories.row_mut(row));
    }

    #[inline]
    pub(crate) fn add_time_row(&mut self, row: usize, g: &[f64], scale: f64) {
        self.touched[TIME_TENSOR].insert(row);
        crate::nn::axpy(scale, g, self.params.time.row_mut(row));
    }

    /// Embedding rows with a (possibly) nonzero gradient, per table.
    pub fn touched_rows(&self, table: usize) -> &BTreeSet<usize> {
        &self.touched[table]
    }

    pub fn scale(&mut self, factor: f64) {
        let touched = self.touched.clone();
        for (i, t) in self.params.tensors_mut().into_iter().enumerate() {
            if i <= TIME_TENSOR {
                continue;
            }
            t.iter_mut().for_each(|x| *x *= factor);
        }
        for &r in &touched[ITEM_TENSOR] {
            self.params.items.row_mut(r).iter_mut().for_each(|x| *x *= factor);
        }
        for &r in &touched[CATEGORY_TENSOR] {
            self.params.categories.row_mut(r).iter_mut().for_each(|x| *x *= factor);
        }
        for &r in &touched[TIME_TENSOR] {
            self.params.time.row_mut(r).iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Resets every buffer to zero, touching only dirty embedding rows.
    pub fn clear(&mut self) {
        let touched = std::mem::take(&mut self.touched);
        for (i, t) in self.params.tensors_mut().into_iter().enumerate() {
            if i > TIME_TENSOR {
                t.fill(0.0);
            }
        }
        for &r in &touched[ITEM_TENSOR] {
            self.params.items.row_mut(r).fill(0.0);
        }
        for &r in &touched[CATEGORY_TENSOR] {
            self.params.categories.row_mut(r).fill(0.0);
        }
        for &r in &touched[TIME_TENSOR] {
            self.params.time.row_mut(r).fill(0.0);
        }
    }

    /// Name of the first tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let names = self.params.tensor_names();
        self.params
            .tensors()
            .iter()
            .position(|t| t.iter().any(|x| !x.is_finite()))
            .map(|i| names[i].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_names_parallel_tensors() {
        let m = SimModel::new(ModelConfig::soft(10, 3), 1).unwrap();
        assert_eq!(m.params.tensor_names().len(), m.params.tensors().len());
        let names = m.params.tensor_names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn dimensions_follow_config() {
        let cfg = ModelConfig::hard(10, 3);
        let m = SimModel::new(cfg.clone(), 1).unwrap();
        assert_eq!(cfg.d_z(), 8);
        assert_eq!(m.params.esu.w_b[0].rows(), 8);
        assert_eq!(m.params.esu.w_a[0].cols(), 8);
        assert_eq!(m.params.esu.mlp.input_dim(), 4 * 8 + 4 + 8);
        assert_eq!(m.params.gsu.aux_mlp.input_dim(), 8);
        let sizes: Vec<_> = m.params.esu.mlp.layers.iter().map(|l| l.outputs()).collect();
        assert_eq!(sizes, vec![200, 80, 2]);
    }

    #[test]
    fn hard_mode_requires_zero_alpha() {
        let mut cfg = ModelConfig::hard(10, 3);
        cfg.alpha = 1.0;
        assert!(SimModel::new(cfg, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = SimModel::new(ModelConfig::soft(20, 4), 3).unwrap();
        let bytes = m.to_bytes();
        let back = SimModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(SimModel::from_bytes(truncated), Err(SimError::Checksum { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'x';
        assert!(matches!(SimModel::from_bytes(&bad), Err(SimError::BadMagic { .. })));
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = ModelConfig::soft(5, 2);
        let s = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let partial: ModelConfig = toml::from_str("heads = 2\nmode = \"soft\"\nalpha = 1.0").unwrap();
        assert_eq!(partial.heads, 2);
        assert_eq!(partial.embedding_dim, 4);
    }
}

use crate::config::ModelConfig;
use crate::docdata::{image_to_model_input, Document, SpatialRecord};
use crate::error::{Error, Result};
use crate::features::tokenize::{token_spatial, tokenize, Tokenized};
use crate::features::vocab::Vocab;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Which spatial table family to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    fn tag(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }
}

/// Sub-table names in [`SpatialRecord::lookup_indices`] order.
pub const SPATIAL_SUBFEATURES: [&str; 16] = [
    "x1", "x3", "w", "rel_x1", "rel_x2", "rel_x3", "rel_x4", "rel_xc", "y1", "y3", "h", "rel_y1", "rel_y2", "rel_y3",
    "rel_y4", "rel_yc",
];

pub const EMBEDDING_STD: f64 = 0.02;

/// One modality's spatial lookup tables: 8 for x, 8 for y, plus absolute positions.
#[derive(Clone, Debug)]
pub struct SpatialTables {
    pub sub: [ParamId; 16],
    pub abs: ParamId,
}

impl SpatialTables {
    fn init(store: &mut ParamStore, m: Modality, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let sub = SPATIAL_SUBFEATURES.map(|name| {
            store.randn(format!("features.spatial.{}.{name}", m.tag()), &[cfg.num_bins, cfg.d], EMBEDDING_STD, rng)
        });
        let abs = store.randn(format!("features.spatial.{}.abs", m.tag()), &[cfg.seq_len, cfg.d], EMBEDDING_STD, rng);
        SpatialTables { sub, abs }
    }

    /// The x-group tables (x1, x3, w and five x deltas).
    pub fn x_group(&self) -> &[ParamId] {
        &self.sub[..8]
    }

    pub fn y_group(&self) -> &[ParamId] {
        &self.sub[8..]
    }
}

/// Parameters of the three feature branches.
#[derive(Clone, Debug)]
pub struct FeatureParams {
    pub word_embedding: ParamId,
    /// `(weight [Cout, Cin, 3, 3], bias [Cout])` for each stride-2 block.
    pub conv: [(ParamId, ParamId); 3],
    pub conv1x1_w: ParamId,
    pub conv1x1_b: ParamId,
    /// Mixes the `h_l * w_l` visual cells into N token slots.
    pub visual_linear_w: ParamId,
    pub visual_linear_b: ParamId,
    pub visual_spatial: SpatialTables,
    pub text_spatial: SpatialTables,
    cfg: ModelConfig,
}

/// Encoder inputs for one document, all `[N, d]`.
#[derive(Clone, Debug)]
pub struct FeatureBundle {
    pub visual: Var,
    pub text: Var,
    pub visual_spatial: Var,
    pub text_spatial: Var,
    pub mask: Vec<bool>,
}

/// Everything about a document the model consumes, precomputed once.
#[derive(Clone, Debug, PartialEq)]
pub struct DocInput {
    pub tokens: Tokenized,
    pub spatial: Vec<SpatialRecord>,
    /// `[C, H, W]` model image.
    pub image: Tensor,
    pub labels: Vec<Option<usize>>,
    pub doc_class: Option<usize>,
}

impl DocInput {
    pub fn prepare(vocab: &Vocab, doc: &Document, cfg: &ModelConfig) -> Result<Self> {
        let tokens = tokenize(vocab, doc, cfg.seq_len);
        let spatial = token_spatial(doc, &tokens, cfg.num_bins)?;
        let gray = image_to_model_input(&doc.image, cfg.image_height, cfg.image_width)?;
        let image = if cfg.in_channels == 1 {
            gray
        } else {
            let data = gray.data().repeat(cfg.in_channels);
            Tensor::new(vec![cfg.in_channels, cfg.image_height, cfg.image_width], data)?
        };
        let labels = tokens.labels(doc);
        Ok(DocInput { tokens, spatial, image, labels, doc_class: doc.doc_class })
    }
}

impl FeatureParams {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let word_embedding = store.randn("features.word_embedding", &[cfg.vocab_size, cfg.d], EMBEDDING_STD, rng);
        let mut cin = cfg.in_channels;
        let conv = [0, 1, 2].map(|k| {
            let cout = cfg.cnn_channels[k];
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let w = store.randn(format!("features.cnn.{k}.w"), &[cout, cin, 3, 3], std, rng);
            let b = store.zeros(format!("features.cnn.{k}.b"), &[cout]);
            cin = cout;
            (w, b)
        });
        let c = cfg.cnn_channels[2];
        let conv1x1_w = store.randn("features.conv1x1.w", &[c, cfg.d], 1.0 / (c as f64).sqrt(), rng);
        let conv1x1_b = store.zeros("features.conv1x1.b", &[cfg.d]);
        let cells = cfg.visual_cells();
        let visual_linear_w =
            store.randn("features.visual_linear.w", &[cells, cfg.seq_len], 1.0 / (cells as f64).sqrt(), rng);
        let visual_linear_b = store.zeros("features.visual_linear.b", &[cfg.seq_len]);
        let visual_spatial = SpatialTables::init(store, Modality::Visual, cfg, rng);
        let text_spatial = SpatialTables::init(store, Modality::Text, cfg, rng);
        FeatureParams {
            word_embedding,
            conv,
            conv1x1_w,
            conv1x1_b,
            visual_linear_w,
            visual_linear_b,
            visual_spatial,
            text_spatial,
            cfg: cfg.clone(),
        }
    }

    pub fn spatial_tables(&self, m: Modality) -> &SpatialTables {
        match m {
            Modality::Visual => &self.visual_spatial,
            Modality::Text => &self.text_spatial,
        }
    }

    /// `T = W_t[token_ids]`.
    pub fn embed_text(&self, tape: &mut Tape, b: &Binding, ids: &[usize]) -> Result<Var> {
        tape.embedding_lookup(b.var(self.word_embedding), ids)
    }

    /// CNN feature map `[c, h_l, w_l]`.
    pub fn visual_feature_map(&self, tape: &mut Tape, b: &Binding, image: &Tensor) -> Result<Var> {
        let expect = [self.cfg.in_channels, self.cfg.image_height, self.cfg.image_width];
        if image.shape() != expect {
            return Err(Error::shape("embed_visual", image.shape(), &expect));
        }
        let mut x = tape.constant(image.clone());
        for &(w, bias) in &self.conv {
            let y = tape.conv2d(x, b.var(w), b.var(bias), 2, 1)?;
            x = tape.relu(y)?;
        }
        Ok(x)
    }

    /// CNN, 1x1 conv to d channels, flatten cells, linear over cells to N,
    /// transpose to `[N, d]`.
    pub fn embed_visual(&self, tape: &mut Tape, b: &Binding, image: &Tensor) -> Result<Var> {
        let fmap = self.visual_feature_map(tape, b, image)?;
        let shape = tape.shape(fmap).to_vec();
        let cells = shape[1] * shape[2];
        let flat = tape.reshape(fmap, &[shape[0], cells])?;
        let cells_major = tape.t(flat)?;
        let reduced = tape.linear(cells_major, b.var(self.conv1x1_w), Some(b.var(self.conv1x1_b)))?;
        let channels_major = tape.t(reduced)?;
        let mixed = tape.linear(channels_major, b.var(self.visual_linear_w), Some(b.var(self.visual_linear_b)))?;
        tape.t(mixed)
    }

    /// Sum of the 16 sub-table lookups plus the absolute-position row.
    pub fn embed_spatial(&self, tape: &mut Tape, b: &Binding, records: &[SpatialRecord], m: Modality) -> Result<Var> {
        let nb = self.cfg.num_bins;
        let tables = self.spatial_tables(m);
        let positions: Vec<usize> = records.iter().map(|r| r.abs_pos).collect();
        let mut acc = tape.embedding_lookup(b.var(tables.abs), &positions)?;
        let indices: Vec<[usize; 16]> = records.iter().map(SpatialRecord::lookup_indices).collect();
        for (k, &table) in tables.sub.iter().enumerate() {
            let col: Vec<usize> = indices.iter().map(|ix| ix[k]).collect();
            if let Some(&bad) = col.iter().find(|&&v| v >= nb) {
                return Err(Error::InvalidArgument(format!(
                    "{} bin {bad} out of range for {nb} bins",
                    SPATIAL_SUBFEATURES[k]
                )));
            }
            let rows = tape.embedding_lookup(b.var(table), &col)?;
            acc = tape.add(acc, rows)?;
        }
        Ok(acc)
    }

    pub fn bundle(&self, tape: &mut Tape, b: &Binding, input: &DocInput) -> Result<FeatureBundle> {
        if input.tokens.len() != self.cfg.seq_len || input.spatial.len() != self.cfg.seq_len {
            return Err(Error::shape("bundle", &[input.tokens.len(), input.spatial.len()], &[self.cfg.seq_len]));
        }
        Ok(FeatureBundle {
            visual: self.embed_visual(tape, b, &input.image)?,
            text: self.embed_text(tape, b, &input.tokens.ids)?,
            visual_spatial: self.embed_spatial(tape, b, &input.spatial, Modality::Visual)?,
            text_spatial: self.embed_spatial(tape, b, &input.spatial, Modality::Text)?,
            mask: input.tokens.mask.clone(),
        })
    }
}

//! A text classifier: encoder followed by a hierarchical softmax head.
//!
//! A flat classifier is the same model bound to [`TaxonomyTree::flat_view`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Encoded;
use crate::encoder::{Dropout, EmbeddingTable, Encoder, EncoderError, EncoderGrads, EncoderKind, LstmParams};
use crate::hsoftmax::{self, HierSoftmaxParams, HsError, PathGradients, Stencil};
use crate::matrix::axpy;
use crate::rng::{SeedStreams, Stream};
use crate::taxonomy::TaxonomyTree;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Head(#[from] HsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("class {class} outside 0..{classes}")]
    UnknownLabel { class: usize, classes: usize },
}

/// Architecture choice; `h_dim` is per direction and ignored by the mean encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub h_dim: usize,
    pub bidirectional: bool,
}

impl ModelSpec {
    pub fn mean() -> Self {
        Self {
            encoder: EncoderKind::Mean,
            h_dim: 0,
            bidirectional: false,
        }
    }

    pub fn lstm(h_dim: usize, bidirectional: bool) -> Self {
        Self {
            encoder: EncoderKind::Lstm,
            h_dim,
            bidirectional,
        }
    }

    pub fn label(&self) -> String {
        match self.encoder {
            EncoderKind::Mean => "mean".into(),
            EncoderKind::Lstm if self.bidirectional => format!("bilstm-{}", self.h_dim),
            EncoderKind::Lstm => format!("lstm-{}", self.h_dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub tree: TaxonomyTree,
    pub head: HierSoftmaxParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub head: PathGradients,
}

impl Model {
    /// Encoder weights come from the encoder-init stream and head weights
    /// from a separate stream, so two models that differ only in taxonomy
    /// start from the same encoder.
    pub fn new(spec: &ModelSpec, embeddings: EmbeddingTable, tree: TaxonomyTree, streams: &SeedStreams) -> Self {
        let encoder = match spec.encoder {
            EncoderKind::Mean => Encoder::mean(embeddings),
            EncoderKind::Lstm => {
                let mut rng = streams.rng(Stream::EncoderInit);
                let p = LstmParams::init(embeddings.dim(), spec.h_dim, spec.bidirectional, &mut rng);
                Encoder::lstm(embeddings, p)
            }
        };
        let head = HierSoftmaxParams::init_uniform(&tree, encoder.output_dim(), &mut streams.rng(Stream::HeadInit));
        Self { encoder, tree, head }
    }

    pub fn from_parts(encoder: Encoder, tree: TaxonomyTree, head: HierSoftmaxParams) -> Result<Self, ModelError> {
        if !head.is_bound_to(&tree) {
            return Err(HsError::UnboundTree.into());
        }
        if head.input_dim() != encoder.output_dim() {
            return Err(HsError::DimensionMismatch {
                expected: head.input_dim(),
                found: encoder.output_dim(),
            }
            .into());
        }
        Ok(Self { encoder, tree, head })
    }

    pub fn num_classes(&self) -> usize {
        self.tree.num_classes()
    }

    fn target(&self, class: usize) -> Result<crate::taxonomy::NodeId, ModelError> {
        self.tree.leaves().get(class).copied().ok_or(ModelError::UnknownLabel {
            class,
            classes: self.num_classes(),
        })
    }

    pub fn loss(&self, ex: &Encoded, dropout: Dropout) -> Result<f64, ModelError> {
        let out = self.encoder.forward(&ex.ids, dropout)?;
        Ok(hsoftmax::loss(&self.head, &self.tree, &out.h, self.target(ex.class)?)?)
    }

    pub fn forward_backward(&self, ex: &Encoded, dropout: Dropout) -> Result<(f64, ModelGrads), ModelError> {
        let target = self.target(ex.class)?;
        let out = self.encoder.forward(&ex.ids, dropout)?;
        let (loss, head) = hsoftmax::loss_and_gradients(&self.head, &self.tree, &out.h, target)?;
        let encoder = self.encoder.backward(&out, &head.d_hidden)?;
        Ok((loss, ModelGrads { encoder, head }))
    }

    /// Predicted class index.
    pub fn predict(&self, ids: &[usize]) -> Result<usize, ModelError> {
        let out = self.encoder.forward(ids, Dropout::OFF)?;
        let lp = hsoftmax::leaf_log_probs(&self.head, &self.tree, &out.h)?;
        Ok(hsoftmax::argmax(&lp))
    }

    pub fn head_parameters(&self) -> usize {
        hsoftmax::num_parameters(&self.head)
    }

    /// Lengths of the tensors returned by [`Model::trainable_tensors_mut`].
    pub fn trainable_shapes(&self) -> Vec<usize> {
        let emb = &self.encoder.embeddings;
        let mut enc = self.encoder.tensors().into_iter().map(<[f64]>::len);
        let emb_len = enc.next().expect("embedding tensor");
        let mut out = vec![if emb.trainable { emb_len } else { emb.dim() }];
        out.extend(enc);
        out.extend(self.head.matrices().iter().map(|m| m.as_slice().len()));
        out
    }

    /// Trainable parameters in a fixed order: the embedding matrix (or just
    /// the `<unk>` row when embeddings are frozen), the recurrent weights and
    /// biases, then one matrix per parent of the head.
    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let trainable = self.encoder.embeddings.trainable;
        let unk = self.encoder.embeddings.unk();
        let d = self.encoder.embeddings.dim();
        let mut out = Vec::new();
        let mut enc = self.encoder.tensors_mut().into_iter();
        let emb = enc.next().expect("embedding tensor");
        out.push(if trainable { emb } else { &mut emb[unk * d..(unk + 1) * d] });
        out.extend(enc);
        out.extend(self.head.matrices_mut().iter_mut().map(|m| m.as_mut_slice()));
        out
    }

    /// Adds `scale · grads` into buffers laid out like
    /// [`Model::trainable_tensors_mut`].
    pub fn accumulate(&self, grads: &ModelGrads, scale: f64, buffers: &mut [Vec<f64>]) {
        let emb = &self.encoder.embeddings;
        let d = emb.dim();
        let mut k = 0;
        for (&id, row) in &grads.encoder.embeddings {
            if emb.trainable {
                axpy(scale, row, &mut buffers[k][id * d..(id + 1) * d]);
            } else if id == emb.unk() {
                axpy(scale, row, &mut buffers[k]);
            }
        }
        k += 1;
        if let Some(l) = &grads.encoder.lstm {
            for cell in std::iter::once(&l.forward).chain(l.backward.as_ref()) {
                axpy(scale, cell.w.as_slice(), &mut buffers[k]);
                axpy(scale, &cell.b, &mut buffers[k + 1]);
                k += 2;
            }
        }
        for (p, g) in &grads.head.d_weights {
            let slot = self.tree.parent_index(*p).expect("gradient for a parent");
            axpy(scale, g.as_slice(), &mut buffers[k + slot]);
        }
    }

    /// Largest [`hsoftmax::gradcheck_error`] between the analytic gradient
    /// and central differences, over every trainable parameter, for one
    /// example. A fixed dropout seed makes the mask part of the function.
    pub fn max_gradient_error(&mut self, ex: &Encoded, dropout: Dropout, stencil: Stencil, step: f64) -> Result<f64, ModelError> {
        let (_, g) = self.forward_backward(ex, dropout)?;
        let mut analytic: Vec<Vec<f64>> = self.trainable_shapes().into_iter().map(|n| vec![0.0; n]).collect();
        self.accumulate(&g, 1.0, &mut analytic);
        let mut worst: f64 = 0.0;
        for (t, grads) in analytic.iter().enumerate() {
            for (k, &a) in grads.iter().enumerate() {
                let orig = self.trainable_tensors_mut()[t][k];
                let numeric = hsoftmax::central_difference(stencil, orig, step, |x| {
                    self.trainable_tensors_mut()[t][k] = x;
                    self.loss(ex, dropout)
                })?;
                self.trainable_tensors_mut()[t][k] = orig;
                let err = hsoftmax::gradcheck_error(a, numeric);
                worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
            }
        }
        Ok(worst)
    }

    /// Random vectors for embedding tables when no pretrained file is given.
    pub fn random_embeddings(vocab: crate::data::Vocab, dim: usize, streams: &SeedStreams) -> EmbeddingTable {
        EmbeddingTable::random(vocab, dim, 0.5, &mut streams.rng(Stream::EmbeddingInit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;

    fn toy() -> (Model, Vec<Encoded>) {
        let tree = TaxonomyTree::build_from_edges(&[("R", "A"), ("R", "B"), ("A", "a1"), ("A", "a2"), ("B", "b1")]).unwrap();
        let vocab = Vocab::from_tokens(&["x", "y", "z"]);
        let streams = SeedStreams::new(3);
        let mut emb = Model::random_embeddings(vocab, 3, &streams);
        emb.trainable = true;
        let model = Model::new(&ModelSpec::lstm(2, true), emb, tree, &streams);
        let data = vec![
            Encoded { ids: vec![1, 2, 0], class: 0 },
            Encoded { ids: vec![3], class: 2 },
        ];
        (model, data)
    }

    #[test]
    fn shapes_follow_layout() {
        let (model, _) = toy();
        let shapes = model.trainable_shapes();
        // embeddings 4×3, two cells of W (8×5) and b (8), head R (2×5), A (2×5), B (1×5)
        assert_eq!(shapes, vec![12, 40, 8, 40, 8, 10, 10, 5]);
    }

    #[test]
    fn frozen_embeddings_expose_only_unk() {
        let (mut model, data) = toy();
        model.encoder.embeddings.trainable = false;
        assert_eq!(model.trainable_shapes()[0], 3);
        let (_, g) = model.forward_backward(&data[0], Dropout::OFF).unwrap();
        let mut buffers: Vec<Vec<f64>> = model.trainable_shapes().into_iter().map(|n| vec![0.0; n]).collect();
        model.accumulate(&g, 1.0, &mut buffers);
        assert_eq!(buffers[0], g.encoder.embeddings[&0]);
    }

    #[test]
    fn end_to_end_gradient_check() {
        let (mut model, data) = toy();
        for ex in &data {
            for dropout in [Dropout::OFF, Dropout::training(0.5, 11)] {
                let err = model.max_gradient_error(ex, dropout, Stencil::Central4, 1e-3).unwrap();
                assert!(err <= 1e-5, "{err}");
            }
        }
    }

    #[test]
    fn unknown_class_is_rejected() {
        let (model, _) = toy();
        let bad = Encoded { ids: vec![1], class: 7 };
        assert_eq!(
            model.forward_backward(&bad, Dropout::OFF).unwrap_err(),
            ModelError::UnknownLabel { class: 7, classes: 3 }
        );
    }
}

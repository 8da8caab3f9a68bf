//! Parameter checkpoints.
//!
//! Layout: the magic bytes `HSMCKPT1`, a little-endian `u64` header length,
//! a JSON header, then every tensor listed in the header as little-endian
//! `f64` values in row-major order. The header records the taxonomy edges in
//! their original order, so child ↔ row bindings survive a round trip, and
//! the raw payload makes reloading bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocab;
use crate::encoder::{EmbeddingTable, Encoder, EncoderKind, LstmCell, LstmParams};
use crate::hsoftmax::HierSoftmaxParams;
use crate::matrix::Matrix;
use crate::model::Model;
use crate::taxonomy::{TaxonomyError, TaxonomyTree};

const MAGIC: &[u8; 8] = b"HSMCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint holds a {found} checkpoint, expected {expected}")]
    WrongKind { expected: &'static str, found: String },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EncoderInfo {
    kind: EncoderKind,
    d_emb: usize,
    h_dim: usize,
    bidirectional: bool,
    trainable_embeddings: bool,
    vocab: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    taxonomy: Vec<(String, String)>,
    input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<EncoderInfo>,
    tensors: Vec<TensorInfo>,
}

fn write_container<W: Write>(mut w: W, header: &Header, tensors: &[&[f64]]) -> Result<(), CheckpointError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_container<R: Read>(mut r: R) -> Result<(Header, Vec<Matrix>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for info in &header.tensors {
        let mut data = Vec::with_capacity(info.rows * info.cols);
        for _ in 0..info.rows * info.cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Matrix::from_vec(info.rows, info.cols, data));
    }
    Ok((header, tensors))
}

fn head_tensors(tree: &TaxonomyTree, params: &HierSoftmaxParams) -> Vec<TensorInfo> {
    tree.parents()
        .iter()
        .zip(params.matrices())
        .map(|(&p, m)| TensorInfo {
            name: format!("head/{}", tree.name(p)),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect()
}

pub fn write_head<W: Write>(w: W, tree: &TaxonomyTree, params: &HierSoftmaxParams) -> Result<(), CheckpointError> {
    let header = Header {
        kind: "head".into(),
        taxonomy: tree.edge_names(),
        input_dim: params.input_dim(),
        encoder: None,
        tensors: head_tensors(tree, params),
    };
    let tensors: Vec<&[f64]> = params.matrices().iter().map(Matrix::as_slice).collect();
    write_container(w, &header, &tensors)
}

pub fn read_head<R: Read>(r: R) -> Result<(TaxonomyTree, HierSoftmaxParams), CheckpointError> {
    let (header, tensors) = read_container(r)?;
    if header.kind != "head" {
        return Err(CheckpointError::WrongKind {
            expected: "head",
            found: header.kind,
        });
    }
    let tree = TaxonomyTree::build_from_edges(&header.taxonomy)?;
    let params = HierSoftmaxParams::from_matrices(&tree, header.input_dim, tensors)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    Ok((tree, params))
}

pub fn write_model<W: Write>(w: W, model: &Model) -> Result<(), CheckpointError> {
    let emb = &model.encoder.embeddings;
    let lstm = model.encoder.lstm.as_ref();
    let mut infos = vec![TensorInfo {
        name: "embeddings".into(),
        rows: emb.matrix().rows(),
        cols: emb.matrix().cols(),
    }];
    let mut tensors: Vec<&[f64]> = vec![emb.matrix().as_slice()];
    if let Some(p) = lstm {
        for (dir, cell) in std::iter::once(("forward", &p.forward)).chain(p.backward.as_ref().map(|c| ("backward", c))) {
            infos.push(TensorInfo {
                name: format!("lstm/{dir}/w"),
                rows: cell.w.rows(),
                cols: cell.w.cols(),
            });
            infos.push(TensorInfo {
                name: format!("lstm/{dir}/b"),
                rows: 1,
                cols: cell.b.len(),
            });
            tensors.push(cell.w.as_slice());
            tensors.push(&cell.b);
        }
    }
    infos.extend(head_tensors(&model.tree, &model.head));
    tensors.extend(model.head.matrices().iter().map(Matrix::as_slice));
    let header = Header {
        kind: "model".into(),
        taxonomy: model.tree.edge_names(),
        input_dim: model.head.input_dim(),
        encoder: Some(EncoderInfo {
            kind: model.encoder.kind(),
            d_emb: emb.dim(),
            h_dim: lstm.map_or(0, |p| p.h_dim),
            bidirectional: lstm.is_some_and(LstmParams::bidirectional),
            trainable_embeddings: emb.trainable,
            vocab: emb.vocab().tokens().to_vec(),
        }),
        tensors: infos,
    };
    write_container(w, &header, &tensors)
}

pub fn read_model<R: Read>(r: R) -> Result<Model, CheckpointError> {
    let (header, tensors) = read_container(r)?;
    if header.kind != "model" {
        return Err(CheckpointError::WrongKind {
            expected: "model",
            found: header.kind,
        });
    }
    let info = header
        .encoder
        .ok_or_else(|| CheckpointError::Inconsistent("missing encoder section".into()))?;
    let tree = TaxonomyTree::build_from_edges(&header.taxonomy)?;
    let mut it = tensors.into_iter();
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| CheckpointError::Inconsistent(format!("missing tensor {what}")))
    };

    let vocab = Vocab::from_tokens(&info.vocab);
    if vocab.len() != info.vocab.len() {
        return Err(CheckpointError::Inconsistent("duplicate vocabulary entries".into()));
    }
    let matrix = next("embeddings")?;
    if matrix.rows() != vocab.len() {
        return Err(CheckpointError::Inconsistent("embedding rows do not match vocabulary".into()));
    }
    let mut table = EmbeddingTable::new(vocab, matrix);
    table.trainable = info.trainable_embeddings;

    let encoder = match info.kind {
        EncoderKind::Mean => Encoder::mean(table),
        EncoderKind::Lstm => {
            let cell = |next: &mut dyn FnMut(&str) -> Result<Matrix, CheckpointError>| -> Result<LstmCell, CheckpointError> {
                let w = next("lstm w")?;
                let b = next("lstm b")?;
                if w.shape() != (4 * info.h_dim, info.d_emb + info.h_dim) || b.cols() != 4 * info.h_dim {
                    return Err(CheckpointError::Inconsistent("LSTM tensor shape".into()));
                }
                Ok(LstmCell {
                    w,
                    b: b.as_slice().to_vec(),
                })
            };
            let forward = cell(&mut next)?;
            let backward = if info.bidirectional { Some(cell(&mut next)?) } else { None };
            Encoder::lstm(
                table,
                LstmParams {
                    d_emb: info.d_emb,
                    h_dim: info.h_dim,
                    forward,
                    backward,
                },
            )
        }
    };
    let head_mats: Vec<Matrix> = it.collect();
    let head = HierSoftmaxParams::from_matrices(&tree, header.input_dim, head_mats)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    Model::from_parts(encoder, tree, head).map_err(|e| CheckpointError::Inconsistent(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<(), CheckpointError> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::SeedStreams;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tree() -> TaxonomyTree {
        // Root is not the first node to appear, to exercise id assignment.
        TaxonomyTree::build_from_edges(&[("B", "b2"), ("B", "b1"), ("R", "B"), ("R", "a"), ("R", "C"), ("C", "c1")]).unwrap()
    }

    proptest! {
        #[test]
        fn head_round_trip_is_bit_exact(seed in any::<u64>(), dim in 1usize..6) {
            let t = tree();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = HierSoftmaxParams::init_uniform(&t, dim, &mut rng);
            // Awkward values: subnormals, negative zero, extremes.
            params.matrices_mut()[0].as_mut_slice()[0] = f64::MIN_POSITIVE / 3.0;
            params.matrices_mut()[1].as_mut_slice()[0] = -0.0;
            params.matrices_mut()[2].as_mut_slice()[0] = f64::MAX;
            let mut buf = Vec::new();
            write_head(&mut buf, &t, &params).unwrap();
            let (t2, p2) = read_head(buf.as_slice()).unwrap();
            prop_assert_eq!(&t2, &t);
            for (a, b) in params.matrices().iter().zip(p2.matrices()) {
                let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(a), bits(b));
            }
        }
    }

    #[test]
    fn model_round_trip() {
        let t = tree();
        let streams = SeedStreams::new(4);
        let vocab = Vocab::from_tokens(&["x", "y"]);
        for spec in [ModelSpec::mean(), ModelSpec::lstm(3, false), ModelSpec::lstm(2, true)] {
            let emb = crate::model::Model::random_embeddings(vocab.clone(), 4, &streams);
            let model = Model::new(&spec, emb, t.clone(), &streams);
            let mut buf = Vec::new();
            write_model(&mut buf, &model).unwrap();
            assert_eq!(read_model(buf.as_slice()).unwrap(), model);
        }
    }

    #[test]
    fn rejects_garbage_and_wrong_kind() {
        assert!(matches!(read_head(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).unwrap_err(), CheckpointError::BadMagic));
        let t = tree();
        let mut buf = Vec::new();
        write_head(&mut buf, &t, &HierSoftmaxParams::zeros(&t, 2)).unwrap();
        assert!(matches!(read_model(buf.as_slice()).unwrap_err(), CheckpointError::WrongKind { .. }));
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_head(buf.as_slice()).unwrap_err(), CheckpointError::Io(_)));
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::kernels::softmax_rows;
use super::model::{stack_specs, Model};
use super::NetError;
use crate::corpus::{read_wav, ClipMeta};
use crate::dsp::{FeatureExtractor, MelSpectrogram};

const EMBED_BATCH: usize = 32;

/// Which activation serves as the embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingLayer {
    /// Class probabilities.
    #[default]
    Softmax,
    /// The post-ReLU activation of the first dense layer.
    Penultimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub clip: ClipMeta,
    pub segment_index: usize,
}

/// Eval-mode embeddings of spectrograms, in input order.
pub fn embed_specs(
    model: &Model,
    specs: &[MelSpectrogram],
    layer: EmbeddingLayer,
) -> Result<Vec<Vec<f64>>, NetError> {
    let mut out = Vec::with_capacity(specs.len());
    let mut start = 0;
    while start < specs.len() {
        // Batch runs of equal length.
        let frames = specs[start].n_frames;
        let mut end = start + 1;
        while end < specs.len() && end - start < EMBED_BATCH && specs[end].n_frames == frames {
            end += 1;
        }
        let refs: Vec<_> = specs[start..end].iter().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(stack_specs(&refs)?);
        // Dropout is off in eval mode, so this generator is never drawn from.
        let fwd =
            model.forward_graph(&mut g, x, false, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        match layer {
            EmbeddingLayer::Softmax => {
                let (b, c) = g.value(fwd.logits).dims2();
                let p = softmax_rows(g.value(fwd.logits).data(), b, c);
                out.extend(p.chunks_exact(c).map(<[f64]>::to_vec));
            }
            EmbeddingLayer::Penultimate => {
                let t = g.value(fwd.penultimate);
                let (_, d) = t.dims2();
                out.extend(
                    t.data()
                        .chunks_exact(d)
                        .map(|r| r.iter().map(|&v| f64::from(v)).collect()),
                );
            }
        }
        start = end;
    }
    Ok(out)
}

/// Reads every clip, extracts its features (per segment when `segmenting`)
/// and embeds them.
pub fn extract_embeddings(
    model: &Model,
    clips: &[ClipMeta],
    extractor: &FeatureExtractor,
    segmenting: bool,
    layer: EmbeddingLayer,
) -> Result<Vec<Embedding>, NetError> {
    let mut out = Vec::new();
    for meta in clips {
        let clip = read_wav(&meta.path)?;
        let clip = if clip.sample_rate() == extractor.sample_rate() {
            clip
        } else {
            clip.resampled(extractor.sample_rate())
        };
        let specs = extractor.extract_all(&clip, segmenting)?;
        for (i, values) in embed_specs(model, &specs, layer)?.into_iter().enumerate() {
            out.push(Embedding {
                values,
                clip: meta.clone(),
                segment_index: i,
            });
        }
    }
    Ok(out)
}

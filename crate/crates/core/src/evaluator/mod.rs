//! Embedding extraction with optional flip averaging, single-query ranking
//! and the branch-count benchmark.

mod bench;
mod ranking;

pub use bench::{bench_branches, bench_csv, branch_flops, BenchConfig, BenchRow};
pub use ranking::{euclidean, rank_queries, EmbeddingIndex, IndexRow, QueryResult, RankingReport};

use crate::branching::BranchedModel;
use crate::datapipe::{mirror_width, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rows embedded per forward pass.
pub const EMBED_BATCH: usize = 64;

/// Embeddings of `images` (`[N,h,w,c]`). With `flip`, each embedding is the
/// mean of the image's and its mirror image's embeddings.
pub fn embed_batch(model: &BranchedModel, images: &Tensor, flip: bool) -> Result<Tensor> {
    let c = model.config();
    if images.rank() != 4 || images.shape()[1..] != [c.in_height, c.in_width, c.in_channels] {
        return Err(Error::Model(format!(
            "images {:?} do not fit the model input {}x{}x{}",
            images.shape(),
            c.in_height,
            c.in_width,
            c.in_channels
        )));
    }
    let plain = model.embed(images)?;
    if !flip {
        return Ok(plain);
    }
    let mirrored = model.embed(&mirror_width(images)?)?;
    let avg = plain.data().iter().zip(mirrored.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Tensor::new(plain.shape().to_vec(), avg)
}

/// Embed the dataset rows `rows` into an index.
pub fn embed(model: &BranchedModel, data: &Dataset, rows: &[usize], flip: bool) -> Result<EmbeddingIndex> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EMBED_BATCH) {
        let emb = embed_batch(model, &data.batch(chunk)?, flip)?;
        let e = emb.shape()[1];
        for (&r, v) in chunk.iter().zip(emb.data().chunks(e)) {
            let rec = &data.manifest.records[r];
            out.push(IndexRow {
                sample_id: rec.sample_id.clone(),
                identity: rec.identity,
                camera: rec.camera,
                embedding: v.to_vec(),
            });
        }
    }
    EmbeddingIndex::new(out)
}

/// Query split against gallery split.
pub fn evaluate(model: &BranchedModel, data: &Dataset, flip: bool) -> Result<RankingReport> {
    let rows = |s| data.manifest.split(s).map(|(i, _)| i).collect::<Vec<_>>();
    let queries = embed(model, data, &rows(Split::Query), flip)?;
    let gallery = embed(model, data, &rows(Split::Gallery), flip)?;
    rank_queries(&queries, &gallery)
}

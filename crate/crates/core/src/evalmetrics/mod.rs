//! Quality and diversity evaluation.
//!
//! BLEU measures how much of each generated sentence is supported by the
//! test set; Backwards-BLEU swaps the roles and measures how much of the
//! test set the generated set covers. The Fréchet distance compares Gaussian
//! fits of sentence embeddings and is sensitive to length mismatch, which
//! [`length_report`] makes visible.

mod bleu;
mod frechet;
mod length;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;
use crate::diffcore::Matrix;
use crate::seqvae::SeqVae;

pub use bleu::{bbleu, bleu, combine, distinct_n, BleuReference, NgramCounts, MAX_ORDER};
pub use frechet::{
    frechet, frechet_detailed, pca2, pca_csv, EmbeddingSet, FrechetResult, Pca2, COVARIANCE_JITTER, NEGATIVE_EIGEN_TOL,
};
pub use length::{length_report, LengthReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("symmetrized covariance product has eigenvalue {0} below tolerance")]
    NegativeEigenvalue(f64),
    #[error("non-finite embedding")]
    NonFinite,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// BLEU/Backwards-BLEU orders reported.
pub const REPORT_ORDERS: [usize; 3] = [2, 3, 4];

/// Sentence embeddings: the encoder's posterior mean for each sentence.
pub fn embed(sentences: &[TokenSequence], vae: &SeqVae) -> EmbeddingSet {
    let posts = vae.encode_batch(sentences);
    let rows: Vec<Vec<f64>> = posts.into_iter().map(|p| p.mu).collect();
    let data = if rows.is_empty() { Matrix::zeros(0, vae.spec().latent_dim) } else { Matrix::from_rows(&rows) };
    EmbeddingSet { data, provenance: format!("seqvae-posterior-mean:{}", vae.params_hash()) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub explained_test: [f64; 2],
    pub explained_generated: [f64; 2],
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub orders: Vec<usize>,
    pub bleu: Vec<f64>,
    pub bbleu: Vec<f64>,
    pub fid: f64,
    pub fid_regularized: bool,
    /// Encoder that produced the FID embeddings; never compare FID across
    /// different provenances.
    pub embedding_provenance: String,
    pub generated_count: usize,
    pub test_count: usize,
    pub distinct: [f64; 2],
    pub length: LengthReport,
    pub pca: Option<PcaSummary>,
}

/// Output of [`MetricsReport::compute`]: the report plus optional PCA
/// coordinates for plotting.
pub struct Evaluation {
    pub report: MetricsReport,
    pub pca_test: Option<Matrix>,
    pub pca_generated: Option<Matrix>,
}

impl MetricsReport {
    /// Scores `generated` against `test`. PCA is fitted on the test
    /// embeddings and both sets are projected onto its axes.
    pub fn compute(
        generated: &[TokenSequence],
        test: &[TokenSequence],
        generated_emb: &EmbeddingSet,
        test_emb: &EmbeddingSet,
        with_pca: bool,
    ) -> Result<Evaluation, MetricsError> {
        if generated.is_empty() {
            return Err(MetricsError::Empty("generated"));
        }
        if test.is_empty() {
            return Err(MetricsError::Empty("test"));
        }
        let gen_words: Vec<&[u32]> = generated.iter().map(TokenSequence::words).collect();
        let test_words: Vec<&[u32]> = test.iter().map(TokenSequence::words).collect();
        let refs = BleuReference::new(&test_words);
        let back = BleuReference::new(&gen_words);
        let bleu: Vec<f64> = REPORT_ORDERS.iter().map(|&n| refs.corpus_bleu(&gen_words, n)).collect();
        let bbleu: Vec<f64> = REPORT_ORDERS.iter().map(|&n| back.corpus_bleu(&test_words, n)).collect();
        let fr = frechet_detailed(generated_emb, test_emb)?;
        let gen_len: Vec<usize> = generated.iter().map(TokenSequence::word_count).collect();
        let test_len: Vec<usize> = test.iter().map(TokenSequence::word_count).collect();
        let length = length_report(&gen_len, &test_len).ok_or(MetricsError::Empty("lengths"))?;
        let (mut pca, mut pca_test, mut pca_generated) = (None, None, None);
        if with_pca {
            let pt = pca2(test_emb)?;
            let pg = pca2(generated_emb)?;
            let projected = pt.project(generated_emb)?;
            pca = Some(PcaSummary {
                explained_test: pt.explained,
                explained_generated: pg.explained,
                rank_deficient: pt.rank_deficient,
            });
            pca_test = Some(pt.coords);
            pca_generated = Some(projected);
        }
        let report = MetricsReport {
            orders: REPORT_ORDERS.to_vec(),
            bleu,
            bbleu,
            fid: fr.distance,
            fid_regularized: fr.regularized,
            embedding_provenance: test_emb.provenance.clone(),
            generated_count: generated.len(),
            test_count: test.len(),
            distinct: [distinct_n(&gen_words, 1), distinct_n(&gen_words, 2)],
            length,
            pca,
        };
        Ok(Evaluation { report, pca_test, pca_generated })
    }
}

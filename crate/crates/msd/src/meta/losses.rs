//! Knowledge-consistency and total training losses.
//!
//! The consistency of n models' query outputs is the mean cosine similarity
//! between each model's per-sample output vector and the across-model mean
//! output. The trainable loss is `1 - consistency`, so minimizing it
//! maximizes consistency while the raw score stays reportable as a metric.
//!
//! Exactness matters here: the identical-outputs case must give a score of
//! exactly 1 and a loss of exactly 0. The cosine denominator is therefore
//! computed as `sqrt(sq_a * sq_m)` (one square root of a product), which is
//! bit-exact equal to the numerator when all views coincide, and the final
//! normalization is a true division by the term count.

use crate::autodiff::{ops, Tensor};
use crate::error::{Error, Result};

/// Result of the consistency computation. `loss` is `1 - score`, tracked
/// whenever the logits are tracked. Zero-norm (sample, model) pairs
/// contribute a constant 0 and are tallied in `degeneracies`.
#[derive(Debug)]
pub struct ConsistencyOutput {
    pub loss: Tensor,
    pub score: f64,
    pub degeneracies: usize,
}

/// Consistency of `n` views' query logits, each `[batch, classes]`.
pub fn knowledge_consistency(query_logits: &[Tensor]) -> Result<ConsistencyOutput> {
    let n = query_logits.len();
    if n == 0 {
        return Err(Error::Contract("consistency needs at least one view".into()));
    }
    let (batch, classes) = match query_logits[0].shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::invalid_shape("knowledge_consistency", other, &[0, 0])),
    };
    for l in query_logits {
        if l.shape() != [batch, classes] {
            return Err(Error::invalid_shape("knowledge_consistency", l.shape(), &[batch, classes]));
        }
    }

    // across-model mean prediction per query sample
    let mut mean = query_logits[0].clone();
    for l in &query_logits[1..] {
        mean = ops::add(&mean, l)?;
    }
    let mean = ops::scale(&mean, 1.0 / n as f64)?;

    let sq_mean = ops::row_dot(&mean, &mean)?;
    let mut degeneracies = 0usize;
    let mut total: Option<Tensor> = None;
    for l in query_logits {
        let rd = ops::row_dot(l, &mean)?;
        let sq = ops::row_dot(l, l)?;
        // Rows where either vector has zero norm get masked to a constant 0;
        // the +1 offset keeps the square root away from zero there.
        let mut mask = vec![0.0; batch];
        let mut offset = vec![0.0; batch];
        for b in 0..batch {
            if sq.data()[b] > 0.0 && sq_mean.data()[b] > 0.0 {
                mask[b] = 1.0;
            } else {
                offset[b] = 1.0;
                degeneracies += 1;
            }
        }
        let mask = Tensor::from_vec(vec![batch], mask)?;
        let offset = Tensor::from_vec(vec![batch], offset)?;
        let denom = ops::sqrt(&ops::add(&ops::mul(&sq, &sq_mean)?, &offset)?)?;
        let cos = ops::div(&ops::mul(&rd, &mask)?, &denom)?;
        let view_sum = ops::sum(&cos)?;
        total = Some(match total {
            None => view_sum,
            Some(acc) => ops::add(&acc, &view_sum)?,
        });
    }

    let count = Tensor::scalar((n * batch) as f64);
    let score_t = ops::div(&total.unwrap(), &count)?;
    let score = score_t.item()?;
    let loss = ops::sub(&Tensor::scalar(1.0), &score_t)?;
    Ok(ConsistencyOutput { loss, score, degeneracies })
}

/// Mean cross-entropy over views against the shared query labels.
pub fn classification_loss(query_logits: &[Tensor], query_y: &[usize]) -> Result<Tensor> {
    let n = query_logits.len();
    if n == 0 {
        return Err(Error::Contract("classification loss needs at least one view".into()));
    }
    let mut total: Option<Tensor> = None;
    for l in query_logits {
        let ce = crate::nn::cross_entropy(l, query_y)?;
        total = Some(match total {
            None => ce,
            Some(acc) => ops::add(&acc, &ce)?,
        });
    }
    ops::scale(&total.unwrap(), 1.0 / n as f64)
}

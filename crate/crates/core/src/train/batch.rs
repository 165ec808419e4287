use crate::error::{Error, Result};
use crate::model::{Batch, ModelKind};
use crate::prep::Sample;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sizes of consecutive batches over `n` samples. A trailing batch of one is
/// dropped because batch statistics over a single sample are degenerate.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..n).step_by(batch_size.max(1)).map(|i| batch_size.min(n - i)).collect();
    if sizes.len() > 1 && sizes.last() == Some(&1) {
        sizes.pop();
    }
    sizes
}

/// Stacks `samples` into the inputs `kind` consumes. Channels the model does
/// not use are left out; missing ones are an error.
pub fn assemble_batch<T: Scalar>(samples: &[&Sample], kind: ModelKind) -> Result<(Batch<T>, Vec<usize>)> {
    let first = samples.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let [h, w] = first.image.shape() else {
        return Err(Error::invalid(format!("sample image must be 2-D, got {:?}", first.image.shape())));
    };
    let (h, w, n) = (*h, *w, samples.len());
    let needs_diff = kind.diff_mode().is_some();
    let mut image = Vec::with_capacity(n * h * w);
    let mut diff = Vec::with_capacity(if needs_diff { n * h * w } else { 0 });
    let mut ts = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for s in samples {
        if s.image.shape() != [h, w] {
            return Err(Error::ShapeMismatch {
                op: "assemble_batch",
                left: vec![h, w],
                right: s.image.shape().to_vec(),
            });
        }
        image.extend(s.image.data().iter().map(|&v| T::lit(v as f64)));
        if needs_diff {
            let d = s
                .difference
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{kind} needs difference images, sample {:?} has none", s.key())))?;
            if d.shape() != [h, w] {
                return Err(Error::ShapeMismatch {
                    op: "assemble_batch",
                    left: vec![h, w],
                    right: d.shape().to_vec(),
                });
            }
            diff.extend(d.data().iter().map(|&v| T::lit(v as f64)));
        }
        if kind.uses_timestamp() {
            let t = s
                .timestamp
                .ok_or_else(|| Error::invalid(format!("{kind} needs timestamps, sample {:?} has none", s.key())))?;
            ts.push(T::lit(t as f64));
        }
        labels.push(s.label());
    }
    let batch = Batch {
        image: Tensor::from_vec(&[n, 1, h, w], image)?,
        difference: if needs_diff { Some(Tensor::from_vec(&[n, 1, h, w], diff)?) } else { None },
        timestamp: if kind.uses_timestamp() { Some(Tensor::from_vec(&[n, 1], ts)?) } else { None },
    };
    Ok((batch, labels))
}

/// One epoch of shuffled batches, assembled lazily.
pub struct BatchStream<'a> {
    samples: &'a [Sample],
    kind: ModelKind,
    order: Vec<usize>,
    sizes: std::vec::IntoIter<usize>,
    pos: usize,
}

impl BatchStream<'_> {
    /// Sample indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<(Batch<f32>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let size = self.sizes.next()?;
        let picked: Vec<&Sample> = self.order[self.pos..self.pos + size].iter().map(|&i| &self.samples[i]).collect();
        self.pos += size;
        Some(assemble_batch(&picked, self.kind))
    }
}

/// Shuffles `samples` with `rng` and cuts the permutation into batches.
pub fn make_batches<'a>(
    samples: &'a [Sample],
    kind: ModelKind,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<BatchStream<'a>> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot batch an empty split"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    Ok(BatchStream {
        samples,
        kind,
        order,
        sizes: batch_sizes(samples.len(), batch_size).into_iter(),
        pos: 0,
    })
}

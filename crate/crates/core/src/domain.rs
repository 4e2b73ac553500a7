//! Shared domain types: parameter vectors, examples, id-tagged batches and
//! the batch-overlap arithmetic behind the cross-covariance scaling law.

use std::collections::HashSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};

/// Flat parameter vector θ. Always nonempty with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure(!values.is_empty(), || "parameter vector must be nonempty".into())?;
        ensure(values.iter().all(|v| v.is_finite()), || {
            "parameter vector has a non-finite entry".into()
        })?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "parameter vector must be nonempty");
        Self(vec![0.0; len])
    }

    /// Unit vector along coordinate `axis`.
    pub fn basis(len: usize, axis: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[axis] = 1.0;
        v
    }

    /// Wraps values produced by finite arithmetic on finite inputs. Callers that
    /// cannot guarantee finiteness should use [`ParamVector::new`].
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: f64,
}

impl Example {
    pub fn new(input: Vec<f64>, target: f64) -> Result<Self> {
        ensure(!input.is_empty(), || "example input must be nonempty".into())?;
        ensure(input.iter().all(|v| v.is_finite()) && target.is_finite(), || {
            "example has a non-finite entry".into()
        })?;
        Ok(Self { input, target })
    }

    pub fn dim(&self) -> usize {
        self.input.len()
    }
}

/// Ordered collection of examples with unique 64-bit identities.
///
/// Order is significant: batch averages are accumulated in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    examples: Vec<Example>,
    ids: Vec<u64>,
}

impl Batch {
    pub fn new(examples: Vec<Example>, ids: Vec<u64>) -> Result<Self> {
        ensure(!examples.is_empty(), || "batch must be nonempty".into())?;
        ensure(examples.len() == ids.len(), || {
            format!("{} examples but {} ids", examples.len(), ids.len())
        })?;
        let d = examples[0].dim();
        ensure(examples.iter().all(|e| e.dim() == d), || {
            "batch examples have differing input dimensions".into()
        })?;
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(*id) {
                return Err(invalid(format!("duplicate example id {id} in batch")));
            }
        }
        Ok(Self { examples, ids })
    }

    /// Batch with ids `first_id, first_id + 1, ...`.
    pub fn with_sequential_ids(examples: Vec<Example>, first_id: u64) -> Result<Self> {
        let ids = (first_id..first_id + examples.len() as u64).collect();
        Self::new(examples, ids)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.examples[0].dim()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Example)> {
        self.ids.iter().copied().zip(self.examples.iter())
    }

    pub fn id_set(&self) -> HashSet<u64> {
        self.ids.iter().copied().collect()
    }

    pub fn shared_ids(&self, other: &Batch) -> usize {
        let mine = self.id_set();
        other.ids.iter().filter(|id| mine.contains(id)).count()
    }

    pub fn is_disjoint(&self, other: &Batch) -> bool {
        self.shared_ids(other) == 0
    }

    /// Sub-batch of the examples at `range`, keeping their ids.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Batch> {
        ensure(range.start < range.end && range.end <= self.len(), || {
            format!("slice {range:?} out of bounds for batch of {}", self.len())
        })?;
        Ok(Batch {
            examples: self.examples[range.clone()].to_vec(),
            ids: self.ids[range].to_vec(),
        })
    }

    /// Concatenation of disjoint batches in argument order.
    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let mut examples = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            examples.extend_from_slice(&p.examples);
            ids.extend_from_slice(&p.ids);
        }
        Batch::new(examples, ids)
    }
}

/// Teacher-student generator: input ~ N(0, I_d), target = θ*·input + s·ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub d: usize,
    pub teacher: ParamVector,
    pub noise_std: f64,
}

impl GeneratorSpec {
    pub fn new(d: usize, teacher: ParamVector, noise_std: f64) -> Result<Self> {
        let spec = Self { d, teacher, noise_std };
        spec.validate()?;
        Ok(spec)
    }

    /// Teacher defaults to the first basis vector.
    pub fn with_default_teacher(d: usize, noise_std: f64) -> Result<Self> {
        ensure(d >= 1, || "generator dimension must be at least 1".into())?;
        Self::new(d, ParamVector::basis(d, 0), noise_std)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.d >= 1, || "generator dimension must be at least 1".into())?;
        ensure(self.teacher.len() == self.d, || {
            format!(
                "teacher has length {} but generator dimension is {}",
                self.teacher.len(),
                self.d
            )
        })?;
        ensure(self.noise_std.is_finite() && self.noise_std >= 0.0, || {
            format!("noise_std must be finite and nonnegative, got {}", self.noise_std)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRealization {
    pub train: Batch,
    pub test: Batch,
    pub seed: u64,
    pub generator: GeneratorSpec,
}

/// `|A∩B| / (|A|·|B|)` on example ids.
pub fn overlap_factor(a: &Batch, b: &Batch) -> Result<f64> {
    ensure(!a.is_empty() && !b.is_empty(), || {
        "overlap factor needs nonempty batches".into()
    })?;
    let shared = a.shared_ids(b) as f64;
    Ok(shared / (a.len() as f64 * b.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(ids: &[u64]) -> Batch {
        let ex = ids
            .iter()
            .map(|i| Example::new(vec![*i as f64], 0.0).unwrap())
            .collect();
        Batch::new(ex, ids.to_vec()).unwrap()
    }

    #[test]
    fn disjoint_batches_have_zero_overlap() {
        assert_eq!(overlap_factor(&batch(&[1, 2, 3]), &batch(&[4, 5])).unwrap(), 0.0);
    }

    #[test]
    fn self_overlap_is_inverse_size() {
        let a = batch(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(overlap_factor(&a, &a).unwrap(), 0.1);
    }

    #[test]
    fn partial_overlap_hand_value() {
        let a = batch(&[1, 2, 3, 4]);
        let b = batch(&[3, 4]);
        assert_eq!(overlap_factor(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn batch_rejects_duplicates_and_empties() {
        let e = Example::new(vec![1.0], 0.0).unwrap();
        assert!(Batch::new(vec![e.clone(), e.clone()], vec![7, 7]).is_err());
        assert!(Batch::new(vec![], vec![]).is_err());
        assert!(Batch::new(vec![e], vec![1, 2]).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
        assert!(serde_json::from_str::<ParamVector>("[]").is_err());
    }

    fn id_sets() -> impl Strategy<Value = (Vec<u64>, Vec<u64>)> {
        (
            proptest::collection::hash_set(0u64..40, 1..20),
            proptest::collection::hash_set(0u64..40, 1..20),
        )
            .prop_map(|(a, b)| (a.into_iter().collect(), b.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn overlap_symmetric_and_bounded((a, b) in id_sets()) {
            let (a, b) = (batch(&a), batch(&b));
            let ab = overlap_factor(&a, &b).unwrap();
            let ba = overlap_factor(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            let bound = (1.0 / a.len() as f64).min(1.0 / b.len() as f64);
            prop_assert!(ab <= bound + f64::EPSILON * bound);
        }

        #[test]
        fn self_overlap_times_size_is_one(ids in proptest::collection::hash_set(0u64..1000, 1..200)) {
            let a = batch(&ids.into_iter().collect::<Vec<_>>());
            let f = overlap_factor(&a, &a).unwrap();
            // f is the correctly rounded 1/n; multiplying back is exact up to one rounding.
            prop_assert!((f * a.len() as f64 - 1.0).abs() <= f64::EPSILON);
        }
    }
}

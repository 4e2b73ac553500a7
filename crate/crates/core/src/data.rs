//! Synthetic teacher-student data and CSV ingestion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{Batch, DataRealization, Example, GeneratorSpec};
use crate::error::{ensure, invalid, Error, Result};
use crate::linalg::dot;
use crate::rng::{stream, Purpose};

/// Draws `n` examples from the generator using `rng`.
pub fn draw_examples(gen: &GeneratorSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let input: Vec<f64> = (0..gen.d).map(|_| rng.sample(StandardNormal)).collect();
            let noise: f64 = rng.sample(StandardNormal);
            let target = dot(&gen.teacher, &input) + gen.noise_std * noise;
            Example { input, target }
        })
        .collect()
}

/// Batch of `n` fresh examples from stream `(seed, index, purpose)` with ids
/// starting at `first_id`.
pub fn sample_batch(
    gen: &GeneratorSpec,
    n: usize,
    seed: u64,
    index: u64,
    purpose: Purpose,
    first_id: u64,
) -> Result<Batch> {
    gen.validate()?;
    ensure(n >= 1, || "batch size must be at least 1".into())?;
    let mut rng = stream(seed, index, purpose);
    Batch::with_sequential_ids(draw_examples(gen, n, &mut rng), first_id)
}

/// One train/test realization. Train ids are `0..n_train`, test ids follow.
pub fn sample_realization(gen: &GeneratorSpec, n_train: usize, n_test: usize, seed: u64) -> Result<DataRealization> {
    sample_realization_at(gen, n_train, n_test, seed, 0)
}

/// Realization number `index` of the ensemble keyed by `seed`.
pub fn sample_realization_at(
    gen: &GeneratorSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
    index: u64,
) -> Result<DataRealization> {
    ensure(n_train >= 2, || format!("n_train must be at least 2, got {n_train}"))?;
    ensure(n_test >= 1, || format!("n_test must be at least 1, got {n_test}"))?;
    let train = sample_batch(gen, n_train, seed, index, Purpose::TrainSet, 0)?;
    let test = sample_batch(gen, n_test, seed, index, Purpose::TestSet, n_train as u64)?;
    Ok(DataRealization {
        train,
        test,
        seed,
        generator: gen.clone(),
    })
}

/// Seeded uniform shuffle of `batch` split into `k` contiguous equal parts.
pub fn partition(batch: &Batch, k: usize, seed: u64) -> Result<Vec<Batch>> {
    partition_at(batch, k, seed, 0)
}

pub fn partition_at(batch: &Batch, k: usize, seed: u64, index: u64) -> Result<Vec<Batch>> {
    ensure(k >= 1 && batch.len().is_multiple_of(k), || {
        format!("{k} does not divide batch size {}", batch.len())
    })?;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(&mut stream(seed, index, Purpose::Partition));
    let size = batch.len() / k;
    order
        .chunks(size)
        .map(|chunk| {
            let examples = chunk.iter().map(|&i| batch.examples()[i].clone()).collect();
            let ids = chunk.iter().map(|&i| batch.ids()[i]).collect();
            Batch::new(examples, ids)
        })
        .collect()
}

/// Reads a CSV with header `x_1,...,x_d,y`. Ids are assigned from 0 in row order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Batch> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let width = header.len();
    ensure(width >= 2, || {
        format!("{}: header needs at least one input column and y", path.display())
    })?;
    let d = width - 1;
    for (j, name) in header.iter().enumerate() {
        let expected = if j == d {
            "y".to_string()
        } else {
            format!("x_{}", j + 1)
        };
        if name != expected {
            return Err(parse_err(
                1,
                format!("header column {} is {name:?}, expected {expected:?}", j + 1),
            ));
        }
    }

    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut values = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value {field:?}")));
            }
            values.push(v);
        }
        let target = values.pop().expect("width >= 2");
        examples.push(Example { input: values, target });
    }
    if examples.is_empty() {
        return Err(invalid(format!("{}: dataset has no rows", path.display())));
    }
    Batch::with_sequential_ids(examples, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ParamVector;
    use std::io::Write;

    fn gen(d: usize, s: f64) -> GeneratorSpec {
        GeneratorSpec::with_default_teacher(d, s).unwrap()
    }

    #[test]
    fn noiseless_targets_are_exact() {
        let g = GeneratorSpec::new(3, ParamVector::new(vec![0.5, -1.0, 2.0]).unwrap(), 0.0).unwrap();
        let r = sample_realization(&g, 20, 5, 4).unwrap();
        for (_, x) in r.train.iter().chain(r.test.iter()) {
            assert_eq!(x.target, dot(&g.teacher, &x.input));
        }
    }

    #[test]
    fn realizations_are_deterministic_and_disjoint() {
        let g = gen(2, 1.0);
        let a = sample_realization(&g, 10, 4, 99).unwrap();
        let b = sample_realization(&g, 10, 4, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.train.is_disjoint(&a.test));
        assert_eq!(a.train.len(), 10);
        assert_eq!(a.test.len(), 4);
        let c = sample_realization_at(&g, 10, 4, 99, 1).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let g = gen(1, 1.0);
        assert!(sample_realization(&g, 1, 4, 0).is_err());
        assert!(sample_realization(&g, 4, 0, 0).is_err());
    }

    #[test]
    fn input_means_are_centered() {
        let g = gen(5, 1.0);
        let b = sample_batch(&g, 10_000, 5, 0, Purpose::TrainSet, 0).unwrap();
        for j in 0..5 {
            let m: f64 = b.examples().iter().map(|x| x.input[j]).sum::<f64>() / 1e4;
            assert!(m.abs() < 4.0 / 100.0, "coordinate {j} mean {m}");
        }
    }

    #[test]
    fn input_and_target_variances() {
        let teacher = ParamVector::new(vec![1.5]).unwrap();
        let s = 0.5;
        let g = GeneratorSpec::new(1, teacher, s).unwrap();
        let n = 100_000;
        let b = sample_batch(&g, n, 6, 0, Purpose::TrainSet, 0).unwrap();
        let check = |vals: Vec<f64>, expected: f64| {
            let nf = n as f64;
            let mean = vals.iter().sum::<f64>() / nf;
            let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
            let var = dev.iter().sum::<f64>() / (nf - 1.0);
            let m4 = dev.iter().map(|d| d * d).sum::<f64>() / nf;
            let se = ((m4 - var * var) / nf).sqrt();
            assert!(
                (var - expected).abs() < 3.0 * se,
                "var {var} expected {expected} se {se}"
            );
        };
        check(b.examples().iter().map(|x| x.input[0]).collect(), 1.0);
        check(b.examples().iter().map(|x| x.target).collect(), 1.5 * 1.5 + s * s);
    }

    #[test]
    fn partition_laws() {
        let g = gen(1, 1.0);
        let b = sample_batch(&g, 10, 1, 0, Purpose::TrainSet, 100).unwrap();
        let parts = partition(&b, 2, 3).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts[0].is_disjoint(&parts[1]));
        let mut ids: Vec<u64> = parts.iter().flat_map(|p| p.ids().to_vec()).collect();
        ids.sort();
        assert_eq!(ids, (100..110).collect::<Vec<_>>());

        let one = partition(&b, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].id_set(), b.id_set());

        let all = partition(&b, 10, 3).unwrap();
        assert!(all.iter().all(|p| p.len() == 1));

        assert!(partition(&b, 3, 3).is_err());
        assert_eq!(partition(&b, 2, 3).unwrap(), parts);
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_valid_csv() {
        let f = write_tmp("x_1,x_2,y\n1,2,3\n-0.5,1e-3,0\n4,5,6\n");
        let b = load_dataset(f.path()).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.ids(), &[0, 1, 2]);
        assert_eq!(b.examples()[1].input, vec![-0.5, 1e-3]);
    }

    #[test]
    fn ragged_row_names_its_line() {
        let f = write_tmp("x_1,x_2,y\n1,2,3\n1,2\n");
        match load_dataset(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_empty_and_missing() {
        let f = write_tmp("x_1,y\n1,abc\n");
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("x_1,y\n");
        assert!(matches!(load_dataset(f.path()), Err(Error::InvalidArgument(_))));
        assert!(matches!(load_dataset("/nonexistent/data.csv"), Err(Error::Io { .. })));
        let f = write_tmp("a,y\n1,2\n");
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 1, .. })));
    }
}

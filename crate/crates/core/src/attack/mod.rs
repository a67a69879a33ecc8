//! The attack battery: fill-in-the-blank scoring, embedding probes, cosine
//! leakage and generation-based extraction.

pub mod cosine;
pub mod fib;
pub mod gen;
pub mod probe;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ConditionCatalog, ConditionMatrix, PatientId};
use crate::error::{Error, Result};

/// Fails unless the matrix columns are the catalog in catalog order.
pub fn check_aligned(matrix: &ConditionMatrix, catalog: &ConditionCatalog) -> Result<()> {
    let aligned = matrix.num_conditions() == catalog.len()
        && catalog
            .iter()
            .zip(matrix.conditions())
            .all(|(c, id)| &c.condition_id == id);
    if aligned {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "condition matrix columns do not follow the catalog".into(),
        ))
    }
}

/// Copy of `matrix` whose rows are randomly reassigned among patients.
/// Condition counts are preserved; the name/condition link is destroyed.
pub fn shuffle_patient_labels(matrix: &ConditionMatrix, seed: u64) -> ConditionMatrix {
    let mut order: Vec<usize> = (0..matrix.num_patients()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ConditionMatrix::with_ids(matrix.patients().to_vec(), matrix.conditions().to_vec());
    for (p, &src) in order.iter().enumerate() {
        for &c in matrix.positives_of(src) {
            out.set(p, c);
        }
    }
    out
}

/// Seeded split of `ids` into (train, test) with `test_fraction` of them,
/// rounded down, in the test half.
pub fn split_patients(ids: &[PatientId], test_fraction: f64, seed: u64) -> (Vec<PatientId>, Vec<PatientId>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ids.len() as f64) * test_fraction).floor() as usize;
    let test = shuffled.split_off(ids.len() - n_test);
    (shuffled, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{fixture, FixtureSpec, FrequencyShape};

    #[test]
    fn shuffle_keeps_counts() {
        let f = fixture(&FixtureSpec {
            patients: 30,
            conditions: 20,
            conditions_per_patient: 4,
            shape: FrequencyShape::Zipf { exponent: 1.0 },
            multi_piece: false,
            seed: 4,
        });
        let s = shuffle_patient_labels(&f.matrix, 9);
        assert_eq!(s.counts(), f.matrix.counts());
        assert_ne!(
            (0..30).map(|p| s.row(p)).collect::<Vec<_>>(),
            (0..30).map(|p| f.matrix.row(p)).collect::<Vec<_>>()
        );
        check_aligned(&s, &f.catalog).unwrap();
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let ids: Vec<PatientId> = (0..11).map(|i| PatientId(format!("p{i}"))).collect();
        let (tr, te) = split_patients(&ids, 0.5, 3);
        assert_eq!((tr.len(), te.len()), (6, 5));
        assert!(tr.iter().all(|p| !te.contains(p)));
        assert_eq!(split_patients(&ids, 0.5, 3), (tr, te));
    }
}

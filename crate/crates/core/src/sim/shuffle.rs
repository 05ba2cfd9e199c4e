use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Upload content after anonymization. There is no id field to fill.
#[derive(Clone, Debug, PartialEq)]
pub struct AnonymizedUpload<T> {
    pub content: T,
}

/// Drops the client id from every upload and returns the contents in a
/// uniformly random order.
pub fn shuffle_and_strip<T, R: Rng + ?Sized>(
    uploads: Vec<(usize, T)>,
    rng: &mut R,
) -> Result<Vec<AnonymizedUpload<T>>> {
    if uploads.is_empty() {
        return Err(Error::invalid("nothing to shuffle"));
    }
    let mut out: Vec<AnonymizedUpload<T>> = uploads
        .into_iter()
        .map(|(_, content)| AnonymizedUpload { content })
        .collect();
    out.shuffle(rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use std::collections::HashMap;

    #[test]
    fn single_upload_keeps_content() {
        let out = shuffle_and_strip(vec![(42, "z")], &mut rng_for(0, "t", &[])).unwrap();
        assert_eq!(out, vec![AnonymizedUpload { content: "z" }]);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(shuffle_and_strip(Vec::<(usize, u8)>::new(), &mut rng_for(0, "t", &[])).is_err());
    }

    #[test]
    fn contents_are_preserved_as_a_multiset() {
        let mut rng = rng_for(1, "multiset", &[]);
        for trial in 0..1000u64 {
            let n = 1 + (trial % 17) as usize;
            let uploads: Vec<(usize, u64)> = (0..n).map(|i| (i, rng.gen_range(0..5))).collect();
            let mut before: Vec<u64> = uploads.iter().map(|u| u.1).collect();
            let mut after: Vec<u64> = shuffle_and_strip(uploads, &mut rng)
                .unwrap()
                .into_iter()
                .map(|a| a.content)
                .collect();
            before.sort_unstable();
            after.sort_unstable();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn orders_are_uniform() {
        let mut rng = rng_for(2, "uniform", &[]);
        let trials = 60_000;
        let mut freq: HashMap<Vec<char>, usize> = HashMap::new();
        for _ in 0..trials {
            let out = shuffle_and_strip(vec![(0, 'a'), (1, 'b'), (2, 'c')], &mut rng).unwrap();
            *freq.entry(out.into_iter().map(|a| a.content).collect()).or_default() += 1;
        }
        assert_eq!(freq.len(), 6);
        for (order, n) in freq {
            let p = n as f64 / trials as f64;
            assert!((p - 1.0 / 6.0).abs() <= 0.01, "{order:?}: {p}");
        }
    }
}

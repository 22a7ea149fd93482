use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub generated_histogram: BTreeMap<usize, usize>,
    pub test_histogram: BTreeMap<usize, usize>,
    pub generated_mean: f64,
    pub test_mean: f64,
    /// `generated_mean - test_mean`.
    pub mean_difference: f64,
    /// Total variation distance between the two length distributions.
    pub total_variation: f64,
}

fn histogram(lengths: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &l in lengths {
        *h.entry(l).or_insert(0) += 1;
    }
    h
}

fn mean(lengths: &[usize]) -> f64 {
    lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
}

/// Word-length histograms of two sentence sets and how far apart they are.
/// Returns `None` if either set is empty.
pub fn length_report(generated: &[usize], test: &[usize]) -> Option<LengthReport> {
    if generated.is_empty() || test.is_empty() {
        return None;
    }
    let gh = histogram(generated);
    let th = histogram(test);
    let (gn, tn) = (generated.len() as f64, test.len() as f64);
    let keys: std::collections::BTreeSet<usize> = gh.keys().chain(th.keys()).copied().collect();
    let tv = 0.5
        * keys
            .iter()
            .map(|k| {
                let p = *gh.get(k).unwrap_or(&0) as f64 / gn;
                let q = *th.get(k).unwrap_or(&0) as f64 / tn;
                (p - q).abs()
            })
            .sum::<f64>();
    let (gm, tm) = (mean(generated), mean(test));
    Some(LengthReport {
        generated_histogram: gh,
        test_histogram: th,
        generated_mean: gm,
        test_mean: tm,
        mean_difference: gm - tm,
        total_variation: tv,
    })
}

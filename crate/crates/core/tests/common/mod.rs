#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use varisk::data::{Cell, Dataset, Feature, FeatureVector, Label, Schema};
use varisk::seeding;

pub fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn mixed_schema() -> Schema {
    Schema::new(
        vec![
            Feature::continuous("age"),
            Feature::nominal("nyha", ["I", "II", "III"]),
            Feature::continuous("lvwt"),
            Feature::nominal("syncope", ["no", "yes"]),
        ],
        "var",
    )
    .unwrap()
}

/// Random mixed-type cohort with at least three rows of each class. VAr rows
/// are shifted so models have something to learn.
pub fn mixed(seed: u64, n: usize, missing_rate: f64) -> Dataset {
    let mut rng = seeding::rng(seed);
    let rows = (0..n.max(6))
        .map(|i| {
            let var = i < 3 || (i >= 6 && rng.random_bool(0.3));
            let y = var as u8 as f64;
            let values = vec![
                Cell::Number(50.0 + 10.0 * gauss(&mut rng) + 5.0 * y),
                Cell::Category(if var && rng.random_bool(0.5) { 2 } else { rng.random_range(0..3) }),
                Cell::Number((15.0 + 4.0 * gauss(&mut rng) + 2.0 * y).round()),
                Cell::Category(rng.random_range(0..2)),
            ];
            let values = values
                .into_iter()
                .map(|c| if rng.random_bool(missing_rate) { Cell::Missing } else { c })
                .collect();
            FeatureVector::new(values, Some(if var { Label::Var } else { Label::NonVar }))
        })
        .collect();
    Dataset::new(mixed_schema(), rows, format!("mixed({seed})")).unwrap()
}

pub fn continuous_column(d: &Dataset, j: usize) -> Vec<f64> {
    d.column(j).filter_map(Cell::number).collect()
}

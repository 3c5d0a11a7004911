use crate::data::{validate_dataset, Dataset, RawRow};

pub const TABLE1_Y: [f64; 16] = [
    -0.90, 0.18, 1.59, -1.13, -0.08, 0.13, 0.71, -0.24, 2.98, 0.86, 1.42, 1.98, 0.61, -0.04, 2.78,
    -1.31,
];

pub fn table1_rows() -> Vec<RawRow> {
    TABLE1_Y
        .iter()
        .enumerate()
        .map(|(i, &v)| RawRow::new((i + 1).to_string(), (i >= 8) as i64, v))
        .collect()
}

pub fn table1() -> Dataset {
    validate_dataset(table1_rows()).unwrap()
}

//! Brute-force k-nearest-neighbour retrieval over crop features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::FeatureTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub row: usize,
    pub distance: f64,
}

/// The `k` rows closest to `query_row` (excluding itself), nearest first,
/// lower row index first on equal distance.
pub fn retrieve_neighbors(
    features: &FeatureTensor,
    query_row: usize,
    k: usize,
) -> Result<Vec<Neighbor>> {
    let (m, _) = features.matrix_dims()?;
    if query_row >= m {
        return Err(Error::InvalidArgument(format!(
            "query row {query_row} out of range for {m} rows"
        )));
    }
    if k == 0 || k + 1 > m {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range 1..={}",
            m.saturating_sub(1)
        )));
    }
    let query = features.row(query_row);
    let mut all: Vec<Neighbor> = (0..m)
        .filter(|&r| r != query_row)
        .map(|row| {
            let d2: f64 = features
                .row(row)
                .iter()
                .zip(query)
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            Neighbor {
                row,
                distance: d2.sqrt(),
            }
        })
        .collect();
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.row.cmp(&b.row)));
    all.truncate(k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f32]) -> FeatureTensor {
        let rows: Vec<[f32; 1]> = xs.iter().map(|&x| [x]).collect();
        FeatureTensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn duplicate_comes_first() {
        let f = line(&[4.0, 1.0, 4.0, 3.0]);
        let out = retrieve_neighbors(&f, 0, 2).unwrap();
        assert_eq!(
            out[0],
            Neighbor {
                row: 2,
                distance: 0.0
            }
        );
        assert_eq!(out[1].row, 3);
    }

    #[test]
    fn collinear_points() {
        let f = line(&[0.0, 1.0, 10.0]);
        let out = retrieve_neighbors(&f, 1, 1).unwrap();
        assert_eq!(
            out,
            vec![Neighbor {
                row: 0,
                distance: 1.0
            }]
        );
    }

    #[test]
    fn all_others_sorted() {
        let f = line(&[0.0, 5.0, -1.0, 2.0, -2.0]);
        let out = retrieve_neighbors(&f, 0, 4).unwrap();
        let rows: Vec<usize> = out.iter().map(|n| n.row).collect();
        // distances 5, 1, 2, 2 -> ties broken by row
        assert_eq!(rows, vec![2, 3, 4, 1]);
    }

    #[test]
    fn k_out_of_range() {
        let f = line(&[0.0, 1.0, 2.0]);
        assert!(retrieve_neighbors(&f, 0, 0).is_err());
        assert!(retrieve_neighbors(&f, 0, 3).is_err());
        assert!(retrieve_neighbors(&f, 3, 1).is_err());
    }
}

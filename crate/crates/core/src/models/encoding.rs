use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal encoding of an atom's position in the input list:
/// `sin(i / 10000^(2k/d))` at even slots, `cos` of the same at odd ones.
pub fn sinusoidal_encoding(atom_index: usize, d_model: usize) -> Result<Vec<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::config(format!(
            "sinusoidal encoding needs an even width, got {d_model}"
        )));
    }
    let mut pe = vec![0.0; d_model];
    for k in 0..d_model / 2 {
        let angle = atom_index as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
        pe[2 * k] = angle.sin();
        pe[2 * k + 1] = angle.cos();
    }
    Ok(pe)
}

/// `[n_structures·n_max, d]` table whose row `b·n_max + i` encodes index `i`.
pub(crate) fn index_table(n_structures: usize, n_max: usize, d_model: usize) -> Result<Tensor> {
    let block: Vec<f64> = (0..n_max)
        .map(|i| sinusoidal_encoding(i, d_model))
        .collect::<Result<Vec<_>>>()?
        .concat();
    Tensor::new(
        vec![n_structures * n_max, d_model],
        block.repeat(n_structures),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_zero_alternates() {
        assert_eq!(
            sinusoidal_encoding(0, 6).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn width_four_index_one() {
        let pe = sinusoidal_encoding(1, 4).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn distinct_indices_and_odd_width() {
        let a = sinusoidal_encoding(0, 8).unwrap();
        let b = sinusoidal_encoding(1, 8).unwrap();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(dist > 0.0);
        assert!(matches!(sinusoidal_encoding(0, 5), Err(Error::Config(_))));
    }

    #[test]
    fn table_repeats_per_structure() {
        let t = index_table(2, 3, 4).unwrap();
        assert_eq!(t.shape(), &[6, 4]);
        assert_eq!(t.data()[..12], t.data()[12..]);
    }
}

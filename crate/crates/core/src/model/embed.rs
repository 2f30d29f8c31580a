use crate::autodiff::Tensor;

/// Sinusoidal embedding of integer timesteps: `[sin(t f_i), cos(t f_i)]` with
/// geometric frequencies `f_i = 10000^(-i / (dim/2))`.
pub fn time_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let tf = ti as f64;
        data.extend(freqs.iter().map(|f| (tf * f).sin()));
        data.extend(freqs.iter().map(|f| (tf * f).cos()));
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Tensor::from_vec(vec![t.len(), dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_zero_time() {
        let e = time_embedding(&[0, 999], 32);
        assert_eq!(e.shape(), &[2, 32]);
        assert!(e.row(0)[..16].iter().all(|&v| v == 0.0));
        assert!(e.row(0)[16..].iter().all(|&v| v == 1.0));
        assert_ne!(e.row(0), e.row(1));
    }
}

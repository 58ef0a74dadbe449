//! Sinusoidal embedding of the diffusion step index.

use ndarray::Array1;

use super::NetworkError;

/// Maps step `t >= 1` to a width-`width` vector with
/// `v[2j] = sin(t / 10000^(2j/width))` and `v[2j+1] = cos(...)`.
/// `width` must be even so sine/cosine pairs line up.
pub fn step_embedding(t: usize, width: usize) -> Result<Array1<f64>, NetworkError> {
    if width == 0 || width % 2 != 0 {
        return Err(NetworkError::OddEmbeddingWidth(width));
    }
    if t == 0 {
        return Err(NetworkError::StepIndexZero);
    }
    let mut v = Array1::zeros(width);
    let tf = t as f64;
    for j in 0..width / 2 {
        let freq = 10_000f64.powf(2.0 * j as f64 / width as f64);
        v[2 * j] = (tf / freq).sin();
        v[2 * j + 1] = (tf / freq).cos();
    }
    Ok(v)
}

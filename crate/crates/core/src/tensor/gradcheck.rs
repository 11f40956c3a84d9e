use super::{Real, Tensor};
use crate::error::Result;

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_grad<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> Result<T>,
    x: &Tensor<T>,
    h: T,
) -> Result<Tensor<T>> {
    let two_h = h + h;
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `max_i |ad_i - fd_i| / (|fd_i| + 1e-8)`.
pub fn max_relative_error<T: Real>(ad: &Tensor<T>, fd: &Tensor<T>) -> f64 {
    assert_eq!(ad.shape(), fd.shape(), "gradient shapes differ");
    ad.data()
        .iter()
        .zip(fd.data())
        .map(|(a, f)| {
            let (a, f) = (a.as_f64(), f.as_f64());
            (a - f).abs() / (f.abs() + 1e-8)
        })
        .fold(0.0, f64::max)
}

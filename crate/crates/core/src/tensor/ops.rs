//! Forward math of every differentiable op, and the [`Ops`] trait that lets
//! layer code run either eagerly or on a recording [`Graph`](super::Graph).

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Abs,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Which operand (if any) is a per-channel `[C]` vector broadcast over NCHW.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    None,
    Lhs,
    Rhs,
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn unary<T: Real>(op: UnaryOp, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(match op {
        UnaryOp::Sigmoid => x.map(sigmoid),
        UnaryOp::Tanh => x.map(T::tanh),
        UnaryOp::Exp => x.map(T::exp),
        UnaryOp::Log => {
            if let Some(bad) = x.data().iter().find(|v| **v <= T::zero()) {
                return Err(Error::NonPositiveLog {
                    op: "log",
                    value: bad.as_f64(),
                });
            }
            x.map(T::ln)
        }
        UnaryOp::Abs => x.map(T::abs),
        UnaryOp::Neg => x.map(|v| -v),
    })
}

pub(crate) fn broadcast_kind<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Broadcast> {
    let per_channel = |full: &Tensor<T>, vec: &Tensor<T>| {
        full.shape().len() == 4 && vec.shape() == [full.shape()[1]]
    };
    if a.shape() == b.shape() {
        Ok(Broadcast::None)
    } else if per_channel(a, b) {
        Ok(Broadcast::Rhs)
    } else if per_channel(b, a) {
        Ok(Broadcast::Lhs)
    } else {
        Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn apply_binary<T: Real>(op: BinaryOp, a: T, b: T) -> T {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
    }
}

pub(crate) fn binary<T: Real>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Broadcast)> {
    let kind = broadcast_kind(binary_name(op), a, b)?;
    let out = match kind {
        Broadcast::None => a.zip_map(b, binary_name(op), |x, y| apply_binary(op, x, y))?,
        Broadcast::Rhs => {
            let (_, c, h, w) = a.dims4()?;
            let hw = h * w;
            let bv = b.data();
            Tensor::from_fn(a.shape().to_vec(), |i| {
                apply_binary(op, a.data()[i], bv[(i / hw) % c])
            })
        }
        Broadcast::Lhs => {
            let (_, c, h, w) = b.dims4()?;
            let hw = h * w;
            let av = a.data();
            Tensor::from_fn(b.shape().to_vec(), |i| {
                apply_binary(op, av[(i / hw) % c], b.data()[i])
            })
        }
    };
    Ok((out, kind))
}

pub(crate) fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

/// Geometry of a same-padded convolution, validating the operand shapes.
pub(crate) fn conv_geom<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<ConvGeom> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, k) = match w.shape()[..] {
        [co, ci, k1, k2] if k1 == k2 => (co, ci, k1),
        [co, ci] => (co, ci, 1),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("weight shape {:?} is not [Cout, Cin, k, k]", w.shape()),
            ))
        }
    };
    if k % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size {k} is even")));
    }
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{cout}]", b.shape()),
            ));
        }
    }
    Ok(ConvGeom {
        n,
        cin,
        cout,
        h,
        w: wd,
        k,
    })
}

pub(crate) fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = conv_geom(x, w, b)?;
    let out = kernels::conv2d_forward(&g, x.data(), w.data(), b.map(|b| b.data()));
    Ok((Tensor::new(vec![g.n, g.cout, g.h, g.w], out)?, g))
}

pub(crate) fn squeeze<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial { h, w });
    }
    Tensor::new(
        vec![n, 4 * c, h / 2, w / 2],
        kernels::squeeze(n, c, h, w, x.data()),
    )
}

pub(crate) fn unsqueeze<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if c % 4 != 0 {
        return Err(Error::shape(
            "unsqueeze",
            format!("channel count {c} is not a multiple of 4"),
        ));
    }
    Tensor::new(
        vec![n, c / 4, h * 2, w * 2],
        kernels::unsqueeze(n, c, h, w, x.data()),
    )
}

pub(crate) fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{} of {c} channels", start + len),
        ));
    }
    Tensor::new(
        vec![n, len, h, w],
        kernels::slice_channels(n, c, h * w, x.data(), start, len),
    )
}

pub(crate) fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Tensor::new(
        vec![n, ca + cb, h, w],
        kernels::concat_channels(n, ca, cb, h * w, a.data(), b.data()),
    )
}

/// The op vocabulary layer code is written against.
///
/// [`Eager`] evaluates immediately and keeps nothing; [`Graph`](super::Graph)
/// records every op so that gradients can be taken afterwards.
pub trait Ops<T: Real> {
    type V: Clone;

    /// A value that never receives gradients.
    fn input(&self, t: Tensor<T>) -> Self::V;
    /// A learnable parameter.
    fn param(&self, t: &Tensor<T>) -> Self::V;
    fn to_tensor(&self, v: &Self::V) -> Result<Tensor<T>>;
    fn shape_of(&self, v: &Self::V) -> Result<Vec<usize>>;

    fn unary(&self, op: UnaryOp, x: &Self::V) -> Result<Self::V>;
    fn binary(&self, op: BinaryOp, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&self, x: &Self::V, s: T) -> Result<Self::V>;
    fn add_scalar(&self, x: &Self::V, s: T) -> Result<Self::V>;
    /// Same-padded 2-D cross-correlation; `w` is `[Cout, Cin, k, k]` with odd `k`.
    fn conv2d(&self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V>;
    /// Per-pixel channel mixing `y[:, :, i, j] = W x[:, :, i, j]` with `W` of shape `[C, C]`.
    fn channel_mix(&self, x: &Self::V, w: &Self::V) -> Result<Self::V>;
    fn squeeze(&self, x: &Self::V) -> Result<Self::V>;
    fn unsqueeze(&self, x: &Self::V) -> Result<Self::V>;
    fn slice_channels(&self, x: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn concat_channels(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sum(&self, x: &Self::V) -> Result<Self::V>;
    fn mean(&self, x: &Self::V) -> Result<Self::V>;

    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(BinaryOp::Add, a, b)
    }
    fn sub(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(BinaryOp::Sub, a, b)
    }
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(BinaryOp::Mul, a, b)
    }
    fn div(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(BinaryOp::Div, a, b)
    }
    fn sigmoid(&self, x: &Self::V) -> Result<Self::V> {
        self.unary(UnaryOp::Sigmoid, x)
    }
    fn tanh(&self, x: &Self::V) -> Result<Self::V> {
        self.unary(UnaryOp::Tanh, x)
    }
    fn exp(&self, x: &Self::V) -> Result<Self::V> {
        self.unary(UnaryOp::Exp, x)
    }
    fn log(&self, x: &Self::V) -> Result<Self::V> {
        self.unary(UnaryOp::Log, x)
    }
    fn abs(&self, x: &Self::V) -> Result<Self::V> {
        self.unary(UnaryOp::Abs, x)
    }
}

/// Immediate evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Real> Ops<T> for Eager {
    type V = Tensor<T>;

    fn input(&self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn param(&self, t: &Tensor<T>) -> Tensor<T> {
        t.clone()
    }

    fn to_tensor(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(v.clone())
    }

    fn shape_of(&self, v: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(v.shape().to_vec())
    }

    fn unary(&self, op: UnaryOp, x: &Tensor<T>) -> Result<Tensor<T>> {
        unary(op, x)
    }

    fn binary(&self, op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        binary(op, a, b).map(|(t, _)| t)
    }

    fn scale(&self, x: &Tensor<T>, s: T) -> Result<Tensor<T>> {
        Ok(x.map(|v| v * s))
    }

    fn add_scalar(&self, x: &Tensor<T>, s: T) -> Result<Tensor<T>> {
        Ok(x.map(|v| v + s))
    }

    fn conv2d(&self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        conv2d(x, w, b).map(|(t, _)| t)
    }

    fn channel_mix(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
        check_mix_weight(w)?;
        conv2d(x, w, None).map(|(t, _)| t)
    }

    fn squeeze(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        squeeze(x)
    }

    fn unsqueeze(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        unsqueeze(x)
    }

    fn slice_channels(&self, x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        slice_channels(x, start, len)
    }

    fn concat_channels(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        concat_channels(a, b)
    }

    fn sum(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(x.sum()?))
    }

    fn mean(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(x.mean()?))
    }
}

pub(crate) fn check_mix_weight<T: Real>(w: &Tensor<T>) -> Result<()> {
    match w.shape() {
        [a, b] if a == b => Ok(()),
        s => Err(Error::shape(
            "channel_mix",
            format!("weight must be square [C, C], got {s:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let e = Eager;
        let s = e.add(&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
        assert_eq!(e.sigmoid(&t(&[1], &[0.0])).unwrap().data(), &[0.5]);
        let x = t(&[1, 2, 1, 1], &[3.0, 5.0]);
        let m = e.mul(&x, &t(&[2], &[2.0, 10.0])).unwrap();
        assert_eq!(m.data(), &[6.0, 50.0]);
        // broadcasting is symmetric for commutative ops
        let m2 = e.mul(&t(&[2], &[2.0, 10.0]), &x).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn elementwise_errors() {
        let e = Eager;
        assert!(matches!(
            e.add(&t(&[2], &[1.0, 2.0]), &t(&[3], &[1.0, 2.0, 3.0])),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            e.log(&t(&[2], &[1.0, 0.0])),
            Err(Error::NonPositiveLog { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }

    #[test]
    fn conv_identity_and_constant() {
        let e = Eager;
        let x = Tensor::<f64>::from_fn(vec![1, 2, 3, 3], |i| i as f64 * 0.5);
        let mut w = Tensor::zeros(vec![2, 2, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let y = e.conv2d(&x, &w, Some(&Tensor::zeros(vec![2]))).unwrap();
        assert_eq!(y, x);

        let w3 = Tensor::zeros(vec![1, 2, 3, 3]);
        let y = e.conv2d(&x, &w3, Some(&t(&[1], &[0.7]))).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &[f64], h: usize, w: usize, k: &[f64; 9]) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (y, xx) = (i + dy, j + dx);
                        if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                            acc += k[((dy + 1) * 3 + dx + 1) as usize]
                                * x[(y * w as isize + xx) as usize];
                        }
                    }
                }
                out[(i * w as isize + j) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn conv3x3_matches_nested_loops() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = [1.0 / 9.0; 9];
        let w = Tensor::new(vec![1, 1, 3, 3], k.to_vec()).unwrap();
        let y = Eager.conv2d(&x, &w, Some(&t(&[1], &[0.0]))).unwrap();
        let expect = naive_conv(x.data(), 2, 2, &k);
        // every output sees all four pixels: 10/9
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
            assert!((a - 10.0 / 9.0).abs() < 1e-15);
        }

        let x = Tensor::<f64>::from_fn(vec![1, 1, 5, 4], |i| ((i * 7) % 11) as f64 - 3.0);
        let k: [f64; 9] = std::array::from_fn(|i| (i as f64 - 4.0) * 0.3);
        let w = Tensor::new(vec![1, 1, 3, 3], k.to_vec()).unwrap();
        let y = Eager.conv2d(&x, &w, None).unwrap();
        let expect = naive_conv(x.data(), 5, 4, &k);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 2, 2]);
        let w = Tensor::<f64>::zeros(vec![1, 3, 3, 3]);
        assert!(Eager.conv2d(&x, &w, None).is_err());
    }

    #[test]
    fn squeeze_shapes_and_errors() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 4, 4]);
        assert_eq!(squeeze(&x).unwrap().shape(), &[1, 4, 2, 2]);
        let odd = Tensor::<f64>::zeros(vec![1, 1, 3, 4]);
        assert!(matches!(squeeze(&odd), Err(Error::OddSpatial { h: 3, w: 4 })));
    }
}

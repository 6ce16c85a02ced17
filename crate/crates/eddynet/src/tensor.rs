use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rank-4 array in `(batch, channel, height, width)` order.
///
/// Storage is a single contiguous buffer; the flat index of element
/// `(n, c, y, x)` is `((n * C + c) * H + y) * W + x`, i.e. batch-major, then
/// channel, then row, then column. Every file format and every kernel in this
/// crate assumes that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: T) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    /// Wrap an existing buffer; fails unless `data.len() == n*c*h*w`.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!("{} elements for ({n},{c},{h},{w})", n * c * h * w),
                data.len(),
            ));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.idx(n, c, y, x);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Contiguous `h*w` view of one `(batch, channel)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.idx(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let start = self.idx(n, c, 0, 0);
        let end = start + self.h * self.w;
        &mut self.data[start..end]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error unless every element is finite; `context` names the producing op.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Element-wise precision change, keeping the iteration order.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Concatenate along the channel axis. Spatial and batch dims must agree.
    pub fn concat_channels(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::shape(
                "concat_channels",
                format!("({},*,{},{})", a.n, a.h, a.w),
                format!("({},*,{},{})", b.n, b.h, b.w),
            ));
        }
        let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
        for n in 0..a.n {
            for c in 0..a.c {
                out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
            }
            for c in 0..b.c {
                out.plane_mut(n, a.c + c).copy_from_slice(b.plane(n, c));
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tensor4::concat_channels`]: split after `left_channels`.
    pub fn split_channels(&self, left_channels: usize) -> (Tensor4<T>, Tensor4<T>) {
        assert!(left_channels <= self.c, "split point exceeds channel count");
        let right_channels = self.c - left_channels;
        let mut a = Tensor4::zeros(self.n, left_channels, self.h, self.w);
        let mut b = Tensor4::zeros(self.n, right_channels, self.h, self.w);
        for n in 0..self.n {
            for c in 0..left_channels {
                a.plane_mut(n, c).copy_from_slice(self.plane(n, c));
            }
            for c in 0..right_channels {
                b.plane_mut(n, c).copy_from_slice(self.plane(n, left_channels + c));
            }
        }
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_is_batch_major_then_channel_row_column() {
        let mut t = Tensor4::<f32>::zeros(2, 3, 4, 5);
        t.set(1, 2, 3, 4, 7.0);
        // ((1*3 + 2)*4 + 3)*5 + 4 = 119
        assert_eq!(t.as_slice()[119], 7.0);
        assert_eq!(t.get(1, 2, 3, 4), 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor4::<f32>::from_vec(1, 1, 2, 2, vec![0.0; 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor4::from_vec(1, 2, 2, 2, (0..8).map(|i| i as f32).collect()).unwrap();
        let b = Tensor4::from_vec(1, 1, 2, 2, (8..12).map(|i| i as f32).collect()).unwrap();
        let cat = Tensor4::concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), (1, 3, 2, 2));
        let (a2, b2) = cat.split_channels(2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let mut t = Tensor4::<f32>::zeros(1, 1, 1, 2);
        assert!(t.ensure_finite("test").is_ok());
        t.set(0, 0, 0, 1, f32::NAN);
        assert!(t.ensure_finite("test").is_err());
    }
}

//! Minimal 4D tensors (channels, depth, height, width) for the U-Net.
//!
//! Generic over f32/f64: training runs in f32, gradient checks instantiate
//! the same code at f64.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + std::fmt::Debug
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn maximum(self, other: Self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite_value(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn maximum(self, other: Self) -> Self {
        self.max(other)
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn maximum(self, other: Self) -> Self {
        self.max(other)
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

/// Dense (C, D, H, W) tensor, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, d: usize, h: usize, w: usize) -> Self {
        Self { c, d, h, w, data: vec![T::ZERO; c * d * h * w] }
    }

    pub fn from_vec(c: usize, d: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * d * h * w);
        Self { c, d, h, w, data }
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, z: usize, y: usize, x: usize) -> usize {
        ((c * self.d + z) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, z: usize, y: usize, x: usize) -> T {
        self.data[self.idx(c, z, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial();
        &self.data[c * n..(c + 1) * n]
    }

    /// Stack two tensors along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!((a.d, a.h, a.w), (b.d, b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Self { c: a.c + b.c, d: a.d, h: a.h, w: a.w, data }
    }

    /// Inverse of concat: split into the first c1 and remaining channels.
    pub fn split_channels(&self, c1: usize) -> (Self, Self) {
        let n = self.spatial();
        let a = Self { c: c1, d: self.d, h: self.h, w: self.w, data: self.data[..c1 * n].to_vec() };
        let b = Self {
            c: self.c - c1,
            d: self.d,
            h: self.h,
            w: self.w,
            data: self.data[c1 * n..].to_vec(),
        };
        (a, b)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_value())
    }
}

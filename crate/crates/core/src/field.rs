//! 2D scalar fields and the paired (U, V) system state.

use crate::error::{CoreError, Result};

/// Row-major nx x ny grid of reals. Index (i, j) maps to `data[i * ny + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Field {
            nx,
            ny,
            data: vec![0.0; nx * ny],
        }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                data.push(f(i, j));
            }
        }
        Field { nx, ny, data }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(CoreError::DimMismatch {
                expected: nx * ny,
                got: data.len(),
                context: "field payload",
            });
        }
        Ok(Field { nx, ny, data })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ny + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ny + j] = v;
    }

    /// Clamped-index read: out-of-range neighbors mirror the nearest edge value.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize) -> f64 {
        let i = i.clamp(0, self.nx as isize - 1) as usize;
        let j = j.clamp(0, self.ny as isize - 1) as usize;
        self.data[i * self.ny + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }
}

/// System state at one time step: activator U and inhibitor V on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub u: Field,
    pub v: Field,
}

impl FieldPair {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        FieldPair {
            u: Field::zeros(nx, ny),
            v: Field::zeros(nx, ny),
        }
    }

    pub fn new(u: Field, v: Field) -> Result<Self> {
        if u.nx() != v.nx() || u.ny() != v.ny() {
            return Err(CoreError::DimMismatch {
                expected: u.nx() * u.ny(),
                got: v.nx() * v.ny(),
                context: "U/V field pair",
            });
        }
        Ok(FieldPair { u, v })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.u.nx()
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.u.ny()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

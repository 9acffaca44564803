//! Shared-ownership closure wrappers used where a spec carries user code
//! (custom drifts, Lyapunov functions, controls).
//!
//! They implement `Debug` and refuse to (de)serialize, so specs that hold them
//! can still derive serde; only the closure-free variants round-trip.

use nalgebra::DMatrix;
use serde::{de, ser, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::sync::Arc;

macro_rules! closure_type {
    ($(#[$m:meta])* $name:ident, $sig:ty) => {
        $(#[$m])*
        #[derive(Clone)]
        pub struct $name(pub Arc<$sig>);

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(concat!(stringify!($name), "(<closure>)"))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, _: S) -> Result<S::Ok, S::Error> {
                Err(ser::Error::custom(concat!(stringify!($name), " holds a closure and cannot be serialized")))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(_: D) -> Result<Self, D::Error> {
                Err(de::Error::custom(concat!(stringify!($name), " holds a closure and cannot be deserialized")))
            }
        }
    };
}

closure_type!(
    /// `x ↦ f(x)`.
    ScalarFn,
    dyn Fn(&[f64]) -> f64 + Send + Sync
);
closure_type!(
    /// Writes `F(x)` into the output slice.
    VectorFn,
    dyn Fn(&[f64], &mut [f64]) + Send + Sync
);
closure_type!(
    /// `x ↦ M(x)`.
    MatrixFn,
    dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync
);
closure_type!(
    /// Jump kernel `(x, v) ↦ k(x, v)` written into the output slice.
    KernelFn,
    dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync
);
closure_type!(
    /// Draws a random vector into the output slice.
    SamplerFn,
    dyn Fn(&mut dyn rand::RngCore, &mut [f64]) + Send + Sync
);

impl ScalarFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl VectorFn {
    pub fn new(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl MatrixFn {
    pub fn new(f: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl KernelFn {
    pub fn new(f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl SamplerFn {
    pub fn new(f: impl Fn(&mut dyn rand::RngCore, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

/// Row-major `Vec<Vec<f64>>` serde representation for `DMatrix`.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        to_matrix(&rows).map_err(de::Error::custom)
    }

    pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

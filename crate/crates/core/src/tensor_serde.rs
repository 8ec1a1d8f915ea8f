//! `{"shape": [...], "data": [...]}` row-major encoding for ndarray fields.

use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn to_mat<E: serde::de::Error>(t: Tensor) -> Result<Array2<f64>, E> {
    match t.shape[..] {
        [r, c] => Array2::from_shape_vec((r, c), t.data).map_err(E::custom),
        _ => Err(E::custom(format!("expected a 2-d shape, got {:?}", t.shape))),
    }
}

fn from_mat(a: &Array2<f64>) -> Tensor {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.iter().copied().collect(),
    }
}

pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        from_mat(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        to_mat(Tensor::deserialize(d)?)
    }
}

pub mod mats {
    use super::*;

    pub fn serialize<S: Serializer>(a: &[Array2<f64>], s: S) -> Result<S::Ok, S::Error> {
        a.iter().map(from_mat).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Array2<f64>>, D::Error> {
        Vec::<Tensor>::deserialize(d)?.into_iter().map(to_mat).collect()
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        Tensor {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let t = Tensor::deserialize(d)?;
        if t.shape != [t.data.len()] {
            return Err(D::Error::custom(format!("bad vector shape {:?}", t.shape)));
        }
        Ok(Array1::from(t.data))
    }
}

//! Conversions between real `n × 4d` matrices laid out as `[r | x | y | z]`
//! column blocks and quaternion matrices `n × d`.

use crate::error::{Error, Result};
use crate::qtensor::QTensor;
use crate::tensor::Tensor;

pub fn real_to_quaternion(v: &Tensor) -> Result<QTensor> {
    let (n, width) = v.dims2();
    if width % 4 != 0 {
        return Err(Error::shape(format!(
            "real width {width} is not a multiple of 4"
        )));
    }
    let d = width / 4;
    let comps = std::array::from_fn(|c| {
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend_from_slice(&v.row(i)[c * d..(c + 1) * d]);
        }
        out
    });
    let shape = if v.shape().len() == 1 {
        vec![d]
    } else {
        vec![n, d]
    };
    QTensor::from_components(&shape, comps)
}

pub fn quaternion_to_real(q: &QTensor) -> Result<Tensor> {
    let (n, d) = q.dims2();
    let mut data = Vec::with_capacity(n * 4 * d);
    for i in 0..n {
        for c in 0..4 {
            data.extend_from_slice(&q.component(c)[i * d..(i + 1) * d]);
        }
    }
    Tensor::matrix(n, 4 * d, data)
}

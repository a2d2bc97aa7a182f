use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean over H×W for every (sample, channel): `N×C×H×W -> N×C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h == 0 || w == 0 {
        return Err(dim_err!("global pooling over empty spatial extent"));
    }
    let plane = h * w;
    let z = T::from_usize(plane).unwrap();
    let out = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() / z)
        .collect();
    Tensor::from_vec(&[n, c], out)
}

/// Spreads each pooled gradient uniformly over its H×W plane.
pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(dim_err!("pool input must be NCHW, got {:?}", input_shape));
    };
    if grad_out.shape() != [n, c] {
        return Err(dim_err!(
            "pool grad shape {:?} does not match {:?}",
            grad_out.shape(),
            [n, c]
        ));
    }
    let plane = h * w;
    let z = T::from_usize(plane).unwrap();
    let mut out = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g / z, plane));
    }
    Tensor::from_vec(input_shape, out)
}

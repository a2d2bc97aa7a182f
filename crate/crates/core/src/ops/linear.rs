use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

fn check<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<(usize, usize, usize)> {
    let (n, cin) = input.dims2()?;
    let (win, dout) = weight.dims2()?;
    if win != cin {
        return Err(dim_err!(
            "fully connected input has {cin} features, weight expects {win}"
        ));
    }
    if bias.len() != dout {
        return Err(dim_err!(
            "bias has {} entries, weight produces {dout}",
            bias.len()
        ));
    }
    Ok((n, cin, dout))
}

/// `out = input · weight + bias` with `input: N×C`, `weight: C×D`, `bias: D`.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (n, cin, dout) = check(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * dout);
    for r in 0..n {
        let mut row = bias.to_vec();
        for (i, &xv) in x[r * cin..(r + 1) * cin].iter().enumerate() {
            for (o, &wv) in row.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *o = *o + xv * wv;
            }
        }
        out.extend(row);
    }
    Tensor::from_vec(&[n, dout], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (n, cin) = input.dims2()?;
    let (win, dout) = weight.dims2()?;
    if win != cin || grad_out.shape() != [n, dout] {
        return Err(dim_err!(
            "fully connected backward: input {:?}, weight {:?}, grad {:?}",
            input.shape(),
            weight.shape(),
            grad_out.shape()
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * cin];
    let mut dw = vec![T::zero(); cin * dout];
    let mut db = vec![T::zero(); dout];
    for r in 0..n {
        let grow = &g[r * dout..(r + 1) * dout];
        for (b, &gv) in db.iter_mut().zip(grow) {
            *b = *b + gv;
        }
        for i in 0..cin {
            let xv = x[r * cin + i];
            let wrow = &w[i * dout..(i + 1) * dout];
            let dwrow = &mut dw[i * dout..(i + 1) * dout];
            let mut acc = T::zero();
            for o in 0..dout {
                acc = acc + grow[o] * wrow[o];
                dwrow[o] = dwrow[o] + xv * grow[o];
            }
            dx[r * cin + i] = acc;
        }
    }
    Ok((
        Tensor::from_vec(&[n, cin], dx)?,
        Tensor::from_vec(&[cin, dout], dw)?,
        db,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_examples() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(fully_connected(&x, &eye, &[0.0, 0.0]).unwrap(), x);
        assert_eq!(
            fully_connected(&x, &eye, &[10.0, 10.0]).unwrap().data(),
            &[11.0, 12.0]
        );
        let x2 = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, -3.0, 4.0]).unwrap();
        let zero = Tensor::zeros(&[2, 3]);
        assert_eq!(
            fully_connected(&x2, &zero, &[1.0, 2.0, 3.0]).unwrap().data(),
            &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        let w = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            fully_connected(&x, &w, &[0.0, 0.0]),
            Err(crate::Error::Dimension(_))
        ));
    }
}

use crate::error::{shape_err, Result};
use crate::tensor::{GradFn, Tensor};

fn matmul(m: usize, k: usize, n: usize, a: &[f32], a_strides: (isize, isize), b: &[f32], b_strides: (isize, isize), c: &mut [f32]) {
    // SAFETY: operand slices cover the m×k, k×n and m×n extents described
    // by the strides, and `c` is a distinct allocation.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct LinearFn {
    x: Tensor,
    w: Tensor,
    b: Tensor,
}

impl GradFn for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.x, &self.w, &self.b]
    }
    fn backward(&self, g: &[f32], _out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (batch, din) = (self.x.shape()[0], self.x.shape()[1]);
        let dout = self.w.shape()[1];
        let dx = self.x.requires_grad().then(|| {
            let mut dx = vec![0f32; batch * din];
            let w = self.w.data();
            matmul(batch, dout, din, g, (dout as isize, 1), &w, (1, dout as isize), &mut dx);
            dx
        });
        let dw = self.w.requires_grad().then(|| {
            let mut dw = vec![0f32; din * dout];
            let x = self.x.data();
            matmul(din, batch, dout, &x, (1, din as isize), g, (dout as isize, 1), &mut dw);
            dw
        });
        let db = self.b.requires_grad().then(|| {
            (0..dout)
                .map(|j| (0..batch).map(|i| g[i * dout + j] as f64).sum::<f64>() as f32)
                .collect()
        });
        vec![dx, dw, db]
    }
}

/// Fully connected layer `x · w + b` with `x: [B, Din]`, `w: [Din, Dout]`,
/// `b: [Dout]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || b.numel() != ws[1] {
        return Err(shape_err(
            "linear",
            format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
        ));
    }
    let (batch, din, dout) = (xs[0], xs[1], ws[1]);
    let mut out = vec![0f32; batch * dout];
    matmul(batch, din, dout, &x.data(), (din as isize, 1), &w.data(), (dout as isize, 1), &mut out);
    let bias = b.data();
    for row in out.chunks_mut(dout) {
        row.iter_mut().zip(bias.iter()).for_each(|(o, b)| *o += b);
    }
    drop(bias);
    Ok(Tensor::from_op(
        vec![batch, dout],
        out,
        LinearFn {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
        },
    ))
}

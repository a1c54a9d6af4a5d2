use distilnas_tensor::{ops, Tensor};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_FLOOR: f32 = 1e-12;

/// One-hot `[B, K]` rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Ok(Tensor::from_vec(&[labels.len(), classes], data)?)
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.ndim() != 2 {
        return Err(Error::Data(format!(
            "{op}: expected equal [B, K] shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean over rows of `-Σ_k truth_k · ln(max(p_k, 1e-12))`.
pub fn cross_entropy(p: &Tensor, truth: &Tensor) -> Result<Tensor> {
    same_shape("cross_entropy", p, truth)?;
    let rows = p.shape()[0] as f32;
    let picked = ops::mul(&ops::ln_clamped(p, LOG_FLOOR), truth)?;
    Ok(ops::scale(&ops::sum(&picked), -1.0 / rows))
}

/// Mean over all elements of `(p - q)²`.
pub fn mse(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    same_shape("mse", p, q)?;
    let d = ops::sub(p, q)?;
    Ok(ops::mean(&ops::mul(&d, &d)?))
}

/// The pieces of a distillation loss, kept for reporting.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    pub total: Tensor,
    pub mse: f64,
    pub ce: f64,
}

/// `λ · mse(matched, target) + (1 − λ) · CE(p, truth)`.
///
/// `matched` and `target` are what the MSE compares (probabilities by
/// default); `p` is the prediction scored against the labels. The target
/// must come from a frozen network and carries no gradient.
pub fn distillation_loss(matched: &Tensor, target: &Tensor, p: &Tensor, truth: &Tensor, lambda: f32) -> Result<DistillLoss> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} must lie in [0, 1]")));
    }
    if target.requires_grad() {
        return Err(Error::State("distillation target must not require gradients".into()));
    }
    let m = mse(matched, target)?;
    let ce = cross_entropy(p, truth)?;
    let (mse_v, ce_v) = (m.item() as f64, ce.item() as f64);
    let total = ops::add(&ops::scale(&m, lambda), &ops::scale(&ce, 1.0 - lambda))?;
    Ok(DistillLoss {
        total,
        mse: mse_v,
        ce: ce_v,
    })
}

/// Loss for training the supernet against the teacher's distribution.
pub fn search_loss(p_super: &Tensor, p_teacher: &Tensor, truth: &Tensor, lambda: f32) -> Result<Tensor> {
    Ok(distillation_loss(p_super, p_teacher, p_super, truth, lambda)?.total)
}

/// Loss for training the derived student against the teacher's
/// distribution; same form as [`search_loss`].
pub fn transfer_loss(p_student: &Tensor, p_teacher: &Tensor, truth: &Tensor, lambda: f32) -> Result<Tensor> {
    search_loss(p_student, p_teacher, truth, lambda)
}

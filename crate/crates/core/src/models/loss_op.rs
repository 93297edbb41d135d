use crate::metrics::{chamfer_with, chamfer_with_grad, ChamferMode};
use crate::numeric::{CustomOp, NumericError, Tensor};

/// Chamfer distance from an `[N, 3]` prediction to a fixed target cloud, as a
/// graph op with a `[1, 1]` output.
#[derive(Clone, Debug)]
pub struct ChamferLoss {
    target: Vec<[f64; 3]>,
    mode: ChamferMode,
}

impl ChamferLoss {
    pub fn new(target: Vec<[f64; 3]>, mode: ChamferMode) -> Self {
        Self { target, mode }
    }
}

fn points(t: &Tensor) -> Result<Vec<[f64; 3]>, NumericError> {
    if t.shape().len() != 2 || t.cols() != 3 {
        return Err(NumericError::BadShape(format!(
            "chamfer input must be [N, 3], got {:?}",
            t.shape()
        )));
    }
    Ok(t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

impl CustomOp for ChamferLoss {
    fn name(&self) -> &str {
        "chamfer"
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor, NumericError> {
        let cd = chamfer_with(&points(input)?, &self.target, self.mode)
            .map_err(|e| NumericError::BadShape(e.to_string()))?;
        Ok(Tensor::scalar(cd))
    }

    fn backward(&self, input: &Tensor, _output: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumericError> {
        let (_, grad) = chamfer_with_grad(&points(input)?, &self.target, self.mode)
            .map_err(|e| NumericError::BadShape(e.to_string()))?;
        let scale = grad_out.item();
        Tensor::new(
            input.shape().to_vec(),
            grad.iter().flatten().map(|g| g * scale).collect(),
        )
    }
}

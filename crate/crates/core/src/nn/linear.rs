use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::ParamSet;
use crate::error::{Error, Result};

/// Linear head `logits = W x + b`, W is num_classes × m.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearClassifier {
    pub fn from_parts(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 || b.len() != w.nrows() {
            return Err(Error::Shape(format!(
                "inconsistent classifier shapes: W {:?}, b {}",
                w.dim(),
                b.len()
            )));
        }
        if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "classifier has non-finite parameters".into(),
            ));
        }
        Ok(LinearClassifier {
            w: w.as_standard_layout().into_owned(),
            b,
        })
    }

    pub fn zeros(num_classes: usize, m: usize) -> Result<Self> {
        Self::from_parts(Array2::zeros((num_classes, m)), Array1::zeros(num_classes))
    }

    /// Zero-shot head: rows are `scale ·` class text embeddings, no bias.
    pub fn from_class_text(class_text: &Array2<f64>, scale: f64) -> Result<Self> {
        Self::from_parts(class_text * scale, Array1::zeros(class_text.nrows()))
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "classifier expects dim {}, input has {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w.t()) + &self.b)
    }

    /// Parameter gradients given the inputs and dL/dlogits.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        d_logits: ArrayView2<'_, f64>,
    ) -> Result<ClassifierGrads> {
        if x.nrows() != d_logits.nrows() || d_logits.ncols() != self.num_classes() {
            return Err(Error::Shape(format!(
                "classifier backward: input {:?}, upstream {:?}",
                x.dim(),
                d_logits.dim()
            )));
        }
        Ok(ClassifierGrads {
            w: d_logits.t().dot(&x),
            b: d_logits.sum_axis(Axis(0)),
        })
    }
}

impl ParamSet for LinearClassifier {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }
}

impl ParamSet for ClassifierGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }
}

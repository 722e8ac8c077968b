use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::ParamSet;
use crate::error::{Error, Result};

/// Two-layer rectifier MLP mapping an m-dim embedding to an m-dim embedding.
///
/// `forward` computes `W2 · relu(W1 · x + b1) + b2` per row and optionally
/// rescales each output row to unit length.
#[derive(Clone, Debug)]
pub struct Augmenter {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    // Bumped on every mutable parameter access; caches remember it.
    version: u64,
}

impl PartialEq for Augmenter {
    fn eq(&self, other: &Self) -> bool {
        self.w1 == other.w1 && self.b1 == other.b1 && self.w2 == other.w2 && self.b2 == other.b2
    }
}

/// Intermediate values kept by [`Augmenter::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct AugmenterCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    hidden: Array2<f64>,
    output: Array2<f64>,
    norms: Option<Array1<f64>>,
    version: u64,
}

impl AugmenterCache {
    /// Final output of the forward pass (normalized if requested).
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    pub fn normalized(&self) -> bool {
        self.norms.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmenterGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Gradient with respect to the forward input.
    pub input: Array2<f64>,
}

fn check_finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} has non-finite entries"
        )))
    }
}

impl Augmenter {
    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        let (h, m) = w1.dim();
        if m == 0 || h == 0 {
            return Err(Error::Shape("augmenter dims must be >= 1".into()));
        }
        if b1.len() != h || w2.dim() != (m, h) || b2.len() != m {
            return Err(Error::Shape(format!(
                "inconsistent augmenter shapes: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                w1.dim(),
                b1.len(),
                w2.dim(),
                b2.len()
            )));
        }
        check_finite("W1", w1.iter().copied())?;
        check_finite("b1", b1.iter().copied())?;
        check_finite("W2", w2.iter().copied())?;
        check_finite("b2", b2.iter().copied())?;
        Ok(Augmenter {
            w1: w1.as_standard_layout().into_owned(),
            b1,
            w2: w2.as_standard_layout().into_owned(),
            b2,
            version: 0,
        })
    }

    pub fn zeros(m: usize, h: usize) -> Result<Self> {
        Self::from_parts(
            Array2::zeros((h, m)),
            Array1::zeros(h),
            Array2::zeros((m, h)),
            Array1::zeros(m),
        )
    }

    /// Exact identity map, using `relu(x) - relu(-x) = x` with h = 2m.
    pub fn identity(m: usize) -> Result<Self> {
        let mut w1 = Array2::zeros((2 * m, m));
        let mut w2 = Array2::zeros((m, 2 * m));
        for i in 0..m {
            w1[[i, i]] = 1.0;
            w1[[m + i, i]] = -1.0;
            w2[[i, i]] = 1.0;
            w2[[i, m + i]] = -1.0;
        }
        Self::from_parts(w1, Array1::zeros(2 * m), w2, Array1::zeros(m))
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &Array1<f64> {
        &self.b2
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, normalize: bool) -> Result<AugmenterCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "augmenter expects dim {}, input has {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let pre_activation = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre_activation.mapv(|v| v.max(0.0));
        let raw = hidden.dot(&self.w2.t()) + &self.b2;
        let (output, norms) = if normalize {
            let mut out = raw;
            let mut norms = Array1::zeros(out.nrows());
            for (r, mut row) in out.outer_iter_mut().enumerate() {
                let n = row.dot(&row).sqrt();
                if !(n > 0.0) {
                    return Err(Error::ZeroNorm {
                        what: "augmenter output",
                        row: r,
                    });
                }
                row /= n;
                norms[r] = n;
            }
            (out, Some(norms))
        } else {
            (raw, None)
        };
        Ok(AugmenterCache {
            input: x.to_owned(),
            pre_activation,
            hidden,
            output,
            norms,
            version: self.version,
        })
    }

    pub fn backward(
        &self,
        cache: &AugmenterCache,
        d_out: ArrayView2<'_, f64>,
    ) -> Result<AugmenterGrads> {
        if cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {}, augmenter is at {}",
                cache.version, self.version
            )));
        }
        if cache.input.ncols() != self.input_dim() || cache.hidden.ncols() != self.hidden_dim() {
            return Err(Error::StaleCache(
                "cache shapes do not match this augmenter".into(),
            ));
        }
        if d_out.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                d_out.dim(),
                cache.output.dim()
            )));
        }
        // Through the row normalization y = r / |r|: dL/dr = (g - y (y.g)) / |r|.
        let d_raw = match &cache.norms {
            Some(norms) => {
                let mut d = d_out.to_owned();
                for (r, mut row) in d.outer_iter_mut().enumerate() {
                    let y = cache.output.row(r);
                    let proj = y.dot(&row);
                    row.scaled_add(-proj, &y);
                    row /= norms[r];
                }
                d
            }
            None => d_out.to_owned(),
        };
        let w2 = d_raw.t().dot(&cache.hidden);
        let b2 = d_raw.sum_axis(Axis(0));
        let mut d_pre = d_raw.dot(&self.w2);
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.pre_activation)
            .for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        let w1 = d_pre.t().dot(&cache.input);
        let b1 = d_pre.sum_axis(Axis(0));
        let input = d_pre.dot(&self.w1);
        Ok(AugmenterGrads {
            w1,
            b1,
            w2,
            b2,
            input,
        })
    }
}

impl ParamSet for Augmenter {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

impl ParamSet for AugmenterGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

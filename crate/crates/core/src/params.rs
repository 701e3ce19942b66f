//! Uniform access to the named tensors of a parameter set.
//!
//! Gradients share the type of the parameters they belong to, so optimizer
//! updates, clipping, checkpoints and finite-difference checks can all walk
//! two parameter sets in lockstep through [`ParamSet`].

/// A borrowed, named tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub trait ParamSet {
    /// Named tensors in a fixed declaration order.
    fn tensors(&self) -> Vec<TensorView<'_>>;

    /// Mutable data of the same tensors, in the same order as [`tensors`].
    ///
    /// [`tensors`]: ParamSet::tensors
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum()
    }

    fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    fn scale_all(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= k;
            }
        }
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += other`, tensor by tensor. Both sets must have the same layout.
    fn add_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "parameter layouts differ");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.len(), s.data.len(), "tensor {} differs in size", s.name);
            for (x, y) in d.iter_mut().zip(s.data) {
                *x += y;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

pub(crate) fn view<'a>(name: impl Into<String>, shape: &[usize], data: &'a [f64]) -> TensorView<'a> {
    TensorView {
        name: name.into(),
        shape: shape.to_vec(),
        data,
    }
}

//! Walking the learnable tensors of a parameter structure.
//!
//! Parameter structs are generic over the leaf type so the same layout can
//! hold values (`Tensor`), tape handles (`Var`), gradients or optimizer
//! moments.

pub trait ParamTree<T> {
    type Mapped<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Self::Mapped<U>;

    /// Visits every leaf in a fixed order with a dotted name.
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T));

    fn flatten(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, t| out.push(t));
        out
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, _| out.push(name));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

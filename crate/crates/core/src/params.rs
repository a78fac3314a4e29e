//! Named parameter traversal.
//!
//! Every weight-bearing component walks its tensors in a fixed order under
//! hierarchical dot-separated names. The traversal order is the canonical
//! ordering used by the optimizer state and the checkpoint tensor table, so
//! it must stay deterministic.

use miniseg_tensor::Tensor;

pub trait ParamVisit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total element count over all parameters.
pub fn count_params(v: &dyn ParamVisit) -> u64 {
    let mut total = 0u64;
    v.visit("", &mut |_, t| total += t.numel() as u64);
    total
}

/// Snapshot of (name, tensor) pairs in canonical order.
pub fn collect(v: &dyn ParamVisit) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    v.visit("", &mut |name, t| out.push((name.to_string(), t.detached())));
    out
}

use crate::tape;
use crate::tensor::Tensor;

/// Sum of all elements, as a `[1]` scalar tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().sum();
    let result = Tensor::scalar(s);
    let shape = a.shape().to_vec();
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let gv = g.scalar_value();
            vec![Tensor::full(&shape, gv)]
        }),
    );
    result.with_tape_id(id)
}

/// Mean of all elements, as a `[1]` scalar tensor.
pub fn mean_all(a: &Tensor) -> Tensor {
    crate::ops::scale(&sum_all(a), 1.0 / a.numel() as f64)
}

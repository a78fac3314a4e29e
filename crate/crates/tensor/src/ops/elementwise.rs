use super::{broadcast, reduce_to};
use crate::tape;
use crate::tensor::Tensor;

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    // (grad_out, a_val, b_val) -> (da, db)
    df: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
) -> crate::Result<Tensor> {
    let plan = broadcast(op, a, b)?;
    let n: usize = plan.out_shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(f(ad[i % plan.lhs_numel], bd[i % plan.rhs_numel]));
    }
    let result = Tensor::from_vec(&plan.out_shape, out)?;

    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    let (an, bn) = (plan.lhs_numel, plan.rhs_numel);
    let (av, bv) = (a.data().to_vec(), b.data().to_vec());
    let id = tape::record(
        &[a.tape_id, b.tape_id],
        Box::new(move |g| {
            let gd = g.data();
            let mut da = vec![0.0; gd.len()];
            let mut db = vec![0.0; gd.len()];
            for i in 0..gd.len() {
                let (x, y) = df(gd[i], av[i % an], bv[i % bn]);
                da[i] = x;
                db[i] = y;
            }
            vec![reduce_to(&da, &sa, an), reduce_to(&db, &sb, bn)]
        }),
    );
    Ok(result.with_tape_id(id))
}

fn unary(
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    // (grad_out, input) -> da
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let out: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    let result = Tensor::from_vec(a.shape(), out).expect("unary shape");
    let av = a.data().to_vec();
    let shape = a.shape().to_vec();
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let da: Vec<f64> = g.data().iter().zip(&av).map(|(&gi, &x)| df(gi, x)).collect();
            vec![Tensor::from_vec(&shape, da).expect("unary grad shape")]
        }),
    );
    result.with_tape_id(id)
}

pub fn add(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
}

pub fn sub(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    binary("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
}

pub fn mul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
}

pub fn div(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    binary(
        "div",
        a,
        b,
        |x, y| x / y,
        |g, x, y| (g / y, -g * x / (y * y)),
    )
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    unary(a, |x| c * x, move |g, _| c * g)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    unary(a, |x| x + c, |g, _| g)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    unary(a, sigmoid_scalar, |g, x| {
        let y = sigmoid_scalar(x);
        g * y * (1.0 - y)
    })
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(a: &Tensor) -> Tensor {
    unary(
        a,
        |x| if x > 0.0 { x } else { 0.0 },
        |g, x| if x > 0.0 { g } else { 0.0 },
    )
}

/// GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
/// The gradient checker differentiates this same formula.
pub fn gelu(a: &Tensor) -> Tensor {
    unary(a, gelu_scalar, |g, x| g * gelu_grad_scalar(x))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

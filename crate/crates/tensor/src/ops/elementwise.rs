use super::kernels::{binary, reduce_to, unary};
use crate::Var;

fn check_broadcast(op: &str, a: &[usize], b: &[usize]) {
    assert_eq!(a.len(), b.len(), "{op}: rank mismatch {a:?} vs {b:?}");
    for (x, y) in a.iter().zip(b) {
        assert!(x == y || *x == 1 || *y == 1, "{op}: shapes {a:?} and {b:?} do not broadcast");
    }
}

impl<'g> Var<'g> {
    /// Elementwise sum with broadcasting over size-1 axes of equal-rank operands.
    pub fn add(&self, other: &Var<'g>) -> Var<'g> {
        check_broadcast("add", self.shape(), other.shape());
        let out = binary(self.value(), other.value(), |x, y| x + y);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.graph().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g, &sa)),
                needs[1].then(|| reduce_to(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<'g>) -> Var<'g> {
        check_broadcast("sub", self.shape(), other.shape());
        let out = binary(self.value(), other.value(), |x, y| x - y);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.graph().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g, &sa)),
                needs[1].then(|| reduce_to(&unary(g, |v| -v), &sb)),
            ]
        })
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Var<'g>) -> Var<'g> {
        check_broadcast("mul", self.shape(), other.shape());
        let out = binary(self.value(), other.value(), |x, y| x * y);
        let (a, b) = (self.shared(), other.shared());
        self.graph().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(&binary(g, &b, |x, y| x * y), a.shape())),
                needs[1].then(|| reduce_to(&binary(g, &a, |x, y| x * y), b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var<'g>) -> Var<'g> {
        check_broadcast("div", self.shape(), other.shape());
        let out = std::sync::Arc::new(binary(self.value(), other.value(), |x, y| x / y));
        let (a, b, q) = (self.shared(), other.shared(), std::sync::Arc::clone(&out));
        self.graph().record_shared(out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| reduce_to(&binary(g, &b, |x, y| x / y), a.shape()));
            let gb = needs[1].then(|| {
                // -g a / b² = -(g / b) (a / b); `out` already holds a / b.
                let gb = binary(g, &b, |x, y| -x / y);
                reduce_to(&binary(&gb, &q, |x, y| x * y), b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        let out = unary(self.value(), |v| v * k);
        self.graph().record(out, &[self], move |g, _| vec![Some(unary(g, |v| v * k))])
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g> {
        let out = unary(self.value(), |v| v + k);
        self.graph().record(out, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Var<'g> {
        let out = unary(self.value(), |v| v.max(0.0));
        let x = self.shared();
        self.graph().record(out, &[self], move |g, _| {
            vec![Some(binary(g, &x, |g, x| if x > 0.0 { g } else { 0.0 }))]
        })
    }

    pub fn sigmoid(&self) -> Var<'g> {
        let y = std::sync::Arc::new(unary(self.value(), sigmoid));
        let yb = std::sync::Arc::clone(&y);
        self.graph().record_shared(y, &[self], move |g, _| {
            vec![Some(binary(g, &yb, |g, y| g * y * (1.0 - y)))]
        })
    }

    pub fn exp(&self) -> Var<'g> {
        let y = std::sync::Arc::new(unary(self.value(), f64::exp));
        let yb = std::sync::Arc::clone(&y);
        self.graph().record_shared(y, &[self], move |g, _| vec![Some(binary(g, &yb, |g, y| g * y))])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&self, floor: f64) -> Var<'g> {
        let out = unary(self.value(), |v| v.max(floor).ln());
        let x = self.shared();
        self.graph().record(out, &[self], move |g, _| {
            vec![Some(binary(g, &x, |g, x| if x > floor { g / x } else { 0.0 }))]
        })
    }

    /// `elu(x) + 1`, a strictly positive feature map.
    pub fn elu_plus_one(&self) -> Var<'g> {
        let out = unary(self.value(), |v| if v > 0.0 { v + 1.0 } else { v.exp() });
        let x = self.shared();
        self.graph().record(out, &[self], move |g, _| {
            vec![Some(binary(g, &x, |g, x| if x > 0.0 { g } else { g * x.exp() }))]
        })
    }

    pub fn sqrt(&self) -> Var<'g> {
        let y = std::sync::Arc::new(unary(self.value(), f64::sqrt));
        let yb = std::sync::Arc::clone(&y);
        self.graph().record_shared(y, &[self], move |g, _| {
            vec![Some(binary(g, &yb, |g, y| 0.5 * g / y))]
        })
    }

    pub fn square(&self) -> Var<'g> {
        let out = unary(self.value(), |v| v * v);
        let x = self.shared();
        self.graph().record(out, &[self], move |g, _| {
            vec![Some(binary(g, &x, |g, x| 2.0 * g * x))]
        })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

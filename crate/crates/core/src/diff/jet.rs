//! Truncated Taylor jets carrying partial derivatives up to third order.
//!
//! A [`Jet`] stores the value of a scalar function together with all of its
//! partial derivatives of order 1, 2 and 3 with respect to at most
//! [`MAX_VARS`] seed variables. Mixed partials are stored once in packed
//! symmetric form, so `∂²f/∂xi∂xj` and `∂²f/∂xj∂xi` are the same slot.
//!
//! The packing is independent of the number of seed variables: pair `(i, j)`
//! with `i <= j` lives at `j(j+1)/2 + i` and triple `(i, j, k)` with
//! `i <= j <= k` at `k(k+1)(k+2)/6 + j(j+1)/2 + i`. Jets seeded over different
//! variable counts can therefore be combined directly; unused slots are zero.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub const MAX_VARS: usize = 8;
pub const MAX_ORDER: usize = 3;
const MAX_PAIRS: usize = MAX_VARS * (MAX_VARS + 1) / 2;
const MAX_TRIPLES: usize = MAX_VARS * (MAX_VARS + 1) * (MAX_VARS + 2) / 6;

/// Elementary operation recorded when a jet first becomes non-finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Ln,
    Tanh,
    Sin,
    Cos,
    Sqrt,
    Powi,
    Powf,
    Recip,
    Abs,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Exp => "exp",
            Primitive::Ln => "ln",
            Primitive::Tanh => "tanh",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Sqrt => "sqrt",
            Primitive::Powi => "powi",
            Primitive::Powf => "powf",
            Primitive::Recip => "recip",
            Primitive::Abs => "abs",
        };
        f.write_str(name)
    }
}

/// Packed index of the unordered pair `{i, j}`.
#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

/// Packed index of the unordered triple `{i, j, k}`.
#[inline]
pub fn triple_index(i: usize, j: usize, k: usize) -> usize {
    let mut s = [i, j, k];
    s.sort_unstable();
    let [a, b, c] = s;
    c * (c + 1) * (c + 2) / 6 + b * (b + 1) / 2 + a
}

/// Number of packed second-order slots for `n` variables.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
fn triple_count(n: usize) -> usize {
    n * (n + 1) * (n + 2) / 6
}

#[derive(Clone, Copy)]
pub struct Jet {
    vars: u8,
    order: u8,
    fault: Option<Primitive>,
    value: f64,
    d1: [f64; MAX_VARS],
    d2: [f64; MAX_PAIRS],
    d3: [f64; MAX_TRIPLES],
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.vars();
        let mut s = f.debug_struct("Jet");
        s.field("value", &self.value);
        if self.order >= 1 {
            s.field("d1", &&self.d1[..n]);
        }
        if self.order >= 2 {
            s.field("d2", &&self.d2[..pair_count(n)]);
        }
        if self.order >= 3 {
            s.field("d3", &&self.d3[..triple_count(n)]);
        }
        if let Some(p) = self.fault {
            s.field("fault", &p);
        }
        s.finish()
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        let n = self.vars().max(other.vars());
        self.value == other.value
            && self.d1[..n] == other.d1[..n]
            && self.d2[..pair_count(n)] == other.d2[..pair_count(n)]
            && self.d3[..triple_count(n)] == other.d3[..triple_count(n)]
    }
}

impl Default for Jet {
    fn default() -> Self {
        Jet::constant(0.0)
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

impl Jet {
    #[inline]
    fn zeroed(vars: usize, order: usize) -> Jet {
        Jet {
            vars: vars as u8,
            order: order as u8,
            fault: None,
            value: 0.0,
            d1: [0.0; MAX_VARS],
            d2: [0.0; MAX_PAIRS],
            d3: [0.0; MAX_TRIPLES],
        }
    }

    /// A constant: all derivatives zero.
    pub fn constant(value: f64) -> Jet {
        let mut j = Jet::zeroed(0, 0);
        j.value = value;
        if !value.is_finite() {
            j.fault = Some(Primitive::Add);
        }
        j
    }

    /// Seed variable `index` of `vars`, tracking derivatives up to `order`.
    ///
    /// Panics if `index >= vars`, `vars > MAX_VARS` or `order > MAX_ORDER`.
    pub fn variable(value: f64, index: usize, vars: usize, order: usize) -> Jet {
        assert!(vars <= MAX_VARS, "at most {MAX_VARS} seed variables");
        assert!(
            index < vars,
            "seed index {index} out of range for {vars} variables"
        );
        assert!(order <= MAX_ORDER, "derivative order above {MAX_ORDER}");
        let mut j = Jet::zeroed(vars, order);
        j.value = value;
        if order >= 1 {
            j.d1[index] = 1.0;
        }
        j
    }

    /// Build a jet from explicit packed derivative arrays.
    pub fn from_parts(value: f64, d1: &[f64], d2: &[f64], d3: &[f64], order: usize) -> Jet {
        let vars = d1.len();
        assert!(vars <= MAX_VARS && order <= MAX_ORDER);
        let mut j = Jet::zeroed(vars, order);
        j.value = value;
        if order >= 1 {
            j.d1[..vars].copy_from_slice(d1);
        }
        if order >= 2 {
            j.d2[..pair_count(vars)].copy_from_slice(&d2[..pair_count(vars)]);
        }
        if order >= 3 {
            j.d3[..triple_count(vars)].copy_from_slice(&d3[..triple_count(vars)]);
        }
        j
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn vars(&self) -> usize {
        self.vars as usize
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order as usize
    }

    /// First non-finite primitive encountered while building this jet.
    #[inline]
    pub fn fault(&self) -> Option<Primitive> {
        self.fault
    }

    #[inline]
    pub fn d1(&self, i: usize) -> f64 {
        self.d1[i]
    }

    #[inline]
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.d2[pair_index(i, j)]
    }

    #[inline]
    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d3[triple_index(i, j, k)]
    }

    pub fn gradient(&self) -> &[f64] {
        &self.d1[..self.vars()]
    }

    /// Packed second derivatives, see [`pair_index`].
    pub fn packed_d2(&self) -> &[f64] {
        &self.d2[..pair_count(self.vars())]
    }

    /// Packed third derivatives, see [`triple_index`].
    pub fn packed_d3(&self) -> &[f64] {
        &self.d3[..triple_count(self.vars())]
    }

    /// True when value and every tracked derivative are finite.
    pub fn is_finite(&self) -> bool {
        let n = self.vars();
        self.value.is_finite()
            && self.d1[..n].iter().all(|v| v.is_finite())
            && self.d2[..pair_count(n)].iter().all(|v| v.is_finite())
            && self.d3[..triple_count(n)].iter().all(|v| v.is_finite())
    }

    #[inline]
    fn shape_with(&self, other: &Jet) -> (usize, usize) {
        (
            self.vars().max(other.vars()),
            self.order().max(other.order()),
        )
    }

    #[inline]
    fn merge_fault(
        a: Option<Primitive>,
        b: Option<Primitive>,
        value: f64,
        op: Primitive,
    ) -> Option<Primitive> {
        a.or(b).or(if value.is_finite() { None } else { Some(op) })
    }

    /// `self += a * x`, the workhorse of affine layers.
    pub fn axpy(&mut self, a: f64, x: &Jet) {
        let (n, order) = self.shape_with(x);
        self.vars = n as u8;
        self.order = order as u8;
        self.value += a * x.value;
        if order >= 1 {
            for i in 0..n {
                self.d1[i] += a * x.d1[i];
            }
        }
        if order >= 2 {
            for s in 0..pair_count(n) {
                self.d2[s] += a * x.d2[s];
            }
        }
        if order >= 3 {
            for s in 0..triple_count(n) {
                self.d3[s] += a * x.d3[s];
            }
        }
        self.fault = Jet::merge_fault(self.fault, x.fault, self.value, Primitive::Add);
    }

    fn linear_combination(&self, a: f64, other: &Jet, b: f64, op: Primitive) -> Jet {
        let (n, order) = self.shape_with(other);
        let mut r = Jet::zeroed(n, order);
        r.value = a * self.value + b * other.value;
        if order >= 1 {
            for i in 0..n {
                r.d1[i] = a * self.d1[i] + b * other.d1[i];
            }
        }
        if order >= 2 {
            for s in 0..pair_count(n) {
                r.d2[s] = a * self.d2[s] + b * other.d2[s];
            }
        }
        if order >= 3 {
            for s in 0..triple_count(n) {
                r.d3[s] = a * self.d3[s] + b * other.d3[s];
            }
        }
        r.fault = Jet::merge_fault(self.fault, other.fault, r.value, op);
        r
    }

    fn scaled(&self, a: f64) -> Jet {
        let n = self.vars();
        let order = self.order();
        let mut r = *self;
        r.value *= a;
        if order >= 1 {
            for i in 0..n {
                r.d1[i] *= a;
            }
        }
        if order >= 2 {
            for s in 0..pair_count(n) {
                r.d2[s] *= a;
            }
        }
        if order >= 3 {
            for s in 0..triple_count(n) {
                r.d3[s] *= a;
            }
        }
        r.fault = Jet::merge_fault(self.fault, None, r.value, Primitive::Mul);
        r
    }

    fn product(&self, g: &Jet) -> Jet {
        let f = self;
        let (n, order) = f.shape_with(g);
        let mut r = Jet::zeroed(n, order);
        r.value = f.value * g.value;
        if order >= 1 {
            for i in 0..n {
                r.d1[i] = f.d1[i] * g.value + f.value * g.d1[i];
            }
        }
        if order >= 2 {
            for j in 0..n {
                for i in 0..=j {
                    let s = pair_index(i, j);
                    r.d2[s] = f.d2[s] * g.value
                        + f.d1[i] * g.d1[j]
                        + f.d1[j] * g.d1[i]
                        + f.value * g.d2[s];
                }
            }
        }
        if order >= 3 {
            for k in 0..n {
                for j in 0..=k {
                    for i in 0..=j {
                        let s = triple_index(i, j, k);
                        let (ij, ik, jk) = (pair_index(i, j), pair_index(i, k), pair_index(j, k));
                        r.d3[s] = f.d3[s] * g.value
                            + f.value * g.d3[s]
                            + f.d2[ij] * g.d1[k]
                            + f.d2[ik] * g.d1[j]
                            + f.d2[jk] * g.d1[i]
                            + f.d1[i] * g.d2[jk]
                            + f.d1[j] * g.d2[ik]
                            + f.d1[k] * g.d2[ij];
                    }
                }
            }
        }
        r.fault = Jet::merge_fault(f.fault, g.fault, r.value, Primitive::Mul);
        r
    }

    /// Chain rule for a scalar function with derivatives `(h0, h1, h2, h3)`
    /// evaluated at `self.value`.
    fn chain(&self, h: [f64; 4], op: Primitive) -> Jet {
        let f = self;
        let n = f.vars();
        let order = f.order();
        let mut r = Jet::zeroed(n, order);
        r.value = h[0];
        if order >= 1 {
            for i in 0..n {
                r.d1[i] = h[1] * f.d1[i];
            }
        }
        if order >= 2 {
            for j in 0..n {
                for i in 0..=j {
                    let s = pair_index(i, j);
                    r.d2[s] = h[1] * f.d2[s] + h[2] * f.d1[i] * f.d1[j];
                }
            }
        }
        if order >= 3 {
            for k in 0..n {
                for j in 0..=k {
                    for i in 0..=j {
                        let s = triple_index(i, j, k);
                        let (ij, ik, jk) = (pair_index(i, j), pair_index(i, k), pair_index(j, k));
                        r.d3[s] = h[1] * f.d3[s]
                            + h[2] * (f.d2[ij] * f.d1[k] + f.d2[ik] * f.d1[j] + f.d2[jk] * f.d1[i])
                            + h[3] * f.d1[i] * f.d1[j] * f.d1[k];
                    }
                }
            }
        }
        let used = order.min(3) + 1;
        let bad = h[..used].iter().any(|v| !v.is_finite());
        r.fault = f.fault.or(if bad { Some(op) } else { None });
        r
    }

    fn poisoned(&self, op: Primitive) -> Jet {
        let mut r = self.chain([f64::NAN; 4], op);
        r.fault = self.fault.or(Some(op));
        r
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.chain([e, e, e, e], Primitive::Exp)
    }

    pub fn ln(&self) -> Jet {
        let x = self.value;
        if x <= 0.0 || !x.is_finite() {
            return self.poisoned(Primitive::Ln);
        }
        let r = 1.0 / x;
        self.chain([x.ln(), r, -r * r, 2.0 * r * r * r], Primitive::Ln)
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value.tanh();
        let t1 = 1.0 - t * t;
        let t2 = -2.0 * t * t1;
        let t3 = -2.0 * (t1 * t1 + t * t2);
        self.chain([t, t1, t2, t3], Primitive::Tanh)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain([s, c, -s, -c], Primitive::Sin)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain([c, -s, -c, s], Primitive::Cos)
    }

    pub fn sqrt(&self) -> Jet {
        let x = self.value;
        if x < 0.0 || (x == 0.0 && self.order() > 0) {
            return self.poisoned(Primitive::Sqrt);
        }
        let s = x.sqrt();
        let h1 = 0.5 / s;
        let h2 = -0.5 * h1 / x;
        let h3 = -1.5 * h2 / x;
        self.chain([s, h1, h2, h3], Primitive::Sqrt)
    }

    pub fn recip(&self) -> Jet {
        let x = self.value;
        if x == 0.0 {
            return self.poisoned(Primitive::Recip);
        }
        let r = 1.0 / x;
        self.chain(
            [r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r],
            Primitive::Recip,
        )
    }

    pub fn powi(&self, n: i32) -> Jet {
        let x = self.value;
        let nf = n as f64;
        let h = match n {
            0 => [1.0, 0.0, 0.0, 0.0],
            1 => [x, 1.0, 0.0, 0.0],
            2 => [x * x, 2.0 * x, 2.0, 0.0],
            3 => [x * x * x, 3.0 * x * x, 6.0 * x, 6.0],
            _ => [
                x.powi(n),
                nf * x.powi(n - 1),
                nf * (nf - 1.0) * x.powi(n - 2),
                nf * (nf - 1.0) * (nf - 2.0) * x.powi(n - 3),
            ],
        };
        if n < 0 && x == 0.0 {
            return self.poisoned(Primitive::Powi);
        }
        self.chain(h, Primitive::Powi)
    }

    pub fn powf(&self, a: f64) -> Jet {
        let x = self.value;
        if x < 0.0 || (x == 0.0 && self.order() > 0) {
            return self.poisoned(Primitive::Powf);
        }
        let h = [
            x.powf(a),
            a * x.powf(a - 1.0),
            a * (a - 1.0) * x.powf(a - 2.0),
            a * (a - 1.0) * (a - 2.0) * x.powf(a - 3.0),
        ];
        self.chain(h, Primitive::Powf)
    }

    /// `|x|`; non-smooth at zero, where any tracked derivative is undefined.
    pub fn abs(&self) -> Jet {
        if self.value == 0.0 && self.order() > 0 {
            return self.poisoned(Primitive::Abs);
        }
        if self.value < 0.0 {
            -*self
        } else {
            *self
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scaled(-1.0)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scaled(-1.0)
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $body:expr) => {
        impl<'a, 'b> $trait<&'b Jet> for &'a Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: &'b Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, rhs)
            }
        }
        impl $trait<Jet> for Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: Jet) -> Jet {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $trait<&'a Jet> for Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: &'a Jet) -> Jet {
                (&self).$method(rhs)
            }
        }
        impl<'a> $trait<Jet> for &'a Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: Jet) -> Jet {
                self.$method(&rhs)
            }
        }
    };
}

jet_binop!(Add, add, |a, b| a.linear_combination(
    1.0,
    b,
    1.0,
    Primitive::Add
));
jet_binop!(Sub, sub, |a, b| a.linear_combination(
    1.0,
    b,
    -1.0,
    Primitive::Sub
));
jet_binop!(Mul, mul, |a, b| a.product(b));
jet_binop!(Div, div, |a, b| {
    if b.value == 0.0 {
        let mut r = a.product(&b.poisoned(Primitive::Div));
        r.fault = a.fault.or(b.fault).or(Some(Primitive::Div));
        r
    } else {
        let mut r = a.product(&b.recip());
        if r.fault == Some(Primitive::Recip) || r.fault == Some(Primitive::Mul) {
            r.fault = Some(Primitive::Div);
        }
        r
    }
});

macro_rules! jet_scalar_op {
    ($trait:ident, $method:ident, $jet_scalar:expr, $scalar_jet:expr) => {
        impl $trait<f64> for Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $jet_scalar;
                f(&self, rhs)
            }
        }
        impl<'a> $trait<f64> for &'a Jet {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $jet_scalar;
                f(self, rhs)
            }
        }
        impl $trait<Jet> for f64 {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: Jet) -> Jet {
                let f: fn(f64, &Jet) -> Jet = $scalar_jet;
                f(self, &rhs)
            }
        }
        impl<'a> $trait<&'a Jet> for f64 {
            type Output = Jet;
            #[inline]
            fn $method(self, rhs: &'a Jet) -> Jet {
                let f: fn(f64, &Jet) -> Jet = $scalar_jet;
                f(self, rhs)
            }
        }
    };
}

fn shifted(j: &Jet, c: f64) -> Jet {
    let mut r = *j;
    r.value += c;
    r.fault = Jet::merge_fault(j.fault, None, r.value, Primitive::Add);
    r
}

jet_scalar_op!(Add, add, |j, c| shifted(j, c), |c, j| shifted(j, c));
jet_scalar_op!(Sub, sub, |j, c| shifted(j, -c), |c, j| shifted(
    &j.scaled(-1.0),
    c
));
jet_scalar_op!(Mul, mul, |j, c| j.scaled(c), |c, j| j.scaled(c));
jet_scalar_op!(Div, div, |j, c| j.scaled(1.0 / c), |c, j| j
    .recip()
    .scaled(c));

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        self.axpy(1.0, rhs);
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        self.axpy(1.0, &rhs);
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        self.axpy(-1.0, rhs);
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        self.axpy(-1.0, &rhs);
    }
}

impl MulAssign<f64> for Jet {
    fn mul_assign(&mut self, rhs: f64) {
        *self = self.scaled(rhs);
    }
}

impl Sum for Jet {
    fn sum<I: Iterator<Item = Jet>>(iter: I) -> Jet {
        let mut acc = Jet::constant(0.0);
        for j in iter {
            acc.axpy(1.0, &j);
        }
        acc
    }
}

impl<'a> Sum<&'a Jet> for Jet {
    fn sum<I: Iterator<Item = &'a Jet>>(iter: I) -> Jet {
        let mut acc = Jet::constant(0.0);
        for j in iter {
            acc.axpy(1.0, j);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn var2(x: f64, y: f64) -> (Jet, Jet) {
        (Jet::variable(x, 0, 2, 3), Jet::variable(y, 1, 2, 3))
    }

    #[test]
    fn packed_indices_are_dense_and_symmetric() {
        let mut seen = [false; MAX_TRIPLES];
        for k in 0..MAX_VARS {
            for j in 0..=k {
                for i in 0..=j {
                    let s = triple_index(i, j, k);
                    assert!(!seen[s]);
                    seen[s] = true;
                    assert_eq!(s, triple_index(k, i, j));
                    assert_eq!(s, triple_index(j, k, i));
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert_eq!(pair_index(3, 1), pair_index(1, 3));
        assert_eq!(pair_index(MAX_VARS - 1, MAX_VARS - 1), MAX_PAIRS - 1);
    }

    #[test]
    fn square_of_three() {
        let x = Jet::variable(3.0, 0, 1, 2);
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        assert_eq!(y.d1(0), 6.0);
        assert_eq!(y.d2(0, 0), 2.0);
    }

    #[test]
    fn tanh_of_product_at_origin() {
        let (x, y) = var2(0.0, 0.0);
        let f = (x * y).tanh();
        assert_eq!(f.value(), 0.0);
        assert_eq!(f.d1(0), 0.0);
        assert_eq!(f.d1(1), 0.0);
        assert_eq!(f.d2(0, 1), 1.0);
    }

    #[test]
    fn third_order_product_rule() {
        // f = x^2 y^3 at (1.5, -0.5)
        let (x, y) = var2(1.5, -0.5);
        let f = x.powi(2) * y.powi(3);
        let (a, b) = (1.5f64, -0.5f64);
        assert_relative_eq!(f.d3(0, 0, 1), 2.0 * 3.0 * b * b, epsilon = 1e-14);
        assert_relative_eq!(f.d3(0, 1, 1), 2.0 * a * 6.0 * b, epsilon = 1e-14);
        assert_relative_eq!(f.d3(1, 1, 1), a * a * 6.0, epsilon = 1e-14);
        assert_eq!(f.d3(0, 0, 0), 0.0);
    }

    #[test]
    fn quotient_matches_closed_form() {
        let (x, y) = var2(0.7, 1.3);
        let f = x / y;
        assert_relative_eq!(f.d1(1), -0.7 / (1.3 * 1.3), epsilon = 1e-15);
        assert_relative_eq!(f.d2(1, 1), 2.0 * 0.7 / 1.3f64.powi(3), epsilon = 1e-14);
        assert_relative_eq!(f.d3(0, 1, 1), 2.0 / 1.3f64.powi(3), epsilon = 1e-14);
    }

    #[test]
    fn ln_of_negative_is_a_fault() {
        let x = Jet::variable(-1.0, 0, 1, 1);
        let y = x.ln().exp() + 1.0;
        assert_eq!(y.fault(), Some(Primitive::Ln));
    }

    #[test]
    fn division_by_zero_reports_div() {
        let x = Jet::variable(1.0, 0, 1, 1);
        let z = Jet::constant(0.0);
        assert_eq!((x / z).fault(), Some(Primitive::Div));
    }

    #[test]
    fn mixed_seed_counts_combine() {
        let a = Jet::variable(2.0, 0, 1, 2);
        let b = Jet::variable(3.0, 1, 2, 2);
        let c = a * b;
        assert_eq!(c.vars(), 2);
        assert_eq!(c.d1(0), 3.0);
        assert_eq!(c.d1(1), 2.0);
        assert_eq!(c.d2(0, 1), 1.0);
    }

    #[test]
    fn sum_is_exact_jet_sum() {
        let (x, y) = var2(0.3, -0.8);
        let f = (x * y).sin();
        let g = (x + y * 2.0).exp();
        let s = f + g;
        assert_eq!(s.value(), f.value() + g.value());
        for (a, (b, c)) in s
            .packed_d3()
            .iter()
            .zip(f.packed_d3().iter().zip(g.packed_d3()))
        {
            assert_eq!(*a, b + c);
        }
    }
}

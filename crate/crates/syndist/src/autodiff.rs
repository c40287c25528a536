//! Reverse-mode differentiation over dense per-pixel grids.
//!
//! A [`Tape`] is an eagerly evaluated Wengert list: every op computes its
//! value at creation and records a backward closure. Values are scalars,
//! 6-vectors (pose twists), or H×W maps. Gradients come out of one
//! [`Tape::backward`] call per scalar loss and are validated against central
//! finite differences throughout the test suite.
//!
//! Warping enters the tape through three custom ops fed by a
//! [`WarpPlan`](crate::warp::WarpPlan) whose per-pixel Jacobians are derived
//! analytically in the warp module: sampling a constant image, sampling a
//! variable map, and the transformed-distance term of the cross-frame
//! consistency loss. Bilinear sampling only; the nearest-neighbor path is
//! gradient-free by construction and refuses to differentiate.

use std::rc::Rc;

use crate::grid::Grid;
use crate::warp::{bilinear_derivative, bilinear_weights, SampleMode, WarpPlan};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum Value {
    Scalar(f64),
    Vec6([f64; 6]),
    Map(Grid<f64>),
}

impl Value {
    pub fn as_scalar(&self) -> f64 {
        match self {
            Value::Scalar(x) => *x,
            _ => panic!("expected scalar value"),
        }
    }

    pub fn as_map(&self) -> &Grid<f64> {
        match self {
            Value::Map(m) => m,
            _ => panic!("expected map value"),
        }
    }

    pub fn as_vec6(&self) -> &[f64; 6] {
        match self {
            Value::Vec6(v) => v,
            _ => panic!("expected vec6 value"),
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Scalar(_) => Value::Scalar(0.0),
            Value::Vec6(_) => Value::Vec6([0.0; 6]),
            Value::Map(m) => Value::Map(Grid::zeros(m.width(), m.height())),
        }
    }

    fn accumulate(&mut self, other: &Value) {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => *a += b,
            (Value::Vec6(a), Value::Vec6(b)) => {
                for k in 0..6 {
                    a[k] += b[k];
                }
            }
            (Value::Map(a), Value::Map(b)) => {
                let ad = a.data_mut();
                for (x, y) in ad.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            _ => panic!("gradient shape mismatch"),
        }
    }
}

type BackFn = Box<dyn Fn(&Value, &Value, &[&Value]) -> Vec<Value>>;

struct Node {
    value: Value,
    grad: Option<Value>,
    needs_grad: bool,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(
        &mut self,
        value: Value,
        needs_grad: bool,
        parents: Vec<usize>,
        back: Option<BackFn>,
    ) -> Var {
        debug_assert!(parents.iter().all(|&p| p < self.nodes.len()));
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            parents,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: Value, parents: Vec<Var>, back: BackFn) -> Var {
        let needs = parents.iter().any(|v| self.nodes[v.0].needs_grad);
        let parents = parents.into_iter().map(|v| v.0).collect();
        self.push(value, needs, parents, Some(back))
    }

    // --- leaves ---

    pub fn var_map(&mut self, m: Grid<f64>) -> Var {
        self.push(Value::Map(m), true, Vec::new(), None)
    }

    pub fn var_scalar(&mut self, x: f64) -> Var {
        self.push(Value::Scalar(x), true, Vec::new(), None)
    }

    pub fn var_vec6(&mut self, v: [f64; 6]) -> Var {
        self.push(Value::Vec6(v), true, Vec::new(), None)
    }

    pub fn const_map(&mut self, m: Grid<f64>) -> Var {
        self.push(Value::Map(m), false, Vec::new(), None)
    }

    pub fn const_scalar(&mut self, x: f64) -> Var {
        self.push(Value::Scalar(x), false, Vec::new(), None)
    }

    pub fn const_vec6(&mut self, v: [f64; 6]) -> Var {
        self.push(Value::Vec6(v), false, Vec::new(), None)
    }

    // --- access ---

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn map(&self, v: Var) -> &Grid<f64> {
        self.nodes[v.0].value.as_map()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_scalar()
    }

    pub fn grad(&self, v: Var) -> Option<&Value> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_map(&self, v: Var) -> Grid<f64> {
        match self.nodes[v.0].grad.as_ref() {
            Some(Value::Map(m)) => m.clone(),
            None => {
                let m = self.nodes[v.0].value.as_map();
                Grid::zeros(m.width(), m.height())
            }
            _ => panic!("gradient is not a map"),
        }
    }

    pub fn grad_scalar(&self, v: Var) -> f64 {
        match self.nodes[v.0].grad.as_ref() {
            Some(Value::Scalar(x)) => *x,
            None => 0.0,
            _ => panic!("gradient is not a scalar"),
        }
    }

    pub fn grad_vec6(&self, v: Var) -> [f64; 6] {
        match self.nodes[v.0].grad.as_ref() {
            Some(Value::Vec6(g)) => *g,
            None => [0.0; 6],
            _ => panic!("gradient is not a vec6"),
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into every node
    /// reachable from the loss whose subgraph contains a variable leaf.
    pub fn backward(&mut self, loss: Var) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        assert!(
            matches!(self.nodes[loss.0].value, Value::Scalar(_)),
            "backward needs a scalar loss"
        );
        self.nodes[loss.0].grad = Some(Value::Scalar(1.0));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let back = match &node.back {
                Some(b) => b,
                None => continue,
            };
            let gout = node.grad.as_ref().unwrap();
            let parent_vals: Vec<&Value> = node.parents.iter().map(|&p| &head[p].value).collect();
            let parent_grads = back(gout, &node.value, &parent_vals);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            let parents = node.parents.clone();
            for (p, g) in parents.into_iter().zip(parent_grads) {
                if !head[p].needs_grad {
                    continue;
                }
                match &mut head[p].grad {
                    Some(acc) => acc.accumulate(&g),
                    slot @ None => {
                        let mut z = head[p].value.zeros_like();
                        z.accumulate(&g);
                        *slot = Some(z);
                    }
                }
            }
        }
    }

    // --- elementwise ops ---

    fn ew2(
        &mut self,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64) -> (f64, f64),
    ) -> Var {
        let value = match (self.value(a), self.value(b)) {
            (Value::Map(ma), Value::Map(mb)) => {
                assert!(ma.same_shape(mb), "elementwise shape mismatch");
                Value::Map(ma.zip_map(mb, f))
            }
            (Value::Map(ma), Value::Scalar(sb)) => {
                let sb = *sb;
                Value::Map(ma.map(|x| f(x, sb)))
            }
            (Value::Scalar(sa), Value::Map(mb)) => {
                let sa = *sa;
                Value::Map(mb.map(|x| f(sa, x)))
            }
            (Value::Scalar(sa), Value::Scalar(sb)) => Value::Scalar(f(*sa, *sb)),
            _ => panic!("unsupported operand shapes"),
        };
        self.push_op(
            value,
            vec![a, b],
            Box::new(move |gout, _, pv| {
                let (pa, pb) = (pv[0], pv[1]);
                match (pa, pb, gout) {
                    (Value::Map(ma), Value::Map(mb), Value::Map(g)) => {
                        let mut ga = Grid::zeros(ma.width(), ma.height());
                        let mut gb = Grid::zeros(mb.width(), mb.height());
                        for i in 0..ma.len() {
                            let (da, db) = df(ma.data()[i], mb.data()[i]);
                            ga.data_mut()[i] = g.data()[i] * da;
                            gb.data_mut()[i] = g.data()[i] * db;
                        }
                        vec![Value::Map(ga), Value::Map(gb)]
                    }
                    (Value::Map(ma), Value::Scalar(sb), Value::Map(g)) => {
                        let mut ga = Grid::zeros(ma.width(), ma.height());
                        let mut gb = 0.0;
                        for i in 0..ma.len() {
                            let (da, db) = df(ma.data()[i], *sb);
                            ga.data_mut()[i] = g.data()[i] * da;
                            gb += g.data()[i] * db;
                        }
                        vec![Value::Map(ga), Value::Scalar(gb)]
                    }
                    (Value::Scalar(sa), Value::Map(mb), Value::Map(g)) => {
                        let mut ga = 0.0;
                        let mut gb = Grid::zeros(mb.width(), mb.height());
                        for i in 0..mb.len() {
                            let (da, db) = df(*sa, mb.data()[i]);
                            ga += g.data()[i] * da;
                            gb.data_mut()[i] = g.data()[i] * db;
                        }
                        vec![Value::Scalar(ga), Value::Map(gb)]
                    }
                    (Value::Scalar(sa), Value::Scalar(sb), Value::Scalar(g)) => {
                        let (da, db) = df(*sa, *sb);
                        vec![Value::Scalar(g * da), Value::Scalar(g * db)]
                    }
                    _ => panic!("inconsistent backward shapes"),
                }
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.ew2(a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.ew2(a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.ew2(a, b, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.ew2(a, b, |x, y| x / y, |x, y| (1.0 / y, -x / (y * y)))
    }

    /// Elementwise minimum of two maps; the gradient follows the smaller
    /// operand (ties go to the first).
    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        self.ew2(
            a,
            b,
            |x, y| x.min(y),
            |x, y| if x <= y { (1.0, 0.0) } else { (0.0, 1.0) },
        )
    }

    fn ew1(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let value = match self.value(a) {
            Value::Map(m) => Value::Map(m.map(f)),
            Value::Scalar(x) => Value::Scalar(f(*x)),
            _ => panic!("unsupported operand"),
        };
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, pv| match (pv[0], gout) {
                (Value::Map(m), Value::Map(g)) => {
                    let mut ga = Grid::zeros(m.width(), m.height());
                    for i in 0..m.len() {
                        ga.data_mut()[i] = g.data()[i] * df(m.data()[i]);
                    }
                    vec![Value::Map(ga)]
                }
                (Value::Scalar(x), Value::Scalar(g)) => vec![Value::Scalar(g * df(*x))],
                _ => panic!("inconsistent backward shapes"),
            }),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.ew1(a, |x| -x, |_| -1.0)
    }

    /// |x| with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Var {
        self.ew1(a, f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.ew1(a, f64::exp, f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.ew1(a, f64::ln, |x| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.ew1(a, f64::sqrt, |x| 0.5 / x.sqrt())
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.ew1(a, |x| 1.0 / x, |x| -1.0 / (x * x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.ew1(a, |x| x * x, |x| 2.0 * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.ew1(a, sigmoid, |x| {
            let s = sigmoid(x);
            s * (1.0 - s)
        })
    }

    /// k * a + b with constant coefficients.
    pub fn affine(&mut self, a: Var, k: f64, b: f64) -> Var {
        let value = match self.value(a) {
            Value::Map(m) => Value::Map(m.map(|x| k * x + b)),
            Value::Scalar(x) => Value::Scalar(k * x + b),
            _ => panic!("unsupported operand"),
        };
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| match gout {
                Value::Map(g) => vec![Value::Map(g.map(|x| k * x))],
                Value::Scalar(g) => vec![Value::Scalar(k * g)],
                _ => panic!("inconsistent backward shapes"),
            }),
        )
    }

    /// Clamp from above at a constant threshold (zero gradient beyond it).
    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Var {
        let value = Value::Map(self.map(a).map(|x| x.min(cap)));
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, pv| {
                let m = pv[0].as_map();
                let g = gout.as_map();
                let mut ga = Grid::zeros(m.width(), m.height());
                for i in 0..m.len() {
                    ga.data_mut()[i] = if m.data()[i] <= cap { g.data()[i] } else { 0.0 };
                }
                vec![Value::Map(ga)]
            }),
        )
    }

    /// Keep `a` where the mask is set, substitute the constant `fill`
    /// elsewhere; the gradient flows only through kept pixels.
    pub fn mask_select(&mut self, a: Var, mask: &Grid<bool>, fill: f64) -> Var {
        let m = self.map(a);
        assert!(m.same_shape(mask), "mask shape mismatch");
        let value = Value::Map(m.zip_map(mask, |x, keep| if keep { x } else { fill }));
        let mask = mask.clone();
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                vec![Value::Map(
                    g.zip_map(&mask, |x, keep| if keep { x } else { 0.0 }),
                )]
            }),
        )
    }

    // --- stencils ---

    /// Mean over a (2r+1)^2 window with reflect padding (edge not repeated).
    pub fn box_filter(&mut self, a: Var, radius: usize) -> Var {
        let m = self.map(a);
        let (w, h) = (m.width(), m.height());
        let value = Value::Map(box_filter_grid(m, radius));
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                let k = 2 * radius + 1;
                let norm = 1.0 / (k * k) as f64;
                let mut ga = Grid::zeros(w, h);
                for v in 0..h {
                    for u in 0..w {
                        let gv = g.at(v, u) * norm;
                        for dv in -(radius as isize)..=(radius as isize) {
                            for du in -(radius as isize)..=(radius as isize) {
                                let sv = reflect(v as isize + dv, h);
                                let su = reflect(u as isize + du, w);
                                let cur = ga.at(sv, su);
                                ga.set(sv, su, cur + gv);
                            }
                        }
                    }
                }
                vec![Value::Map(ga)]
            }),
        )
    }

    /// Forward horizontal differences: out(v, u) = a(v, u+1) - a(v, u),
    /// shape (W-1) x H.
    pub fn diff_u(&mut self, a: Var) -> Var {
        let m = self.map(a);
        let (w, h) = (m.width(), m.height());
        assert!(w >= 2, "diff_u needs width >= 2");
        let value = Value::Map(Grid::from_fn(w - 1, h, |v, u| m.at(v, u + 1) - m.at(v, u)));
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                let mut ga = Grid::zeros(w, h);
                for v in 0..h {
                    for u in 0..w - 1 {
                        let x = g.at(v, u);
                        ga.set(v, u + 1, ga.at(v, u + 1) + x);
                        ga.set(v, u, ga.at(v, u) - x);
                    }
                }
                vec![Value::Map(ga)]
            }),
        )
    }

    /// Forward vertical differences: out(v, u) = a(v+1, u) - a(v, u),
    /// shape W x (H-1).
    pub fn diff_v(&mut self, a: Var) -> Var {
        let m = self.map(a);
        let (w, h) = (m.width(), m.height());
        assert!(h >= 2, "diff_v needs height >= 2");
        let value = Value::Map(Grid::from_fn(w, h - 1, |v, u| m.at(v + 1, u) - m.at(v, u)));
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                let mut ga = Grid::zeros(w, h);
                for v in 0..h - 1 {
                    for u in 0..w {
                        let x = g.at(v, u);
                        ga.set(v + 1, u, ga.at(v + 1, u) + x);
                        ga.set(v, u, ga.at(v, u) - x);
                    }
                }
                vec![Value::Map(ga)]
            }),
        )
    }

    // --- reductions ---

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.map(a);
        let n = m.len() as f64;
        let (w, h) = (m.width(), m.height());
        let value = Value::Scalar(m.sum() / n);
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_scalar() / n;
                vec![Value::Map(Grid::filled(w, h, g))]
            }),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let m = self.map(a);
        let (w, h) = (m.width(), m.height());
        let value = Value::Scalar(m.sum());
        self.push_op(
            value,
            vec![a],
            Box::new(move |gout, _, _| {
                vec![Value::Map(Grid::filled(w, h, gout.as_scalar()))]
            }),
        )
    }

    /// Mean over pixels where the mask is set; the caller must guarantee a
    /// nonempty mask.
    pub fn masked_mean(&mut self, a: Var, mask: &Grid<bool>) -> Var {
        let m = self.map(a);
        assert!(m.same_shape(mask), "mask shape mismatch");
        let count = mask.count();
        assert!(count > 0, "masked_mean over an empty mask");
        let mut total = 0.0;
        for i in 0..m.len() {
            if mask.data()[i] {
                total += m.data()[i];
            }
        }
        let mask = mask.clone();
        let n = count as f64;
        self.push_op(
            Value::Scalar(total / n),
            vec![a],
            Box::new(move |gout, _, _| {
                let g = gout.as_scalar() / n;
                vec![Value::Map(mask.map(|keep| if keep { g } else { 0.0 }))]
            }),
        )
    }

    // --- warp ops ---

    /// Sample a constant source channel at the plan's projected coordinates.
    /// Differentiates through the coordinates into the distance map and the
    /// pose twist. Invalid pixels produce 0 with zero gradient.
    pub fn warp_sample_const(
        &mut self,
        plan: &Rc<WarpPlan>,
        src: &Rc<Vec<f64>>,
        dist: Var,
        twist: Var,
        mode: SampleMode,
    ) -> Result<Var> {
        if mode == SampleMode::Nearest {
            return Err(Error::UnsupportedGradient(
                "nearest-neighbor warping is not differentiable".into(),
            ));
        }
        let (w, h) = (plan.width, plan.height);
        let mut out = Grid::zeros(w, h);
        for i in 0..w * h {
            if plan.valid[i] {
                out.data_mut()[i] = crate::warp::sample_scalar(src, w, h, plan.u[i], plan.v[i]);
            }
        }
        let plan = Rc::clone(plan);
        let src = Rc::clone(src);
        Ok(self.push_op(
            Value::Map(out),
            vec![dist, twist],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                let mut gd = Grid::zeros(plan.width, plan.height);
                let mut gt = [0.0; 6];
                backprop_through_coords(&plan, &src, g, &mut gd, &mut gt);
                vec![Value::Map(gd), Value::Vec6(gt)]
            }),
        ))
    }

    /// Sample a *variable* map at the plan's coordinates. Differentiates into
    /// the sampled map (scatter), the distance map, and the twist.
    pub fn warp_sample_var(
        &mut self,
        plan: &Rc<WarpPlan>,
        sampled: Var,
        dist: Var,
        twist: Var,
    ) -> Var {
        let (w, h) = (plan.width, plan.height);
        let src_now = self.map(sampled);
        assert!(src_now.width() == w && src_now.height() == h);
        let mut out = Grid::zeros(w, h);
        for i in 0..w * h {
            if plan.valid[i] {
                out.data_mut()[i] =
                    crate::warp::sample_scalar(src_now.data(), w, h, plan.u[i], plan.v[i]);
            }
        }
        let plan = Rc::clone(plan);
        self.push_op(
            Value::Map(out),
            vec![sampled, dist, twist],
            Box::new(move |gout, _, pv| {
                let src = pv[0].as_map();
                let g = gout.as_map();
                let (w, h) = (plan.width, plan.height);
                let mut gs = Grid::zeros(w, h);
                let mut gd = Grid::zeros(w, h);
                let mut gt = [0.0; 6];
                for i in 0..w * h {
                    if !plan.valid[i] || g.data()[i] == 0.0 {
                        continue;
                    }
                    let gi = g.data()[i];
                    let (idx, wts, fu, fv) = bilinear_weights(plan.u[i], plan.v[i], w, h);
                    for k in 0..4 {
                        gs.data_mut()[idx[k]] += gi * wts[k];
                    }
                    let corners = [
                        src.data()[idx[0]],
                        src.data()[idx[1]],
                        src.data()[idx[2]],
                        src.data()[idx[3]],
                    ];
                    let (du, dv) = bilinear_derivative(corners, fu, fv);
                    accumulate_coord_grads(&plan, i, gi, du, dv, &mut gd, &mut gt);
                }
                vec![Value::Map(gs), Value::Map(gd), Value::Vec6(gt)]
            }),
        )
    }

    /// Distance of the transformed point per pixel (the D_{t->t'} term).
    pub fn warp_transformed_distance(&mut self, plan: &Rc<WarpPlan>, dist: Var, twist: Var) -> Var {
        let (w, h) = (plan.width, plan.height);
        let mut out = Grid::zeros(w, h);
        for i in 0..w * h {
            if plan.valid[i] {
                out.data_mut()[i] = plan.trans_dist[i];
            }
        }
        let plan = Rc::clone(plan);
        self.push_op(
            Value::Map(out),
            vec![dist, twist],
            Box::new(move |gout, _, _| {
                let g = gout.as_map();
                assert!(
                    !plan.td_d.is_empty(),
                    "warp plan was built without jacobians"
                );
                let mut gd = Grid::zeros(plan.width, plan.height);
                let mut gt = [0.0; 6];
                for i in 0..plan.width * plan.height {
                    if !plan.valid[i] || g.data()[i] == 0.0 {
                        continue;
                    }
                    let gi = g.data()[i];
                    gd.data_mut()[i] += gi * plan.td_d[i];
                    for k in 0..6 {
                        gt[k] += gi * plan.td_t[i][k];
                    }
                }
                vec![Value::Map(gd), Value::Vec6(gt)]
            }),
        )
    }
}

fn backprop_through_coords(
    plan: &WarpPlan,
    src: &[f64],
    g: &Grid<f64>,
    gd: &mut Grid<f64>,
    gt: &mut [f64; 6],
) {
    let (w, h) = (plan.width, plan.height);
    assert!(!plan.g_d.is_empty(), "warp plan was built without jacobians");
    for i in 0..w * h {
        if !plan.valid[i] || g.data()[i] == 0.0 {
            continue;
        }
        let gi = g.data()[i];
        let (idx, _, fu, fv) = bilinear_weights(plan.u[i], plan.v[i], w, h);
        let corners = [src[idx[0]], src[idx[1]], src[idx[2]], src[idx[3]]];
        let (du, dv) = bilinear_derivative(corners, fu, fv);
        accumulate_coord_grads(plan, i, gi, du, dv, gd, gt);
    }
}

#[inline]
fn accumulate_coord_grads(
    plan: &WarpPlan,
    i: usize,
    gi: f64,
    du: f64,
    dv: f64,
    gd: &mut Grid<f64>,
    gt: &mut [f64; 6],
) {
    gd.data_mut()[i] += gi * (du * plan.g_d[i][0] + dv * plan.g_d[i][1]);
    for k in 0..6 {
        gt[k] += gi * (du * plan.g_t[i][k] + dv * plan.g_t[i][6 + k]);
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mirror an index across the borders without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

pub(crate) fn box_filter_grid(m: &Grid<f64>, radius: usize) -> Grid<f64> {
    let (w, h) = (m.width(), m.height());
    let k = 2 * radius + 1;
    let norm = 1.0 / (k * k) as f64;
    Grid::from_fn(w, h, |v, u| {
        let mut acc = 0.0;
        for dv in -(radius as isize)..=(radius as isize) {
            for du in -(radius as isize)..=(radius as isize) {
                acc += m.at(reflect(v as isize + dv, h), reflect(u as isize + du, w));
            }
        }
        acc * norm
    })
}

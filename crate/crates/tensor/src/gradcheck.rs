//! Central finite-difference gradient checking in 64-bit.
//!
//! The numerical side only ever runs forward passes, so it is independent of
//! the backward rules it checks. Perturbations that flip a ReLU or clamp
//! decision between `x - h` and `x + h` straddle a point where the function is
//! not differentiable; those elements are counted as skipped instead of
//! compared.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::Result;
use crate::graph::{Graph, Mode, Op, UnKind, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            ..Self::default()
        }
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: Option<f64>) {
        let Some(numeric) = numeric else {
            self.skipped += 1;
            return;
        };
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some((tensor.to_owned(), index, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

impl Graph<'_, f64> {
    /// Hash of every ReLU sign and clamp-activity decision on the tape.
    pub fn nonsmooth_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Unary { kind, x } = &node.op {
                let xv = self.nodes[x.0].value.data();
                match kind {
                    UnKind::Relu => xv.iter().for_each(|&v| h.write_u8((v > 0.0) as u8)),
                    UnKind::Clamp(lo, hi) => xv
                        .iter()
                        .for_each(|&v| h.write_u8(((v >= *lo) as u8) | (((v <= *hi) as u8) << 1))),
                    _ => {}
                }
            }
        }
        h.finish()
    }
}

fn central(
    plus: Result<(f64, u64)>,
    minus: Result<(f64, u64)>,
    h: f64,
) -> Result<Option<f64>> {
    let (fp, sp) = plus?;
    let (fm, sm) = minus?;
    Ok((sp == sm).then(|| (fp - fm) / (2.0 * h)))
}

/// Checks the gradient of a scalar function of free-standing inputs.
pub fn check_fn<F>(name: &str, inputs: &[Tensor<f64>], f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.nonsmooth_signature()))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = CheckReport::new(name);
    let mut xs = inputs.to_vec();
    for (t, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let x0 = xs[t].data()[i];
            xs[t].data_mut()[i] = x0 + STEP;
            let plus = eval(&xs);
            xs[t].data_mut()[i] = x0 - STEP;
            let minus = eval(&xs);
            xs[t].data_mut()[i] = x0;
            report.record(&format!("input{t}"), i, a, central(plus, minus, STEP)?);
        }
    }
    Ok(report)
}

/// Checks parameter gradients of a loss built by `f` over `store`.
///
/// `f` runs in training mode; batch-norm running statistics it queues are
/// discarded. `per_param` caps how many evenly spaced elements of each
/// parameter are perturbed (`None` checks all of them).
pub fn check_params<F>(
    name: &str,
    store: &mut ParamStore<f64>,
    per_param: Option<usize>,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::with_params(s, Mode::Train);
        let out = f(&mut g)?;
        Ok((g.value(out).item(), g.nonsmooth_signature()))
    };
    let analytic: Vec<(crate::params::ParamId, Tensor<f64>)> = {
        let mut g = Graph::with_params(&*store, Mode::Train);
        let out = f(&mut g)?;
        let grads = g.backward(out)?;
        grads.params().map(|(id, t)| (id, t.clone())).collect()
    };

    let mut report = CheckReport::new(name);
    for (id, grad) in analytic {
        let n = grad.numel();
        let step = per_param.map_or(1, |k| n.div_ceil(k.max(1)));
        let pname = store.param(id).name.clone();
        for i in (0..n).step_by(step) {
            let x0 = store.param(id).value.data()[i];
            store.param_mut(id).value.data_mut()[i] = x0 + STEP;
            let plus = eval(store);
            store.param_mut(id).value.data_mut()[i] = x0 - STEP;
            let minus = eval(store);
            store.param_mut(id).value.data_mut()[i] = x0;
            report.record(&pname, i, grad.data()[i], central(plus, minus, STEP)?);
        }
    }
    Ok(report)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    crate::init::uniform(shape.to_vec(), 1.0, &mut rng)
}

/// `sum(y ∘ r)` for a fixed random `r`, so that every output element
/// contributes with its own weight.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let r = random(g.shape(y), seed ^ 0x5eed);
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Vec<Vec<usize>>, fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>);

/// Checks every differentiable primitive on small random inputs.
pub fn primitive_suite() -> Result<Vec<CheckReport>> {
    let cases: Vec<Case> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(g.sum(y))
        }),
        ("batched matmul", vec![vec![2, 3, 4], vec![2, 4, 5]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }),
        ("matmul_nt", vec![vec![2, 3, 4], vec![5, 4]], |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, y, 2)
        }),
        ("conv2d 3x3", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            weighted_sum(g, y, 3)
        }),
        ("conv2d 3x3 stride 2", vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3]], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 2, 1)?;
            weighted_sum(g, y, 4)
        }),
        ("conv2d 1x1", vec![vec![1, 2, 5, 5], vec![3, 2, 1, 1], vec![3]], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
            weighted_sum(g, y, 5)
        }),
        ("conv2d 7x7", vec![vec![1, 2, 5, 5], vec![1, 2, 7, 7], vec![1]], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 3)?;
            weighted_sum(g, y, 6)
        }),
        ("softmax", vec![vec![2, 3, 4]], |g, v| {
            let y = g.softmax(v[0], 2)?;
            weighted_sum(g, y, 7)
        }),
        ("bilinear_resize up", vec![vec![1, 2, 3, 4]], |g, v| {
            let y = g.bilinear_resize(v[0], 6, 8)?;
            weighted_sum(g, y, 8)
        }),
        ("bilinear_resize down", vec![vec![1, 2, 5, 6]], |g, v| {
            let y = g.bilinear_resize(v[0], 2, 3)?;
            weighted_sum(g, y, 9)
        }),
        ("add", vec![vec![2, 3, 4], vec![3, 1]], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 10)
        }),
        ("sub", vec![vec![2, 3, 4], vec![3, 1]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y, 11)
        }),
        ("mul", vec![vec![2, 3, 4], vec![3, 1]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 12)
        }),
        ("div", vec![vec![2, 3, 4], vec![3, 1]], |g, v| {
            let d = g.add_scalar(v[1], 3.0);
            let y = g.div(v[0], d)?;
            weighted_sum(g, y, 13)
        }),
        ("relu", vec![vec![3, 5]], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 14)
        }),
        ("sigmoid", vec![vec![3, 5]], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y, 15)
        }),
        ("log", vec![vec![3, 5]], |g, v| {
            let p = g.add_scalar(v[0], 2.0);
            let y = g.log(p);
            weighted_sum(g, y, 16)
        }),
        ("exp", vec![vec![3, 5]], |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y, 17)
        }),
        ("clamp", vec![vec![3, 5]], |g, v| {
            let y = g.clamp(v[0], -0.5, 0.5);
            weighted_sum(g, y, 18)
        }),
        ("sum", vec![vec![2, 3]], |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        }),
        ("mean", vec![vec![2, 3]], |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.mean(y))
        }),
        ("sum_axis", vec![vec![2, 3, 4]], |g, v| {
            let y = g.sum_axis(v[0], 1)?;
            weighted_sum(g, y, 19)
        }),
        ("mean_axis", vec![vec![2, 3, 4]], |g, v| {
            let y = g.mean_axis(v[0], 2)?;
            weighted_sum(g, y, 20)
        }),
        ("concat", vec![vec![2, 3, 4], vec![2, 1, 4]], |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            weighted_sum(g, y, 21)
        }),
        ("narrow", vec![vec![2, 5]], |g, v| {
            let y = g.narrow(v[0], 1, 1, 3)?;
            weighted_sum(g, y, 22)
        }),
        ("reshape", vec![vec![2, 3, 4]], |g, v| {
            let y = g.reshape(v[0], [6, 4])?;
            weighted_sum(g, y, 23)
        }),
        ("flatten", vec![vec![2, 3, 4]], |g, v| {
            let y = g.flatten(v[0], 1)?;
            weighted_sum(g, y, 24)
        }),
        ("transpose", vec![vec![2, 3, 4]], |g, v| {
            let y = g.transpose(v[0], 0, 2)?;
            weighted_sum(g, y, 25)
        }),
        ("permute", vec![vec![2, 3, 4]], |g, v| {
            let y = g.permute(v[0], &[1, 2, 0])?;
            weighted_sum(g, y, 26)
        }),
        ("gather_rows", vec![vec![4, 3]], |g, v| {
            let y = g.gather_rows(v[0], &[3, 0, 3])?;
            weighted_sum(g, y, 27)
        }),
        ("batch_norm train", vec![vec![2, 3, 3, 3], vec![3], vec![3]], |g, v| {
            let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y, 28)
        }),
        ("batch_norm eval", vec![vec![2, 3, 3, 3], vec![3], vec![3]], |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[1.5, 0.7, 2.0], 1e-5)?;
            weighted_sum(g, y, 29)
        }),
        ("layer_norm", vec![vec![2, 3, 5], vec![5], vec![5]], |g, v| {
            let y = g.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5)?;
            weighted_sum(g, y, 30)
        }),
        ("linear", vec![vec![2, 3, 4], vec![5, 4], vec![5]], |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            let y = g.add(y, v[2])?;
            weighted_sum(g, y, 31)
        }),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, f))| {
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .enumerate()
                .map(|(j, s)| random(s, 1000 + 10 * i as u64 + j as u64))
                .collect();
            check_fn(name, &inputs, f)
        })
        .collect()
}

//! Shared oracles for the integration tests.
#![allow(dead_code)]

use matscale::data::{generate_synthetic, MaterialRecord, SyntheticParams};
use matscale::models::{Model, ModelConfig};
use matscale::tensor::{Graph, Tensor, Var};
use matscale::training::{compute_gradients, TrainConfig};
use matscale::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn records(n: usize, atoms: (usize, usize), seed: u64) -> Vec<MaterialRecord> {
    generate_synthetic(n, atoms, seed, &SyntheticParams::default()).unwrap()
}

/// Largest absolute difference over the largest magnitude in either slice.
pub fn normwise_rel(reference: &[f64], other: &[f64]) -> f64 {
    assert_eq!(reference.len(), other.len());
    let diff = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = reference
        .iter()
        .chain(other)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable operation under test, with its inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    build: Build,
}

fn tensor(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    sample: impl Fn(&mut ChaCha8Rng) -> f64,
) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| sample(rng)).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.5..1.5)
}

/// Magnitude in [0.2, 1.5] with a random sign; keeps kinks and poles out
/// of reach of the finite-difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.gen_range(0.2..1.5);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Every differentiable graph operation, with shapes drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(2..5);
    let c = rng.gen_range(2..5);
    let k = rng.gen_range(2..5);
    let mut t = |shape: &[usize]| tensor(&mut rng, shape, normal);
    let (x, y, row, col) = (t(&[r, c]), t(&[r, c]), t(&[1, c]), t(&[r, 1]));
    let (m1, m2, m2t) = (t(&[r, k]), t(&[k, c]), t(&[c, k]));
    let (b1, b2) = (t(&[2, r, k]), t(&[2, k, c]));
    let t4 = t(&[2, r, c, 2]);
    let gain = t(&[c]);
    let bias = t(&[c]);
    let extra = t(&[r + 1, c]);
    let wide = t(&[r, c + 2]);
    let cube = t(&[r, c, 2]);
    let scalar_like = t(&[1, 1]);
    let kinked = tensor(&mut rng, &[r, c], away_from_zero);
    let positive = tensor(&mut rng, &[r, c], |g| g.gen_range(0.3..2.0));
    let denom = tensor(&mut rng, &[r, c], away_from_zero);
    let gather_idx: Vec<usize> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
    let scatter_idx: Vec<usize> = (0..r).map(|_| rng.gen_range(0..2)).collect();
    let shift: f64 = rng.gen_range(-2.0..2.0);
    let factor: f64 = rng.gen_range(-2.0..2.0);

    let mut cases = vec![
        case("neg", vec![x.clone()], |g, v| Ok(g.neg(v[0]))),
        case("sigmoid", vec![x.clone()], |g, v| Ok(g.sigmoid(v[0]))),
        case("silu", vec![x.clone()], |g, v| Ok(g.silu(v[0]))),
        case("sin", vec![x.clone()], |g, v| Ok(g.sin(v[0]))),
        case("cos", vec![x.clone()], |g, v| Ok(g.cos(v[0]))),
        case("square", vec![x.clone()], |g, v| Ok(g.square(v[0]))),
        case("sqrt", vec![positive], |g, v| Ok(g.sqrt(v[0]))),
        case("exp", vec![x.clone()], |g, v| Ok(g.exp(v[0]))),
        case("abs", vec![kinked], |g, v| Ok(g.abs(v[0]))),
        case("add", vec![x.clone(), y.clone()], |g, v| g.add(v[0], v[1])),
        case("add_broadcast_row", vec![x.clone(), row.clone()], |g, v| {
            g.add(v[0], v[1])
        }),
        case("sub_broadcast_col", vec![x.clone(), col.clone()], |g, v| {
            g.sub(v[0], v[1])
        }),
        case("mul", vec![x.clone(), y.clone()], |g, v| g.mul(v[0], v[1])),
        case(
            "mul_broadcast_scalar",
            vec![x.clone(), scalar_like],
            |g, v| g.mul(v[0], v[1]),
        ),
        case("div", vec![x.clone(), denom.clone()], |g, v| {
            g.div(v[0], v[1])
        }),
        case("scale", vec![x.clone()], move |g, v| {
            Ok(g.scale(v[0], factor))
        }),
        case("add_scalar", vec![x.clone()], move |g, v| {
            Ok(g.add_scalar(v[0], shift))
        }),
        case("matmul", vec![m1.clone(), m2.clone()], |g, v| {
            g.matmul(v[0], v[1])
        }),
        case("matmul_transposed_rhs", vec![m1.clone(), m2t], |g, v| {
            g.matmul_t(v[0], v[1], false, true)
        }),
        case(
            "matmul_transposed_lhs",
            vec![t_of(&m1), m2.clone()],
            |g, v| g.matmul_t(v[0], v[1], true, false),
        ),
        case("matmul_batched", vec![b1, b2], |g, v| g.matmul(v[0], v[1])),
        case("transpose", vec![x.clone()], |g, v| g.transpose(v[0])),
        case("permute", vec![t4.clone()], |g, v| {
            g.permute(v[0], &[0, 2, 1, 3])
        }),
        case("sum", vec![x.clone()], |g, v| Ok(g.sum(v[0]))),
        case("sum_axis_0", vec![x.clone()], |g, v| g.sum_axis(v[0], 0)),
        case("sum_axis_1", vec![cube.clone()], |g, v| g.sum_axis(v[0], 1)),
        case("mean", vec![x.clone()], |g, v| Ok(g.mean(v[0]))),
        case("expand", vec![row.clone()], move |g, v| {
            g.expand(v[0], &[r, c])
        }),
        case("sum_to", vec![x.clone()], move |g, v| {
            g.sum_to(v[0], &[1, c])
        }),
        case("softmax_rows", vec![x.clone()], |g, v| g.softmax(v[0], 1)),
        case("softmax_cols", vec![x.clone()], |g, v| g.softmax(v[0], 0)),
        case("softmax_rank3", vec![cube], |g, v| g.softmax(v[0], 1)),
        case("layernorm", vec![x.clone(), gain, bias], |g, v| {
            g.layernorm(v[0], v[1], v[2], 1e-5)
        }),
        case("gather_rows", vec![x.clone()], move |g, v| {
            g.gather_rows(v[0], gather_idx.clone())
        }),
        case("scatter_add_rows", vec![x.clone()], move |g, v| {
            g.scatter_add_rows(v[0], scatter_idx.clone(), 2)
        }),
        case("slice", vec![wide.clone()], move |g, v| {
            g.slice(v[0], 1, r - 1, 1, c)
        }),
        case("pad", vec![x.clone()], move |g, v| {
            g.pad(v[0], r + 2, c + 1, 1, 1)
        }),
        case("concat_rows", vec![x.clone(), extra], |g, v| {
            g.concat_rows(&[v[0], v[1]])
        }),
        case("concat_cols", vec![x.clone(), wide], |g, v| {
            g.concat_cols(&[v[0], v[1]])
        }),
        case("reshape", vec![x.clone()], move |g, v| {
            g.reshape(v[0], &[c, r])
        }),
    ];
    // differentiating through a gradient exercises double backward
    cases.push(case("gradient_of_silu_energy", vec![x, row], |g, v| {
        let s = g.silu(v[0]);
        let w = g.mul(s, v[1])?;
        let e = g.sum(w);
        Ok(g.grad(e, &[v[0]], true)?[0])
    }));
    cases
}

fn t_of(m: &Tensor) -> Tensor {
    let (r, c) = m.dims2().unwrap();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = m.get2(i, j);
        }
    }
    Tensor::new(vec![c, r], data).unwrap()
}

impl OpCase {
    /// `sum(op(inputs) ⊙ probe)` and, on request, its input gradients.
    fn eval(
        &self,
        inputs: &[Tensor],
        probe: Option<&Tensor>,
        want_grad: bool,
    ) -> (f64, Tensor, Option<Vec<Tensor>>) {
        let mut g = Graph::default();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = (self.build)(&mut g, &vars).unwrap_or_else(|e| panic!("{}: {e}", self.name));
        let shape = g.value(out).clone();
        let Some(probe) = probe else {
            return (0.0, shape, None);
        };
        let p = g.constant(probe.clone());
        let weighted = g.mul(out, p).unwrap();
        let s = g.sum(weighted);
        let value = g.value(s).item();
        let grads = want_grad.then(|| {
            let mut gr = g.backward(s).unwrap();
            vars.iter().map(|&v| gr.take(v).unwrap()).collect()
        });
        (value, shape, grads)
    }

    /// Normwise relative error between backprop and central differences,
    /// taken over the gradient of all inputs stacked together.
    pub fn check(&self, seed: u64) -> f64 {
        let (_, out, _) = self.eval(&self.inputs, None, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let probe = tensor(&mut rng, out.shape(), normal);
        let (_, _, grads) = self.eval(&self.inputs, Some(&probe), true);
        let mut analytic = Vec::new();
        let mut fd = Vec::new();
        for (i, grad) in grads.unwrap().iter().enumerate() {
            analytic.extend_from_slice(grad.data());
            for k in 0..grad.len() {
                let mut plus = self.inputs.clone();
                plus[i].data_mut()[k] += FD_STEP;
                let mut minus = self.inputs.clone();
                minus[i].data_mut()[k] -= FD_STEP;
                let hi = self.eval(&plus, Some(&probe), false).0;
                let lo = self.eval(&minus, Some(&probe), false).0;
                fd.push((hi - lo) / (2.0 * FD_STEP));
            }
        }
        normwise_rel(&analytic, &fd)
    }
}

/// Worst error of the full transformer training loss gradient against
/// central differences, on `samples` random parameter entries.
pub fn transformer_loss_check(seed: u64, samples: usize) -> f64 {
    let model = Model::new(ModelConfig::transformer(8, 1, 2, 16), seed).unwrap();
    let recs = records(2, (2, 3), seed + 1000);
    let refs: Vec<&MaterialRecord> = recs.iter().collect();
    let cfg = TrainConfig::default();
    let analytic: Vec<f64> = compute_gradients(&model, &refs, &cfg)
        .unwrap()
        .grads
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let scale = analytic.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let base = model.params().flatten();
    let loss_at = |flat: &[f64]| {
        let mut m = model.clone();
        m.params_mut().assign(flat).unwrap();
        compute_gradients(&m, &refs, &cfg).unwrap().loss.total
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.gen_range(0..base.len());
        let mut plus = base.clone();
        plus[k] += FD_STEP;
        let mut minus = base.clone();
        minus[k] -= FD_STEP;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
        worst = worst.max((fd - analytic[k]).abs() / scale);
    }
    worst
}

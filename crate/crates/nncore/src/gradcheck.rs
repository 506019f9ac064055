//! Central finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const SHAPES_PER_OP: usize = 12;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub shapes_checked: usize,
    pub max_rel_error: f64,
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Max relative error between autodiff and central differences for the scalar
/// `sum(build(inputs) * proj)`, where `proj` is a fixed random tensor.
pub fn check(build: &Build, inputs: &[Tensor], rng: &mut impl Rng) -> Result<f64> {
    let eval = |ins: &[Tensor], proj: &Tensor| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let pv = tape.constant(proj.clone());
        let prod = tape.mul(out, pv)?;
        let loss = tape.sum(prod)?;
        Ok((tape, vars, loss))
    };
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let n: usize = out_shape.iter().product();
    let proj = Tensor::new(out_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let (mut tape, vars, loss) = eval(inputs, &proj)?;
    tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let (tp, _, lp) = eval(&plus, &proj)?;
            let (tm, _, lm) = eval(&minus, &proj)?;
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero so kinks are never straddled.
fn rand_away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 - v.abs() } else { 0.05 + *v };
        }
    }
    t
}

fn dims(rng: &mut impl Rng) -> (usize, usize) {
    (rng.random_range(1..=5), rng.random_range(1..=6))
}

/// Runs every op check with `SHAPES_PER_OP` random shapes each.
pub fn check_all(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |op: &'static str,
                   rng: &mut ChaCha8Rng,
                   gen: &mut dyn FnMut(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>)|
     -> Result<()> {
        let mut worst: f64 = 0.0;
        for _ in 0..SHAPES_PER_OP {
            let (inputs, build) = gen(rng);
            worst = worst.max(check(build.as_ref(), &inputs, rng)?);
        }
        reports.push(OpCheck {
            op,
            shapes_checked: SHAPES_PER_OP,
            max_rel_error: worst,
        });
        Ok(())
    };

    run("matmul", &mut rng, &mut |r| {
        let (m, k) = dims(r);
        let n = r.random_range(1..=5);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, n])], Box::new(|t, v| t.matmul(v[0], v[1])))
    })?;
    run("add", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[m, n])], Box::new(|t, v| t.add(v[0], v[1])))
    })?;
    run("mul", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[m, n])], Box::new(|t, v| t.mul(v[0], v[1])))
    })?;
    run("add_bias", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[n])], Box::new(|t, v| t.add_bias(v[0], v[1])))
    })?;
    run("scale", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let s = r.random_range(-2.0..2.0);
        (vec![rand_tensor(r, &[m, n])], Box::new(move |t, v| t.scale(v[0], s)))
    })?;
    run("concat", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let m2 = r.random_range(1..=4);
        (
            vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[m2, n])],
            Box::new(|t, v| t.concat(&[v[0], v[1], v[0]])),
        )
    })?;
    run("slice", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let m = m + 1;
        let start = r.random_range(0..m);
        let len = r.random_range(1..=m - start);
        (vec![rand_tensor(r, &[m, n])], Box::new(move |t, v| t.slice_rows(v[0], start, len)))
    })?;
    run("embedding_lookup", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let idx: Vec<usize> = (0..r.random_range(1..=6)).map(|_| r.random_range(0..m)).collect();
        (vec![rand_tensor(r, &[m, n])], Box::new(move |t, v| t.embedding_lookup(v[0], &idx)))
    })?;
    run("relu", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_away_from_zero(r, &[m, n])], Box::new(|t, v| t.relu(v[0])))
    })?;
    run("gelu", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n])], Box::new(|t, v| t.gelu(v[0])))
    })?;
    run("softmax", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n])], Box::new(|t, v| t.softmax(v[0])))
    })?;
    run("causal_mask", &mut rng, &mut |r| {
        let l = r.random_range(1..=6);
        (
            vec![rand_tensor(r, &[l, l])],
            Box::new(|t, v| {
                let m = t.causal_mask(v[0])?;
                t.softmax(m)
            }),
        )
    })?;
    run("layer_norm", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let n = n + 1;
        (
            vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[n]), rand_tensor(r, &[n])],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        )
    })?;
    run("mean_pool", &mut rng, &mut |r| {
        let (g, n) = dims(r);
        let group = r.random_range(1..=4);
        (vec![rand_tensor(r, &[g * group, n])], Box::new(move |t, v| t.mean_pool(v[0], group)))
    })?;
    run("attention", &mut rng, &mut |r| {
        let heads = r.random_range(1..=2);
        let d = heads * r.random_range(1..=3);
        let segs: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(1..=4)).collect();
        let rows: usize = segs.iter().sum();
        let causal = r.random_bool(0.5);
        (
            vec![rand_tensor(r, &[rows, d]), rand_tensor(r, &[rows, d]), rand_tensor(r, &[rows, d])],
            Box::new(move |t, v| t.attention(v[0], v[1], v[2], &segs, heads, causal)),
        )
    })?;
    run("cross_entropy", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        let n = n + 1;
        let targets: Vec<usize> = (0..m).map(|_| r.random_range(0..n)).collect();
        let weights: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
        (
            vec![rand_tensor(r, &[m, n])],
            Box::new(move |t, v| {
                let a = t.cross_entropy(v[0], &targets)?;
                let b = t.weighted_cross_entropy(v[0], &targets, &weights)?;
                t.add(a, b)
            }),
        )
    })?;
    run("mse", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[m, n])], Box::new(|t, v| t.mse(v[0], v[1])))
    })?;
    run("sum", &mut rng, &mut |r| {
        let (m, n) = dims(r);
        (vec![rand_tensor(r, &[m, n])], Box::new(|t, v| t.sum(v[0])))
    })?;
    Ok(reports)
}

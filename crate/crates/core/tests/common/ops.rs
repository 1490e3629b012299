//! Random instances for every differentiable tape operation.

use std::rc::Rc;

use mgm_core::autodiff::check::gradient_error;
use mgm_core::autodiff::{SparseMatrix, Tape, Tensor, Var};
use mgm_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;

pub type Case = fn(&mut ChaCha8Rng) -> Result<f64>;

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Entries with magnitude in `[0.1, 2]` and random sign, away from kinks at 0.
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

/// Reduces any value to a scalar through a fixed random weighting so every
/// output entry contributes a distinct coefficient.
fn project<'t>(tape: &'t Tape, y: Var<'t>, seed_rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    let v = y.value();
    let w = tape.constant(normal(seed_rng, v.rows(), v.cols()));
    Ok(y.mul(w)?.sum())
}

macro_rules! unary_case {
    ($name:ident, $gen:expr, |$x:ident| $body:expr) => {
        fn $name(rng: &mut ChaCha8Rng) -> Result<f64> {
            let (r, c) = dims(rng);
            let x: Tensor = $gen(rng, r, c);
            let proj = rng.random::<u64>();
            gradient_error(&[x], STEP, |tape, v| {
                let $x = v[0];
                let y: Var<'_> = $body;
                project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
            })
        }
    };
}

unary_case!(relu, off_zero, |x| x.relu());
unary_case!(elu, off_zero, |x| x.elu());
unary_case!(exp, normal, |x| x.exp());
unary_case!(
    ln,
    |rng, r, c| positive(rng, r, c, 0.2, 3.0),
    |x| x.ln()
);
unary_case!(
    ln_floor,
    |rng, r, c| positive(rng, r, c, 0.2, 3.0),
    |x| x.ln_floor(1e-3)
);
unary_case!(softplus, normal, |x| x.softplus());
unary_case!(square, normal, |x| x.square());
unary_case!(
    digamma,
    |rng, r, c| positive(rng, r, c, 0.3, 6.0),
    |x| x.digamma()
);
unary_case!(affine, normal, |x| x.affine(-1.7, 0.4));
unary_case!(transpose, normal, |x| x.transpose());
unary_case!(sum_rows, normal, |x| x.sum_rows());
unary_case!(softmax, normal, |x| x.softmax_rows(None)?);
unary_case!(log_softmax, normal, |x| x.log_softmax_rows(None)?);
unary_case!(normalize_rows, normal, |x| x.normalize_rows());

macro_rules! binary_case {
    ($name:ident, $gen_b:expr, |$a:ident, $b:ident| $body:expr) => {
        fn $name(rng: &mut ChaCha8Rng) -> Result<f64> {
            let (r, c) = dims(rng);
            let a = normal(rng, r, c);
            let b: Tensor = $gen_b(rng, r, c);
            let proj = rng.random::<u64>();
            gradient_error(&[a, b], STEP, |tape, v| {
                let ($a, $b) = (v[0], v[1]);
                let y: Var<'_> = $body;
                project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
            })
        }
    };
}

binary_case!(add, normal, |a, b| a.add(b)?);
binary_case!(sub, normal, |a, b| a.sub(b)?);
binary_case!(mul, normal, |a, b| a.mul(b)?);
binary_case!(div, off_zero, |a, b| a.div(b)?);
binary_case!(concat_cols, normal, |a, b| a.concat_cols(b)?);

fn matmul(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (m, k) = dims(rng);
    let n = rng.random_range(1..5);
    let a = normal(rng, m, k);
    let b = normal(rng, k, n);
    let proj = rng.random::<u64>();
    gradient_error(&[a, b], STEP, |tape, v| {
        let y = v[0].matmul(v[1])?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn add_row(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let a = normal(rng, r, c);
    let b = normal(rng, 1, c);
    let proj = rng.random::<u64>();
    gradient_error(&[a, b], STEP, |tape, v| {
        let y = v[0].add_row(v[1])?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn broadcast(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let s = normal(rng, 1, 1);
    let proj = rng.random::<u64>();
    gradient_error(&[s], STEP, |tape, v| {
        let y = v[0].broadcast(r, c)?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn sum(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let x = normal(rng, r, c);
    gradient_error(&[x], STEP, |_, v| Ok(v[0].sum()))
}

fn spmm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..7);
    let f = rng.random_range(1..4);
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(0.4) {
                triplets.push((i, j, rng.random_range(-2.0..2.0)));
            }
        }
    }
    let adj = std::sync::Arc::new(SparseMatrix::from_triplets(n, n, &triplets)?);
    let x = normal(rng, n, f);
    let proj = rng.random::<u64>();
    gradient_error(&[x], STEP, |tape, v| {
        let y = v[0].spmm(&adj)?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn random_mask(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Rc<Vec<bool>> {
    let mut m: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.7)).collect();
    // keep one live entry per row
    for i in 0..r {
        m[i * c + rng.random_range(0..c)] = true;
    }
    Rc::new(m)
}

fn masked_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let x = normal(rng, r, c);
    let mask = random_mask(rng, r, c);
    let proj = rng.random::<u64>();
    gradient_error(&[x], STEP, |tape, v| {
        let y = v[0].softmax_rows(Some(Rc::clone(&mask)))?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn masked_log_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let x = normal(rng, r, c);
    let mask = random_mask(rng, r, c);
    let proj = rng.random::<u64>();
    gradient_error(&[x], STEP, |tape, v| {
        let y = v[0].log_softmax_rows(Some(Rc::clone(&mask)))?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn gather_rows(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = dims(rng);
    let x = normal(rng, r, c);
    let k = rng.random_range(1..7);
    let idx: Rc<Vec<usize>> = Rc::new((0..k).map(|_| rng.random_range(0..r)).collect());
    let proj = rng.random::<u64>();
    gradient_error(&[x], STEP, |tape, v| {
        let y = v[0].gather_rows(Rc::clone(&idx))?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn slice_cols(rng: &mut ChaCha8Rng) -> Result<f64> {
    let r = rng.random_range(1..5);
    let c = rng.random_range(2..6);
    let start = rng.random_range(0..c - 1);
    let end = rng.random_range(start + 1..=c);
    let x = normal(rng, r, c);
    let proj = rng.random::<u64>();
    gradient_error(&[x], STEP, |tape, v| {
        let y = v[0].slice_cols(start, end)?;
        project(tape, y, &mut rand::SeedableRng::seed_from_u64(proj))
    })
}

fn cross_entropy(rng: &mut ChaCha8Rng) -> Result<f64> {
    let r = rng.random_range(1..6);
    let c = rng.random_range(2..5);
    let x = normal(rng, r, c);
    let mut t = Tensor::zeros(r, c);
    for i in 0..r {
        t.set(i, rng.random_range(0..c), 1.0);
    }
    let mut mask: Vec<bool> = (0..r).map(|_| rng.random_bool(0.6)).collect();
    mask[rng.random_range(0..r)] = true;
    gradient_error(&[x], STEP, |_, v| v[0].softmax_cross_entropy(&t, &mask))
}

fn kl_dirichlet(rng: &mut ChaCha8Rng) -> Result<f64> {
    let m = rng.random_range(1..8);
    let lambda = positive(rng, 1, m, 0.3, 4.0);
    let alpha: Rc<Vec<f64>> = Rc::new((0..m).map(|_| rng.random_range(0.05..3.0)).collect());
    gradient_error(&[lambda], STEP, |_, v| v[0].kl_dirichlet(Rc::clone(&alpha)))
}

/// Every differentiable operation with its random-instance generator.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", add as Case),
        ("sub", sub),
        ("mul", mul),
        ("div", div),
        ("add_row", add_row),
        ("broadcast", broadcast),
        ("affine", affine),
        ("matmul", matmul),
        ("transpose", transpose),
        ("spmm", spmm),
        ("relu", relu),
        ("elu", elu),
        ("exp", exp),
        ("ln", ln),
        ("ln_floor", ln_floor),
        ("softplus", softplus),
        ("square", square),
        ("digamma", digamma),
        ("sum", sum),
        ("sum_rows", sum_rows),
        ("softmax_rows", softmax),
        ("softmax_rows_masked", masked_softmax),
        ("log_softmax_rows", log_softmax),
        ("log_softmax_rows_masked", masked_log_softmax),
        ("normalize_rows", normalize_rows),
        ("gather_rows", gather_rows),
        ("concat_cols", concat_cols),
        ("slice_cols", slice_cols),
        ("softmax_cross_entropy", cross_entropy),
        ("kl_dirichlet", kl_dirichlet),
    ]
}

/// Worst relative error per operation over `INSTANCES` random instances.
pub fn worst_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    cases()
        .into_iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
            let worst = (0..INSTANCES)
                .map(|_| case(&mut rng).unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

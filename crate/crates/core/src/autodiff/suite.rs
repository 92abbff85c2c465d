//! Finite-difference checks of every differentiable op at seeded random
//! points, each reduced to a scalar through a fixed random weighting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, AdError, GradCheckReport, Tape, Tensor, Var};

pub const SUITE_EPS: f64 = 1e-6;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Values at least `gap` away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = rand_t(rng, shape);
    for x in t.data_mut() {
        *x = x.signum() * (gap + x.abs());
    }
    t
}

fn rand_mats(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 9]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
}

/// `Σ out ⊙ R` for a fixed random `R` shaped like `out`.
fn weigh(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(rand_t(&mut rng, &shape));
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AdError>>;

fn cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpFn, Vec<Tensor>)> {
    let n = 4;
    let mats = rand_mats(rng, n);
    let fallback: Vec<[f64; 3]> = (0..n).map(|_| [1.0, 0.0, 0.0]).collect();
    let vmax: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut diff3 = rand_t(rng, &[n, 3]);
    // Mixes saturated and proportional rows of the speed clamp.
    for (i, x) in diff3.data_mut().iter_mut().enumerate() {
        *x *= if (i / 3) % 2 == 0 { 4.0 } else { 0.3 };
    }
    let mut big3 = rand_t(rng, &[n, 3]);
    for (i, x) in big3.data_mut().iter_mut().enumerate() {
        *x *= if (i / 3) % 2 == 0 { 5.0 } else { 0.2 };
    }
    let gather_idx = vec![2usize, 0, 3, 2];
    vec![
        ("add", Box::new(|t, v| t.add(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[3, 4])]),
        ("sub", Box::new(|t, v| t.sub(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[3, 4])]),
        ("mul", Box::new(|t, v| t.mul(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[3, 4])]),
        ("add_bias", Box::new(|t, v| t.add_bias(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[4])]),
        ("scale", Box::new(|t, v| Ok(t.scale(v[0], -1.7))), vec![rand_t(rng, &[5])]),
        ("add_scalar", Box::new(|t, v| Ok(t.add_scalar(v[0], 0.3))), vec![rand_t(rng, &[5])]),
        ("neg", Box::new(|t, v| Ok(t.neg(v[0]))), vec![rand_t(rng, &[5])]),
        ("matmul", Box::new(|t, v| t.matmul(v[0], v[1])), vec![rand_t(rng, &[3, 5]), rand_t(rng, &[5, 2])]),
        (
            "conv2d_circular",
            Box::new(|t, v| t.conv2d_circular(v[0], v[1], v[2], [1, 2])),
            vec![rand_t(rng, &[2, 2, 4, 8]), rand_t(rng, &[3, 2, 3, 3]), rand_t(rng, &[3])],
        ),
        ("maxpool2d", Box::new(|t, v| t.maxpool2d(v[0], 2)), vec![rand_t(rng, &[2, 2, 4, 6])]),
        ("sigmoid", Box::new(|t, v| Ok(t.sigmoid(v[0]))), vec![rand_t(rng, &[6])]),
        ("tanh", Box::new(|t, v| Ok(t.tanh(v[0]))), vec![rand_t(rng, &[6])]),
        ("elu", Box::new(|t, v| Ok(t.elu(v[0]))), vec![away_from_zero(rng, &[6], 0.05)]),
        ("relu", Box::new(|t, v| Ok(t.relu(v[0]))), vec![away_from_zero(rng, &[6], 0.05)]),
        ("softplus", Box::new(|t, v| Ok(t.softplus(v[0]))), vec![rand_t(rng, &[6])]),
        ("square", Box::new(|t, v| t.square(v[0])), vec![rand_t(rng, &[6])]),
        ("smooth_l1", Box::new(|t, v| Ok(t.smooth_l1(v[0]))), vec![{
            let mut x = rand_t(rng, &[8]);
            // Half the entries in the quadratic zone, half in the linear one.
            for (i, e) in x.data_mut().iter_mut().enumerate() {
                *e = if i % 2 == 0 { 0.8 * *e } else { e.signum() * (1.2 + e.abs()) };
            }
            x
        }]),
        ("concat_cols", Box::new(|t, v| t.concat_cols(&[v[0], v[1]])), vec![rand_t(rng, &[3, 2]), rand_t(rng, &[3, 4])]),
        ("slice_cols", Box::new(|t, v| t.slice_cols(v[0], 1, 2)), vec![rand_t(rng, &[3, 5])]),
        ("sum", Box::new(|t, v| Ok(t.sum(v[0]))), vec![rand_t(rng, &[3, 2])]),
        ("mean", Box::new(|t, v| Ok(t.mean(v[0]))), vec![rand_t(rng, &[3, 2])]),
        ("row_sum", Box::new(|t, v| t.row_sum(v[0])), vec![rand_t(rng, &[3, 4])]),
        ("row_norm", Box::new(|t, v| t.row_norm(v[0])), vec![rand_t(rng, &[3, 4])]),
        ("row_dot", Box::new(|t, v| t.row_dot(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[3, 4])]),
        ("mul_col", Box::new(|t, v| t.mul_col(v[0], v[1])), vec![rand_t(rng, &[3, 4]), rand_t(rng, &[3])]),
        ("gather_rows", Box::new(move |t, v| t.gather_rows(v[0], &gather_idx)), vec![rand_t(rng, &[4, 3])]),
        ("reshape", Box::new(|t, v| t.reshape(v[0], vec![6, 2])), vec![rand_t(rng, &[3, 4])]),
        ("rotate_rows", Box::new({
            let m = mats.clone();
            move |t, v| t.rotate_rows(v[0], &m, false)
        }), vec![rand_t(rng, &[n, 3])]),
        ("rotate_rows_transposed", Box::new(move |t, v| t.rotate_rows(v[0], &mats, true)), vec![rand_t(rng, &[n, 3])]),
        ("clamp_norm_rows", Box::new(|t, v| t.clamp_norm_rows(v[0], 1.0)), vec![big3]),
        ("speed_clamp_rows", Box::new(move |t, v| t.speed_clamp_rows(v[0], &vmax, 1.0)), vec![diff3]),
        ("approach_speed", Box::new(move |t, v| t.approach_speed(v[0], v[1], &fallback)), {
            // Rows 0, 2 approaching, rows 1, 3 separating.
            let p = rand_t(rng, &[n, 3]);
            let mut vel = Tensor::zeros(&[n, 3]);
            for i in 0..n {
                let s = if i % 2 == 0 { -1.0 } else { 1.0 };
                for k in 0..3 {
                    vel.data_mut()[i * 3 + k] = s * p.data()[i * 3 + k] + 0.1 * rng.gen_range(-1.0..1.0);
                }
            }
            vec![p, vel]
        }),
        ("minimum", Box::new(|t, v| t.minimum(v[0], v[1])), {
            let a = rand_t(rng, &[6]);
            let mut b = a.clone();
            for (i, x) in b.data_mut().iter_mut().enumerate() {
                *x += if i % 2 == 0 { 0.3 } else { -0.3 };
            }
            vec![a, b]
        }),
        ("min_scalar", Box::new(|t, v| Ok(t.min_scalar(v[0], 0.0))), vec![away_from_zero(rng, &[6], 0.05)]),
        (
            "integrate_position",
            Box::new(|t, v| t.integrate_position(v[0], v[1], v[2], 0.1)),
            vec![rand_t(rng, &[n, 3]), rand_t(rng, &[n, 3]), rand_t(rng, &[n, 3])],
        ),
        (
            "integrate_velocity",
            Box::new(|t, v| t.integrate_velocity(v[0], v[1], v[2], 0.1)),
            vec![rand_t(rng, &[n, 3]), rand_t(rng, &[n, 3]), rand_t(rng, &[n, 3])],
        ),
    ]
}

/// Checks every op; returns `(op name, report)` in a fixed order.
pub fn op_gradcheck_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>, AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, (name, f, point)) in cases(&mut rng).into_iter().enumerate() {
        let ws = seed.wrapping_add(k as u64);
        let r = grad_check(|t, v| { let o = f(t, v)?; weigh(t, o, ws) }, &point, SUITE_EPS)?;
        out.push((name, r));
    }
    Ok(out)
}

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn exp_of_zero_is_one() {
    let tape = Tape::new();
    let x = tape.constant(&[1], vec![0.0]).unwrap();
    assert_eq!(x.exp().item(), 1.0);
}

#[test]
fn sum_axis_of_ones() {
    let tape = Tape::new();
    let x = tape.constant(&[2, 3], vec![1.0; 6]).unwrap();
    let s = x.sum_axis(1).unwrap();
    assert_eq!(s.shape(), vec![2]);
    assert_eq!(s.to_vec(), vec![3.0, 3.0]);
}

#[test]
fn square_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(&[1], vec![3.0]).unwrap();
    x.mul(x).unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn mean_exp_gradient_is_uniform() {
    let tape = Tape::new();
    let x = tape.leaf(&[4], vec![0.0; 4]).unwrap();
    x.exp().mean().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
}

#[test]
fn max_pool_routes_to_first_argmax() {
    let tape = Tape::new();
    // pairs: (1,3) (2,2) (5,0); trailing 7 dropped
    let x = tape.leaf(&[1, 7, 1], vec![1.0, 3.0, 2.0, 2.0, 5.0, 0.0, 7.0]).unwrap();
    let p = x.max_pool2(1).unwrap();
    assert_eq!(p.to_vec(), vec![3.0, 2.0, 5.0]);
    p.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn backward_requires_scalar_root() {
    let tape = Tape::new();
    let x = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
    let err = x.exp().backward().unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn log_of_nonpositive_names_op() {
    let tape = Tape::new();
    let x = tape.leaf(&[2], vec![1.0, 0.0]).unwrap();
    match x.log().unwrap_err() {
        Error::NumericDomain { op, .. } => assert_eq!(op, "log"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shape_mismatch_is_config_error() {
    let tape = Tape::new();
    let a = tape.leaf(&[2, 3], vec![0.0; 6]).unwrap();
    let b = tape.leaf(&[2], vec![0.0; 2]).unwrap();
    assert!(matches!(a.add(b).unwrap_err(), Error::Shape { op: "add", .. }));
    assert!(matches!(a.matmul(b).unwrap_err(), Error::Shape { .. }));
    assert!(tape.leaf(&[3], vec![0.0; 2]).is_err());
}

#[test]
fn repeated_backward_accumulates_and_reset_replays() {
    let tape = Tape::new();
    let x = tape.leaf(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let y = x.square().sum();
    y.backward().unwrap();
    let first = x.grad().unwrap();
    y.backward().unwrap();
    let twice = x.grad().unwrap();
    for (a, b) in first.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
    tape.zero_grad();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), first);
}

#[test]
fn sum_of_squares_gradcheck() {
    let x = random(12, 3);
    let err = finite_diff_check(|_, t| Ok(t.square().sum()), &[3, 4], &x, 1e-5).unwrap();
    assert!(err < 1e-7, "err {err}");
}

#[test]
fn constant_function_has_zero_gradient() {
    let x = random(5, 4);
    let err = finite_diff_check(|tape, _| Ok(tape.scalar(2.5)), &[5], &x, 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_rejects_bad_eps() {
    assert!(finite_diff_check(|_, t| Ok(t.sum()), &[1], &[1.0], 0.0).is_err());
}

type OpCase = (
    &'static str,
    Vec<usize>,
    for<'t> fn(&'t Tape, DiffTensor<'t>) -> Result<DiffTensor<'t>>,
);

/// Every differentiable op, reduced to a scalar through a random projection
/// so that all output coordinates contribute.
#[test]
fn every_op_matches_finite_differences_on_ten_seeds() {
    fn project<'t>(tape: &'t Tape, y: DiffTensor<'t>) -> Result<DiffTensor<'t>> {
        let w = tape.constant(&y.shape(), random(y.numel(), 99))?;
        Ok(y.mul(w)?.sum())
    }
    let cases: Vec<OpCase> = vec![
        ("add_bcast", vec![2, 3], |t, x| {
            let b = t.constant(&[3], vec![0.3, -0.2, 0.1])?;
            project(t, x.add(b)?.mul(x)?)
        }),
        ("sub_general", vec![2, 3], |t, x| {
            let col = x.slice(1, 0, 1)?;
            project(t, x.sub(col)?.square())
        }),
        ("div", vec![2, 3], |t, x| {
            let d = x.square().add_scalar(1.0);
            project(t, x.div(d)?)
        }),
        ("exp_log", vec![2, 3], |t, x| project(t, x.exp().add_scalar(1.0).log()?)),
        ("gelu", vec![6], |t, x| project(t, x.mul_scalar(2.0).gelu())),
        ("sum_axis", vec![2, 3, 2], |t, x| project(t, x.square().sum_axis(1)?)),
        ("mean_axis", vec![2, 3, 2], |t, x| project(t, x.square().mean_axis(0)?)),
        ("max_axis", vec![2, 4, 3], |t, x| project(t, x.max_axis(1)?)),
        ("max_pool2", vec![2, 5, 3], |t, x| project(t, x.max_pool2(1)?)),
        ("transpose", vec![2, 3, 4], |t, x| project(t, x.transpose(0, 2)?.square())),
        ("reshape", vec![2, 6], |t, x| project(t, x.reshape(&[3, 4])?.exp())),
        ("concat", vec![2, 3], |t, x| {
            let y = x.square();
            project(t, DiffTensor::concat(&[x, y, x], 1)?)
        }),
        ("matmul_batched", vec![2, 3, 3], |t, x| project(t, x.matmul(x.transpose(1, 2)?)?)),
        ("matmul_shared", vec![4, 3], |t, x| {
            let w = t.constant(&[3, 2], random(6, 7))?;
            project(t, x.matmul(w)?.matmul(x.slice(0, 0, 2)?)?)
        }),
        ("conv1d", vec![2, 6, 2], |t, x| {
            let w = x.reshape(&[3, 2, 4])?.slice(0, 0, 2)?.slice(2, 0, 3)?;
            project(t, x.conv1d_causal(w, 2)?)
        }),
        ("pairwise", vec![4, 3], |t, x| project(t, x.pairwise_distances()?)),
        ("masked", vec![2, 3], |t, x| {
            project(t, x.exp().masked(&[true, false, true], &[3])?)
        }),
        ("select", vec![2, 3], |t, x| {
            project(t, x.square().reshape(&[6])?.select(&[5, 0, 5, 2])?)
        }),
        ("laplacian_metric", vec![2, 3, 2], |t, x| {
            project(t, x.laplacian_metric(&random(18, 5))?)
        }),
    ];
    for (name, shape, f) in cases {
        for seed in 0..10 {
            let x = random(shape.iter().product(), 1000 + seed);
            let err = finite_diff_check(f, &shape, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: err {err}");
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 4], random(12, 5)).unwrap();
        let y = x.matmul(x.transpose(0, 1).unwrap()).unwrap().gelu().sum();
        y.backward().unwrap();
        (y.item().to_bits(), x.grad().unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn conv_is_causal() {
    let tape = Tape::new();
    let mut xv = random(8 * 2, 11);
    let w = tape.constant(&[3, 2, 2], random(12, 12)).unwrap();
    let x = tape.constant(&[1, 8, 2], xv.clone()).unwrap();
    let y1 = x.conv1d_causal(w, 2).unwrap().to_vec();
    xv[7 * 2] += 10.0;
    let x2 = tape.constant(&[1, 8, 2], xv).unwrap();
    let y2 = x2.conv1d_causal(w, 2).unwrap().to_vec();
    assert_eq!(y1[..7 * 2], y2[..7 * 2]);
    assert_ne!(y1[7 * 2..], y2[7 * 2..]);
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
    let x = tape.leaf(&[2], vec![3.0, 4.0]).unwrap();
    x.mul(c).unwrap().sum().backward().unwrap();
    assert!(c.grad().is_none());
    assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
}

/// Direct carré-du-champ evaluation for an arbitrary operator.
#[test]
fn laplacian_metric_matches_direct_formula() {
    let (b, t, p) = (2, 5, 3);
    let lap = random(b * t * t, 21);
    let z = random(b * t * p, 22);
    let tape = Tape::new();
    let h = tape.constant(&[b, t, p], z.clone()).unwrap().laplacian_metric(&lap).unwrap().to_vec();
    for bi in 0..b {
        let zz = |n: usize, a: usize| z[(bi * t + n) * p + a];
        let l = |n: usize, m: usize| lap[(bi * t + n) * t + m];
        let lf = |n: usize, f: &dyn Fn(usize) -> f64| (0..t).map(|m| l(n, m) * f(m)).sum::<f64>();
        for n in 0..t {
            for a in 0..p {
                for c in 0..p {
                    let expect = 0.5
                        * (lf(n, &|m| zz(m, a) * zz(m, c)) - zz(n, a) * lf(n, &|m| zz(m, c)) - zz(n, c) * lf(n, &|m| zz(m, a)));
                    let got = h[((bi * t + n) * p + a) * p + c];
                    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
                }
            }
        }
    }
}

use paxkit::nn::gradcheck::check_graph_fn;
use paxkit::nn::{bilinear_sample, sinusoidal_pe, Graph, NnError, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn check<F>(name: &str, inputs: Vec<Tensor>, f: F, seed: u64)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let r = check_graph_fn(&inputs, f, seed).unwrap();
    assert!(r.passes(TOL), "{name} seed {seed}: {r:?}");
    assert!(r.checked > 0);
}

#[test]
fn elementwise_and_matrix_ops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_t(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_t(&mut rng, &[3, 4], -1.0, 1.0);
        let w = rand_t(&mut rng, &[4, 5], -1.0, 1.0);
        let bias = rand_t(&mut rng, &[5], -1.0, 1.0);
        let row = rand_t(&mut rng, &[4], -1.0, 1.0);
        check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]), seed);
        check("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]), seed);
        check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]), seed);
        check("add_row", vec![a.clone(), row], |g, v| g.add_row(v[0], v[1]), seed);
        check("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], -1.7)), seed);
        check("matmul", vec![a.clone(), w.clone()], |g, v| g.matmul(v[0], v[1]), seed);
        check("linear", vec![a.clone(), w, bias], |g, v| g.linear(v[0], v[1], Some(v[2])), seed);
        check("sigmoid", vec![a.clone()], |g, v| Ok(g.sigmoid(v[0])), seed);
        check("softmax", vec![a.clone()], |g, v| Ok(g.softmax_rows(v[0])), seed);
        check("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0])), seed);
        // keep relu inputs away from the kink
        let r = Tensor::new(&[12], a.data().iter().map(|x| if x.abs() < 0.05 { 0.3 } else { *x }).collect()).unwrap();
        check("relu", vec![r], |g, v| Ok(g.relu(v[0])), seed);
        let p = rand_t(&mut rng, &[6], 0.05, 0.95);
        check("logit", vec![p], |g, v| Ok(g.logit(v[0], 1e-6)), seed);
    }
}

#[test]
fn layer_norm_and_structural_ops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_t(&mut rng, &[4, 6], -2.0, 2.0);
        let gamma = rand_t(&mut rng, &[6], 0.5, 1.5);
        let beta = rand_t(&mut rng, &[6], -0.5, 0.5);
        check("layer_norm", vec![x.clone(), gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), seed);
        let y = rand_t(&mut rng, &[4, 3], -1.0, 1.0);
        check("concat", vec![x.clone(), y.clone()], |g, v| g.concat_cols(&[v[0], v[1]]), seed);
        check("slice", vec![x.clone()], |g, v| g.slice_cols(v[0], 2, 3), seed);
        check("gather", vec![x.clone()], |g, v| g.gather_rows(v[0], &[3, 1, 1]), seed);
        check(
            "merge",
            vec![x.clone(), y.clone()],
            |g, v| {
                let s = g.slice_cols(v[0], 0, 3)?;
                let s = g.gather_rows(s, &[0, 1])?;
                let t = g.gather_rows(v[1], &[2, 3])?;
                g.merge_rows(&[(s, vec![3, 0]), (t, vec![1, 2])], 4)
            },
            seed,
        );
        check("repeat", vec![y.clone()], |g, v| Ok(g.repeat_rows(v[0], 3)), seed);
        check("group_mean", vec![x.clone()], |g, v| g.group_mean_rows(v[0], 2), seed);
        check(
            "reshape",
            vec![x.clone()],
            |g, v| {
                let r = g.reshape(v[0], &[8, 3])?;
                g.softmax_rows(r);
                Ok(g.softmax_rows(r))
            },
            seed,
        );
    }
}

#[test]
fn encoding_and_polar_points() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let pts = rand_t(&mut rng, &[3, 2], 0.0, 1.0);
        check("pos_enc", vec![pts], |g, v| g.pos_enc_2d(v[0], 8), seed);
        let refs = rand_t(&mut rng, &[2, 2], 0.3, 0.7);
        let delta = rand_t(&mut rng, &[2, 2], -0.1, 0.1);
        let radii = rand_t(&mut rng, &[2, 4], 0.01, 0.2);
        check("polar", vec![refs, delta, radii], |g, v| g.polar_points(v[0], v[1], v[2], 5), seed);
    }
}

#[test]
fn attention_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let q = rand_t(&mut rng, &[6, 4], -1.0, 1.0);
        let k = rand_t(&mut rng, &[6, 4], -1.0, 1.0);
        let v = rand_t(&mut rng, &[6, 4], -1.0, 1.0);
        check("attention", vec![q.clone(), k.clone(), v.clone()], |g, x| g.attention(x[0], x[1], x[2], 2, 3), seed);
        check("attention_full", vec![q, k, v], |g, x| g.attention(x[0], x[1], x[2], 1, 6), seed);
    }
}

/// Offsets that keep every sample strictly inside a cell, away from grid lines.
fn safe_offsets(rng: &mut ChaCha8Rng, refs: &Tensor, hp: usize, map: usize) -> Tensor {
    let n = refs.rows();
    let mut out = Vec::with_capacity(n * hp * 2);
    for i in 0..n {
        for _ in 0..hp {
            for c in 0..2 {
                let base = refs.row(i)[c] * map as f64 - 0.5;
                let cell = rng.gen_range(-1i64..=map as i64 - 1) as f64;
                let target = cell + rng.gen_range(0.1..0.9);
                out.push(target - base);
            }
        }
    }
    Tensor::new(&[n, hp * 2], out).unwrap()
}

#[test]
fn deformable_sampling_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (map, heads, points, d, n) = (4, 2, 2, 4, 3);
        let value = rand_t(&mut rng, &[map * map, d], -1.0, 1.0);
        let refs = rand_t(&mut rng, &[n, 2], 0.1, 0.9);
        let offsets = safe_offsets(&mut rng, &refs, heads * points, map);
        let weights = rand_t(&mut rng, &[n, heads * points], 0.0, 1.0);
        check(
            "deform",
            vec![value, refs, offsets, weights],
            |g, v| g.deform_sample(v[0], v[1], v[2], v[3], map, map, heads, points),
            seed,
        );
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 4]));
    let s = g.softmax_rows(z);
    assert_eq!(g.value(s).data(), &[0.25; 4]);
}

#[test]
fn layer_norm_of_constant_is_beta() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 5], 3.3));
    let gamma = g.constant(Tensor::full(&[5], 2.0));
    let beta = g.constant(Tensor::zeros(&[5]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn matmul_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = rand_t(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_t(&mut rng, &[3, 2], -1.0, 1.0);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a.data()[i * 3 + k] * b.data()[k * 2 + j];
            }
            assert!((g.value(c).data()[i * 2 + j] - s).abs() <= 1e-12);
        }
    }
}

#[test]
fn sinusoidal_pe_formula() {
    let z = sinusoidal_pe(0.0, 6).unwrap();
    assert_eq!(z, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let v = sinusoidal_pe(0.25, 4).unwrap();
    let arg1 = std::f64::consts::TAU * 0.25;
    let arg2 = arg1 / 10000f64.powf(2.0 / 4.0);
    let expected = [arg1.sin(), arg1.cos(), arg2.sin(), arg2.cos()];
    for (a, b) in v.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(sinusoidal_pe(0.5, 3), Err(NnError::OddDimension(3)));
}

#[test]
fn bilinear_fixtures() {
    // 2x2 map, one channel: values 0,1 / 2,3
    let map = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(bilinear_sample(&map, 2, 2, 1, 0.5, 0.5), vec![1.5]);
    assert_eq!(bilinear_sample(&map, 2, 2, 1, 1.0, 1.0), vec![3.0]);
    assert_eq!(bilinear_sample(&map, 2, 2, 1, 0.0, 1.0), vec![2.0]);
}

#[test]
fn attention_rows_sum_to_one_and_single_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(rand_t(&mut rng, &[1, 4], -1.0, 1.0));
    let y = g.attention(x, x, x, 2, 1).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn ref_point_out_of_range() {
    let mut g = Graph::new();
    let value = g.constant(Tensor::zeros(&[4, 2]));
    let refs = g.constant(Tensor::new(&[1, 2], vec![1.5, 0.5]).unwrap());
    let off = g.constant(Tensor::zeros(&[1, 2]));
    let w = g.constant(Tensor::full(&[1, 1], 1.0));
    assert!(matches!(g.deform_sample(value, refs, off, w, 2, 2, 1, 1), Err(NnError::RefPointOutOfRange { .. })));
}

use mvsvdd::ndgrad::{check_gradients, AdamState, Graph, Tensor, Var};
use mvsvdd::{rng_from_seed, Result, Rng};
use rand::Rng as _;

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_conv(x: &Tensor, w: &Tensor, s: usize, p: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, k, _] = w.shape().try_into().unwrap();
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for a in 0..k {
                            for bb in 0..k {
                                let (r, q) = ((i * s + a) as isize - p as isize, (j * s + bb) as isize - p as isize);
                                if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ic) * h + r as usize) * wd + q as usize]
                                    * w.data()[((oc * c + ic) * k + a) * k + bb];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    out
}

fn run(inputs: &[&Tensor], f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>) -> Tensor {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
    let out = f(&mut g, &vars).unwrap();
    g.tensor(out)
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::new([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let w = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
    let y = run(&[&x, &w], |g, v| g.conv2d(v[0], v[1], 1, 0));
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_diagonal_kernel() {
    let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = run(&[&x, &w], |g, v| g.conv2d(v[0], v[1], 1, 0));
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[5.0]);
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = rng_from_seed(11);
    for (s, p) in [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)] {
        let x = rand_tensor(&[1, 2, 8, 8], &mut rng);
        let w = rand_tensor(&[4, 2, 3, 3], &mut rng);
        let y = run(&[&x, &w], |g, v| g.conv2d(v[0], v[1], s, p));
        let want = naive_conv(&x, &w, s, p);
        assert_eq!(y.len(), want.len());
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "s={s} p={p}: {a} vs {b}");
        }
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::zeros([1, 2, 4, 4]).unwrap());
    let w3 = g.input(&Tensor::zeros([1, 3, 3, 3]).unwrap());
    assert!(g.conv2d(x, w3, 1, 0).is_err());
    let big = g.input(&Tensor::zeros([1, 2, 7, 7]).unwrap());
    assert!(g.conv2d(x, big, 1, 1).is_err());
}

#[test]
fn tconv_scatters_single_value() {
    let x = Tensor::new([1, 1, 1, 1], vec![5.0]).unwrap();
    let w = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = run(&[&x, &w], |g, v| g.tconv2d(v[0], v[1], 1, 0, 0));
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[5.0, 0.0, 0.0, 5.0]);
}

#[test]
fn tconv_shape_law() {
    let x = Tensor::zeros([1, 3, 7, 7]).unwrap();
    let w = Tensor::zeros([3, 2, 4, 4]).unwrap();
    let y = run(&[&x, &w], |g, v| g.tconv2d(v[0], v[1], 2, 1, 0));
    assert_eq!(y.shape(), &[1, 2, 14, 14]);
}

#[test]
fn conv_tconv_adjoint() {
    let mut rng = rng_from_seed(3);
    for (h, k, s, p) in [(8, 3, 1, 1), (9, 3, 2, 1), (10, 5, 2, 2), (7, 4, 3, 0)] {
        let x = rand_tensor(&[2, 3, h, h], &mut rng);
        let w = rand_tensor(&[4, 3, k, k], &mut rng);
        let ax = run(&[&x, &w], |g, v| g.conv2d(v[0], v[1], s, p));
        let y = rand_tensor(ax.shape(), &mut rng);
        let op = (h + 2 * p - k) % s;
        let aty = run(&[&y, &w], |g, v| g.tconv2d(v[0], v[1], s, p, op));
        assert_eq!(aty.shape(), x.shape());
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn tconv_input_gradient_is_conv_forward() {
    let mut rng = rng_from_seed(8);
    let x = rand_tensor(&[1, 3, 4, 4], &mut rng).with_grad();
    let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let mut g = Graph::new();
    let (xv, wv) = (g.input(&x), g.input(&w));
    let y = g.tconv2d(xv, wv, 2, 1, 1).unwrap();
    let upstream = rand_tensor(g.shape(y), &mut rng);
    let u = g.input(&upstream);
    let prod = g.mul(y, u).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    let w_oikk = Tensor::new([3, 2, 3, 3], w.data().to_vec()).unwrap();
    let conv = run(&[&upstream, &w_oikk], |g, v| g.conv2d(v[0], v[1], 2, 1));
    for (a, b) in grads.get(xv).unwrap().iter().zip(conv.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dense_leaky_mse_hand_cases() {
    let eye = Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let v = Tensor::new([1, 3], vec![0.3, -2.0, 7.0]).unwrap();
    assert_eq!(run(&[&v, &eye], |g, x| g.dense(x[0], x[1])).data(), v.data());

    let t = Tensor::new([2], vec![-2.0, 3.0]).unwrap();
    let y = run(&[&t], |g, x| g.leaky_relu(x[0], 0.1));
    assert!((y.data()[0] + 0.2).abs() < 1e-15);
    assert_eq!(y.data()[1], 3.0);

    assert_eq!(run(&[&v, &v], |g, x| g.mse(x[0], x[1])).data(), &[0.0]);
}

#[test]
fn linear_gradient_equals_weights() {
    let w = Tensor::new([3], vec![2.0, -1.0, 0.5]).unwrap();
    let x = Tensor::new([3], vec![1.0, 1.0, 1.0]).unwrap().with_grad();
    let mut g = Graph::new();
    let (wv, xv) = (g.input(&w), g.input(&x));
    let p = g.mul(wv, xv).unwrap();
    let loss = g.sum(p).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(xv).unwrap(), w.data());
}

#[test]
fn disconnected_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let a = g.input(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
    let b = g.input(&Tensor::new([2], vec![3.0, 4.0]).unwrap().with_grad());
    let loss = g.sum(a).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(b).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let a = g.input(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
    assert!(g.backward(a).is_err(), "non-scalar loss");
    let s = g.sum(a).unwrap();
    g.backward(s).unwrap();
    assert!(g.backward(s).is_err(), "consumed graph");
}

#[test]
fn gradients_accumulate_across_backward_calls() {
    let mut t = Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad();
    for _ in 0..2 {
        let mut g = Graph::new();
        let v = g.input(&t);
        let loss = g.sum(v).unwrap();
        g.backward(loss).unwrap().write_into(v, &mut t).unwrap();
    }
    assert_eq!(t.grad().unwrap(), &[2.0, 2.0]);
    t.zero_grad();
    assert!(t.grad().is_none_or(|g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn adam_first_step() {
    let mut w = Tensor::new([1], vec![0.0]).unwrap().with_grad();
    w.accumulate_grad(&[1.0]).unwrap();
    let mut opt = AdamState::new(0.1);
    opt.step([("w", &mut w)], 0.0).unwrap();
    assert!((w.data()[0] + 0.1).abs() < 1e-6);
    assert_eq!(opt.steps(), 1);
}

fn fd_ok(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let r = check_gradients(inputs, 1e-4, build).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_err < 1e-4, "max relative error {}", r.max_rel_err);
}

#[test]
fn finite_differences_per_op() {
    let mut rng = rng_from_seed(21);
    for _ in 0..5 {
        let x = rand_tensor(&[2, 2, 6, 6], &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let u = rand_tensor(&[2, 3, 3, 3], &mut rng);
        fd_ok(&[x, w, u], |g, v| {
            let y = g.conv2d(v[0], v[1], 2, 1)?;
            let p = g.mul(y, v[2])?;
            g.sum(p)
        });

        let x = rand_tensor(&[1, 3, 3, 3], &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let u = rand_tensor(&[1, 2, 6, 6], &mut rng);
        fd_ok(&[x, w, u], |g, v| {
            let y = g.tconv2d(v[0], v[1], 2, 1, 1)?;
            let p = g.mul(y, v[2])?;
            g.sum(p)
        });

        let x = rand_tensor(&[3, 4], &mut rng);
        let w = rand_tensor(&[4, 2], &mut rng);
        let t = rand_tensor(&[3, 2], &mut rng);
        fd_ok(&[x, w, t], |g, v| {
            let y = g.dense(v[0], v[1])?;
            let a = g.leaky_relu(y, 0.1)?;
            g.mse(a, v[2])
        });

        let a = rand_tensor(&[5], &mut rng);
        let b = rand_tensor(&[5], &mut rng);
        fd_ok(&[a, b], |g, v| {
            let s = g.add(v[0], v[1])?;
            let m = g.mul(s, v[0])?;
            let r = g.reshape(m, vec![1, 5])?;
            let k = g.scale(r, -0.7)?;
            g.sum(k)
        });

        let e = rand_tensor(&[6, 3], &mut rng);
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        fd_ok(&[e], move |g, v| g.sphere_hinge(v[0], &c, 0.3, 0.4));
    }
}

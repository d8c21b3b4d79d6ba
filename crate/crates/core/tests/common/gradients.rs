//! Finite-difference gradient cases; each returns its largest relative error.

use super::*;
use jule3d::net3d::layers::*;
use jule3d::net3d::{Matrix, SoftmaxHead, Tensor5};

/// Largest absolute gap between `conv3d` and the nested-loop oracle over several shapes.
pub fn conv3d_oracle_gap(shapes: &[([usize; 5], [usize; 5])]) -> f64 {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for &(shape, k) in shapes {
        let input = random_t5(&mut r, shape);
        let kernels = random_t5(&mut r, k);
        let bias = random_vec(&mut r, k[0]);
        let fast = conv3d(&input, &kernels, &bias).unwrap();
        let slow = naive_conv3d(&input, &kernels, &bias);
        assert_eq!(fast.shape(), slow.shape());
        worst = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    worst
}

pub fn conv3d_error(seed: u64, shape: [usize; 5], kshape: [usize; 5]) -> f64 {
    let mut r = rng(seed);
    let input = random_t5(&mut r, shape);
    let kernels = random_t5(&mut r, kshape);
    let bias = random_vec(&mut r, kshape[0]);
    let out_shape = conv3d(&input, &kernels, &bias).unwrap().shape();
    let w = random_vec(&mut r, out_shape.iter().product());
    let g = conv3d_backward(&input, &kernels, &Tensor5::from_vec(out_shape, w.clone()).unwrap(), true).unwrap();

    let num_x = numeric_gradient(input.data(), |x| {
        dot(conv3d(&Tensor5::from_vec(input.shape(), x.to_vec()).unwrap(), &kernels, &bias).unwrap().data(), &w)
    });
    let num_k = numeric_gradient(kernels.data(), |k| {
        dot(conv3d(&input, &Tensor5::from_vec(kernels.shape(), k.to_vec()).unwrap(), &bias).unwrap().data(), &w)
    });
    let num_b = numeric_gradient(&bias, |b| dot(conv3d(&input, &kernels, b).unwrap().data(), &w));
    max_relative_error(g.input.unwrap().data(), &num_x)
        .max(max_relative_error(g.kernels.data(), &num_k))
        .max(max_relative_error(&g.bias, &num_b))
}

pub fn maxpool3d_error() -> f64 {
    let mut r = rng(3);
    let input = random_t5(&mut r, [2, 2, 5, 4, 6]);
    let (out, arg) = maxpool3d(&input).unwrap();
    let w = random_vec(&mut r, out.data().len());
    let analytic = maxpool3d_backward(input.shape(), &arg, &w);
    let numeric = numeric_gradient(input.data(), |x| {
        dot(maxpool3d(&Tensor5::from_vec(input.shape(), x.to_vec()).unwrap()).unwrap().0.data(), &w)
    });
    max_relative_error(analytic.data(), &numeric)
}

pub fn batchnorm3d_error() -> f64 {
    let mut r = rng(4);
    let input = random_t5(&mut r, [2, 3, 2, 2, 2]);
    let gamma = random_vec(&mut r, 3);
    let beta = random_vec(&mut r, 3);
    let w = random_vec(&mut r, input.data().len());
    let forward = |x: &Tensor5<f64>, gamma: &[f64], beta: &[f64]| {
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        batchnorm3d(x, gamma, beta, &mut rm, &mut rv, BnMode::Train).unwrap()
    };
    let (_, cache) = forward(&input, &gamma, &beta);
    let g = batchnorm3d_backward(&input, &cache, &gamma, &Tensor5::from_vec(input.shape(), w.clone()).unwrap());
    let num_x = numeric_gradient(input.data(), |x| {
        dot(forward(&Tensor5::from_vec(input.shape(), x.to_vec()).unwrap(), &gamma, &beta).0.data(), &w)
    });
    let num_g = numeric_gradient(&gamma, |gm| dot(forward(&input, gm, &beta).0.data(), &w));
    let num_b = numeric_gradient(&beta, |bt| dot(forward(&input, &gamma, bt).0.data(), &w));
    max_relative_error(g.input.data(), &num_x)
        .max(max_relative_error(&g.gamma, &num_g))
        .max(max_relative_error(&g.beta, &num_b))
}

pub fn relu_error() -> f64 {
    let mut r = rng(5);
    // keep every input at least 0.01 from the kink
    let x: Vec<f64> = random_vec(&mut r, 64).into_iter().map(|v| if v.abs() < 0.01 { v + 0.05 } else { v }).collect();
    let w = random_vec(&mut r, 64);
    let analytic = relu_backward(&x, &w);
    let numeric = numeric_gradient(&x, |x| dot(&relu(x), &w));
    max_relative_error(&analytic, &numeric)
}

/// Checks the forward values against dot products, then returns the gradient error.
pub fn fc_error() -> f64 {
    let mut r = rng(6);
    let x = Matrix::from_vec(2, 4, random_vec(&mut r, 8)).unwrap();
    let wt = Matrix::from_vec(3, 4, random_vec(&mut r, 12)).unwrap();
    let b = random_vec(&mut r, 3);
    let y = fc_affine(&x, &wt, &b).unwrap();
    for i in 0..2 {
        for o in 0..3 {
            let want = dot(x.row(i), wt.row(o)) + b[o];
            assert!((y.row(i)[o] - want).abs() < 1e-6);
        }
    }
    let w = random_vec(&mut r, 6);
    let g = fc_backward(&x, &wt, &Matrix::from_vec(2, 3, w.clone()).unwrap());
    let num_x = numeric_gradient(x.data(), |v| {
        dot(fc_affine(&Matrix::from_vec(2, 4, v.to_vec()).unwrap(), &wt, &b).unwrap().data(), &w)
    });
    let num_w = numeric_gradient(wt.data(), |v| {
        dot(fc_affine(&x, &Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &b).unwrap().data(), &w)
    });
    let num_b = numeric_gradient(&b, |v| dot(fc_affine(&x, &wt, v).unwrap().data(), &w));
    max_relative_error(g.input.data(), &num_x)
        .max(max_relative_error(g.weights.data(), &num_w))
        .max(max_relative_error(&g.bias, &num_b))
}

pub fn l2normalize_error() -> f64 {
    let mut r = rng(7);
    let x = Matrix::from_vec(3, 5, random_vec(&mut r, 15)).unwrap();
    let w = random_vec(&mut r, 15);
    let (y, norms) = l2normalize(&x);
    let analytic = l2normalize_backward(&y, &norms, &Matrix::from_vec(3, 5, w.clone()).unwrap());
    let numeric =
        numeric_gradient(x.data(), |v| dot(l2normalize(&Matrix::from_vec(3, 5, v.to_vec()).unwrap()).0.data(), &w));
    max_relative_error(analytic.data(), &numeric)
}

pub fn softmax_head_error() -> f64 {
    let mut r = rng(8);
    let f = Matrix::from_vec(4, 6, random_vec(&mut r, 24)).unwrap();
    let labels = [0, 2, 1, 2];
    let head = SoftmaxHead::<f64>::new(3, 6, 9);
    let out = head.loss(&f, &labels).unwrap();
    let num_f =
        numeric_gradient(f.data(), |v| head.loss(&Matrix::from_vec(4, 6, v.to_vec()).unwrap(), &labels).unwrap().loss);
    let num_w = numeric_gradient(head.weights.data(), |v| {
        let h = SoftmaxHead { weights: Matrix::from_vec(3, 6, v.to_vec()).unwrap(), bias: head.bias.clone() };
        h.loss(&f, &labels).unwrap().loss
    });
    let num_b = numeric_gradient(&head.bias, |v| {
        let h = SoftmaxHead { weights: head.weights.clone(), bias: v.to_vec() };
        h.loss(&f, &labels).unwrap().loss
    });
    max_relative_error(out.features.data(), &num_f)
        .max(max_relative_error(out.weights.data(), &num_w))
        .max(max_relative_error(&out.bias, &num_b))
}

/// Every layer case with all dimensions at most 6, by layer name.
pub fn small_layer_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("conv3d", conv3d_error(2, [2, 2, 5, 4, 6], [3, 2, 3, 2, 3])),
        ("maxpool3d", maxpool3d_error()),
        ("batchnorm3d", batchnorm3d_error()),
        ("relu", relu_error()),
        ("fc", fc_error()),
        ("l2normalize", l2normalize_error()),
        ("softmax head", softmax_head_error()),
    ]
}

pub const CONV_ORACLE_SHAPES: [([usize; 5], [usize; 5]); 4] = [
    ([1, 1, 6, 6, 6], [2, 1, 3, 3, 3]),
    ([2, 3, 5, 7, 4], [4, 3, 2, 3, 4]),
    ([1, 2, 8, 8, 8], [3, 2, 5, 5, 5]),
    ([2, 9, 6, 5, 7], [4, 9, 3, 2, 4]),
];

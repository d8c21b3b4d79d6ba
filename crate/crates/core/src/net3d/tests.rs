use super::layers::*;
use super::tensor::{Matrix, Tensor5};
use super::{init_params, shape_chain, NetError, SoftmaxHead};

fn t5(shape: [usize; 5], f: impl Fn(usize) -> f64) -> Tensor5<f64> {
    let n = shape.iter().product();
    Tensor5::from_vec(shape, (0..n).map(f).collect()).unwrap()
}

#[test]
fn conv1_output_shape() {
    let params = init_params(0);
    let input = Tensor5::<f32>::zeros([1, 1, 27, 27, 27]);
    let out = conv3d(&input, &params.conv[0].kernels, &params.conv[0].bias).unwrap();
    assert_eq!(out.shape(), [1, 50, 23, 23, 23]);
}

#[test]
fn delta_kernel_crops_the_input() {
    let input = t5([1, 1, 6, 5, 7], |i| i as f64 * 0.5 - 3.0);
    let mut k = Tensor5::zeros([1, 1, 3, 3, 3]);
    k.data_mut()[13] = 1.0;
    let out = conv3d(&input, &k, &[0.0]).unwrap();
    assert_eq!(out.shape(), [1, 1, 4, 3, 5]);
    for z in 0..5 {
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(out.at(0, 0, x, y, z), input.at(0, 0, x + 1, y + 1, z + 1));
            }
        }
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let input = Tensor5::<f64>::zeros([1, 2, 4, 4, 4]);
    let k = Tensor5::zeros([1, 1, 3, 3, 3]);
    assert!(matches!(conv3d(&input, &k, &[0.0]), Err(NetError::ShapeMismatch(_))));
    let k = Tensor5::zeros([1, 2, 5, 3, 3]);
    assert!(matches!(conv3d(&input, &k, &[0.0]), Err(NetError::ShapeMismatch(_))));
    let k = Tensor5::zeros([1, 2, 3, 3, 3]);
    assert!(matches!(conv3d(&input, &k, &[0.0, 1.0]), Err(NetError::ShapeMismatch(_))));
}

#[test]
fn pool_shapes_and_values() {
    let input = Tensor5::<f32>::zeros([1, 50, 23, 23, 23]);
    let (out, _) = maxpool3d(&input).unwrap();
    assert_eq!(out.shape(), [1, 50, 11, 11, 11]);

    let c = t5([1, 2, 5, 4, 3], |_| 2.5);
    let (out, _) = maxpool3d(&c).unwrap();
    assert_eq!(out.shape(), [1, 2, 2, 2, 1]);
    assert!(out.data().iter().all(|&v| v == 2.5));

    let block = t5([1, 1, 2, 2, 2], |i| i as f64);
    let (out, arg) = maxpool3d(&block).unwrap();
    assert_eq!(out.data(), &[7.0]);
    assert_eq!(arg, vec![7]);

    assert!(maxpool3d(&Tensor5::<f64>::zeros([1, 1, 1, 4, 4])).is_err());
}

#[test]
fn batchnorm_constant_channel_is_zero() {
    let x = t5([2, 1, 2, 2, 2], |_| 4.0);
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let (y, _) = batchnorm3d(&x, &[1.0], &[0.0], &mut rm, &mut rv, BnMode::Train).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!((rm[0] - 0.4).abs() < 1e-12);
    assert!((rv[0] - 0.9).abs() < 1e-12);
}

#[test]
fn batchnorm_affine_law() {
    // mean 0, population std 1 per channel
    let x = t5([1, 1, 2, 2, 2], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let (y, _) = batchnorm3d(&x, &[2.0], &[3.0], &mut rm, &mut rv, BnMode::Train).unwrap();
    let n = y.data().len() as f64;
    let mean = y.data().iter().sum::<f64>() / n;
    let std = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - 3.0).abs() < 1e-12);
    assert!((std - 2.0).abs() < 1e-4);
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let x = t5([1, 1, 1, 1, 2], |i| i as f64);
    let (mut rm, mut rv) = (vec![1.0], vec![4.0]);
    let (y, _) = batchnorm3d(&x, &[1.0], &[0.0], &mut rm, &mut rv, BnMode::Eval).unwrap();
    let s = (4.0 + BN_EPS).sqrt();
    assert!((y.data()[0] + 1.0 / s).abs() < 1e-12);
    assert_eq!(y.data()[1], 0.0);
    assert_eq!((rm[0], rv[0]), (1.0, 4.0));
    let single = t5([1, 1, 1, 1, 1], |_| 1.0);
    assert!(matches!(
        batchnorm3d(&single, &[1.0], &[0.0], &mut rm, &mut rv, BnMode::Train),
        Err(NetError::DegenerateBatch(1))
    ));
}

#[test]
fn relu_values() {
    assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
    assert_eq!(relu(&[-1.0, -3.0, -0.5]), vec![0.0; 3]);
    assert_eq!(relu_backward(&[-1.0, 2.0], &[5.0, 7.0]), vec![0.0, 7.0]);
}

#[test]
fn fc_identity_and_zero_weights() {
    let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
    let mut eye = Matrix::zeros(3, 3);
    for i in 0..3 {
        eye.row_mut(i)[i] = 1.0;
    }
    assert_eq!(fc_affine(&x, &eye, &[0.0; 3]).unwrap(), x);
    let y = fc_affine(&x, &Matrix::zeros(2, 3), &[4.0, -4.0]).unwrap();
    assert_eq!(y.data(), &[4.0, -4.0, 4.0, -4.0]);
    assert!(fc_affine(&x, &Matrix::zeros(2, 4), &[0.0, 0.0]).is_err());
}

#[test]
fn l2_normalize_values() {
    let x = Matrix::<f64>::from_vec(3, 2, vec![3.0, 4.0, 0.6, 0.8, 0.0, 0.0]).unwrap();
    let (y, norms) = l2normalize(&x);
    assert!((y.row(0)[0] - 0.6).abs() < 1e-12 && (y.row(0)[1] - 0.8).abs() < 1e-12);
    assert!((y.row(1)[0] - 0.6).abs() < 1e-12 && (y.row(1)[1] - 0.8).abs() < 1e-12);
    assert_eq!(y.row(2), &[0.0, 0.0]);
    assert_eq!(norms[2], L2_FLOOR);
}

#[test]
fn uniform_logits_give_log_classes() {
    let logits = Matrix::from_vec(2, 5, vec![0.3; 10]).unwrap();
    let (loss, _) = softmax_xent(&logits, &[0, 4]).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn large_margin_drives_loss_to_zero() {
    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 60.0] {
        let logits = Matrix::from_vec(1, 3, vec![0.0, margin, 0.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss < prev);
        prev = loss;
    }
    assert!(prev < 1e-20);
}

#[test]
fn label_out_of_range() {
    let logits = Matrix::<f64>::zeros(1, 3);
    assert!(matches!(softmax_xent(&logits, &[3]), Err(NetError::LabelOutOfRange { label: 3, classes: 3 })));
    let head = SoftmaxHead::<f64>::new(2, 4, 0);
    assert!(head.loss(&Matrix::zeros(1, 4), &[2]).is_err());
}

#[test]
fn shape_chain_for_one_patch() {
    let params = init_params(1);
    let patch: Vec<f32> = (0..27 * 27 * 27).map(|i| ((i * 7919) % 101) as f32 / 50.0 - 1.0).collect();
    let (shapes, f) = shape_chain(&params, &patch).unwrap();
    let want: Vec<Vec<usize>> = vec![
        vec![1, 27, 27, 27],
        vec![50, 23, 23, 23],
        vec![50, 11, 11, 11],
        vec![50, 7, 7, 7],
        vec![50, 3, 3, 3],
        vec![1350],
        vec![1350],
        vec![160],
        vec![160],
    ];
    assert_eq!(shapes, want);
    let norm = f.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
}

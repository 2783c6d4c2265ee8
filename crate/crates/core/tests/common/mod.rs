#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};

/// Norm-wise relative error between the autograd gradient of `f` at `x0` and
/// a central finite-difference estimate, in f64.
pub fn grad_rel_error(x0: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let x0 = x0.to_dtype(DType::F64).unwrap();
    let var = Var::from_tensor(&x0).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(var.as_tensor())
        .expect("loss depends on input")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();

    let base: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
    let h = 1e-6;
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_vec(v.to_vec(), x0.dims(), &Device::Cpu).unwrap();
        f(&t).to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    };
    let mut numeric = vec![0.0; base.len()];
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + h;
        let up = eval(&v);
        v[i] = base[i] - h;
        let down = eval(&v);
        v[i] = base[i];
        numeric[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    assert!(scale > 1e-9, "gradient vanishes on fixture");
    diff / scale
}

/// Smooth, tie-free `c×h×w` fixture in (0, 1), batch of one.
pub fn smooth(c: usize, h: usize, w: usize, phase: f64) -> Tensor {
    let data: Vec<f64> = (0..c * h * w)
        .map(|i| 0.5 + 0.4 * ((i as f64) * 0.731 + phase).sin())
        .collect();
    Tensor::from_vec(data, (1, c, h, w), &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

mod common;

use apdraw_core::backbones::Backbones;
use apdraw_core::networks::{style_tensor, Generator, GeneratorConfig};
use apdraw_core::styles::*;
use apdraw_core::StyleVector;
use candle_core::{DType, Device, Tensor};
use common::{grad_rel_error, scalar, smooth};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const GOLDEN_HIST_LOSS: f64 = 0.556274541392;

#[test]
fn interpolation() {
    let e1 = StyleVector::basis(0);
    let e2 = StyleVector::basis(1);
    let m = interpolate_styles(&e1, &e2, 0.5).unwrap();
    assert_eq!(m.values(), [0.5, 0.5, 0.0]);
    assert_eq!(interpolate_styles(&e1, &e2, 0.0).unwrap(), e1);
    assert_eq!(interpolate_styles(&e1, &e2, 1.0).unwrap(), e2);
    assert!(interpolate_styles(&e1, &e2, 1.5).is_err());
    assert!(interpolate_styles(&e1, &e2, -0.1).is_err());
}

#[test]
fn remap_three_points() {
    let r = histogram_remap(&[0.0, 0.5, 1.0], &[0.0, 0.25, 0.5], 256).unwrap();
    assert_eq!(r, vec![0.0, 0.25, 0.5]);
    let r = histogram_remap(&[1.0, 0.0, 0.5], &[0.5, 0.0, 0.25], 256).unwrap();
    assert_eq!(r, vec![0.5, 0.0, 0.25]);
}

#[test]
fn remap_identity_constant_and_errors() {
    let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
    assert_eq!(histogram_remap(&v, &v, 256).unwrap(), v);
    assert!(histogram_remap(&v, &[0.3; 7], 256)
        .unwrap()
        .iter()
        .all(|&x| x == 0.3));
    assert!(histogram_remap(&v, &v, 1).is_err());
    assert!(histogram_remap(&[], &v, 256).is_err());
    assert!(histogram_remap(&[f64::NAN], &v, 256).is_err());
}

#[test]
fn remap_matches_histogram_on_large_channels() {
    let bins = 256;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let src: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let tgt: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let r = histogram_remap(&src, &tgt, bins).unwrap();
        let lo = tgt.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tgt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hr = histogram(&r, bins, lo, hi);
        let ht = histogram(&tgt, bins, lo, hi);
        let worst = hr.iter().zip(&ht).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 2.0 / bins as f64, "seed {seed}: per-bin L1 {worst}");
    }
}

#[test]
fn histogram_style_loss_identity_and_golden() {
    let bb = Backbones::fallback(0);
    let a = smooth(1, 16, 16, 0.0);
    let b = smooth(1, 16, 16, 1.3);
    assert!(scalar(&histogram_style_loss(&bb, &a, &a, 256).unwrap()) < 1e-6);
    let l = scalar(&histogram_style_loss(&bb, &a, &b, 256).unwrap());
    assert!((l - GOLDEN_HIST_LOSS).abs() < 1e-9, "{l}");
}

#[test]
fn histogram_style_loss_gradient_with_frozen_targets() {
    let bb = Backbones::fallback(0);
    let a = smooth(1, 8, 8, 0.2);
    let b = smooth(1, 8, 8, 2.1);
    let fb = bb.features.features(&b).unwrap();
    let targets = histogram_targets(&bb.features.features(&a).unwrap(), &fb, 256).unwrap();
    let err = grad_rel_error(&a, |x| {
        let fa = bb.features.features(x).unwrap();
        histogram_loss_with_targets(&fa, &targets).unwrap()
    });
    assert!(err < 1e-3, "relative error {err}");
}

fn toy_generator() -> Generator {
    Generator::new(GeneratorConfig::drawing(4, 1, 16), 5, DType::F64).unwrap()
}

#[test]
fn search_self_target_holds_at_basis() {
    let g = toy_generator();
    let bb = Backbones::fallback(0);
    let p = smooth(3, 16, 16, 0.4);
    let e1 = StyleVector::basis(0);
    let target = g.forward(&p, Some(&style_tensor(&[e1], DType::F64).unwrap())).unwrap();
    let cfg = SearchConfig {
        steps: 10,
        init: Some(e1),
        ..SearchConfig::default()
    };
    let st = search_new_style(&g, &bb, &p, &target, &cfg).unwrap();
    assert_eq!(st.trace.len(), 10);
    assert!(st.trace.iter().all(|t| t.loss < 1e-4), "{:?}", st.trace);
    assert!(st.loss < 1e-4);
    assert!(st.aborted.is_none());
}

#[test]
fn search_random_init_reduces_loss_and_writes_trace() {
    let g = toy_generator();
    let bb = Backbones::fallback(0);
    let p = smooth(3, 16, 16, 0.4);
    let target = g
        .forward(&p, Some(&style_tensor(&[StyleVector::basis(2)], DType::F64).unwrap()))
        .unwrap();
    let mut gains = Vec::new();
    for seed in 0..5 {
        let cfg = SearchConfig {
            steps: 30,
            seed,
            ..SearchConfig::default()
        };
        let st = search_new_style(&g, &bb, &p, &target, &cfg).unwrap();
        assert_eq!(st.trace.len(), 30);
        let min = st.trace.iter().map(|t| t.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(st.loss, min);
        assert_eq!(st.s.values(), st.trace[st.step].s);
        gains.push(st.trace[0].loss - st.trace.last().unwrap().loss);
        if seed == 0 {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("trace.csv");
            write_trace_csv(&path, &st.trace).unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next(), Some("step,s0,s1,s2,loss"));
            assert_eq!(lines.count(), 30);
        }
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[2] > 0.0, "gains {gains:?}");
}

#[test]
fn search_projection_stays_on_simplex() {
    let g = toy_generator();
    let bb = Backbones::fallback(0);
    let p = smooth(3, 16, 16, 0.4);
    let target = smooth(1, 16, 16, 0.9);
    let cfg = SearchConfig {
        steps: 5,
        project_simplex: true,
        ..SearchConfig::default()
    };
    let st = search_new_style(&g, &bb, &p, &target, &cfg).unwrap();
    for t in &st.trace {
        let sum: f64 = t.s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9 && t.s.iter().all(|&v| v >= -1e-12), "{t:?}");
    }
}

#[test]
fn histogram_loss_shape_mismatch() {
    let bb = Backbones::fallback(0);
    let a = Tensor::zeros((1, 1, 16, 16), DType::F64, &Device::Cpu).unwrap();
    let b = Tensor::zeros((2, 1, 16, 16), DType::F64, &Device::Cpu).unwrap();
    let a3 = Tensor::zeros((3, 1, 16, 16), DType::F64, &Device::Cpu).unwrap();
    assert!(histogram_style_loss(&bb, &a3, &b, 256).is_err());
    assert!(histogram_style_loss(&bb, &b, &a, 256).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn remap_is_monotone(
        src in prop::collection::vec(-5.0f64..5.0, 1..200),
        tgt in prop::collection::vec(-5.0f64..5.0, 1..200),
    ) {
        let r = histogram_remap(&src, &tgt, 256).unwrap();
        for i in 0..src.len() {
            for j in 0..src.len() {
                if src[i] < src[j] {
                    prop_assert!(r[i] <= r[j]);
                }
                if src[i] == src[j] {
                    prop_assert_eq!(r[i], r[j]);
                }
            }
        }
        let lo = tgt.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tgt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn interpolation_stays_on_simplex(t in 0.0f64..=1.0, a in 0usize..3, b in 0usize..3) {
        let s = interpolate_styles(&StyleVector::basis(a), &StyleVector::basis(b), t).unwrap();
        prop_assert!(s.is_on_simplex());
    }
}

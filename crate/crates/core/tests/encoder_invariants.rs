mod common;

use common::*;
use macas::autograd::gradcheck::{finite_diff_check, DEFAULT_EPS, DEFAULT_TOLERANCE};
use macas::autograd::Graph;
use macas::diagnostics::toy_config;
use macas::encoder::{attention, build_inputs, BehaviourEncoder, CrossMode, EncoderConfig, PairEncoder};
use macas::model::{Macas, Sample};
use macas::params::ParamStore;
use macas::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        num_encoders: 2,
        num_heads: 2,
        hidden_dim: 12,
        d_model: 8,
        dropout: 0.0,
        max_len: 6,
    }
}

#[test]
fn hand_computed_two_by_two_attention() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap()).unwrap();
    let k = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    let v = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let (out, w) = attention(&mut g, q, k, v, &[true, true]).unwrap();
    let s = 2f64.sqrt();
    // row 0 scores [1/√2, 0], row 1 scores [0, 2/√2]
    let a0 = 1.0 / (1.0 + (-1.0 / s).exp());
    let a1 = 1.0 / (1.0 + (2.0 / s).exp());
    let expected_w = [[a0, 1.0 - a0], [a1, 1.0 - a1]];
    let expected_out = [
        [a0 + 3.0 * (1.0 - a0), 2.0 * a0 + 4.0 * (1.0 - a0)],
        [a1 + 3.0 * (1.0 - a1), 2.0 * a1 + 4.0 * (1.0 - a1)],
    ];
    for i in 0..2 {
        for j in 0..2 {
            assert!((g.value(w).get(i, j) - expected_w[i][j]).abs() < 1e-15);
            assert!((g.value(out).get(i, j) - expected_out[i][j]).abs() < 1e-14);
        }
    }
    let (_, w) = attention(&mut g, q, k, v, &[true, false]).unwrap();
    assert!(g.value(w).get(0, 1) < 1e-9 && g.value(w).get(1, 1) < 1e-9);
    assert!((g.value(w).get(1, 0) - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_stochastic_and_masked_keys_ignored(
        seed in any::<u64>(),
        n in 1usize..7,
        d in 1usize..5,
        pad in prop::collection::vec(any::<bool>(), 7),
        scale in 0.1f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = pad[..n].iter().map(|p| !p).collect();
        mask[0] = true;
        let mut g = Graph::new();
        let q = g.constant(random(&mut rng, n, d).map(|x| x * scale)).unwrap();
        let k = g.constant(random(&mut rng, n, d)).unwrap();
        let v = g.constant(random(&mut rng, n, d)).unwrap();
        let (_, w) = attention(&mut g, q, k, v, &mask).unwrap();
        let w = g.value(w);
        for r in 0..n {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (c, &real) in mask.iter().enumerate() {
                prop_assert!(w.get(r, c) >= 0.0);
                if !real {
                    prop_assert!(w.get(r, c) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(row in prop::collection::vec(-50.0f64..50.0, 1..10), shift in -100.0f64..100.0) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row_vector(row.clone())).unwrap();
        let b = g.constant(Tensor::row_vector(row.iter().map(|x| x + shift).collect())).unwrap();
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        let oracle = brute_softmax(&row);
        for j in 0..row.len() {
            prop_assert!((g.value(sa).data()[j] - g.value(sb).data()[j]).abs() < 1e-12);
            prop_assert!((g.value(sa).data()[j] - oracle[j]).abs() < 1e-12);
        }
    }
}

fn encode_modes(mode: CrossMode, t: &Tensor, c: &Tensor, mask: &[bool]) -> (Tensor, Tensor, Vec<Tensor>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let enc = PairEncoder::init(&mut store, "enc", &small_encoder(), mode, t.cols(), c.cols(), &mut rng).unwrap();
    let mut g = Graph::new();
    let tv = g.constant(t.clone()).unwrap();
    let cv = g.constant(c.clone()).unwrap();
    let out = enc.encode(&mut g, &store, tv, cv, mask).unwrap();
    let att = out.attention.iter().map(|a| g.value(*a).clone()).collect();
    (g.value(out.t_h).clone(), g.value(out.c_h).clone(), att)
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::from_rows(&perm.iter().map(|&p| t.row(p).to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn pair_encoder_is_permutation_equivariant_on_real_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random(&mut rng, 6, 5);
    let c = random(&mut rng, 6, 4);
    let mask = [true, true, true, true, false, false];
    let perm = [2, 0, 3, 1, 4, 5];
    for mode in [CrossMode::Cb, CrossMode::Cm, CrossMode::Cbm] {
        let (th, ch, _) = encode_modes(mode, &t, &c, &mask);
        let (pth, pch, _) = encode_modes(mode, &permute_rows(&t, &perm), &permute_rows(&c, &perm), &mask);
        let d = permute_rows(&th, &perm).max_abs_diff(&pth).max(permute_rows(&ch, &perm).max_abs_diff(&pch));
        assert_eq!(d, 0.0, "{mode}");
    }
}

#[test]
fn modes_are_distinct_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random(&mut rng, 6, 5);
    let c = random(&mut rng, 6, 4);
    let mask = [true; 6];
    let outs: Vec<_> = [CrossMode::Cb, CrossMode::Cm, CrossMode::Cbm]
        .iter()
        .map(|&m| encode_modes(m, &t, &c, &mask))
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let d = outs[i].0.max_abs_diff(&outs[j].0).max(outs[i].1.max_abs_diff(&outs[j].1));
            assert!(d > 1e-6, "modes {i} and {j} differ by only {d:e}");
        }
    }
}

#[test]
fn encoder_attention_is_row_stochastic_with_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random(&mut rng, 6, 5);
    let c = random(&mut rng, 6, 4);
    let mask = [true, true, true, false, false, false];
    for mode in [CrossMode::Cb, CrossMode::Cm, CrossMode::Cbm] {
        let (th, ch, att) = encode_modes(mode, &t, &c, &mask);
        assert_eq!(att.len(), 2 * 2 * 2);
        for a in &att {
            for r in 0..6 {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for col in 3..6 {
                    assert!(a.get(r, col) < 1e-9);
                }
            }
        }
        for r in 3..6 {
            assert!(th.row(r).iter().chain(ch.row(r)).all(|&x| x == 0.0));
        }
    }
}

#[test]
fn pair_encoder_gradients_match_in_every_mode() {
    for mode in [CrossMode::Cb, CrossMode::Cm, CrossMode::Cbm] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = small_encoder();
        cfg.max_len = 4;
        let enc = PairEncoder::init(&mut store, "enc", &cfg, mode, 3, 2, &mut rng).unwrap();
        let t = store.add("t", random(&mut rng, 4, 3));
        let c = store.add("c", random(&mut rng, 4, 2));
        let w = random(&mut rng, 4, 8);
        let mask = [true, true, true, false];
        let report = finite_diff_check(&store, DEFAULT_EPS, DEFAULT_TOLERANCE, |g, s| {
            let tv = g.param(s, t)?;
            let cv = g.param(s, c)?;
            let out = enc.encode(g, s, tv, cv, &mask)?;
            let wv = g.constant(w.clone())?;
            let both = g.add(out.t_h, out.c_h)?;
            let p = g.mul(both, wv)?;
            g.sum(p)
        })
        .unwrap();
        assert!(report.passed, "{mode}: {:e} abs {:e} {}", report.max_rel_error, report.max_abs_error, report.worst().unwrap().name);
    }
}

#[test]
fn behaviour_encoder_gradients_match() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cfg = small_encoder();
    cfg.max_len = 4;
    let enc = BehaviourEncoder::init(&mut store, "beh", &cfg, 5, &mut rng).unwrap();
    let x = store.add("x", random(&mut rng, 4, 5));
    let w = random(&mut rng, 4, 8);
    let mask = [true, true, false, true];
    let report = finite_diff_check(&store, DEFAULT_EPS, DEFAULT_TOLERANCE, |g, s| {
        let xv = g.param(s, x)?;
        let (out, _) = enc.encode(g, s, xv, &mask)?;
        let wv = g.constant(w.clone())?;
        let p = g.mul(out, wv)?;
        g.sum(p)
    })
    .unwrap();
    assert!(report.passed, "{:e}", report.max_rel_error);
}

fn toy_sample(rng: &mut ChaCha8Rng, model: &Macas) -> Sample {
    let cfg = &model.config;
    let n = cfg.encoder.max_len;
    let d = &cfg.dims;
    let mut mask = vec![true; n];
    mask[n - 1] = false;
    Sample {
        directed: Some(random(rng, n, d.directed)),
        generalised: Some(random(rng, n, d.generalised)),
        explicit: Some(random(rng, n, d.explicit)),
        implicit: Some(random(rng, 1, d.implicit)),
        behaviour: Some(random(rng, n, d.behaviour)),
        mask,
    }
}

#[test]
fn simplex_and_shape_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for classes in [2, 3] {
        let mut cfg = toy_config();
        cfg.num_classes = classes;
        let model = Macas::new(cfg.clone(), 3).unwrap();
        for _ in 0..5 {
            let sample = toy_sample(&mut rng, &model);
            let mut g = Graph::new();
            let x = sample.record(&mut g, false).unwrap();
            let f = model.forward(&mut g, &x).unwrap();
            let n = cfg.encoder.max_len;
            let dm = cfg.encoder.d_model;
            for p in [f.content_gate.probs, f.target_gate.probs, f.z] {
                let v = g.value(p);
                assert_eq!(v.shape(), &[1, classes]);
                assert!(v.data().iter().all(|&x| x >= 0.0));
                assert!((v.sum() - 1.0).abs() < 1e-9);
            }
            assert_eq!(g.value(f.content_gate.augmented).shape(), &[n, classes + dm]);
            assert_eq!(g.value(f.target_gate.augmented).shape(), &[n, classes + dm]);
            assert_eq!(g.value(f.encoded.t_h).shape(), &[n, dm]);
            assert_eq!(g.value(f.encoded.c_h).shape(), &[n, dm]);
            let ce = g.value(f.c_e);
            let i0 = cfg.dims.explicit;
            let first = ce.row(0)[i0..].to_vec();
            assert_eq!(first, sample.implicit.as_ref().unwrap().data());
            for r in 1..n {
                assert_eq!(&ce.row(r)[i0..], first.as_slice());
            }
        }
    }
}

#[test]
fn implicit_broadcast_yields_identical_rows() {
    let mut g = Graph::new();
    let d = g.constant(Tensor::zeros(5, 2)).unwrap();
    let i = g.constant(Tensor::row_vector(vec![0.25, -1.5, 3.0])).unwrap();
    let (_, c) = build_inputs(&mut g, Some(d), None, None, Some(i), 5).unwrap();
    let c = g.value(c);
    assert_eq!(c.shape(), &[5, 3]);
    for r in 0..5 {
        assert_eq!(c.row(r), &[0.25, -1.5, 3.0]);
    }
}

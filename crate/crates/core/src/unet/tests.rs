use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck_sampled;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn cfg(skip: &str) -> UNetConfig {
    UNetConfig {
        skip: SkipKind::from_tag(skip).unwrap(),
        ..UNetConfig::default()
    }
}

fn small(skip: &str) -> UNetConfig {
    let mut c = cfg(skip);
    c.channel_plan = [4, 8, 12, 16, 20];
    if let SkipKind::SqEx { ratio } = &mut c.skip {
        *ratio = 4;
    }
    c
}

#[test]
fn same_seed_gives_identical_parameters() {
    let a = build_unet(&small("hybrid"), 5).unwrap();
    let b = build_unet(&small("hybrid"), 5).unwrap();
    let c = build_unet(&small("hybrid"), 6).unwrap();
    assert_eq!(a.to_named_tensors(), b.to_named_tensors());
    assert_ne!(a.to_named_tensors(), c.to_named_tensors());
}

#[test]
fn parameter_deltas_match_closed_form() {
    let vanilla = build_unet(&cfg("vanilla"), 0).unwrap().parameter_count() as i64;
    let mut deltas = Vec::new();
    for tag in SkipKind::TAGS {
        let c = cfg(tag);
        let n = build_unet(&c, 0).unwrap().parameter_count() as i64;
        assert_eq!(n - vanilla, skips::skip_extra_parameters(&c.skip, &DEFAULT_PLAN), "{tag}");
        deltas.push((tag, n - vanilla));
    }
    assert_eq!(deltas.iter().find(|d| d.0 == "hybrid").unwrap().1, 1984);
    let largest = deltas.iter().max_by_key(|d| d.1).unwrap();
    assert_eq!(largest.0, "exfuse");
}

#[test]
fn backbone_is_shared_across_kinds() {
    let reference: Vec<(String, Tensor)> = build_unet(&small("vanilla"), 3)
        .unwrap()
        .backbone_parameters()
        .map(|(n, t)| (n.clone(), (**t).clone()))
        .collect();
    for tag in SkipKind::TAGS {
        let m = build_unet(&small(tag), 3).unwrap();
        let got: Vec<(String, Tensor)> = m.backbone_parameters().map(|(n, t)| (n.clone(), (**t).clone())).collect();
        assert_eq!(got, reference, "{tag}");
    }
}

#[test]
fn forward_shape_and_positivity() {
    let m = build_unet(&cfg("hybrid"), 1).unwrap();
    let x = random(&[3, 64, 64], 2);
    let y = m.predict(&x).unwrap();
    assert_eq!(y.shape(), &[1, 64, 64]);
    assert!(y.data().iter().all(|v| v.is_finite() && *v > 0.0));
    assert_eq!(m.predict(&x).unwrap(), y);
}

#[test]
fn every_kind_runs_forward() {
    let x = random(&[3, 32, 64], 4);
    for tag in SkipKind::TAGS {
        let y = build_unet(&small(tag), 1).unwrap().predict(&x).unwrap();
        assert_eq!(y.shape(), &[1, 32, 64], "{tag}");
        assert!(y.data().iter().all(|v| v.is_finite()), "{tag}");
    }
}

#[test]
fn fresh_exfuse_ignores_the_encoder_branch() {
    let mut m = build_unet(&small("exfuse"), 7).unwrap();
    let x = random(&[3, 32, 32], 8);
    let y = m.predict(&x).unwrap();
    for level in 1..=LEVELS {
        let w = m.parameter(&format!("skip{level}.global.weight")).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0), "level {level}");
        let name = format!("skip{level}.embed.weight");
        let shape = m.parameter(&name).unwrap().shape().to_vec();
        m.set_parameter(&name, random(&shape, level as u64)).unwrap();
    }
    assert_eq!(m.predict(&x).unwrap(), y);
}

#[test]
fn rejects_bad_input_sizes() {
    let m = build_unet(&small("vanilla"), 1).unwrap();
    assert!(matches!(m.predict(&Tensor::zeros([3, 48, 64])), Err(Error::Dimension(_))));
    assert!(matches!(m.predict(&Tensor::zeros([1, 32, 32])), Err(Error::Dimension(_))));
    assert!(matches!(m.predict(&Tensor::zeros([3, 32])), Err(Error::Dimension(_))));
}

#[test]
fn config_validation() {
    let mut c = UNetConfig::default();
    c.channel_plan = [32, 32, 64, 128, 256];
    assert!(build_unet(&c, 0).is_err());
    assert!(UNetConfig::from_entries([("model.skip", "hybrid"), ("model.kernel_size", "4")]).is_err());
    assert!(UNetConfig::from_entries([("model.nope", "1")]).is_err());
    assert!(UNetConfig::from_entries([("train.lr", "1")]).is_err());
    assert!(UNetConfig::from_entries([("model.skip", "sqex"), ("model.sqex_ratio", "3")]).is_err());
}

#[test]
fn config_text_round_trip() {
    let c = UNetConfig::from_entries([
        ("model.skip", "hybrid"),
        ("model.kernel_size", "7"),
        ("model.blend_mode", "fixed:0.25,0.75"),
        ("model.channel_plan", "8,16,32,64,128"),
        ("model.activation", "relu"),
        ("model.highpass", "residual"),
    ])
    .unwrap();
    assert_eq!(
        c.skip,
        SkipKind::Hybrid {
            kernel: 7,
            blend: BlendMode::Fixed { eps: 0.25, delta: 0.75 }
        }
    );
    assert_eq!(UNetConfig::from_text(&c.to_text()).unwrap(), c);
    for tag in SkipKind::TAGS {
        let c = small(tag);
        assert_eq!(UNetConfig::from_text(&c.to_text()).unwrap(), c, "{tag}");
    }
    let r = UNetConfig::from_entries([("model.skip", "residual"), ("model.skip_units", "2")]).unwrap();
    assert_eq!(r.skip, SkipKind::Residual { units: [2; LEVELS] });
}

#[test]
fn fresh_blending_factors() {
    let m = build_unet(&cfg("hybrid"), 11).unwrap();
    let levels = m.blending_factors().unwrap();
    assert_eq!(levels.len(), LEVELS);
    for (l, &f) in levels.iter().zip(&DEFAULT_PLAN) {
        assert_eq!(l.eps.len(), f);
        assert_eq!(l.delta.len(), f);
        assert!(l.eps.iter().chain(&l.delta).all(|&v| v > 0.0 && v < 1.0));
        if f >= 128 {
            assert!((l.eps_mean() - 0.5).abs() < 0.1, "level {} eps", l.level);
            assert!((l.delta_mean() - 0.5).abs() < 0.1, "level {} delta", l.level);
        }
    }
    let vanilla = build_unet(&cfg("vanilla"), 11).unwrap();
    assert!(matches!(vanilla.blending_factors(), Err(Error::Usage(_))));
}

#[test]
fn checkpoint_round_trip() {
    let m = build_unet(&small("attention"), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hskp");
    m.save(&path).unwrap();
    let back = ModelGraph::load(&path).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.to_named_tensors(), m.to_named_tensors());
    let x = random(&[3, 32, 32], 10);
    assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
}

#[test]
fn load_rejects_foreign_tensors() {
    let m = build_unet(&small("vanilla"), 9).unwrap();
    let mut t = m.to_named_tensors();
    t.push(("surprise".into(), Tensor::scalar(1.0)));
    assert!(ModelGraph::from_named_tensors(t).is_err());
    let mut t = m.to_named_tensors();
    t.pop();
    assert!(ModelGraph::from_named_tensors(t).is_err());
}

#[test]
fn end_to_end_gradcheck_hybrid() {
    let m = build_unet(&small("hybrid"), 21).unwrap();
    let x = random(&[3, 32, 32], 22);
    let target = random(&[1, 32, 32], 23);
    let mut inputs = vec![x];
    inputs.extend(m.parameters().values().map(|t| (**t).clone()));
    let err = gradcheck_sampled(
        |tape, v| {
            let y = m.forward(tape, &v[1..], v[0])?;
            let t = tape.constant(target.clone());
            let r = tape.sub(y, t)?;
            let sq = tape.mul(r, r)?;
            Ok(tape.mean(sq))
        },
        &inputs,
        1e-5,
        3,
        24,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::metrics::{angular_error_deg, extract_depth_edges, normals_from_depth, EdgeMap};

fn spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        ..SceneSpec::default()
    }
}

fn normal(t: &Tensor, i: usize) -> [f64; 3] {
    let p = t.shape()[1] * t.shape()[2];
    [t.data()[i], t.data()[p + i], t.data()[2 * p + i]]
}

/// Pixels whose `(2r+1)²` window lies inside the image on a single surface.
fn uniform_window(maps: &SceneMaps, w: usize, h: usize, r: usize) -> Vec<bool> {
    (0..w * h)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if y < r || x < r || y + r >= h || x + r >= w {
                return false;
            }
            (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| maps.surface[yy * w + xx] == maps.surface[i]))
        })
        .collect()
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(generate_scene(&spec(5)).unwrap(), generate_scene(&spec(5)).unwrap());
    assert_ne!(generate_scene(&spec(5)).unwrap(), generate_scene(&spec(6)).unwrap());
}

#[test]
fn depth_and_normal_invariants() {
    for seed in 0..20 {
        let s = generate_scene(&spec(seed)).unwrap();
        assert!(s.depth.data().iter().all(|&d| d > MIN_DEPTH && d <= MAX_DEPTH), "seed {seed}");
        let (h, w) = (64, 64);
        for i in 0..h * w {
            let n = normal(&s.normals, i);
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-6);
            let p = s.intrinsics.unproject(i % w, i / w, s.depth.data()[i]);
            assert!(n[0] * p[0] + n[1] * p[1] + n[2] * p[2] < 0.0, "seed {seed} pixel {i} faces away");
        }
        assert_eq!(s.color.shape(), &[3, 64, 64]);
        assert!(s.color.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }
}

#[test]
fn back_wall_normals_match_depth_derived_normals() {
    let mut checked = 0;
    for seed in 0..10 {
        let (s, maps) = generate_scene_with_maps(&spec(seed)).unwrap();
        let (est, valid) = normals_from_depth(&s.depth, &s.intrinsics).unwrap();
        let inner = uniform_window(&maps, 64, 64, 1);
        for i in 0..64 * 64 {
            if maps.surface[i] == 0 {
                let n = normal(&s.normals, i);
                assert!(n[0].abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2] + 1.0).abs() < 1e-6);
            }
            // Central differences are exact on the planar room surfaces.
            if inner[i] && valid[i] && maps.surface[i] < 8 {
                assert!(angular_error_deg(normal(&est, i), normal(&s.normals, i)) < 2.0, "seed {seed} pixel {i}");
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn depth_is_piecewise_smooth() {
    for seed in 0..20 {
        let (s, maps) = generate_scene_with_maps(&spec(seed)).unwrap();
        let d = s.depth.data();
        let (w, h) = (64, 64);
        let inner = uniform_window(&maps, w, h, 2);
        for i in (0..w * h).filter(|&i| inner[i]) {
            let lap = d[i - 1] + d[i + 1] + d[i - w] + d[i + w] - 4.0 * d[i];
            assert!(lap.abs() < 0.05, "seed {seed} pixel ({}, {}) laplacian {lap}", i % w, i / w);
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                    if maps.object[i] != maps.object[j] {
                        assert!((d[i] - d[j]).abs() > 0.25, "seed {seed} silhouette step at ({x}, {y})");
                    }
                }
            }
        }
        assert!(!extract_depth_edges(&s.depth, 0.5).unwrap().is_empty(), "seed {seed}");
    }
}

#[test]
fn texture_edges_are_independent_of_depth_edges() {
    let (mut both, mut tex_n, mut dep_n) = (0usize, 0usize, 0usize);
    for seed in 0..20 {
        let (s, maps) = generate_scene_with_maps(&spec(seed)).unwrap();
        let tex = Tensor::new([1, 64, 64], maps.texture.clone()).unwrap();
        let te: EdgeMap = extract_depth_edges(&tex, 0.25).unwrap();
        let de = extract_depth_edges(&s.depth, 0.5).unwrap();
        tex_n += te.count();
        dep_n += de.count();
        both += te.edges.iter().zip(&de.edges).filter(|(a, b)| **a && **b).count();
    }
    assert!(tex_n > 0 && dep_n > 0);
    let (ft, fd) = (both as f64 / tex_n as f64, both as f64 / dep_n as f64);
    assert!(ft < 0.2 && fd < 0.2, "overlap {ft:.3} of texture edges, {fd:.3} of depth edges");
}

#[test]
fn spec_validation() {
    let mut s = spec(0);
    s.width = 48;
    assert!(generate_scene(&s).is_err());
    let mut s = spec(0);
    s.object_count = 0;
    assert!(generate_scene(&s).is_err());
    let mut s = spec(0);
    s.width = 512;
    s.height = 256;
    let big = generate_scene(&s).unwrap();
    assert_eq!(big.depth.shape(), &[1, 256, 512]);
}

#[test]
fn pfm_header_bytes() {
    let map = Tensor::from_fn([1, 2, 4], |i| i as f64);
    let bytes = encode_pfm(&map).unwrap();
    assert!(bytes.starts_with(b"Pf\n4 2\n-1.0\n"));
    assert_eq!(bytes.len(), b"Pf\n4 2\n-1.0\n".len() + 32);
    // Bottom row first.
    let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    assert_eq!(first, 4.0);
}

#[test]
fn pfm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in [1, 3] {
        let map = Tensor::from_fn([c, 5, 7], |_| rng.random_range(-10.0..10.0));
        let p = dir.path().join(format!("m{c}.pfm"));
        write_pfm(&p, &map).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), quantize_f32(&map));
    }
    assert!(encode_pfm(&Tensor::full([1, 1, 1], f64::NAN)).is_err());
    assert!(encode_pfm(&Tensor::zeros([2, 1, 1])).is_err());
}

#[test]
fn pfm_big_endian_fixture() {
    let mut bytes = b"PF\n2 1\n1.0\n".to_vec();
    for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let t = decode_pfm(&bytes, Path::new("be.pfm")).unwrap();
    assert_eq!(t.shape(), &[3, 1, 2]);
    assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
}

#[test]
fn pfm_malformed_inputs() {
    let good = encode_pfm(&Tensor::ones([1, 2, 2])).unwrap();
    match decode_pfm(&good[..good.len() - 1], Path::new("t.pfm")) {
        Err(Error::Format { path, offset, .. }) => {
            assert_eq!(path, Path::new("t.pfm"));
            assert_eq!(offset, good.len() as u64 - 1);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_pfm(b"PX\n1 1\n-1.0\n\0\0\0\0", Path::new("x")), Err(Error::Format { .. })));
    assert!(matches!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0", Path::new("x")), Err(Error::Format { .. })));
    assert!(matches!(decode_pfm(b"Pf\n1", Path::new("x")), Err(Error::Format { .. })));
}

#[test]
fn ppm_format() {
    let white = Tensor::ones([3, 1, 1]);
    assert_eq!(encode_ppm(&white).unwrap(), b"P6\n1 1\n255\n\xff\xff\xff".to_vec());
    let half = Tensor::full([3, 1, 1], 0.5 / 255.0);
    assert_eq!(encode_ppm(&half).unwrap().last(), Some(&1));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Tensor::from_fn([3, 4, 6], |_| rng.random_range(0.0..1.0));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ppm");
    write_ppm(&p, &img).unwrap();
    assert!(read_ppm(&p).unwrap().max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);

    assert!(matches!(decode_ppm(b"P3\n1 1\n255\n255 255 255\n", Path::new("a")), Err(Error::Format { .. })));
    assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", Path::new("a")), Err(Error::Format { .. })));
    assert!(matches!(decode_ppm(b"P6\n2 1\n255\n\0\0\0", Path::new("a")), Err(Error::Format { .. })));
    let commented = decode_ppm(b"P6\n# note\n1 1\n255\n\x00\x80\xff", Path::new("a")).unwrap();
    assert_eq!(commented.data(), &[0.0, 128.0 / 255.0, 1.0]);
}

#[test]
fn split_layout_and_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let template = SceneSpec {
        width: 32,
        height: 32,
        ..SceneSpec::default()
    };
    generate_dataset(dir.path(), 3, 2, 40, &template).unwrap();
    let train = Split::load(&dir.path().join("train")).unwrap();
    let test = Split::load(&dir.path().join("test")).unwrap();
    assert_eq!(train.len(), 3);
    assert_eq!(train.rows.iter().map(|r| r.spec.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
    assert_eq!(test.rows.iter().map(|r| r.spec.seed).collect::<Vec<_>>(), vec![43, 44]);
    assert_eq!(train.rows[1].depth, "00001_depth.pfm");
    assert_eq!(train.resolution(), (32, 32));
    for a in &train.examples {
        for b in &test.examples {
            assert_ne!(a.depth, b.depth);
        }
    }

    // Regenerate from the manifest alone.
    let again = tempfile::tempdir().unwrap();
    let specs: Vec<SceneSpec> = train.rows.iter().map(|r| r.spec.clone()).collect();
    let samples: Vec<Sample> = specs.iter().map(|s| generate_scene(s).unwrap()).collect();
    write_split(again.path(), &samples, &train.rows).unwrap();
    for name in ["manifest.tsv", "00000_color.ppm", "00001_depth.pfm", "00002_normals.pfm"] {
        let a = std::fs::read(dir.path().join("train").join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(Split::load(again.path()).unwrap().digest, train.digest);
    assert_ne!(train.digest, test.digest);
}

#[test]
fn manifest_errors_name_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = Split::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("manifest.tsv"));
    std::fs::write(dir.path().join("manifest.tsv"), "index\tseed\n").unwrap();
    assert!(matches!(Split::load(dir.path()), Err(Error::Format { .. })));
}

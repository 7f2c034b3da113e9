//! Synthetic piecewise-smooth scenes and their on-disk layout.
//!
//! A split directory holds `{index:05}_color.ppm`, `{index:05}_depth.pfm`,
//! `{index:05}_normals.pfm` and a tab-separated `manifest.tsv` that is
//! enough to regenerate every file.

mod io;
mod scene;

pub use io::{
    decode_pfm, decode_ppm, encode_pfm, encode_ppm, quantize_f32, read_pfm, read_ppm, write_pfm, write_ppm,
};
pub use scene::{generate_scene, generate_scene_with_maps, Sample, SceneMaps, SceneSpec, MAX_DEPTH, MIN_DEPTH};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Intrinsics;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";

const MANIFEST_HEADER: [&str; 13] = [
    "index",
    "seed",
    "width",
    "height",
    "objects",
    "texture_frequency",
    "fx",
    "fy",
    "cx",
    "cy",
    "color",
    "depth",
    "normals",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    pub color: String,
    pub depth: String,
    pub normals: String,
}

pub fn file_names(index: usize) -> [String; 3] {
    [
        format!("{index:05}_color.ppm"),
        format!("{index:05}_depth.pfm"),
        format!("{index:05}_normals.pfm"),
    ]
}

/// Specs for `count` samples with seeds `seed + index`.
pub fn split_specs(seed: u64, count: usize, template: &SceneSpec) -> Result<Vec<SceneSpec>> {
    if count == 0 {
        return Err(Error::Configuration("split needs at least one sample".into()));
    }
    template.validate()?;
    Ok((0..count)
        .map(|i| SceneSpec {
            seed: seed + i as u64,
            ..template.clone()
        })
        .collect())
}

/// Generates a split in memory.
pub fn generate_split(seed: u64, count: usize, template: &SceneSpec) -> Result<(Vec<Sample>, Vec<ManifestRow>)> {
    let specs = split_specs(seed, count, template)?;
    let samples: Vec<Sample> = specs.par_iter().map(generate_scene).collect::<Result<_>>()?;
    let rows = specs
        .into_iter()
        .zip(&samples)
        .enumerate()
        .map(|(index, (spec, s))| {
            let [color, depth, normals] = file_names(index);
            ManifestRow {
                index,
                spec,
                intrinsics: s.intrinsics,
                color,
                depth,
                normals,
            }
        })
        .collect();
    Ok((samples, rows))
}

pub fn manifest_text(rows: &[ManifestRow]) -> String {
    let mut s = MANIFEST_HEADER.join("\t");
    s.push('\n');
    for r in rows {
        let k = r.intrinsics;
        let f = [
            r.index.to_string(),
            r.spec.seed.to_string(),
            r.spec.width.to_string(),
            r.spec.height.to_string(),
            r.spec.object_count.to_string(),
            r.spec.texture_frequency.to_string(),
            k.fx.to_string(),
            k.fy.to_string(),
            k.cx.to_string(),
            k.cy.to_string(),
            r.color.clone(),
            r.depth.clone(),
            r.normals.clone(),
        ];
        s.push_str(&f.join("\t"));
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    let mut offset = 0u64;
    let header = lines.next().unwrap_or_default();
    if header.split('\t').collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::format(path, 0, "unexpected manifest header"));
    }
    offset += header.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |m: &str| Error::format(path, offset, m.to_owned());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != MANIFEST_HEADER.len() {
            return Err(bad("wrong number of manifest fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(&format!("bad number `{}`", f[i])));
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(&format!("bad integer `{}`", f[i])));
        rows.push(ManifestRow {
            index: int(0)? as usize,
            spec: SceneSpec {
                seed: int(1)?,
                width: int(2)? as usize,
                height: int(3)? as usize,
                object_count: int(4)? as usize,
                texture_frequency: num(5)?,
                ..SceneSpec::default()
            },
            intrinsics: Intrinsics {
                fx: num(6)?,
                fy: num(7)?,
                cx: num(8)?,
                cy: num(9)?,
            },
            color: f[10].to_owned(),
            depth: f[11].to_owned(),
            normals: f[12].to_owned(),
        });
        offset += line.len() as u64 + 1;
    }
    if rows.is_empty() {
        return Err(Error::format(path, offset, "manifest has no rows"));
    }
    Ok(rows)
}

/// Writes a generated split into `dir`, creating it if needed.
pub fn write_split(dir: &Path, samples: &[Sample], rows: &[ManifestRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples.par_iter().zip(rows).try_for_each(|(s, r)| -> Result<()> {
        write_ppm(&dir.join(&r.color), &s.color)?;
        write_pfm(&dir.join(&r.depth), &s.depth)?;
        write_pfm(&dir.join(&r.normals), &s.normals)
    })?;
    let m = dir.join(MANIFEST);
    fs::write(&m, manifest_text(rows)).map_err(|e| Error::io(&m, e))
}

/// `<root>/train` with seeds `seed..seed+train` and `<root>/test` with the
/// following `test` seeds.
pub fn generate_dataset(root: &Path, train: usize, test: usize, seed: u64, template: &SceneSpec) -> Result<()> {
    let (s, r) = generate_split(seed, train, template)?;
    write_split(&root.join("train"), &s, &r)?;
    let (s, r) = generate_split(seed + train as u64, test, template)?;
    write_split(&root.join("test"), &s, &r)
}

/// One loaded sample: network input, target and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub color: Tensor,
    pub depth: Tensor,
    pub intrinsics: Intrinsics,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub examples: Vec<Example>,
    /// SHA-256 of `manifest.tsv`, hex.
    pub digest: String,
}

impl Split {
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let rows = parse_manifest(&text, &mpath)?;
        let examples = rows
            .par_iter()
            .map(|r| {
                let color = read_ppm(&dir.join(&r.color))?;
                let depth = read_pfm(&dir.join(&r.depth))?;
                let (cc, ch, cw) = color.dims3()?;
                let (dc, dh, dw) = depth.dims3()?;
                if cc != 3 || dc != 1 || (ch, cw) != (dh, dw) || (cw, ch) != (r.spec.width, r.spec.height) {
                    return Err(Error::Configuration(format!(
                        "sample {} in {} has inconsistent shapes",
                        r.index,
                        dir.display()
                    )));
                }
                Ok(Example {
                    color,
                    depth,
                    intrinsics: r.intrinsics,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dir: dir.to_owned(),
            rows,
            examples,
            digest: digest_hex(text.as_bytes()),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(height, width)` shared by all samples.
    pub fn resolution(&self) -> (usize, usize) {
        let s = self.examples[0].depth.shape();
        (s[1], s[2])
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests;

//! Checkpoint directory: `manifest.txt` plus one raw tensor file per
//! parameter.
//!
//! Manifest lines are `param <name> <d0>x<d1>... f32`, `channels <c>` and
//! `config <key> = <value>`.

use std::fs;
use std::path::Path;

use pgden_core::io::{load_image, save_image};
use pgden_core::{ImageTensor, SeededRng};

use crate::config::TrainConfig;
use crate::error::{TrainError, TrainResult};
use crate::layers::Param;
use crate::step::Nets;

pub const MANIFEST: &str = "manifest.txt";

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn all_params(nets: &Nets) -> Vec<(String, &Param)> {
    let mut out: Vec<(String, &Param)> = nets
        .denoiser
        .named_params()
        .into_iter()
        .map(|(n, p)| (format!("denoiser.{n}"), p))
        .collect();
    out.extend(
        nets.estimator
            .named_params()
            .into_iter()
            .map(|(n, p)| (format!("estimator.{n}"), p)),
    );
    out
}

pub fn save_checkpoint(dir: &Path, nets: &Nets, cfg: &TrainConfig) -> TrainResult<()> {
    let io = |path: &Path, e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut manifest = format!("channels {}\n", nets.denoiser.channels());
    for (name, p) in all_params(nets) {
        manifest.push_str(&format!("param {name} {} f32\n", shape_text(&p.shape)));
        let t = ImageTensor::new(1, p.len(), 1, p.value.clone())?;
        save_image(&t, dir.join(format!("{name}.pgt")), false)?;
    }
    for line in cfg.to_text().lines() {
        manifest.push_str(&format!("config {line}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| io(&path, e))
}

/// Rebuilds both networks and the configuration from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> TrainResult<(Nets, TrainConfig)> {
    let path = dir.join(MANIFEST);
    let bad = |reason: String| TrainError::Checkpoint {
        path: path.clone(),
        reason,
    };
    let text = fs::read_to_string(&path).map_err(|e| TrainError::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut channels = None;
    let mut params = Vec::new();
    let mut config = String::new();
    for line in text.lines() {
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some("channels"), Some(c)) => {
                channels = Some(c.trim().parse::<usize>().map_err(|_| bad(format!("bad channel count {c:?}")))?);
            }
            (Some("param"), Some(rest)) => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 || f[2] != "f32" {
                    return Err(bad(format!("malformed param line {line:?}")));
                }
                let shape = f[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape {:?}", f[1])))?;
                params.push((f[0].to_string(), shape));
            }
            (Some("config"), Some(kv)) => {
                config.push_str(kv);
                config.push('\n');
            }
            (Some(""), None) | (None, _) => {}
            _ => return Err(bad(format!("unrecognized line {line:?}"))),
        }
    }
    let channels = channels.ok_or_else(|| bad("missing channel count".into()))?;
    let cfg = TrainConfig::from_text(&config)?;
    let mut nets = Nets::new(channels, &cfg, &SeededRng::new(0));
    let expected: Vec<(String, Vec<usize>)> = all_params(&nets)
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone()))
        .collect();
    if expected != params {
        return Err(bad("parameter list does not match the network layout".into()));
    }
    let mut targets: Vec<&mut Param> = nets.denoiser.params_mut();
    targets.extend(nets.estimator.params_mut());
    for ((name, _), target) in params.iter().zip(targets) {
        let t = load_image(dir.join(format!("{name}.pgt")))?;
        if t.len() != target.len() {
            return Err(bad(format!("{name}: expected {} values, found {}", target.len(), t.len())));
        }
        target.value = t.into_vec();
    }
    Ok((nets, cfg))
}

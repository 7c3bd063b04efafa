//! `mgcnn-ckpt-v1` checkpoint files.
//!
//! ```text
//! mgcnn-ckpt-v1
//! config nodes=10 features=63 lookback=10 cheb_k=3 hidden1=32 hidden2=32 outputs=12 dropout_rate=0.35 horizon=5 lambda_max=power weight_transform=travel_time speed_floor=1
//! tensor layer1.theta 3 63 32
//! <values, row-major, one innermost row per line>
//! tensor layer2.theta 3 32 32
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelConfig, ModelParams};
use crate::spectral::{LambdaMax, SpectralConfig, WeightTransform};

pub const CHECKPOINT_VERSION: &str = "mgcnn-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nodes: usize,
    pub horizon: usize,
    pub spectral: SpectralConfig,
    pub speed_floor_mph: f64,
    pub params: ModelParams,
}

fn lambda_to_str(l: &LambdaMax) -> String {
    match l {
        LambdaMax::PowerIteration { tol, max_iter } => format!("power:{tol}:{max_iter}"),
        LambdaMax::Fixed { value } => format!("fixed:{value}"),
    }
}

fn lambda_from_str(s: &str) -> Result<LambdaMax> {
    if let Some(rest) = s.strip_prefix("power:") {
        let mut it = rest.split(':');
        let tol = it.next().and_then(|v| v.parse().ok());
        let max_iter = it.next().and_then(|v| v.parse().ok());
        return match (tol, max_iter) {
            (Some(tol), Some(max_iter)) => Ok(LambdaMax::PowerIteration { tol, max_iter }),
            _ => Err(Error::Checkpoint(format!("bad lambda_max {s:?}"))),
        };
    }
    s.parse()
}

fn write_tensor(out: &mut String, name: &str, shape: &[usize], data: &[f64]) {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
    let row = *shape.last().unwrap_or(&1);
    for chunk in data.chunks(row.max(1)) {
        let vals: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let cfg = self.params.config();
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_VERSION}");
        let wt = match self.spectral.weight_transform {
            WeightTransform::TravelTime => "travel_time",
            WeightTransform::Inverse => "inverse",
        };
        let _ = writeln!(
            out,
            "config nodes={} features={} lookback={} cheb_k={} hidden1={} hidden2={} outputs={} dropout_rate={:?} horizon={} lambda_max={} weight_transform={} speed_floor={:?}",
            self.nodes,
            cfg.features,
            cfg.lookback,
            cfg.cheb_k,
            cfg.hidden1,
            cfg.hidden2,
            cfg.outputs,
            cfg.dropout_rate,
            self.horizon,
            lambda_to_str(&self.spectral.lambda_max),
            wt,
            self.speed_floor_mph,
        );
        let p = &self.params;
        let t = p.tensors();
        write_tensor(&mut out, "layer1.theta", p.layer1.theta.shape(), t[0]);
        write_tensor(&mut out, "layer2.theta", p.layer2.theta.shape(), t[1]);
        write_tensor(&mut out, "temporal", p.temporal.shape(), t[2]);
        write_tensor(&mut out, "dense.weight", p.dense_w.shape(), t[3]);
        write_tensor(&mut out, "dense.bias", p.dense_b.shape(), t[4]);
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        match lines.next() {
            Some(v) if v.trim() == CHECKPOINT_VERSION => {}
            other => return Err(bad(format!("expected version {CHECKPOINT_VERSION}, found {other:?}"))),
        }
        let config_line = lines.next().ok_or_else(|| bad("missing config line".into()))?;
        let fields: BTreeMap<&str, &str> = config_line
            .strip_prefix("config ")
            .ok_or_else(|| bad("missing config line".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("config lacks {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("config {k} is not an integer")))
        };
        let cfg = ModelConfig {
            features: num("features")?,
            lookback: num("lookback")?,
            cheb_k: num("cheb_k")?,
            hidden1: num("hidden1")?,
            hidden2: num("hidden2")?,
            outputs: num("outputs")?,
            dropout_rate: get("dropout_rate")?
                .parse()
                .map_err(|_| bad("bad dropout_rate".into()))?,
        };
        cfg.validate()?;
        let nodes = num("nodes")?;
        let horizon = num("horizon")?;
        let spectral = SpectralConfig {
            lambda_max: lambda_from_str(get("lambda_max")?)?,
            weight_transform: get("weight_transform")?.parse()?,
        };
        let speed_floor_mph: f64 = get("speed_floor")?
            .parse()
            .map_err(|_| bad("bad speed_floor".into()))?;

        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        let mut current: Option<(String, Vec<usize>, Vec<f64>)> = None;
        let mut ended = false;
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "end" || line.starts_with("tensor ") {
                if let Some((name, shape, data)) = current.take() {
                    tensors.insert(name, (shape, data));
                }
                if line == "end" {
                    ended = true;
                    break;
                }
                let mut parts = line.split_whitespace().skip(1);
                let name = parts.next().ok_or_else(|| bad("tensor without a name".into()))?;
                let shape = parts
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape for {name}"))))
                    .collect::<Result<Vec<_>>>()?;
                current = Some((name.to_owned(), shape, Vec::new()));
                continue;
            }
            let (_, _, data) = current.as_mut().ok_or_else(|| bad("values before any tensor header".into()))?;
            for tok in line.split_whitespace() {
                data.push(tok.parse().map_err(|_| bad(format!("bad value {tok:?}")))?);
            }
        }
        if !ended {
            return Err(bad("truncated checkpoint (no `end` marker)".into()));
        }

        let mut take = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
            let (s, data) = tensors.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if s != shape {
                return Err(bad(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
            }
            if data.len() != shape.iter().product::<usize>() {
                return Err(bad(format!("tensor {name} has {} values for shape {shape:?}", data.len())));
            }
            Ok(data)
        };
        let (k, f, c1, c2, m, s) = (cfg.cheb_k, cfg.features, cfg.hidden1, cfg.hidden2, cfg.lookback, cfg.outputs);
        let shape_err = |e: ndarray::ShapeError| Error::Invariant(e.to_string());
        let params = ModelParams {
            layer1: LayerParams {
                theta: Array3::from_shape_vec((k, f, c1), take("layer1.theta", vec![k, f, c1])?).map_err(shape_err)?,
            },
            layer2: LayerParams {
                theta: Array3::from_shape_vec((k, c1, c2), take("layer2.theta", vec![k, c1, c2])?).map_err(shape_err)?,
            },
            temporal: Array2::from_shape_vec((c2, m), take("temporal", vec![c2, m])?).map_err(shape_err)?,
            dense_w: Array2::from_shape_vec((c2, s), take("dense.weight", vec![c2, s])?).map_err(shape_err)?,
            dense_b: Array1::from_vec(take("dense.bias", vec![s])?),
            dropout_rate: cfg.dropout_rate,
        };
        params.validate()?;
        Ok(Self {
            nodes,
            horizon,
            spectral,
            speed_floor_mph,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            hidden1: 5,
            hidden2: 4,
            ..ModelConfig::new(7, 3)
        };
        let mut params = ModelParams::init(&cfg, 17).unwrap();
        params.dense_b[3] = -1.0e-300;
        params.dense_b[4] = 1.0 / 3.0;
        Checkpoint {
            nodes: 4,
            horizon: 5,
            spectral: SpectralConfig::default(),
            speed_floor_mph: 1.0,
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let text = ck.to_text();
        assert!(text.starts_with("mgcnn-ckpt-v1\nconfig nodes=4 features=7 lookback=3 cheb_k=3"));
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn fixed_lambda_and_inverse_weights_survive() {
        let mut ck = sample();
        ck.spectral = SpectralConfig {
            lambda_max: LambdaMax::Fixed { value: 2.0 },
            weight_transform: WeightTransform::Inverse,
        };
        assert_eq!(Checkpoint::from_text(&ck.to_text()).unwrap(), ck);
    }

    #[test]
    fn rejects_corrupt_files() {
        let text = sample().to_text();
        assert!(Checkpoint::from_text(&text.replace("mgcnn-ckpt-v1", "mgcnn-ckpt-v0")).is_err());
        assert!(Checkpoint::from_text(&text.replace("\nend\n", "\n")).is_err());
        assert!(Checkpoint::from_text(&text.replace("tensor temporal 4 3", "tensor temporal 3 4")).is_err());
        let truncated: String = text.lines().filter(|l| !l.starts_with("tensor dense.bias")).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&truncated).is_err());
    }
}

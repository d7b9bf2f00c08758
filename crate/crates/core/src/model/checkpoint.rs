//! Versioned text checkpoint.
//!
//! ```text
//! mtl-mos checkpoint 1
//! model: multi,split
//! input_dim: 8
//! trunk: 32,32
//! split_index: 1
//! branch: 16
//! tasks: MOS,T60,C50
//! seed: 42
//! epoch: 30
//! parameters: 2385
//! trunk.0.weight 256
//! <values separated by spaces>
//! trunk.0.bias 32
//! ...
//! branch.MOS.0.weight 512
//! ...
//! ```
//!
//! Tensors follow the flat parameter layout: trunk layers, then each task's
//! branch layers (head last) in task order, weight before bias. Values use
//! the shortest decimal that parses back to the same double.

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, LayerShape, ModelParams};
use crate::dataset::TaskId;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "mtl-mos checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub seed: u64,
    pub epoch: usize,
    pub params: ModelParams,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn tensors(p: &ModelParams) -> Vec<(String, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut push = |prefix: String, l: &LayerShape| {
        out.push((format!("{prefix}.weight"), l.weights()));
        out.push((format!("{prefix}.bias"), l.bias()));
    };
    for (i, l) in p.layout().trunk.iter().enumerate() {
        push(format!("trunk.{i}"), l);
    }
    for (t, layers) in p.layout().branches.iter().enumerate() {
        for (i, l) in layers.iter().enumerate() {
            push(format!("branch.{}.{i}", p.tasks()[t]), l);
        }
    }
    out
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let a = self.params.architecture();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(s, "input_dim: {}", a.input_dim);
        let _ = writeln!(s, "trunk: {}", join(&a.trunk_layers));
        let _ = writeln!(s, "split_index: {}", a.split_index);
        let _ = writeln!(s, "branch: {}", join(&a.branch_layers));
        let _ = writeln!(s, "tasks: {}", join(&a.tasks));
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "epoch: {}", self.epoch);
        let _ = writeln!(s, "parameters: {}", self.params.len());
        for (name, range) in tensors(&self.params) {
            let _ = writeln!(s, "{name} {}", range.len());
            let vals: Vec<String> = self.params.values()[range]
                .iter()
                .map(|v| format!("{v:?}"))
                .collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
        };
        let (_, magic) = next("header")?;
        let version = magic
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Checkpoint("not a checkpoint file".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut field = |key: &str| -> Result<String> {
            let (line, l) = next(key)?;
            let (k, v) = l
                .split_once(':')
                .ok_or_else(|| Error::Checkpoint(format!("line {line}: expected '{key}: ...'")))?;
            if k.trim() != key {
                return Err(Error::Checkpoint(format!(
                    "line {line}: expected field '{key}', found '{}'",
                    k.trim()
                )));
            }
            Ok(v.trim().to_string())
        };
        let bad = |key: &str| Error::Checkpoint(format!("invalid value for '{key}'"));
        let widths = |v: &str, key: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|w| w.trim().parse().map_err(|_| bad(key))).collect()
        };
        let model = field("model")?;
        let input_dim = field("input_dim")?.parse().map_err(|_| bad("input_dim"))?;
        let trunk_layers = widths(&field("trunk")?, "trunk")?;
        let split_index = field("split_index")?.parse().map_err(|_| bad("split_index"))?;
        let branch_layers = widths(&field("branch")?, "branch")?;
        let tasks = field("tasks")?
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<TaskId>>>()?;
        let seed = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let epoch = field("epoch")?.parse().map_err(|_| bad("epoch"))?;
        let count: usize = field("parameters")?.parse().map_err(|_| bad("parameters"))?;
        let arch = Architecture {
            input_dim,
            trunk_layers,
            split_index,
            branch_layers,
            tasks,
        };
        arch.validate()?;
        let skeleton = ModelParams::from_values(&arch, vec![0.0; arch.parameter_count()])?;
        if count != skeleton.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                skeleton.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (name, range) in tensors(&skeleton) {
            let (line, head) = next(&name)?;
            let expected = format!("{name} {}", range.len());
            if head.trim() != expected {
                return Err(Error::Checkpoint(format!(
                    "line {line}: expected '{expected}', found '{head}'"
                )));
            }
            let (line, body) = next(&name)?;
            let before = values.len();
            for tok in body.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("line {line}: invalid value '{tok}'")))?;
                values.push(v);
            }
            if values.len() - before != range.len() {
                return Err(Error::Checkpoint(format!(
                    "line {line}: expected {} values for {name}",
                    range.len()
                )));
            }
        }
        let params = ModelParams::from_values(&arch, values)?;
        Ok(Self {
            model,
            seed,
            epoch,
            params,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}

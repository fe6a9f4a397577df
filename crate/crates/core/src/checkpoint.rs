//! Plain-text checkpoints. Floats are written in shortest round-trip form,
//! one per line, so a save/load cycle is bit-exact.
//!
//! ```text
//! pinode-checkpoint 1
//! model k1
//! network 4 128,128 1 relu
//! network 4 128,128 1 relu
//! parameters 33794
//! <one value per line>
//! mu 0.0057665
//! multipliers 1
//! lambda 2000 4
//! <one value per line>
//! ```
//!
//! The `mu` and multiplier blocks are present only for constrained runs.

use std::fs;
use std::path::Path;

use crate::autodiff::Matrix;
use crate::constraints::MultiplierState;
use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParameterSet};
use crate::vectorfield::ModelKind;

const MAGIC: &str = "pinode-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub params: ParameterSet,
    pub multipliers: Option<MultiplierState>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("model {}\n", self.model));
        for spec in self.params.specs() {
            let hidden: Vec<String> = spec.hidden.iter().map(usize::to_string).collect();
            let hidden = if hidden.is_empty() {
                "-".to_string()
            } else {
                hidden.join(",")
            };
            let act = match spec.activation {
                Activation::Relu => "relu",
            };
            out.push_str(&format!(
                "network {} {hidden} {} {act}\n",
                spec.input, spec.output
            ));
        }
        let flat = self.params.to_flat();
        out.push_str(&format!("parameters {}\n", flat.len()));
        push_values(&mut out, &flat);
        if let Some(m) = &self.multipliers {
            out.push_str(&format!("mu {}\n", m.mu));
            out.push_str(&format!("multipliers {}\n", m.lambdas.len()));
            for l in &m.lambdas {
                out.push_str(&format!("lambda {} {}\n", l.rows(), l.cols()));
                push_values(&mut out, l.as_slice());
            }
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| format!("unexpected end of file, expected {what}"))
        };

        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(format!("not a checkpoint (header `{magic}`)"));
        }
        let (n, line) = next("model line")?;
        let model = line
            .strip_prefix("model ")
            .and_then(ModelKind::parse)
            .ok_or_else(|| format!("line {n}: bad model line `{line}`"))?;

        let mut specs = Vec::new();
        let (mut n, mut line) = next("parameters line")?;
        while let Some(rest) = line.strip_prefix("network ") {
            specs.push(parse_spec(rest).map_err(|e| format!("line {n}: {e}"))?);
            (n, line) = next("parameters line")?;
        }
        let count = keyword_usize(line, "parameters")
            .ok_or_else(|| format!("line {n}: expected `parameters <count>`"))?;
        let flat = read_values(&mut next, count)?;
        let params = ParameterSet::from_flat(&specs, &flat).map_err(|e| e.to_string())?;

        let multipliers = match lines_next_nonempty(&mut next)? {
            None => None,
            Some((n, line)) => {
                let mu = line
                    .strip_prefix("mu ")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| format!("line {n}: expected `mu <value>`"))?;
                let (n, line) = next("multipliers line")?;
                let groups = keyword_usize(line, "multipliers")
                    .ok_or_else(|| format!("line {n}: expected `multipliers <count>`"))?;
                let mut lambdas = Vec::with_capacity(groups);
                for _ in 0..groups {
                    let (n, line) = next("lambda line")?;
                    let dims: Vec<usize> = line
                        .strip_prefix("lambda ")
                        .map(|r| {
                            r.split_whitespace()
                                .filter_map(|t| t.parse().ok())
                                .collect()
                        })
                        .unwrap_or_default();
                    if dims.len() != 2 {
                        return Err(format!("line {n}: expected `lambda <rows> <cols>`"));
                    }
                    let values = read_values(&mut next, dims[0] * dims[1])?;
                    lambdas.push(Matrix::from_vec(dims[0], dims[1], values));
                }
                Some(MultiplierState { lambdas, mu })
            }
        };
        if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(format!("line {n}: unexpected trailing content `{extra}`"));
        }
        Ok(Self {
            model,
            params,
            multipliers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            message,
        })
    }
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
}

fn keyword_usize(line: &str, keyword: &str) -> Option<usize> {
    line.strip_prefix(keyword)?.trim().parse().ok()
}

fn lines_next_nonempty<'a>(
    next: &mut impl FnMut(&str) -> std::result::Result<(usize, &'a str), String>,
) -> std::result::Result<Option<(usize, &'a str)>, String> {
    loop {
        match next("") {
            Err(_) => return Ok(None),
            Ok((_, "")) => continue,
            Ok(found) => return Ok(Some(found)),
        }
    }
}

fn read_values<'a>(
    next: &mut impl FnMut(&str) -> std::result::Result<(usize, &'a str), String>,
    count: usize,
) -> std::result::Result<Vec<f64>, String> {
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("parameter value")?;
        values.push(
            line.parse::<f64>()
                .map_err(|e| format!("line {n}: `{line}`: {e}"))?,
        );
    }
    Ok(values)
}

fn parse_spec(rest: &str) -> std::result::Result<MlpSpec, String> {
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(format!(
            "expected `network <in> <hidden> <out> <activation>`, got `{rest}`"
        ));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    let hidden = if parts[1] == "-" {
        Vec::new()
    } else {
        parts[1]
            .split(',')
            .map(num)
            .collect::<std::result::Result<_, _>>()?
    };
    if parts[3] != "relu" {
        return Err(format!("unknown activation `{}`", parts[3]));
    }
    Ok(MlpSpec::relu(num(parts[0])?, &hidden, num(parts[2])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_multipliers: bool) -> Checkpoint {
        let specs = ModelKind::K1.pendulum_specs(8);
        Checkpoint {
            model: ModelKind::K1,
            params: ParameterSet::init(&specs, 3).unwrap(),
            multipliers: with_multipliers.then(|| MultiplierState {
                lambdas: vec![Matrix::from_vec(2, 2, vec![0.1, -1e-300, 1.0 / 3.0, 0.0])],
                mu: 1e-3 * 1.5f64.powi(7),
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with in [false, true] {
            let ckpt = sample(with);
            let back = Checkpoint::parse(&ckpt.to_text()).unwrap();
            assert_eq!(back, ckpt);
            let a: Vec<u64> = ckpt.params.to_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.to_flat().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn affine_networks_round_trip() {
        let ckpt = Checkpoint {
            model: ModelKind::Baseline,
            params: ParameterSet::init(&[MlpSpec::relu(1, &[], 1)], 0).unwrap(),
            multipliers: None,
        };
        assert_eq!(Checkpoint::parse(&ckpt.to_text()).unwrap(), ckpt);
    }

    #[test]
    fn corruption_is_reported() {
        let text = sample(true).to_text();
        assert!(Checkpoint::parse("garbage\n").is_err());
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(&truncated)
            .unwrap_err()
            .contains("end of file"));
        let mangled = text.replacen("\n0.", "\nzero.", 1);
        assert!(Checkpoint::parse(&mangled)
            .unwrap_err()
            .starts_with("line "));
        let extra = format!("{text}surprise\n");
        assert!(Checkpoint::parse(&extra).is_err());
    }
}

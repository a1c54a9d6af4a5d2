//! Search space over pyramidal-convolution candidates, the learnable mixing
//! logits, and derivation of a discrete architecture from them.

use std::fmt;
use std::str::FromStr;

use crate::arch::spec::{ArchitectureSpec, BlockSpec, Dims, FilterSpec, Pooling, PyConvSpec, NUM_BLOCKS};
use crate::error::{spec_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCandidates {
    pub conv: Vec<PyConvSpec>,
    pub pool: Vec<Pooling>,
}

impl BlockCandidates {
    pub fn out_channels(&self) -> usize {
        self.conv[0].out_channels()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSpace {
    pub blocks: Vec<BlockCandidates>,
    pub input_channels: usize,
    pub dims: Dims,
}

impl CandidateSpace {
    /// Four blocks of two-level pyramids. The first level is fixed per
    /// block (11/9/5/3); the second level varies kernel and groups:
    ///
    /// | block | second level candidates (kernel, groups)               | out |
    /// |-------|--------------------------------------------------------|-----|
    /// | 1     | 7, 5, 3, 1 (groups 1)                                  | 32  |
    /// | 2     | 5, 3, 1 × groups 1, 2, 4                               | 64  |
    /// | 3     | 3, 1 × groups 1, 2, 4                                  | 128 |
    /// | 4     | 1 × groups 1, 2, 4                                     | 256 |
    ///
    /// Both levels of every candidate carry half the block's output
    /// channels.
    pub fn standard() -> Self {
        let pyramid = |first: usize, c: usize, second: &[(usize, usize)]| -> Vec<PyConvSpec> {
            second
                .iter()
                .map(|&(k, g)| PyConvSpec::new(vec![FilterSpec::new(first, c, 1), FilterSpec::new(k, c, g)]))
                .collect()
        };
        let grid = |kernels: &[usize]| -> Vec<(usize, usize)> {
            kernels.iter().flat_map(|&k| [1, 2, 4].map(|g| (k, g))).collect()
        };
        let conv = vec![
            pyramid(11, 16, &[(7, 1), (5, 1), (3, 1), (1, 1)]),
            pyramid(9, 32, &grid(&[5, 3, 1])),
            pyramid(5, 64, &grid(&[3, 1])),
            pyramid(3, 128, &grid(&[1])),
        ];
        CandidateSpace {
            blocks: conv
                .into_iter()
                .map(|conv| BlockCandidates {
                    conv,
                    pool: Pooling::ALL.to_vec(),
                })
                .collect(),
            input_channels: 3,
            dims: Dims::Two,
        }
    }

    /// The same candidates with cubic kernels and 3D pooling.
    pub fn extend_to_3d(&self) -> Result<Self> {
        if self.dims == Dims::Three {
            return Err(spec_err("search space is already 3d"));
        }
        Ok(CandidateSpace {
            dims: Dims::Three,
            ..self.clone()
        })
    }

    pub fn conv_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.conv.len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != NUM_BLOCKS {
            return Err(spec_err(format!("search space needs {NUM_BLOCKS} blocks")));
        }
        let mut cin = self.input_channels;
        for (b, block) in self.blocks.iter().enumerate() {
            if block.conv.is_empty() || block.pool.is_empty() {
                return Err(spec_err(format!("block{} has no candidates", b + 1)));
            }
            let out = block.out_channels();
            for cand in &block.conv {
                cand.validate(cin)?;
                if cand.out_channels() != out {
                    return Err(spec_err(format!(
                        "block{} candidates disagree on output channels ({} vs {out})",
                        b + 1,
                        cand.out_channels()
                    )));
                }
            }
            cin = out;
        }
        Ok(())
    }

    /// The discrete network picked by `choice`.
    pub fn instantiate(&self, choice: &Choice, num_classes: usize) -> Result<ArchitectureSpec> {
        if choice.conv.len() != self.blocks.len() || choice.pool.len() != self.blocks.len() {
            return Err(spec_err("choice does not cover every block"));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(choice.conv.iter().zip(&choice.pool))
            .map(|(cands, (&c, &p))| {
                Ok(BlockSpec {
                    pyconv: cands.conv.get(c).ok_or_else(|| spec_err(format!("no conv candidate {}", c + 1)))?.clone(),
                    pooling: *cands.pool.get(p).ok_or_else(|| spec_err(format!("no pool candidate {}", p + 1)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let arch = ArchitectureSpec {
            blocks,
            num_classes,
            input_channels: self.input_channels,
            dims: self.dims,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Selected candidate indices (0-based) per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Choice {
    pub conv: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Unnormalized selection logits: one per conv candidate (`alpha`) and one
/// per pooling candidate (`beta`) in each block.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub alpha: Vec<Vec<f32>>,
    pub beta: Vec<Vec<f32>>,
}

impl MixWeights {
    /// All logits equal to 1.
    pub fn uniform(space: &CandidateSpace) -> Self {
        MixWeights {
            alpha: space.blocks.iter().map(|b| vec![1.0; b.conv.len()]).collect(),
            beta: space.blocks.iter().map(|b| vec![1.0; b.pool.len()]).collect(),
        }
    }

    /// Logits whose softmax reproduces the given probabilities.
    pub fn from_probabilities(alpha: Vec<Vec<f32>>, beta: Vec<Vec<f32>>) -> Result<Self> {
        let logs = |rows: Vec<Vec<f32>>| -> Result<Vec<Vec<f32>>> {
            rows.into_iter()
                .map(|r| {
                    if r.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                        return Err(spec_err(format!("probabilities must be finite and non-negative: {r:?}")));
                    }
                    Ok(r.into_iter().map(f32::ln).collect())
                })
                .collect()
        };
        Ok(MixWeights {
            alpha: logs(alpha)?,
            beta: logs(beta)?,
        })
    }

    pub fn alpha_probabilities(&self) -> Vec<Vec<f32>> {
        self.alpha.iter().map(|r| softmax(r)).collect()
    }

    pub fn beta_probabilities(&self) -> Vec<Vec<f32>> {
        self.beta.iter().map(|r| softmax(r)).collect()
    }

    pub fn matches(&self, space: &CandidateSpace) -> bool {
        self.alpha.len() == space.blocks.len()
            && self.beta.len() == space.blocks.len()
            && space
                .blocks
                .iter()
                .zip(self.alpha.iter().zip(&self.beta))
                .all(|(b, (a, p))| a.len() == b.conv.len() && p.len() == b.pool.len())
    }

    /// Highest-probability candidate per block; ties go to the lowest
    /// index. Logits are compared directly since softmax preserves order.
    pub fn choice(&self) -> Result<Choice> {
        let pick = |rows: &[Vec<f32>]| -> Result<Vec<usize>> {
            rows.iter()
                .map(|r| {
                    if r.iter().any(|v| v.is_nan()) {
                        return Err(spec_err("mixing weights contain NaN"));
                    }
                    let mut best = 0;
                    for (i, &v) in r.iter().enumerate() {
                        if v > r[best] {
                            best = i;
                        }
                    }
                    Ok(best)
                })
                .collect()
        };
        Ok(Choice {
            conv: pick(&self.alpha)?,
            pool: pick(&self.beta)?,
        })
    }
}

fn softmax(row: &[f32]) -> Vec<f32> {
    let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f64> = row.iter().map(|&v| ((v - m) as f64).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| (v / z) as f32).collect()
}

/// Keeps the most probable conv and pooling candidate of every block.
pub fn derive_architecture(space: &CandidateSpace, weights: &MixWeights, num_classes: usize) -> Result<(ArchitectureSpec, Choice)> {
    if !weights.matches(space) {
        return Err(spec_err("mixing weights do not match the search space"));
    }
    let choice = weights.choice()?;
    Ok((space.instantiate(&choice, num_classes)?, choice))
}

/// Text form, one row per block and group:
///
/// ```text
/// kind: probabilities        # or `logits`
/// block1.conv: 0.228 0.246 0.264 0.262
/// block1.pool: 0.322 0.678
/// ...
/// ```
///
/// Printing always emits logits.
impl fmt::Display for MixWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind: logits")?;
        for (b, (a, p)) in self.alpha.iter().zip(&self.beta).enumerate() {
            let row = |v: &[f32]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            writeln!(f, "block{}.conv: {}", b + 1, row(a))?;
            writeln!(f, "block{}.pool: {}", b + 1, row(p))?;
        }
        Ok(())
    }
}

impl FromStr for MixWeights {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut probabilities = None;
        let mut alpha: Vec<Option<Vec<f32>>> = vec![None; NUM_BLOCKS];
        let mut beta: Vec<Option<Vec<f32>>> = vec![None; NUM_BLOCKS];
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| err(format!("expected `key: value`, got {line:?}")))?;
            let key = key.trim();
            if key == "kind" {
                probabilities = Some(match value.trim() {
                    "probabilities" => true,
                    "logits" => false,
                    other => return Err(err(format!("unknown kind {other:?}"))),
                });
                continue;
            }
            let (block, group) = key.split_once('.').ok_or_else(|| err(format!("unknown key {key:?}")))?;
            let b = block
                .strip_prefix("block")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| (1..=NUM_BLOCKS).contains(n))
                .ok_or_else(|| err(format!("unknown block {block:?}")))?;
            let values = value
                .split_whitespace()
                .map(|v| v.parse::<f32>().map_err(|_| err(format!("bad number {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(err(format!("{key} has no values")));
            }
            let slot = match group {
                "conv" => &mut alpha[b - 1],
                "pool" => &mut beta[b - 1],
                other => return Err(err(format!("unknown group {other:?} (expected conv or pool)"))),
            };
            *slot = Some(values);
        }
        let missing = |what: String| Error::Parse {
            line: text.lines().count(),
            msg: format!("missing `{what}`"),
        };
        let collect = |rows: Vec<Option<Vec<f32>>>, group: &str| -> Result<Vec<Vec<f32>>> {
            rows.into_iter()
                .enumerate()
                .map(|(b, r)| r.ok_or_else(|| missing(format!("block{}.{group}", b + 1))))
                .collect()
        };
        let (alpha, beta) = (collect(alpha, "conv")?, collect(beta, "pool")?);
        match probabilities.ok_or_else(|| missing("kind".into()))? {
            true => MixWeights::from_probabilities(alpha, beta),
            false => Ok(MixWeights { alpha, beta }),
        }
    }
}

//! Declarative description of four-block pyramidal-convolution networks and
//! their line-oriented text form.
//!
//! ```text
//! # comments and blank lines are ignored
//! dims: 2d
//! input_channels: 3
//! classes: 10
//! block1: pyconv[(11,16,1),(3,16,1)] pool=max
//! block2: pyconv[(9,32,1),(5,32,1)] pool=max
//! block3: pyconv[(5,64,1),(3,64,1)] pool=max
//! block4: pyconv[(3,128,1),(1,128,1)] pool=max
//! ```
//!
//! Each level is `(kernel, out_channels, groups)`. The kernel is the edge
//! length θ; in a `3d` spec it denotes a θ×θ×θ cube.

use std::fmt;
use std::str::FromStr;

use crate::error::{spec_err, Error, Result};

/// Number of convolutional blocks in every student.
pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    pub fn spatial_rank(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dims::Two => "2d",
            Dims::Three => "3d",
        })
    }
}

impl FromStr for Dims {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "2d" | "2D" => Ok(Dims::Two),
            "3d" | "3D" => Ok(Dims::Three),
            other => Err(format!("unknown dimensionality {other:?} (expected 2d or 3d)")),
        }
    }
}

/// One level of a pyramidal convolution: `out_channels` filters of edge
/// `kernel`, split into `groups` channel groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub groups: usize,
}

impl FilterSpec {
    pub const fn new(kernel: usize, out_channels: usize, groups: usize) -> Self {
        FilterSpec {
            kernel,
            out_channels,
            groups,
        }
    }

    /// Same-size padding for stride 1.
    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Weight count for `in_channels` inputs; there is no bias.
    pub fn weight_count(&self, in_channels: usize, dims: Dims) -> u64 {
        (self.kernel as u64).pow(dims.spatial_rank() as u32) * (in_channels / self.groups) as u64 * self.out_channels as u64
    }

    pub fn validate(&self, in_channels: usize) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(spec_err(format!("kernel {} must be odd and positive", self.kernel)));
        }
        if self.out_channels == 0 || self.groups == 0 {
            return Err(spec_err(format!("level {self} has a zero extent")));
        }
        if in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(spec_err(format!(
                "groups {} must divide both {in_channels} input and {} output channels",
                self.groups, self.out_channels
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.kernel, self.out_channels, self.groups)
    }
}

/// Parallel filter levels applied to one input, concatenated on channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PyConvSpec {
    pub levels: Vec<FilterSpec>,
}

impl PyConvSpec {
    pub fn new(levels: Vec<FilterSpec>) -> Self {
        PyConvSpec { levels }
    }

    pub fn out_channels(&self) -> usize {
        self.levels.iter().map(|l| l.out_channels).sum()
    }

    pub fn validate(&self, in_channels: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(spec_err("a pyramidal convolution needs at least one level"));
        }
        self.levels.iter().try_for_each(|l| l.validate(in_channels))
    }
}

impl fmt::Display for PyConvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("pyconv[")?;
        for (i, l) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("]")
    }
}

/// Down-sampling at the end of a block: 2×2 (or 2×2×2) window, stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    Average,
    Max,
}

impl Pooling {
    /// Candidate order used by the search space.
    pub const ALL: [Pooling; 2] = [Pooling::Average, Pooling::Max];
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Average => "avg",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "avg" | "average" => Ok(Pooling::Average),
            "max" => Ok(Pooling::Max),
            other => Err(format!("unknown pooling {other:?} (expected avg or max)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub pyconv: PyConvSpec,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    pub blocks: Vec<BlockSpec>,
    pub num_classes: usize,
    pub input_channels: usize,
    pub dims: Dims,
}

impl ArchitectureSpec {
    /// The searched student: the large first-level kernels shrink block by
    /// block (11/9/5/3) beside a small second level, max pooling throughout.
    pub fn reference_student(num_classes: usize) -> Self {
        let block = |levels: [(usize, usize, usize); 2]| BlockSpec {
            pyconv: PyConvSpec::new(levels.iter().map(|&(k, c, g)| FilterSpec::new(k, c, g)).collect()),
            pooling: Pooling::Max,
        };
        ArchitectureSpec {
            blocks: vec![
                block([(11, 16, 1), (3, 16, 1)]),
                block([(9, 32, 1), (5, 32, 1)]),
                block([(5, 64, 1), (3, 64, 1)]),
                block([(3, 128, 1), (1, 128, 1)]),
            ],
            num_classes,
            input_channels: 3,
            dims: Dims::Two,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != NUM_BLOCKS {
            return Err(spec_err(format!("expected {NUM_BLOCKS} blocks, got {}", self.blocks.len())));
        }
        if self.num_classes == 0 || self.input_channels == 0 {
            return Err(spec_err("classes and input channels must be positive"));
        }
        let mut cin = self.input_channels;
        for (b, block) in self.blocks.iter().enumerate() {
            block
                .pyconv
                .validate(cin)
                .map_err(|e| spec_err(format!("block{}: {}", b + 1, strip(&e))))?;
            cin = block.pyconv.out_channels();
        }
        Ok(())
    }

    /// Input channel count of block `b` (0-based).
    pub fn block_in_channels(&self, b: usize) -> usize {
        if b == 0 {
            self.input_channels
        } else {
            self.blocks[b - 1].pyconv.out_channels()
        }
    }

    /// Channels entering the classifier head.
    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map_or(self.input_channels, |b| b.pyconv.out_channels())
    }

    /// Replaces every θ×θ kernel by a θ×θ×θ cube and 2D pooling by 3D
    /// pooling; channels, groups and topology are unchanged.
    pub fn extend_to_3d(&self) -> Result<Self> {
        if self.dims == Dims::Three {
            return Err(spec_err("architecture is already 3d"));
        }
        Ok(ArchitectureSpec {
            dims: Dims::Three,
            ..self.clone()
        })
    }

    /// Pixels per side must survive four halvings.
    pub fn check_input_extent(&self, extents: &[usize]) -> Result<()> {
        let factor = 1 << NUM_BLOCKS;
        if extents.len() != self.dims.spatial_rank() {
            return Err(spec_err(format!("{} network cannot take spatial extents {extents:?}", self.dims)));
        }
        if let Some(bad) = extents.iter().find(|&&e| e == 0 || e % factor != 0) {
            return Err(spec_err(format!("spatial extent {bad} is not a positive multiple of {factor}")));
        }
        Ok(())
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::InvalidSpec(m) => m.clone(),
        other => other.to_string(),
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dims: {}", self.dims)?;
        writeln!(f, "input_channels: {}", self.input_channels)?;
        writeln!(f, "classes: {}", self.num_classes)?;
        for (b, block) in self.blocks.iter().enumerate() {
            writeln!(f, "block{}: {} pool={}", b + 1, block.pyconv, block.pooling)?;
        }
        Ok(())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut input_channels = None;
        let mut classes = None;
        let mut blocks: Vec<Option<BlockSpec>> = vec![None; NUM_BLOCKS];
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| err(format!("expected `key: value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dims" => dims = Some(value.parse::<Dims>().map_err(err)?),
                "input_channels" => input_channels = Some(parse_count(value).map_err(err)?),
                "classes" => classes = Some(parse_count(value).map_err(err)?),
                _ => {
                    let idx = key
                        .strip_prefix("block")
                        .and_then(|n| n.parse::<usize>().ok())
                        .filter(|n| (1..=NUM_BLOCKS).contains(n))
                        .ok_or_else(|| err(format!("unknown key {key:?}")))?;
                    if blocks[idx - 1].is_some() {
                        return Err(err(format!("{key} given twice")));
                    }
                    blocks[idx - 1] = Some(parse_block(value).map_err(err)?);
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            line: text.lines().count(),
            msg: format!("missing `{what}`"),
        };
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or_else(|| missing(&format!("block{}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let spec = ArchitectureSpec {
            blocks,
            num_classes: classes.ok_or_else(|| missing("classes"))?,
            input_channels: input_channels.ok_or_else(|| missing("input_channels"))?,
            dims: dims.ok_or_else(|| missing("dims"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_count(s: &str) -> std::result::Result<usize, String> {
    s.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| format!("expected a positive integer, got {s:?}"))
}

/// Parses `pyconv[(k,c,g),...] pool=avg|max`.
fn parse_block(s: &str) -> std::result::Result<BlockSpec, String> {
    let rest = s
        .strip_prefix("pyconv[")
        .ok_or_else(|| format!("expected `pyconv[...]`, got {s:?}"))?;
    let (levels_text, tail) = rest.split_once(']').ok_or("unterminated `pyconv[`")?;
    let mut levels = Vec::new();
    for part in levels_text.split(')') {
        let part = part.trim().trim_start_matches(',').trim();
        if part.is_empty() {
            continue;
        }
        let inner = part.strip_prefix('(').ok_or_else(|| format!("expected `(k,c,g)`, got {part:?}"))?;
        let nums: Vec<usize> = inner
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|_| format!("bad number {v:?} in level")))
            .collect::<std::result::Result<_, _>>()?;
        let [kernel, out_channels, groups] = nums[..] else {
            return Err(format!("level ({inner}) needs exactly three numbers"));
        };
        levels.push(FilterSpec::new(kernel, out_channels, groups));
    }
    let pool = tail
        .trim()
        .strip_prefix("pool=")
        .ok_or_else(|| format!("expected `pool=avg|max` after levels, got {:?}", tail.trim()))?;
    Ok(BlockSpec {
        pyconv: PyConvSpec::new(levels),
        pooling: pool.trim().parse()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_student_is_valid_and_round_trips() {
        let spec = ArchitectureSpec::reference_student(10);
        spec.validate().unwrap();
        let text = spec.to_string();
        assert_eq!(text.parse::<ArchitectureSpec>().unwrap(), spec);
        assert!(text.contains("block1: pyconv[(11,16,1),(3,16,1)] pool=max"));
    }

    #[test]
    fn rejects_bad_groups_and_even_kernels() {
        let mut spec = ArchitectureSpec::reference_student(10);
        spec.blocks[1].pyconv.levels[1].groups = 3;
        assert!(spec.validate().is_err());
        let mut spec = ArchitectureSpec::reference_student(10);
        spec.blocks[0].pyconv.levels[0].kernel = 4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "dims: 2d\ninput_channels: 3\nclasses: 10\nblock1: conv[(3,16,1)] pool=max\n";
        match text.parse::<ArchitectureSpec>() {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extension_keeps_channels() {
        let spec = ArchitectureSpec::reference_student(34);
        let ext = spec.extend_to_3d().unwrap();
        assert_eq!(ext.dims, Dims::Three);
        assert_eq!(ext.blocks, spec.blocks);
        assert!(ext.extend_to_3d().is_err());
    }
}

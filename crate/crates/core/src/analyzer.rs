//! Exact parameter and multiply–accumulate accounting for students, and a
//! latency harness.
//!
//! Conventions: convolutions carry no bias, fully connected layers do;
//! batch norm contributes its scale and shift (running statistics are not
//! parameters). A convolution costs its weight count times the number of
//! output positions, a fully connected layer `in × out`. Batch norm,
//! activations and pooling cost nothing unless [`MacOptions`] asks for
//! them, in which case each costs one operation per element it touches.

use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use distilnas_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchitectureSpec, Pooling};
use crate::error::{spec_err, Result};
use crate::nn::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    Pool(Pooling),
    GlobalAvgPool,
    FullyConnected,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv => f.write_str("conv"),
            LayerKind::BatchNorm => f.write_str("batchnorm"),
            LayerKind::Relu => f.write_str("relu"),
            LayerKind::Pool(p) => write!(f, "{p}pool"),
            LayerKind::GlobalAvgPool => f.write_str("gap"),
            LayerKind::FullyConnected => f.write_str("fc"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub id: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
    /// Per-sample output shape `[C, spatial..]`; only `[C]` when counting
    /// without an input shape.
    pub output_shape: Vec<usize>,
}

/// Which non-convolutional layers contribute to the MAC total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacOptions {
    pub batch_norm: bool,
    pub pooling: bool,
    pub activation: bool,
}

/// How a MAC total is reported as FLOPs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FlopConvention {
    /// One multiply–accumulate is one FLOP.
    #[default]
    MacEqualsFlop,
    /// One multiply–accumulate is two FLOPs.
    TwoPerMac,
}

impl FlopConvention {
    pub fn factor(self) -> u64 {
        match self {
            FlopConvention::MacEqualsFlop => 1,
            FlopConvention::TwoPerMac => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountReport {
    pub rows: Vec<LayerRow>,
    /// Per-sample input shape the MACs refer to, if any.
    pub input_shape: Option<Vec<usize>>,
}

impl CountReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    fn sum_where(&self, pred: impl Fn(&LayerRow) -> bool, field: impl Fn(&LayerRow) -> u64) -> u64 {
        self.rows.iter().filter(|r| pred(r)).map(field).sum()
    }

    pub fn params_of_kind(&self, kind: LayerKind) -> u64 {
        self.sum_where(|r| r.kind == kind, |r| r.params)
    }

    /// MACs of block `b` (1-based).
    pub fn block_macs(&self, b: usize) -> u64 {
        let prefix = format!("block{b}.");
        self.sum_where(|r| r.id.starts_with(&prefix), |r| r.macs)
    }

    /// Parameters of block `b` (1-based).
    pub fn block_params(&self, b: usize) -> u64 {
        let prefix = format!("block{b}.");
        self.sum_where(|r| r.id.starts_with(&prefix), |r| r.params)
    }

    /// Aligned text table with a totals line.
    pub fn to_table(&self, flops: FlopConvention) -> String {
        let header = ["layer", "kind", "params", "MACs", "output"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.id.clone(),
                    r.kind.to_string(),
                    group_digits(r.params),
                    group_digits(r.macs),
                    shape_text(&r.output_shape),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let mut parts = Vec::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                // Text columns left-aligned, numbers right-aligned.
                parts.push(if i == 2 || i == 3 { format!("{c:>w$}") } else { format!("{c:<w$}") });
            }
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&rule.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
        for row in &body {
            line(&row.each_ref().map(String::as_str), &mut out);
        }
        let _ = writeln!(out, "total params: {} ({})", group_digits(self.total_params()), millions(self.total_params()));
        if self.input_shape.is_some() {
            let flops_total = self.total_macs() * flops.factor();
            let _ = writeln!(
                out,
                "total MACs: {} ({}); reported FLOPs: {} ({})",
                group_digits(self.total_macs()),
                giga(self.total_macs()),
                group_digits(flops_total),
                giga(flops_total)
            );
        }
        out
    }

    /// One `key=value` record per layer followed by a totals record.
    pub fn to_records(&self, flops: FlopConvention) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "layer={} kind={} params={} macs={} output={}",
                r.id,
                r.kind,
                r.params,
                r.macs,
                shape_text(&r.output_shape)
            );
        }
        let _ = write!(
            out,
            "total params={} params_rounded={}",
            self.total_params(),
            millions(self.total_params())
        );
        if self.input_shape.is_some() {
            let f = self.total_macs() * flops.factor();
            let _ = write!(out, " macs={} macs_rounded={} flops={} flops_rounded={}", self.total_macs(), giga(self.total_macs()), f, giga(f));
        }
        out.push('\n');
        out
    }
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// `421418` → `"421,418"`.
pub fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Millions with two decimals: `421418` → `"0.42M"`.
pub fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

/// Billions with four decimals: `2239861760` → `"2.2399G"`.
pub fn giga(n: u64) -> String {
    format!("{:.4}G", n as f64 / 1e9)
}

/// Parameter count of every layer.
pub fn count_params(arch: &ArchitectureSpec) -> Result<CountReport> {
    walk(arch, None, MacOptions::default())
}

/// Parameters and MACs for one input of per-sample shape
/// `[C, H, W]` (2D) or `[C, T, H, W]` (3D).
pub fn count_macs(arch: &ArchitectureSpec, input_shape: &[usize]) -> Result<CountReport> {
    walk(arch, Some(input_shape), MacOptions::default())
}

pub fn count_macs_with(arch: &ArchitectureSpec, input_shape: &[usize], opts: MacOptions) -> Result<CountReport> {
    walk(arch, Some(input_shape), opts)
}

fn walk(arch: &ArchitectureSpec, input: Option<&[usize]>, opts: MacOptions) -> Result<CountReport> {
    arch.validate()?;
    let mut spatial: Option<Vec<usize>> = match input {
        None => None,
        Some(s) => {
            if s.len() != 1 + arch.dims.spatial_rank() || s[0] != arch.input_channels {
                return Err(spec_err(format!(
                    "input shape {s:?} does not fit a {} network with {} input channels",
                    arch.dims, arch.input_channels
                )));
            }
            arch.check_input_extent(&s[1..])?;
            Some(s[1..].to_vec())
        }
    };
    let positions = |sp: &Option<Vec<usize>>| sp.as_ref().map_or(0, |s| s.iter().product::<usize>() as u64);
    let shape_of = |c: usize, sp: &Option<Vec<usize>>| {
        let mut v = vec![c];
        if let Some(s) = sp {
            v.extend(s);
        }
        v
    };
    let mut rows = Vec::new();
    for (b, block) in arch.blocks.iter().enumerate() {
        let id = |name: &str| format!("block{}.{name}", b + 1);
        let cin = arch.block_in_channels(b);
        for (l, level) in block.pyconv.levels.iter().enumerate() {
            let params = level.weight_count(cin, arch.dims);
            rows.push(LayerRow {
                id: id(&format!("level{}", l + 1)),
                kind: LayerKind::Conv,
                params,
                macs: params * positions(&spatial),
                output_shape: shape_of(level.out_channels, &spatial),
            });
        }
        let c = block.pyconv.out_channels();
        let elems = c as u64 * positions(&spatial);
        rows.push(LayerRow {
            id: id("bn"),
            kind: LayerKind::BatchNorm,
            params: 2 * c as u64,
            macs: if opts.batch_norm { elems } else { 0 },
            output_shape: shape_of(c, &spatial),
        });
        rows.push(LayerRow {
            id: id("relu"),
            kind: LayerKind::Relu,
            params: 0,
            macs: if opts.activation { elems } else { 0 },
            output_shape: shape_of(c, &spatial),
        });
        if let Some(s) = spatial.as_mut() {
            s.iter_mut().for_each(|e| *e /= 2);
        }
        rows.push(LayerRow {
            id: id("pool"),
            kind: LayerKind::Pool(block.pooling),
            params: 0,
            macs: if opts.pooling { elems } else { 0 },
            output_shape: shape_of(c, &spatial),
        });
    }
    let feat = arch.feature_channels();
    rows.push(LayerRow {
        id: "gap".into(),
        kind: LayerKind::GlobalAvgPool,
        params: 0,
        macs: if opts.pooling { feat as u64 * positions(&spatial) } else { 0 },
        output_shape: vec![feat],
    });
    let k = arch.num_classes as u64;
    rows.push(LayerRow {
        id: "fc".into(),
        kind: LayerKind::FullyConnected,
        params: feat as u64 * k + k,
        macs: if input.is_some() { feat as u64 * k } else { 0 },
        output_shape: vec![arch.num_classes],
    });
    Ok(CountReport {
        rows,
        input_shape: input.map(<[usize]>::to_vec),
    })
}

/// Wall-time distribution of repeated evaluation-mode forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub batch: usize,
    pub samples: Vec<Duration>,
    pub median: Duration,
    pub q1: Duration,
    pub q3: Duration,
    pub min: Duration,
}

impl LatencyStats {
    pub fn from_samples(batch: usize, mut samples: Vec<Duration>) -> Result<Self> {
        if samples.is_empty() {
            return Err(spec_err("latency statistics need at least one sample"));
        }
        samples.sort();
        let q = |p: f64| -> Duration {
            let pos = p * (samples.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            samples[lo].mul_f64(1.0 - frac) + samples[hi].mul_f64(frac)
        };
        Ok(LatencyStats {
            batch,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: samples[0],
            samples,
        })
    }

    pub fn iqr(&self) -> Duration {
        self.q3 - self.q1
    }

    /// Images per second at the median latency.
    pub fn throughput(&self) -> f64 {
        self.batch as f64 / self.median.as_secs_f64().max(f64::MIN_POSITIVE)
    }
}

/// Times `repeats` forward passes of a random batch after `warmup`
/// untimed passes.
pub fn benchmark_latency(
    network: &dyn Classifier,
    sample_shape: &[usize],
    batch: usize,
    repeats: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if batch == 0 || repeats == 0 {
        return Err(spec_err("batch and repeats must be positive"));
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let n = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect())?;
    for _ in 0..warmup {
        network.predict(&x)?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        network.predict(&x)?;
        samples.push(start.elapsed());
    }
    LatencyStats::from_samples(batch, samples)
}

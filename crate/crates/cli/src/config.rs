use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use liegal_core::models::{self, QuantumModel, RotorIndex};
use liegal_core::{CVector, C64};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltIn {
    Well,
    Rotor,
}

/// Flags shared by every command.
#[derive(Args, Clone, Debug, Serialize)]
pub struct GlobalArgs {
    /// Built-in model.
    #[arg(long, value_enum, default_value = "well", global = true)]
    pub model: BuiltIn,
    /// Control bound `delta` of the built-in model.
    #[arg(long, default_value_t = 1.0, global = true)]
    pub delta: f64,
    /// Custom model file (JSON); overrides `--model`.
    #[arg(long, global = true)]
    pub model_file: Option<PathBuf>,
    /// Truncation of the plan.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Truncation of the synthesis and simulation.
    #[arg(long = "N", global = true)]
    pub big_n: Option<usize>,
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Print the report as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, default_value_t = 1e-8, global = true)]
    pub tol_rank: f64,
    /// Phase-invariant steering tolerance.
    #[arg(long, default_value_t = 1e-4, global = true)]
    pub tol_steer: f64,
    /// Tracking and lifting accuracy `epsilon`.
    #[arg(long, default_value_t = 0.1, global = true)]
    pub tol_eps: f64,
    /// Maximal segments per steering word.
    #[arg(long, default_value_t = 400, global = true)]
    pub budget_segments: usize,
    /// Maximal pulses per segment.
    #[arg(long, default_value_t = 1 << 20, global = true)]
    pub budget_pulses: usize,
    /// Phase-alignment search horizon.
    #[arg(long, global = true)]
    pub budget_horizon: Option<f64>,
}

/// Resolved configuration recorded in every manifest.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub model_file: Option<String>,
    pub delta: Option<f64>,
    pub n: usize,
    pub big_n: usize,
    pub n_max: Option<usize>,
    pub seed: u64,
    pub rank_tol: f64,
    pub steering_tol: f64,
    pub eps: f64,
    pub budget_segments: usize,
    pub budget_pulses: usize,
    pub horizon: Option<f64>,
}

pub fn load_model(g: &GlobalArgs, n_hint: usize) -> Result<QuantumModel> {
    if let Some(p) = &g.model_file {
        return models::load_model(p).with_context(|| format!("loading {}", p.display()));
    }
    Ok(match g.model {
        BuiltIn::Well => models::well_model(g.delta)?,
        BuiltIn::Rotor => {
            // The leading block spans the levels l, l + 1 when n = 4 l + 4.
            let anchor = if n_hint >= 4 && n_hint % 4 == 0 { n_hint / 4 - 1 } else { 1 };
            models::rotor_model_anchored(g.delta, anchor)?
        }
    })
}

/// `big_n_of(n)` gives the default `N`, capped at the model's `n_max`.
pub fn resolve(g: &GlobalArgs, default_n: usize, big_n_of: impl Fn(usize) -> usize) -> Result<(QuantumModel, RunConfig)> {
    let n = g.n.unwrap_or(default_n);
    let model = load_model(g, n)?;
    let big_n = g.big_n.unwrap_or_else(|| {
        let b = big_n_of(n).max(n);
        model.n_max().map_or(b, |m| b.min(m).max(n))
    });
    if n < 2 {
        bail!("--n must be at least 2");
    }
    if big_n < n {
        bail!("--N = {big_n} is smaller than --n = {n}");
    }
    if let Some(m) = model.n_max() {
        if big_n > m {
            bail!("--N = {big_n} exceeds the model's n_max = {m}");
        }
    }
    for (name, v) in [("tol-rank", g.tol_rank), ("tol-steer", g.tol_steer), ("tol-eps", g.tol_eps)] {
        if !(v > 0.0) {
            bail!("--{name} must be positive");
        }
    }
    let cfg = RunConfig {
        model: model.name.clone(),
        model_file: g.model_file.as_ref().map(|p| p.display().to_string()),
        delta: g.model_file.is_none().then_some(g.delta),
        n,
        big_n,
        n_max: model.n_max(),
        seed: g.seed,
        rank_tol: g.tol_rank,
        steering_tol: g.tol_steer,
        eps: g.tol_eps,
        budget_segments: g.budget_segments,
        budget_pulses: g.budget_pulses,
        horizon: g.budget_horizon,
    };
    Ok((model, cfg))
}

/// Parses a state: `e<k>` (1-based level), `Y<l>,<m>` (rotor), or comma-separated
/// amplitudes where each entry is `re` or `re+imi`/`re-imi`. The result is normalized.
pub fn parse_state(spec: &str, model: &QuantumModel) -> Result<CVector> {
    let s = spec.trim();
    if let Some(k) = s.strip_prefix('e') {
        let k: usize = k.parse().with_context(|| format!("bad level in {spec:?}"))?;
        if k == 0 {
            bail!("levels are 1-based in {spec:?}");
        }
        return Ok(CVector::from_fn(k, |i, _| C64::new(if i + 1 == k { 1.0 } else { 0.0 }, 0.0)));
    }
    if let Some(rest) = s.strip_prefix('Y') {
        let anchor = model.rotor_anchor().ok_or_else(|| anyhow!("{spec:?} needs the rotor model"))?;
        let (l, m) = rest.split_once(',').ok_or_else(|| anyhow!("expected Y<l>,<m> in {spec:?}"))?;
        let l: usize = l.trim().parse()?;
        let m: i64 = m.trim().parse()?;
        if m.unsigned_abs() as usize > l {
            bail!("|m| > l in {spec:?}");
        }
        let k = models::rotor_linear(anchor, RotorIndex { l, m });
        return Ok(CVector::from_fn(k + 1, |i, _| C64::new(if i == k { 1.0 } else { 0.0 }, 0.0)));
    }
    let mut amps = Vec::new();
    for part in s.split(',') {
        amps.push(parse_complex(part.trim()).with_context(|| format!("bad amplitude {part:?}"))?);
    }
    let v = CVector::from_vec(amps);
    let norm = v.norm();
    if norm == 0.0 {
        bail!("state {spec:?} is zero");
    }
    Ok(v / C64::new(norm, 0.0))
}

fn parse_complex(s: &str) -> Result<C64> {
    if let Some(body) = s.strip_suffix('i') {
        let split = body
            .char_indices()
            .skip(1)
            .filter(|&(i, c)| (c == '+' || c == '-') && !body[..i].ends_with(['e', 'E']))
            .map(|(i, _)| i)
            .last();
        let unit = |t: &str| -> Result<f64> {
            Ok(match t {
                "" | "+" => 1.0,
                "-" => -1.0,
                _ => t.parse::<f64>()?,
            })
        };
        let (re, im) = match split {
            Some(i) => (body[..i].parse::<f64>()?, unit(&body[i..])?),
            None => (0.0, unit(body)?),
        };
        return Ok(C64::new(re, im));
    }
    Ok(C64::new(s.parse::<f64>()?, 0.0))
}

pub fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

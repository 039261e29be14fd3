//! The pipeline commands. Each reads the fetch cache and the artifacts of
//! the commands it depends on, and writes its own CSV/JSON/SVG outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fragility_core::decision::{bias_robustness, fragility_index, minimax_rule, se_ratio, FragilityReport};
use fragility_core::estimators::{att_ipw, att_match, design_sensitivity, naive_diff};
use fragility_core::identification::{
    manski_bounds, sweep_tilting, sweep_trimming_proxy, TiltingProblem, TrimMapping,
};
use fragility_core::propensity::{fit_logistic, score_dataset, score_histogram, trim};
use fragility_core::resample::{bootstrap_replicate, decile_att, summarize, BootstrapDesign};
use fragility_core::simulation::{nonid_witness_with, run_sweep, FrequencyTable, WitnessConfig};
use fragility_core::strata::{build_support_map, restrict_to_overlap, support_share, SupportMap};
use fragility_core::{
    AttEstimate, CellStatus, CurvatureSweep, Dataset, Interval, MatchSpec, OutcomeSupport,
    PropensityModel, SchemaSpec, SweepMethod,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calibrate::{calibrate, support_toml};
use crate::config::{bins, Controls, LoadedConfig, RunConfig, NSW_SAMPLE};
use crate::error::{Error, Result, StageExt};
use crate::ingest::{composite, fetch_dataset, load_cached, Manifest, SourceKey, Upstream};
use crate::svg;
use crate::writers::{cell, num, opt_cell, Artifact, Entry, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fetch,
    Support,
    Propensity,
    Match,
    Bounds,
    Fragility,
    Bootstrap,
    Deciles,
    Simulate,
    Reproduce,
    CalibrateGrids,
}

impl Command {
    /// The stages `reproduce` runs, in order.
    pub const PIPELINE: [Command; 9] = [
        Command::Fetch,
        Command::Support,
        Command::Propensity,
        Command::Match,
        Command::Bounds,
        Command::Fragility,
        Command::Bootstrap,
        Command::Deciles,
        Command::Simulate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Fetch => "fetch",
            Command::Support => "support",
            Command::Propensity => "propensity",
            Command::Match => "match",
            Command::Bounds => "bounds",
            Command::Fragility => "fragility",
            Command::Bootstrap => "bootstrap",
            Command::Deciles => "deciles",
            Command::Simulate => "simulate",
            Command::Reproduce => "reproduce",
            Command::CalibrateGrids => "calibrate-grids",
        }
    }

    /// JSON artifact written by the command.
    pub fn artifact(self) -> &'static str {
        match self {
            Command::Fetch => "fetch.json",
            Command::Support => "support.json",
            Command::Propensity => "propensity.json",
            Command::Match => "match.json",
            Command::Bounds => "bounds.json",
            Command::Fragility => "fragility.json",
            Command::Bootstrap => "bootstrap.json",
            Command::Deciles => "deciles.json",
            Command::Simulate => "simulate.json",
            Command::Reproduce => "report.json",
            Command::CalibrateGrids => "calibration.json",
        }
    }
}

/// A validated config with the CLI overrides applied.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub offline: bool,
    pub digest: String,
}

impl Context {
    pub fn new(loaded: LoadedConfig, seed: Option<u64>, offline: bool) -> Result<Self> {
        let mut config = loaded.config;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.validate()?;
        let digest = config.digest();
        Ok(Self {
            config,
            base_dir: loaded.base_dir,
            offline,
            digest,
        })
    }

    pub fn load(path: &Path, seed: Option<u64>, offline: bool) -> Result<Self> {
        Self::new(LoadedConfig::load(path)?, seed, offline)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.data.cache_dir)
    }

    fn upstream(&self) -> Option<Upstream> {
        (!self.offline).then(|| Upstream::parse(&self.config.data.source, &self.base_dir))
    }

    fn entry(&self, module: &str, name: &str, value: Value) -> Entry {
        Entry {
            module: module.into(),
            name: name.into(),
            value,
            config_digest: self.digest.clone(),
        }
    }

    fn primary_design(&self) -> Result<MatchSpec> {
        self.config.matching.designs[0].spec()
    }
}

/// What a command did, for the log line and the report.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    pub entries: Vec<Entry>,
}

pub fn run(ctx: &Context, command: Command, out_dir: &Path) -> Result<Outcome> {
    let mut out = OutDir::new(out_dir)?;
    out.note_input("config", ctx.digest.clone());
    let entries = match command {
        Command::Fetch => cmd_fetch(ctx, &mut out)?,
        Command::Support => cmd_support(ctx, &mut out)?,
        Command::Propensity => cmd_propensity(ctx, &mut out)?,
        Command::Match => cmd_match(ctx, &mut out)?,
        Command::Bounds => cmd_bounds(ctx, &mut out)?,
        Command::Fragility => cmd_fragility(ctx, &mut out)?,
        Command::Bootstrap => cmd_bootstrap(ctx, &mut out)?,
        Command::Deciles => cmd_deciles(ctx, &mut out)?,
        Command::Simulate => cmd_simulate(ctx, &mut out)?,
        Command::Reproduce => cmd_reproduce(ctx, &mut out)?,
        Command::CalibrateGrids => cmd_calibrate(ctx, &mut out)?,
    };
    Ok(Outcome {
        command: command.as_str().into(),
        inputs: out.inputs().clone(),
        outputs: out.written().to_vec(),
        entries,
    })
}

fn write_artifact<T: Serialize>(
    ctx: &Context,
    out: &mut OutDir,
    command: Command,
    entries: &[Entry],
    body: T,
) -> Result<()> {
    let art = Artifact {
        command: command.as_str().into(),
        config_digest: ctx.digest.clone(),
        seed: ctx.config.seed,
        entries: entries.to_vec(),
        body,
    };
    out.write_json(command.artifact(), &art)
}

fn read_upstream<T: serde::de::DeserializeOwned>(
    ctx: &Context,
    out: &mut OutDir,
    producer: Command,
) -> Result<Artifact<T>> {
    out.read_artifact(producer.artifact(), producer.as_str(), &ctx.digest)
}

fn load_source(ctx: &Context, out: &mut OutDir, key: SourceKey) -> Result<Dataset> {
    let cache = ctx.cache_dir();
    let data = load_cached(key, &cache, &SchemaSpec::lalonde())?;
    let manifest = Manifest::load(&cache)?;
    if let Some(d) = manifest.sha256.get(key.file_name()) {
        out.note_input(key.file_name(), d.clone());
    }
    Ok(data)
}

fn load_composite(ctx: &Context, out: &mut OutDir, controls: Controls) -> Result<Dataset> {
    let treated = load_source(ctx, out, SourceKey::NswTreated)?;
    let control = load_source(ctx, out, controls.key())?;
    composite(&treated, &control)
}

fn load_data(ctx: &Context, out: &mut OutDir) -> Result<Dataset> {
    load_composite(ctx, out, ctx.config.data.controls)
}

fn load_model(ctx: &Context, out: &mut OutDir) -> Result<PropensityModel> {
    Ok(read_upstream::<PropensityBody>(ctx, out, Command::Propensity)?.body.model)
}

// fetch

#[derive(Debug, Serialize, Deserialize)]
struct FetchRow {
    key: String,
    file: String,
    sha256: String,
    cache_hit: bool,
    rows: usize,
}

fn cmd_fetch(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let cache = ctx.cache_dir();
    let upstream = ctx.upstream();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for key in SourceKey::ALL {
        let f = fetch_dataset(key, &cache, upstream.as_ref())?;
        let data = crate::ingest::parse_table(&f.text, &SchemaSpec::lalonde())?;
        out.note_input(key.file_name(), f.sha256.clone());
        entries.push(ctx.entry("ingest", &format!("{}_rows", key.as_str()), json!(data.len())));
        rows.push(FetchRow {
            key: key.as_str().into(),
            file: key.file_name().into(),
            sha256: f.sha256,
            cache_hit: f.cache_hit,
            rows: data.len(),
        });
    }
    write_artifact(ctx, out, Command::Fetch, &entries, json!({ "files": rows, "nsw_sample": NSW_SAMPLE }))?;
    Ok(entries)
}

// support

fn support_rows(map: &SupportMap) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = Vec::new();
    for b in &map.grid {
        header.push(format!("{}_bin", b.dimension));
        header.push(format!("{}_lo", b.dimension));
        header.push(format!("{}_hi", b.dimension));
    }
    header.extend(["treated", "control", "status"].map(String::from));
    let rows = map
        .cells
        .iter()
        .map(|c| {
            let mut row = Vec::new();
            for (b, &i) in map.grid.iter().zip(&c.index) {
                row.push(i.to_string());
                row.push(cell(b.edges[i]));
                row.push(cell(b.edges[i + 1]));
            }
            row.push(c.treated.to_string());
            row.push(c.control.to_string());
            row.push(c.status.as_str().into());
            row
        })
        .collect();
    (header, rows)
}

fn status_counts(map: &SupportMap) -> Value {
    json!({
        "cells": map.total_cells(),
        "both": map.count_status(CellStatus::Both),
        "control_only": map.count_status(CellStatus::ControlOnly),
        "treated_only": map.count_status(CellStatus::TreatedOnly),
        "empty": map.count_status(CellStatus::Empty),
    })
}

fn cmd_support(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let fine = build_support_map(&data, &bins(&ctx.config.support.fine)?)?;
    let coarse = build_support_map(&data, &bins(&ctx.config.support.coarse)?)?;
    for (name, map) in [("support_72.csv", &fine), ("support_42.csv", &coarse)] {
        let (header, rows) = support_rows(map);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.write_csv(name, &header, &rows)?;
    }
    let share = support_share(&fine);
    let overlap = restrict_to_overlap(&data, &fine)?;
    let without_treated =
        coarse.count_status(CellStatus::ControlOnly) + coarse.count_status(CellStatus::Empty);
    let mut entries = vec![];
    for (grid, map) in [("fine", &fine), ("coarse", &coarse)] {
        for status in [CellStatus::Both, CellStatus::ControlOnly, CellStatus::TreatedOnly, CellStatus::Empty] {
            entries.push(ctx.entry(
                "strata",
                &format!("{grid}_{}", status.as_str()),
                json!(map.count_status(status)),
            ));
        }
        entries.push(ctx.entry("strata", &format!("{grid}_cells"), json!(map.total_cells())));
    }
    entries.push(ctx.entry("strata", "fine_both_share", num(share.both)));
    entries.push(ctx.entry("strata", "coarse_cells_without_treated", json!(without_treated)));
    entries.push(ctx.entry("strata", "overlap_treated", json!(overlap.treated_count())));
    entries.push(ctx.entry("strata", "overlap_control", json!(overlap.control_count())));
    let body = json!({
        "fine": { "grid": fine.grid, "counts": status_counts(&fine), "share": share },
        "coarse": { "grid": coarse.grid, "counts": status_counts(&coarse), "cells_without_treated": without_treated },
        "overlap": { "treated": overlap.treated_count(), "control": overlap.control_count() },
    });
    write_artifact(ctx, out, Command::Support, &entries, body)?;
    Ok(entries)
}

// propensity

#[derive(Debug, Serialize, Deserialize)]
struct PropensityBody {
    model: PropensityModel,
    n_treated: usize,
    n_control: usize,
    clamp_events: usize,
}

fn cmd_propensity(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let cfg = &ctx.config.propensity;
    let model = fit_logistic(&data, &cfg.covariates, cfg.fit_options())?;
    let scores = score_dataset(&model, &data)?;
    let hist = score_histogram(&data, &model, cfg.histogram_bins)?;
    let rows: Vec<Vec<String>> = (0..hist.treated.len())
        .map(|i| {
            vec![
                i.to_string(),
                cell(hist.edges[i]),
                cell(hist.edges[i + 1]),
                hist.treated[i].to_string(),
                hist.control[i].to_string(),
            ]
        })
        .collect();
    out.write_csv("pscore_hist.csv", &["bin", "lo", "hi", "treated", "control"], &rows)?;
    out.write_bytes(
        "pscore_hist.svg",
        svg::histogram(
            "Propensity score by arm",
            &hist.edges,
            &[("treated", &hist.treated, "#c0392b"), ("control", &hist.control, "#2e6fb0")],
        )
        .as_bytes(),
    )?;
    let mut entries = vec![
        ctx.entry("propensity", "converged", json!(model.converged)),
        ctx.entry("propensity", "iterations", json!(model.iterations)),
        ctx.entry("propensity", "gradient_norm", num(model.gradient_norm)),
        ctx.entry("propensity", "clamp_events", json!(scores.clamp_events)),
    ];
    for (name, c) in std::iter::once("intercept").chain(model.covariate_columns.iter().map(String::as_str)).zip(&model.coefficients) {
        entries.push(ctx.entry("propensity", &format!("coef_{name}"), num(*c)));
    }
    let body = PropensityBody {
        n_treated: data.treated_count(),
        n_control: data.control_count(),
        clamp_events: scores.clamp_events,
        model,
    };
    write_artifact(ctx, out, Command::Propensity, &entries, body)?;
    Ok(entries)
}

// match

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictionRow {
    pub sample: String,
    pub n_treated: usize,
    pub n_control: usize,
    pub estimate: AttEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRow {
    pub name: String,
    pub design_tag: String,
    pub estimate: Option<AttEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchBody {
    pub restrictions: Vec<RestrictionRow>,
    pub designs: Vec<DesignRow>,
    pub ipw: AttEstimate,
    pub naive: AttEstimate,
}

/// The full, overlap-restricted and trimmed samples, all scored with the
/// full-sample model.
fn restriction_table(ctx: &Context, data: &Dataset, model: &PropensityModel) -> Result<Vec<RestrictionRow>> {
    let spec = ctx.primary_design()?;
    let fine = build_support_map(data, &bins(&ctx.config.support.fine)?)?;
    let samples = [
        ("full", data.clone()),
        ("overlap_restricted", restrict_to_overlap(data, &fine)?),
        ("trimmed", trim(data, model, ctx.config.matching.trim_rule()?)?.data),
    ];
    samples
        .into_iter()
        .map(|(name, sample)| {
            Ok(RestrictionRow {
                sample: name.into(),
                n_treated: sample.treated_count(),
                n_control: sample.control_count(),
                estimate: att_match(&sample, model, &spec)?,
            })
        })
        .collect()
}

fn cmd_match(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let model = load_model(ctx, out)?;
    let rows = restriction_table(ctx, &data, &model)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.sample.clone(),
                r.estimate.design_tag.clone(),
                cell(r.estimate.tau_hat),
                cell(r.estimate.se),
                r.n_treated.to_string(),
                r.n_control.to_string(),
                r.estimate.n_treated_used.to_string(),
                r.estimate.n_dropped.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "table1.csv",
        &["sample", "design", "tau_hat", "se", "n_treated", "n_control", "n_treated_used", "n_dropped"],
        &csv_rows,
    )?;

    let specs = ctx
        .config
        .matching
        .designs
        .iter()
        .map(|d| d.spec())
        .collect::<Result<Vec<_>>>()?;
    let designs: Vec<DesignRow> = design_sensitivity(&data, &model, &specs)
        .into_iter()
        .zip(&ctx.config.matching.designs)
        .map(|(o, d)| DesignRow {
            name: d.name.clone(),
            design_tag: o.design_tag,
            error: o.estimate.as_ref().err().map(|e| e.to_string()),
            estimate: o.estimate.ok(),
        })
        .collect();
    let design_csv: Vec<Vec<String>> = designs
        .iter()
        .map(|d| {
            let e = d.estimate.as_ref();
            vec![
                d.name.clone(),
                d.design_tag.clone(),
                opt_cell(e.map(|e| e.tau_hat)),
                opt_cell(e.map(|e| e.se)),
                e.map(|e| e.n_treated_used.to_string()).unwrap_or_default(),
                e.map(|e| e.n_dropped.to_string()).unwrap_or_default(),
                d.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.write_csv(
        "designs.csv",
        &["name", "design", "tau_hat", "se", "n_treated_used", "n_dropped", "error"],
        &design_csv,
    )?;
    let ipw = att_ipw(&data, &model)?;
    let naive = naive_diff(&data)?;

    let mut entries = Vec::new();
    for r in &rows {
        entries.push(ctx.entry("estimators", &format!("restriction_{}_tau_hat", r.sample), num(r.estimate.tau_hat)));
        entries.push(ctx.entry("estimators", &format!("restriction_{}_se", r.sample), num(r.estimate.se)));
    }
    for d in &designs {
        entries.push(ctx.entry(
            "estimators",
            &format!("design_{}_tau_hat", d.name),
            d.estimate.as_ref().map_or(Value::Null, |e| num(e.tau_hat)),
        ));
    }
    entries.push(ctx.entry("estimators", "ipw_tau_hat", num(ipw.tau_hat)));
    entries.push(ctx.entry("estimators", "naive_tau_hat", num(naive.tau_hat)));
    let body = MatchBody {
        restrictions: rows,
        designs,
        ipw,
        naive,
    };
    write_artifact(ctx, out, Command::Match, &entries, body)?;
    Ok(entries)
}

// bounds

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBody {
    pub method: SweepMethod,
    pub rows: Vec<SweepRow>,
    pub massi: Value,
    pub width_violations: Vec<usize>,
}

impl SweepBody {
    fn new(sweep: &CurvatureSweep) -> Self {
        Self {
            method: sweep.method,
            rows: sweep
                .deltas
                .iter()
                .zip(&sweep.intervals)
                .map(|(d, iv)| SweepRow {
                    delta: *d,
                    lo: iv.map(|i| i.lo),
                    hi: iv.map(|i| i.hi),
                })
                .collect(),
            massi: num(sweep.massi),
            width_violations: sweep.width_violations.clone(),
        }
    }

    pub fn sweep(&self) -> Result<CurvatureSweep> {
        let intervals = self
            .rows
            .iter()
            .map(|r| match (r.lo, r.hi) {
                (Some(lo), Some(hi)) => Interval::new(lo, hi).map(Some),
                _ => Ok(None),
            })
            .collect::<fragility_core::Result<Vec<_>>>()?;
        Ok(CurvatureSweep::from_parts(
            self.rows.iter().map(|r| r.delta).collect(),
            intervals,
            self.method,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsBody {
    pub tilting: SweepBody,
    pub proxy: SweepBody,
    pub proxy_mapping: TrimMapping,
    pub manski: Interval,
    pub outcome_support: OutcomeSupport,
    pub mar_point: f64,
}

fn proxy_mapping(ctx: &Context) -> TrimMapping {
    TrimMapping::Symmetric {
        scale: ctx.config.bounds.proxy_scale,
    }
}

fn write_sweep(out: &mut OutDir, stem: &str, title: &str, sweep: &CurvatureSweep, mapping: Option<&TrimMapping>) -> Result<()> {
    let mut header = vec!["delta", "lo", "hi", "width", "contains_zero"];
    if mapping.is_some() {
        header.extend(["trim_low", "trim_high"]);
    }
    let mut rows = Vec::new();
    for (d, iv) in sweep.deltas.iter().zip(&sweep.intervals) {
        let mut row = vec![
            cell(*d),
            opt_cell(iv.map(|i| i.lo)),
            opt_cell(iv.map(|i| i.hi)),
            opt_cell(iv.map(|i| i.width())),
            iv.map(|i| i.contains(0.0).to_string()).unwrap_or_default(),
        ];
        if let Some(m) = mapping {
            let r = m.rule(*d)?;
            row.push(cell(r.low));
            row.push(cell(r.high));
        }
        rows.push(row);
    }
    out.write_csv(&format!("{stem}.csv"), &header, &rows)?;
    let pts: Vec<(f64, f64, f64)> = sweep.points().map(|(d, iv)| (d, iv.lo, iv.hi)).collect();
    out.write_bytes(&format!("{stem}.svg"), svg::band_plot(title, "delta", "ATT", &pts).as_bytes())
}

fn cmd_bounds(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let model = load_model(ctx, out)?;
    let cfg = &ctx.config.bounds;
    let tilting = sweep_tilting(&data, &model, &cfg.deltas)?;
    let mapping = proxy_mapping(ctx);
    let proxy = sweep_trimming_proxy(&data, &model, &cfg.proxy_deltas, &mapping, &ctx.primary_design()?)?;
    let support = match cfg.outcome_support {
        Some([lo, hi]) => OutcomeSupport::new(lo, hi)?,
        None => OutcomeSupport::empirical(&data)?,
    };
    let manski = manski_bounds(&data, support)?;
    let mar_point = TiltingProblem::from_model(&data, &model)?.mar_point();
    write_sweep(out, "sweep_tilting", "Curvature-indexed identified set (tilting)", &tilting, None)?;
    write_sweep(out, "sweep_proxy", "Trimming proxy for curvature", &proxy, Some(&mapping))?;

    let entries = vec![
        ctx.entry("identification", "mar_point", num(mar_point)),
        ctx.entry("identification", "manski_lo", num(manski.lo)),
        ctx.entry("identification", "manski_hi", num(manski.hi)),
        ctx.entry("identification", "massi_tilting", num(tilting.massi)),
        ctx.entry("identification", "massi_proxy", num(proxy.massi)),
        ctx.entry("identification", "tilting_width_violations", json!(tilting.width_violations.len())),
        ctx.entry("identification", "proxy_width_violations", json!(proxy.width_violations.len())),
    ];
    let body = BoundsBody {
        tilting: SweepBody::new(&tilting),
        proxy: SweepBody::new(&proxy),
        proxy_mapping: mapping,
        manski,
        outcome_support: support,
        mar_point,
    };
    write_artifact(ctx, out, Command::Bounds, &entries, body)?;
    Ok(entries)
}

// fragility

fn fragility_json(r: &FragilityReport, massi: f64) -> Value {
    json!({
        "baseline": r.baseline.as_str(),
        "grid_index": num(r.grid_index),
        "refined_index": num(r.refined_index),
        "massi": num(massi),
    })
}

fn cmd_fragility(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let model = load_model(ctx, out)?;
    let bounds = read_upstream::<BoundsBody>(ctx, out, Command::Bounds)?.body;
    let matched = read_upstream::<MatchBody>(ctx, out, Command::Match)?.body;

    let tilting = bounds.tilting.sweep()?;
    let problem = TiltingProblem::from_model(&data, &model)?;
    let eval_tilt = |d: f64| problem.bounds(d);
    let tilt = fragility_index(&tilting, Some(&eval_tilt))?;

    let proxy = bounds.proxy.sweep()?;
    let spec = ctx.primary_design()?;
    let mapping = bounds.proxy_mapping.clone();
    let eval_proxy = |d: f64| -> fragility_core::Result<Interval> {
        let rule = mapping.rule(d)?;
        let est = att_match(&trim(&data, &model, rule)?.data, &model, &spec)?;
        Ok(Interval::around(est.tau_hat, d * est.se))
    };
    // explicit mappings only cover their grid, so bisection needs the formula
    let refine: Option<&dyn Fn(f64) -> fragility_core::Result<Interval>> =
        matches!(mapping, TrimMapping::Symmetric { .. }).then_some(&eval_proxy as _);
    let prox = fragility_index(&proxy, refine)?;

    let full = matched
        .restrictions
        .iter()
        .find(|r| r.sample == "full")
        .ok_or_else(|| Error::Output("match.json has no full-sample row".into()))?;
    let step = ctx.config.bounds.bias_step;
    let ratio = se_ratio(full.estimate.tau_hat, full.estimate.se)?;
    let delta_star = bias_robustness(full.estimate.tau_hat, full.estimate.se, step)?;
    let at_zero = minimax_rule(&Interval::point(full.estimate.tau_hat));

    let entries = vec![
        ctx.entry("decision", "tilting_fragility_grid", num(tilt.grid_index)),
        ctx.entry("decision", "tilting_fragility_refined", num(tilt.refined_index)),
        ctx.entry("decision", "proxy_fragility_grid", num(prox.grid_index)),
        ctx.entry("decision", "proxy_fragility_refined", num(prox.refined_index)),
        ctx.entry("decision", "se_ratio", num(ratio)),
        ctx.entry("decision", "bias_robustness_delta", num(delta_star)),
        ctx.entry("decision", "decision_at_point", json!(at_zero.decision.as_str())),
    ];
    let body = json!({
        "tilting": fragility_json(&tilt, tilting.massi),
        "proxy": fragility_json(&prox, proxy.massi),
        "bias": {
            "tau_hat": num(full.estimate.tau_hat),
            "se": num(full.estimate.se),
            "grid_step": num(step),
            "se_ratio": num(ratio),
            "delta_star": num(delta_star),
        },
        "point_decision": {
            "decision": at_zero.decision.as_str(),
            "treat_regret": num(at_zero.treat.worst_case_regret),
            "no_treat_regret": num(at_zero.no_treat.worst_case_regret),
        },
    });
    write_artifact(ctx, out, Command::Fragility, &entries, body)?;
    Ok(entries)
}

// bootstrap

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub design: String,
    pub replicates: usize,
    pub failed: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

pub const BOOTSTRAP_ORDER: &str = "resample within arm, refit the propensity model, trim, match";

fn cmd_bootstrap(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let model = load_model(ctx, out)?;
    let cfg = &ctx.config.bootstrap;
    let spec = ctx.primary_design()?;
    let fit = ctx.config.propensity.fit_options();
    let designs = [
        ("full", None),
        ("trimmed", Some(ctx.config.matching.trim_rule()?)),
    ]
    .map(|(tag, trim)| BootstrapDesign {
        refit: cfg.refit,
        fit_options: fit,
        ..BootstrapDesign::new(spec, trim, tag)
    });
    let seed = ctx.config.seed;
    let b = cfg.replicates as u64;
    let run_all = || -> Vec<Vec<fragility_core::Result<f64>>> {
        designs
            .iter()
            .map(|d| {
                (0..b)
                    .into_par_iter()
                    .map(|r| bootstrap_replicate(&data, &model, d, seed, r))
                    .collect()
            })
            .collect()
    };
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("bootstrap.threads: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let mut csv_rows = Vec::new();
    let mut summaries = Vec::new();
    let mut entries = Vec::new();
    for (d, outcomes) in designs.iter().zip(results) {
        for (r, o) in outcomes.iter().enumerate() {
            csv_rows.push(vec![
                d.tag.clone(),
                r.to_string(),
                o.as_ref().map(|v| cell(*v)).unwrap_or_default(),
                o.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
            ]);
        }
        let s = summarize(outcomes, d.tag.clone(), seed)?;
        entries.push(ctx.entry("resample", &format!("bootstrap_{}_mean", d.tag), num(s.mean)));
        entries.push(ctx.entry("resample", &format!("bootstrap_{}_sd", d.tag), num(s.sd)));
        entries.push(ctx.entry("resample", &format!("bootstrap_{}_failed", d.tag), json!(s.failed)));
        summaries.push(BootstrapRow {
            design: d.tag.clone(),
            replicates: cfg.replicates,
            failed: s.failed,
            mean: s.mean,
            sd: s.sd,
            q025: s.quantiles.0,
            median: s.quantiles.1,
            q975: s.quantiles.2,
        });
    }
    out.write_csv("bootstrap.csv", &["design", "replicate", "estimate", "error"], &csv_rows)?;
    let body = json!({ "designs": summaries, "order": BOOTSTRAP_ORDER, "refit": cfg.refit });
    write_artifact(ctx, out, Command::Bootstrap, &entries, body)?;
    Ok(entries)
}

// deciles

fn cmd_deciles(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let data = load_data(ctx, out)?;
    let model = load_model(ctx, out)?;
    let report = decile_att(&data, &model, ctx.config.deciles.min_per_arm)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.decile.to_string(),
                cell(r.score_lo),
                cell(r.score_hi),
                r.n_treated.to_string(),
                r.n_control.to_string(),
                opt_cell(r.att),
                opt_cell(r.se),
                r.dropped.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "deciles.csv",
        &["decile", "score_lo", "score_hi", "n_treated", "n_control", "att", "se", "dropped"],
        &rows,
    )?;
    let mut entries = vec![ctx.entry(
        "resample",
        "deciles_dropped",
        json!(report.rows.iter().filter(|r| r.dropped).count()),
    )];
    for r in &report.rows {
        entries.push(ctx.entry("resample", &format!("decile_{}_att", r.decile), r.att.map_or(Value::Null, num)));
    }
    write_artifact(ctx, out, Command::Deciles, &entries, &report)?;
    Ok(entries)
}

// simulate

fn table_json(t: &FrequencyTable) -> Value {
    json!({ "outcomes": t.outcomes, "counts": t.counts, "total": t.total })
}

fn cmd_simulate(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let cfg = &ctx.config.simulation;
    let seed = ctx.config.seed;
    let sweep = run_sweep(&cfg.sim_config(seed))?;
    let rows: Vec<Vec<String>> = (0..sweep.deltas.len())
        .map(|i| {
            vec![
                cell(sweep.deltas[i]),
                cell(sweep.observed_ates[i]),
                sweep.selected_counts[i].to_string(),
                cell(sweep.sets[i].lo),
                cell(sweep.sets[i].hi),
                sweep.sets[i].contains(0.0).to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "sim_sweep.csv",
        &["delta", "observed_ate", "n_selected", "lo", "hi", "contains_zero"],
        &rows,
    )?;
    let pts: Vec<(f64, f64, f64)> = sweep.deltas.iter().zip(&sweep.sets).map(|(d, s)| (*d, s.lo, s.hi)).collect();
    out.write_bytes(
        "sim_sweep.svg",
        svg::band_plot("Simulated selection sweep", "delta", "ATE", &pts).as_bytes(),
    )?;
    let witness = nonid_witness_with(&WitnessConfig {
        n: cfg.witness_n,
        ..WitnessConfig::new(cfg.witness_threshold, seed)
    })?;
    let entries = vec![
        ctx.entry("simulation", "true_ate", num(sweep.true_ate)),
        ctx.entry("simulation", "observed_ate_delta0", num(sweep.observed_ates[0])),
        ctx.entry("simulation", "massi", num(sweep.massi)),
        ctx.entry("simulation", "sets_containing_zero", json!(sweep.sets.iter().filter(|s| s.contains(0.0)).count())),
        ctx.entry("simulation", "witness_tv_distance", num(witness.tv_distance)),
        ctx.entry("simulation", "witness_att_1", num(witness.att_1)),
        ctx.entry("simulation", "witness_att_2", num(witness.att_2)),
    ];
    let body = json!({
        "sweep": {
            "deltas": sweep.deltas,
            "observed_ates": sweep.observed_ates,
            "selected_counts": sweep.selected_counts,
            "epsilon": num(cfg.epsilon),
            "massi": num(sweep.massi),
            "true_ate": num(sweep.true_ate),
        },
        "witness": {
            "threshold": num(cfg.witness_threshold),
            "n": cfg.witness_n,
            "att_1": num(witness.att_1),
            "att_2": num(witness.att_2),
            "tv_distance": num(witness.tv_distance),
            "selection_rates": witness.selection_rates,
            "law_1": table_json(&witness.law_1),
            "law_2": table_json(&witness.law_2),
        },
    });
    write_artifact(ctx, out, Command::Simulate, &entries, body)?;
    Ok(entries)
}

// reproduce

/// Name of the report field excluded from the determinism comparison.
pub const TIMESTAMP_FIELD: &str = "timestamp_unix";

fn cmd_reproduce(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    let mut stages = Vec::new();
    for stage in Command::PIPELINE {
        let o = run(ctx, stage, out.root()).stage(stage.as_str())?;
        for (k, v) in &o.inputs {
            if k != "config" && !k.ends_with(".json") {
                out.note_input(k.clone(), v.clone());
            }
        }
        stages.push(json!({ "command": o.command, "outputs": o.outputs }));
        entries.extend(o.entries);
    }
    let manifest = Manifest::load(&ctx.cache_dir())?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = json!({
        "meta": {
            "software": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "config": ctx.config,
            "config_digest": ctx.digest,
            "seed": ctx.config.seed,
            "dataset_digests": manifest.sha256,
            "nsw_sample": ctx.config.data.nsw_sample,
            "controls": ctx.config.data.controls,
            "propensity_terms": "raw covariate levels, no interactions or squares",
            "restriction_model": "full-sample propensity model reused for every restriction sample",
            "trim_proxy_mapping": proxy_mapping(ctx),
            "trim_proxy_interval": "tau_hat +/- delta * se on the trimmed sample",
            "bootstrap_order": BOOTSTRAP_ORDER,
            "stages": stages,
            TIMESTAMP_FIELD: timestamp,
        },
        "entries": entries,
    });
    out.write_json("report.json", &report)?;
    Ok(entries)
}

// calibrate-grids

fn cmd_calibrate(ctx: &Context, out: &mut OutDir) -> Result<Vec<Entry>> {
    let mut results = Vec::new();
    let mut entries = Vec::new();
    for (controls, name) in [(Controls::Psid, "psid"), (Controls::Cps, "cps")] {
        let data = load_composite(ctx, out, controls)?;
        let cal = calibrate(&data, name)?;
        out.write_bytes(&format!("support_{name}.toml"), support_toml(&cal).as_bytes())?;
        entries.push(ctx.entry("strata", &format!("calibration_{name}_fine_distance"), json!(cal.fine.distance)));
        entries.push(ctx.entry("strata", &format!("calibration_{name}_coarse_distance"), json!(cal.coarse.distance)));
        results.push(cal);
    }
    write_artifact(ctx, out, Command::CalibrateGrids, &entries, results)?;
    Ok(entries)
}

use std::path::PathBuf;

use gsi_core::cascade::{coherence_profile, Stream};
use gsi_core::cost::{
    effective_params, effective_params_nominal, end_to_end_estimate, layer_speedup, model_speedup, roofline_time,
    ComponentTimes, ModelShapes, Regime,
};
use gsi_core::model::{
    evaluate, CalibrationData, CalibrationOptions, EvalReport, GsiRuntime, ModelWeights, Reference, RuntimeArtifact,
};
use gsi_core::ExecutionMode;
use rayon::prelude::*;

use crate::config::{CostPreset, ExperimentConfig, ModeKind, Workspace};
use crate::error::{CliError, Result};
use crate::experiment::{load_model, prepare};
use crate::report::{Cell, ColumnKind, ReportTable};

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
}

fn options(cfg: &ExperimentConfig, k: usize) -> CalibrationOptions {
    CalibrationOptions {
        k,
        cascade: cfg.sweep.cascade,
        eta: cfg.sweep.eta,
        k_max: cfg.sweep.k_max,
        source: cfg.sweep.basis_source,
    }
}

fn stream_label(s: Stream) -> &'static str {
    match s {
        Stream::Model => "model",
        Stream::Hidden => "hidden",
    }
}

#[derive(Clone, Debug)]
pub struct CalibrateOutput {
    pub artifacts: Vec<PathBuf>,
    pub table: ReportTable,
}

/// Calibrates every rank in the sweep, writing one artifact per rank and the
/// calibration table.
pub fn cmd_calibrate(ws: &Workspace, cfg: &ExperimentConfig) -> Result<CalibrateOutput> {
    let setup = prepare(ws, cfg)?;
    let data = CalibrationData::capture(&setup.weights, &setup.calibration, cfg.sweep.basis_source)?;
    let ks = cfg.sorted_ks();
    let calibrations = pool(cfg.sweep.workers)?.install(|| {
        ks.par_iter()
            .map(|&k| data.calibrate(&setup.weights, &options(cfg, k)))
            .collect::<gsi_core::Result<Vec<_>>>()
    })?;

    let mut table = ReportTable::new("calibration", "Calibration: per-layer spectra and basis construction")
        .column("k", ColumnKind::Int)
        .column("layer", ColumnKind::Int)
        .column("stream", ColumnKind::Text)
        .column("rank", ColumnKind::Int)
        .float("effective_rank", 2)
        .float("energy_captured", 4)
        .column("origin", ColumnKind::Text)
        .column("acceptances", ColumnKind::Int)
        .column("grown_rank", ColumnKind::Int)
        .column("exhausted", ColumnKind::Text);
    let mut artifacts = Vec::with_capacity(ks.len());
    for cal in calibrations {
        for e in &cal.trace.entries {
            let spectrum = data.spectrum(e.layer, e.stream)?;
            let total = spectrum.tail_energy(0);
            let captured = if total > 0.0 {
                1.0 - spectrum.tail_energy(e.final_rank) / total
            } else {
                1.0
            };
            table.push(vec![
                cal.k.into(),
                e.layer.into(),
                stream_label(e.stream).into(),
                e.final_rank.into(),
                gsi_core::effective_rank(&spectrum).ok().into(),
                captured.into(),
                match e.origin {
                    gsi_core::cascade::LayerOrigin::FullSvd => "full_svd",
                    gsi_core::cascade::LayerOrigin::Inherited => "inherited",
                }
                .into(),
                e.acceptances.into(),
                e.grown_rank.into(),
                (if e.exhausted { "yes" } else { "no" }).into(),
            ])?;
        }
        let path = ws.artifact_path(cfg, cal.k);
        RuntimeArtifact::from(cal).save(&path)?;
        artifacts.push(path);
    }
    table.sort_by(&["k", "layer", "stream"]);
    table.footnote(format!(
        "{} calibration tokens; basis source {:?}; cascade {}",
        setup.calibration.len(),
        cfg.sweep.basis_source,
        if cfg.sweep.cascade {
            format!("on (eta {})", cfg.sweep.eta)
        } else {
            "off".into()
        }
    ));
    table.footnote(
        "energy_captured: share of squared singular values inside the basis, against the layer's own full spectrum",
    );
    table.footnote("hidden-stream rank is k scaled by d_ff/d, capped by the calibration token count");
    table.write(&ws.output_dir(cfg))?;
    Ok(CalibrateOutput { artifacts, table })
}

/// One evaluated (k, ε, mode) point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub k: usize,
    pub epsilon: Option<f64>,
    pub mode: ModeKind,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    pub table: ReportTable,
    pub layers: ReportTable,
}

fn runtimes_for(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    weights: &ModelWeights,
    calibration: &[u32],
) -> Result<Vec<(usize, GsiRuntime)>> {
    let mut data: Option<CalibrationData> = None;
    let mut out = Vec::new();
    for k in cfg.sorted_ks() {
        let path = ws.artifact_path(cfg, k);
        let runtime = if path.exists() {
            RuntimeArtifact::load(&path, weights)?.runtime
        } else if cfg.sweep.auto_calibrate {
            if data.is_none() {
                data = Some(CalibrationData::capture(weights, calibration, cfg.sweep.basis_source)?);
            }
            data.as_ref()
                .expect("just set")
                .calibrate(weights, &options(cfg, k))?
                .runtime
        } else {
            return Err(CliError::MissingInput(format!(
                "no calibration artifact for k = {k} at {}; run `gsi calibrate` first or set sweep.auto_calibrate",
                path.display()
            )));
        };
        out.push((k, runtime));
    }
    Ok(out)
}

/// Evaluates every grid point against the dense model.
pub fn cmd_sweep(ws: &Workspace, cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let setup = prepare(ws, cfg)?;
    let w = &setup.weights;
    let reference = Reference::compute(w, &setup.eval, &setup.prompt, setup.generate)?;
    let mut runtimes = runtimes_for(ws, cfg, w, &setup.calibration)?;
    if cfg.sweep.audit {
        for (_, rt) in &mut runtimes {
            rt.enable_audit(w);
        }
    }

    let mut modes = cfg.sweep.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    let mut epsilons = cfg.sweep.epsilon.clone();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let mut grid: Vec<(usize, Option<f64>, ModeKind)> = Vec::new();
    for i in 0..runtimes.len() {
        for &m in &modes {
            match m {
                ModeKind::Gated => grid.extend(epsilons.iter().map(|&e| (i, Some(e), m))),
                _ => grid.push((i, None, m)),
            }
        }
    }

    let points = pool(cfg.sweep.workers)?.install(|| {
        grid.par_iter()
            .map(|&(i, eps, mode)| {
                let (k, base) = &runtimes[i];
                let exec = match (mode, eps) {
                    (ModeKind::Gated, Some(e)) => ExecutionMode::gated(e)?,
                    (ModeKind::StaticProjection, _) => ExecutionMode::StaticProjection,
                    _ => ExecutionMode::Baseline,
                };
                let mut rt = base.clone().with_mode(exec);
                let report = evaluate(w, &mut rt, &reference, &setup.eval, &setup.prompt)?;
                Ok(SweepPoint {
                    k: *k,
                    epsilon: eps,
                    mode,
                    report,
                })
            })
            .collect::<gsi_core::Result<Vec<_>>>()
    })?;

    let mut table = ReportTable::new("sweep", "Quality and weight-read speedup per configuration")
        .column("k", ColumnKind::Int)
        .float("epsilon", 2)
        .column("mode", ColumnKind::Text)
        .float("perplexity", 3)
        .float("ppl_ratio", 4)
        .float("top1_agreement", 4)
        .float("fast_fraction", 4)
        .float("mean_rho", 4)
        .float("s_eff", 2)
        .float("generation_agreement", 2)
        .column("bound_checks", ColumnKind::Int)
        .column("bound_violations", ColumnKind::Int)
        .float("worst_bound_ratio", 4);
    let mut layers = ReportTable::new("sweep_layers", "Per-layer gate statistics")
        .column("k", ColumnKind::Int)
        .float("epsilon", 2)
        .column("mode", ColumnKind::Text)
        .column("layer", ColumnKind::Int)
        .float("fast_fraction", 4)
        .float("mean_rho", 4)
        .float("max_rho", 4);
    for p in &points {
        let r = &p.report;
        let audit = r.audit.clone();
        table.push(vec![
            p.k.into(),
            p.epsilon.into(),
            p.mode.label().into(),
            r.perplexity.into(),
            r.perplexity_ratio.into(),
            r.top1_agreement.into(),
            r.fast_fraction.into(),
            r.mean_rho.into(),
            r.read_speedup.into(),
            r.generation_agreement.into(),
            audit.as_ref().map(|a| a.checks).into(),
            audit.as_ref().map(|a| a.violations).into(),
            audit.as_ref().map(|a| a.worst_ratio).into(),
        ])?;
        for (l, s) in r.layer_stats.iter().enumerate() {
            layers.push(vec![
                p.k.into(),
                p.epsilon.into(),
                p.mode.label().into(),
                l.into(),
                s.fast_fraction().into(),
                s.mean_rho().into(),
                s.rho_max.into(),
            ])?;
        }
    }
    table.sort_by(&["k", "epsilon", "mode"]);
    layers.sort_by(&["k", "epsilon", "mode", "layer"]);
    let mc = w.config;
    table.footnote(format!(
        "model: {:?} d={} layers={} heads={} d_ff={} vocab={}; seed {}",
        cfg.model.source, mc.d_model, mc.n_layers, mc.n_heads, mc.d_ff, mc.vocab, cfg.seed
    ));
    table.footnote(format!(
        "baseline perplexity {} over {} evaluation tokens; generation {} tokens after a {}-token prompt",
        reference.perplexity,
        setup.eval.len(),
        setup.generate,
        setup.prompt.len()
    ));
    table
        .footnote("s_eff: dense weight elements over weight elements read, over all gated maps of the evaluation pass");
    table.footnote(
        "bound_*: fast-path outputs checked against ||W||_2 * eps * ||x|| (static projection uses the token's own rho)",
    );
    let dir = ws.output_dir(cfg);
    table.write(&dir)?;
    layers.write(&dir)?;
    Ok(SweepOutput { points, table, layers })
}

/// Principal-angle overlap between consecutive layers' shared bases.
pub fn cmd_coherence(ws: &Workspace, cfg: &ExperimentConfig) -> Result<ReportTable> {
    let weights = load_model(ws, cfg)?;
    let ks = cfg.sorted_ks();
    let k_coh = cfg.sweep.coherence_k.unwrap_or(ks[0]);
    let source_k = ks
        .iter()
        .copied()
        .filter(|k| *k >= k_coh)
        .max()
        .ok_or_else(|| CliError::Config(format!("sweep.coherence_k {k_coh} exceeds every calibrated rank")))?;
    let path = ws.artifact_path(cfg, source_k);
    if !path.exists() {
        return Err(CliError::MissingInput(format!(
            "no calibration artifact at {}; run `gsi calibrate` first",
            path.display()
        )));
    }
    let art = RuntimeArtifact::load(&path, &weights)?;
    let bases: Vec<_> = (0..art.runtime.n_layers())
        .map(|l| {
            art.runtime
                .bases(l)
                .expect("loaded artifacts carry bases")
                .model
                .clone()
        })
        .collect();
    let profile = coherence_profile(&bases, k_coh)?;
    let mut table = ReportTable::new("coherence", "Subspace overlap between consecutive layers")
        .column("layer_pair", ColumnKind::Text)
        .column("k", ColumnKind::Int)
        .float("mean_cosine", 4)
        .float("min_cosine", 4);
    for p in &profile.pairs {
        table.push(vec![
            format!("{}-{}", p.layer, p.layer + 1).into(),
            p.k.into(),
            p.mean_cosine.into(),
            p.min_cosine.into(),
        ])?;
    }
    table.footnote(format!(
        "cosines of principal angles between the leading {k_coh} columns of each layer's shared basis (artifact k = {source_k})"
    ));
    table.write(&ws.output_dir(cfg))?;
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct CostOutput {
    pub breakdown: ReportTable,
    pub roofline: ReportTable,
    /// Present when a sweep report exists.
    pub projected: Option<ReportTable>,
}

/// End-to-end cost model, roofline table and, when a sweep has run,
/// per-configuration projections from the measured gate statistics.
pub fn cmd_costmodel(ws: &Workspace, cfg: &ExperimentConfig) -> Result<CostOutput> {
    let c = &cfg.costmodel;
    let hw = cfg.hardware.profile();
    let eb = hw.element_bytes as f64;
    let (shapes, times, label) = match c.preset {
        CostPreset::GptjTable => (
            ModelShapes::gptj_6b(c.k),
            ComponentTimes::gptj_table(),
            "GPT-J 6B reference component costs",
        ),
        CostPreset::Model => {
            let weights = load_model(ws, cfg)?;
            let mc = weights.config;
            let k = c.k.min(mc.d_model);
            let kh = (k * mc.d_ff).div_ceil(mc.d_model).min(mc.d_ff);
            let shapes = mc.shapes(k, kh);
            let times = ComponentTimes::from_shapes(&shapes, &hw, c.context)?;
            (shapes, times, "roofline estimates at this model's shapes")
        }
    };
    let f_layers = vec![c.fast_fraction; shapes.n_layers()];
    let weight_speedup = model_speedup(&shapes.layer_volumes(&f_layers)?)?;
    let breakdown = end_to_end_estimate(&times, weight_speedup, c.attention_speedup)?;

    let mut table = ReportTable::new("costmodel", "End-to-end cost model")
        .column("component", ColumnKind::Text)
        .float("baseline_ms", 3)
        .float("accelerated_ms", 3)
        .float("speedup", 1);
    for comp in &breakdown.components {
        table.push(vec![
            comp.name.as_str().into(),
            (comp.baseline * 1e3).into(),
            (comp.accelerated * 1e3).into(),
            comp.speedup.into(),
        ])?;
    }
    table.push(vec![
        "total".into(),
        (breakdown.total_baseline * 1e3).into(),
        (breakdown.total_accelerated * 1e3).into(),
        breakdown.total_speedup.into(),
    ])?;
    let d = shapes.d_model;
    table.footnote(format!(
        "{label}; fast fraction {}, k = {}, attention speedup {} (supplied, not computed)",
        c.fast_fraction, c.k, c.attention_speedup
    ));
    table.footnote(format!(
        "per-layer weight-read speedup 1/(f*k/d + 1 - f) = {}",
        layer_speedup(c.fast_fraction, d, c.k.min(d))?
    ));
    table.footnote(format!(
        "effective parameters: {} from {} nominal parameters; {} summed over true gated-map shapes",
        effective_params_nominal(c.nominal_params, c.fast_fraction, d, c.k.min(d))?,
        c.nominal_params,
        effective_params(&shapes, &f_layers)?
    ));
    let per_layer = shapes.layers[0].iter().map(|m| (m.d_out * m.d_in) as f64).sum::<f64>() * eb;
    let square = 6.0 * (d * d) as f64 * eb;
    table.footnote(format!(
        "weight bytes per layer at true shapes: {per_layer} (treating every map as d x d would give {square})"
    ));

    let mut roofline = ReportTable::new("roofline", "Roofline placement")
        .column("operation", ColumnKind::Text)
        .float("bytes", 0)
        .float("flops", 0)
        .float("intensity", 2)
        .float("time_ms", 4)
        .column("regime", ColumnKind::Text);
    let params = shapes.gated_params() as f64;
    let k_frac = shapes.layer_volumes(&vec![1.0; shapes.n_layers()])?;
    let fast_elems: f64 = k_frac.iter().map(|v| v.fast_reads).sum();
    let ops = [
        ("dense weight pass (batch 1)", params * eb, 2.0 * params),
        ("gated fast path (batch 1)", fast_elems * eb, 2.0 * fast_elems),
        ("dense weight pass (batch 64)", params * eb, 128.0 * params),
        ("dense weight pass (batch 128)", params * eb, 256.0 * params),
    ];
    for (name, bytes, flops) in ops {
        let p = roofline_time(bytes, flops, &hw)?;
        roofline.push(vec![
            name.into(),
            bytes.into(),
            flops.into(),
            p.intensity.into(),
            (p.seconds * 1e3).into(),
            (match p.regime {
                Regime::BandwidthBound => "bandwidth_bound",
                Regime::ComputeBound => "compute_bound",
            })
            .into(),
        ])?;
    }
    roofline.footnote(format!(
        "bandwidth {} B/s, compute {} FLOP/s, {} bytes per element; crossover intensity {} FLOP/byte",
        hw.bandwidth,
        hw.compute,
        hw.element_bytes,
        hw.crossover_intensity()
    ));

    let dir = ws.output_dir(cfg);
    let sweep_layers = dir.join("sweep_layers.json");
    let projected = if sweep_layers.exists() {
        Some(project_sweep(ws, cfg, &ReportTable::read(&sweep_layers)?)?)
    } else {
        None
    };
    table.write(&dir)?;
    roofline.write(&dir)?;
    if let Some(p) = &projected {
        p.write(&dir)?;
    }
    Ok(CostOutput {
        breakdown: table,
        roofline,
        projected,
    })
}

/// Applies each swept configuration's measured per-layer fast fractions to
/// the model's own shapes.
fn project_sweep(ws: &Workspace, cfg: &ExperimentConfig, layers: &ReportTable) -> Result<ReportTable> {
    let weights = load_model(ws, cfg)?;
    let mc = weights.config;
    let hw = cfg.hardware.profile();
    let mut groups: Vec<((i64, Option<f64>, String), Vec<f64>)> = Vec::new();
    let bad = || CliError::MissingInput("sweep_layers.json has malformed rows; rerun `gsi sweep`".into());
    for row in 0..layers.rows.len() {
        let k = match layers.get(row, "k") {
            Some(Cell::Int(k)) => *k,
            _ => return Err(bad()),
        };
        let eps = match layers.get(row, "epsilon") {
            Some(Cell::Float(e)) => Some(*e),
            Some(Cell::Missing) => None,
            _ => return Err(bad()),
        };
        let mode = match layers.get(row, "mode") {
            Some(Cell::Text(m)) => m.clone(),
            _ => return Err(bad()),
        };
        let f = match layers.get(row, "fast_fraction") {
            Some(Cell::Float(f)) => *f,
            _ => return Err(bad()),
        };
        let key = (k, eps, mode);
        match groups.last_mut() {
            Some((last, fs)) if *last == key => fs.push(f),
            _ => groups.push((key, vec![f])),
        }
    }
    let mut table = ReportTable::new(
        "costmodel_sweep",
        "Projected cost at this model's shapes from measured gate statistics",
    )
    .column("k", ColumnKind::Int)
    .float("epsilon", 2)
    .column("mode", ColumnKind::Text)
    .float("fast_fraction", 4)
    .float("weight_speedup", 2)
    .float("effective_params", 0)
    .float("total_speedup", 2);
    for ((k, eps, mode), fs) in groups {
        if fs.len() != mc.n_layers {
            return Err(bad());
        }
        let k = k as usize;
        let kh = (k * mc.d_ff).div_ceil(mc.d_model).min(mc.d_ff);
        let shapes = mc.shapes(k, kh);
        let ws_ = model_speedup(&shapes.layer_volumes(&fs)?)?;
        let times = ComponentTimes::from_shapes(&shapes, &hw, cfg.costmodel.context)?;
        let total = end_to_end_estimate(&times, ws_, cfg.costmodel.attention_speedup)?;
        table.push(vec![
            k.into(),
            eps.into(),
            mode.into(),
            (fs.iter().sum::<f64>() / fs.len() as f64).into(),
            ws_.into(),
            effective_params(&shapes, &fs)?.into(),
            total.total_speedup.into(),
        ])?;
    }
    table.sort_by(&["k", "epsilon", "mode"]);
    table.footnote(
        "hidden rank assumed k*d_ff/d, as at calibration with ample tokens; gate projection reads are not charged",
    );
    Ok(table)
}

/// Renders every stored table as rounded Markdown into `report.md`.
pub fn cmd_report(ws: &Workspace, cfg: &ExperimentConfig) -> Result<String> {
    let dir = ws.output_dir(cfg);
    let entries = std::fs::read_dir(&dir).map_err(|e| {
        CliError::MissingInput(format!(
            "{}: {e}; run `gsi calibrate` or `gsi sweep` first",
            dir.display()
        ))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no report tables in {}; run `gsi calibrate` or `gsi sweep` first",
            dir.display()
        )));
    }
    let mut out = String::from("# Gated subspace inference report\n\n");
    for p in paths {
        out.push_str(&ReportTable::read(&p)?.to_markdown());
        out.push('\n');
    }
    let md = dir.join("report.md");
    std::fs::write(&md, &out).map_err(|e| CliError::io(&md, e))?;
    Ok(out)
}

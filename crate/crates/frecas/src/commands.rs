//! The experiment commands behind the CLI verbs.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use frecas_core::bank::procedural::item_seed;
use frecas_core::bank::LatentBank;
use frecas_core::cascade::{
    compute_cost, run_frecas, schedule_for, RunOptions, RunOutput, StagePlan, PRESET_NAMES,
};
use frecas_core::codec::LatentCodec;
use frecas_core::freq::{fig1_curves, radial_psd, Fig1Curves, PsdCurve};
use frecas_core::grid::seeded_gaussian;
use frecas_core::schedule::NoiseSchedule;
use frecas_core::{LatentGrid, Resolution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dump::write_grid;
use crate::error::{CliError, Result};
use crate::manifest::{Outputs, RunManifest};
use crate::pnm::{encode_channel_pgms, encode_pnm, pnm_extension};

/// Share of radial bins counted as the low (or high) band in summaries.
pub const BAND_FRACTION: f64 = 0.25;

pub const THREADS_ENV: &str = "FRECAS_THREADS";

/// Thread cap from `FRECAS_THREADS`; `None` leaves the pool default.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Maps `f` over `items` in order, on a rayon pool when `parallel`.
fn ordered_map<T, R, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if !parallel {
        return items.iter().map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdRow {
    pub bin: usize,
    pub freq: f64,
    pub psd_total: f64,
    pub psd_noise: f64,
    pub psd_signal: f64,
}

pub fn psd_rows(curves: &Fig1Curves) -> Vec<PsdRow> {
    (0..curves.total.len())
        .map(|i| PsdRow {
            bin: i,
            freq: curves.total.freqs[i],
            psd_total: curves.total.power[i],
            psd_noise: curves.noise.power[i],
            psd_signal: curves.signal.power[i],
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Curves of a clean grid: total and signal equal its PSD, noise is zero.
pub fn clean_curves(g: &LatentGrid) -> Result<Fig1Curves> {
    let res = g.resolution()?;
    let total = radial_psd(g, res.side() / 2)?;
    let noise = PsdCurve {
        power: vec![0.0; total.len()],
        ..total.clone()
    };
    Ok(Fig1Curves {
        signal: total.clone(),
        noise,
        total,
    })
}

pub fn run_config(cfg: &RunConfig, bank: &LatentBank, keep_stages: bool) -> Result<RunOutput> {
    let plan = cfg.resolve_plan()?;
    run_plan(cfg, &plan, bank, keep_stages, false)
}

fn run_plan(
    cfg: &RunConfig,
    plan: &StagePlan,
    bank: &LatentBank,
    keep_stages: bool,
    plain_cfg: bool,
) -> Result<RunOutput> {
    let sched = schedule_for(plan);
    let opts = RunOptions {
        verify: cfg.verify,
        keep_stages,
        patch: cfg.patch,
        plain_cfg,
    };
    Ok(run_frecas(
        plan,
        cfg.codec,
        bank,
        &sched,
        cfg.condition,
        cfg.seed,
        &opts,
    )?)
}

/// `sample`: one run, written to `cfg.out`.
pub fn sample(cfg: &RunConfig, dump_stages: bool) -> Result<RunManifest> {
    let plan = cfg.resolve_plan()?;
    let bank = cfg.load_bank(&plan)?;
    let out = run_plan(cfg, &plan, &bank, dump_stages, false)?;
    let dir = cfg.out.as_path();
    create_dir(dir)?;

    let mut outputs = Outputs {
        image_raw: "image.frcg".into(),
        latent_raw: "latent.frcg".into(),
        psd_csv: "psd.csv".into(),
        ..Default::default()
    };
    write_grid(&dir.join(&outputs.image_raw), &out.image)?;
    write_grid(&dir.join(&outputs.latent_raw), &out.latent)?;
    match (encode_pnm(&out.image), pnm_extension(out.image.channels())) {
        (Some(bytes), Some(ext)) => {
            let name = format!("image.{ext}");
            write_file(&dir.join(&name), &bytes)?;
            outputs.images.push(name);
        }
        _ => {
            for (k, bytes) in encode_channel_pgms(&out.image).iter().enumerate() {
                let name = format!("image_c{k}.pgm");
                write_file(&dir.join(&name), bytes)?;
                outputs.images.push(name);
            }
        }
    }
    write_csv(
        &dir.join(&outputs.psd_csv),
        &psd_rows(&clean_curves(&out.image)?),
    )?;
    if dump_stages {
        create_dir(&dir.join("stages"))?;
        for (i, st) in out.stages.iter().enumerate() {
            for (tag, g) in [("first", &st.z_first), ("last", &st.z_last)] {
                let name = format!("stages/stage{i}_{tag}.frcg");
                write_grid(&dir.join(&name), g)?;
                outputs.stage_dumps.push(name);
            }
        }
    }

    let cost = out.report.cost_units;
    let direct = compute_cost(&plan.direct_baseline()?);
    let manifest = RunManifest {
        seed: cfg.seed,
        condition: cfg.condition,
        preset: cfg.preset_name().map(str::to_owned),
        codec: cfg.codec,
        bank: cfg.bank.resolved(plan.final_resolution().side()),
        cost_units: cost,
        direct_cost_units: direct,
        proxy_speedup: direct / cost,
        outputs,
        plan,
        stages: out.report.stages,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Seed of the forward-diffusion noise applied to bank item `index`.
pub fn psd_noise_seed(seed: u64, index: usize) -> u64 {
    item_seed(seed ^ 0x9e37_79b9_7f4a_7c15, index)
}

/// Bank-averaged curves at each timestep; every item keeps one noise
/// realization across timesteps.
pub fn psd_curves(
    bank: &LatentBank,
    timesteps: &[f64],
    n_bins: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<Fig1Curves>> {
    let sched = NoiseSchedule::sd_default();
    let indexed: Vec<usize> = (0..bank.len()).collect();
    let per_item = ordered_map(&indexed, parallel, |&i| {
        let z0 = &bank.items()[i].latent;
        let noise = seeded_gaussian(z0.shape(), psd_noise_seed(seed, i));
        timesteps
            .iter()
            .map(|&t| Ok(fig1_curves(z0, &noise, t, &sched, n_bins)?))
            .collect::<Result<Vec<_>>>()
    })?;
    (0..timesteps.len())
        .map(|k| {
            let at_t: Vec<Fig1Curves> = per_item.iter().map(|v| v[k].clone()).collect();
            Ok(Fig1Curves::mean(&at_t)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSummaryRow {
    pub t: f64,
    pub alpha: f64,
    pub low_band_signal_fraction: f64,
    pub high_band_signal_fraction: f64,
}

pub fn psd_summary(timesteps: &[f64], curves: &[Fig1Curves]) -> Result<Vec<PsdSummaryRow>> {
    let sched = NoiseSchedule::sd_default();
    timesteps
        .iter()
        .zip(curves)
        .map(|(&t, c)| {
            Ok(PsdSummaryRow {
                t,
                alpha: sched.alpha_at(t)?,
                low_band_signal_fraction: c.signal.low_band_fraction(BAND_FRACTION),
                high_band_signal_fraction: c.signal.high_band_fraction(BAND_FRACTION),
            })
        })
        .collect()
}

pub fn psd_file_name(t: f64) -> String {
    format!("psd_t{t}.csv")
}

pub const PSD_SUMMARY_FILE: &str = "psd_summary.csv";

/// `psd`: one CSV per timestep plus the summary, written to `cfg.out`.
pub fn psd(
    cfg: &RunConfig,
    timesteps: &[f64],
    n_bins: Option<usize>,
    parallel: bool,
) -> Result<Vec<PsdSummaryRow>> {
    if timesteps.is_empty() {
        return Err(CliError::Usage("no timesteps given".into()));
    }
    let bank = cfg.load_bank(&cfg.resolve_plan()?)?;
    let n_bins = n_bins.unwrap_or(bank.resolution().side() / 2);
    let curves = psd_curves(&bank, timesteps, n_bins, cfg.seed, parallel)?;
    let dir = cfg.out.as_path();
    create_dir(dir)?;
    for (&t, c) in timesteps.iter().zip(&curves) {
        write_csv(&dir.join(psd_file_name(t)), &psd_rows(c))?;
    }
    let summary = psd_summary(timesteps, &curves)?;
    write_csv(&dir.join(PSD_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateParam {
    WHigh,
    WLow,
    WC,
    /// Additional stages.
    N,
    /// Last timestep of non-final stages.
    L,
}

impl AblateParam {
    pub fn name(self) -> &'static str {
        match self {
            AblateParam::WHigh => "w_h",
            AblateParam::WLow => "w_l",
            AblateParam::WC => "w_c",
            AblateParam::N => "N",
            AblateParam::L => "L",
        }
    }

    pub fn apply(self, plan: &StagePlan, value: f64) -> Result<StagePlan> {
        let plan = plan.clone();
        let applied = match self {
            AblateParam::WHigh => plan.with_w_high(value),
            AblateParam::WLow => plan.with_w_low(value),
            AblateParam::WC => plan.with_w_c(value),
            AblateParam::L => plan.with_last_timestep(value),
            AblateParam::N => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(CliError::Usage(format!(
                        "N must be a non-negative integer, got {value}"
                    )));
                }
                plan.with_additional_stages(value as usize)
            }
        };
        applied.map_err(|e| CliError::Usage(format!("{}={value}: {e}", self.name())))
    }
}

impl FromStr for AblateParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w_h" => Ok(AblateParam::WHigh),
            "w_l" => Ok(AblateParam::WLow),
            "w_c" => Ok(AblateParam::WC),
            "N" | "n" => Ok(AblateParam::N),
            "L" | "l" => Ok(AblateParam::L),
            _ => Err(CliError::Usage(format!(
                "unknown ablation parameter {s:?} (expected w_h, w_l, w_c, N or L)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub value: f64,
    pub cost_units: f64,
    pub high_band_energy: f64,
    pub low_band_energy: f64,
    pub bank_psd_distance: f64,
}

/// Mean radial PSD of the bank's items decoded at `latent` resolution.
pub fn bank_image_psd(
    bank: &LatentBank,
    latent: Resolution,
    codec: LatentCodec,
) -> Result<PsdCurve> {
    let resampled = bank.resample(latent);
    let curves = resampled
        .items()
        .iter()
        .map(|it| {
            let img = codec.decode(&it.latent)?;
            radial_psd(&img, img.width() / 2)
        })
        .collect::<frecas_core::Result<Vec<_>>>()?;
    Ok(PsdCurve::mean(&curves)?)
}

/// Ablation metrics of one output image against a reference bank PSD.
pub fn image_metrics(image: &LatentGrid, bank_psd: &PsdCurve) -> Result<(f64, f64, f64)> {
    let psd = radial_psd(image, image.width() / 2)?;
    let n = psd.len();
    let k = psd.band_bins(BAND_FRACTION);
    let low = psd.band_energy(0..k);
    let high = psd.band_energy(n - k..n);
    let dist = psd.l2_distance(bank_psd)?;
    Ok((high, low, dist))
}

pub fn ablate_rows(
    cfg: &RunConfig,
    param: AblateParam,
    values: &[f64],
    plain_cfg: bool,
    parallel: bool,
) -> Result<Vec<AblateRow>> {
    let base = cfg.resolve_plan()?;
    let bank = cfg.load_bank(&base)?;
    let plans = values
        .iter()
        .map(|&v| param.apply(&base, v))
        .collect::<Result<Vec<_>>>()?;
    let bank_psd = bank_image_psd(&bank, base.final_resolution(), cfg.codec)?;
    let jobs: Vec<(f64, StagePlan)> = values.iter().copied().zip(plans).collect();
    ordered_map(&jobs, parallel, |(value, plan)| {
        let out = run_plan(cfg, plan, &bank, false, plain_cfg)?;
        let (high, low, dist) = image_metrics(&out.image, &bank_psd)?;
        Ok(AblateRow {
            value: *value,
            cost_units: out.report.cost_units,
            high_band_energy: high,
            low_band_energy: low,
            bank_psd_distance: dist,
        })
    })
}

pub fn ablate_file_name(param: AblateParam) -> String {
    format!("ablate_{}.csv", param.name())
}

/// `ablate`: one run per value with the configured seed.
pub fn ablate(
    cfg: &RunConfig,
    param: AblateParam,
    values: &[f64],
    parallel: bool,
) -> Result<Vec<AblateRow>> {
    if values.is_empty() {
        return Err(CliError::Usage("no ablation values given".into()));
    }
    let rows = ablate_rows(cfg, param, values, false, parallel)?;
    create_dir(&cfg.out)?;
    write_csv(&cfg.out.join(ablate_file_name(param)), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub seconds: Vec<f64>,
    pub cost_units: Vec<f64>,
    pub direct_cost_units: f64,
}

impl BenchReport {
    /// Mean wall-clock time of the last three runs.
    pub fn mean_last_three(&self) -> f64 {
        let tail = &self.seconds[self.seconds.len().saturating_sub(3)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn proxy_speedup(&self) -> f64 {
        self.direct_cost_units / self.cost_units[0]
    }
}

pub const BENCH_RUNS: usize = 5;

/// `bench`: repeated identical runs; timings are informational.
pub fn bench(cfg: &RunConfig, runs: usize) -> Result<BenchReport> {
    if runs < 3 {
        return Err(CliError::Usage("bench needs at least 3 runs".into()));
    }
    let plan = cfg.resolve_plan()?;
    let bank = cfg.load_bank(&plan)?;
    let mut seconds = Vec::with_capacity(runs);
    let mut cost_units = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = run_plan(cfg, &plan, &bank, false, false)?;
        seconds.push(start.elapsed().as_secs_f64());
        cost_units.push(out.report.cost_units);
    }
    Ok(BenchReport {
        seconds,
        cost_units,
        direct_cost_units: compute_cost(&plan.direct_baseline()?),
    })
}

/// `presets`: one line per shipped preset.
pub fn presets_table(base_side: usize) -> Result<String> {
    let mut out = String::from("name      sides        steps      L           gamma  w_l  w_h   w_c  cost  direct  speedup\n");
    for name in PRESET_NAMES {
        let p = StagePlan::preset(name, base_side).map_err(|e| CliError::Usage(e.to_string()))?;
        let join = |f: &dyn Fn(&frecas_core::cascade::StageSpec) -> String| {
            p.stages.iter().map(f).collect::<Vec<_>>().join(",")
        };
        let last = &p.stages[..p.stages.len() - 1];
        let ls = last
            .iter()
            .map(|s| s.last_timestep.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let cost = compute_cost(&p);
        let direct = compute_cost(&p.direct_baseline()?);
        out.push_str(&format!(
            "{:<9} {:<12} {:<10} {:<11} {:<6} {:<4} {:<5} {:<4} {:<5} {:<7} {:.2}\n",
            name,
            join(&|s| s.resolution.side().to_string()),
            join(&|s| s.steps.to_string()),
            ls,
            p.gamma,
            p.stages[0].w_low,
            p.stages[1].w_high,
            p.stages[1].w_c,
            cost,
            direct,
            direct / cost
        ));
    }
    Ok(out)
}

//! Command implementations and atomic output staging.

use crate::config::RunConfig;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use viscoflow::decay::{self, decay_preset, SmallStrainScenario};
use viscoflow::diagnostics;
use viscoflow::field::{write_checkpoint, AdmissibleSet, DeformationField, LoadField};
use viscoflow::mms::{self, Trajectory};
use viscoflow::propcheck::{
    rigidity_korn_study, SampleSpec, KORN_C_HAT, RIGIDITY_C_HAT,
};
use viscoflow::slope::local_slope;

pub enum RunError {
    Validation(String),
    Solver(String),
    Property(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<viscoflow::mms::MmsError> for RunError {
    fn from(e: viscoflow::mms::MmsError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<viscoflow::field::FieldError> for RunError {
    fn from(e: viscoflow::field::FieldError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<viscoflow::decay::DecayError> for RunError {
    fn from(e: viscoflow::decay::DecayError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<viscoflow::diagnostics::DiagnosticsError> for RunError {
    fn from(e: viscoflow::diagnostics::DiagnosticsError) -> Self {
        RunError::Solver(e.to_string())
    }
}

impl From<viscoflow::propcheck::PropcheckError> for RunError {
    fn from(e: viscoflow::propcheck::PropcheckError) -> Self {
        RunError::Solver(e.to_string())
    }
}

/// Output staging: everything is written into a temporary sibling
/// directory, which is renamed to the target on success.
struct Stage {
    tmp: PathBuf,
    target: PathBuf,
}

impl Stage {
    fn new(target: &Path) -> Result<Stage, RunError> {
        if target.exists() {
            return Err(RunError::Validation(format!(
                "output directory {} already exists",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| RunError::Validation("bad output path".into()))?
            .to_string_lossy()
            .into_owned();
        let tmp = target.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Stage { tmp, target: target.to_path_buf() })
    }

    fn write(&self, rel: &str, contents: &str) -> Result<(), RunError> {
        let path = self.tmp.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        Ok(())
    }

    fn write_field(&self, rel: &str, field: &DeformationField<f64>, pt: f64) -> Result<(), RunError> {
        let path = self.tmp.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        write_checkpoint(&mut f, field, pt)?;
        f.flush()?;
        Ok(())
    }

    /// Write meta.json (the only file allowed to contain wall-clock data)
    /// and move the staged directory into place.
    fn finish(self, command: &str, cfg: &RunConfig) -> Result<(), RunError> {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = format!(
            "{{\"command\":\"{command}\",\"scenario\":\"{}\",\"seed\":{},\"p_tilde\":{:.17e},\"tau\":{:.17e},\"unix_timestamp\":{now}}}\n",
            cfg.scenario, cfg.seed, cfg.params.p_tilde, cfg.stepper.tau
        );
        self.write("meta.json", &meta)?;
        fs::rename(&self.tmp, &self.target)?;
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if self.tmp.exists() {
            fs::remove_dir_all(&self.tmp).ok();
        }
    }
}

fn assemble(
    cfg: &RunConfig,
) -> Result<(AdmissibleSet<f64>, LoadField<f64>, DeformationField<f64>, SmallStrainScenario<f64>), RunError>
{
    let scenario = SmallStrainScenario::reference(cfg.grid, cfg.params.delta);
    let (adm, load, y0) = scenario
        .assemble(cfg.params.clone(), 1e6)
        .map_err(|e| RunError::Validation(e.to_string()))?;
    Ok((adm, load, y0, scenario))
}

fn trajectory_csv(traj: &Trajectory<f64>) -> String {
    let mut out = String::from("n,t,phi,metric_increment,inner_iters,flagged\n");
    let _ = writeln!(out, "0,{:.17e},{:.17e},{:.17e},0,0", 0.0, traj.phi0, 0.0);
    for (i, rec) in traj.records.iter().enumerate() {
        let n = i + 1;
        let _ = writeln!(
            out,
            "{n},{:.17e},{:.17e},{:.17e},{},{}",
            n as f64 * traj.tau,
            rec.phi,
            rec.metric_increment,
            rec.inner_iters,
            u8::from(rec.flagged)
        );
    }
    out
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), RunError> {
    let stage = Stage::new(out)?;
    let (adm, load, y0, _) = assemble(cfg)?;
    let traj = mms::run(&adm, &load, &cfg.stepper, y0)?;
    if traj.has_flagged_steps() {
        return Err(RunError::Solver("trajectory contains flagged steps".into()));
    }
    stage.write("trajectory.csv", &trajectory_csv(&traj))?;
    let report = diagnostics::edb_report(&adm, &load, &cfg.stepper, &traj)?;
    let mut edb = Vec::new();
    report.write_csv(&mut edb).map_err(|e| RunError::Solver(e.to_string()))?;
    stage.write("edb.csv", &String::from_utf8_lossy(&edb))?;
    stage.write("summary.json", &format!("{}\n", report.summary_json()))?;
    let pt = adm.params.p_tilde;
    if cfg.checkpoint_every > 0 {
        for n in (0..=traj.len()).step_by(cfg.checkpoint_every) {
            stage.write_field(&format!("fields/step-{n:06}.bin"), &traj.fields[n], pt)?;
        }
    }
    stage.write_field("fields/final.bin", traj.fields.last().unwrap(), pt)?;
    stage.finish("simulate", cfg)
}

pub fn slope(cfg: &RunConfig, out: &Path) -> Result<(), RunError> {
    let stage = Stage::new(out)?;
    let (adm, load, y0, _) = assemble(cfg)?;
    let result = local_slope(&adm, &load, &cfg.stepper, &y0)?;
    if result.flagged {
        return Err(RunError::Solver("dual slope solve did not converge".into()));
    }
    stage.write(
        "slope.json",
        &format!(
            "{{\"slope\":{:.17e},\"residual\":{:.17e},\"iters\":{}}}\n",
            result.slope, result.residual, result.iters
        ),
    )?;
    stage.write_field("fields/wbar.bin", &result.wbar, adm.params.p_tilde)?;
    stage.finish("slope", cfg)
}

pub fn decay(cfg: &RunConfig, out: &Path, only_pt: Option<f64>) -> Result<(), RunError> {
    let stage = Stage::new(out)?;
    let presets: Vec<f64> = match only_pt {
        Some(pt) => vec![pt],
        None => vec![1.5, 2.0, 3.0],
    };
    let mut summaries = Vec::new();
    for pt in presets {
        let (params, run_cfg, scenario, floor) = decay_preset(pt);
        let (adm, load, y0) = scenario
            .assemble(params, 1e6)
            .map_err(|e| RunError::Validation(e.to_string()))?;
        let traj = mms::run(&adm, &load, &run_cfg, y0)?;
        if traj.has_flagged_steps() {
            return Err(RunError::Solver(format!("flagged steps in the p_tilde = {pt} run")));
        }
        let gaps = decay::gap_series(&traj, 0.0);
        let report = if pt == 2.0 {
            decay::fit_exponential(gaps, floor)?
        } else if pt < 2.0 {
            decay::fit_polynomial(gaps, pt, floor)?
        } else {
            decay::detect_extinction(gaps, floor)
        };
        let mut csv = Vec::new();
        report.write_gap_csv(&mut csv).map_err(|e| RunError::Solver(e.to_string()))?;
        let tag = format!("{pt}").replace('.', "_");
        stage.write(&format!("gap_pt{tag}.csv"), &String::from_utf8_lossy(&csv))?;
        summaries.push(format!("{{\"p_tilde\":{pt},\"report\":{}}}", report.summary_json()));
    }
    stage.write("decay.json", &format!("[{}]\n", summaries.join(",")))?;
    stage.finish("decay", cfg)
}

pub fn propcheck(cfg: &RunConfig, out: &Path) -> Result<(), RunError> {
    let stage = Stage::new(out)?;
    let spec = SampleSpec {
        seed: cfg.seed,
        count: cfg.sample_count,
        amplitude: cfg.sample_amplitude,
        degree: cfg.sample_degree,
        ceiling_m: 1e6,
    };
    let mut blocks = Vec::new();
    let mut violation = None;
    for n in [17usize, 33] {
        let grid = viscoflow::field::Grid::new(2, n);
        let (rig, korn) = rigidity_korn_study(grid, &cfg.params, &spec)?;
        if rig.max_ratio > 1.5 * RIGIDITY_C_HAT {
            violation = Some(format!("rigidity ratio {} exceeds budget on {n}x{n}", rig.max_ratio));
        }
        if korn.max_ratio > 1.5 * KORN_C_HAT {
            violation = Some(format!("korn ratio {} exceeds budget on {n}x{n}", korn.max_ratio));
        }
        blocks.push(format!(
            "{{\"grid_n\":{n},\"rigidity\":{},\"korn\":{}}}",
            rig.json(),
            korn.json()
        ));
    }
    stage.write(
        "propcheck.json",
        &format!(
            "{{\"calibrated\":{{\"rigidity_c_hat\":{RIGIDITY_C_HAT},\"korn_c_hat\":{KORN_C_HAT},\"safety_factor\":1.5}},\"grids\":[{}]}}\n",
            blocks.join(",")
        ),
    )?;
    stage.finish("propcheck", cfg)?;
    match violation {
        Some(msg) => Err(RunError::Property(msg)),
        None => Ok(()),
    }
}

pub fn convergence(cfg: &RunConfig, out: &Path) -> Result<(), RunError> {
    let stage = Stage::new(out)?;
    let mut rows = String::from("tau,edb_residual,dissipation_identity_residual\n");
    let mut residuals = Vec::new();
    for tau in [1e-2, 5e-3, 2.5e-3] {
        let (adm, load, y0, _) = assemble(cfg)?;
        let mut run_cfg = cfg.stepper.clone();
        run_cfg.tau = tau;
        let traj = mms::run(&adm, &load, &run_cfg, y0)?;
        let report = diagnostics::edb_report(&adm, &load, &run_cfg, &traj)?;
        let _ = writeln!(
            rows,
            "{tau:.17e},{:.17e},{:.17e}",
            report.final_residual, report.dissipation_identity_residual
        );
        residuals.push((report.final_residual.abs(), report.dissipation_identity_residual.abs()));
    }
    stage.write("edb_convergence.csv", &rows)?;
    let monotone = residuals.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);
    stage.write(
        "convergence.json",
        &format!("{{\"taus\":[1e-2,5e-3,2.5e-3],\"residuals_decrease\":{monotone}}}\n"),
    )?;
    stage.finish("convergence", cfg)?;
    if !monotone {
        return Err(RunError::Property("EDB residuals did not decrease under refinement".into()));
    }
    Ok(())
}

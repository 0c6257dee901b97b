use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rip_core::downsample::{downsample, uniform_downsample, DEFAULT_TARGET_LEN};
use rip_core::estimator::gradcheck::MAX_REL_ERROR;
use rip_core::estimator::{Dof, FitConfig};
use rip_core::experiments::{
    run_demo_sweep, run_downsample_bench, run_gradchecks, run_sweep, CellResult, DemoCellResult, DemoSweepSpec,
    DownsampleBenchSpec, DownsampleRow, SweepSpec,
};
use rip_core::pipeline::{self, preprocess_context, Method, Preprocess};
use rip_core::policy::{
    make_task, Backend, PolicyConfig, RemoteConfig, SyntheticOracleConfig, TaskShape, TaskSpec, DEFAULT_QUERY_COUNT,
};
use rip_core::tokenizer::PolicyContext;
use rip_core::types::Trajectory;

use crate::args::*;
use crate::config::merge;
use crate::error::{runtime, usage, CliError};

fn oracle_config(seed: u64, a: &OracleArgs) -> SyntheticOracleConfig {
    let d = SyntheticOracleConfig::default();
    SyntheticOracleConfig {
        seed,
        noise: a.noise.unwrap_or(d.noise),
        hallucination_prob: a.p_h.unwrap_or(d.hallucination_prob),
        hallucination_offset: a.delta.unwrap_or(d.hallucination_offset),
        mode: a.mode.unwrap_or(d.mode),
        length_jitter: a.jitter.unwrap_or(d.length_jitter),
        planted: a.planted.unwrap_or(d.planted),
    }
}

fn remote_config(a: &RemoteArgs) -> RemoteConfig {
    let d = RemoteConfig::default();
    RemoteConfig {
        endpoint: a.endpoint.clone().unwrap_or(d.endpoint),
        model: a.model.clone().unwrap_or(d.model),
        temperature: a.temperature.unwrap_or(d.temperature),
        timeout_secs: a.timeout.unwrap_or(d.timeout_secs),
        max_retries: a.retries.unwrap_or(d.max_retries),
        api_key_env: a.api_key_env.clone().unwrap_or(d.api_key_env),
        preamble_path: a.preamble.clone().or(d.preamble_path),
        log_queries: a.log_queries.clone().or(d.log_queries),
    }
}

fn fit_config(base: FitConfig, nu: Option<Dof>, seed: u64, a: &FitArgs) -> Result<FitConfig, CliError> {
    let config = FitConfig {
        dof: nu.unwrap_or(base.dof),
        steps: a.steps.unwrap_or(base.steps),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch.unwrap_or(base.batch_size),
        hidden: a.hidden.clone().unwrap_or(base.hidden.clone()),
        harmonics: a.harmonics.unwrap_or(base.harmonics),
        seed,
        ..base
    };
    config.validate().map_err(usage)?;
    Ok(config)
}

fn policy_config(
    backend: Backend,
    q: usize,
    seed: u64,
    oracle: &OracleArgs,
    remote: &RemoteArgs,
) -> Result<PolicyConfig, CliError> {
    let config = PolicyConfig {
        backend,
        query_count: q,
        synthetic: oracle_config(seed, oracle),
        remote: remote_config(remote),
        ..PolicyConfig::default()
    };
    config.validate().map_err(usage)?;
    Ok(config)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Writes rows under `header`. An existing non-empty file must carry the same
/// header and is appended to; the header is never written twice.
fn write_csv(path: Option<&Path>, header: &str, rows: &[String]) -> Result<(), CliError> {
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    let Some(path) = path else {
        print!("{header}\n{body}");
        return Ok(());
    };
    let fail = |e: std::io::Error| usage(format!("{}: {e}", path.display()));
    let existing = match fs::File::open(path) {
        Ok(f) => BufReader::new(f).lines().next().transpose().map_err(fail)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(fail(e)),
    };
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(fail)?;
    match existing {
        Some(first) if first.trim_end() == header => {}
        Some(first) if !first.is_empty() => {
            return Err(usage(format!("{}: existing header {first:?} differs from {header:?}", path.display())))
        }
        _ => writeln!(file, "{header}").map_err(fail)?,
    }
    file.write_all(body.as_bytes()).map_err(fail)
}

fn plot_file(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    let path = dir.join(name);
    fs::write(&path, format!("{header}\n{body}")).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn positive(name: &str, value: usize) -> Result<usize, CliError> {
    if value == 0 {
        Err(usage(format!("--{name} must be at least 1")))
    } else {
        Ok(value)
    }
}

pub fn aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let method = a.method.unwrap_or(Method::Rip);
    let q = positive("q", a.q.unwrap_or(DEFAULT_QUERY_COUNT))?;
    let policy = policy_config(a.backend.unwrap_or(Backend::Synthetic), q, seed, &a.oracle, &a.remote)?;
    let fit = fit_config(FitConfig::default(), a.nu, seed, &a.fit)?;

    let context = match &a.context {
        Some(path) => PolicyContext::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => {
            let shape = a.shape.unwrap_or(TaskShape::Pick);
            let spec = TaskSpec { demonstrations: positive("demos", a.demos.unwrap_or(3))?, ..TaskSpec::new(shape) };
            make_task(seed, &spec).context
        }
    };
    let target = positive("target-len", a.target_len.unwrap_or(DEFAULT_TARGET_LEN))?;
    let preprocess = match a.downsample.unwrap_or(Thinning::None) {
        Thinning::None => Preprocess::None,
        Thinning::Uniform => Preprocess::Uniform(target),
        Thinning::GBased => Preprocess::GripperAware(target),
    };
    let context = preprocess_context(&context, preprocess).map_err(usage)?;

    let mut out = pipeline::run(method, &context, &policy, &fit).map_err(runtime)?;
    out.report.output_path = a.out.as_ref().map(|p| p.display().to_string());
    write_text(a.out.as_deref(), &(out.trajectory.to_json() + "\n"))?;
    if let Some(path) = &a.report {
        write_text(Some(path), &(out.report.to_json() + "\n"))?;
    }
    eprintln!(
        "{method:?}: {} of {} samples decoded, {} steps{}",
        out.report.decoded,
        out.report.query_count,
        out.report.bundle_len,
        out.report.final_loss.map(|l| format!(", final loss {l:.6}")).unwrap_or_default()
    );
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let d = SweepSpec::default();
    let spec = SweepSpec {
        qs: a.qs.clone().unwrap_or(d.qs),
        nus: a.nus.clone().unwrap_or(d.nus),
        trials: a.trials.unwrap_or(d.trials),
        seed,
        shapes: a.shapes.clone().unwrap_or(d.shapes),
        oracle: oracle_config(seed, &a.oracle),
        fit: fit_config(FitConfig::desk(), None, seed, &a.fit)?,
    };
    spec.validate().map_err(usage)?;
    let cells = run_sweep(&spec).map_err(runtime)?;
    let rows: Vec<String> = cells.iter().map(CellResult::csv_row).collect();
    write_csv(a.out.as_deref(), CellResult::CSV_HEADER, &rows)?;
    if let Some(dir) = &a.plot_data {
        let mut by_nu: Vec<&CellResult> = cells.iter().collect();
        by_nu.sort_by_key(|c| spec.nus.iter().position(|n| *n == c.nu));
        let rows: Vec<String> =
            by_nu.iter().map(|c| format!("{},{},{:.6},{}", c.nu, c.q, c.success_rate, c.n_trials)).collect();
        plot_file(dir, "success_vs_q.csv", "nu,Q,success_rate,n_trials", &rows)?;
        let rows: Vec<String> =
            cells.iter().map(|c| format!("{},{},{:.6},{}", c.q, c.nu, c.success_rate, c.n_trials)).collect();
        plot_file(dir, "success_vs_nu.csv", "Q,nu,success_rate,n_trials", &rows)?;
    }
    Ok(())
}

pub fn demo_sweep(args: &DemoSweepArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let backend = a.backend.unwrap_or(Backend::Remote);
    if backend == Backend::Synthetic {
        eprintln!("note: the synthetic oracle ignores all but the nearest demonstration; expect flat curves");
    }
    let q = positive("q", a.q.unwrap_or(DEFAULT_QUERY_COUNT))?;
    let spec = DemoSweepSpec {
        demos: a.demos.clone().unwrap_or_else(|| vec![1, 2, 5, 10, 20]),
        trials: positive("trials", a.trials.unwrap_or(10))?,
        seed,
        shapes: a.shapes.clone().unwrap_or_else(|| TaskShape::ALL.to_vec()),
        method: a.method.unwrap_or(Method::Rip),
        policy: policy_config(backend, q, seed, &a.oracle, &a.remote)?,
        fit: fit_config(FitConfig::desk(), a.nu, seed, &a.fit)?,
    };
    let cells = run_demo_sweep(&spec).map_err(|e| match e {
        rip_core::pipeline::PipelineError::Config(m) => usage(m),
        other => runtime(other),
    })?;
    let rows: Vec<String> = cells.iter().map(DemoCellResult::csv_row).collect();
    write_csv(a.out.as_deref(), DemoCellResult::CSV_HEADER, &rows)?;
    if let Some(dir) = &a.plot_data {
        plot_file(dir, "success_vs_demos.csv", DemoCellResult::CSV_HEADER, &rows)?;
    }
    Ok(())
}

pub fn downsample_bench(args: &DownsampleBenchArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let d = DownsampleBenchSpec::default();
    let spec = DownsampleBenchSpec {
        seeds: positive("seeds", a.seeds.unwrap_or(d.seeds))?,
        seed,
        shape: a.shape.unwrap_or(d.shape),
        target_len: a.target_len.unwrap_or(d.target_len),
        query_count: positive("q", a.q.unwrap_or(d.query_count))?,
        oracle: oracle_config(seed, &a.oracle),
        fit: fit_config(FitConfig::desk(), a.nu, seed, &a.fit)?,
    };
    if spec.shape == TaskShape::Push {
        return Err(usage("downsample-bench supports pick and reach tasks"));
    }
    if spec.target_len < 6 {
        return Err(usage("--target-len must leave room for the gripper mask (at least 6)"));
    }
    spec.oracle.validate().map_err(usage)?;
    let rows = run_downsample_bench(&spec).map_err(runtime)?;
    let lines: Vec<String> = rows.iter().map(DownsampleRow::csv_row).collect();
    write_csv(a.out.as_deref(), DownsampleRow::CSV_HEADER, &lines)?;
    let n = rows.len();
    let uniform = rows.iter().filter(|r| r.uniform_success).count();
    let g_based = rows.iter().filter(|r| r.gripper_aware_success).count();
    let dominated = rows.iter().filter(|r| r.gripper_aware_success || !r.uniform_success).count();
    eprintln!("uniform {uniform}/{n}, g-based {g_based}/{n}, g-based >= uniform on {dominated}/{n} seeds");
    if let Some(dir) = &a.plot_data {
        let rows = vec![
            format!("normal,{:.6},{n}", uniform as f64 / n as f64),
            format!("g-based,{:.6},{n}", g_based as f64 / n as f64),
        ];
        plot_file(dir, "success_vs_downsampling.csv", "method,success_rate,n_trials", &rows)?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let runs = positive("runs", a.runs.unwrap_or(20))?;
    let dofs = match a.nu {
        Some(nu) => vec![nu],
        None => vec![Dof::Finite(1.25), Dof::Finite(1.5), Dof::Finite(3.0), Dof::Infinite],
    };
    let reports = run_gradchecks(a.seed.unwrap_or(0), runs, &dofs).map_err(runtime)?;
    for (i, r) in reports.iter().enumerate() {
        println!("run {i}: nu={} params={} max_rel_error={:.3e}", r.dof, r.params, r.max_rel_error);
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("max_rel_error {worst:.3e}");
    if worst > MAX_REL_ERROR {
        return Err(CliError::Breach(format!("max relative error {worst:.3e} > {MAX_REL_ERROR:e}")));
    }
    Ok(())
}

pub fn preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let a = merge(args, args.config.as_deref())?;
    let input = a.input.as_ref().ok_or_else(|| usage("--input is required"))?;
    let text = fs::read_to_string(input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let target = a.target_len.unwrap_or(DEFAULT_TARGET_LEN);
    let thinning = a.downsample.unwrap_or(Thinning::GBased);
    let output = if let Ok(context) = PolicyContext::from_json(&text) {
        let mode = match thinning {
            Thinning::None => Preprocess::None,
            Thinning::Uniform => Preprocess::Uniform(target),
            Thinning::GBased => Preprocess::GripperAware(target),
        };
        preprocess_context(&context, mode).map_err(usage)?.to_json()
    } else {
        let trajectory = Trajectory::from_json(&text).map_err(|e| usage(format!("{}: {e}", input.display())))?;
        let thinned = match thinning {
            Thinning::None => Ok(trajectory),
            Thinning::Uniform => uniform_downsample(&trajectory, target),
            Thinning::GBased => downsample(&trajectory, target),
        };
        thinned.map_err(usage)?.to_json()
    };
    write_text(a.out.as_deref(), &(output + "\n"))
}

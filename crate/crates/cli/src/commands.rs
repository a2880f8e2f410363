use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use survey_mc::completion::{CompletionFit, CompletionOptions, GridSpec};
use survey_mc::csv_io::format_value;
use survey_mc::estimators::{dr_matrix_completion, dr_naive_completion, estimate, EstimateVector, Method};
use survey_mc::response::{fit_response_matrix, ResponseOptions};
use survey_mc::rng;
use survey_mc::simulation::{results_csv, run_monte_carlo, table1_text, table2_csv, table2_text, SimConfig};
use survey_mc::{EstimationInput, EstimatorOptions, Execution};

use crate::input::{load, Loaded};
use crate::manifest::Recorder;
use crate::{DataArgs, Failure};

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn manifest_path(args: &DataArgs, out: &Path) -> PathBuf {
    args.manifest.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    })
}

pub fn simulate(config: &Path, out: &Path, threads: Option<usize>) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", config.display())))?;
    let cfg: SimConfig =
        toml::from_str(&text).map_err(|e| Failure::Input(format!("config {}: {}", config.display(), e.message())))?;
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;

    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let mut rec = Recorder::new("simulate", echo, cfg.seed, threads);
    let summary = run_monte_carlo(&cfg, Execution::Parallel)?;
    rec.stage("monte_carlo");
    for st in &summary.studies {
        if st.failures > 0 {
            rec.warn(format!(
                "{} {} n={}: {} of {} replicates failed and were excluded",
                st.key.informativeness_label(),
                st.key.design.label(),
                st.key.n,
                st.failures,
                cfg.replicates
            ));
        }
    }
    let files = [
        ("results.csv", results_csv(&summary)),
        ("table1.txt", table1_text(&summary, cfg.table1_items)),
        ("table2.txt", table2_text(&summary)),
        ("table2.csv", table2_csv(&summary)),
    ];
    for (name, contents) in &files {
        let path = out.join(name);
        write_file(&path, contents)?;
        rec.manifest.outputs.push(path);
    }
    rec.stage("write");
    rec.write(&out.join("manifest.json"))
}

fn load_grid(path: Option<&Path>) -> Result<GridSpec, Failure> {
    match path {
        None => Ok(GridSpec::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("cannot read grid {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Input(format!("grid {}: {}", p.display(), e.message())))
        }
    }
}

struct Prepared {
    loaded: Loaded,
    p_hat: DMatrix<f64>,
    opts: EstimatorOptions,
    rec: Recorder,
}

fn prepare(command: &str, args: &DataArgs, extra: serde_json::Value) -> Result<Prepared, Failure> {
    let mut echo = serde_json::to_value(args).expect("arguments serialize");
    if let (Some(obj), serde_json::Value::Object(more)) = (echo.as_object_mut(), extra) {
        obj.extend(more);
    }
    let mut rec = Recorder::new(command, echo, args.seed, None);
    if !(args.p_clip > 0.0 && args.p_clip < 1.0) {
        return Err(Failure::Input(format!("--p-clip must be in (0, 1) (got {})", args.p_clip)));
    }
    if args.folds < 2 {
        return Err(Failure::Input(format!("--folds must be at least 2 (got {})", args.folds)));
    }
    let grid = load_grid(args.grid.as_deref())?;
    let loaded = load(args)?;
    for w in &loaded.warnings {
        rec.warn(w.clone());
    }
    rec.manifest.empty_items = (0..loaded.sample.n_items())
        .filter(|&j| loaded.sample.observed_count(j) == 0)
        .map(|j| loaded.y.header[j].clone())
        .collect();
    rec.stage("load");

    let resp_opts = ResponseOptions { p_clip: args.p_clip, max_iter: args.max_iter, ..Default::default() };
    let response = fit_response_matrix(&loaded.sample, &resp_opts, Execution::Parallel)?;
    if response.clip_count > 0 {
        rec.warn(format!("{} fitted response probabilities were clipped", response.clip_count));
    }
    rec.manifest.clipped_probabilities = Some(response.clip_count);
    rec.manifest.fallback_items = response
        .fallback
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(j, _)| loaded.y.header[j].clone())
        .collect();
    if !rec.manifest.fallback_items.is_empty() {
        let list = rec.manifest.fallback_items.join(", ");
        rec.warn(format!("intercept-only response model used for: {list}"));
    }
    rec.stage("response_model");

    let opts = EstimatorOptions {
        completion: CompletionOptions { grid, folds: args.folds, ..Default::default() },
        p_clip: args.p_clip,
        ..Default::default()
    };
    Ok(Prepared { loaded, p_hat: response.p_hat, opts, rec })
}

fn cv_trace_csv(fit: &CompletionFit) -> String {
    let folds = fit.cv_trace.iter().map(|e| e.fold_losses.len()).max().unwrap_or(0);
    let mut out = String::from("tau1,tau2,alpha");
    for k in 1..=folds {
        let _ = write!(out, ",fold_{k}");
    }
    out.push_str(",mean_loss\n");
    for e in &fit.cv_trace {
        let t = e.tuning;
        let _ = write!(out, "{},{},{}", format_value(t.tau1), format_value(t.tau2), format_value(t.alpha));
        for k in 0..folds {
            let _ = write!(out, ",{}", e.fold_losses.get(k).map_or_else(|| "NA".to_owned(), |&v| format_value(v)));
        }
        let _ = writeln!(out, ",{}", format_value(e.mean_loss));
    }
    out
}

fn record_fit(rec: &mut Recorder, args: &DataArgs, fit: &CompletionFit) -> Result<(), Failure> {
    rec.manifest.tuning = Some(fit.tuning);
    if let Some(path) = &args.cv_trace {
        write_file(path, &cv_trace_csv(fit))?;
        rec.manifest.outputs.push(path.clone());
    }
    Ok(())
}

fn matrix_csv(header: &[String], cell: impl Fn(usize, usize) -> String, n: usize) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = (0..header.len()).map(|j| cell(i, j)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn impute(args: &DataArgs, out: &Path, a_hat_path: Option<&Path>) -> Result<(), Failure> {
    let extra = serde_json::json!({ "out": out, "a_hat": a_hat_path });
    let Prepared { loaded, p_hat, opts, mut rec } = prepare("impute", args, extra)?;
    let mut rng = rng::stream(args.seed, &[]);
    let fit = survey_mc::fit_completion(&loaded.completion_sample, &p_hat, &opts.completion, &mut rng)?;
    rec.stage("completion");
    record_fit(&mut rec, args, &fit)?;

    let s = &loaded.sample;
    let imputed = matrix_csv(
        &loaded.y.header,
        |i, j| if s.r[(i, j)] { loaded.y.raw[i][j].clone() } else { format_value(fit.a_hat[(i, j)]) },
        s.n_rows(),
    );
    write_file(out, &imputed)?;
    rec.manifest.outputs.push(out.to_owned());
    if let Some(path) = a_hat_path {
        write_file(path, &matrix_csv(&loaded.y.header, |i, j| format_value(fit.a_hat[(i, j)]), s.n_rows()))?;
        rec.manifest.outputs.push(path.to_owned());
    }
    rec.manifest.config["covariates_used"] = serde_json::json!(loaded.covariates_used);
    rec.stage("write");
    rec.write(&manifest_path(args, out))
}

fn estimates_csv(header: &[String], est: &EstimateVector) -> String {
    let mut out = String::from("item,method,estimate,unreliable\n");
    for (j, name) in header.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{},{}", est.method, format_value(est.theta_hat[j]), est.unreliable[j]);
    }
    out
}

pub fn estimate_cmd(args: &DataArgs, method: &str, out: &Path, paper_literal: bool) -> Result<(), Failure> {
    let method: Method = method.parse().map_err(|e: survey_mc::Error| Failure::Input(e.to_string()))?;
    let extra = serde_json::json!({ "method": method, "out": out, "paper_literal": paper_literal });
    let Prepared { loaded, p_hat, mut opts, mut rec } = prepare("estimate", args, extra)?;
    opts.ipw_paper_literal = paper_literal;
    let mut rng = rng::stream(args.seed, &[]);
    let s = &loaded.sample;
    let est = match method {
        Method::Drmc | Method::Drni => {
            let cs = &loaded.completion_sample;
            let (est, fit) = if method == Method::Drmc {
                dr_matrix_completion(cs, &p_hat, &opts.completion, &mut rng)?
            } else {
                dr_naive_completion(cs, &p_hat, opts.p_clip, &opts.completion, &mut rng)?
            };
            record_fit(&mut rec, args, &fit)?;
            est
        }
        _ => {
            let input = EstimationInput { sample: s, y_full: None, p_hat: &p_hat };
            estimate(method, &input, &opts, &mut rng)?
        }
    };
    rec.stage("estimate");
    let flagged: Vec<&str> =
        loaded.y.header.iter().zip(&est.unreliable).filter(|(_, &u)| u).map(|(h, _)| h.as_str()).collect();
    if !flagged.is_empty() {
        rec.warn(format!("unreliable estimates for: {}", flagged.join(", ")));
    }
    write_file(out, &estimates_csv(&loaded.y.header, &est))?;
    rec.manifest.outputs.push(out.to_owned());
    rec.manifest.config["covariates_used"] = serde_json::json!(loaded.covariates_used);
    rec.write(&manifest_path(args, out))
}

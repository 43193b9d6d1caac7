//! Subcommand implementations.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use noisy_moe::baselines::{fit_moe_em, fit_moess, GateKind, MoeEmConfig};
use noisy_moe::gmm::{select_k_bic, BicTable, GmmFitConfig};
use noisy_moe::model_io::{load_model, save_model, AnyModel};
use noisy_moe::moe::{fit_noisy_moe, GmmPool, NoisyMoeConfig};
use noisy_moe::simbench::{
    make_truth, run_benchmark, sample_dataset, BenchConfig, Method, Scenario, SimulationConfig,
};
use noisy_moe::Error as CoreError;

use crate::args::{BenchArgs, FitArgs, PredictArgs, SimulateArgs};
use crate::config::FileConfig;
use crate::data::{read_numeric_csv, split_response, write_matrix_csv, write_predictions_csv};
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_method(name: &str) -> Result<Method, CliError> {
    name.parse::<Method>().map_err(|e| usage(e.to_string()))
}

fn parse_gmm_pool(name: &str) -> Result<GmmPool, CliError> {
    match name {
        "all" => Ok(GmmPool::All),
        "unlabeled-only" => Ok(GmmPool::UnlabeledOnly),
        other => Err(usage(format!(
            "unknown --gmm-pool '{other}'; expected all or unlabeled-only"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| usage(format!("invalid {what} entry '{s}'")))
        })
        .collect()
}

#[derive(Serialize)]
struct FitReport {
    method: String,
    k: usize,
    n_labeled: usize,
    n_unlabeled: Option<usize>,
    screened_rows: usize,
    labeled_counts: Option<Vec<usize>>,
    retained_counts: Option<Vec<usize>>,
    thin_clusters: Option<Vec<usize>>,
    empty_clusters: Option<Vec<usize>>,
    eg_initial_objective: Option<f64>,
    eg_final_objective: Option<f64>,
    eg_iterations: Option<usize>,
    bic_table: Option<BicTable>,
}

pub fn run_fit(args: &FitArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let method_name = args
        .method
        .clone()
        .or_else(|| file.fit.method.clone())
        .unwrap_or_else(|| "noisyss".to_string());
    let method = parse_method(&method_name)?;
    let alpha = args.alpha.or(file.fit.alpha).unwrap_or(0.5);
    let response = args.response.clone().or_else(|| file.fit.response.clone());
    let gmm_pool = parse_gmm_pool(
        &args
            .gmm_pool
            .clone()
            .or_else(|| file.fit.gmm_pool.clone())
            .unwrap_or_else(|| "all".to_string()),
    )?;
    let reweight = if args.no_reweight {
        false
    } else {
        file.fit.reweight.unwrap_or(true)
    };
    let screen_radius = args.screen_radius.or(file.fit.screen_radius);
    let k_spec = args
        .k
        .clone()
        .or_else(|| file.fit.k.clone())
        .ok_or_else(|| usage("--k is required (a number or 'auto')"))?;
    let k_max = args.k_max.or(file.fit.k_max).unwrap_or(10);

    let labeled_table = read_numeric_csv(&args.labeled)?;
    let labeled = split_response(&labeled_table, response.as_deref())?;

    let unlabeled: Option<Array2<f64>> = match &args.unlabeled {
        None => None,
        Some(path) => {
            let table = read_numeric_csv(path)?;
            if table.headers != labeled.covariate_names {
                return Err(CliError::Core(CoreError::SchemaMismatch(format!(
                    "unlabeled columns {:?} do not match labeled covariates {:?}",
                    table.headers, labeled.covariate_names
                ))));
            }
            Some(table.values)
        }
    };

    // Optional screening of large-norm labeled rows.
    let (x, y, screened_rows) = match screen_radius {
        None => (labeled.x.clone(), labeled.y.clone(), 0),
        Some(radius) => {
            if radius <= 0.0 {
                return Err(usage("--screen-radius must be positive"));
            }
            let keep: Vec<usize> = (0..labeled.x.nrows())
                .filter(|&i| {
                    labeled.x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() <= radius
                })
                .collect();
            if keep.is_empty() {
                return Err(CliError::Core(CoreError::TooFewPoints {
                    needed: 1,
                    got: 0,
                }));
            }
            let dropped = labeled.x.nrows() - keep.len();
            let x = Array2::from_shape_fn((keep.len(), labeled.x.ncols()), |(r, c)| {
                labeled.x[[keep[r], c]]
            });
            let y = ndarray::Array1::from_shape_fn(keep.len(), |r| labeled.y[keep[r]]);
            (x, y, dropped)
        }
    };

    // Resolve k, via BIC when requested.
    let needs_unlabeled = matches!(method, Method::NoisySs | Method::MoeSs);
    if needs_unlabeled && unlabeled.is_none() {
        return Err(usage(format!(
            "method '{method}' requires --unlabeled covariates"
        )));
    }
    let gmm_surface: Option<Array2<f64>> = unlabeled.as_ref().map(|u| match gmm_pool {
        GmmPool::All => stack_rows(&x.view(), &u.view()),
        GmmPool::UnlabeledOnly => u.clone(),
    });

    let mut bic_table = None;
    let k = if k_spec == "auto" {
        let surface = gmm_surface.as_ref().ok_or_else(|| {
            usage("--k auto needs --unlabeled data to select the cluster count")
        })?;
        if k_max < 1 {
            return Err(usage("--k-max must be at least 1"));
        }
        let candidates: Vec<usize> = (1..=k_max).collect();
        let cfg = GmmFitConfig {
            seed: noisy_moe::rng::derive_seed(seed, 5000),
            ..GmmFitConfig::default()
        };
        let table = select_k_bic(&surface.view(), &candidates, &cfg, 0.02)
            .map_err(CliError::Core)?;
        let chosen = table.suggested_k;
        println!("BIC selection over k = 1..={k_max}:");
        for row in &table.rows {
            match (row.bic, &row.error) {
                (Some(b), _) => println!("  k = {:<3} BIC = {b:.3}", row.k),
                (None, Some(e)) => println!("  k = {:<3} failed: {e}", row.k),
                _ => {}
            }
        }
        println!("  suggested k = {chosen}");
        bic_table = Some(table);
        chosen
    } else {
        k_spec
            .parse::<usize>()
            .map_err(|_| usage(format!("--k must be a positive integer or 'auto', got '{k_spec}'")))?
    };
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }

    let mut report = FitReport {
        method: method.to_string(),
        k,
        n_labeled: x.nrows(),
        n_unlabeled: unlabeled.as_ref().map(|u| u.nrows()),
        screened_rows,
        labeled_counts: None,
        retained_counts: None,
        thin_clusters: None,
        empty_clusters: None,
        eg_initial_objective: None,
        eg_final_objective: None,
        eg_iterations: None,
        bic_table,
    };

    let model = match method {
        Method::NoisySs => {
            let cfg = NoisyMoeConfig {
                alpha,
                seed,
                gmm_pool,
                reweight,
                ..NoisyMoeConfig::new(k)
            };
            let unlabeled = unlabeled.as_ref().expect("checked above");
            let fitted = fit_noisy_moe(&x.view(), &y.view(), &unlabeled.view(), &cfg)
                .map_err(CliError::Core)?;
            report.labeled_counts = Some(fitted.diagnostics.labeled_counts.clone());
            report.retained_counts = Some(fitted.diagnostics.retained_counts.clone());
            report.thin_clusters = Some(fitted.diagnostics.thin_clusters.clone());
            report.empty_clusters = Some(fitted.diagnostics.empty_clusters.clone());
            report.eg_initial_objective = Some(fitted.diagnostics.eg_initial_objective);
            report.eg_final_objective = Some(fitted.diagnostics.eg_final_objective);
            report.eg_iterations = Some(fitted.diagnostics.eg_iterations);
            AnyModel::NoisySs(fitted)
        }
        Method::MoeSs => {
            let unlabeled = unlabeled.as_ref().expect("checked above");
            let gmm_cfg = GmmFitConfig {
                seed: noisy_moe::rng::derive_seed(seed, 1),
                ..GmmFitConfig::default()
            };
            let fitted = fit_moess(&x.view(), &y.view(), &unlabeled.view(), k, &gmm_cfg, gmm_pool)
                .map_err(CliError::Core)?;
            report.labeled_counts = Some(fitted.labeled_counts.clone());
            report.empty_clusters = Some(fitted.empty_clusters.clone());
            AnyModel::MoeSs(fitted)
        }
        Method::MoeLine | Method::MoeQuad => {
            let kind = if method == Method::MoeLine {
                GateKind::Linear
            } else {
                GateKind::Quadratic
            };
            let cfg = MoeEmConfig {
                seed,
                ..MoeEmConfig::default()
            };
            let fitted =
                fit_moe_em(&x.view(), &y.view(), k, kind, &cfg).map_err(CliError::Core)?;
            AnyModel::MoeSupervised(fitted)
        }
    };

    save_model(&args.out, &model).map_err(CliError::Core)?;
    println!(
        "fit: method={method} k={k} rows={} -> {}",
        x.nrows(),
        args.out.display()
    );
    if screened_rows > 0 {
        println!("screening dropped {screened_rows} labeled rows");
    }
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Core(CoreError::Serde(e.to_string())))?;
        std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn stack_rows(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows() + b.nrows(), a.ncols()));
    out.slice_mut(ndarray::s![..a.nrows(), ..]).assign(a);
    out.slice_mut(ndarray::s![a.nrows().., ..]).assign(b);
    out
}

pub fn run_predict(args: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&args.model).map_err(CliError::Core)?;
    let table = read_numeric_csv(&args.data)?;
    if table.headers.len() != model.dim() {
        return Err(CliError::Core(CoreError::SchemaMismatch(format!(
            "model expects {} covariates but the data has {} columns",
            model.dim(),
            table.headers.len()
        ))));
    }
    let yhat = model.predict_batch(&table.values.view());
    write_predictions_csv(&args.out, &yhat.view())?;
    println!(
        "predict: {} rows ({} model) -> {}",
        yhat.len(),
        model.kind(),
        args.out.display()
    );
    Ok(())
}

fn sim_config_from(args: &SimulateArgs, file: &FileConfig, seed: u64) -> SimulationConfig {
    let s = &file.simulate;
    SimulationConfig {
        k: args.k.or(s.k).unwrap_or(10),
        p: args.p.or(s.p).unwrap_or(3),
        p0: args.p0.or(s.p0).unwrap_or(1.0),
        n_labeled: args.n_labeled.or(s.n_labeled).unwrap_or(2000),
        n_unlabeled: args.n_unlabeled.or(s.n_unlabeled).unwrap_or(10_000),
        n_test: args.n_test.or(s.n_test).unwrap_or(20_000),
        sigma: args.sigma.or(s.sigma).unwrap_or(0.1),
        seed,
        ..SimulationConfig::default()
    }
}

pub fn run_simulate(args: &SimulateArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let cfg = sim_config_from(args, file, seed);
    let emit_latents = args.emit_latents || file.simulate.emit_latents.unwrap_or(false);
    let truth = make_truth(&cfg).map_err(CliError::Core)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Core(e.into()))?;

    let labeled = sample_dataset(&truth, cfg.n_labeled, noisy_moe::rng::derive_seed(seed, 3));
    let unlabeled = sample_dataset(&truth, cfg.n_unlabeled, noisy_moe::rng::derive_seed(seed, 5));
    let test = sample_dataset(&truth, cfg.n_test, noisy_moe::rng::derive_seed(seed, 4));

    let covariate_headers: Vec<String> = (1..=cfg.p).map(|j| format!("x{j}")).collect();
    let mut labeled_headers = covariate_headers.clone();
    labeled_headers.push("y".to_string());

    let with_response = |x: &Array2<f64>, y: &ndarray::Array1<f64>| {
        let mut m = Array2::zeros((x.nrows(), x.ncols() + 1));
        m.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
        for i in 0..x.nrows() {
            m[[i, x.ncols()]] = y[i];
        }
        m
    };

    write_matrix_csv(
        &args.out_dir.join("labeled.csv"),
        &labeled_headers,
        &with_response(&labeled.x, &labeled.y).view(),
    )?;
    write_matrix_csv(
        &args.out_dir.join("unlabeled.csv"),
        &covariate_headers,
        &unlabeled.x.view(),
    )?;
    write_matrix_csv(
        &args.out_dir.join("test.csv"),
        &labeled_headers,
        &with_response(&test.x, &test.y).view(),
    )?;
    save_model(&args.out_dir.join("truth.json"), &AnyModel::NoisySs(truth))
        .map_err(CliError::Core)?;

    if emit_latents {
        let mut out = String::from("set,row,z,tilde_z\n");
        for (name, data) in [
            ("labeled", &labeled),
            ("unlabeled", &unlabeled),
            ("test", &test),
        ] {
            for i in 0..data.z.len() {
                out.push_str(&format!("{name},{i},{},{}\n", data.z[i], data.tilde_z[i]));
            }
        }
        std::fs::write(args.out_dir.join("latents.csv"), out)
            .map_err(|e| CliError::Core(e.into()))?;
    }
    println!(
        "simulate: k={} p={} p0={} -> {} (labeled {}, unlabeled {}, test {}{})",
        cfg.k,
        cfg.p,
        cfg.p0,
        args.out_dir.display(),
        cfg.n_labeled,
        cfg.n_unlabeled,
        cfg.n_test,
        if emit_latents { ", latents" } else { "" }
    );
    Ok(())
}

pub fn run_bench(args: &BenchArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let b = &file.bench;
    let grid_p0 = args.grid_p0.clone().or_else(|| b.grid_p0.clone());
    let grid_n = args.grid_n.clone().or_else(|| b.grid_n.clone());
    let fixed_p0 = args.p0.or(b.p0).unwrap_or(0.8);
    let fixed_n = args.n_labeled.or(b.n_labeled).unwrap_or(2000);
    let scenarios: Vec<Scenario> = match (&grid_p0, &grid_n) {
        (Some(_), Some(_)) => {
            return Err(usage("--grid-p0 and --grid-n are mutually exclusive"))
        }
        (Some(text), None) => parse_list::<f64>(text, "--grid-p0")?
            .into_iter()
            .map(|p0| Scenario {
                p0,
                n_labeled: fixed_n,
            })
            .collect(),
        (None, Some(text)) => parse_list::<usize>(text, "--grid-n")?
            .into_iter()
            .map(|n| Scenario {
                p0: fixed_p0,
                n_labeled: n,
            })
            .collect(),
        (None, None) => vec![Scenario {
            p0: fixed_p0,
            n_labeled: fixed_n,
        }],
    };
    let methods: Vec<Method> = match args.methods.clone().or_else(|| b.methods.clone()) {
        None => vec![Method::NoisySs, Method::MoeSs],
        Some(text) => {
            let names = parse_list::<String>(&text, "--methods")?;
            let mut out = Vec::new();
            for n in names {
                out.push(parse_method(&n)?);
            }
            out
        }
    };
    let oracle_x = if args.finite_x {
        false
    } else {
        !b.finite_x.unwrap_or(false)
    };
    let base = SimulationConfig {
        k: args.k.or(b.k).unwrap_or(10),
        p: args.p.or(b.p).unwrap_or(3),
        sigma: args.sigma.or(b.sigma).unwrap_or(0.1),
        n_test: args.n_test.or(b.n_test).unwrap_or(20_000),
        n_unlabeled: args.n_unlabeled.or(b.n_unlabeled).unwrap_or(10_000),
        oracle_x,
        ..SimulationConfig::default()
    };
    let mut cfg = BenchConfig::new(
        base,
        scenarios,
        methods,
        args.reps.or(b.reps).unwrap_or(10),
        seed,
    );
    cfg.freeze_truth = args.freeze_truth || b.freeze_truth.unwrap_or(false);
    cfg.alpha = args.alpha.or(b.alpha).unwrap_or(0.5);
    cfg.reweight = if args.no_reweight {
        false
    } else {
        b.reweight.unwrap_or(true)
    };

    let results = run_benchmark(&cfg).map_err(CliError::Core)?;
    let mut buf = Vec::new();
    results.write_csv(&mut buf).map_err(CliError::Core)?;
    std::fs::write(&args.out, &buf).map_err(|e| CliError::Core(e.into()))?;

    print!("{}", results.summary_text());
    let failures: usize = results
        .reports
        .iter()
        .flat_map(|r| r.outcomes.iter())
        .filter(|o| o.error.is_some())
        .count();
    if failures > 0 {
        println!("{failures} method runs failed; see the error columns in the CSV");
    }
    println!("results -> {}", args.out.display());
    Ok(())
}

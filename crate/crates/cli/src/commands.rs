use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use fhsae::gml::{maximize_gml, GmlConfig, LikelihoodBase};
use fhsae::posterior::{compare_all, PriorSpec};
use fhsae::prediction::{bootstrap_intervals, eblup_point, BootstrapConfig};
use fhsae::sim::{
    run_bias_study, run_coverage_study, run_figure3, run_zero_frequency_study, BiasRow, CoverageArm, QChoice,
    SimDesign, Variances, FIGURE3_K, FIGURE3_REPS,
};
use fhsae::{gls_beta, load_dataset, shrinkage, Dataset};

use crate::output::{self, write_csv, write_json, write_text};
use crate::{
    Base, BiasArgs, Cli, CliError, Command, CoverageArgs, DesignArgs, FitArgs, Format, GmlArgs, IntervalArgs,
    MethodName, PosteriorArgs, PriorName, SimulateCommand, ZeroArgs,
};

const SCHEMA: u32 = 1;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(a) => fit(cli, a),
        Command::Posterior(a) => posterior(cli, a),
        Command::Interval(a) => interval(cli, a),
        Command::Simulate(SimulateCommand::Bias(a)) => bias(cli, a),
        Command::Simulate(SimulateCommand::Zerofreq(a)) => zerofreq(cli, a),
        Command::Simulate(SimulateCommand::Coverage(a)) => coverage(cli, a),
    }
}

fn read(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(load_dataset(BufReader::new(file))?)
}

fn base(b: Base) -> LikelihoodBase {
    match b {
        Base::Residual => LikelihoodBase::Residual,
        Base::Profile => LikelihoodBase::Profile,
    }
}

fn check_q_usage(methods: &[MethodName], gml: &GmlArgs) -> Result<(), CliError> {
    let wants_gml = methods.contains(&MethodName::Gml);
    match (wants_gml, gml.q) {
        (false, Some(_)) => Err(CliError::Usage("--q requires --method gml".into())),
        (true, None) => Err(CliError::Usage("--method gml requires --q".into())),
        _ => Ok(()),
    }
}

fn estimator(method: MethodName, gml: &GmlArgs) -> GmlConfig {
    let cfg = match method {
        MethodName::Reml => GmlConfig::reml(),
        MethodName::Ml => GmlConfig::ml(),
        MethodName::Alm => GmlConfig::alm(),
        MethodName::Aml => GmlConfig::aml(),
        MethodName::Gml => GmlConfig::new(gml.q.unwrap_or_default(), base(gml.base)),
    };
    match gml.a_max {
        Some(a) => cfg.with_a_max(a),
        None => cfg,
    }
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    check_q_usage(&args.method, &args.gml)?;
    let data = read(&args.input)?;
    let mut fits = Vec::new();
    for &m in &args.method {
        let est = maximize_gml(&data, &estimator(m, &args.gml))?;
        let gls = gls_beta(&data, est.a_hat)?;
        let areas = (0..data.k())
            .map(|i| {
                Ok((
                    data.ids()[i].clone(),
                    shrinkage(data.v()[i], est.a_hat),
                    eblup_point(&data, est.a_hat, i)?,
                ))
            })
            .collect::<fhsae::Result<Vec<_>>>()?;
        if est.boundary {
            eprintln!("note: {} estimate of A is 0 (boundary)", est.method);
        }
        fits.push((est, gls, areas));
    }

    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Json => {
            let fits: Vec<_> = fits
                .iter()
                .map(|(est, gls, areas)| {
                    json!({
                        "method": est.method.to_string(),
                        "a_hat": est.a_hat,
                        "boundary": est.boundary,
                        "iterations": est.iterations,
                        "objective": est.objective_at_max,
                        "beta": gls.beta_hat.iter().collect::<Vec<_>>(),
                        "beta_se": gls.beta_cov.diagonal().iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
                        "areas": areas.iter().map(|(id, b, e)| json!({"area": id, "shrinkage": b, "eblup": e})).collect::<Vec<_>>(),
                    })
                })
                .collect();
            write_json(&mut w, &json!({"schema": SCHEMA, "command": "fit", "fits": fits}))
        }
        Format::Csv => {
            let mut text = String::from("method,a_hat,boundary,area,shrinkage,eblup");
            for j in 1..=data.r() {
                text.push_str(&format!(",beta{j}"));
            }
            text.push('\n');
            for (est, gls, areas) in &fits {
                let beta: String = gls.beta_hat.iter().map(|b| format!(",{b}")).collect();
                for (id, b, e) in areas {
                    text.push_str(&format!(
                        "{},{},{},{},{b},{e}{beta}\n",
                        est.method,
                        est.a_hat,
                        est.boundary,
                        csv_field(id)
                    ));
                }
            }
            write_text(&mut w, &text)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn prior(args: &PosteriorArgs) -> Result<PriorSpec, CliError> {
    match (args.prior, args.exponent) {
        (PriorName::Power, Some(p)) => Ok(PriorSpec::power(p)?),
        (PriorName::Power, None) => Err(CliError::Usage("--prior power requires --exponent".into())),
        (_, Some(_)) => Err(CliError::Usage("--exponent requires --prior power".into())),
        (PriorName::Uniform, None) => Ok(PriorSpec::uniform()),
        (PriorName::InvSqrt, None) => Ok(PriorSpec::inverse_sqrt()),
    }
}

#[derive(Serialize)]
struct GridRow<'a> {
    area: &'a str,
    b: f64,
    exact_density: f64,
    adm_density: f64,
    laplace_density: f64,
}

fn posterior(cli: &Cli, args: &PosteriorArgs) -> Result<(), CliError> {
    let prior = prior(args)?;
    let data = read(&args.input)?;
    let rows = compare_all(&data, prior)?;
    let moments: Vec<_> = rows.iter().map(|r| r.moments(&data)).collect();
    if moments.iter().any(|m| m.laplace_boundary) {
        eprintln!("note: posterior mode of A is 0; Laplace means are pinned at 1");
    }

    if let Some(path) = &args.grid_out {
        let mut grid = Vec::new();
        for (r, m) in rows.iter().zip(&moments) {
            for g in r.density_grid() {
                grid.push(GridRow {
                    area: &m.area,
                    b: g.b,
                    exact_density: g.exact_density,
                    adm_density: g.adm_density,
                    laplace_density: g.laplace_density,
                });
            }
        }
        let mut w = output::create(path)?;
        write_csv(&mut w, &grid)?;
    }

    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => write_csv(&mut w, &moments),
        Format::Json => write_json(
            &mut w,
            &json!({
                "schema": SCHEMA,
                "command": "posterior",
                "prior_exponent": prior.exponent(),
                "moments": moments,
            }),
        ),
    }
}

#[derive(Serialize)]
struct IntervalRow<'a> {
    area: &'a str,
    area_index: usize,
    point: f64,
    lower: f64,
    upper: f64,
    q_lo: f64,
    q_hi: f64,
    degenerate_reps: usize,
    effective_reps: usize,
}

fn interval(cli: &Cli, args: &IntervalArgs) -> Result<(), CliError> {
    check_q_usage(&[args.method], &args.gml)?;
    let data = read(&args.input)?;
    let est = estimator(args.method, &args.gml);
    let cfg = BootstrapConfig::new(est, args.reps, args.level, args.seed).with_truncation(args.truncation);
    let out = bootstrap_intervals(&data, &cfg)?;
    let rows: Vec<_> = out
        .iter()
        .map(|r| IntervalRow {
            area: &data.ids()[r.area_index],
            area_index: r.area_index,
            point: r.point,
            lower: r.lower,
            upper: r.upper,
            q_lo: r.pivot_quantiles.0,
            q_hi: r.pivot_quantiles.1,
            degenerate_reps: r.degenerate_reps,
            effective_reps: r.effective_reps,
        })
        .collect();
    if let Some(r) = out.first() {
        if r.degenerate_reps > 0 {
            eprintln!(
                "note: {} of {} bootstrap estimates were 0 and were truncated to {}",
                r.degenerate_reps, args.reps, args.truncation
            );
        }
    }

    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => write_csv(&mut w, &rows),
        Format::Json => {
            let intervals: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        "area": r.area,
                        "area_index": r.area_index,
                        "point": r.point,
                        "lower": r.lower,
                        "upper": r.upper,
                        "pivot_quantiles": [r.q_lo, r.q_hi],
                        "degenerate_reps": r.degenerate_reps,
                        "effective_reps": r.effective_reps,
                    })
                })
                .collect();
            write_json(
                &mut w,
                &json!({
                    "schema": SCHEMA,
                    "command": "interval",
                    "method": est.method().to_string(),
                    "reps": args.reps,
                    "level": args.level,
                    "seed": args.seed,
                    "truncation": args.truncation,
                    "intervals": intervals,
                }),
            )
        }
    }
}

fn balanced_design(d: &DesignArgs, b: f64, q_list: Vec<QChoice>, reps: usize, base: LikelihoodBase) -> SimDesign {
    SimDesign {
        k: d.k,
        variances: Variances::Balanced(d.v),
        b_true: b,
        beta_true: vec![0.0],
        q_list,
        reps,
        seed: d.seed,
        base,
    }
}

#[derive(Serialize)]
struct BiasOut<'a> {
    design: &'a str,
    label: &'a str,
    q: f64,
    b_true: f64,
    k: usize,
    reps: usize,
    empirical_bias: f64,
    mc_se: f64,
    theoretical_bias: Option<f64>,
}

fn bias(cli: &Cli, args: &BiasArgs) -> Result<(), CliError> {
    let (design, reps, v, rows) = if args.preset.is_some() {
        let reps = args.reps.unwrap_or(FIGURE3_REPS);
        ("figure3-default", reps, 1.0, run_figure3(args.design.seed, reps)?.rows)
    } else {
        let reps = args.reps.unwrap_or(10_000);
        let mut rows = Vec::new();
        for &b in &args.design.b {
            let d = balanced_design(&args.design, b, args.q.clone(), reps, base(args.base));
            rows.extend(run_bias_study(&d)?.rows);
        }
        ("custom", reps, args.design.v, rows)
    };
    let k = rows.first().map(|r| r.k).unwrap_or(FIGURE3_K);

    if let Some(path) = &args.long_out {
        let mut w = output::create(path)?;
        write_text(&mut w, &gnuplot_long(&rows, design, k, v, reps))?;
    }

    let out: Vec<_> = rows
        .iter()
        .map(|r| BiasOut {
            design,
            label: &r.label,
            q: r.q,
            b_true: r.b_true,
            k: r.k,
            reps,
            empirical_bias: r.empirical_bias,
            mc_se: r.mc_se,
            theoretical_bias: r.theoretical_bias,
        })
        .collect();
    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => write_csv(&mut w, &out),
        Format::Json => write_json(
            &mut w,
            &json!({"schema": SCHEMA, "command": "simulate bias", "design": design, "seed": args.design.seed, "rows": out}),
        ),
    }
}

/// One gnuplot data block per q label, separated by two blank lines.
fn gnuplot_long(rows: &[BiasRow], design: &str, k: usize, v: f64, reps: usize) -> String {
    let mut s = format!(
        "# bias of the estimated shrinkage factor, balanced design ({design}): k={k}, V={v}, reps={reps}\n\
         # settings are this toolkit's choices\n\
         # columns: b_true empirical_bias mc_se theoretical_bias\n"
    );
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    for (n, label) in labels.iter().enumerate() {
        if n > 0 {
            s.push_str("\n\n");
        }
        s.push_str(&format!("# {label}\n"));
        for r in rows.iter().filter(|r| r.label == *label) {
            let theory = r.theoretical_bias.map_or("NaN".to_string(), |t| t.to_string());
            s.push_str(&format!("{} {} {} {}\n", r.b_true, r.empirical_bias, r.mc_se, theory));
        }
    }
    s
}

fn zerofreq(cli: &Cli, args: &ZeroArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &b in &args.design.b {
        let d = balanced_design(&args.design, b, args.q.clone(), args.reps, base(args.base));
        rows.extend(run_zero_frequency_study(&d)?);
    }
    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => write_csv(&mut w, &rows),
        Format::Json => write_json(
            &mut w,
            &json!({"schema": SCHEMA, "command": "simulate zerofreq", "reps": args.reps, "seed": args.design.seed, "rows": rows}),
        ),
    }
}

fn coverage(cli: &Cli, args: &CoverageArgs) -> Result<(), CliError> {
    check_q_usage(&args.method, &args.gml)?;
    let arms: Vec<CoverageArm> = args
        .method
        .iter()
        .map(|&m| {
            let cfg = estimator(m, &args.gml);
            CoverageArm::new(cfg.method().to_string(), cfg, args.truncation)
        })
        .collect();
    let boot = BootstrapConfig::new(GmlConfig::alm(), args.boot_reps, args.level, args.design.seed);
    let mut rows = Vec::new();
    for &b in &args.design.b {
        let d = balanced_design(&args.design, b, Vec::new(), args.reps, LikelihoodBase::Residual);
        rows.extend(run_coverage_study(&d, &boot, &arms)?);
    }
    let mut w = output::sink(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => write_csv(&mut w, &rows),
        Format::Json => write_json(
            &mut w,
            &json!({
                "schema": SCHEMA,
                "command": "simulate coverage",
                "reps": args.reps,
                "boot_reps": args.boot_reps,
                "level": args.level,
                "truncation": args.truncation,
                "seed": args.design.seed,
                "rows": rows,
            }),
        ),
    }
}

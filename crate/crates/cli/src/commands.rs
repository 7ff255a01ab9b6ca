use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geoflow_core::curvature::{psi_with, scalar_curvature};
use geoflow_core::curves::{
    energy_profile, geodesic_distance, relative_variation, train_mllm, trapezoid, variance,
    LinearCurve, TangentCurve,
};
use geoflow_core::eikonal::{eikonal_residual, geodesic_flow, train_distance_field, DistanceField};
use geoflow_core::geodesic::{exp_map, GeodesicPath};
use geoflow_core::io::{coordinate_columns, RunConfig, Table, WeightsFile};
use geoflow_core::manifold::{magnification_factor, Immersion, ManifoldSpec};
use geoflow_core::sampling::mh_sample;
use geoflow_core::GeoError;
use log::info;

use crate::args::{parse_points, Common, IntegratorArgs, ShootingArgs};
use crate::{Outcome, UsageError};

fn build(config: &RunConfig) -> Result<Box<dyn Immersion>> {
    Ok(config.manifold.build()?)
}

fn check_dim(name: &str, x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(UsageError(format!(
            "--{name} has {} coordinates, the chart has {d}",
            x.len()
        ))
        .into());
    }
    Ok(())
}

fn emit(table: &Table, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => table
            .save(p)
            .with_context(|| format!("writing {}", p.display()))?,
        None => {
            let text = table.to_csv_string()?;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                // A closed downstream pipe (e.g. `| head`) is not a failure.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn trajectory_table(path: &GeodesicPath) -> Result<Table> {
    let d = path.states[0].q.len();
    let mut header = vec!["lambda".to_string()];
    header.extend(coordinate_columns("q", d));
    header.extend(coordinate_columns("p", d));
    header.push("H".into());
    let mut t = Table::new(header);
    for ((s, l), h) in path.states.iter().zip(&path.lambdas).zip(&path.energies) {
        let mut row = vec![*l];
        row.extend(&s.q);
        row.extend(&s.p);
        row.push(*h);
        t.push(row)?;
    }
    Ok(t)
}

pub fn shoot(
    common: &Common,
    integrator: &IntegratorArgs,
    p: &[f64],
    v: &[f64],
) -> Result<Outcome> {
    let mut config = common.resolve()?.config;
    integrator.apply(&mut config);
    let im = build(&config)?;
    check_dim("p", p, im.chart_dim())?;
    check_dim("v", v, im.chart_dim())?;
    let path = exp_map(im.as_ref(), p, v, &config.integrator)?;
    eprintln!("endpoint {:?}", path.endpoint());
    eprintln!("relative energy drift {:e}", path.relative_drift());
    emit(&trajectory_table(&path)?, config.output.csv.as_deref())?;
    Ok(Outcome::Complete)
}

pub fn connect(
    common: &Common,
    integrator: &IntegratorArgs,
    shooting: &ShootingArgs,
    p: &[f64],
    q: &[f64],
    report: Option<&Path>,
) -> Result<Outcome> {
    let mut config = common.resolve()?.config;
    integrator.apply(&mut config);
    shooting.apply(&mut config);
    let im = build(&config)?;
    check_dim("p", p, im.chart_dim())?;
    check_dim("q", q, im.chart_dim())?;
    let d = im.chart_dim();
    let dist = geodesic_distance(im.as_ref(), p, q, &config.integrator, &config.shooting)?;
    let report_path = report
        .map(Path::to_path_buf)
        .or(config.output.report.clone());
    if let Some(path) = report_path {
        let mut header = coordinate_columns("seed", d);
        header.extend(["converged", "iterations", "residual", "length"].map(String::from));
        let mut t = Table::labelled("status", header);
        for s in &dist.seeds {
            let mut row = s.seed.clone();
            let label = match &s.result {
                Ok(r) => {
                    row.extend([
                        1.0,
                        r.iterations as f64,
                        r.residual_norm,
                        s.length.unwrap_or(f64::NAN),
                    ]);
                    "converged".to_string()
                }
                Err(e) => {
                    let (it, res) = match e {
                        GeoError::NonConvergence {
                            iterations,
                            best_residual,
                        } => (*iterations as f64, *best_residual),
                        _ => (f64::NAN, f64::NAN),
                    };
                    row.extend([0.0, it, res, f64::NAN]);
                    e.to_string()
                }
            };
            t.push_labelled(&label, row)?;
        }
        t.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("distance {}", dist.distance);
    for (k, s) in dist.seeds.iter().enumerate() {
        match &s.result {
            Ok(r) => eprintln!(
                "seed {k}: converged in {} iterations, length {}",
                r.iterations,
                s.length.unwrap_or(f64::NAN)
            ),
            Err(e) => eprintln!("seed {k}: {e}"),
        }
    }
    emit(
        &trajectory_table(&dist.best_result().path)?,
        config.output.csv.as_deref(),
    )?;
    let failures = dist.failures();
    Ok(if failures > 0 {
        Outcome::Partial(format!(
            "{failures} of {} seeds did not converge",
            dist.seeds.len()
        ))
    } else {
        Outcome::Complete
    })
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    common: &Common,
    integrator: &IntegratorArgs,
    shooting: &ShootingArgs,
    p: &[f64],
    q: &[f64],
    ensemble: Option<usize>,
    steps: Option<usize>,
    report: Option<&Path>,
) -> Result<Outcome> {
    let mut config = common.resolve()?.config;
    integrator.apply(&mut config);
    shooting.apply(&mut config);
    let im = build(&config)?;
    let d = im.chart_dim();
    check_dim("p", p, d)?;
    check_dim("q", q, d)?;
    let mut mcfg = config.mllm.clone();
    mcfg.ensemble = ensemble.unwrap_or(mcfg.ensemble);
    mcfg.steps = steps.unwrap_or(mcfg.steps);
    if let Some(seed) = config.seed {
        mcfg.seed = seed;
    }

    let dist = geodesic_distance(im.as_ref(), p, q, &config.integrator, &config.shooting)?;
    let path = &dist.best_result().path;
    let n = path.states.len();
    let mllm = train_mllm(im.as_ref(), p, q, &mcfg)?;
    let mut curve = mllm.best.clone();
    curve.grid = n;
    let linear = LinearCurve {
        p: p.to_vec(),
        q: q.to_vec(),
        n,
    };

    let curves: [(&str, &dyn TangentCurve); 3] =
        [("linear", &linear), ("mllm", &curve), ("symplectic", path)];
    let mut samples = Vec::new();
    let mut energies = Vec::new();
    for (_, c) in &curves {
        samples.push(c.tangent_samples(im.as_ref())?);
        energies.push(energy_profile(im.as_ref(), *c)?);
    }

    let mut header = vec!["lambda".to_string()];
    for (name, _) in &curves {
        header.extend(coordinate_columns(&format!("{name}_x"), d));
        header.push(format!("{name}_energy"));
    }
    let mut t = Table::new(header);
    for k in 0..n {
        let mut row = vec![k as f64 / (n - 1) as f64];
        for (s, e) in samples.iter().zip(&energies) {
            row.extend(&s.points[k]);
            row.push(e[k]);
        }
        t.push(row)?;
    }

    let mut summary = Table::labelled(
        "curve",
        [
            "length",
            "energy_mean",
            "energy_variance",
            "relative_variation",
        ],
    );
    for ((name, _), e) in curves.iter().zip(&energies) {
        let length = trapezoid(&e.iter().map(|x| x.max(0.0).sqrt()).collect::<Vec<_>>());
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        eprintln!(
            "{name}: length {length}, energy variance {:e}, relative variation {:e}",
            variance(e),
            relative_variation(e)
        );
        summary.push_labelled(name, vec![length, mean, variance(e), relative_variation(e)])?;
    }
    if let Some(path) = report
        .map(Path::to_path_buf)
        .or(config.output.report.clone())
    {
        summary
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    emit(&t, config.output.csv.as_deref())?;
    Ok(Outcome::Complete)
}

pub fn curvature_field(common: &Common, grid: usize, alpha: Option<f64>) -> Result<Outcome> {
    let config = common.resolve()?.config;
    let im = build(&config)?;
    if grid < 2 {
        return Err(UsageError("--grid needs at least 2 points per side".into()).into());
    }
    let domain = config.domain_for(im.as_ref())?;
    let alpha = alpha.unwrap_or(config.eikonal.alpha);
    let mode = config.eikonal.negative_curvature;
    let mut header = coordinate_columns("x", im.chart_dim());
    header.extend(["R", "psi", "MF"].map(String::from));
    let mut t = Table::new(header);
    for x in domain.grid(grid) {
        let r = scalar_curvature(im.as_ref(), &x)?;
        let mf = magnification_factor(im.as_ref(), &x)?;
        let mut row = x.clone();
        row.extend([r, psi_with(r, alpha, mode), mf]);
        t.push(row)?;
    }
    emit(&t, config.output.csv.as_deref())?;
    Ok(Outcome::Complete)
}

#[allow(clippy::too_many_arguments)]
pub fn sample_curvature(
    common: &Common,
    n: usize,
    chains: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    sigma: Option<f64>,
    alpha: Option<f64>,
) -> Result<Outcome> {
    let config = common.resolve()?.config;
    let im = build(&config)?;
    let domain = config.domain_for(im.as_ref())?;
    let mut mh = config.sampler.clone();
    mh.chains = chains.unwrap_or(mh.chains);
    mh.burn_in = burn_in.unwrap_or(mh.burn_in);
    mh.thin = thin.unwrap_or(mh.thin);
    mh.proposal_sigma = sigma.unwrap_or(mh.proposal_sigma);
    mh.alpha = alpha.unwrap_or(mh.alpha);
    if let Some(seed) = config.seed {
        mh.seed = seed;
    }
    let set = mh_sample(im.as_ref(), &domain, &mh.keeping(n))?;
    eprintln!("acceptance rate {:.4}", set.acceptance_rate);
    eprintln!("r-hat {:?}", set.r_hat);
    let mut header = vec!["chain".to_string()];
    header.extend(coordinate_columns("x", im.chart_dim()));
    header.extend(["R", "psi"].map(String::from));
    let mut t = Table::new(header);
    for k in 0..set.len() {
        let mut row = vec![set.chain_ids[k] as f64];
        row.extend(&set.points[k]);
        row.extend([set.scalar[k], set.weights[k]]);
        t.push(row)?;
    }
    emit(&t, config.output.csv.as_deref())?;
    Ok(Outcome::Complete)
}

pub struct TrainArgs<'a> {
    pub source: &'a [f64],
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub sampler: Option<geoflow_core::eikonal::SamplerKind>,
    pub weights: Option<&'a Path>,
    pub history: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

fn load_weights(path: &Path) -> Result<WeightsFile> {
    WeightsFile::load(path).with_context(|| format!("reading {}", path.display()))
}

fn check_header_manifold(file: &WeightsFile, spec: &ManifoldSpec, path: &Path) -> Result<()> {
    if let Some(stored) = file.header.as_ref().and_then(|h| h.manifold.as_ref()) {
        if stored != spec {
            return Err(UsageError(format!(
                "{} was trained on {stored:?}, refusing to use it on {spec:?}",
                path.display()
            ))
            .into());
        }
    }
    Ok(())
}

pub fn train_eikonal(common: &Common, a: &TrainArgs) -> Result<Outcome> {
    let config = common.resolve()?.config;
    let seed = config
        .seed
        .ok_or_else(|| UsageError("train-eikonal requires --seed".into()))?;
    let weights_path: PathBuf = a
        .weights
        .map(Path::to_path_buf)
        .or(config.output.weights.clone())
        .ok_or_else(|| UsageError("train-eikonal requires --weights".into()))?;
    let im = build(&config)?;
    check_dim("source", a.source, im.chart_dim())?;
    let domain = config.domain_for(im.as_ref())?;
    let mut ecfg = config.eikonal.clone();
    ecfg.epochs_max = a.epochs.unwrap_or(ecfg.epochs_max);
    ecfg.batch = a.batch.unwrap_or(ecfg.batch);
    ecfg.lr = a.lr.unwrap_or(ecfg.lr);
    ecfg.lambda = a.lambda.unwrap_or(ecfg.lambda);
    ecfg.alpha = a.alpha.unwrap_or(ecfg.alpha);
    ecfg.sampler = a.sampler.unwrap_or(ecfg.sampler);
    ecfg.seed = seed;

    let (init, prior_epochs) = match a.resume {
        Some(path) => {
            let file = load_weights(path)?;
            check_header_manifold(&file, &config.manifold, path)?;
            let prior = file.header.as_ref().and_then(|h| h.epochs).unwrap_or(0);
            (
                Some(DistanceField::from_weights(im.as_ref(), &file)?),
                prior,
            )
        }
        None => (None, 0),
    };
    let trained = train_distance_field(im.as_ref(), a.source, &domain, &ecfg, init)?;
    if let Some(v) = &trained.initial_validation {
        eprintln!("resumed validation loss {:e}", v.loss.total);
    }
    let v = &trained.validation;
    eprintln!(
        "epochs {}{}",
        trained.history.len(),
        if trained.stopped_early {
            " (converged)"
        } else {
            ""
        }
    );
    eprintln!("validation loss {:e}", v.loss.total);
    eprintln!(
        "fraction of grid with |v|_g in [0.9, 1.1]: {}",
        v.unit_flow_fraction
    );

    let total_epochs = prior_epochs + trained.history.len();
    let mut file = trained
        .field
        .to_weights(Some(config.manifold.clone()), Some(domain));
    if let Some(h) = file.header.as_mut() {
        h.final_loss = Some(v.loss.total);
        h.epochs = Some(total_epochs);
    }
    file.save(&weights_path)
        .with_context(|| format!("writing {}", weights_path.display()))?;
    info!("wrote {}", weights_path.display());

    let mut t = Table::new(["epoch", "loss", "source_term"]);
    for r in &trained.history {
        t.push(vec![(prior_epochs + r.epoch) as f64, r.loss, r.source_term])?;
    }
    match a
        .history
        .map(Path::to_path_buf)
        .or(config.output.history.clone())
    {
        Some(path) => t
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?,
        None => emit(&t, config.output.csv.as_deref())?,
    }
    Ok(Outcome::Complete)
}

pub fn eval_field(
    common: &Common,
    weights: &Path,
    grid: Option<usize>,
    points: Option<&str>,
) -> Result<Outcome> {
    let resolved = common.resolve()?;
    let mut config = resolved.config;
    let file = load_weights(weights)?;
    let header = file.header.as_ref().ok_or_else(|| {
        UsageError(format!(
            "{} has no distance-field header",
            weights.display()
        ))
    })?;
    if resolved.explicit_manifold {
        check_header_manifold(&file, &config.manifold, weights)?;
    } else if let Some(stored) = &header.manifold {
        config.manifold = stored.clone();
    }
    let im = build(&config)?;
    let field = DistanceField::from_weights(im.as_ref(), &file)?;
    let d = im.chart_dim();
    let pts = match points {
        Some(s) => {
            let pts = parse_points(s).map_err(UsageError)?;
            for x in &pts {
                check_dim("points", x, d)?;
            }
            pts
        }
        None => {
            let domain = match (&config.domain, &header.domain_box) {
                (Some(b), _) | (None, Some(b)) => b.clone(),
                (None, None) => im.domain(),
            };
            let n = grid.unwrap_or(41);
            if n < 2 {
                return Err(UsageError("--grid needs at least 2 points per side".into()).into());
            }
            domain.grid(n)
        }
    };
    let mut h = coordinate_columns("x", d);
    h.push("phi".into());
    h.extend(coordinate_columns("v", d));
    h.push("eps_phi".into());
    let mut t = Table::new(h);
    for x in pts {
        let mut row = x.clone();
        row.push(field.phi(&x));
        match (
            geodesic_flow(im.as_ref(), &field, &x),
            eikonal_residual(im.as_ref(), &field, &x),
        ) {
            (Ok(v), Ok(e)) => {
                row.extend(v);
                row.push(e);
            }
            (Err(GeoError::NonSmoothPoint { .. }), _)
            | (_, Err(GeoError::NonSmoothPoint { .. })) => {
                row.extend(std::iter::repeat_n(f64::NAN, d + 1));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
        t.push(row)?;
    }
    emit(&t, config.output.csv.as_deref())?;
    Ok(Outcome::Complete)
}

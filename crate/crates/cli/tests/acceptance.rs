//! Acceptance checks C1-C9. Each test prints one `C<n> ...: PASS|FAIL` line
//! and then asserts. Tests hold a shared lock so wall-clock limits are not
//! distorted by other tests competing for the CPU.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use geoflow_core::curvature::{psi, scalar_curvature};
use geoflow_core::curves::{
    energy_profile, geodesic_distance, relative_variation, train_mllm, variance, LinearCurve,
    MllmConfig,
};
use geoflow_core::diff::evaluate_with_jets;
use geoflow_core::eikonal::{
    curvature_scaled_loss, loss_gradient, train_distance_field, validate_field, DistanceField,
    EikonalConfig,
};
use geoflow_core::geodesic::{exp_map, log_map, IntegratorConfig, ShootingConfig};
use geoflow_core::io::Standardisation;
use geoflow_core::manifold::{DomainBox, Euclidean, Immersion, MlpDecoder, Peaks, Sphere};
use geoflow_core::nn::{Activation, MlpNetwork};
use geoflow_core::sampling::{chi_square_uniformity, mh_sample, welch_t_greater, MhConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: &str, title: &str, pass: bool, detail: &str) {
    println!(
        "{id} {title}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn reference_integrator() -> IntegratorConfig {
    IntegratorConfig {
        delta: 1e-3,
        omega: 1e-2,
        order: 4,
        ..Default::default()
    }
}

#[test]
fn c1_flat_space_exactness() {
    let _g = serial();
    let start = Instant::now();
    let e = Euclidean { dim: 2 };
    let cfg = reference_integrator();
    let (p, v) = ([0.5, -1.0], [1.2, 0.7]);
    let path = exp_map(&e, &p, &v, &cfg).unwrap();
    let end_err = path
        .endpoint()
        .iter()
        .zip(p.iter().zip(&v))
        .map(|(a, (p, v))| (a - p - v).abs())
        .fold(0.0, f64::max);

    let q = [1.7, -0.3];
    let zero = [0.0, 0.0];
    let log = log_map(&e, &p, &q, &cfg, &ShootingConfig::default(), Some(&zero)).unwrap();
    let v_err = log
        .v
        .iter()
        .zip(q.iter().zip(&p))
        .map(|(a, (q, p))| (a - (q - p)).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();

    let pass = end_err <= 1e-9
        && log.converged
        && log.iterations <= 2
        && v_err <= 1e-8
        && elapsed < Duration::from_secs(1);
    let detail = format!(
        "endpoint error {end_err:.2e}, log iterations {}, velocity error {v_err:.2e}, {elapsed:.2?}",
        log.iterations
    );
    report("C1", "flat-space exactness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c2_energy_conservation() {
    let _g = serial();
    let start = Instant::now();
    let cfg = reference_integrator();
    let half = IntegratorConfig { delta: 5e-4, ..cfg };
    let sphere = Sphere { radius: 1.0 };
    // Trajectories fast enough that the drift sits well above rounding noise.
    type Case<'a> = (&'a str, &'a dyn Immersion, [f64; 2], [f64; 2]);
    let cases: [Case; 3] = [
        ("sphere", &sphere, [0.3, 0.0], [0.0, 5.0]),
        ("sphere", &sphere, [1.0, 0.0], [2.0, 3.0]),
        ("peaks", &Peaks, [1.0, 1.0], [-1.0, 0.5]),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, im, p, v) in cases {
        let full = exp_map(im, &p, &v, &cfg).unwrap();
        let halved = exp_map(im, &p, &v, &half).unwrap();
        let (a, b) = (full.relative_drift(), halved.relative_drift());
        let ratio = a / b;
        pass &= full.states.len() == 1001 && a <= 1e-6 && ratio >= 8.0;
        details.push(format!("{name} drift {a:.2e} ratio {ratio:.1}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(10);
    let detail = format!("{}, {elapsed:.2?}", details.join("; "));
    report("C2", "energy conservation", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c3_sphere_geodesy() {
    let _g = serial();
    let cfg = reference_integrator();
    let scfg = ShootingConfig::default();
    let s = Sphere { radius: 1.0 };
    let equator = geodesic_distance(&s, &[FRAC_PI_2, -0.5], &[FRAC_PI_2, 0.5], &cfg, &scfg)
        .unwrap()
        .distance;
    let meridian = geodesic_distance(&s, &[0.5, 0.3], &[2.0, 0.3], &cfg, &scfg)
        .unwrap()
        .distance;
    // A general pair against the spherical law of cosines.
    let (a, b): ([f64; 2], [f64; 2]) = ([1.0, -0.7], [1.9, 0.6]);
    let central = (a[0].cos() * b[0].cos() + a[0].sin() * b[0].sin() * (b[1] - a[1]).cos()).acos();
    let general = geodesic_distance(&s, &a, &b, &cfg, &scfg).unwrap().distance;

    let mut worst_r: f64 = 0.0;
    for r in [0.5, 1.0, 2.0] {
        for p in [[0.4, 0.0], [FRAC_PI_2, 1.0], [2.5, -2.0]] {
            let got = scalar_curvature(&Sphere { radius: r }, &p).unwrap();
            worst_r = worst_r.max((got - 2.0 / (r * r)).abs());
        }
    }
    let pass = (equator - 1.0).abs() <= 1e-4
        && (meridian - 1.5).abs() <= 1e-4
        && (general - central).abs() <= 1e-4
        && worst_r <= 1e-6;
    let detail = format!(
        "equator {equator:.8}, meridian {meridian:.8} vs 1.5, general {general:.8} vs {central:.8}, worst |R - 2/r^2| {worst_r:.2e}"
    );
    report("C3", "sphere geodesy", pass, &detail);
    assert!(pass, "{detail}");
}

/// Height, gradient and Hessian of the peaks function, written out by hand
/// as polynomial times Gaussian terms.
fn peaks_derivatives(x: f64, y: f64) -> (f64, f64, f64, f64, f64) {
    let ea = (-x.powi(2) - y.powi(2) - 2.0 * y - 1.0).exp();
    let eb = (-x.powi(2) - y.powi(2)).exp();
    let ec = (-x.powi(2) - 2.0 * x - y.powi(2) - 1.0).exp();
    let fx = (-6.0 * x.powi(3) + 12.0 * x.powi(2) - 6.0) * ea
        + (-20.0 * x.powi(4) + 34.0 * x.powi(2) - 20.0 * x * y.powi(5) - 2.0) * eb
        + (2.0 * x / 3.0 + 2.0 / 3.0) * ec;
    let fy = (-6.0 * x.powi(2) * y - 6.0 * x.powi(2) + 12.0 * x * y + 12.0 * x - 6.0 * y - 6.0)
        * ea
        + (-20.0 * x.powi(3) * y + 4.0 * x * y - 20.0 * y.powi(6) + 50.0 * y.powi(4)) * eb
        + (2.0 * y / 3.0) * ec;
    let fxx = (12.0 * x.powi(4) - 24.0 * x.powi(3) - 18.0 * x.powi(2) + 36.0 * x) * ea
        + (40.0 * x.powi(5) - 148.0 * x.powi(3) + 40.0 * x.powi(2) * y.powi(5) + 72.0 * x
            - 20.0 * y.powi(5))
            * eb
        + (-4.0 * x.powi(2) / 3.0 - 8.0 * x / 3.0 - 2.0 / 3.0) * ec;
    let fxy = (12.0 * x.powi(3) * y + 12.0 * x.powi(3) - 24.0 * x.powi(2) * y - 24.0 * x.powi(2)
        + 12.0 * y
        + 12.0)
        * ea
        + (40.0 * x.powi(4) * y - 68.0 * x.powi(2) * y + 40.0 * x * y.powi(6)
            - 100.0 * x * y.powi(4)
            + 4.0 * y)
            * eb
        + (-4.0 * x * y / 3.0 - 4.0 * y / 3.0) * ec;
    let fyy = (12.0 * x.powi(2) * y.powi(2) + 24.0 * x.powi(2) * y + 6.0 * x.powi(2)
        - 24.0 * x * y.powi(2)
        - 48.0 * x * y
        - 12.0 * x
        + 12.0 * y.powi(2)
        + 24.0 * y
        + 6.0)
        * ea
        + (40.0 * x.powi(3) * y.powi(2) - 20.0 * x.powi(3) - 8.0 * x * y.powi(2)
            + 4.0 * x
            + 40.0 * y.powi(7)
            - 220.0 * y.powi(5)
            + 200.0 * y.powi(3))
            * eb
        + (2.0 / 3.0 - 4.0 * y.powi(2) / 3.0) * ec;
    (fx, fy, fxx, fxy, fyy)
}

#[test]
fn c4_peaks_curvature_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, y) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let (fx, fy, fxx, fxy, fyy) = peaks_derivatives(x, y);
        let expected = 2.0 * (fxx * fyy - fxy * fxy) / (1.0 + fx * fx + fy * fy).powi(2);
        let got = scalar_curvature(&Peaks, &[x, y]).unwrap();
        worst = worst.max((got - expected).abs());
    }
    let pass = worst <= 1e-5;
    let detail = format!("100 points, worst error {worst:.2e}");
    report("C4", "peaks curvature oracle", pass, &detail);
    assert!(pass, "{detail}");
}

/// Central finite difference of `f` for the mixed partial over `index`,
/// built as a tensor product of one-dimensional stencils.
fn fd_partial(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], index: &[usize], h: f64) -> Vec<f64> {
    let mut terms: Vec<(Vec<f64>, f64)> = vec![(x.to_vec(), 1.0)];
    for var in 0..x.len() {
        let m = index.iter().filter(|&&i| i == var).count();
        let stencil: &[(f64, f64)] = match m {
            0 => continue,
            1 => &[(-1.0, -0.5), (1.0, 0.5)],
            2 => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
            _ => &[(-2.0, -0.5), (-1.0, 1.0), (1.0, -1.0), (2.0, 0.5)],
        };
        let scale = h.powi(m as i32);
        terms = terms
            .iter()
            .flat_map(|(pt, w)| {
                stencil.iter().map(move |&(off, sw)| {
                    let mut q = pt.clone();
                    q[var] += off * h;
                    (q, w * sw / scale)
                })
            })
            .collect();
    }
    let mut out: Vec<f64> = Vec::new();
    for (pt, w) in terms {
        let v = f(&pt);
        if out.is_empty() {
            out = vec![0.0; v.len()];
        }
        for (o, v) in out.iter_mut().zip(v) {
            *o += w * v;
        }
    }
    out
}

fn multi_indices(d: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..order {
        out = out
            .into_iter()
            .flat_map(|idx| {
                let from = idx.last().copied().unwrap_or(0);
                (from..d).map(move |i| {
                    let mut n = idx.clone();
                    n.push(i);
                    n
                })
            })
            .collect();
    }
    out
}

/// Worst normwise relative error per derivative order over `points`.
fn jet_errors(im: &dyn Immersion, points: &[Vec<f64>]) -> [f64; 3] {
    let steps = [1e-5, 1e-4, 1e-3];
    let mut worst = [0.0f64; 3];
    let f = |x: &[f64]| im.map_point(x);
    for x in points {
        let jets = evaluate_with_jets(|s| im.map(s), x, 3).unwrap();
        for order in 1..=3 {
            let (mut diff, mut norm) = (0.0, 0.0);
            for idx in multi_indices(x.len(), order) {
                let fd = fd_partial(&f, x, &idx, steps[order - 1]);
                for (jet, fd) in jets.iter().zip(fd) {
                    let exact = match idx.as_slice() {
                        [i] => jet.d1(*i),
                        [i, j] => jet.d2(*i, *j),
                        [i, j, k] => jet.d3(*i, *j, *k),
                        _ => unreachable!(),
                    };
                    diff += (exact - fd).powi(2);
                    norm += fd * fd;
                }
            }
            worst[order - 1] = worst[order - 1].max(diff.sqrt() / norm.sqrt().max(1.0));
        }
    }
    worst
}

#[test]
fn c5_derivative_correctness() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let decoder_net = MlpNetwork::random(
        &[2, 32, 784],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let decoder = MlpDecoder::new(decoder_net, DomainBox::cube(2, -2.0, 2.0)).unwrap();
    let manifolds: Vec<(&str, Box<dyn Immersion>)> = vec![
        ("euclidean(3)", Box::new(Euclidean { dim: 3 })),
        ("sphere(1)", Box::new(Sphere { radius: 1.0 })),
        ("sphere(2)", Box::new(Sphere { radius: 2.0 })),
        ("peaks", Box::new(Peaks)),
        ("decoder 2-32-784", Box::new(decoder)),
    ];
    let tol = [1e-5, 1e-4, 1e-3];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, im) in &manifolds {
        let domain = im.domain();
        let points: Vec<Vec<f64>> = (0..5).map(|_| domain.sample_uniform(&mut rng)).collect();
        let err = jet_errors(im.as_ref(), &points);
        pass &= err.iter().zip(&tol).all(|(e, t)| e <= t);
        details.push(format!(
            "{name} {:.1e}/{:.1e}/{:.1e}",
            err[0], err[1], err[2]
        ));
    }

    // Parameter gradient of the distance-field training loss against central
    // differences of the independently evaluated pointwise loss.
    let (lambda, alpha) = (0.3, 0.1);
    let source = vec![0.4, -0.6];
    let net = MlpNetwork::random(
        &[3, 8, 8, 1],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let field = DistanceField::new(
        &Peaks,
        net,
        source,
        Standardisation::for_domain(&Peaks.domain()),
        true,
    )
    .unwrap();
    let batch: Vec<Vec<f64>> = (0..30)
        .map(|_| Peaks.domain().sample_uniform(&mut rng))
        .collect();
    let (loss, grad) = loss_gradient(&Peaks, &field, &batch, lambda, alpha).unwrap();
    let pointwise = curvature_scaled_loss(&Peaks, &field, &batch, lambda, alpha)
        .unwrap()
        .total;
    let params = field.network().params();
    let h = 1e-6;
    let mut worst_grad: f64 = 0.0;
    for i in 0..params.len() {
        let at = |delta: f64| {
            let mut f = field.clone();
            let mut p = params.clone();
            p[i] += delta;
            f.set_params(&p).unwrap();
            curvature_scaled_loss(&Peaks, &f, &batch, lambda, alpha)
                .unwrap()
                .total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    let loss_gap = (loss - pointwise).abs() / pointwise.abs().max(1.0);
    pass &= worst_grad <= 1e-4 && loss_gap <= 1e-10;
    details.push(format!(
        "training gradient {worst_grad:.1e} over {} parameters",
        params.len()
    ));

    let detail = details.join("; ");
    report("C5", "derivative correctness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c6_curve_comparison() {
    let _g = serial();
    let start = Instant::now();
    let s = Sphere { radius: 1.0 };
    let (p, q) = ([1.0, -0.7], [1.9, 0.6]);
    let dist = geodesic_distance(
        &s,
        &p,
        &q,
        &reference_integrator(),
        &ShootingConfig::default(),
    )
    .unwrap();
    let path = &dist.best_result().path;
    let n = path.states.len();
    let mllm = train_mllm(
        &s,
        &p,
        &q,
        &MllmConfig {
            ensemble: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let mut curve = mllm.best.clone();
    curve.grid = n;
    let linear = LinearCurve {
        p: p.to_vec(),
        q: q.to_vec(),
        n,
    };

    let var_linear = variance(&energy_profile(&s, &linear).unwrap());
    let var_mllm = variance(&energy_profile(&s, &curve).unwrap());
    let symplectic = energy_profile(&s, path).unwrap();
    let var_symplectic = variance(&symplectic);
    let rel = relative_variation(&symplectic);
    let elapsed = start.elapsed();

    let pass = var_linear > 0.0
        && var_mllm > var_symplectic
        && rel <= 1e-4
        && mllm.length >= dist.distance - 1e-3
        && elapsed < Duration::from_secs(300);
    let detail = format!(
        "var linear {var_linear:.3e}, mllm {var_mllm:.3e}, symplectic {var_symplectic:.3e}, relative variation {rel:.2e}, \
         mllm length {:.6} vs distance {:.6}, {elapsed:.2?}",
        mllm.length, dist.distance
    );
    report("C6", "curve comparison", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c7_eikonal_benchmark() {
    let _g = serial();
    let start = Instant::now();
    let e = Euclidean { dim: 2 };
    let domain = DomainBox::cube(2, -3.0, 3.0);
    // Desk scale: batch 2000 with the reference λ, α and learning rate.
    let cfg = EikonalConfig {
        batch: 2000,
        epochs_max: 2000,
        seed: 1,
        ..Default::default()
    };
    assert_eq!((cfg.lambda, cfg.alpha, cfg.lr), (1e-3, 0.1, 3e-4));
    let trained = train_distance_field(&e, &[0.0, 0.0], &domain, &cfg, None).unwrap();
    let oracle = |x: &[f64]| (x[0] * x[0] + x[1] * x[1]).sqrt();
    let v = validate_field(
        &e,
        &trained.field,
        &domain,
        41,
        cfg.lambda,
        cfg.alpha,
        cfg.exclusion_radius,
        Some(&oracle),
    )
    .unwrap();
    let mae = v.mae.unwrap();
    let elapsed = start.elapsed();
    let pass = mae <= 5e-2 && v.unit_flow_fraction >= 0.95 && elapsed <= Duration::from_secs(900);
    let detail = format!(
        "MAE {mae:.4}, unit flow {:.1}% of {} points, {} epochs, {elapsed:.1?}",
        100.0 * v.unit_flow_fraction,
        v.points,
        trained.history.len()
    );
    report("C7", "eikonal benchmark", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn c8_sampler_property() {
    let _g = serial();
    let n = 5000;
    let mh = MhConfig {
        alpha: 1.0,
        seed: 8,
        ..Default::default()
    }
    .keeping(n);
    let samples = mh_sample(&Peaks, &Peaks.domain(), &mh).unwrap();
    let psi_mh: Vec<f64> = samples.scalar.iter().map(|&r| psi(r, 1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let psi_uniform: Vec<f64> = (0..n)
        .map(|_| {
            psi(
                scalar_curvature(&Peaks, &Peaks.domain().sample_uniform(&mut rng)).unwrap(),
                1.0,
            )
        })
        .collect();
    let (t, p_value) = welch_t_greater(&psi_mh, &psi_uniform);

    // Flat target: a wide proposal and thinning keep successive kept states
    // close to independent.
    let e = Euclidean { dim: 2 };
    let flat = MhConfig {
        proposal_sigma: 2.0,
        thin: 10,
        seed: 8,
        ..Default::default()
    }
    .keeping(n);
    let flat_samples = mh_sample(&e, &e.domain(), &flat).unwrap();
    let (chi2, p_uniform) = chi_square_uniformity(&flat_samples.points, &e.domain(), 10);

    let pass = psi_mh.len() == n && p_value < 0.01 && flat_samples.len() == n && p_uniform > 0.01;
    let detail = format!(
        "peaks mean psi {:.4} vs {:.4}, t {t:.2}, p {p_value:.1e}; euclidean chi2 {chi2:.1} on 99 dof, p {p_uniform:.3}",
        psi_mh.iter().sum::<f64>() / n as f64,
        psi_uniform.iter().sum::<f64>() / n as f64
    );
    report("C8", "sampler property", pass, &detail);
    assert!(pass, "{detail}");
}

fn geoflow(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "geoflow {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

#[test]
fn c9_determinism() {
    let _g = serial();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "shoot",
            vec![
                "shoot",
                "--manifold",
                "peaks",
                "--p",
                "1,1",
                "--v",
                "-1,0.5",
            ],
        ),
        (
            "connect",
            vec![
                "connect",
                "--manifold",
                "sphere",
                "--p",
                "1,-0.7",
                "--q",
                "1.9,0.6",
                "--seeds",
                "3",
                "--seed",
                "2",
            ],
        ),
        (
            "compare",
            vec![
                "compare",
                "--manifold",
                "sphere",
                "--p",
                "1,-0.7",
                "--q",
                "1.9,0.6",
                "--ensemble",
                "2",
                "--steps",
                "100",
                "--seed",
                "3",
            ],
        ),
        (
            "curvature-field",
            vec!["curvature-field", "--manifold", "peaks", "--grid", "21"],
        ),
        (
            "sample-curvature",
            vec![
                "sample-curvature",
                "--manifold",
                "peaks",
                "--n",
                "1000",
                "--seed",
                "4",
            ],
        ),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, args) in &runs {
        let dir = tempfile::tempdir().unwrap();
        let a = geoflow(dir.path(), args);
        let b = geoflow(dir.path(), args);
        let same = a == b && !a.is_empty();
        pass &= same;
        details.push(format!(
            "{name} {}",
            if same { "identical" } else { "differs" }
        ));
    }

    // Training writes weights and history files; compare those and the
    // evaluated field.
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let train = [
            "train-eikonal",
            "--manifold",
            "euclidean",
            "--source",
            "0,0",
            "--epochs",
            "30",
            "--batch",
            "200",
            "--seed",
            "5",
            "--weights",
            "w.json",
            "--history",
            "h.csv",
        ];
        geoflow(dir.path(), &train);
        let eval = geoflow(
            dir.path(),
            &["eval-field", "--weights", "w.json", "--grid", "11"],
        );
        let weights = std::fs::read(dir.path().join("w.json")).unwrap();
        let history = std::fs::read(dir.path().join("h.csv")).unwrap();
        outputs.push((weights, history, eval));
    }
    let same = outputs[0] == outputs[1];
    pass &= same;
    details.push(format!(
        "train-eikonal/eval-field {}",
        if same { "identical" } else { "differs" }
    ));

    let detail = details.join(", ");
    report("C9", "determinism", pass, &detail);
    assert!(pass, "{detail}");
}

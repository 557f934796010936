use std::fs;
use std::path::Path;

use rayon::prelude::*;

use subrad_core::modes::{infinite_lattice_mode, locate_crossing, LatticeSumOptions};
use subrad_core::precision::{precision_report, PrecisionInputs};
use subrad_core::scene::{DipoleConfig, SceneConfig, SweepVariable};
use subrad_core::sense::{
    default_samples, integrated_sensitivity, jacobian, max_sensitivity, mode_window, model_modes, perturbed_model,
    reconstruct, sensitivity_curve, ReconstructionOptions,
};
use subrad_core::{sweep_spectrum, GridSpec, Preset, TransmissionModel};

use crate::output::{sha256_hex, RunManifest, Writer};
use crate::{CliError, Command, Common, PresetArg, Range};

type Res<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn run(command: Command) -> Res<()> {
    match command {
        Command::Spectrum { common, grid, refine } => spectrum(&common, grid, refine),
        Command::Sweep { common, sweep, realizations, keep_realizations, tolerance } => {
            sweep_cmd(&common, &sweep.var, sweep.range, realizations, keep_realizations, tolerance)
        }
        Command::Lattice { grid, polarization, tolerance, out, name, figure } => {
            lattice(grid, &polarization, tolerance, &out, name.as_deref(), figure)
        }
        Command::Modes { common } => modes(&common),
        Command::Dump { common } => dump(&common),
        Command::Sense { common, grid, integrated } => sense(&common, grid, integrated.map(Into::into)),
        Command::Jacobian { common, wrt, samples } => jacobian_cmd(&common, wrt.into(), samples.as_deref()),
        Command::Reconstruct { common, wrt, measured, truth, initial } => {
            reconstruct_cmd(&common, wrt.into(), measured.as_deref(), truth.as_deref(), initial.as_deref())
        }
        Command::Precision { preset, gamma_sub, gamma_sub_fraction, atoms, p, tau, eta, contrast, out, name } => {
            precision(preset, gamma_sub, gamma_sub_fraction, [atoms, p, tau, eta, contrast], out.as_deref(), name.as_deref())
        }
    }
}

/// Read the scene, apply the seed override and open the output writer.
fn load(common: &Common, command: &str) -> Res<(SceneConfig, Writer)> {
    let bytes = fs::read(&common.scene).map_err(|e| invalid(format!("cannot read {}: {e}", common.scene.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| invalid("scene file is not UTF-8"))?;
    let mut config = SceneConfig::from_toml(&text)?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    let mut manifest = RunManifest::new(command, common.figure.clone());
    manifest.scene_file = Some(common.scene.display().to_string());
    manifest.scene_hash = Some(sha256_hex(&bytes));
    manifest.scene = serde_json::to_value(&config).ok();
    if let Some(seed) = config.imperfections.seed {
        manifest.seeds.push(seed);
    }
    // resolve once up front so bad scenes fail before any output is written
    let resolved = config.build()?;
    if config.imperfections.sigma > 0.0 {
        manifest.param("motion_model", "independent Gaussian position fluctuations per emitter");
    }
    if let subrad_core::DriveKind::GaussianBeam(b) = &resolved.drive.kind {
        manifest.param("beam_waist", b.waist);
        manifest.param("beam_focus", format!("{} {} {}", b.focus.x, b.focus.y, b.focus.z));
    }
    if let Some(layout) = &resolved.detection {
        manifest.param("detection", format!("{layout:?}"));
    }
    let stem = common.name.clone().unwrap_or_else(|| command.to_string());
    Ok((config, Writer::new(&common.out, &stem, manifest)?))
}

fn model_of(config: &SceneConfig) -> Res<TransmissionModel> {
    Ok(config.build()?.model()?)
}

fn parse_list(text: &str) -> Res<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number '{s}': {e}"))))
        .collect()
}

fn spectrum(common: &Common, grid: Range, refine: bool) -> Res<()> {
    let (config, mut w) = load(common, "spectrum")?;
    let spec = GridSpec::new(grid.start, grid.stop, grid.points, refine)?;
    let record = sweep_spectrum(&model_of(&config)?, &spec)?;
    w.manifest.param("grid", format!("{}:{}:{}", grid.start, grid.stop, grid.points));
    w.manifest.param("refine", refine);
    w.manifest.param("refinement_levels", record.refinement_levels);
    let csv = record.to_csv();
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows: Vec<String> = lines.map(str::to_string).collect();
    let path = w.csv("", &header, &rows)?;
    w.finish()?;
    println!("wrote {} ({} points)", path.display(), rows.len());
    Ok(())
}

fn column_name(var: SweepVariable) -> &'static str {
    match var {
        SweepVariable::Spacing => "a",
        other => other.name(),
    }
}

fn sweep_cmd(common: &Common, var: &str, range: Range, realizations: usize, keep: bool, tolerance: f64) -> Res<()> {
    let (config, mut w) = load(common, "sweep")?;
    let var: SweepVariable = var.parse()?;
    if range.points == 0 {
        return Err(invalid("sweep range needs at least one point"));
    }
    if realizations == 0 {
        return Err(invalid("--realizations must be at least 1"));
    }
    if !(tolerance > 0.0) {
        return Err(invalid("--tolerance must be positive"));
    }
    let base_seed = config.imperfections.seed;
    let xs = range.values();
    let points = xs.iter().map(|&x| config.with_value(var, x)).collect::<Result<Vec<_>, _>>()?;
    let stochastic = points.iter().any(|c| c.imperfections.is_stochastic());
    if stochastic && base_seed.is_none() {
        return Err(invalid("stochastic sweeps need --seed (or imperfections.seed in the scene)"));
    }
    let seeds: Vec<u64> = match base_seed {
        Some(s) if stochastic => (0..realizations as u64).map(|r| s.wrapping_add(r)).collect(),
        _ => Vec::new(),
    };

    let jobs: Vec<(usize, Option<u64>)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            if c.imperfections.is_stochastic() {
                seeds.iter().map(|&s| (i, Some(s))).collect::<Vec<_>>()
            } else {
                vec![(i, None)]
            }
        })
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let c = match seed {
                Some(s) => points[i].with_seed(s),
                None => points[i].clone(),
            };
            let model = model_of(&c)?;
            Ok(max_sensitivity(&model, None, tolerance)?.value)
        })
        .collect::<Res<Vec<f64>>>()?;

    let xname = column_name(var);
    let mut rows = Vec::with_capacity(xs.len());
    let mut per_realization = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let v: Vec<f64> = jobs.iter().zip(&values).filter(|(j, _)| j.0 == i).map(|(_, v)| *v).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let stderr = if v.len() > 1 {
            let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            format!("{}", (var / v.len() as f64).sqrt())
        } else {
            String::new()
        };
        rows.push(format!("{x},{mean},{stderr}"));
        for (job, val) in jobs.iter().zip(&values).filter(|(j, _)| j.0 == i) {
            per_realization.push(format!("{x},{},{val}", job.1.map(|s| s.to_string()).unwrap_or_default()));
        }
    }
    w.manifest.seeds = seeds.clone();
    w.manifest.param("sweep", format!("{}={}:{}:{}", var.name(), range.start, range.stop, range.points));
    w.manifest.param("realizations", if stochastic { realizations } else { 1 });
    w.manifest.param("tolerance", tolerance);
    let path = w.csv("", &format!("{xname},S_max,stderr"), &rows)?;
    if keep {
        w.csv("_realizations", &format!("{xname},seed,S_max"), &per_realization)?;
    }
    w.finish()?;
    println!("wrote {} ({} points, {} evaluations)", path.display(), rows.len(), values.len());
    Ok(())
}

fn parse_polarization(text: &str) -> Res<subrad_core::Dipole> {
    let cfg = if text.contains(',') {
        let v = parse_list(text)?;
        if v.len() != 3 {
            return Err(invalid("polarization vector needs three components"));
        }
        DipoleConfig::Vector([v[0], v[1], v[2]])
    } else {
        DipoleConfig::Named(text.to_string())
    };
    Ok(cfg.resolve()?)
}

fn lattice(grid: Range, polarization: &str, tolerance: f64, out: &Path, name: Option<&str>, figure: Option<String>) -> Res<()> {
    let dipole = parse_polarization(polarization)?;
    if grid.points == 0 || !(grid.start > 0.0) || !(grid.stop > 0.0) {
        return Err(invalid("lattice grid needs positive spacings and at least one point"));
    }
    let opts = LatticeSumOptions::default();
    let xs = grid.values();
    let modes = xs
        .par_iter()
        .map(|&a| {
            let q = std::f64::consts::PI / a;
            let b = infinite_lattice_mode([0.0, 0.0], a, &dipole, &opts)?;
            let d = infinite_lattice_mode([q, q], a, &dipole, &opts)?;
            Ok((a, b, d))
        })
        .collect::<Res<Vec<_>>>()?;
    let rows: Vec<String> = modes
        .iter()
        .map(|(a, b, d)| format!("{a},{},{},{},{}", b.shift(), b.decay_rate(), d.shift(), (b.shift() - d.shift()).abs()))
        .collect();
    let mut crossings = Vec::new();
    for pair in modes.windows(2) {
        let g0 = pair[0].1.shift() - pair[0].2.shift();
        let g1 = pair[1].1.shift() - pair[1].2.shift();
        if g0 == 0.0 {
            crossings.push(pair[0].0);
        } else if g0 * g1 < 0.0 {
            crossings.push(locate_crossing(pair[0].0, pair[1].0, &dipole, tolerance, &opts)?);
        }
    }
    let mut manifest = RunManifest::new("lattice", figure);
    manifest.param("grid", format!("{}:{}:{}", grid.start, grid.stop, grid.points));
    manifest.param("polarization", polarization);
    manifest.param("tolerance", tolerance);
    let crossing_text: Vec<String> = crossings.iter().map(|c| c.to_string()).collect();
    manifest.param("crossings", crossing_text.join(" "));
    let mut w = Writer::new(out, name.unwrap_or("lattice"), manifest)?;
    let path = w.csv("", "a,J_B,Gamma_B,J_D,abs_diff", &rows)?;
    w.csv("_crossings", "a_cross", &crossing_text)?;
    w.finish()?;
    println!("wrote {}", path.display());
    for c in &crossings {
        println!("J_B = J_D at a = {c}");
    }
    Ok(())
}

fn modes(common: &Common) -> Res<()> {
    let (config, mut w) = load(common, "modes")?;
    let m = model_modes(&model_of(&config)?)?;
    let rows: Vec<String> =
        (0..m.len()).map(|a| format!("{a},{},{},{}", m.shift(a), m.decay_rate(a), m.classes[a].as_str())).collect();
    let path = w.csv("", "alpha,J_alpha,Gamma_alpha,class", &rows)?;
    w.finish()?;
    println!("wrote {} ({} modes)", path.display(), rows.len());
    Ok(())
}

fn dump(common: &Common) -> Res<()> {
    let (config, mut w) = load(common, "dump")?;
    let model = model_of(&config)?;
    let c = model.couplings();
    let n = c.dim();
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rows.push(format!("{i},{j},{},{}", c.j[(i, j)], c.gamma[(i, j)]));
        }
    }
    w.manifest.param("gamma_prime", c.gamma_prime);
    let path = w.csv("", "i,j,J,Gamma", &rows)?;
    w.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sense(common: &Common, grid: Option<Range>, integrated: Option<subrad_core::sense::Wrt>) -> Res<()> {
    let (config, mut w) = load(common, "sense")?;
    let model = model_of(&config)?;
    let spec = match grid {
        Some(g) => GridSpec::new(g.start, g.stop, g.points, false)?,
        None => {
            let (lo, hi) = mode_window(&model_modes(&model)?, 5.0);
            GridSpec::new(lo, hi, 2001, false)?
        }
    };
    let curve = sensitivity_curve(&model, &spec)?;
    let window = (spec.values()[0], *spec.values().last().unwrap_or(&0.0));
    let best = max_sensitivity(&model, Some(window), 1e-8)?;
    w.manifest.param("S_max", best.value);
    w.manifest.param("argmax", best.argmax);
    if let Some(wrt) = integrated {
        let i = integrated_sensitivity(&model, wrt, None)?;
        w.manifest.param("integrated", i.value);
        w.manifest.param("integrated_tail", i.tail);
        println!("integrated |grad T| = {} (tail {})", i.value, i.tail);
    }
    let rows: Vec<String> = curve.grid.iter().zip(&curve.values).map(|(d, s)| format!("{d},{s}")).collect();
    let path = w.csv("", "Delta_L,S", &rows)?;
    w.finish()?;
    println!("S_max = {} at Delta_L = {}", best.value, best.argmax);
    println!("wrote {}", path.display());
    Ok(())
}

fn jacobian_cmd(common: &Common, wrt: subrad_core::sense::Wrt, samples: Option<&str>) -> Res<()> {
    let (config, mut w) = load(common, "jacobian")?;
    let model = model_of(&config)?;
    let samples = match samples {
        Some(s) => parse_list(s)?,
        None => default_samples(&model)?,
    };
    let report = jacobian(&model, &samples, wrt)?;
    let mut rows = Vec::new();
    for i in 0..report.matrix.nrows() {
        for j in 0..report.matrix.ncols() {
            rows.push(format!("{i},{j},{}", report.matrix[(i, j)]));
        }
    }
    let sample_text: Vec<String> = samples.iter().map(|s| s.to_string()).collect();
    w.manifest.param("samples", sample_text.join(" "));
    w.manifest.param("wrt", format!("{wrt:?}").to_lowercase());
    let path = w.csv("", "i,j,dT_dp", &rows)?;
    w.csv("_summary", "rank,kappa", &[format!("{},{}", report.rank, report.kappa)])?;
    w.finish()?;
    println!("rank={}, kappa={}", report.rank, report.kappa);
    println!("wrote {}", path.display());
    Ok(())
}

fn read_measurements(path: &Path) -> Res<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| invalid(format!("missing column {name}")));
    let (di, ti) = (col("Delta_L")?, col("T")?);
    let mut d = Vec::new();
    let mut t = Vec::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let get = |i: usize| {
            f.get(i).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| invalid(format!("bad row '{l}'")))
        };
        d.push(get(di)?);
        t.push(get(ti)?);
    }
    Ok((d, t))
}

fn reconstruct_cmd(
    common: &Common,
    wrt: subrad_core::sense::Wrt,
    measured: Option<&Path>,
    truth: Option<&str>,
    initial: Option<&str>,
) -> Res<()> {
    let (config, mut w) = load(common, "reconstruct")?;
    let model = model_of(&config)?;
    let truth = truth.map(parse_list).transpose()?;
    let (samples, data) = match (measured, &truth) {
        (Some(p), _) => read_measurements(p)?,
        (None, Some(t)) => {
            let samples = default_samples(&model)?;
            let perturbed = perturbed_model(&model, wrt, t)?;
            let data = samples.iter().map(|&d| perturbed.transmittance(d)).collect::<Result<Vec<_>, _>>()?;
            (samples, data)
        }
        (None, None) => return Err(invalid("give --measured or --truth")),
    };
    let initial = match initial {
        Some(s) => parse_list(s)?,
        None => vec![0.0; model.len()],
    };
    let result = reconstruct(&model, &samples, &data, wrt, &initial, &ReconstructionOptions::default())?;
    let rows: Vec<String> = result
        .params
        .iter()
        .enumerate()
        .map(|(j, p)| match &truth {
            Some(t) => format!("{j},{p},{},{}", t[j], (p - t[j]).abs()),
            None => format!("{j},{p},,"),
        })
        .collect();
    w.manifest.param("wrt", format!("{wrt:?}").to_lowercase());
    w.manifest.param("samples", samples.len());
    let path = w.csv("", "j,estimate,truth,abs_error", &rows)?;
    w.csv(
        "_summary",
        "residual,iterations,converged,kappa",
        &[format!("{},{},{},{}", result.residual, result.iterations, result.converged, result.kappa)],
    )?;
    w.finish()?;
    println!(
        "converged={} after {} iterations, residual {}, kappa {}",
        result.converged, result.iterations, result.residual, result.kappa
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn precision(
    preset: PresetArg,
    gamma_sub: Option<f64>,
    fraction: Option<f64>,
    [atoms, p, tau, eta, contrast]: [f64; 5],
    out: Option<&Path>,
    name: Option<&str>,
) -> Res<()> {
    let preset = match preset {
        PresetArg::RbD2 => Preset::RbD2,
        PresetArg::SrClock => Preset::SrClock,
    };
    let t = preset.transition();
    let gamma_sub = match (gamma_sub, fraction) {
        (Some(g), None) => g,
        (None, Some(f)) => f * t.gamma_0,
        (None, None) => 0.01 * t.gamma_0,
        (Some(_), Some(_)) => return Err(invalid("give either --gamma-sub or --gamma-sub-fraction")),
    };
    let inputs = PrecisionInputs::new(gamma_sub, t.gamma_0, t.omega_0, atoms, p, tau)?.with_efficiency(eta, contrast)?;
    let r = precision_report(&inputs);
    let table: [(&str, String, &str); 12] = [
        ("transition", t.name.to_string(), ""),
        ("gamma_sub", format!("{gamma_sub:e}"), "s^-1"),
        ("gamma_0", format!("{:e}", t.gamma_0), "s^-1"),
        ("omega_0", format!("{:e}", t.omega_0), "s^-1"),
        ("atoms", atoms.to_string(), ""),
        ("p", p.to_string(), ""),
        ("tau", tau.to_string(), "s"),
        ("eta_eff", eta.to_string(), ""),
        ("contrast", contrast.to_string(), ""),
        ("delta_omega", format!("{:e}", r.delta_omega), "s^-1"),
        ("fractional", format!("{:e}", r.fractional), ""),
        ("power", format!("{:e}", r.power_watts), "W"),
    ];
    for (k, v, u) in &table {
        println!("{k:<12} {v:>24} {u}");
    }
    println!("({})", r.disclaimer);
    if let Some(dir) = out {
        let mut manifest = RunManifest::new("precision", None);
        manifest.param("disclaimer", r.disclaimer);
        let mut w = Writer::new(dir, name.unwrap_or("precision"), manifest)?;
        let rows: Vec<String> = table.iter().map(|(k, v, u)| format!("{k},{v},{u}")).collect();
        w.csv("", "quantity,value,unit", &rows)?;
        w.finish()?;
    }
    Ok(())
}

//! Subcommand implementations.

use std::fs;

use oistab::certifier::{
    certify, falsify, lyapunov_check, FalsifyOptions, LyapunovGrid,
};
use oistab::gains::{cascade_gains, cascade3_gains, output_input_gains, Flagged};
use oistab::jets::{dependence_profile, jet_along_trajectory, jet_csv};
use oistab::linear::{linear_certificate, linear_report, normal_form, parse_matrix_file};
use oistab::relative_degree::{
    affine_relative_degree, feedback_law, general_relative_degree, RelDegOptions,
};
use oistab::simulation::{integrate_with, alternating_switching_input_until, IntegrateOptions};
use oistab::system::{builtin, Affinity, CORPUS};
use oistab::{
    parse, BoundSpec, ClassKFn, ClassKLFn, EnsembleSpec, InputFamily, InputSignal, JetTable, LinearSystem,
    Outcome, PropertyKind, SystemModel, Verdict,
};
use serde_json::{json, Value};

use crate::args::*;
use crate::report::{write_file, Report, Status};

pub type CmdResult = Result<Report, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Loads the model named by `--corpus` or `--file`.
pub fn load(source: &Source) -> Result<SystemModel, String> {
    if let Some(key) = &source.corpus {
        return builtin(key).map_err(err);
    }
    let path = source.file.as_ref().ok_or("one of --corpus or --file is required")?;
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    if path.extension().is_some_and(|e| e == "mat") {
        let sys = parse_matrix_file(&text).map_err(err)?;
        Ok(SystemModel::from_linear(stem, &sys))
    } else {
        SystemModel::parse_text(&text).map_err(err)
    }
}

fn load_valid(source: &Source) -> Result<SystemModel, String> {
    let model = load(source)?;
    let report = model.validate();
    if !report.clean {
        return Err(format!("invalid model: {}", report.violations.join("; ")));
    }
    Ok(model)
}

fn linear_of(model: &SystemModel) -> Result<&LinearSystem, String> {
    model
        .linear
        .as_ref()
        .ok_or_else(|| format!("model `{}` has no matrix form; use a .mat file", model.name))
}

fn class_k(coeffs: &[f64], what: &str) -> Result<ClassKFn, String> {
    ClassKFn::polynomial(coeffs).map_err(|e| format!("{what}: {e}"))
}

fn class_kl(spec: &[f64], what: &str) -> Result<ClassKLFn, String> {
    let [a, p, rate] = spec else {
        return Err(format!("{what}: expected `a,p,lambda`"));
    };
    if p.fract() != 0.0 || *p < 1.0 {
        return Err(format!("{what}: power must be a positive integer"));
    }
    ClassKLFn::power_exponential(*a, *p as u32, *rate).map_err(|e| format!("{what}: {e}"))
}

pub fn validate(args: &Common) -> CmdResult {
    let model = load(&args.source)?;
    let report = model.validate();
    let status = Status::from_violation(!report.clean);
    let body = json!({
        "n": model.n,
        "m": model.m,
        "l": model.l,
        "text": model.to_text(),
        "validation": report,
    });
    Ok(Report::new("validate", body)?.model(&model.name).status(status))
}

fn affine_siso(model: &SystemModel) -> bool {
    model.m == 1 && model.l == 1 && matches!(model.affine_decompose(), Affinity::Affine(_))
}

pub fn reldeg(args: &ReldegArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let opts = RelDegOptions {
        box_radius: args.box_radius,
        points_per_axis: args.points,
        seed: args.seed,
        ..RelDegOptions::default()
    };
    let affine = match args.path {
        ReldegPath::Auto => affine_siso(&model),
        ReldegPath::Affine => true,
        ReldegPath::General => false,
    };
    let verdict = if affine {
        affine_relative_degree(&model, &opts)
    } else {
        general_relative_degree(&model, &opts)
    }
    .map_err(err)?;
    let status = Status::from_violation(verdict.outcome != Outcome::HasDegree);
    Ok(Report::new("reldeg", &verdict)?
        .model(&model.name)
        .seed(args.seed)
        .status(status))
}

pub fn zeros(args: &Common) -> CmdResult {
    let model = load_valid(&args.source)?;
    let sys = linear_of(&model)?;
    let report = linear_report(sys).map_err(err)?;
    let status = Status::from_violation(!report.minimum_phase);
    Ok(Report::new("zeros", &report)?.model(&model.name).status(status))
}

pub fn normalform(args: &Common) -> CmdResult {
    let model = load_valid(&args.source)?;
    let sys = linear_of(&model)?;
    let data = normal_form(sys).map_err(err)?;
    let certificate = linear_certificate(sys).ok();
    let status = Status::from_violation(data.eta_bound.is_none());
    let body = json!({ "normal_form": data, "certificate": certificate });
    Ok(Report::new("normalform", body)?.model(&model.name).status(status))
}

fn input_signal(args: &SimulateArgs, m: usize) -> Result<InputSignal, String> {
    if args.switching {
        if m == 0 {
            return Err("--switching needs an input channel".into());
        }
        let InputSignal::PiecewiseConstant { switches, values } = alternating_switching_input_until(args.horizon)
        else {
            unreachable!("switching schedule is piecewise constant")
        };
        let values = values
            .into_iter()
            .map(|v| {
                let mut row = vec![0.0; m];
                row[0] = v[0];
                row
            })
            .collect();
        return Ok(InputSignal::PiecewiseConstant { switches, values });
    }
    if let Some(path) = &args.input {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let u: InputSignal = serde_json::from_str(&text).map_err(|e| format!("bad input signal: {e}"))?;
        if u.channels() != m {
            return Err(format!("input signal has {} channels, model has {m}", u.channels()));
        }
        return Ok(u);
    }
    if args.u.is_empty() {
        return Ok(InputSignal::zero(m));
    }
    if args.u.len() != m {
        return Err(format!("--u has {} entries, model has {m} inputs", args.u.len()));
    }
    Ok(InputSignal::constant(&args.u))
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let x0 = if args.x0.is_empty() { vec![0.0; model.n] } else { args.x0.clone() };
    if x0.len() != model.n {
        return Err(format!("--x0 has {} entries, model has {} states", x0.len(), model.n));
    }
    let u = input_signal(args, model.m)?;
    let table = args.order.map(|k| JetTable::uniform(&model, k)).transpose().map_err(err)?;
    let input_order = table.as_ref().and_then(JetTable::max_input_order).unwrap_or(0);
    let opts = IntegrateOptions {
        input_order,
        ..IntegrateOptions::default()
    };
    let traj = integrate_with(&model, &x0, &u, args.horizon, args.dt, &opts).map_err(err)?;
    let jets = table.as_ref().map(|t| jet_along_trajectory(t, &traj)).transpose().map_err(err)?;
    if let Some(path) = &args.csv {
        write_file(path, &jet_csv(&traj, jets.as_ref()))?;
    }
    let sup = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let body = json!({
        "input": u.descriptor(),
        "x0": x0,
        "horizon": args.horizon,
        "dt": args.dt,
        "nodes": traj.len(),
        "status": traj.status,
        "final_time": traj.times.last(),
        "final_state": traj.states.last(),
        "sup_state_norm": sup((0..traj.len()).map(|k| traj.state_norm(k)).collect()),
        "sup_jet_norm": jets.as_ref().map(|j| sup(j.norms())),
        "jet_columns": jets.as_ref().map(|j| j.columns.clone()),
    });
    Ok(Report::new("simulate", body)?.model(&model.name))
}

pub fn jets(args: &JetsArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let table = JetTable::uniform(&model, args.order).map_err(err)?;
    let entries: Vec<Value> = table
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(k, e)| {
                json!({
                    "output": i + 1,
                    "order": k,
                    "expr": e.expr.to_string(),
                    "max_input_order": e.max_input_order,
                })
            })
        })
        .collect();
    let body = json!({
        "order": args.order,
        "columns": table.labels(),
        "jets": entries,
        "dependence": dependence_profile(&table),
    });
    Ok(Report::new("jets", body)?.model(&model.name))
}

fn property_kind(args: &CertifyArgs, l: usize) -> PropertyKind {
    match args.property {
        Property::OutputInput => PropertyKind::OutputInput { n: args.order },
        Property::Detectability => PropertyKind::Detectability {
            orders: vec![args.order; l],
            uniform: args.uniform,
        },
        Property::Iss => PropertyKind::Iss,
        Property::Ios => PropertyKind::Ios,
    }
}

/// Smooth families, plus switching inputs when no input derivative is
/// needed and zero-output trajectories when the feedback exists.
fn families(model: &SystemModel, spec: &BoundSpec) -> Result<Vec<InputFamily>, String> {
    let table = match &spec.kind {
        PropertyKind::OutputInput { n } => Some(JetTable::uniform(model, *n).map_err(err)?),
        PropertyKind::Detectability { orders, .. } => Some(JetTable::compute(model, orders).map_err(err)?),
        _ => None,
    };
    let mut out = InputFamily::smooth_defaults();
    if spec.input_order(table.as_ref()) == 0 && model.m > 0 {
        out.push(InputFamily::Switching);
    }
    if affine_siso(model) && feedback_law(model, &[]).is_ok() {
        out.push(InputFamily::ZeroOutput);
    }
    Ok(out)
}

pub fn certify_cmd(args: &CertifyArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let beta = class_kl(&args.beta, "--beta")?;
    let gamma = class_k(&args.gamma, "--gamma")?;
    let mut spec = BoundSpec::new(property_kind(args, model.l), beta, gamma).with_restarts(args.restarts);
    if !args.gamma_u.is_empty() {
        spec = spec.with_input_gain(class_k(&args.gamma_u, "--gamma-u")?);
    }
    let ensemble = EnsembleSpec::new(args.seed, args.count, args.horizon, args.dt)
        .with_families(families(&model, &spec)?)
        .with_box(args.box_radius)
        .with_u_scale(args.u_scale);
    let report = certify(&model, &spec, &ensemble).map_err(err)?;
    let status = Status::from_violation(report.verdict == Verdict::Violated);
    let body = json!({
        "certificate": report,
        "beta": spec.beta.to_expr().map(|e| e.to_string()),
        "gamma": spec.gamma.to_expr().map(|e| e.to_string()),
        "gamma_u": spec.gamma_u.as_ref().and_then(|g| g.to_expr()).map(|e| e.to_string()),
        "restarts": spec.restarts,
    });
    Ok(Report::new("certify", body)?
        .model(&model.name)
        .seed(args.seed)
        .status(status))
}

pub fn falsify_cmd(args: &FalsifyArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let opts = FalsifyOptions {
        order: args.order,
        budget: args.budget,
        seed: args.seed,
    };
    let report = falsify(&model, &opts).map_err(err)?;
    let status = Status::from_violation(report.strong_evidence);
    Ok(Report::new("falsify", &report)?
        .model(&model.name)
        .seed(args.seed)
        .status(status))
}

pub fn lyapunov(args: &LyapunovArgs) -> CmdResult {
    let model = load_valid(&args.common.source)?;
    let v = parse(&args.v).map_err(|e| format!("--v: {e}"))?;
    let alpha = class_k(&args.alpha, "--alpha")?;
    let chi = class_k(&args.chi, "--chi")?;
    let grid = LyapunovGrid {
        x_box: args.box_radius,
        x_points: args.points,
        u_box: args.u_box,
        u_points: args.u_points,
    };
    let report = lyapunov_check(&model, &v, &alpha, &chi, args.order, &grid).map_err(err)?;
    let status = Status::from_violation(!report.holds);
    let body = json!({ "v": v.to_string(), "check": report });
    Ok(Report::new("lyapunov", body)?.model(&model.name).status(status))
}

fn k_entry(g: &ClassKFn, at: &[f64], reconstructed: bool) -> Value {
    json!({
        "class": "K",
        "expr": g.to_expr().map(|e| e.to_string()),
        "valid": g.validate().pass,
        "reconstructed": reconstructed,
        "values": at.iter().map(|s| [*s, g.eval(*s)]).collect::<Vec<_>>(),
    })
}

fn kl_entry(b: &ClassKLFn, at: &[f64], reconstructed: bool) -> Value {
    json!({
        "class": "KL",
        "expr": b.to_expr().map(|e| e.to_string()),
        "valid": b.validate().pass,
        "reconstructed": reconstructed,
        "values": at
            .iter()
            .flat_map(|s| [0.0, 1.0].map(|t| [*s, t, b.eval(*s, t)]))
            .collect::<Vec<_>>(),
    })
}

fn flagged_k(g: &Flagged<ClassKFn>, at: &[f64]) -> Value {
    k_entry(&g.value, at, g.reconstructed)
}

fn flagged_kl(b: &Flagged<ClassKLFn>, at: &[f64]) -> Value {
    kl_entry(&b.value, at, b.reconstructed)
}

pub fn gains(args: &GainsArgs) -> CmdResult {
    let b = class_kl(&args.beta, "--beta")?;
    let g = class_k(&args.gamma, "--gamma")?;
    let at = &args.at;
    let composed = match args.composition {
        Composition::Detectability => {
            let (beta, gamma) = output_input_gains(&g, &g, &b, &g);
            json!({ "beta": kl_entry(&beta, at, false), "gamma": k_entry(&gamma, at, false) })
        }
        Composition::Cascade => {
            let c = cascade_gains(&b, &b, &g, &g, &g, &g, &g);
            json!({
                "beta1_bar": kl_entry(&c.beta1_bar, at, false),
                "beta2_bar": kl_entry(&c.beta2_bar, at, false),
                "gamma0_bar": k_entry(&c.gamma0_bar, at, false),
                "gamma1_bar": k_entry(&c.gamma1_bar, at, false),
            })
        }
        Composition::Cascade3 => {
            let c = cascade3_gains(&b, &b, &b, &g, &g, &g, &g, &g, &g, &g);
            json!({
                "beta1_hat": flagged_kl(&c.beta1_hat, at),
                "beta2_hat": flagged_kl(&c.beta2_hat, at),
                "gamma0_hat": flagged_k(&c.gamma0_hat, at),
                "gamma4_hat": flagged_k(&c.gamma4_hat, at),
                "beta1_tilde": flagged_kl(&c.beta1_tilde, at),
                "beta2_tilde": flagged_kl(&c.beta2_tilde, at),
                "gamma0_tilde": flagged_k(&c.gamma0_tilde, at),
                "gamma4_tilde": flagged_k(&c.gamma4_tilde, at),
            })
        }
    };
    let valid = composed
        .as_object()
        .is_some_and(|m| m.values().all(|e| e["valid"] == Value::Bool(true)));
    let body = json!({
        "components": { "beta": kl_entry(&b, at, false), "gamma": k_entry(&g, at, false) },
        "composed": composed,
    });
    Ok(Report::new("gains", body)?.status(Status::from_violation(!valid)))
}

pub fn corpus_list() -> CmdResult {
    let entries: Vec<Value> = CORPUS
        .iter()
        .map(|(key, description)| json!({ "key": key, "description": description }))
        .collect();
    Report::new("corpus-list", json!({ "models": entries }))
}

use std::time::Instant;

use lyapsens_core::kernel_algebra::{contraction_power, operator_norm};
use lyapsens_core::random_horizon::comparison_bound_check;
use lyapsens_core::stationary::{
    check_geometric_drift, check_minorization, check_subgeometric_drift, higher_stationary_derivatives,
    stationary_derivative_report, stationary_distribution, GeometricDriftCertificate, Kappa, StationaryCertificate,
    StationarySolver,
};
use lyapsens_core::{
    FiniteFunction, LyapunovCertificateRH, ParamKernelFamily, StateSubset, TargetProblem, WeightFunction,
};
use lyapsens_sim::estimators::random_horizon_samples;
use lyapsens_sim::gg1::{
    appendix_bound_probe, empty_queue, gg1_drift_verification, mg1_oracle, run_gg1_derivative_experiment, se_vs_budget,
    DriftConstants, GG1Model, LindleyRecursion,
};
use lyapsens_sim::{
    estimate_gamma_regenerative, estimate_pi_f, estimate_stationary_derivative, estimate_u_star,
    estimate_u_star_derivative, DerivativeEstimate, FiniteChainRecursion, Payoff, RatioEstimate, Regeneration,
    RngStream, StochasticRecursion,
};

use crate::config::{
    DeltaCiParams, ExperimentConfig, Gg1Params, LyapunovParams, McParams, MinorizationParams, ModelSpec, NormParams,
    RhParams, Spec, StatParams,
};
use crate::delta::delta_ci;
use crate::error::CliError;
use crate::output::{emit_plot_data, manifest, sha256_hex, Cell, OutputFile, PlotSeries, RunRecord, Table};

/// Everything a run produces; nothing touches the disk until [`crate::write_outcome`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub files: Vec<OutputFile>,
    pub summary: String,
}

impl RunOutcome {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.contents.as_str())
    }
}

#[derive(Default)]
struct Collector {
    tables: Vec<OutputFile>,
    plots: Vec<PlotSeries>,
    summary: Vec<String>,
}

impl Collector {
    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push(format!("{key} = {value}"));
    }

    fn table(&mut self, t: Table) {
        self.tables.push(t.finish());
    }

    fn estimate(&mut self, name: &str, e: &DerivativeEstimate) {
        self.line(name, format!("{} (SE {}, n = {})", e.point, e.std_error, e.n_samples));
    }
}

/// Execute one experiment. Outputs are returned, not written.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let mut out = Collector::default();
    out.line("kind", config.kind());
    out.line("seed", config.seed());
    match config {
        ExperimentConfig::Norm(s) => norm(s, &mut out)?,
        ExperimentConfig::RhSolve(s) => rh(s, false, &mut out)?,
        ExperimentConfig::RhDeriv(s) => rh(s, true, &mut out)?,
        ExperimentConfig::StatDeriv(s) => stat_deriv(s, &mut out)?,
        ExperimentConfig::LyapunovCheck(s) => lyapunov(s, &mut out)?,
        ExperimentConfig::Minorization(s) => minorization(s, &mut out)?,
        ExperimentConfig::McEstimate(s) => mc_estimate(s, &mut out)?,
        ExperimentConfig::Gg1(s) => gg1(s, &mut out)?,
        ExperimentConfig::DeltaCi(s) => delta(s, &mut out)?,
    }
    let mut files = out.tables;
    files.extend(emit_plot_data(&out.plots));
    let summary = out.summary.join("\n") + "\n";
    files.push(OutputFile {
        name: "summary.txt".into(),
        contents: summary.clone(),
    });
    let canonical = serde_json::to_string(config).map_err(|e| CliError::Schema(e.to_string()))?;
    let record = RunRecord {
        kind: config.kind().into(),
        seed: config.seed(),
        config_hash: sha256_hex(canonical.as_bytes()),
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: manifest(&files),
    };
    Ok(RunOutcome { record, files, summary })
}

fn need_model<P>(s: &Spec<P>) -> Result<&ModelSpec, CliError> {
    s.model
        .as_ref()
        .ok_or_else(|| CliError::Schema("this kind needs a [model] block".into()))
}

fn need_family<P>(s: &Spec<P>) -> Result<ParamKernelFamily, CliError> {
    need_model(s)?.family()
}

fn need_gg1<P>(s: &Spec<P>) -> Result<&GG1Model, CliError> {
    match need_model(s)? {
        ModelSpec::Gg1(m) => Ok(m),
        _ => Err(CliError::Schema("this kind needs a model of type \"gg1\"".into())),
    }
}

fn weight(w: &Option<Vec<f64>>, n: usize) -> Result<WeightFunction, CliError> {
    match w {
        Some(v) if v.len() != n => Err(CliError::Schema(format!(
            "weight has {} entries for {n} states",
            v.len()
        ))),
        Some(v) => Ok(WeightFunction::new(v.clone())?),
        None => Ok(WeightFunction::constant(n)),
    }
}

fn function(v: &[f64], n: usize, what: &str) -> Result<FiniteFunction, CliError> {
    if v.len() != n {
        return Err(CliError::Schema(format!(
            "{what} has {} entries for {n} states",
            v.len()
        )));
    }
    Ok(FiniteFunction::new(v.to_vec())?)
}

fn subset(idx: &[usize], n: usize, what: &str) -> Result<StateSubset, CliError> {
    StateSubset::new(n, idx.to_vec()).map_err(|e| CliError::Schema(format!("{what}: {e}")))
}

fn problem(
    fam: ParamKernelFamily,
    interior: &[usize],
    reward: &[f64],
    discount: &Option<Vec<f64>>,
) -> Result<TargetProblem, CliError> {
    let n = fam.size();
    let c = subset(interior, n, "interior")?;
    let f = function(reward, n, "reward")?;
    let g = match discount {
        Some(d) => function(d, n, "discount")?,
        None => FiniteFunction::zeros(n),
    };
    Ok(TargetProblem::new(fam, c, f, g)?)
}

fn norm(s: &Spec<NormParams>, out: &mut Collector) -> Result<(), CliError> {
    let k = need_model(s)?.kernel()?;
    let w = weight(&s.params.weight, k.size())?;
    let norm = operator_norm(&k, &w)?;
    let check = contraction_power(&k, &w, s.params.m_max)?;
    let mut t = Table::new("norm", &["quantity", "value"]);
    t.row(vec!["operator_norm".into(), norm.into()]);
    let power = check.into_result().ok();
    t.row(vec![
        "contraction_power".into(),
        power.map_or(Cell::Empty, |m| m.into()),
    ]);
    out.table(t);
    out.line("operator_norm", norm);
    out.line(
        "contraction_power",
        power.map_or_else(
            || format!("none with m <= {} (inconclusive)", s.params.m_max),
            |m| m.to_string(),
        ),
    );
    Ok(())
}

fn rh(s: &Spec<RhParams>, deriv: bool, out: &mut Collector) -> Result<(), CliError> {
    let p = &s.params;
    let fam = need_family(s)?;
    let n = fam.size();
    let w = weight(&p.weight, n)?;
    let prob = problem(fam.clone(), &p.interior, &p.reward, &p.discount)?;
    let states = prob.interior().indices().to_vec();
    if !deriv {
        let theta = p.theta.unwrap_or(prob.theta0());
        let u = prob.compute_u_star(theta, &w)?;
        let mut t = Table::new("rh_solve", &["state", "u_star"]);
        for (i, x) in states.iter().enumerate() {
            t.row(vec![(*x).into(), u.as_slice()[i].into()]);
        }
        out.table(t);
        out.line("theta", theta);
        out.line("max_abs_u_star", u.max_abs());
        return Ok(());
    }
    let ds = prob.higher_derivatives(&w, p.order)?;
    let mut header = vec!["state".to_string(), "u_star".to_string()];
    header.extend((1..=p.order).map(|l| format!("d{l}")));
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("rh_deriv", &hdr);
    for (i, x) in states.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*x).into()];
        row.extend(ds.iter().map(|d| Cell::F(d.as_slice()[i])));
        t.row(row);
    }
    out.table(t);
    out.line("theta0", prob.theta0());
    out.line("max_abs_derivative", ds[1.min(p.order)].max_abs());

    let x = p.sweep_state.unwrap_or(states[0]);
    let pos = states
        .iter()
        .position(|s| *s == x)
        .ok_or_else(|| CliError::Schema(format!("sweep_state {x} is not an interior state")))?;
    let mut value = Vec::new();
    let mut slope = Vec::new();
    for theta in sweep_grid(&fam, p.sweep_points) {
        value.push((theta, prob.compute_u_star(theta, &w)?.as_slice()[pos]));
        let re = problem(fam.recentered(theta)?, &p.interior, &p.reward, &p.discount)?;
        slope.push((theta, re.derivative_u_star(&w)?.as_slice()[pos]));
    }
    if p.sweep_points > 0 {
        out.plots
            .push(PlotSeries::new("u_star_sweep", "theta", "u_star", value));
        out.plots
            .push(PlotSeries::new("u_star_derivative_sweep", "theta", "derivative", slope));
    }
    Ok(())
}

/// Band points strictly inside the family interval, so each can be re-based.
fn sweep_grid(fam: &ParamKernelFamily, points: usize) -> Vec<f64> {
    let (a, b) = fam.interval();
    fam.grid(points).into_iter().filter(|t| *t > a && *t < b).collect()
}

fn stat_deriv(s: &Spec<StatParams>, out: &mut Collector) -> Result<(), CliError> {
    let p = &s.params;
    let fam = need_family(s)?;
    let n = fam.size();
    let f = function(&p.reward, n, "reward")?;
    let rep = stationary_derivative_report(&fam, &f)?;
    let mut t = Table::new("stat_deriv", &["quantity", "value"]);
    t.row(vec!["alpha".into(), rep.alpha.into()]);
    t.row(vec!["derivative".into(), rep.via_poisson.into()]);
    t.row(vec!["derivative_via_measure".into(), rep.via_measure.into()]);
    t.row(vec!["route_discrepancy".into(), rep.discrepancy.into()]);
    if p.order > 1 {
        let pis = higher_stationary_derivatives(&fam, p.order)?;
        for (l, pi) in pis.iter().enumerate().skip(2) {
            let v: f64 = pi.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a * b).sum();
            t.row(vec![format!("derivative_{l}").into(), v.into()]);
        }
    }
    out.table(t);
    let mut t = Table::new("stat_pi", &["state", "pi", "pi_prime", "gamma_f"]);
    for x in 0..n {
        t.row(vec![
            x.into(),
            rep.pi[x].into(),
            rep.pi_prime[x].into(),
            rep.gamma_f[x].into(),
        ]);
    }
    out.table(t);
    out.line("alpha", rep.alpha);
    out.line("derivative", rep.via_poisson);
    out.line("route_discrepancy", rep.discrepancy);

    if p.sweep_points > 0 {
        let mut value = Vec::new();
        let mut slope = Vec::new();
        for theta in sweep_grid(&fam, p.sweep_points) {
            let pi = stationary_distribution(&fam.eval_kernel(theta)?)?;
            value.push((theta, pi.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a * b).sum()));
            slope.push((
                theta,
                stationary_derivative_report(&fam.recentered(theta)?, &f)?.via_poisson,
            ));
        }
        out.plots.push(PlotSeries::new("alpha_sweep", "theta", "alpha", value));
        out.plots
            .push(PlotSeries::new("alpha_derivative_sweep", "theta", "derivative", slope));
    }
    Ok(())
}

fn min_over_states(slack: &[Vec<f64>]) -> Vec<f64> {
    slack
        .iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect()
}

fn lyapunov(s: &Spec<LyapunovParams>, out: &mut Collector) -> Result<(), CliError> {
    let fam = need_family(s)?;
    let n = fam.size();
    match &s.params {
        LyapunovParams::RandomHorizon {
            interior,
            reward,
            discount,
            v,
            eps,
            order,
            inflate,
            weight: w,
            grid_points,
            envelope_grid,
        } => {
            let prob = problem(fam, interior, reward, discount)?;
            let w = weight(w, n)?;
            let (cert, heuristic) = match v {
                Some(v) => {
                    let c = prob.interior().len();
                    let fs = v
                        .iter()
                        .map(|vl| function(vl, c, "certificate function"))
                        .collect::<Result<Vec<_>, _>>()?;
                    (LyapunovCertificateRH::new(fs, *eps)?, false)
                }
                None => {
                    let p = prob.propose_certificate(*order, *eps, *grid_points, *envelope_grid, *inflate)?;
                    (p.certificate, p.heuristic)
                }
            };
            let rep = prob.verify_lyapunov_rh(&cert, *grid_points, *envelope_grid, Some(&w))?;
            let mut t = Table::new("lyapunov_rh", &["order", "theta", "state", "slack"]);
            for ineq in &rep.inequalities {
                for (theta, row) in ineq.thetas.iter().zip(&ineq.slack) {
                    for (x, sl) in ineq.states.iter().zip(row) {
                        t.row(vec![ineq.order.into(), (*theta).into(), (*x).into(), (*sl).into()]);
                    }
                }
                out.line(&format!("order_{}_min_slack", ineq.order), ineq.min_slack);
                out.plots.push(PlotSeries::new(
                    &format!("rh_slack_order_{}", ineq.order),
                    "theta",
                    "min_slack",
                    ineq.thetas.iter().copied().zip(min_over_states(&ineq.slack)).collect(),
                ));
            }
            out.table(t);
            let mut t = Table::new("lyapunov_rh_certificate", &["order", "state", "v"]);
            for (l, vl) in cert.v.iter().enumerate() {
                for (x, val) in prob.interior().indices().iter().zip(vl.as_slice()) {
                    t.row(vec![l.into(), (*x).into(), (*val).into()]);
                }
            }
            out.table(t);
            if let Some(bounds) = &rep.derivative_bounds {
                let mut t = Table::new("lyapunov_rh_bounds", &["order", "state", "derivative", "bound"]);
                for b in bounds {
                    for (i, x) in prob.interior().indices().iter().enumerate() {
                        t.row(vec![
                            b.order.into(),
                            (*x).into(),
                            b.derivative[i].into(),
                            b.bound[i].into(),
                        ]);
                    }
                    out.line(&format!("bound_order_{}_holds", b.order), b.holds);
                }
                out.table(t);
            }
            // Order 0 as a comparison bound at theta0: sum_n K^n |f~| <= v0.
            let k0 = lyapsens_core::FiniteKernel::nonnegative(prob.interior_kernel(prob.theta0())?)?;
            let ft = prob.build_tilde_f(prob.theta0())?.map(f64::abs);
            let cmp = comparison_bound_check(&k0, &ft, &cert.v[0])?;
            out.line("comparison_bound_holds", cmp.holds);
            out.line("certificate_heuristic", heuristic);
            out.line("differentiable_at_theta0", rep.differentiable_at_theta0);
            out.line("neighbourhood", &rep.neighbourhood_note);
            out.line("passed", rep.passed);
        }
        LyapunovParams::Stationary {
            q,
            v0,
            v1,
            kappa_rho,
            small_set,
            c0,
            c1,
            eps,
            reward,
            boundary,
            grid_points,
            envelope_grid,
        } => {
            let cert = StationaryCertificate {
                q: function(q, n, "q")?,
                v0: function(v0, n, "v0")?,
                v1: function(v1, n, "v1")?,
                kappa: Kappa::power(*kappa_rho),
                small_set: subset(small_set, n, "small_set")?,
                c0: *c0,
                c1: *c1,
                eps: *eps,
            };
            let f = reward.as_ref().map(|r| function(r, n, "reward")).transpose()?;
            let bd = boundary.as_ref().map(|b| subset(b, n, "boundary")).transpose()?;
            let thetas = lyapsens_core::param_family::theta_grid(fam.theta0(), *eps, *grid_points);
            let rep = check_subgeometric_drift(&fam, &cert, &thetas, *envelope_grid, bd.as_ref(), f.as_ref())?;
            let mut t = Table::new("lyapunov_stationary", &["theta", "state", "slack_v0", "slack_v1"]);
            for (i, theta) in rep.thetas.iter().enumerate() {
                for x in 0..n {
                    t.row(vec![
                        (*theta).into(),
                        x.into(),
                        rep.slack_v0[i][x].into(),
                        rep.slack_v1[i][x].into(),
                    ]);
                }
            }
            out.table(t);
            let per_state = |sl: &[Vec<f64>]| -> Vec<(f64, f64)> {
                (0..n)
                    .map(|x| (x as f64, sl.iter().map(|r| r[x]).fold(f64::INFINITY, f64::min)))
                    .collect()
            };
            out.plots.push(PlotSeries::new(
                "slack_v0",
                "state",
                "min_slack",
                per_state(&rep.slack_v0),
            ));
            out.plots.push(PlotSeries::new(
                "slack_v1",
                "state",
                "min_slack",
                per_state(&rep.slack_v1),
            ));
            out.line("min_slack_v0", rep.min_slack_v0);
            out.line("min_slack_v1", rep.min_slack_v1);
            if let Some(b) = rep.boundary_passed {
                out.line("boundary_passed", b);
            }
            out.line(
                "kappa_admissible",
                rep.kappa.dominates_identity && rep.kappa.ratio_nondecreasing,
            );
            out.line("pi_q_bounded", rep.pi_q_bounded);
            if let Some(fb) = &rep.functional {
                out.line("f_admissible", fb.f_admissible);
                out.line("fitted_a", fb.a);
                out.line("alpha_prime", fb.alpha_prime);
                out.line("derivative_bound", fb.bound);
                out.line("derivative_bound_holds", fb.bound_holds);
            }
            out.line("passed", rep.passed);
        }
        LyapunovParams::Geometric {
            weight: w,
            r,
            c,
            small_set,
            grid_points,
        } => {
            let cert = GeometricDriftCertificate::new(
                weight(&Some(w.clone()), n)?,
                *r,
                *c,
                subset(small_set, n, "small_set")?,
            )?;
            let mut t = Table::new("lyapunov_geometric", &["theta", "state", "slack"]);
            let mut curve = Vec::new();
            let mut passed = true;
            for theta in fam.grid(*grid_points) {
                let rep = check_geometric_drift(&fam.eval_kernel(theta)?, &cert)?;
                for (x, sl) in rep.slack.iter().enumerate() {
                    t.row(vec![theta.into(), x.into(), (*sl).into()]);
                }
                curve.push((theta, rep.min_slack));
                passed &= rep.passed;
            }
            out.table(t);
            out.line("min_slack", curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min));
            out.plots
                .push(PlotSeries::new("geometric_slack", "theta", "min_slack", curve));
            out.line("passed", passed);
        }
    }
    Ok(())
}

fn minorization(s: &Spec<MinorizationParams>, out: &mut Collector) -> Result<(), CliError> {
    let p = &s.params;
    let fam = need_family(s)?;
    let a = subset(&p.small_set, fam.size(), "small_set")?;
    let thetas = fam.grid(p.theta_points);
    let cert = check_minorization(&fam, &a, p.power_max, &thetas)?.ok_or_else(|| {
        CliError::Refusal(format!(
            "[minorization] no power n <= {} with P^n(theta, x, .) >= lambda phi on the small set across the band",
            p.power_max
        ))
    })?;
    let mut t = Table::new("minorization", &["state", "phi"]);
    for (y, v) in cert.phi.iter().enumerate() {
        t.row(vec![y.into(), (*v).into()]);
    }
    out.table(t);
    out.line("power", cert.power);
    out.line("lambda", cert.lambda);
    Ok(())
}

fn estimate_row(t: &mut Table, e: &DerivativeEstimate, seed: u64, exact: Option<f64>) {
    t.row(vec![
        e.method.as_str().into(),
        e.point.into(),
        e.std_error.into(),
        e.n_samples.into(),
        seed.into(),
        exact.into(),
    ]);
}

fn ratio_as_estimate(r: &RatioEstimate, method: &str) -> DerivativeEstimate {
    DerivativeEstimate {
        point: r.point,
        std_error: r.std_error,
        n_samples: r.n_cycles,
        method: method.into(),
    }
}

const EST_HEADER: [&str; 6] = ["method", "point", "std_error", "n", "seed", "exact"];

fn report_estimate(out: &mut Collector, e: &DerivativeEstimate, seed: u64, exact: Option<f64>) {
    let mut t = Table::new("mc_estimate", &EST_HEADER);
    estimate_row(&mut t, e, seed, exact);
    out.table(t);
    out.estimate("estimate", e);
    if let Some(x) = exact {
        out.line("exact", x);
        out.line("z_score", e.z_score(x));
        out.line("within_3se", e.agrees_with(x, 3.0));
    }
}

fn se_curve(out: &mut Collector, rows: &[(usize, DerivativeEstimate)]) {
    if rows.is_empty() {
        return;
    }
    let mut t = Table::new("se_budget", &["n", "point", "std_error"]);
    for (n, e) in rows {
        t.row(vec![(*n).into(), e.point.into(), e.std_error.into()]);
    }
    out.table(t);
    out.plots.push(PlotSeries::new(
        "se_budget",
        "n",
        "std_error",
        rows.iter().map(|(n, e)| (*n as f64, e.std_error)).collect(),
    ));
}

fn mc_estimate(s: &Spec<McParams>, out: &mut Collector) -> Result<(), CliError> {
    let model = need_model(s)?;
    let seed = s.seed;
    let main = RngStream::new(seed, 0);
    let budget_stream = RngStream::new(seed, 1);
    if let ModelSpec::Gg1(m) = model {
        return mc_gg1(m, &s.params, seed, out);
    }
    let fam = model.family()?;
    let n = fam.size();
    match &s.params {
        McParams::UStar {
            interior,
            reward,
            discount,
            x0,
            n_paths,
            budgets,
            dump_samples,
            compare_exact,
            envelope_grid,
        }
        | McParams::UStarDerivative {
            interior,
            reward,
            discount,
            x0,
            n_paths,
            budgets,
            dump_samples,
            compare_exact,
            envelope_grid,
        } => {
            let derivative = matches!(s.params, McParams::UStarDerivative { .. });
            let prob = problem(fam.clone(), interior, reward, discount)?;
            let pos = prob
                .interior()
                .indices()
                .iter()
                .position(|x| x == x0)
                .ok_or_else(|| CliError::Schema(format!("x0 = {x0} is not an interior state")))?;
            let rec = FiniteChainRecursion::new(fam, *envelope_grid)?;
            let (fv, mask) = (prob.reward().as_slice().to_vec(), prob.interior().mask());
            let gv = prob.discount().as_slice().to_vec();
            let f = |x: &usize| fv[*x];
            let g = |x: &usize| gv[*x];
            let c = |x: &usize| mask[*x];
            let payoff = Payoff {
                reward: &f,
                discount: discount.as_ref().map(|_| &g as &(dyn Fn(&usize) -> f64 + Sync)),
                interior: &c,
            };
            let est = |k: usize, r: &RngStream| {
                if derivative {
                    estimate_u_star_derivative(&rec, &payoff, x0, k, r)
                } else {
                    estimate_u_star(&rec, &payoff, x0, k, r)
                }
            };
            let e = est(*n_paths, &main)?;
            let exact = if *compare_exact {
                let w = WeightFunction::constant(n);
                let v = if derivative {
                    prob.derivative_u_star(&w)?
                } else {
                    prob.compute_u_star(prob.theta0(), &w)?
                };
                Some(v.as_slice()[pos])
            } else {
                None
            };
            report_estimate(out, &e, seed, exact);
            let rows = budgets
                .iter()
                .enumerate()
                .map(|(k, b)| Ok((*b, est(*b, &budget_stream.substream(k as u64))?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            se_curve(out, &rows);
            if *dump_samples {
                let samples = random_horizon_samples(&rec, &payoff, x0, *n_paths, &main)?;
                let mut t = Table::new("samples", &["path", "payoff", "score_term"]);
                for (i, (u, d)) in samples.iter().enumerate() {
                    t.row(vec![i.into(), (*u).into(), (*d).into()]);
                }
                out.table(t);
            }
        }
        McParams::PiF {
            reward,
            regen,
            n_cycles,
            compare_exact,
        } => {
            let (fv, r) = finite_reward_regen(reward, regen, n)?;
            let rec = FiniteChainRecursion::new(fam.clone(), 3)?;
            let f = |x: &usize| fv[*x];
            let atom = move |x: &usize| *x == r;
            let reg = Regeneration { state: r, atom: &atom };
            let e = estimate_pi_f(&rec, &f, &reg, *n_cycles, &main)?;
            let exact = if *compare_exact {
                Some(StationarySolver::new(fam.base())?.mean(&function(&fv, n, "reward")?))
            } else {
                None
            };
            report_estimate(out, &ratio_as_estimate(&e, "regenerative-pi-f"), seed, exact);
            out.line("mean_cycle_length", e.mean_cycle_length);
        }
        McParams::Gamma {
            reward,
            regen,
            x,
            n_cycles,
            n_pi_cycles,
            compare_exact,
        } => {
            let (fv, r) = finite_reward_regen(reward, regen, n)?;
            let xs = state_index(*x, n)?;
            let rec = FiniteChainRecursion::new(fam.clone(), 3)?;
            let f = |x: &usize| fv[*x];
            let atom = move |x: &usize| *x == r;
            let reg = Regeneration { state: r, atom: &atom };
            let pi_f = estimate_pi_f(&rec, &f, &reg, *n_pi_cycles, &RngStream::new(seed, 2))?;
            let g = estimate_gamma_regenerative(&rec, &f, &reg, &pi_f, &xs, *n_cycles, &main)?;
            let exact = if *compare_exact {
                let solver = StationarySolver::new(fam.base())?;
                let gam = solver.poisson(&function(&fv, n, "reward")?)?;
                Some(gam.as_slice()[xs] - gam.as_slice()[r])
            } else {
                None
            };
            report_estimate(out, &g.estimate, seed, exact);
            out.line("pi_f_bias_bound", g.bias_bound);
        }
        McParams::StationaryDerivative {
            reward,
            regen,
            n_outer,
            n_cycles,
            warmup,
            budgets,
            compare_exact,
            envelope_grid,
        } => {
            let (fv, r) = finite_reward_regen(reward, regen, n)?;
            let rec = FiniteChainRecursion::new(fam.clone(), *envelope_grid)?;
            let f = |x: &usize| fv[*x];
            let atom = move |x: &usize| *x == r;
            let reg = Regeneration { state: r, atom: &atom };
            let e = estimate_stationary_derivative(&rec, &f, &reg, *n_outer, *n_cycles, *warmup, &main)?;
            let exact = if *compare_exact {
                Some(stationary_derivative_report(&fam, &function(&fv, n, "reward")?)?.via_poisson)
            } else {
                None
            };
            report_estimate(out, &e.estimate, seed, exact);
            out.line("inner_bias_bound", e.inner_bias_bound);
            let rows = budgets
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let r = budget_stream.substream(k as u64);
                    Ok((
                        *b,
                        estimate_stationary_derivative(&rec, &f, &reg, *b, *n_cycles, *warmup, &r)?.estimate,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            se_curve(out, &rows);
        }
    }
    Ok(())
}

fn state_index(x: f64, n: usize) -> Result<usize, CliError> {
    if x >= 0.0 && x.fract() == 0.0 && (x as usize) < n {
        Ok(x as usize)
    } else {
        Err(CliError::Schema(format!("state {x} is not an index below {n}")))
    }
}

fn finite_reward_regen(
    reward: &Option<Vec<f64>>,
    regen: &Option<usize>,
    n: usize,
) -> Result<(Vec<f64>, usize), CliError> {
    let f = reward
        .clone()
        .ok_or_else(|| CliError::Schema("finite-chain estimators need a reward vector".into()))?;
    function(&f, n, "reward")?;
    let r = regen.ok_or_else(|| CliError::Schema("finite-chain estimators need a regen state".into()))?;
    if r >= n {
        return Err(CliError::Schema(format!("regen state {r} out of range")));
    }
    Ok((f, r))
}

fn mc_gg1(model: &GG1Model, params: &McParams, seed: u64, out: &mut Collector) -> Result<(), CliError> {
    model.validate()?;
    let main = RngStream::new(seed, 0);
    let rec = LindleyRecursion::new(model.clone());
    let f = |w: &f64| model.f_p(*w);
    let reg = Regeneration {
        state: 0.0,
        atom: empty_queue(),
    };
    let exact_from = |compare: bool, pick: fn(&lyapsens_sim::gg1::MG1Oracle) -> f64| {
        if compare {
            mg1_oracle(model).ok().map(|o| pick(&o))
        } else {
            None
        }
    };
    let reject = |what: &str| CliError::Schema(format!("{what} is fixed for the gg1 model and must be omitted"));
    match params {
        McParams::PiF {
            reward,
            regen,
            n_cycles,
            compare_exact,
        } => {
            if reward.is_some() || regen.is_some() {
                return Err(reject("reward/regen"));
            }
            let e = estimate_pi_f(&rec, &f, &reg, *n_cycles, &main)?;
            let exact = exact_from(*compare_exact && !model.theta_independent, |o| o.mean_wait);
            report_estimate(out, &ratio_as_estimate(&e, "regenerative-pi-f"), seed, exact);
        }
        McParams::Gamma {
            reward,
            regen,
            x,
            n_cycles,
            n_pi_cycles,
            ..
        } => {
            if reward.is_some() || regen.is_some() {
                return Err(reject("reward/regen"));
            }
            if !(*x >= 0.0) {
                return Err(CliError::Schema(format!("waiting time x = {x} must be nonnegative")));
            }
            let pi_f = estimate_pi_f(&rec, &f, &reg, *n_pi_cycles, &RngStream::new(seed, 2))?;
            let g = estimate_gamma_regenerative(&rec, &f, &reg, &pi_f, x, *n_cycles, &main)?;
            report_estimate(out, &g.estimate, seed, None);
            out.line("pi_f_bias_bound", g.bias_bound);
        }
        McParams::StationaryDerivative {
            reward,
            regen,
            n_outer,
            n_cycles,
            warmup,
            budgets,
            compare_exact,
            ..
        } => {
            if reward.is_some() || regen.is_some() {
                return Err(reject("reward/regen"));
            }
            model.check_derivative_hypothesis()?;
            let e = estimate_stationary_derivative(&rec, &f, &reg, *n_outer, *n_cycles, *warmup, &main)?;
            let exact = if model.theta_independent && *compare_exact {
                Some(0.0)
            } else {
                exact_from(*compare_exact, |o| o.derivative)
            };
            report_estimate(out, &e.estimate, seed, exact);
            out.line("inner_bias_bound", e.inner_bias_bound);
            let bs = RngStream::new(seed, 1);
            let rows = budgets
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let r = bs.substream(k as u64);
                    Ok((
                        *b,
                        estimate_stationary_derivative(&rec, &f, &reg, *b, *n_cycles, *warmup, &r)?.estimate,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            se_curve(out, &rows);
        }
        McParams::UStar { .. } | McParams::UStarDerivative { .. } => {
            return Err(CliError::Schema(
                "random-horizon estimators take a finite family; use stationary estimators for gg1".into(),
            ))
        }
    }
    // The queue's theta-dependence is only in the service law; make that visible.
    out.line("theta0", rec.theta0());
    Ok(())
}

fn gg1(s: &Spec<Gg1Params>, out: &mut Collector) -> Result<(), CliError> {
    let model = need_gg1(s)?;
    let rng = RngStream::new(s.seed, 0);
    match &s.params {
        Gg1Params::Derivative { budget } => {
            let rep = run_gg1_derivative_experiment(model, budget, &rng)?;
            let mut t = Table::new("gg1_derivative", &["method", "point", "std_error", "n"]);
            let e = &rep.estimate.estimate;
            t.row(vec![
                e.method.as_str().into(),
                e.point.into(),
                e.std_error.into(),
                e.n_samples.into(),
            ]);
            t.row(vec![
                rep.fd.method.as_str().into(),
                rep.fd.point.into(),
                rep.fd.std_error.into(),
                rep.fd.n_samples.into(),
            ]);
            if let Some(o) = rep.oracle {
                t.row(vec![
                    "pollaczek-khinchine".into(),
                    o.derivative.into(),
                    0.0.into(),
                    Cell::Empty,
                ]);
            }
            out.table(t);
            out.estimate("estimate", e);
            out.estimate("finite_difference", &rep.fd);
            out.line("h_fd", rep.h_fd);
            out.line("pi_f", rep.estimate.pi_f.point);
            out.line("inner_bias_bound", rep.estimate.inner_bias_bound);
            out.line("z_fd", rep.z_fd);
            out.line("agrees_with_fd", rep.agrees_with_fd);
            if let (Some(o), Some(z), Some(a)) = (rep.oracle, rep.z_oracle, rep.agrees_with_oracle) {
                out.line("oracle", o.derivative);
                out.line("z_oracle", z);
                out.line("agrees_with_oracle", a);
            }
        }
        Gg1Params::SeBudget { budget, n_outer } => {
            let rows = se_vs_budget(model, budget, n_outer, &rng)?;
            let mut t = Table::new("gg1_se_budget", &["n_outer", "point", "std_error"]);
            for r in &rows {
                t.row(vec![r.n_outer.into(), r.point.into(), r.std_error.into()]);
            }
            out.table(t);
            if rows.len() >= 2 {
                let x: Vec<f64> = rows.iter().map(|r| r.n_outer as f64).collect();
                let y: Vec<f64> = rows.iter().map(|r| r.std_error).collect();
                out.line("se_log_log_slope", lyapsens_sim::stats::log_log_slope(&x, &y));
            }
            out.plots.push(PlotSeries::new(
                "se_budget",
                "n_outer",
                "std_error",
                rows.iter().map(|r| (r.n_outer as f64, r.std_error)).collect(),
            ));
        }
        Gg1Params::Probe(cfg) => {
            let rep = appendix_bound_probe(model, cfg, &rng)?;
            let mut t = Table::new("probe", &["h", "x", "estimate", "std_error"]);
            for c in &rep.cells {
                t.row(vec![c.h.into(), c.x.into(), c.estimate.into(), c.std_error.into()]);
            }
            out.table(t);
            let mut t = Table::new("probe_fits", &["fit", "key", "d"]);
            for (h, d) in &rep.d_by_h {
                t.row(vec!["h".into(), (*h).into(), (*d).into()]);
            }
            for (x, d) in &rep.d_by_x_prefix {
                t.row(vec!["x_prefix".into(), (*x).into(), (*d).into()]);
            }
            out.table(t);
            out.line("d", rep.d);
            out.line("stable_h", rep.stable_h);
            out.line("stable_x", rep.stable_x);
            out.line("stable", rep.stable);
        }
        Gg1Params::Drift { constants, r, grid } => {
            let c = match constants {
                Some(c) => c.clone(),
                None => DriftConstants::recipe(model, *r)?,
            };
            let rep = gg1_drift_verification(model, &c, grid)?;
            let mut t = Table::new("drift", &["x", "drift_v0", "slack_v0", "slack_v1"]);
            for row in &rep.rows {
                t.row(vec![
                    row.x.into(),
                    row.drift_v0.into(),
                    row.slack_v0.into(),
                    row.slack_v1.into(),
                ]);
            }
            out.table(t);
            out.plots.push(PlotSeries::new(
                "drift_slack_v0",
                "x",
                "slack",
                rep.rows.iter().map(|r| (r.x, r.slack_v0)).collect(),
            ));
            out.plots.push(PlotSeries::new(
                "drift_slack_v1",
                "x",
                "slack",
                rep.rows.iter().map(|r| (r.x, r.slack_v1)).collect(),
            ));
            out.line("a1", c.a1);
            out.line("a2", c.a2);
            out.line("r", c.r);
            out.line("limit_drift", rep.limit_drift);
            out.line("c", rep.c.map_or("none".into(), |v| v.to_string()));
            out.line("c0", rep.c0);
            out.line("c1", rep.c1);
            out.line("passed", rep.passed);
        }
    }
    Ok(())
}

fn delta(s: &Spec<DeltaCiParams>, out: &mut Collector) -> Result<(), CliError> {
    if s.model.is_some() {
        return Err(CliError::Schema("delta-ci takes no [model] block".into()));
    }
    let p = &s.params;
    let ci = delta_ci(p.alpha_hat, p.grad_hat, p.c_hat, p.n, p.delta)?;
    let mut t = Table::new("delta_ci", &["quantity", "value"]);
    for (k, v) in [
        ("lower", ci.lower),
        ("upper", ci.upper),
        ("half_width", ci.half_width),
        ("z", ci.z),
        ("sigma", ci.sigma),
    ] {
        t.row(vec![k.into(), v.into()]);
    }
    out.table(t);
    out.line("interval", format!("[{}, {}]", ci.lower, ci.upper));
    out.line("half_width", ci.half_width);
    Ok(())
}

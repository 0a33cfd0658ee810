//! Pipelines behind the subcommands and the artifact files they write.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use forward_contract::contract::{bs_value_function, write_payout_table, Contract, TerminalState};
use forward_contract::market::{asset_path, simulate_brownian, write_path_csv};
use forward_contract::spde::{integrate_to_u, recover_strategy, solve_r, write_field_csv, SolveOptions};
use forward_contract::strategy::{
    merton_strategy, simulate_wealth, write_wealth_csv, InjectionEvent, InjectionSchedule, StartPoint,
};
use forward_contract::verification::{
    deviation_test, injection_robustness_test, martingale_test, principal_value_test, spde_vs_closed_form,
    supermartingale_profile, write_reports_csv, write_summary, ValueRole, VerificationReport,
};

use crate::config::Scenario;
use crate::{CliError, Command};

/// Output files, relative to the output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const VERIFICATION_CSV: &str = "verification.csv";
pub const SUMMARY: &str = "summary.txt";

struct Output {
    dir: PathBuf,
}

impl Output {
    fn prepare(dir: &Path, force: bool) -> Result<Self, CliError> {
        let io = |source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        };
        if dir.exists() {
            let non_empty = fs::read_dir(dir).map_err(io)?.next().is_some();
            if non_empty && !force {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty; pass --force-overwrite to replace its files",
                    dir.display()
                )));
            }
        } else {
            fs::create_dir_all(dir).map_err(io)?;
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| CliError::Io { path, source })
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }
}

/// Runs `command`; `Ok(false)` when a verification failed.
pub fn run(command: Command, s: &Scenario, force: bool) -> Result<bool, CliError> {
    let out = Output::prepare(&s.output_dir, force)?;
    out.write_text(EFFECTIVE_CONFIG, &s.to_toml()?)?;
    let all = command == Command::All;
    if all || command == Command::Simulate {
        simulate(s, &out)?;
    }
    if all || command == Command::SolveSpde {
        solve_spde(s, &out)?;
    }
    if all || command == Command::BsClosedForm {
        closed_form(s, &out)?;
    }
    if all || command == Command::Verify {
        return verify(s, &out);
    }
    Ok(true)
}

fn simulate(s: &Scenario, out: &Output) -> Result<(), CliError> {
    let market = s.market()?;
    let control = merton_strategy(&market, s.gamma)?;
    let mut events: Vec<InjectionEvent> = s
        .injection_scenarios()?
        .into_iter()
        .map(|sc| InjectionEvent {
            time: sc.time,
            rule: sc.rule,
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let injected = InjectionSchedule::new(events)?;
    for i in 0..s.simulate_paths {
        let path = simulate_brownian(2, s.horizon, s.dt, s.seed, i as u64)?;
        let assets = asset_path(&path, &market, &[1.0, 1.0])?;
        write_path_csv(out.create(&format!("path_{i}.csv"))?, &path, &assets)?;
        let start = StartPoint::inception(s.x0);
        let wealth = simulate_wealth(&control, &path, &market, start, &InjectionSchedule::none())?;
        write_wealth_csv(out.create(&format!("wealth_{i}.csv"))?, &wealth)?;
        if !injected.is_empty() {
            let wealth = simulate_wealth(&control, &path, &market, start, &injected)?;
            write_wealth_csv(out.create(&format!("wealth_injected_{i}.csv"))?, &wealth)?;
        }
    }
    Ok(())
}

fn solve_spde(s: &Scenario, out: &Output) -> Result<(), CliError> {
    let market = s.market()?;
    let form = s.closed_form()?;
    let strategy = merton_strategy(&market, s.gamma)?;
    let grid = s.grid()?;
    let path = simulate_brownian(2, s.horizon, s.dt, s.seed, 0)?;
    let n = path.num_steps();
    let options = SolveOptions {
        keep_every: n.max(1),
        probes: vec![s.x_bar],
    };
    let solution = solve_r(&strategy, &market, &|x| form.curvature(1.0, x), &path, &grid, &options)?;
    let zeta0 = form.utility(1.0, s.x_bar);
    let mut field = integrate_to_u(&solution, &strategy, &market, &path, s.x_bar, zeta0, &s.anchor_vol()?)?;
    field.attach_volatility(&strategy, &market, &path)?;
    write_field_csv(out.create("field_initial.csv")?, &field, field.initial())?;
    write_field_csv(out.create("field_terminal.csv")?, &field, field.terminal())?;

    let terminal = field.terminal();
    let coeffs = market.coefficients(terminal.step, &path)?;
    let recovered = recover_strategy(&field, terminal, &coeffs)?;
    let mut w = out.create("recovered_strategy.csv")?;
    let io = |source| CliError::Io {
        path: out.dir.join("recovered_strategy.csv"),
        source,
    };
    writeln!(w, "x,pi1_over_x,pi2_over_x").map_err(io)?;
    let (p1, p2) = (recovered.proportions(0), recovered.proportions(1));
    for i in 0..grid.len() {
        writeln!(w, "{:.10e},{:.10e},{:.10e}", grid.z(i).exp(), p1[i], p2[i]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn closed_form(s: &Scenario, out: &Output) -> Result<(), CliError> {
    let form = s.closed_form()?;
    let contract = Contract::closed_form(form);
    let spec = contract.spec().expect("closed-form contracts are serializable");
    out.write_text("contract.toml", &spec.to_toml()?)?;

    let value = bs_value_function(0.0, s.x0, &form.market, s.gamma, s.horizon)?;
    let lambda = form.lambda();
    let mut f = out.create("closed_form.csv")?;
    let rows = [
        ("lambda1", lambda[0]),
        ("lambda2", lambda[1]),
        ("merton_proportion", form.merton_proportion()),
        ("A", form.a()),
        ("B", form.b()),
        ("zeta0", form.zeta0()),
        ("principal_value", value),
    ];
    let io = |source| CliError::Io {
        path: out.dir.join("closed_form.csv"),
        source,
    };
    writeln!(f, "key,value").map_err(io)?;
    for (k, v) in rows {
        writeln!(f, "{k},{v}").map_err(io)?;
    }
    f.flush().map_err(io)?;

    let path = simulate_brownian(2, s.horizon, s.dt, s.seed, 0)?;
    let n = path.num_steps();
    let ratios = form.ratios_from_levels(path.horizon(), path.level(n));
    let state = TerminalState {
        t: path.horizon(),
        w: path.level(n),
        ratios: &ratios,
        ..Default::default()
    };
    let grid = s.grid()?;
    let xs: Vec<f64> = (0..grid.len()).step_by(8).map(|i| grid.z(i).exp()).collect();
    write_payout_table(out.create("payout_table.csv")?, &contract, &xs, &state)?;
    Ok(())
}

fn verify(s: &Scenario, out: &Output) -> Result<bool, CliError> {
    let market = s.market()?;
    let form = s.closed_form()?;
    let family = s.family()?;
    let mc = s.mc();
    let contract = Contract::closed_form(form);
    let mut reports: Vec<VerificationReport> = Vec::new();

    reports.push(martingale_test(&form, family.control(), &market, &s.checkpoints, &mc)?);
    for dev in family.deviations() {
        let mut r = supermartingale_profile(&form, dev, &market, &s.checkpoints, &mc, true)?;
        r.test = format!("supermartingale_profile[{}]", dev.label());
        reports.push(r);
    }
    reports.push(deviation_test(&contract, &family, &market, &mc, None)?);
    reports.push(principal_value_test(family.control(), &market, s.gamma, &mc, ValueRole::Optimal)?);
    for dev in family.deviations() {
        let mut r = principal_value_test(dev, &market, s.gamma, &mc, ValueRole::Comparison)?;
        r.test = format!("principal_value_test[{}]", dev.label());
        reports.push(r);
    }
    let check_every = (s.horizon / s.dt / 100.0).round().max(1.0) as usize;
    let errors = spde_vs_closed_form(&form, &s.grid()?, s.dt, s.spde_paths, s.seed, check_every)?;
    reports.push(errors.report(s.spde_tolerance));
    if s.nested {
        let nested = s.nested_config();
        for scenario in s.injection_scenarios()? {
            let mut r = injection_robustness_test(&contract, &form, &family, &scenario, &market, &nested)?;
            r.test = format!("injection_robustness_test[{}]", scenario.label());
            reports.push(r);
        }
    }

    write_reports_csv(out.create(VERIFICATION_CSV)?, &reports)?;
    write_summary(out.create(SUMMARY)?, &reports)?;
    Ok(reports.iter().all(|r| r.passed()))
}

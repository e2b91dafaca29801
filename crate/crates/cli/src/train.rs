use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cma_core::toymodel::{self, checkpoint, TrainOutcome};
use cma_core::{AblationVariant, MetricReport, ToyConfig};

use crate::CliError;

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub variant: AblationVariant,
    pub seed: Option<u64>,
    pub out: &'a Path,
    pub ablate_all: bool,
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ToyConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            ToyConfig::default().parse_over(&text)?
        }
        None => ToyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn report_csv(report: &MetricReport) -> String {
    format!(
        "f_beta,s_alpha,e_phi,mae\n{:.6},{:.6},{:.6},{:.6}\n",
        report.f_beta, report.s_alpha, report.e_phi, report.mae
    )
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn train_one(cfg: &ToyConfig, variant: AblationVariant, out: &Path) -> Result<TrainOutcome, CliError> {
    let outcome = toymodel::train_synthetic(cfg, variant)?;
    let name = variant.name();
    write(&out.join(format!("{name}.ckpt")), &checkpoint::encode(&outcome.model))?;
    write(&out.join(format!("{name}_trace.csv")), toymodel::trace_csv(&outcome.trace).as_bytes())?;
    write(&out.join(format!("{name}_report.csv")), report_csv(&outcome.report).as_bytes())?;
    Ok(outcome)
}

/// One row per variant: parameter count, held-out metrics and loss reduction.
pub fn ablation_table(rows: &[(AblationVariant, TrainOutcome)]) -> (String, String) {
    let mut console = format!(
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "variant", "params", "F_beta", "S_alpha", "E_phi", "MAE", "loss_red"
    );
    let mut csv = String::from("variant,params,f_beta,s_alpha,e_phi,mae,loss_reduction\n");
    for (v, o) in rows {
        let r = &o.report;
        let n = o.model.scalar_count();
        let red = o.loss_reduction();
        let _ = writeln!(
            console,
            "{:<8} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            v.name(),
            n,
            r.f_beta,
            r.s_alpha,
            r.e_phi,
            r.mae,
            red
        );
        let _ = writeln!(csv, "{},{n},{:.6},{:.6},{:.6},{:.6},{red:.6}", v.name(), r.f_beta, r.s_alpha, r.e_phi, r.mae);
    }
    (console, csv)
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config, args.seed)?;
    fs::create_dir_all(args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    if args.ablate_all {
        let mut rows = Vec::new();
        for v in AblationVariant::ALL {
            eprintln!("training {v}");
            rows.push((v, train_one(&cfg, v, args.out)?));
        }
        let (console, csv) = ablation_table(&rows);
        print!("{console}");
        write(&args.out.join("ablation.csv"), csv.as_bytes())?;
    } else {
        let outcome = train_one(&cfg, args.variant, args.out)?;
        print!("{}", crate::eval::table(&outcome.report));
    }
    Ok(())
}

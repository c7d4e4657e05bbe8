use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sslca::calibration::{calibrate, table_check, CalibrationSpec};
use sslca::crossbar::DeviceModel;
use sslca::experiment::{
    self, evaluate, prepare, sweep, test_stream, trace_unit, write_checkpoint, write_outputs, write_sweep,
    ExperimentConfig, Metrics, RunMode, SweepAxis, SweepRow,
};
use sslca::spikegen::write_edges_csv;
use sslca::{Result, SslcaError};

#[derive(Parser)]
#[command(
    name = "sslca",
    version,
    about = "Spiking sparse-coding crossbar simulator and experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root directory of the datasets (sets SSLCA_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Encoding worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        if let Some(d) = &self.data_dir {
            std::env::set_var(experiment::DATA_DIR_ENV, d);
        }
        if let Some(w) = self.workers {
            experiment::set_workers(w)?;
        }
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Derive circuit constants for one network.
    Calibrate(CalibrateArgs),
    /// Train (unless a dictionary is given), encode the test split and score it.
    Run(Common),
    /// Train the crossbar and save a checkpoint.
    Train(Common),
    /// Repeat a run over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rf_avg, k_in, k_out, read_dev, write_dev_online, write_dev_offline or bias.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Dump voltage traces and input edges for one test unit.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        image: usize,
        /// Patch index within the image.
        #[arg(long, default_value_t = 0)]
        unit: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    /// Take the network section of an experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Recompute the reference parameter table and compare.
    #[arg(long)]
    table_check: bool,
    #[arg(long)]
    n_inputs: Option<usize>,
    #[arg(long)]
    n_neurons: Option<usize>,
    #[arg(long)]
    rf_avg: Option<f64>,
    #[arg(long)]
    rf_least: Option<f64>,
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long)]
    bias: Option<f64>,
    /// Siemens.
    #[arg(long)]
    g_min: Option<f64>,
    /// Siemens.
    #[arg(long)]
    g_max: Option<f64>,
    /// Volts.
    #[arg(long)]
    v_cc: Option<f64>,
    /// Write the parameters here as JSON.
    #[arg(long)]
    save: Option<PathBuf>,
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<bool> {
    if a.table_check {
        let rows = table_check()?;
        println!("row,n,rf_avg,g_min_s,g_max_s,v_fire_v,v_fire_ref_v,c_cb_f,c_cb_ref_f,status");
        for r in &rows {
            let f = &r.reference;
            println!(
                "{},{},{},{:e},{:e},{:.6},{:.6},{:.6e},{:.6e},{}",
                f.row,
                f.n,
                f.rf_avg,
                f.g_min,
                f.g_max,
                r.params.v_fire,
                f.v_fire,
                r.params.c_cb,
                f.c_cb,
                if r.passed() { "ok" } else { "MISMATCH" }
            );
        }
        return Ok(rows.iter().all(|r| r.passed()));
    }
    let mut spec = match &a.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            CalibrationSpec {
                n_inputs: network_inputs(&cfg),
                ..cfg.network
            }
        }
        None => CalibrationSpec::default(),
    };
    let d = &mut spec.device;
    *d = DeviceModel {
        g_min: a.g_min.unwrap_or(d.g_min),
        g_max: a.g_max.unwrap_or(d.g_max),
        v_read: a.v_cc.unwrap_or(d.v_read),
    };
    spec.n_inputs = a.n_inputs.unwrap_or(spec.n_inputs);
    spec.n_neurons = a.n_neurons.unwrap_or(spec.n_neurons);
    spec.rf_avg = a.rf_avg.unwrap_or(spec.rf_avg);
    spec.rf_least = a.rf_least.or(spec.rf_least);
    spec.k_max = a.k_max.unwrap_or(spec.k_max);
    spec.bias = a.bias.unwrap_or(spec.bias);
    let params = calibrate(&spec)?;
    let text = serde_json::to_string_pretty(&params)?;
    println!("{text}");
    if let Some(p) = &a.save {
        fs::write(p, &text)?;
    }
    Ok(true)
}

/// Inputs per encoded unit implied by the dataset geometry.
fn network_inputs(cfg: &ExperimentConfig) -> usize {
    use experiment::DatasetKind::*;
    let ds = &cfg.dataset;
    let (side, ch) = match ds.kind {
        Mnist => (ds.scale.unwrap_or(28), 1),
        Cifar10 => (ds.scale.unwrap_or(32), 3),
        Synthetic => return ds.synthetic.n,
    };
    let s = ds.patch.unwrap_or(side);
    s * s * ch
}

fn print_metrics(m: &Metrics) {
    let acc = |x: Option<f64>| x.map_or("-".into(), |v| format!("{:.2}%", 100.0 * v));
    eprintln!(
        "units {}  spikes {:.2}  active {:.2}  rmse {:.4}  compression {:.3}  energy {:.3} pJ/input  accuracy {} (train {})",
        m.n_units,
        m.mean_spikes,
        m.mean_active,
        m.mean_rmse,
        m.mean_compression,
        m.energy.per_input_j * 1e12,
        acc(m.accuracy),
        acc(m.train_accuracy)
    );
}

fn warn_all(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn cmd_run(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let prep = prepare(&cfg)?;
    warn_all(&prep.warnings);
    let eval = evaluate(&prep, cfg.mode, &cfg.variability)?;
    let dir = write_outputs(&prep, &eval)?;
    print_metrics(&eval.metrics);
    println!("{}", dir.display());
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    if cfg.training.is_none() {
        return Err(SslcaError::Config("config has no training section".into()));
    }
    let mut cfg = cfg;
    cfg.dictionary = None;
    let prep = prepare(&cfg)?;
    warn_all(&prep.warnings);
    for h in &prep.history {
        eprintln!(
            "epoch {}  spikes {:.2}  active {:.2}  rmse {:.4}",
            h.epoch, h.mean_spikes, h.mean_active, h.mean_rmse
        );
    }
    println!("{}", write_checkpoint(&prep)?.display());
    Ok(())
}

fn cmd_sweep(c: &Common, axis: SweepAxis, values: &[f64]) -> Result<()> {
    let cfg = c.load()?;
    let rows = sweep(&cfg, axis, values)?;
    println!("{}", SweepRow::CSV_HEADER);
    for r in &rows {
        println!("{}", r.csv_row());
    }
    eprintln!("{}", write_sweep(&cfg, axis, &rows)?.display());
    Ok(())
}

fn cmd_trace(c: &Common, image: usize, unit: usize, samples: usize) -> Result<()> {
    let mut cfg = c.load()?;
    if cfg.mode == RunMode::LcaReference {
        return Err(SslcaError::Config("traces need mode uninhibited or inhibited".into()));
    }
    cfg.dataset.test = cfg.dataset.test.max(image + 1);
    cfg.evaluation.slp = false;
    let prep = prepare(&cfg)?;
    let img = prep
        .test
        .images
        .get(image)
        .ok_or_else(|| SslcaError::Data(format!("test image {image} is not available")))?;
    let units = match cfg.dataset.patch {
        Some(s) => sslca::data::patchify(img, s)?,
        None => vec![img.data.clone()],
    };
    let x = units
        .get(unit)
        .ok_or_else(|| SslcaError::Config(format!("image has {} units", units.len())))?;
    let (trains, trace) = trace_unit(&prep, x, cfg.mode, test_stream(image, unit, units.len()))?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("traces.csv"), |w| trace.write_csv(samples, w))?;
    write_file(&dir.join("edges.csv"), |w| write_edges_csv(&trains, w))?;
    println!("{}", dir.display());
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a).map(|ok| if ok { 0 } else { 1 }),
        Command::Run(c) => cmd_run(c).map(|_| 0),
        Command::Train(c) => cmd_train(c).map(|_| 0),
        Command::Sweep { common, axis, values } => cmd_sweep(common, *axis, values).map(|_| 0),
        Command::Trace {
            common,
            image,
            unit,
            samples,
        } => cmd_trace(common, *image, *unit, *samples).map(|_| 0),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

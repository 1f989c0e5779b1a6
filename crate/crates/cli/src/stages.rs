//! One function per subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use emsense::beamform::{design_beamformers, min_power_for_rate, BeamformProblem, SdrOptions};
use emsense::channel::{build_transmit_block, crb_trace, estimate_channel, monte_carlo_mse, sinr_and_rate, SymbolDraw};
use emsense::cloud::{read_csv, write_csv, write_ply, denormalize_cloud, Point5D};
use emsense::cmatrix::{read_cmat, write_cmat, CMat, ChannelMatrix};
use emsense::config::SystemConfig;
use emsense::data::{build_dataset, draw_comm_channels, read_dataset, write_dataset, Dataset, DatasetOptions, TargetClass};
use emsense::diffusion::checkpoint::{read_checkpoint, write_checkpoint};
use emsense::diffusion::train::write_loss_csv;
use emsense::diffusion::{
    sample as sample_cloud, train as train_model, Architecture, DiffusionSchedule, NoiseEstimator, ReverseVariance, SampleOptions,
    TrainConfig, TrainingExample,
};
use emsense::metrics::{chamfer, nmse, write_ply_pair, ChamferSpace, EvalReport};
use emsense::physics::{dbm_to_watts, watts_to_dbm};
use emsense::rng::{derive_seed, sub_stream};
use rayon::prelude::*;
use thiserror::Error;

use crate::manifest::{hex_digest, Manifest};
use crate::{ArchChoice, DesignArgs, EstimateArgs, EvaluateArgs, GenDataArgs, Global, SampleArgs, SplitChoice, TrainArgs};

/// Linear schedule end points used by train and sample.
pub const BETA_1: f64 = 1e-4;
pub const BETA_T: f64 = 0.05;

/// The design problem has no feasible point (exit code 2).
#[derive(Debug, Error)]
#[error("infeasible: {0}")]
pub struct Infeasible(pub String);

/// A numerical check failed after the computation finished (exit code 3).
#[derive(Debug, Error)]
#[error("numerical failure: {0}")]
pub struct Numerical(pub String);

fn stem(id: usize) -> String {
    format!("{id:06}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn subdir(base: &Path, name: &str) -> Result<PathBuf> {
    let d = base.join(name);
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

/// Hash over the sorted file names and contents of `dir`.
fn dir_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut all = Vec::new();
    for p in names.iter().filter(|p| p.is_file()) {
        all.extend_from_slice(p.file_name().unwrap_or_default().as_encoded_bytes());
        all.push(0);
        all.extend_from_slice(&fs::read(p)?);
    }
    Ok(hex_digest(&all))
}

fn load_dataset(dir: &Path, cfg: &SystemConfig) -> Result<Dataset> {
    read_dataset(dir, cfg).with_context(|| format!("reading dataset {}", dir.display()))
}

fn split_ids(ds: &Dataset, split: SplitChoice) -> Vec<usize> {
    let mut ids = match split {
        SplitChoice::Train => ds.split.train.clone(),
        SplitChoice::Test => ds.split.test.clone(),
        SplitChoice::Validation => ds.split.validation.clone(),
        SplitChoice::All => ds.records.iter().map(|r| r.id).collect(),
    };
    ids.sort_unstable();
    ids
}

fn estimate_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("estimates").join(format!("{}.chan", stem(id)))
}

fn read_channel(path: &Path) -> Result<ChannelMatrix> {
    ChannelMatrix::read(open(path)?).with_context(|| format!("reading channel {}", path.display()))
}

/// Channel fed to the network for a record: its estimate when a directory is
/// given, else the true channel.
fn input_channel(estimates: Option<&Path>, ds: &Dataset, id: usize) -> Result<ChannelMatrix> {
    match estimates {
        Some(d) => read_channel(&estimate_path(d, id)),
        None => Ok(ds.record(id).context("record missing")?.h_s.clone()),
    }
}

pub fn gen_data(g: &Global, cfg: &SystemConfig, a: &GenDataArgs) -> Result<()> {
    let classes: Vec<TargetClass> = if a.classes.is_empty() {
        TargetClass::ALL.to_vec()
    } else {
        a.classes.iter().map(|c| TargetClass::parse(c.trim())).collect::<emsense::Result<_>>()?
    };
    let opts = DatasetOptions {
        n_records: a.records,
        points_per_cloud: a.points,
        classes: classes.clone(),
        fixed_center: a.at_reference.then_some(cfg.reference_location),
        seed: g.seed,
    };
    let ds = build_dataset(cfg, &opts)?;
    write_dataset(&g.out, &ds)?;
    fs::write(g.out.join("config.txt"), cfg.to_kv_string())?;
    for (id, why) in &ds.quarantined {
        log::warn!("record {id} quarantined: {why}");
    }
    println!("{} records written to {}, {} quarantined", ds.records.len(), g.out.display(), ds.quarantined.len());
    let names: Vec<&str> = classes.iter().map(|c| c.name()).collect();
    Manifest::new("gen-data", g.seed, &cfg.fingerprint())
        .set("records", a.records)
        .set("points", a.points)
        .set("classes", names.join(","))
        .set("at_reference", a.at_reference)
        .set("quarantined", ds.quarantined.len())
        .write(&g.out)
}

pub fn design_beams(g: &Global, base: &SystemConfig, a: &DesignArgs) -> Result<()> {
    let mut cfg = base.clone();
    if let Some(p) = a.power_dbm {
        cfg.max_power = dbm_to_watts(p);
    }
    if let Some(r) = a.min_rate {
        cfg.min_rate_bps_hz = r;
    }
    if let Some(k) = a.ue_count {
        cfg.ue_count = k;
    }
    let k = cfg.ue_count;
    let (chans, dists) =
        if k == 0 { (Vec::new(), Vec::new()) } else { draw_comm_channels(k, &cfg, &mut sub_stream(g.seed, &[0xBEA]))? };
    let noise = vec![cfg.noise_power_ue; k];
    let prob = BeamformProblem::new(chans.clone(), noise.clone(), cfg.max_power, cfg.min_rate_bps_hz)?;

    let mut manifest = Manifest::new("design-beams", g.seed, &base.fingerprint());
    manifest
        .set("power_dbm", format!("{:?}", watts_to_dbm(cfg.max_power)))
        .set("min_rate_bps_hz", format!("{:?}", cfg.min_rate_bps_hz))
        .set("ue_count", k);
    let h_mat = CMat::from_fn(cfg.n_tx, k, |i, j| chans[j][i]);
    write_cmat(create(&g.out.join("ue_channels.chan"))?, &h_mat)?;

    let design = match design_beamformers(&prob, cfg.n_tx, &SdrOptions::default()) {
        Ok(d) => d,
        Err(emsense::Error::Infeasible(msg)) => {
            let mut cert = format!("status = infeasible\nreason = {msg}\npower_w = {:?}\n", cfg.max_power);
            if let Ok(p) = min_power_for_rate(&prob) {
                cert.push_str(&format!("min_power_for_rate_w = {p:?}\nmin_power_for_rate_dbm = {:?}\n", watts_to_dbm(p)));
            }
            fs::write(g.out.join("infeasible.txt"), &cert)?;
            print!("{cert}");
            manifest.set("status", "infeasible").write(&g.out)?;
            return Err(Infeasible(msg).into());
        }
        Err(e) => return Err(e.into()),
    };

    write_cmat(create(&g.out.join("s_x.chan"))?, &design.s_x)?;
    write_cmat(create(&g.out.join("w_s.chan"))?, &design.w_s)?;
    write_cmat(create(&g.out.join("w_c.chan"))?, &design.w_c)?;
    let links = sinr_and_rate(&chans, &design.r_k, &design.s_x, &noise)?;
    let crb = crb_trace(&design.s_x, cfg.noise_power_sensing, cfg.symbol_count, cfg.n_rx)?;
    let mut summary = String::new();
    summary.push_str(&format!("power_w = {:?}\n", cfg.max_power));
    summary.push_str(&format!("trace_s_x = {:?}\n", design.s_x.trace().re));
    summary.push_str(&format!("objective = {:?}\n", design.objective));
    summary.push_str(&format!("crb_trace = {crb:?}\n"));
    for (i, (l, d)) in links.iter().zip(&dists).enumerate() {
        summary.push_str(&format!("ue{i} = distance_m {d:?} sinr {:?} rate_bps_hz {:?}\n", l.sinr, l.rate_bps_hz));
    }
    fs::write(g.out.join("design.txt"), &summary)?;
    let table = design.feasibility.table();
    fs::write(g.out.join("feasibility.txt"), &table)?;
    print!("{table}");
    let ok = design.feasibility.all_pass();
    manifest.set("status", if ok { "feasible" } else { "validation-failed" }).write(&g.out)?;
    if !ok {
        return Err(Numerical("extracted design fails validation".into()).into());
    }
    Ok(())
}

pub fn estimate(g: &Global, cfg: &SystemConfig, a: &EstimateArgs) -> Result<()> {
    let ds = load_dataset(&a.data, cfg)?;
    let w_s = read_cmat(open(&a.design.join("w_s.chan"))?)?;
    let w_c = read_cmat(open(&a.design.join("w_c.chan"))?)?;
    let block = build_transmit_block(&w_s, &w_c, cfg.symbol_count, derive_seed(g.seed, &[0xB10C]), SymbolDraw::Whitened)?;
    let sigma2 = if a.noiseless { 0.0 } else { cfg.noise_power_sensing };
    let results = ds
        .records
        .par_iter()
        .map(|r| estimate_channel(&r.h_s, &block, sigma2, derive_seed(g.seed, &[0xE57, r.id as u64])))
        .collect::<emsense::Result<Vec<_>>>()?;

    let est_dir = subdir(&g.out, "estimates")?;
    let mut csv = create(&g.out.join("estimates.csv"))?;
    writeln!(csv, "id,nmse,error_sq,crb_trace")?;
    let mut mean_nmse = 0.0;
    for (r, e) in ds.records.iter().zip(&results) {
        e.h_hat.write(create(&est_dir.join(format!("{}.chan", stem(r.id))))?)?;
        let q = nmse(&r.h_s, &e.h_hat)?;
        mean_nmse += q / results.len().max(1) as f64;
        writeln!(csv, "{},{q:?},{:?},{:?}", r.id, e.empirical_error.unwrap_or(f64::NAN), e.crb_trace)?;
    }
    csv.flush()?;
    println!("{} estimates, mean NMSE {mean_nmse:.4e}", results.len());

    let mut manifest = Manifest::new("estimate", g.seed, &cfg.fingerprint());
    manifest
        .input_file("data", &a.data.join("manifest.txt"))?
        .input_file("w_s", &a.design.join("w_s.chan"))?
        .input_file("w_c", &a.design.join("w_c.chan"))?
        .set("noiseless", a.noiseless)
        .set("trials", a.trials);
    if a.trials > 0 {
        let first = ds.records.first().context("dataset has no records")?;
        let mc = monte_carlo_mse(&first.h_s, &block, cfg.noise_power_sensing, a.trials, derive_seed(g.seed, &[0x3C]))?;
        let mut w = create(&g.out.join("monte_carlo.csv"))?;
        mc.write_csv(&mut w)?;
        writeln!(w, "# mean_error_sq={:?} crb_trace={:?} ratio={:?}", mc.mean_error_sq, mc.crb_trace, mc.mean_error_sq / mc.crb_trace)?;
        w.flush()?;
        println!("Monte-Carlo MSE / CRB = {:.4}", mc.mean_error_sq / mc.crb_trace);
    }
    manifest.write(&g.out)
}

fn architecture(choice: ArchChoice) -> Architecture {
    match choice {
        ArchChoice::Full => Architecture::default(),
        ArchChoice::Tiny => Architecture { noise_dims: vec![5, 32, 32, 5], transfer_width: 32, transfer_blocks: 2, l_bar: 4 },
    }
}

pub fn train(g: &Global, cfg: &SystemConfig, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data, cfg)?;
    let ids = split_ids(&ds, SplitChoice::Train);
    if ids.is_empty() {
        return Err(emsense::Error::Domain("training split is empty".into()).into());
    }
    let inputs = ids.iter().map(|&id| input_channel(a.estimates.as_deref(), &ds, id)).collect::<Result<Vec<_>>>()?;
    let examples: Vec<TrainingExample> = ids
        .iter()
        .zip(&inputs)
        .map(|(&id, h_in)| {
            let r = ds.record(id).expect("split ids come from the dataset");
            TrainingExample {
                points: &r.cloud.points,
                scale_m: r.cloud.scale_m,
                h_in,
                h_ref: &r.h_s_ref,
                center_m: r.target.center_m,
            }
        })
        .collect();

    let mut model = NoiseEstimator::new(
        cfg.n_rx,
        cfg.n_tx,
        cfg.sensing_sector.radius_m,
        &architecture(a.arch),
        derive_seed(g.seed, &[1]),
    )?;
    model.set_array(cfg)?;
    let tc = TrainConfig {
        noise_epochs: a.noise_epochs,
        transfer_epochs: a.transfer_epochs,
        learning_rate: a.learning_rate,
        transfer_learning_rate: a.transfer_learning_rate,
        ..TrainConfig::default()
    };
    let sched = DiffusionSchedule::linear(a.steps, BETA_1, BETA_T)?;
    let report = train_model(&mut model, &examples, &sched, &tc, derive_seed(g.seed, &[2]))?;

    write_checkpoint(create(&g.out.join("model.ckpt"))?, &model)?;
    write_loss_csv(create(&g.out.join("noise_loss.csv"))?, &report.noise_loss)?;
    write_loss_csv(create(&g.out.join("transfer_loss.csv"))?, &report.transfer_loss)?;
    println!(
        "noise loss {:.4e} after {} epochs, transfer NMSE {:.4e} after {} epochs",
        report.noise_loss.last().copied().unwrap_or(f64::NAN),
        report.noise_loss.len(),
        report.transfer_loss.last().copied().unwrap_or(f64::NAN),
        report.transfer_loss.len()
    );

    let mut manifest = Manifest::new("train", g.seed, &cfg.fingerprint());
    manifest.input_file("data", &a.data.join("manifest.txt"))?;
    if let Some(d) = &a.estimates {
        manifest.set("input.estimates", dir_digest(&d.join("estimates"))?);
    }
    manifest
        .set("arch", format!("{:?}", a.arch).to_lowercase())
        .set("steps", a.steps)
        .set("beta", format!("{BETA_1:?},{BETA_T:?}"))
        .set("noise_epochs", a.noise_epochs)
        .set("transfer_epochs", a.transfer_epochs)
        .set("learning_rate", format!("{:?}", a.learning_rate))
        .set("transfer_learning_rate", format!("{:?}", a.transfer_learning_rate))
        .set("train_records", ids.len())
        .write(&g.out)
}

const POINTS_HEADER: &str = "u0,u1,u2,u3,u4";

fn write_points5(path: &Path, pts: &[Point5D]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{POINTS_HEADER}")?;
    for p in pts {
        let [a, b, c, d, e] = p.0;
        writeln!(w, "{a:?},{b:?},{c:?},{d:?},{e:?}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the normalized 5D points written by `sample`.
pub fn read_points5(path: &Path) -> Result<Vec<Point5D>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(POINTS_HEADER) {
        return Err(emsense::Error::Format(format!("{} lacks the header {POINTS_HEADER}", path.display())).into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()?;
            match v[..] {
                [a, b, c, d, e] => Ok(Point5D([a, b, c, d, e])),
                _ => Err(emsense::Error::Format(format!("expected 5 values in '{l}'")).into()),
            }
        })
        .collect()
}

pub fn sample(g: &Global, cfg: &SystemConfig, a: &SampleArgs) -> Result<()> {
    let model = read_checkpoint(open(&a.model)?).with_context(|| format!("reading model {}", a.model.display()))?;
    let ds = load_dataset(&a.data, cfg)?;
    let ids = split_ids(&ds, a.split);
    let sched = DiffusionSchedule::linear(a.steps, BETA_1, BETA_T)?;
    let clouds = ids
        .par_iter()
        .map(|&id| {
            let r = ds.record(id).expect("split ids come from the dataset");
            let h = input_channel(a.estimates.as_deref(), &ds, id)?;
            let opts = SampleOptions {
                n_points: a.points,
                seed: derive_seed(g.seed, &[0x5A, id as u64]),
                first_point: 0,
                variance: ReverseVariance::Beta,
            };
            Ok((id, sample_cloud(&model, &h, &r.target.center_m, &sched, &opts)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = subdir(&g.out, "samples")?;
    for (id, cloud) in &clouds {
        write_points5(&dir.join(format!("{}.pts", stem(*id))), &cloud.points)?;
        let phys = denormalize_cloud(cloud, cfg.omega());
        write_csv(create(&dir.join(format!("{}.csv", stem(*id))))?, &phys)?;
        write_ply(create(&dir.join(format!("{}.ply", stem(*id))))?, &phys)?;
    }
    println!("{} clouds of {} points written to {}", clouds.len(), a.points, dir.display());

    let mut manifest = Manifest::new("sample", g.seed, &cfg.fingerprint());
    manifest.input_file("model", &a.model)?.input_file("data", &a.data.join("manifest.txt"))?;
    if let Some(d) = &a.estimates {
        manifest.set("input.estimates", dir_digest(&d.join("estimates"))?);
    }
    manifest
        .set("split", format!("{:?}", a.split).to_lowercase())
        .set("points", a.points)
        .set("steps", a.steps)
        .write(&g.out)
}

pub fn evaluate(g: &Global, cfg: &SystemConfig, a: &EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.data, cfg)?;
    let sample_dir = a.samples.join("samples");
    let mut ids: Vec<usize> = fs::read_dir(&sample_dir)
        .with_context(|| format!("listing {}", sample_dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "pts").then(|| p.file_stem()?.to_str()?.parse().ok())?
        })
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(emsense::Error::Domain(format!("no samples in {}", sample_dir.display())).into());
    }
    let space = if a.position_only { ChamferSpace::Position } else { ChamferSpace::Full };
    let pairs_dir = subdir(&g.out, "pairs")?;
    let mut chamfers = Vec::with_capacity(ids.len());
    for &id in &ids {
        let r = ds.record(id).with_context(|| format!("sample {id} has no dataset record"))?;
        let est = read_points5(&sample_dir.join(format!("{}.pts", stem(id))))?;
        chamfers.push(chamfer(&r.cloud.points, &est, space)?);
        let phys = read_csv(open(&sample_dir.join(format!("{}.csv", stem(id))))?)?;
        write_ply_pair(create(&pairs_dir.join(format!("{}.ply", stem(id))))?, &r.points, &phys)?;
    }
    let report = EvalReport::new(ids.iter().map(|&i| stem(i)).collect(), chamfers, None, space)?;
    let mut w = create(&g.out.join("eval.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("MCD {:.4} dB over {} samples (mean Chamfer {:.6e})", report.mcd_db, ids.len(), report.mean_chamfer());

    Manifest::new("evaluate", g.seed, &cfg.fingerprint())
        .input_file("data", &a.data.join("manifest.txt"))?
        .set("input.samples", dir_digest(&sample_dir)?)
        .set("space", if a.position_only { "position" } else { "full" })
        .write(&g.out)
}

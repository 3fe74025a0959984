//! `dmn`: offline training, transfer fitting and online simulation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dmn_core::fe::{self, Mesh, SimConfig, SimOutput, SimSnapshot, Simulation};
use dmn_core::io::{self, Provenance, RunManifest};
use dmn_core::mandel::{mandel_to_components, modulus_surface, write_modulus_surface_csv};
use dmn_core::material::MaterialSpec;
use dmn_core::network::build_network;
use dmn_core::online::{simulate_path, Control, NetworkState, StepOptions};
use dmn_core::train::teacher::anchor_teachers;
use dmn_core::train::{generate_teacher_dataset, train, EpochRecord, TrainConfig};
use dmn_core::transfer::{fit_anchor_regression, instantiate_network, Descriptor, OrientationTensor};
use dmn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dmn", version, about = "Deep material network toolkit for short-fiber composites")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadControl {
    /// All strain components follow the path.
    Strain,
    /// Only the normal strain along x follows the path; other stresses vanish.
    UniaxialX,
    UniaxialY,
    UniaxialZ,
}

impl LoadControl {
    fn control(self) -> Control {
        match self {
            LoadControl::Strain => Control::Strain,
            LoadControl::UniaxialX => Control::UniaxialStress { axis: 0 },
            LoadControl::UniaxialY => Control::UniaxialStress { axis: 1 },
            LoadControl::UniaxialZ => Control::UniaxialStress { axis: 2 },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four anchor teacher networks and their datasets.
    GenAnchors {
        #[arg(long)]
        teacher_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        layers: usize,
        /// Samples per anchor (split 80/20 into train/test).
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `random` or a network file to start from.
        #[arg(long, default_value = "random")]
        init: String,
        /// Training configuration (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Depth of a randomly initialized network.
        #[arg(long, default_value_t = 8)]
        layers: usize,
    },
    /// Fit the anchor regression on four trained networks.
    TransferFit {
        /// Directory holding the anchor networks.
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the teacher networks instead of trained ones.
        #[arg(long)]
        use_teachers: bool,
    },
    /// Drive one material point along a strain path.
    PointSim {
        #[arg(long)]
        bundle: PathBuf,
        /// Orientation tensor components `axx,ayy,azz,axy,ayz,azx`.
        #[arg(long, allow_hyphen_values = true)]
        orientation: String,
        #[arg(long)]
        vf: f64,
        /// Strain increments, `step,d11,d22,d33,d12,d23,d31`.
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Phase materials (JSON `{"fiber": .., "matrix": ..}`); defaults to
        /// the RVE constituents.
        #[arg(long)]
        phases: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strain")]
        control: LoadControl,
    },
    /// Explicit finite-element simulation.
    FeSim {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        micro: PathBuf,
        /// Scenario (JSON simulation configuration).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a snapshot written by an earlier run.
        #[arg(long)]
        restart: Option<PathBuf>,
    },
    /// Directional Young's modulus of a network's linear prediction.
    ModulusSurface {
        #[arg(long)]
        net: PathBuf,
        /// Phase materials (JSON `{"fiber": .., "matrix": ..}`).
        #[arg(long)]
        phases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 37)]
        n_theta: usize,
        #[arg(long, default_value_t = 72)]
        n_phi: usize,
    },
    /// Write a structured box mesh.
    BoxMesh {
        /// Divisions `nx,ny,nz`.
        #[arg(long)]
        divisions: String,
        /// Edge lengths `lx,ly,lz`.
        #[arg(long)]
        lengths: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Phases {
    fiber: MaterialSpec,
    matrix: MaterialSpec,
}

impl Default for Phases {
    fn default() -> Self {
        Self {
            fiber: MaterialSpec::rve_fiber(),
            matrix: MaterialSpec::rve_matrix(),
        }
    }
}

/// Index written by `gen-anchors`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnchorIndexEntry {
    descriptor: Descriptor,
    dataset: String,
    teacher: String,
}

const ANCHOR_INDEX: &str = "anchors.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn parse_list<const N: usize, T: std::str::FromStr>(s: &str, what: &str) -> Result<[T; N]> {
    let v: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parameter(format!("{what}: cannot parse '{s}'")))?;
    let n = v.len();
    v.try_into()
        .map_err(|_| Error::Parameter(format!("{what}: expected {N} comma-separated values, got {n}")))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn gen_anchors(out: &Path, seed: u64, layers: usize, samples: usize, m: &mut RunManifest) -> Result<()> {
    fs::create_dir_all(out)?;
    m.seeds.push(seed);
    let mut index = Vec::new();
    for (i, (d, teacher)) in anchor_teachers(layers)?.into_iter().enumerate() {
        let descriptor = Descriptor::new(d[0], d[1], d[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let data = generate_teacher_dataset(&teacher, samples, &mut rng)?;
        let teacher_file = format!("teacher_{}.json", i + 1);
        let data_file = format!("anchor_{}.csv", i + 1);
        io::save_network(
            &out.join(&teacher_file),
            &teacher,
            &Provenance {
                seed: Some(seed),
                train_config_hash: None,
                anchor_descriptor: Some(descriptor),
            },
        )?;
        io::save_dataset(&out.join(&data_file), &data, Some(&descriptor))?;
        m.add_output(&out.join(&teacher_file))?;
        m.add_output(&out.join(&data_file))?;
        index.push(AnchorIndexEntry {
            descriptor,
            dataset: data_file,
            teacher: teacher_file,
        });
    }
    fs::write(out.join(ANCHOR_INDEX), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn history_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_history.csv"))
}

fn train_cmd(data: &Path, init: &str, config: Option<&Path>, out: &Path, layers: usize, m: &mut RunManifest) -> Result<()> {
    let cfg: TrainConfig = match config {
        Some(p) => {
            m.add_input(p)?;
            read_json(p)?
        }
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    let cfg_json = serde_json::to_string(&cfg)?;
    let cfg_hash = io::sha256_hex(cfg_json.as_bytes());
    m.config_hash = Some(cfg_hash.clone());
    m.seeds.push(cfg.seed);
    m.add_input(data)?;
    let (dataset, descriptor) = io::load_dataset(data)?;
    let start = if init == "random" {
        build_network(layers, cfg.seed)?
    } else {
        let p = Path::new(init);
        m.add_input(p)?;
        io::load_network(p)?.0
    };
    let (net, history) = train(&start, &dataset, &cfg)?;
    if let Some(last) = history.last() {
        log::info!(
            "{} epochs: train error {:.4e}, test error {:.4e}",
            history.len(),
            last.train_mae,
            last.test_mae
        );
    }
    let prov = Provenance {
        seed: Some(cfg.seed),
        train_config_hash: Some(cfg_hash),
        anchor_descriptor: descriptor,
    };
    io::save_network(out, &net, &prov)?;
    let hist = history_path(out);
    write_history(&hist, &history)?;
    m.add_output(out)?;
    m.add_output(&hist)?;
    Ok(())
}

/// Networks in `dir` carrying an anchor descriptor; trained ones unless
/// `teachers` is set.
fn collect_anchor_networks(dir: &Path, teachers: bool, m: &mut RunManifest) -> Result<Vec<(Descriptor, dmn_core::network::Network)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            name != ANCHOR_INDEX && !name.ends_with(".manifest.json")
        })
        .collect();
    paths.sort();
    let mut found = Vec::new();
    for p in paths {
        let Ok((net, prov)) = io::load_network(&p) else {
            continue;
        };
        let trained = prov.train_config_hash.is_some();
        if let Some(d) = prov.anchor_descriptor {
            if trained != teachers {
                m.add_input(&p)?;
                found.push((d, net));
            }
        }
    }
    if found.len() != 4 {
        return Err(Error::Parameter(format!(
            "{}: expected 4 {} anchor networks, found {}",
            dir.display(),
            if teachers { "teacher" } else { "trained" },
            found.len()
        )));
    }
    Ok(found)
}

fn point_sim(
    bundle: &Path,
    orientation: &str,
    vf: f64,
    path: &Path,
    out: &Path,
    phases: Option<&Path>,
    control: LoadControl,
    m: &mut RunManifest,
) -> Result<()> {
    m.add_input(bundle)?;
    m.add_input(path)?;
    let anchors = io::load_bundle(bundle)?;
    let a = OrientationTensor::from_components_renormalized(parse_list::<6, f64>(orientation, "orientation")?, fe::TRACE_RENORMALIZE_TOL)?;
    if !(vf > 0.0 && vf < 1.0) {
        return Err(Error::Parameter(format!("volume fraction {vf} outside (0, 1)")));
    }
    let phases: Phases = match phases {
        Some(p) => {
            m.add_input(p)?;
            read_json(p)?
        }
        None => Phases::default(),
    };
    let inst = instantiate_network(&anchors, &a, vf)?;
    if inst.extrapolated {
        log::warn!("volume fraction {vf} lies outside the anchor range");
    }
    let increments = io::load_strain_path(path)?;
    let mut state = NetworkState::new(&inst.network, phases.fiber.build()?, phases.matrix.build()?)?;
    let records = simulate_path(&mut state, &increments, control.control(), &StepOptions::default())?;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "step,e11,e22,e33,e12,e23,e31,s11,s22,s33,s12,s23,s31,eps_hom,iterations")?;
    for r in &records {
        write!(w, "{}", r.step)?;
        for x in mandel_to_components(&r.strain).iter().chain(&mandel_to_components(&r.stress)) {
            write!(w, ",{x:?}")?;
        }
        writeln!(w, ",{:?},{}", r.eps_hom, r.iterations)?;
    }
    w.flush()?;
    m.add_output(out)?;
    Ok(())
}

fn write_fe_outputs(dir: &Path, sim: &Simulation, output: &SimOutput, m: &mut RunManifest) -> Result<()> {
    let hist = dir.join("history.csv");
    let mut w = BufWriter::new(File::create(&hist)?);
    write!(w, "step,time,kinetic,internal_work,external_work")?;
    for s in &sim.config().reaction_sets {
        write!(w, ",{s}_rx,{s}_ry,{s}_rz")?;
    }
    writeln!(w)?;
    for h in &output.history {
        write!(w, "{},{:?},{:?},{:?},{:?}", h.step, h.time, h.kinetic, h.internal_work, h.external_work)?;
        for r in &h.reactions {
            write!(w, ",{:?},{:?},{:?}", r[0], r[1], r[2])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    m.add_output(&hist)?;
    for f in &output.fields {
        let sp = dir.join(format!("stress_{:06}.csv", f.step));
        let mut w = BufWriter::new(File::create(&sp)?);
        writeln!(w, "elem,qp,s11,s22,s33,s12,s23,s31,eps_hom")?;
        for (e, q, s, eps) in &f.stress {
            writeln!(w, "{e},{q},{:?},{:?},{:?},{:?},{:?},{:?},{eps:?}", s[0], s[1], s[2], s[3], s[4], s[5])?;
        }
        w.flush()?;
        let dp = dir.join(format!("displacement_{:06}.csv", f.step));
        let mut w = BufWriter::new(File::create(&dp)?);
        writeln!(w, "node,ux,uy,uz")?;
        for (id, u) in sim.mesh().node_ids.iter().zip(&f.displacement) {
            writeln!(w, "{id},{:?},{:?},{:?}", u[0], u[1], u[2])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn fe_sim(bundle: &Path, mesh: &Path, micro: &Path, scenario: &Path, out: &Path, restart: Option<&Path>, m: &mut RunManifest) -> Result<()> {
    for p in [bundle, mesh, micro, scenario] {
        m.add_input(p)?;
    }
    let config: SimConfig = read_json(scenario)?;
    m.config_hash = Some(io::sha256_hex(serde_json::to_string(&config)?.as_bytes()));
    let anchors = io::load_bundle(bundle)?;
    let mesh = Mesh::load(mesh)?;
    let field = fe::load_microstructure_field(micro, &mesh)?;
    let nets = fe::instantiate_field(&anchors, &field)?;
    log::info!(
        "{} elements, {} distinct networks, {} extrapolated",
        mesh.n_elems(),
        nets.networks.len(),
        nets.extrapolated
    );
    let mut sim = Simulation::new(mesh, config, &nets.per_element, &nets.vf)?;
    if let Some(r) = restart {
        m.add_input(r)?;
        let snap: SimSnapshot = read_json(r)?;
        sim.restore(&snap)?;
    }
    fs::create_dir_all(out)?;
    let output = sim.run()?;
    write_fe_outputs(out, &sim, &output, m)?;
    let snap = out.join("snapshot.json");
    fs::write(&snap, serde_json::to_string(&sim.snapshot())?)?;
    m.add_output(&snap)?;
    Ok(())
}

fn modulus_surface_cmd(net: &Path, phases: &Path, out: &Path, n_theta: usize, n_phi: usize, m: &mut RunManifest) -> Result<()> {
    m.add_input(net)?;
    m.add_input(phases)?;
    let (net, _) = io::load_network(net)?;
    let phases: Phases = read_json(phases)?;
    let c = net
        .compile()?
        .forward_stiffness(&phases.fiber.elastic_stiffness()?, &phases.matrix.elastic_stiffness()?)?;
    let surface = modulus_surface(&c, n_theta, n_phi)?;
    write_modulus_surface_csv(BufWriter::new(File::create(out)?), &surface)?;
    m.add_output(out)?;
    Ok(())
}

fn run(cli: Cli, m: &mut RunManifest) -> Result<PathBuf> {
    match cli.command {
        Command::GenAnchors {
            teacher_seed,
            out,
            layers,
            samples,
        } => {
            gen_anchors(&out, teacher_seed, layers, samples, m)?;
            Ok(out.join("manifest.json"))
        }
        Command::Train {
            data,
            init,
            config,
            out,
            layers,
        } => {
            train_cmd(&data, &init, config.as_deref(), &out, layers, m)?;
            Ok(manifest_path(&out))
        }
        Command::TransferFit { anchors, out, use_teachers } => {
            let found = collect_anchor_networks(&anchors, use_teachers, m)?;
            let set = fit_anchor_regression(&found)?;
            let wide = set.wide_angle_parameters();
            if !wide.is_empty() {
                log::warn!("{} parameters vary widely across anchors", wide.len());
            }
            io::save_bundle(&out, &set)?;
            m.add_output(&out)?;
            Ok(manifest_path(&out))
        }
        Command::PointSim {
            bundle,
            orientation,
            vf,
            path,
            out,
            phases,
            control,
        } => {
            point_sim(&bundle, &orientation, vf, &path, &out, phases.as_deref(), control, m)?;
            Ok(manifest_path(&out))
        }
        Command::FeSim {
            bundle,
            mesh,
            micro,
            scenario,
            out,
            restart,
        } => {
            fe_sim(&bundle, &mesh, &micro, &scenario, &out, restart.as_deref(), m)?;
            Ok(out.join("manifest.json"))
        }
        Command::ModulusSurface {
            net,
            phases,
            out,
            n_theta,
            n_phi,
        } => {
            modulus_surface_cmd(&net, &phases, &out, n_theta, n_phi, m)?;
            Ok(manifest_path(&out))
        }
        Command::BoxMesh { divisions, lengths, out } => {
            let mesh = Mesh::structured_box(parse_list(&divisions, "divisions")?, parse_list(&lengths, "lengths")?)?;
            fs::write(&out, mesh.to_text())?;
            m.add_output(&out)?;
            Ok(manifest_path(&out))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let mut manifest = RunManifest {
        command: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        ..RunManifest::default()
    };
    let start = Instant::now();
    match run(cli, &mut manifest) {
        Ok(path) => {
            manifest.wall_time_s = start.elapsed().as_secs_f64();
            if let Err(e) = manifest.save(&path) {
                eprintln!("error: writing manifest: {e}");
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}


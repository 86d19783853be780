use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use icbs::desk::{desk_scenario, DeskOptions};
use icbs::error::ScenarioError;
use icbs::harness::{run_experiment, synthesize_rw, RunOptions};
use icbs::histogram::{hellinger, Binning, Histogram};
use icbs::render::pnm;
use icbs::scenario::{NoiseConfig, Scenario};
use icbs::verify::Query;

/// Verify perception hypotheses by rebuilding them in a simulated world.
#[derive(Parser)]
#[command(name = "icbs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the verification loop over a scenario and print the summary.
    Run(RunArgs),
    /// Write the color, depth and mask images of one trajectory tick.
    Render {
        scenario: PathBuf,
        #[arg(long)]
        tick: usize,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Serve the artificial-world protocol on a Unix socket.
    Serve {
        #[arg(long)]
        socket: PathBuf,
        /// Scenario supplying models and map; the built-in desk if omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write snapshot images here and send paths instead of base64.
        #[arg(long)]
        frame_dir: Option<PathBuf>,
    },
    /// Histogram distance between two color images.
    Compare {
        frame_a: PathBuf,
        frame_b: PathBuf,
        /// Region `x,y,width,height`, applied to both images; whole image if omitted.
        #[arg(long, value_parser = parse_roi)]
        roi: Option<[u32; 4]>,
        #[arg(long, default_value_t = 8)]
        bins: u16,
    },
    /// Write the built-in desk scenario as JSON.
    Desk(DeskArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Compare rounds per frame.
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    tau_match: Option<f64>,
    /// Per-hypothesis report.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write real and believed color frames of every tick here.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Args)]
struct DeskArgs {
    #[arg(long, default_value = "desk.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pixel_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    label_corruption: f64,
    #[arg(long, default_value_t = 0.0)]
    flip_rate: f64,
}

fn parse_roi(s: &str) -> Result<[u32; 4], String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected x,y,width,height".to_string())
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(_) | ScenarioError::Model(_) | ScenarioError::Json(_) => Failure::Validation(e.to_string()),
            ScenarioError::Loop(icbs::error::LoopError::InvalidQuery(_)) => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let mut query = Query::default();
    if let Some(l) = args.iterations {
        query.max_iterations = l;
    }
    if let Some(t) = args.tau_match {
        query.tau_match = t;
    }
    if let Some(dir) = &args.dump_frames {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    let options = RunOptions {
        dump_frames: args.dump_frames.as_deref(),
    };
    let report = run_experiment(&scenario, &query, &options)?;
    if let Some(path) = &args.csv {
        write(path, report.to_csv()?)?;
    }
    println!("{}", report.summary_json());
    Ok(())
}

fn render(scenario: &Path, tick: usize, out: &Path) -> Result<(), Failure> {
    let scenario = Scenario::load(scenario)?;
    let library = scenario.validate()?;
    if tick >= scenario.trajectory.len() {
        return Err(Failure::Validation(format!(
            "tick {tick} is past the trajectory ({} poses)",
            scenario.trajectory.len()
        )));
    }
    std::fs::create_dir_all(out).map_err(runtime)?;
    let frame = synthesize_rw(&scenario, &library, tick);
    let stem = format!("{}_{tick:04}", scenario.name);
    for (suffix, bytes) in [
        ("rgb.ppm", pnm::rgb_ppm(&frame)),
        ("depth.pgm", pnm::depth_pgm(&frame)),
        ("mask.pgm", pnm::mask_pgm(&frame)),
    ] {
        let path = out.join(format!("{stem}_{suffix}"));
        write(&path, bytes)?;
        println!("{}", path.display());
    }
    Ok(())
}

#[cfg(unix)]
fn serve(socket: &Path, scenario: Option<&Path>, frame_dir: Option<PathBuf>) -> Result<(), Failure> {
    use std::os::unix::fs::FileTypeExt;
    use std::os::unix::net::UnixListener;

    use icbs::protocol::{serve, Endpoint};
    use icbs::world::ArtificialWorld;

    let scenario = match scenario {
        Some(p) => Scenario::load(p)?,
        None => desk_scenario(&DeskOptions::default()),
    };
    let library = scenario.validate()?;
    let world = ArtificialWorld::new(library, scenario.map.clone(), scenario.intrinsics);
    let mut endpoint = Endpoint::new(world);
    if let Some(dir) = frame_dir {
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        endpoint = endpoint.with_frame_dir(dir);
    }
    // only a stale socket may be replaced, never a regular file
    if let Ok(meta) = std::fs::symlink_metadata(socket) {
        if meta.file_type().is_socket() {
            std::fs::remove_file(socket).map_err(runtime)?;
        }
    }
    let listener = UnixListener::bind(socket).map_err(|e| Failure::Runtime(format!("binding {}: {e}", socket.display())))?;
    eprintln!("listening on {}", socket.display());
    serve(listener, endpoint).map_err(runtime)
}

#[cfg(not(unix))]
fn serve(_: &Path, _: Option<&Path>, _: Option<PathBuf>) -> Result<(), Failure> {
    Err(Failure::Runtime("serving needs Unix domain sockets".into()))
}

fn compare(a: &Path, b: &Path, roi: Option<[u32; 4]>, bins: u16) -> Result<(), Failure> {
    let load = |p: &Path| -> Result<(u32, u32, Vec<[u8; 3]>), Failure> {
        let bytes = std::fs::read(p).map_err(|e| Failure::Runtime(format!("reading {}: {e}", p.display())))?;
        pnm::decode_ppm(&bytes).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))
    };
    if bins == 0 {
        return Err(Failure::Validation("bins must be positive".into()));
    }
    let binning = Binning::rgb(bins);
    let mut hists = Vec::new();
    for path in [a, b] {
        let (w, h, rgb) = load(path)?;
        let [x0, y0, rw, rh] = roi.unwrap_or([0, 0, w, h]);
        if x0.saturating_add(rw) > w || y0.saturating_add(rh) > h {
            return Err(Failure::Validation(format!("roi exceeds the {w}x{h} image {}", path.display())));
        }
        let pixels = (y0..y0 + rh).flat_map(|y| (x0..x0 + rw).map(move |x| (y * w + x) as usize));
        hists.push(Histogram::from_pixels(binning, pixels.map(|i| &rgb[i])));
    }
    let d = hellinger(&hists[0], &hists[1]).map_err(|e| Failure::Validation(e.to_string()))?;
    println!("{d:.6}");
    Ok(())
}

fn desk(args: DeskArgs) -> Result<(), Failure> {
    let scenario = desk_scenario(&DeskOptions {
        frames: args.frames,
        labels: None,
        noise: NoiseConfig {
            pixel_sigma: args.pixel_sigma,
            label_corruption: args.label_corruption,
            flip_rate: args.flip_rate,
            ..NoiseConfig::default()
        },
        seed: args.seed,
    });
    scenario.validate()?;
    write(&args.out, scenario.to_json() + "\n")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Render { scenario, tick, out } => render(&scenario, tick, &out),
        Command::Serve {
            socket,
            scenario,
            frame_dir,
        } => serve(&socket, scenario.as_deref(), frame_dir),
        Command::Compare {
            frame_a,
            frame_b,
            roi,
            bins,
        } => compare(&frame_a, &frame_b, roi, bins),
        Command::Desk(args) => desk(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

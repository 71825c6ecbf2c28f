mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bitfusion::arch::{ArchConfig, ARCH_ENV};
use bitfusion::codegen::network::{reference, CompileOptions, Network, Program};
use bitfusion::codegen::{loop_count, Schedule, Stationarity};
use bitfusion::energy::{account, EnergyTable};
use bitfusion::image::{Manifest, Memory};
use bitfusion::isa::{self, InstructionBlock};
use bitfusion::sim::{run_network, RunReport, SimConfig};
use clap::{Parser, Subcommand, ValueEnum};

use report::{block_rows, summary, to_csv, write_atomic, SweepRow};

#[derive(Parser)]
#[command(name = "bitfusion", version, about = "Bit-flexible DNN accelerator model")]
struct Cli {
    /// Architecture config (TOML). Defaults to $BITFUSION_ARCH, then built-in values.
    #[arg(long, global = true)]
    arch: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct ScheduleArgs {
    /// Override the leading (batch) dimension of the network input.
    #[arg(long)]
    batch: Option<usize>,
    /// Fuse array layers with a following activation or max-pool.
    #[arg(long)]
    fuse: bool,
    /// Emit every layer untiled.
    #[arg(long, conflicts_with = "stationarity")]
    untiled: bool,
    /// Tile every layer with this stationarity.
    #[arg(long, value_parser = parse_stationarity)]
    stationarity: Option<Stationarity>,
}

impl ScheduleArgs {
    fn options(&self) -> CompileOptions {
        let schedule = if self.untiled {
            Some(Schedule::untiled())
        } else {
            self.stationarity.map(Schedule::tiled)
        };
        CompileOptions {
            batch: self.batch,
            fuse: self.fuse,
            schedule,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Bandwidth,
    Batch,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a network file to instruction blocks and a memory image.
    Compile {
        network: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[command(flatten)]
        sched: ScheduleArgs,
    },
    /// Simulate a network file, or block files against a memory image.
    Simulate {
        inputs: Vec<PathBuf>,
        /// Memory image for block files; the manifest is the same path with a .json extension.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        sched: ScheduleArgs,
    },
    /// Simulate a network at several bandwidths or batch sizes.
    Sweep {
        #[arg(value_enum)]
        axis: Axis,
        network: PathBuf,
        /// Comma-separated points. Default: 1/4, 1 and 4 times the arch bandwidth, or batches 1..256.
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        sched: ScheduleArgs,
    },
    /// Assemble text to the binary format.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Disassemble a binary (or reformat text) to assembly.
    Disasm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check block files for structural errors.
    Validate { inputs: Vec<PathBuf> },
}

fn parse_stationarity(s: &str) -> Result<Stationarity, String> {
    Stationarity::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("expected one of output, weight, input; got `{s}`"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let arch = ArchConfig::load(cli.arch.as_deref()).with_context(|| match &cli.arch {
        Some(p) => format!("loading arch config {}", p.display()),
        None => format!("loading arch config from ${ARCH_ENV}"),
    })?;
    match cli.cmd {
        Cmd::Compile { network, out_dir, sched } => compile(&arch, &network, &out_dir, &sched),
        Cmd::Simulate {
            inputs,
            image,
            out_dir,
            sched,
        } => simulate(&arch, &inputs, image.as_deref(), out_dir.as_deref(), &sched),
        Cmd::Sweep {
            axis,
            network,
            values,
            out_dir,
            sched,
        } => sweep(&arch, axis, &network, values, out_dir.as_deref(), &sched),
        Cmd::Asm { input, output } => {
            let blocks = read_blocks(&input)?;
            let out = output.unwrap_or_else(|| input.with_extension("bfis"));
            write_atomic(&out, &isa::encode_blocks(&blocks))
        }
        Cmd::Disasm { input, output } => {
            let text = isa::disassemble(&read_blocks(&input)?);
            match output {
                Some(p) => write_atomic(&p, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Cmd::Validate { inputs } => validate(&inputs),
    }
}

fn read_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Network::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn compile_network(arch: &ArchConfig, path: &Path, opts: &CompileOptions) -> Result<Program> {
    read_network(path)?
        .compile(arch, opts)
        .with_context(|| format!("compiling {}", path.display()))
}

/// Binary files are recognized by their magic; anything else is assembly.
fn read_blocks(path: &Path) -> Result<Vec<InstructionBlock>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(&isa::MAGIC) {
        isa::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
    } else {
        let text = String::from_utf8(bytes).map_err(|_| anyhow!("{}: not assembly text or a block binary", path.display()))?;
        isa::assemble(&text).map_err(|e| anyhow!("{}:{e}", path.display()))
    }
}

fn manifest_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

fn write_image(mem: &Memory, image: &Path) -> Result<()> {
    let (bytes, manifest) = mem.to_image();
    write_atomic(image, &bytes)?;
    write_atomic(&manifest_path(image), manifest.to_json().as_bytes())
}

fn read_image(image: &Path) -> Result<Memory> {
    let mpath = manifest_path(image);
    let text = std::fs::read_to_string(&mpath).with_context(|| format!("reading {}", mpath.display()))?;
    let manifest = Manifest::from_json(&text).with_context(|| format!("in {}", mpath.display()))?;
    let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
    Memory::from_image(&bytes, &manifest).with_context(|| format!("loading {}", image.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn listing(p: &Program) -> String {
    let mut s = String::from("block name op schedule tiles loops instructions\n");
    for (i, l) in p.layers.iter().enumerate() {
        let op = l.block.compute_op().map_or("-", |o| o.name());
        let sched = if l.schedule.tiled {
            l.schedule.stationarity.name()
        } else {
            "untiled"
        };
        let tiles: Vec<String> = l
            .nest
            .dims
            .iter()
            .zip(&l.tiles)
            .map(|(d, t)| format!("{}={t}", d.name))
            .collect();
        let tiles = if tiles.is_empty() { "-".to_string() } else { tiles.join(",") };
        let _ = writeln!(
            s,
            "{i} {} {op} {sched} {tiles} {} {}",
            l.desc.name,
            loop_count(&l.block),
            l.block.instructions.len()
        );
    }
    s
}

fn compile(arch: &ArchConfig, network: &Path, out: &Path, sched: &ScheduleArgs) -> Result<()> {
    let p = compile_network(arch, network, &sched.options())?;
    create_dir(out)?;
    let blocks = p.blocks();
    write_atomic(&out.join("program.bfis"), &isa::encode_blocks(&blocks))?;
    write_atomic(&out.join("program.bfasm"), isa::disassemble(&blocks).as_bytes())?;
    write_image(&p.memory, &out.join("image.bin"))?;
    let list = listing(&p);
    write_atomic(&out.join("listing.txt"), list.as_bytes())?;
    print!("{list}");
    println!("output tensor: {}", p.output);
    Ok(())
}

fn simulate(
    arch: &ArchConfig,
    inputs: &[PathBuf],
    image: Option<&Path>,
    out: Option<&Path>,
    sched: &ScheduleArgs,
) -> Result<()> {
    let cfg = SimConfig::from(arch);
    let table = EnergyTable::for_arch(arch)?;
    let is_network = |p: &PathBuf| p.extension().is_some_and(|e| e == "toml");
    let (report, mem, names, checked) = match inputs {
        [one] if is_network(one) => {
            if image.is_some() {
                bail!("--image applies to block files; a network generates its own image");
            }
            let p = compile_network(arch, one, &sched.options())?;
            let mut mem = p.memory.clone();
            let report = run_network(&p.blocks(), &mut mem, &cfg, p.batch as u64)?;
            let expect = reference(&p.unfused, &p.memory)?;
            for l in &p.layers {
                let name = &l.desc.tensors.output;
                if mem.read_tensor(name)? != expect[name] {
                    bail!("simulated `{name}` differs from the reference model");
                }
            }
            let names = p.layers.iter().map(|l| l.desc.name.clone()).collect();
            (report, mem, names, true)
        }
        _ if inputs.iter().any(is_network) => bail!("give either one network file or block files"),
        _ => {
            let mut mem = match image {
                Some(p) => read_image(p)?,
                None => Memory::new(),
            };
            let mut blocks = Vec::new();
            for p in inputs {
                blocks.extend(read_blocks(p)?);
            }
            let batch = sched.batch.unwrap_or(1) as u64;
            let report = run_network(&blocks, &mut mem, &cfg, batch)?;
            (report, mem, Vec::new(), false)
        }
    };
    let csv = to_csv(&block_rows(&report, &names, &table))?;
    let energy = account(&report, &table);
    let mut text = summary(&report, &energy, arch.frequency_mhz);
    if checked {
        text += "reference       match\n";
    }
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
            write_atomic(&dir.join("summary.txt"), text.as_bytes())?;
            write_image(&mem, &dir.join("result.bin"))?;
        }
        None => println!("{csv}"),
    }
    print!("{text}");
    Ok(())
}

fn sweep_point(
    arch: &ArchConfig,
    net: &Network,
    axis: Axis,
    value: u64,
    sched: &ScheduleArgs,
    table: &EnergyTable,
) -> Result<SweepRow> {
    let mut opts = sched.options();
    let arch = match axis {
        Axis::Bandwidth => arch.with_bandwidth(value),
        Axis::Batch => {
            opts.batch = Some(value as usize);
            arch.clone()
        }
    };
    arch.validate()?;
    let p = net.compile(&arch, &opts)?;
    let mut mem = p.memory.clone();
    let r: RunReport = run_network(&p.blocks(), &mut mem, &SimConfig::from(&arch), p.batch as u64)?;
    Ok(SweepRow {
        axis: match axis {
            Axis::Bandwidth => "bandwidth",
            Axis::Batch => "batch",
        }
        .into(),
        value,
        batch: p.batch as u64,
        bandwidth: arch.bandwidth,
        cycles: r.cycles(),
        offchip_bits: r.total.offchip_bits(),
        weight_bits_per_inference: r.weight_bits_per_inference(),
        energy_pj: account(&r, table).total(),
    })
}

fn sweep(
    arch: &ArchConfig,
    axis: Axis,
    network: &Path,
    mut values: Vec<u64>,
    out: Option<&Path>,
    sched: &ScheduleArgs,
) -> Result<()> {
    let net = read_network(network)?;
    let table = EnergyTable::for_arch(arch)?;
    if values.is_empty() {
        values = match axis {
            Axis::Bandwidth => vec![(arch.bandwidth / 4).max(1), arch.bandwidth, arch.bandwidth * 4],
            Axis::Batch => (0..=8).map(|i| 1u64 << i).collect(),
        };
    }
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let name = match axis {
        Axis::Bandwidth => "bandwidth",
        Axis::Batch => "batch",
    };
    let rows: Vec<Result<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = values
            .iter()
            .map(|&v| {
                let (net, table) = (&net, &table);
                s.spawn(move || -> Result<SweepRow> {
                    let row = sweep_point(arch, net, axis, v, sched, table)
                        .with_context(|| format!("{name} = {v} ({})", network.display()))?;
                    if let Some(dir) = out {
                        let csv = to_csv(std::slice::from_ref(&row))?;
                        write_atomic(&dir.join(format!("sweep-{name}-{v}.csv")), csv.as_bytes())?;
                    }
                    Ok(row)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let csv = to_csv(&rows)?;
    if let Some(dir) = out {
        write_atomic(&dir.join(format!("sweep-{name}.csv")), csv.as_bytes())?;
    }
    print!("{csv}");
    Ok(())
}

fn validate(inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        bail!("no files given");
    }
    let mut bad = 0;
    for path in inputs {
        let blocks = match read_blocks(path) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("{e:#}");
                bad += 1;
                continue;
            }
        };
        for (i, b) in blocks.iter().enumerate() {
            let r = isa::validate(b);
            if r.is_ok() {
                println!("{} block {i}: ok", path.display());
            } else {
                bad += 1;
                eprintln!("{} block {i}:\n{r}", path.display());
            }
        }
    }
    if bad > 0 {
        bail!("{bad} invalid file(s) or block(s)");
    }
    Ok(())
}

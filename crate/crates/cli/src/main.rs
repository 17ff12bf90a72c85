use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;

use rtsabac_bench::endpoint::Passive;
use rtsabac_bench::{compute_metrics, emit_report, format_tables, message_classes, read_reports, run_benchmark};
use rtsabac_bench::{run_topology, TopologyConfig};
use rtsabac_core::dissect::pcap::write_pcap;
use rtsabac_core::dissect::{Dissector, FrameSpec};
use rtsabac_core::policy::text::{format_policy, parse_policies};
use rtsabac_core::policy::Policy;
use rtsabac_core::wire::{CrudOp, CrudStatus, Message};
use rtsabac_services::config::{parse_mac, resolve, NodeConfig};
use rtsabac_services::node::Node;
use rtsabac_services::pasp::LIST_ALL;
use rtsabac_services::{Role, Sockets};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "rtsabac", version, about = "Attribute-based access control for time-critical networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Policy administration and storage point.
    Pasp(ServiceArgs),
    /// Attribute administration and storage point.
    Aasp(ServiceArgs),
    /// Policy decision point.
    Pdp(ServiceArgs),
    /// Decision enforcement point.
    Dep(ServiceArgs),
    /// Policy CRUD against a running PASP.
    Policy {
        #[command(subcommand)]
        op: PolicyOp,
    },
    /// Frame construction.
    Frame {
        #[command(subcommand)]
        op: FrameOp,
    },
    /// RTT benchmarks.
    Bench {
        #[command(subcommand)]
        op: BenchOp,
    },
}

#[derive(Args)]
struct ServiceArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct PaspTarget {
    /// PASP control address.
    #[arg(long)]
    pasp: String,
    /// PASP identity used for envelope addressing.
    #[arg(long, default_value = "pasp")]
    pasp_id: String,
    /// Client identity and keys; without it the client is "admin" on noop.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PolicyOp {
    /// Creates every policy in the file.
    Create {
        #[command(flatten)]
        target: PaspTarget,
        #[arg(long)]
        file: PathBuf,
    },
    /// Prints one policy.
    Read {
        #[command(flatten)]
        target: PaspTarget,
        #[arg(long)]
        id: String,
    },
    /// Replaces every policy in the file.
    Update {
        #[command(flatten)]
        target: PaspTarget,
        #[arg(long)]
        file: PathBuf,
    },
    /// Deletes by id, or every policy named in the file.
    Delete {
        #[command(flatten)]
        target: PaspTarget,
        #[arg(long, required_unless_present = "file")]
        id: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Lists policy ids.
    List {
        #[command(flatten)]
        target: PaspTarget,
        /// Print full policies instead of ids.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Subcommand)]
enum FrameOp {
    /// Builds a frame and prints it as hex.
    Build(FrameArgs),
}

#[derive(Args)]
struct FrameArgs {
    /// DST,SRC MAC addresses.
    #[arg(long, value_delimiter = ',', required = true)]
    eth: Vec<String>,
    /// PCP,VID of an 802.1Q tag.
    #[arg(long, value_delimiter = ',')]
    vlan: Option<Vec<u16>>,
    /// SRC,DST IPv4 addresses.
    #[arg(long, value_delimiter = ',')]
    ipv4: Option<Vec<Ipv4Addr>>,
    /// SRC,DST ports.
    #[arg(long, value_delimiter = ',', conflicts_with = "tcp")]
    udp: Option<Vec<u16>>,
    /// SRC,DST ports.
    #[arg(long, value_delimiter = ',')]
    tcp: Option<Vec<u16>>,
    #[arg(long, default_value_t = 0x02)]
    tcp_flags: u8,
    #[arg(long, conflicts_with = "sv")]
    goose: Option<u16>,
    #[arg(long)]
    sv: Option<u16>,
    /// Payload bytes as hex.
    #[arg(long, default_value = "")]
    payload: String,
    /// Writes a one-frame pcap file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sends the frame as one datagram, e.g. to a DEP device socket.
    #[arg(long)]
    send: Option<String>,
    /// Prints the dissected access request.
    #[arg(long)]
    dissect: bool,
}

#[derive(Subcommand)]
enum BenchOp {
    /// One benchmark entity.
    Run(RunArgs),
    /// Full local testbed described by a config file.
    Topo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Prints the tables for every report in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "passive", required_unless_present = "passive")]
    active: bool,
    #[arg(long)]
    passive: bool,
    /// Where the active entity sends probes: the passive entity in direct
    /// mode, otherwise its DEP's device socket.
    #[arg(long, required_unless_present = "passive")]
    peer: Option<String>,
    /// Local address to bind.
    #[arg(long, default_value = "0.0.0.0:0")]
    bind: String,
    #[arg(long, default_value_t = 5000)]
    n: u32,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline run without DEPs in the path.
    #[arg(long)]
    direct: bool,
    /// Row label in the report.
    #[arg(long)]
    label: Option<String>,
}

fn wait_for_interrupt() -> Result<()> {
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })?;
    let _ = rx.recv();
    Ok(())
}

fn service(role: Role, args: &ServiceArgs) -> Result<()> {
    let cfg = NodeConfig::load(&args.config)?;
    let sockets = Sockets::bind(&cfg)?;
    let handle = rtsabac_services::start(role, cfg, sockets)?;
    wait_for_interrupt()?;
    let metrics = handle.shutdown();
    println!("{metrics}");
    Ok(())
}

struct Client {
    node: Node,
    to: String,
    addr: SocketAddr,
}

impl Client {
    fn new(t: &PaspTarget) -> Result<Client> {
        let cfg = match &t.config {
            Some(p) => NodeConfig::load(p)?,
            None => NodeConfig::new("admin"),
        };
        Ok(Client { node: Node::new(&cfg)?, to: t.pasp_id.clone(), addr: resolve(&t.pasp)? })
    }

    fn crud(&self, op: CrudOp, id: &str, policy: Option<Policy>) -> Result<(CrudStatus, u64, Option<Policy>, Vec<String>)> {
        let msg = Message::PolicyCrudRequest { op, id: id.to_string(), policy };
        match self.node.request(&self.to, self.addr, msg)?.message {
            Message::PolicyCrudResponse { status, revision, policy, details } => Ok((status, revision, policy, details)),
            other => Err(format!("unexpected reply {}", other.message_type().name()).into()),
        }
    }
}

fn report(op: CrudOp, id: &str, status: CrudStatus, revision: u64, details: &[String]) -> bool {
    println!("{} {id}: {status:?} revision={revision}", op.name());
    for d in details {
        println!("  {d}");
    }
    status == CrudStatus::Ok
}

fn load_policies(path: &Path) -> Result<Vec<Policy>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_policies(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn policy(op: &PolicyOp) -> Result<bool> {
    let mut ok = true;
    match op {
        PolicyOp::Create { target, file } | PolicyOp::Update { target, file } => {
            let crud = if matches!(op, PolicyOp::Create { .. }) { CrudOp::Create } else { CrudOp::Update };
            let c = Client::new(target)?;
            for p in load_policies(file)? {
                let id = p.id.clone();
                let (status, rev, _, details) = c.crud(crud, &id, Some(p))?;
                ok &= report(crud, &id, status, rev, &details);
            }
        }
        PolicyOp::Read { target, id } => {
            let (status, rev, p, details) = Client::new(target)?.crud(CrudOp::Read, id, None)?;
            ok = report(CrudOp::Read, id, status, rev, &details);
            if let Some(p) = p {
                print!("{}", format_policy(&p));
            }
        }
        PolicyOp::Delete { target, id, file } => {
            let c = Client::new(target)?;
            let ids = match (id, file) {
                (Some(id), _) => vec![id.clone()],
                (None, Some(f)) => load_policies(f)?.into_iter().map(|p| p.id).collect(),
                (None, None) => unreachable!("clap requires one"),
            };
            for id in ids {
                let (status, rev, _, details) = c.crud(CrudOp::Delete, &id, None)?;
                ok &= report(CrudOp::Delete, &id, status, rev, &details);
            }
        }
        PolicyOp::List { target, full } => {
            let c = Client::new(target)?;
            let (status, rev, _, ids) = c.crud(CrudOp::Read, LIST_ALL, None)?;
            if status != CrudStatus::Ok {
                return Ok(report(CrudOp::Read, LIST_ALL, status, rev, &ids));
            }
            println!("revision={rev}");
            for id in ids {
                match c.crud(CrudOp::Read, &id, None)? {
                    (CrudStatus::Ok, _, Some(p), _) if *full => println!("{}", format_policy(&p)),
                    _ => println!("{id}"),
                }
            }
        }
    }
    Ok(ok)
}

fn mac(s: &str) -> Result<[u8; 6]> {
    Ok(parse_mac(s).ok_or_else(|| format!("bad MAC address '{s}'"))?)
}

fn pair<T: Copy>(flag: &str, v: &Option<Vec<T>>) -> Result<Option<(T, T)>> {
    match v.as_deref() {
        None => Ok(None),
        Some([a, b]) => Ok(Some((*a, *b))),
        Some(_) => Err(format!("--{flag} takes two comma-separated values").into()),
    }
}

fn frame(args: &FrameArgs) -> Result<()> {
    let [dst, src] = args.eth.as_slice() else { return Err("--eth takes DST,SRC".into()) };
    let mut spec = FrameSpec::new().eth(mac(dst)?, mac(src)?);
    if let Some((pcp, vid)) = pair("vlan", &args.vlan)? {
        spec = spec.vlan(u8::try_from(pcp)?, vid);
    }
    if let Some((s, d)) = pair("ipv4", &args.ipv4)? {
        spec = spec.ipv4(s, d);
    }
    if let Some((s, d)) = pair("udp", &args.udp)? {
        spec = spec.udp(s, d);
    }
    if let Some((s, d)) = pair("tcp", &args.tcp)? {
        spec = spec.tcp(s, d, args.tcp_flags);
    }
    if let Some(a) = args.goose {
        spec = spec.goose(a);
    }
    if let Some(a) = args.sv {
        spec = spec.sv(a);
    }
    let bytes = spec.payload(hex::decode(&args.payload)?).build();
    println!("{}", hex::encode(&bytes));
    if args.dissect {
        println!("{}", Dissector::default().dissect(&bytes)?);
    }
    if let Some(path) = &args.out {
        std::fs::write(path, write_pcap(&[bytes.clone()]))?;
    }
    if let Some(to) = &args.send {
        UdpSocket::bind("0.0.0.0:0")?.send_to(&bytes, resolve(to)?)?;
    }
    Ok(())
}

fn finish(label: &str, run: &rtsabac_bench::BenchRun, out: Option<&Path>) -> Result<()> {
    if let Some(e) = &run.aborted {
        eprintln!("aborted after {} probes: {e}", run.attempted());
    }
    println!("samples={} timeouts={} elapsed_s={:.3}", run.samples.len(), run.timeouts.len(), run.elapsed_s);
    let Ok(report) = compute_metrics(label, &run.samples, run.timeouts.len(), run.elapsed_s, &message_classes()) else {
        println!("no samples");
        return Ok(());
    };
    if let Some(dir) = out {
        let (csv, json) = emit_report(dir, &report, &run.samples)?;
        info!("event=report csv={} json={}", csv.display(), json.display());
    }
    print!("{}", format_tables(&[report]));
    Ok(())
}

fn bench(op: &BenchOp) -> Result<()> {
    match op {
        BenchOp::Run(a) if a.passive => {
            let passive = Passive::spawn(UdpSocket::bind(&a.bind)?)?;
            println!("passive echo on {}", passive.addr);
            wait_for_interrupt()?;
            let stats = passive.stop();
            println!("echoed={:?} max_in_flight={:?}", stats.echoed, stats.max_in_flight);
        }
        BenchOp::Run(a) => {
            let socket = UdpSocket::bind(&a.bind)?;
            let peer = resolve(a.peer.as_deref().expect("clap requires --peer"))?;
            let run = run_benchmark(&socket, peer, a.n, Duration::from_millis(a.timeout_ms));
            let label = a.label.clone().unwrap_or_else(|| if a.direct { "None".into() } else { "RTS-ABAC".into() });
            finish(&label, &run, a.out.as_deref())?;
        }
        BenchOp::Topo { config } => {
            let cfg = TopologyConfig::load(config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let t = run_topology(&cfg, base)?;
            let run = t.run(cfg.n, Duration::from_millis(cfg.timeout_ms));
            let out = cfg.out.as_ref().map(|o| base.join(o));
            let metrics = t.shutdown();
            finish(&cfg.scheme()?.name().to_string(), &run, out.as_deref())?;
            for (id, m) in metrics.services {
                println!("{id}: {m}");
            }
        }
        BenchOp::Report { input } => print!("{}", format_tables(&read_reports(input)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pasp(a) => service(Role::Pasp, a).map(|_| true),
        Command::Aasp(a) => service(Role::Aasp, a).map(|_| true),
        Command::Pdp(a) => service(Role::Pdp, a).map(|_| true),
        Command::Dep(a) => service(Role::Dep, a).map(|_| true),
        Command::Policy { op } => policy(op),
        Command::Frame { op: FrameOp::Build(a) } => frame(a).map(|_| true),
        Command::Bench { op } => bench(op).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

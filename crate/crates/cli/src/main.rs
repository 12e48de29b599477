//! `spotkd` command-line driver.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spotkd::analysis::{
    bit_mismatch_sweep, eavesdrop_sweep, noise_failure_study, search_space, trial_rng, BitMismatchRow, EavesdropRow,
    DEFAULT_PRECISION_BITS,
};
use spotkd::config::LabConfig;
use spotkd::ecc::{effective_key, SyndromeDecoder};
use spotkd::protocol::{
    broadcast_after_wait, exchange_between_users, user_generate, user_generate_with_crc, DeltaTDistribution,
    ExchangeParams, KeySource, KeyString, MessageBody, PublicChannel, ServerRegistry, SimClock, HOUR,
};
use spotkd::randomness::{pass_percentage_sweep, pass_rows_to_csv};
use spotkd::timer_model::AdcConfig;
use spotkd::Error;

use output::Outputs;

#[derive(Parser, Debug)]
#[command(name = "spotkd", version, about = "Self-powered timer key distribution lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for CSV/JSON outputs and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML configuration file. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Key ADC resolution(s) in bits, comma separated.
    #[arg(long, value_delimiter = ',')]
    adc_bits: Vec<u32>,
    /// Hash timers per key (G).
    #[arg(long)]
    hash_timers: Option<usize>,
    /// Key timers per key (N).
    #[arg(long)]
    key_timers: Option<usize>,
    /// Use CRC reconciliation (exchange) or add reconciled rows (noise).
    #[arg(long)]
    ecc: bool,
    /// Trials or keys per sweep point.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run protocol 1 and protocol 2 end to end on noiseless chipsets.
    Exchange {
        #[command(flatten)]
        common: Common,
        /// Print the full message-by-message transcript.
        #[arg(long)]
        demo: bool,
        /// Timers per fabricated chipset (C).
        #[arg(long)]
        capacity: Option<usize>,
        /// Fixed wait before broadcasting, in hours.
        #[arg(long)]
        delta_t_hours: Option<f64>,
    },
    /// Pass percentage of the randomness battery per key ADC resolution.
    Randomness {
        #[command(flatten)]
        common: Common,
        /// Significance level.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Attacker entropy for each ADC resolution and wait period.
    Eavesdrop {
        #[command(flatten)]
        common: Common,
        /// Wait periods in hours, comma separated.
        #[arg(long, value_delimiter = ',')]
        delta_t_hours: Vec<f64>,
    },
    /// Per-bit mismatch probability of the attacker's key.
    BitMismatch {
        #[command(flatten)]
        common: Common,
        /// Wait periods in hours, comma separated.
        #[arg(long, value_delimiter = ',')]
        delta_t_hours: Vec<f64>,
    },
    /// Key failure rate under additive Gaussian readout noise.
    Noise {
        #[command(flatten)]
        common: Common,
        /// SNR values in dB, comma separated; `inf` disables noise.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_db: Vec<f64>,
        /// Groups used to estimate the failure variance.
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Brute-force search space and chip bound.
    SearchSpace {
        #[command(flatten)]
        common: Common,
        /// Bits of precision per timer parameter.
        #[arg(long, default_value_t = DEFAULT_PRECISION_BITS)]
        precision_bits: u64,
        /// Sample counts J to evaluate, comma separated.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<u128>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(Outputs, String), Failure>;

fn single_adc(bits: &[u32], what: &str) -> Result<Option<u32>, Failure> {
    match bits {
        [] => Ok(None),
        [b] => Ok(Some(*b)),
        _ => Err(Failure::Config(format!("{what} takes a single --adc-bits value"))),
    }
}

fn load_config(common: &Common) -> Result<LabConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => LabConfig::load(path)?,
        None => LabConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(g) = common.hash_timers {
        cfg.setup.hash_timers = g;
    }
    if let Some(n) = common.key_timers {
        cfg.setup.key_timers = n;
    }
    Ok(cfg)
}

fn apply(cmd: &Command, cfg: &mut LabConfig) -> Result<(), Failure> {
    let c = common(cmd);
    let bits = &c.adc_bits;
    match cmd {
        Command::Exchange {
            capacity,
            delta_t_hours,
            ..
        } => {
            if let Some(b) = single_adc(bits, "exchange")? {
                cfg.exchange.key_adc_bits = b;
            }
            if let Some(cap) = capacity {
                cfg.exchange.capacity = *cap;
            }
            if let Some(h) = delta_t_hours {
                cfg.exchange.delta_t = DeltaTDistribution::Fixed { seconds: h * HOUR };
            }
            cfg.exchange.ecc |= c.ecc;
        }
        Command::Randomness { alpha, .. } => {
            if !bits.is_empty() {
                cfg.randomness.adc_bits = bits.clone();
            }
            if let Some(k) = c.trials {
                cfg.randomness.keys = k;
            }
            if let Some(a) = alpha {
                cfg.randomness.alpha = *a;
            }
        }
        Command::Eavesdrop { delta_t_hours, .. } => {
            if !bits.is_empty() {
                cfg.eavesdrop.adc_bits = bits.clone();
            }
            if !delta_t_hours.is_empty() {
                cfg.eavesdrop.delta_t_hours = delta_t_hours.clone();
            }
            if let Some(k) = c.trials {
                cfg.eavesdrop.trials = k;
            }
        }
        Command::BitMismatch { delta_t_hours, .. } => {
            if let Some(b) = single_adc(bits, "bit-mismatch")? {
                cfg.bit_mismatch.adc_bits = b;
            }
            if !delta_t_hours.is_empty() {
                cfg.bit_mismatch.delta_t_hours = delta_t_hours.clone();
            }
            if let Some(k) = c.trials {
                cfg.bit_mismatch.trials = k;
            }
        }
        Command::Noise {
            snr_db, repetitions, ..
        } => {
            if !bits.is_empty() {
                cfg.noise.adc_bits = bits.clone();
            }
            if !snr_db.is_empty() {
                cfg.noise.snr_db = snr_db.clone();
            }
            if let Some(r) = repetitions {
                cfg.noise.repetitions = *r;
            }
            if let Some(k) = c.trials {
                cfg.noise.trials = k;
            }
            cfg.noise.ecc |= c.ecc;
        }
        Command::SearchSpace { precision_bits, .. } => {
            if *precision_bits == 0 {
                return Err(Failure::Config("--precision-bits must be >= 1".into()));
            }
        }
    }
    cfg.validate()?;
    Ok(())
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Exchange { common, .. }
        | Command::Randomness { common, .. }
        | Command::Eavesdrop { common, .. }
        | Command::BitMismatch { common, .. }
        | Command::Noise { common, .. }
        | Command::SearchSpace { common, .. } => common,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Exchange { .. } => "exchange",
        Command::Randomness { .. } => "randomness",
        Command::Eavesdrop { .. } => "eavesdrop",
        Command::BitMismatch { .. } => "bit_mismatch",
        Command::Noise { .. } => "noise",
        Command::SearchSpace { .. } => "search_space",
    }
}

fn cmd_exchange(cfg: &LabConfig, demo: bool) -> CmdResult {
    let ex = &cfg.exchange;
    let (g, n) = (cfg.setup.hash_timers, cfg.setup.key_timers);
    let adc = AdcConfig::new(ex.key_adc_bits, cfg.setup.full_scale)?;
    let mut rng = trial_rng(cfg.seed, 0);

    let mut server = ServerRegistry::new();
    for id in ["lot-a", "lot-b", "lot-c"] {
        server.register(id, cfg.setup.ranges.sample_many(ex.capacity, &mut rng), adc)?;
    }
    let clock = SimClock::new(ex.start_time);
    let channel = PublicChannel::new();
    let mut server_inbox = channel.subscribe();

    // Protocol 1: alice and the server.
    let mut chip_a = server.replica("lot-a")?;
    let t = clock.now();
    let (k_user, req) = if ex.ecc {
        user_generate_with_crc(&mut chip_a, "alice", g, &cfg.ecc, t, &mut rng)?
    } else {
        user_generate(&mut chip_a, "alice", g, n, t, &mut rng)?
    };
    broadcast_after_wait(&channel, &req, ex.delta_t.sample(&mut rng), &clock)?;
    let seen = server_inbox
        .poll(&clock)
        .into_iter()
        .find_map(|m| match m.body {
            MessageBody::KeyRequest(r) => Some(r),
            MessageBody::Ciphertext { .. } => None,
        })
        .ok_or_else(|| Failure::Runtime("server saw no request".into()))?;
    let (user_eff, server_eff) = if ex.ecc {
        let decoder = SyndromeDecoder::new(cfg.ecc)?;
        let k_server = server.server_derive_reconciled(&seen, &decoder)?;
        (
            effective_key(k_user.bits(), &cfg.ecc)?,
            effective_key(k_server.bits(), &cfg.ecc)?,
        )
    } else {
        let k_server = server.server_derive(&seen)?;
        (k_user.bits().to_vec(), k_server.bits().to_vec())
    };
    let p1_match = user_eff == server_eff;
    let fp = |bits: &[u8]| KeyString::new(bits.to_vec(), 0.0, KeySource::UserMeasured).map(|k| k.fingerprint());
    let p1_messages = channel.transcript();

    // Protocol 2: bob and carol through the server.
    let mut chip_b = server.replica("lot-b")?;
    let mut chip_c = server.replica("lot-c")?;
    let params = ExchangeParams {
        hash_timers: g,
        key_timers: n,
        delta_t: ex.delta_t,
    };
    let outcome = exchange_between_users(
        &server,
        ("bob", &mut chip_b),
        ("carol", &mut chip_c),
        &params,
        &channel,
        &clock,
        &mut rng,
    )?;
    let p2_match = outcome.keys_agree();
    let p2_messages = channel.transcript()[p1_messages.len()..].to_vec();

    let transcript = json!({
        "version": output::VERSION,
        "seed": cfg.seed,
        "protocol_1": {
            "user": "alice",
            "chipset": "lot-a",
            "messages": p1_messages,
            "ecc": ex.ecc,
            "key_bits": user_eff.len(),
            "user_key_fingerprint": fp(&user_eff)?,
            "server_key_fingerprint": fp(&server_eff)?,
            "keys_match": p1_match,
        },
        "protocol_2": {
            "users": ["bob", "carol"],
            "messages": p2_messages,
            "k_a_fingerprint": outcome.session.k_a().fingerprint(),
            "k_b_fingerprint": outcome.session.k_b().fingerprint(),
            "k_r_fingerprint_server": outcome.session.k_r().fingerprint(),
            "k_r_fingerprint_bob": outcome.k_r_a.fingerprint(),
            "k_r_fingerprint_carol": outcome.k_r_b.fingerprint(),
            "keys_match": p2_match,
        },
        "final_time": clock.now(),
    });
    if !p1_match || !p2_match {
        return Err(Failure::Runtime(format!(
            "key mismatch (protocol 1: {p1_match}, protocol 2: {p2_match})"
        )));
    }
    let pretty = serde_json::to_string_pretty(&transcript).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut out = Outputs::default();
    out.add("exchange_transcript.json", pretty.clone());
    let stdout = if demo {
        pretty
    } else {
        format!(
            "protocol 1: K_user = K_server ({})\nprotocol 2: K_R identical at both users ({})",
            fp(&user_eff)?,
            outcome.session.k_r().fingerprint()
        )
    };
    Ok((out, stdout))
}

fn cmd_randomness(cfg: &LabConfig) -> CmdResult {
    let r = &cfg.randomness;
    let rows = pass_percentage_sweep(&cfg.setup, &r.adc_bits, r.keys, r.alpha, cfg.seed)?;
    let csv = pass_rows_to_csv(&rows);
    let mut out = Outputs::default();
    out.add("randomness.csv", csv.clone());
    Ok((out, csv))
}

fn cmd_eavesdrop(cfg: &LabConfig) -> CmdResult {
    let e = &cfg.eavesdrop;
    let rows = eavesdrop_sweep(&cfg.setup, &e.adc_bits, &e.delta_t_hours, e.trials, cfg.seed)?;
    let csv = EavesdropRow::to_csv(&rows);
    let mut out = Outputs::default();
    out.add("eavesdrop.csv", csv.clone());
    Ok((out, csv))
}

fn cmd_bit_mismatch(cfg: &LabConfig) -> CmdResult {
    let b = &cfg.bit_mismatch;
    let rows = bit_mismatch_sweep(&cfg.setup, b.adc_bits, &b.delta_t_hours, b.trials, cfg.seed)?;
    let csv = BitMismatchRow::to_csv(&rows);
    let mut out = Outputs::default();
    out.add("bit_mismatch.csv", csv);
    Ok((out, format!("{} rows", rows.len())))
}

fn cmd_noise(cfg: &LabConfig) -> CmdResult {
    let study = noise_failure_study(&cfg.noise_study(), cfg.seed)?;
    let csv = study.to_csv();
    let mut out = Outputs::default();
    out.add("noise.csv", csv.clone());
    Ok((out, csv))
}

fn cmd_search_space(cfg: &LabConfig, precision_bits: u64, samples: &[u128]) -> CmdResult {
    let r = search_space(cfg.setup.hash_timers as u64, precision_bits);
    let after: Vec<_> = samples
        .iter()
        .map(|&j| json!({ "samples": j.to_string(), "exponent": r.after_samples(j).to_string() }))
        .collect();
    let mut text = format!(
        "G = {}, R = 2^{}\np_total = {}\nsearch space = 2^{}\nchip bound: C_total < {} (at most {} chips)\n",
        r.hash_timers,
        r.precision_bits,
        r.p_total,
        r.sp_exponent,
        r.c_total_bound,
        r.max_chips()
    );
    for &j in samples {
        text += &format!("after {j} samples: 2^{}\n", r.after_samples(j));
    }
    let report = json!({
        "hash_timers": r.hash_timers,
        "precision_bits": r.precision_bits,
        "p_total": r.p_total.to_string(),
        "sp_exponent": r.sp_exponent.to_string(),
        "c_total_bound": r.c_total_bound.to_string(),
        "max_chips": r.max_chips().to_string(),
        "after_samples": after,
    });
    let mut out = Outputs::default();
    out.add(
        "search_space.json",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?,
    );
    Ok((out, text.trim_end().to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cmd = &cli.command;
    let mut cfg = load_config(common(cmd))?;
    apply(cmd, &mut cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;

    let (outputs, stdout) = pool.install(|| match cmd {
        Command::Exchange { demo, .. } => cmd_exchange(&cfg, *demo),
        Command::Randomness { .. } => cmd_randomness(&cfg),
        Command::Eavesdrop { .. } => cmd_eavesdrop(&cfg),
        Command::BitMismatch { .. } => cmd_bit_mismatch(&cfg),
        Command::Noise { .. } => cmd_noise(&cfg),
        Command::SearchSpace {
            precision_bits,
            samples,
            ..
        } => cmd_search_space(&cfg, *precision_bits, samples),
    })?;
    let written = outputs.commit(&common(cmd).out, name(cmd), &cfg)?;
    println!("{stdout}");
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("spotkd: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("spotkd: {msg}");
            ExitCode::from(3)
        }
    }
}

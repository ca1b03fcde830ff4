use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use neuroheed::data::{build_corpus, Corpus, Split, MANIFEST};
use neuroheed::dsp::AUDIO_RATE;
use neuroheed::eval::{evaluate, EvalMode, EvalReport};
use neuroheed::model::{load_checkpoint, Model};
use neuroheed::numerics::fault::Fault;
use neuroheed::training::{Trainer, TrainMode};
use neuroheed::verify::{run_verify, VerifyOptions};
use serde::Serialize;

use crate::config::{env_overrides, fingerprint, parse_assignment, resolve, Resolved, RunConfig};
use crate::wav::write_wav16;
use crate::{Cli, Command, EvalArgs, FaultArg, InferArgs, Mode, SynthArgs, TrainArgs, VerifyArgs, EXIT_OK, EXIT_VERIFY};

pub const RUN_FILE: &str = "run.json";

/// Provenance written next to every config snapshot.
#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    train_seed: u64,
    corpus_seed: u64,
    fingerprint: String,
    threads: usize,
}

fn write_run_info(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    cfg.write_snapshot(dir)?;
    let info = RunInfo {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        train_seed: cfg.train.seed,
        corpus_seed: cfg.corpus.seed,
        fingerprint: fingerprint(cfg),
        threads: rayon::current_num_threads(),
    };
    let path = dir.join(RUN_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&info)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Resolves the configuration for `cli` from its file, the process
/// environment and `--set` flags.
pub fn resolve_cli(cli: &Cli) -> Result<Resolved> {
    let env = env_overrides(std::env::vars());
    let sets = cli.sets.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>>>()?;
    resolve(cli.config.as_deref(), &env, &sets)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    if let Command::Eval(a) = &cli.command {
        return cmd_eval(a);
    }
    let resolved = resolve_cli(cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&resolved.config, a),
        Command::Train(a) => cmd_train(resolved.config, a),
        Command::Infer(a) => cmd_infer(&resolved, a),
        Command::Verify(a) => cmd_verify(a),
        Command::Eval(_) => unreachable!("handled above"),
    }
}

fn corpus_dir(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.out_dir.join("corpus"))
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

pub fn cmd_synth(cfg: &RunConfig, a: &SynthArgs) -> Result<i32> {
    let dir = corpus_dir(cfg, &a.out);
    if is_nonempty_dir(&dir) {
        if !a.force {
            bail!("{} exists and is not empty (use --force to replace it)", dir.display());
        }
        std::fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    let records = build_corpus(&cfg.corpus, &dir)?;
    write_run_info(&dir, "synth", cfg)?;
    info!("{} examples written", records.len());
    println!("{}", dir.join(MANIFEST).display());
    Ok(EXIT_OK)
}

pub fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> Result<i32> {
    let mode = match a.mode {
        Mode::Offline => TrainMode::Offline,
        Mode::Online => TrainMode::Online,
    };
    cfg.train.mode = mode;
    if let Some(n) = a.max_steps {
        cfg.train.max_steps = Some(n);
    }
    if let Some(s) = a.max_seconds {
        cfg.train.max_seconds = Some(s);
    }
    let run_dir = a
        .run_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("train-{}", if mode == TrainMode::Online { "online" } else { "offline" })));
    let corpus = Corpus::open(&corpus_dir(&cfg, &a.corpus))?;
    let train = corpus.load_split(Split::Train)?;
    let val = corpus.load_split(Split::Val)?;

    let mut trainer = match &a.resume {
        Some(ck) => {
            let mut t = Trainer::resume(ck)?;
            t.cfg.max_steps = cfg.train.max_steps;
            t.cfg.max_seconds = cfg.train.max_seconds;
            cfg.model = t.model.config.clone();
            cfg.train = t.cfg.clone();
            t
        }
        None => {
            let mut t = Trainer::new(Model::new(cfg.model.clone(), cfg.seed)?, cfg.train.clone())?;
            if let Some(ws) = &a.warm_start {
                t.warm_start(ws)?;
            }
            t
        }
    };
    write_run_info(&run_dir, "train", &cfg)?;
    trainer = trainer.with_run_dir(&run_dir)?;
    let summary = trainer.run(&train, &val)?;
    let path = run_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    info!("stopped after {} steps ({})", summary.steps, summary.stop_reason);
    println!("{}", run_dir.join(neuroheed::training::CKPT_DIR).join("last.ckpt").display());
    Ok(EXIT_OK)
}

fn split_named(name: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| anyhow!(neuroheed::Error::Config(format!("unknown split '{name}'"))))
}

pub fn cmd_infer(resolved: &Resolved, a: &InferArgs) -> Result<i32> {
    let mut cfg = resolved.config.clone();
    let ck = load_checkpoint(&a.checkpoint)?;
    if resolved.model_explicit {
        if ck.config.extractor != cfg.model.extractor {
            bail!(neuroheed::Error::Config(format!(
                "checkpoint {} holds a {} extractor but the configuration asks for {}",
                a.checkpoint.display(),
                ck.config.extractor.name(),
                cfg.model.extractor.name()
            )));
        }
        if ck.config != cfg.model {
            bail!(neuroheed::Error::Config(format!(
                "checkpoint {} was trained with a different model configuration",
                a.checkpoint.display()
            )));
        }
    }
    cfg.model = ck.config.clone();
    let model = Model {
        config: ck.config,
        params: ck.params,
    };

    if let Some(wb) = a.wb {
        cfg.stream.w_b = wb;
    }
    if let Some(wc) = a.wc {
        cfg.stream.w_c = wc;
    }
    if a.no_inf_norm {
        cfg.stream.normalize = false;
    }
    if a.no_init {
        cfg.stream.init_seconds = None;
    }
    if a.no_speaker_encoder {
        cfg.stream.speaker_encoder = false;
    }
    cfg.validate()?;

    let (mode, tag) = match a.mode {
        Mode::Offline => (EvalMode::Offline, "offline"),
        Mode::Online => (EvalMode::Online, "online"),
    };
    let ck_digest = fingerprint(&std::fs::read(&a.checkpoint)?);
    let fp = match mode {
        EvalMode::Offline => fingerprint(&(tag, &ck_digest)),
        EvalMode::Online => fingerprint(&(tag, &ck_digest, &cfg.stream)),
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("infer"))
        .join(format!("{tag}-{fp}"));

    let corpus = Corpus::open(&corpus_dir(&cfg, &a.corpus))?;
    let mut examples = corpus.load_split(split_named(&cfg.eval.split)?)?;
    if let Some(n) = cfg.eval.limit {
        examples.truncate(n);
    }
    let (report, outputs) = evaluate(&model, &examples, mode, &cfg.stream, &fp)?;
    write_run_info(&out, "infer", &cfg)?;
    report.write(&out)?;
    if !a.no_wav {
        let wav_dir = out.join("wav");
        std::fs::create_dir_all(&wav_dir)?;
        for (ex, y) in examples.iter().zip(&outputs) {
            write_wav16(&wav_dir.join(format!("{}.wav", ex.id)), y, AUDIO_RATE)?;
        }
    }
    print_summary(&out, &report);
    println!("{}", out.display());
    Ok(EXIT_OK)
}

fn print_summary(dir: &Path, r: &EvalReport) {
    let s = &r.summary;
    let mean = |m: &neuroheed::eval::MeanStat| m.mean.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    eprintln!(
        "{}: {} utterances, SI-SDRi {} dB, SDRi {} dB, PPR {}",
        dir.display(),
        s.count,
        mean(&s.si_sdri),
        mean(&s.sdri_plain),
        s.ppr.map_or("n/a".to_string(), |p| format!("{p:.1}%")),
    );
    if let Some(rtf) = &s.rtf {
        eprintln!(
            "  rtf {:.2}, chunk latency mean {:.1} ms, p95 {:.1} ms, max {:.1} ms (budget {:.0} ms)",
            rtf.rtf, rtf.mean_latency_ms, rtf.p95_latency_ms, rtf.max_latency_ms, rtf.budget_ms
        );
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let mut all = Vec::new();
    for dir in &a.reports {
        let r = EvalReport::read(dir)?;
        if !a.json {
            print_summary(dir, &r);
        }
        all.push((dir.display().to_string(), r.summary));
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&all)?);
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let opts = VerifyOptions {
        grad_points: a.points,
        equivalence_utterances: a.utterances,
        fault: a.fault.map(|f| match f {
            FaultArg::ClnLookahead => Fault::ClnLookahead,
        }),
        only: a.only.clone(),
        ..VerifyOptions::default()
    };
    let report = run_verify(&opts);
    print!("{}", report.to_text());
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        let names: Vec<_> = report.failures().iter().map(|c| c.name.as_str()).collect();
        eprintln!("verification failed: {}", names.join(", "));
        Ok(EXIT_VERIFY)
    }
}

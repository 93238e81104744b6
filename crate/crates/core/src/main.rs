use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lyricsinger::audiofront::AudioConfig;
use lyricsinger::harness::config::Settings;
use lyricsinger::harness::corpus::{write_corpus, Corpus, CorpusSpec};
use lyricsinger::harness::evaluate::evaluate;
use lyricsinger::harness::extract::{extract_codes, CodeDataset};
use lyricsinger::harness::selftest::{ctc_gradient_error, ctc_selftest, gradcheck_suite, GRAD_EPS, GRAD_TOL};
use lyricsinger::harness::synth::{synthesize, SynthConfig};
use lyricsinger::harness::train_lm::{train_lm, LmTrainConfig};
use lyricsinger::harness::train_vq::{train_vqvae, VqTrainConfig};
use lyricsinger::lexicon::Lexicon;
use lyricsinger::lm::LanguageModel;
use lyricsinger::vqvae::VqVae;
use lyricsinger::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lyricsinger",
    version,
    about = "Score-free singing voice synthesis from lyrics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory for every artifact the command writes.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        for pair in &self.set {
            s.apply(pair)?;
        }
        if let Some(seed) = self.seed {
            s.insert("seed", seed);
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic sung-phoneme corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train the hierarchical autoencoder on a corpus.
    TrainVqvae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode every clip with a trained autoencoder.
    ExtractCodes {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the code language model on extracted codes.
    TrainLm {
        #[arg(long)]
        codes: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sing the given lyrics; one section per line.
    Synthesize {
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, conflicts_with = "lyrics_file")]
        lyrics: Option<String>,
        #[arg(long)]
        lyrics_file: Option<PathBuf>,
        #[arg(long, default_value = "sample")]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics report for trained checkpoints.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long, requires = "codes")]
        lm: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks on tiny models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// CTC forward algorithm against brute-force path enumeration.
    CtcSelftest {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenCorpus { common } => {
            let spec = CorpusSpec::from_settings(&common.settings()?)?;
            let m = write_corpus(&common.out_dir, &spec, &AudioConfig::default())?;
            println!("wrote {} clips to {}", m.clips.len(), common.out_dir.display());
        }
        Cmd::TrainVqvae {
            corpus,
            lexicon,
            common,
        } => {
            let corpus = Corpus::load(&corpus, lexicon.as_deref())?;
            let cfg = VqTrainConfig::from_settings(&common.settings()?)?;
            let out = train_vqvae(&corpus, &cfg, &common.out_dir)?;
            println!("initial {:?}", out.initial);
            println!("final {:?}", out.last);
            println!("checkpoint {}", out.checkpoint.display());
        }
        Cmd::ExtractCodes {
            corpus,
            vq,
            lexicon,
            common,
        } => {
            common.settings()?.check_known(&[])?;
            let corpus = Corpus::load(&corpus, lexicon.as_deref())?;
            let vq: VqVae<f32> = VqVae::load(&vq)?;
            let index = extract_codes(&corpus, &vq, &common.out_dir)?;
            let n: usize = index.entries.iter().map(|e| e.sentences.len()).sum();
            println!("wrote codes for {} clips ({n} sentences)", index.entries.len());
        }
        Cmd::TrainLm { codes, common } => {
            let data = CodeDataset::load(&codes)?;
            let cfg = LmTrainConfig::from_settings(&common.settings()?)?;
            let out = train_lm(&data, &cfg, &common.out_dir)?;
            println!("initial {:?}", out.initial);
            println!("final {:?}", out.last);
            println!("checkpoint {}", out.checkpoint.display());
        }
        Cmd::Synthesize {
            vq,
            lm,
            lexicon,
            lyrics,
            lyrics_file,
            name,
            common,
        } => {
            let text = match (lyrics, lyrics_file) {
                (Some(t), _) => t,
                (None, Some(p)) => std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?,
                (None, None) => return Err(Error::Config("give --lyrics or --lyrics-file".into())),
            };
            let cfg = SynthConfig::from_settings(&common.settings()?)?;
            let lexicon = Lexicon::load(&lexicon)?;
            let vq: VqVae<f32> = VqVae::load(&vq)?;
            let lm: LanguageModel<f32> = LanguageModel::load(&lm)?;
            let out = synthesize(&text, &lexicon, &vq, &lm, &cfg, &common.out_dir, &name)?;
            if out.truncated {
                eprintln!("warning: no STOP before max_top_len; output truncated");
            }
            println!(
                "wav {} top_len {} samples {} seconds {:.3}",
                out.wav.display(),
                out.codes.len(),
                out.n_samples,
                out.seconds()
            );
        }
        Cmd::Evaluate {
            corpus,
            vq,
            lm,
            codes,
            lexicon,
            common,
        } => {
            common.settings()?.check_known(&[])?;
            let corpus = Corpus::load(&corpus, lexicon.as_deref())?;
            let vq: VqVae<f32> = VqVae::load(&vq)?;
            let lm_pair = match (lm, codes) {
                (Some(l), Some(c)) => Some((LanguageModel::<f32>::load(&l)?, CodeDataset::load(&c)?)),
                _ => None,
            };
            let report = evaluate(&vq, &corpus, lm_pair.as_ref().map(|(m, d)| (m, d)))?;
            std::fs::create_dir_all(&common.out_dir).map_err(|e| Error::io(&common.out_dir, e))?;
            let path = common.out_dir.join("eval_report.json");
            report.save(&path)?;
            println!("{report:?}");
        }
        Cmd::Gradcheck { common } => {
            let s = common.settings()?;
            s.check_known(&["seed", "eps"])?;
            let mut failed = Vec::new();
            for (name, rep) in gradcheck_suite(s.get_or("seed", 0)?, s.get_or("eps", GRAD_EPS)?)? {
                let ok = rep.passed(GRAD_TOL);
                println!(
                    "{} {name}: max rel err {:.3e} over {} coordinates ({} below floor)",
                    if ok { "PASS" } else { "FAIL" },
                    rep.max_rel_err,
                    rep.checked,
                    rep.below_floor
                );
                if !ok {
                    println!(
                        "  worst {:?}: analytic {:.6e}, numeric {:.6e}",
                        rep.worst, rep.analytic_at_worst, rep.numeric_at_worst
                    );
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                return Err(Error::Input(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Cmd::CtcSelftest { common } => {
            let s = common.settings()?;
            s.check_known(&["seed", "cases"])?;
            let seed = s.get_or("seed", 0)?;
            let r = ctc_selftest(s.get_or("cases", 200)?, seed)?;
            let ge = ctc_gradient_error(seed)?;
            println!("{} cases, max |forward − enumeration| = {:.3e}", r.cases, r.max_abs_err);
            println!("max gradient relative error = {ge:.3e}");
            if !(r.max_abs_err < 1e-10 && ge < GRAD_TOL) {
                return Err(Error::Input("CTC self-test out of tolerance".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! File formats: JSONL corpora, population sidecars, versioned JSON
//! checkpoints, CSV logs and run manifests.
//!
//! Corpora are JSON Lines, one example per line:
//!
//! ```json
//! {"prompt_ctx": [...], "winner": [...], "loser": [...],
//!  "group_id": 0, "attribute": "g0", "context_group": "g0"}
//! ```
//!
//! `group_id`, `attribute` and `context_group` are optional. All floats
//! round-trip exactly (shortest-representation encoding).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BoundReport, BudgetPoint, EvalReport};
use crate::model::{MixtureModel, PreferenceExample};
use crate::population::PopulationSpec;
use crate::routing::AdaptEpochRecord;
use crate::trainer::TrainStepRecord;

pub const CHECKPOINT_SCHEMA: &str = "prefmix.checkpoint.v1";
pub const POPULATION_SCHEMA: &str = "prefmix.population.v1";

pub fn write_corpus_jsonl(path: &Path, examples: &[PreferenceExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(|e| Error::json(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<PreferenceExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: PreferenceExample =
            serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        ex.prompt_ctx.check_finite()?;
        ex.winner.check_finite()?;
        ex.loser.check_finite()?;
        if ex.winner.len() != ex.loser.len() {
            return Err(Error::InvalidCorpus(format!(
                "{}:{}: winner and loser dimensions differ",
                path.display(),
                lineno + 1
            )));
        }
        examples.push(ex);
    }
    Ok(examples)
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationFile {
    schema_version: String,
    #[serde(flatten)]
    spec: PopulationSpec,
}

pub fn write_population_spec(path: &Path, spec: &PopulationSpec) -> Result<()> {
    let file = PopulationFile {
        schema_version: POPULATION_SCHEMA.to_string(),
        spec: spec.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_population_spec(path: &Path) -> Result<PopulationSpec> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PopulationFile = serde_json::from_str(&data).map_err(|e| Error::json(path, e))?;
    if file.schema_version != POPULATION_SCHEMA {
        return Err(Error::UnsupportedSchema {
            expected: POPULATION_SCHEMA.to_string(),
            found: file.schema_version,
        });
    }
    file.spec.validate()?;
    Ok(file.spec)
}

/// A trained model with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: String,
    pub seed: u64,
    /// Configuration the model was produced with (stage-specific).
    pub config: serde_json::Value,
    pub model: MixtureModel,
}

impl Checkpoint {
    pub fn new<C: Serialize>(model: MixtureModel, config: &C, seed: u64) -> Result<Self> {
        Ok(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA.to_string(),
            seed,
            config: serde_json::to_value(config).map_err(|e| Error::Json {
                path: "<config>".into(),
                source: e,
            })?,
            model,
        })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string_pretty(checkpoint).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&data).map_err(|e| Error::json(path, e))?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::UnsupportedSchema {
            expected: CHECKPOINT_SCHEMA.to_string(),
            found: ckpt.schema_version,
        });
    }
    ckpt.model.check_finite()?;
    Ok(ckpt)
}

pub fn write_train_log(path: &Path, log: &[TrainStepRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>, line: String| -> Result<()> {
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write(
        &mut out,
        "step,mle_loss,reg_loss,total_loss,mean_router_entropy".to_string(),
    )?;
    for row in log {
        write(
            &mut out,
            format!(
                "{},{},{},{},{}",
                row.step, row.mle_loss, row.reg_loss, row.total_loss, row.mean_router_entropy
            ),
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_adapt_log(path: &Path, log: &[AdaptEpochRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>, line: String| -> Result<()> {
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write(
        &mut out,
        "epoch,mean_soft_label_entropy,router_ce,heldout_accuracy".to_string(),
    )?;
    for row in log {
        let heldout = row
            .heldout_accuracy
            .map_or(String::new(), |a| a.to_string());
        write(
            &mut out,
            format!(
                "{},{},{},{heldout}",
                row.epoch, row.mean_soft_label_entropy, row.router_ce
            ),
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, points: &[BudgetPoint]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(b"budget,mean_acc,std_acc\n")
        .map_err(|e| Error::io(path, e))?;
    for p in points {
        out.write_all(format!("{},{},{}\n", p.budget, p.mean_acc, p.std_acc).as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn write_bound_report(path: &Path, report: &BoundReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Run provenance written next to every command's artifacts.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn new<C: Serialize>(
        command: &str,
        config: &C,
        seed: u64,
        wall_time_secs: f64,
    ) -> Result<Self> {
        let canonical = serde_json::to_string(config).map_err(|e| Error::Json {
            path: "<config>".into(),
            source: e,
        })?;
        Ok(Manifest {
            command: command.to_string(),
            version: format!("prefmix-v{}", env!("CARGO_PKG_VERSION")),
            config_hash: format!("{:016x}", fnv1a64(canonical.as_bytes())),
            seed,
            wall_time_secs,
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, FeatureVector};
    use crate::population::{PlantedConfig, SamplerSpec};
    use crate::rng::DetRng;
    use crate::trainer::Stage1Config;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("prefmix-io-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn corpus_roundtrip_is_exact() {
        let spec = PopulationSpec::planted(&PlantedConfig::new(2, 3, 3, 0.3, 7)).unwrap();
        let corpus = spec
            .sample_corpus_with(
                50,
                crate::population::ContextMode::GroupOneHot { noise_rate: 0.2 },
                0,
            )
            .unwrap();
        let dir = tmpdir("corpus");
        let path = dir.join("corpus.jsonl");
        write_corpus_jsonl(&path, &corpus).unwrap();
        let back = read_corpus_jsonl(&path).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn corpus_reader_skips_blank_lines_and_validates() {
        let dir = tmpdir("reader");
        let path = dir.join("bad.jsonl");
        fs::write(
            &path,
            "{\"prompt_ctx\":[0.0],\"winner\":[1.0],\"loser\":[0.5,0.5]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_corpus_jsonl(&path).unwrap_err(),
            Error::InvalidCorpus(_)
        ));
        let good = dir.join("good.jsonl");
        fs::write(
            &good,
            "\n{\"prompt_ctx\":[0.0],\"winner\":[1.0],\"loser\":[0.5]}\n\n",
        )
        .unwrap();
        let examples = read_corpus_jsonl(&good).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].group_id, None);
    }

    #[test]
    fn population_spec_roundtrip() {
        let mut spec = PopulationSpec::planted(&PlantedConfig::new(3, 4, 5, 0.2, 11)).unwrap();
        spec.sampler = SamplerSpec {
            prompt_dim: 4,
            response_dim: 5,
            prompt_scale: 1.0,
            response_scale: 2.0,
            fixed_pair: Some((vec![1.0; 5], vec![0.0; 5])),
        };
        let dir = tmpdir("spec");
        let path = dir.join("population.spec.json");
        write_population_spec(&path, &spec).unwrap();
        let back = read_population_spec(&path).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = DetRng::new(3);
        let model = init_model(3, 7, 5, 16, &mut rng);
        let config = Stage1Config::new(3, 2, 99);
        let ckpt = Checkpoint::new(model.clone(), &config, 99).unwrap();
        let dir = tmpdir("ckpt");
        let path = dir.join("model.ckpt.json");
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.seed, 99);
        assert_eq!(back.schema_version, CHECKPOINT_SCHEMA);
        let cfg_back: Stage1Config = serde_json::from_value(back.config).unwrap();
        assert_eq!(cfg_back, config);
    }

    #[test]
    fn checkpoint_rejects_unknown_schema() {
        let dir = tmpdir("schema");
        let path = dir.join("weird.json");
        let mut rng = DetRng::new(4);
        let model = init_model(1, 2, 2, 4, &mut rng);
        let mut ckpt = Checkpoint::new(model, &serde_json::json!({}), 1).unwrap();
        ckpt.schema_version = "prefmix.checkpoint.v999".into();
        write_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(
            read_checkpoint(&path).unwrap_err(),
            Error::UnsupportedSchema { .. }
        ));
    }

    #[test]
    fn train_log_csv_shape() {
        let dir = tmpdir("log");
        let path = dir.join("train.csv");
        let log = vec![TrainStepRecord {
            step: 0,
            mle_loss: 0.7,
            reg_loss: -0.6,
            total_loss: 0.4,
            mean_router_entropy: 0.6,
        }];
        write_train_log(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,mle_loss,reg_loss,total_loss,mean_router_entropy"
        );
        assert_eq!(lines.next().unwrap(), "0,0.7,-0.6,0.4,0.6");
    }

    #[test]
    fn manifest_hash_is_config_sensitive() {
        let a = Manifest::new("gen", &serde_json::json!({"k": 2}), 1, 0.5).unwrap();
        let b = Manifest::new("gen", &serde_json::json!({"k": 3}), 1, 0.5).unwrap();
        assert_ne!(a.config_hash, b.config_hash);
        assert!(a.version.starts_with("prefmix-v"));
        let c = Manifest::new("gen", &serde_json::json!({"k": 2}), 1, 9.0).unwrap();
        assert_eq!(a.config_hash, c.config_hash);
    }

    #[test]
    fn feature_vector_json_is_transparent() {
        let fv = FeatureVector::new(vec![1.5, -2.25]).unwrap();
        assert_eq!(serde_json::to_string(&fv).unwrap(), "[1.5,-2.25]");
    }
}

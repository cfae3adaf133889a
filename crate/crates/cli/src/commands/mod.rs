mod data;
mod report;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use annoforge::Error;
use serde::Serialize;

use crate::args::{Cli, Command};
use crate::manifest::{hash_path, RunManifest};
use crate::{CliError, CliResult};

pub(crate) struct Context {
    pub seed: u64,
    pub workers: usize,
    root: Option<PathBuf>,
}

impl Context {
    pub fn new(cli: &Cli, root: Option<&Path>) -> Self {
        Self {
            seed: cli.seed,
            workers: cli.workers,
            root: root.map(Path::to_path_buf),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub(crate) fn dispatch(command: &Command, ctx: &Context) -> CliResult<()> {
    match command {
        Command::GenCorpus(a) => data::gen_corpus(ctx, a),
        Command::Concreteness(a) => data::concreteness(ctx, a),
        Command::BuildDict(a) => data::build_dict(ctx, a),
        Command::Cluster(a) => data::cluster(ctx, a),
        Command::Labelgen(a) => data::labelgen(ctx, a),
        Command::Resample(a) => data::resample(ctx, a),
        Command::DedupSplit(a) => data::dedup_split(ctx, a),
        Command::Pretrain(a) => train::pretrain(ctx, a),
        Command::Finetune(a) => train::finetune(ctx, a),
        Command::EvalRetrieval(a) => train::eval_retrieval(ctx, a),
        Command::Fewshot(a) => train::fewshot(ctx, a),
        Command::ScaleSweep(a) => train::scale_sweep(ctx, a),
        Command::Bench(a) => train::bench(ctx, a),
        Command::Report(a) => report::report(ctx, a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Collects inputs and outputs of one subcommand and writes its manifest.
pub(crate) struct Run<'a> {
    ctx: &'a Context,
    command: &'static str,
    config: serde_json::Value,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn new(
        ctx: &'a Context,
        command: &'static str,
        args: &impl Serialize,
        out: &Path,
    ) -> CliResult<Self> {
        let mut config = serde_json::to_value(args).map_err(Error::from)?;
        if let Some(map) = config.as_object_mut() {
            map.insert("seed".into(), ctx.seed.into());
        }
        let out = ctx.resolve(out);
        fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        Ok(Self {
            ctx,
            command,
            config,
            out,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Resolves and hashes an input; a missing path fails here, before any work.
    pub fn input(&mut self, p: &Path) -> CliResult<PathBuf> {
        let path = self.ctx.resolve(p);
        let hash = hash_path(&path)?;
        self.inputs
            .insert(path.to_string_lossy().into_owned(), hash);
        Ok(path)
    }

    /// Path of a named output, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let path = self.output(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn finish(self) -> CliResult<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), hash_path(&self.out.join(name))?);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.ctx.seed,
            workers: self.ctx.workers,
            config: self.config,
            inputs: self.inputs,
            outputs,
        };
        manifest.save(&self.out)?;
        log::info!(
            "{}: wrote {} artifact(s) to {}",
            self.command,
            manifest.outputs.len(),
            self.out.display()
        );
        Ok(())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            io_err(path, e)
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Core(Error::MalformedShard {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    })
}

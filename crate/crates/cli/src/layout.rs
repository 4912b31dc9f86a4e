//! Where each command reads and writes inside the output directory.

use std::path::{Path, PathBuf};

use chewing_ssl::objective::Temperature;
use chewing_ssl::train::{HeadKind, Variant};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

fn kind_tag(kind: HeadKind) -> &'static str {
    match kind {
        HeadKind::Linear => "linear",
        HeadKind::Nonlinear => "nonlinear",
    }
}

pub fn variant_tag(v: Variant) -> &'static str {
    match v {
        Variant::Linear => "linear",
        Variant::Nonlinear => "nonlinear",
        Variant::NonlinearRetained => "nonlinear_retained",
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.corpus().join("manifest.json")
    }

    pub fn preprocessed(&self) -> PathBuf {
        self.root.join("preprocessed")
    }

    pub fn preprocessed_manifest(&self) -> PathBuf {
        self.preprocessed().join("manifest.json")
    }

    pub fn split(&self) -> PathBuf {
        self.preprocessed().join("split.json")
    }

    pub fn pretrain(&self, kind: HeadKind, tau: Temperature) -> PathBuf {
        self.root.join("pretrain").join(format!("{}_tau{}", kind_tag(kind), tau.get()))
    }

    pub fn head(&self, v: Variant, tau: Temperature) -> PathBuf {
        self.root.join("heads").join(format!("{}_tau{}", variant_tag(v), tau.get()))
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn holdout(&self) -> PathBuf {
        self.root.join("holdout")
    }

    pub fn postprocess(&self) -> PathBuf {
        self.root.join("postprocess")
    }
}

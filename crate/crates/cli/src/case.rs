//! A configured case and the file layout of its work directory.

use std::path::{Path, PathBuf};

use hrom_core::cli_io::PipelineConfig;
use hrom_core::hfm::{HfmConfig, Model};
use hrom_core::ingestion::{partition_mesh, SnapshotManifest};
use hrom_core::loading::LoadingSchedule;
use hrom_core::material::Material;
use hrom_core::mesh::Mesh;
use hrom_core::Result;

pub struct Case {
    pub cfg: PipelineConfig,
    pub model: Model,
    pub law: Material,
    pub schedule: LoadingSchedule,
    pub threads: usize,
}

impl Case {
    /// Read the config and the files it names. The mesh is repartitioned when
    /// its subdomain count differs from `run.subdomains`.
    pub fn load(config: &Path, threads: Option<usize>) -> Result<Case> {
        let cfg = PipelineConfig::read(config)?;
        let mut mesh = Mesh::read(&cfg.paths.mesh)?;
        if mesh.n_subdomains != cfg.run.subdomains {
            log::info!("repartitioning mesh into {} subdomains", cfg.run.subdomains);
            partition_mesh(&mut mesh, cfg.run.subdomains)?;
        }
        let model = Model::new(mesh)?;
        let law = Material::read(&cfg.paths.material)?;
        let schedule = LoadingSchedule::read(&cfg.paths.schedule)?;
        schedule.validate()?;
        let threads = threads.unwrap_or(cfg.run.threads);
        Ok(Case {
            cfg,
            model,
            law,
            schedule,
            threads,
        })
    }

    pub fn hfm_config(&self) -> HfmConfig {
        HfmConfig {
            tolerance: self.cfg.tolerances.hfm_newton,
            ..HfmConfig::default()
        }
    }

    pub fn refs(&self) -> SnapshotManifest {
        SnapshotManifest {
            mesh: Some(self.cfg.paths.mesh.clone()),
            law: Some(self.cfg.paths.material.clone()),
            schedule: Some(self.cfg.paths.schedule.clone()),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.cfg.paths.workdir)
    }
}

/// Default file locations under the work directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn training(&self) -> PathBuf {
        self.root.join("hfm")
    }

    pub fn reference(&self) -> PathBuf {
        self.root.join("reference")
    }

    pub fn ingested(&self) -> PathBuf {
        self.root.join("ingested")
    }

    /// Snapshots used for training: the ingested set when present.
    pub fn training_snapshots(&self) -> PathBuf {
        let ingested = self.ingested().join("snapshots.hrsnap");
        if ingested.exists() {
            ingested
        } else {
            self.training().join("snapshots.hrsnap")
        }
    }

    pub fn basis_dir(&self) -> PathBuf {
        self.root.join("basis")
    }

    pub fn basis(&self) -> PathBuf {
        self.basis_dir().join("basis.hrbasis")
    }

    pub fn quadrature(&self) -> PathBuf {
        self.root.join("quadrature.hrquad")
    }

    pub fn gappy_dir(&self) -> PathBuf {
        self.root.join("gappy")
    }

    pub fn rom_dir(&self) -> PathBuf {
        self.root.join("rom")
    }

    pub fn fields_dir(&self) -> PathBuf {
        self.root.join("fields")
    }

    pub fn stages(&self) -> PathBuf {
        self.root.join("stages.csv")
    }

    pub fn reference_timing(&self) -> PathBuf {
        self.root.join("reference.csv")
    }
}

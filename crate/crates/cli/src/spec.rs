//! Sweep specification assembled from command-line arguments.

use anyhow::bail;

use sparse3d::engine::{Kernel, Mode};
use sparse3d::grid::ProcGrid;
use sparse3d::plan::Strategy;

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub grids: Vec<ProcGrid>,
    pub ks: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub modes: Vec<Mode>,
    pub kernels: Vec<Kernel>,
    pub iterations: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn from_cli(
        grids: &[String],
        ks: &[usize],
        strategies: &[String],
        mode: &str,
        kernel: &str,
        iterations: usize,
        seed: u64,
    ) -> anyhow::Result<RunSpec> {
        if grids.is_empty() {
            bail!("--grid: at least one grid is required");
        }
        if ks.is_empty() {
            bail!("--k: at least one K value is required");
        }
        if ks.contains(&0) {
            bail!("--k: K must be >= 1");
        }
        if iterations == 0 {
            bail!("--iters: must be >= 1");
        }
        let grids = grids
            .iter()
            .map(|g| crate::parse_grid(g))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let strategies = if strategies.is_empty() {
            vec![Strategy::BB, Strategy::RB, Strategy::NB]
        } else {
            strategies
                .iter()
                .map(|s| crate::parse_strategy(s))
                .collect::<anyhow::Result<Vec<_>>>()?
        };
        let modes = match mode {
            "sparse" => vec![Mode::SparseAware],
            "dense3d" => vec![Mode::Dense3d],
            "both" => vec![Mode::SparseAware, Mode::Dense3d],
            other => bail!("--mode '{other}': expected sparse, dense3d, or both"),
        };
        let kernels = match kernel {
            "sddmm" => vec![Kernel::Sddmm],
            "spmm" => vec![Kernel::Spmm],
            "both" => vec![Kernel::Sddmm, Kernel::Spmm],
            other => bail!("--kernel '{other}': expected sddmm, spmm, or both"),
        };
        Ok(RunSpec {
            grids,
            ks: ks.to_vec(),
            strategies,
            modes,
            kernels,
            iterations,
            seed,
        })
    }
}

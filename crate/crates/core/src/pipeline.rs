//! End-to-end defocus map estimation for one image.

use crate::config::Config;
use crate::edges::{canny, extract_patches, CannyParams, EdgeLabel, EdgeMap};
use crate::error::{Error, Result};
use crate::image::{value_channel, Image};
use crate::nn::Model;
use crate::propagate::{add_random_seeds, matting_laplacian, solve_propagation};
use crate::rng::Rng;
use crate::sparsemap::{classify_to_sparse, prob_joint_bilateral, rolling_guidance, BilateralParams, SparseDefocusMap};

/// Every intermediate of one estimate.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub edges: EdgeMap,
    /// `I_S` and `I_C`, including any homogeneous-region seeds.
    pub sparse: SparseDefocusMap,
    /// `I_B`: the bilateral-filtered sparse map.
    pub filtered: SparseDefocusMap,
    /// `I_G`.
    pub guide: Image,
    /// `I_F`.
    pub dense: Image,
    pub edge_samples: usize,
    pub seeds_added: usize,
    pub cg_iterations: usize,
}

/// Edges → patches → classification → (seeds) → bilateral filter →
/// matting-Laplacian propagation.
pub fn estimate(img: &Image, model: &Model, cfg: &Config) -> Result<Estimate> {
    cfg.validate()?;
    if model.small_patch != cfg.small_patch || model.large_patch != cfg.large_patch {
        return Err(Error::Config("patch sizes differ between config and model".into()));
    }
    let rgb = img.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let edges = canny(&value_channel(&rgb)?, &CannyParams::from_config(cfg))?;
    log::debug!(
        "edges: {} strong, {} weak",
        edges.count(EdgeLabel::Strong),
        edges.count(EdgeLabel::Weak)
    );
    let samples = extract_patches(&rgb, &edges, cfg);
    let mut sparse = classify_to_sparse(model, &samples, w, h)?;
    let seeds_added = if cfg.seed_homogeneous {
        let mut rng = Rng::new(cfg.seed).fork(0x5eed);
        add_random_seeds(&mut sparse, &edges, &rgb, model, cfg, &mut rng)?
    } else {
        0
    };
    if sparse.support_len() == 0 {
        return Err(Error::invalid("no edge patches or seeds: nothing to propagate"));
    }
    let guide = rolling_guidance(&rgb, cfg.rgf_sigma_s, cfg.rgf_sigma_r, cfg.rgf_iterations)?;
    let filtered = prob_joint_bilateral(&sparse, &guide, &BilateralParams::from_config(cfg))?;
    let l = matting_laplacian(&guide, cfg.matting_epsilon)?;
    let (dense, cg) = solve_propagation(&l, &filtered, cfg.gamma, cfg.cg_tolerance, cfg.sigma_min, cfg.sigma_max())?;
    log::debug!(
        "{} samples, {} seeds, CG converged in {} iterations (residual {:.2e})",
        samples.len(),
        seeds_added,
        cg.iterations,
        cg.residual
    );
    Ok(Estimate {
        edges,
        sparse,
        filtered,
        guide,
        dense,
        edge_samples: samples.len(),
        seeds_added,
        cg_iterations: cg.iterations,
    })
}

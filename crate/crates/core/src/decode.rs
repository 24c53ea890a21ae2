//! Batch translation of token sequences with a frozen model.

use crate::dtn::DtnBank;
use crate::error::Result;
use crate::forward::Forward;
use crate::nmt::{ModelConfig, Padded};
use crate::params::ModelParams;

/// Sentences decoded per forward pass.
pub const DECODE_CHUNK: usize = 64;

/// Greedy translations of `sources`, in order. With `dtn = Some((bank, d))`
/// the encoder output is routed through domain `d`'s transformation.
pub fn translate(
    params: &ModelParams,
    cfg: &ModelConfig,
    sources: &[Vec<usize>],
    dtn: Option<(&DtnBank, usize)>,
) -> Result<Vec<Vec<usize>>> {
    let max_steps = cfg.max_len.saturating_sub(1);
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        let src = Padded::from_rows(chunk, cfg.pad_id)?;
        let mut f = Forward::eval(params);
        let h = f.encode(cfg, &src)?;
        let memory = match dtn {
            Some((bank, d)) => f.dtn_transform(bank, cfg, h, &src, d)?,
            None => h,
        };
        out.extend(f.greedy_decode(cfg, memory, &src, max_steps)?);
    }
    Ok(out)
}

//! Parsing of `--classifier` specs for `simulate`.

use anyhow::{bail, Context, Result};
use pedfuse_core::sim::{mix_seeds, SimClassifierSpec};

/// `oracle`, `noisy:TPR:FPR`, optionally prefixed by `NAME=`. Unnamed
/// classifiers are called `c<index>`; each noisy classifier gets its own
/// seed derived from the run seed and its position.
pub fn parse_classifier(text: &str, index: usize, seed: u64) -> Result<SimClassifierSpec> {
    let (name, kind) = match text.split_once('=') {
        Some((n, k)) if !n.trim().is_empty() => (n.trim().to_string(), k.trim()),
        Some(_) => bail!("empty classifier name in '{text}'"),
        None => (format!("c{index}"), text.trim()),
    };
    if name.contains(['/', '\\']) {
        bail!("classifier name '{name}' must not contain path separators");
    }
    let mut parts = kind.split(':');
    match parts.next() {
        Some("oracle") if parts.next().is_none() => Ok(SimClassifierSpec::oracle(name)),
        Some("noisy") => {
            let mut rate = |what: &str| -> Result<f64> {
                let v = parts
                    .next()
                    .with_context(|| format!("'{text}': missing {what}"))?;
                v.parse().with_context(|| format!("'{text}': bad {what} '{v}'"))
            };
            let tpr = rate("tpr")?;
            let fpr = rate("fpr")?;
            if parts.next().is_some() {
                bail!("'{text}': expected noisy:TPR:FPR");
            }
            Ok(SimClassifierSpec::noisy(
                name,
                tpr,
                fpr,
                mix_seeds(seed, index as u64 + 1),
            )?)
        }
        _ => bail!("unknown classifier spec '{text}' (expected oracle or noisy:TPR:FPR)"),
    }
}

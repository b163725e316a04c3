use crate::error::{Error, Result};
use crate::labels::PseudoLabelSet;

/// Union of two pseudo-label sets of the same view. Where both label an image, `new`
/// replaces `old`.
pub fn fuse(old: &PseudoLabelSet, new: &PseudoLabelSet) -> Result<PseudoLabelSet> {
    if old.producing_view != new.producing_view {
        return Err(Error::Config(format!(
            "cannot fuse labels of view {} into view {}",
            new.producing_view.index(),
            old.producing_view.index()
        )));
    }
    let mut entries = old.entries.clone();
    for (id, dets) in &new.entries {
        entries.insert(id.clone(), dets.clone());
    }
    Ok(PseudoLabelSet {
        producing_view: old.producing_view,
        cycle: old.cycle.max(new.cycle),
        entries,
    })
}

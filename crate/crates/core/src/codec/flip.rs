use super::{CodecError, HeatmapSet, JointTopology, PafSet};
use crate::tensor::{flip_horizontal, Tensor};

fn check(hm: &HeatmapSet, paf: &PafSet, topo: &JointTopology) -> Result<(), CodecError> {
    if hm.joints() != topo.num_joints() {
        return Err(CodecError::ChannelMismatch {
            what: "heatmap",
            expected: topo.num_joints(),
            found: hm.joints(),
        });
    }
    if paf.0.shape()[0] != topo.paf_channels() {
        return Err(CodecError::ChannelMismatch {
            what: "part affinity",
            expected: topo.paf_channels(),
            found: paf.0.shape()[0],
        });
    }
    if hm.size() != paf.size() {
        return Err(CodecError::SizeMismatch(hm.size(), paf.size()));
    }
    Ok(())
}

/// Maps predicted on a mirrored image back into the original frame: columns
/// mirrored, left/right joints and limbs exchanged, PAF x-components negated.
pub fn unflip(
    hm: &HeatmapSet,
    paf: &PafSet,
    topo: &JointTopology,
) -> Result<(HeatmapSet, PafSet), CodecError> {
    check(hm, paf, topo)?;
    let (h, w) = hm.size();
    let mh = flip_horizontal(&hm.0);
    let mp = flip_horizontal(&paf.0);
    let mut out_h = Tensor::<f32>::zeros(&[topo.num_joints(), h, w]);
    for j in 0..topo.num_joints() {
        out_h.channel_mut(topo.lr_swap[j]).copy_from_slice(mh.channel(j));
    }
    let mut out_p = Tensor::<f32>::zeros(&[topo.paf_channels(), h, w]);
    for (l, &m) in topo.limb_swap().iter().enumerate() {
        for (d, s) in out_p.channel_mut(2 * m).iter_mut().zip(mp.channel(2 * l)) {
            *d = -s;
        }
        out_p.channel_mut(2 * m + 1).copy_from_slice(mp.channel(2 * l + 1));
    }
    Ok((HeatmapSet(out_h), PafSet(out_p)))
}

/// Mean of the original-image maps and the un-flipped mirrored-image maps.
pub fn flip_average(
    orig: (&HeatmapSet, &PafSet),
    flipped: (&HeatmapSet, &PafSet),
    topo: &JointTopology,
) -> Result<(HeatmapSet, PafSet), CodecError> {
    check(orig.0, orig.1, topo)?;
    let (uh, up) = unflip(flipped.0, flipped.1, topo)?;
    if uh.size() != orig.0.size() {
        return Err(CodecError::SizeMismatch(orig.0.size(), uh.size()));
    }
    let avg = |a: &Tensor<f32>, b: &Tensor<f32>| {
        Tensor::new(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect(),
        )
        .expect("same shape")
    };
    Ok((
        HeatmapSet(avg(&orig.0 .0, &uh.0)),
        PafSet(avg(&orig.1 .0, &up.0)),
    ))
}

//! Deterministic expansion of each block kind into primitive steps.

use super::{BlockError, BlockKind, BlockSpec, Expansion, Prim, Result, Src, Step};

struct Builder {
    kind: &'static str,
    steps: Vec<Step>,
}

impl Builder {
    fn new(kind: &'static str) -> Self {
        Self { kind, steps: Vec::new() }
    }

    fn push(&mut self, prim: Prim, inputs: Vec<Src>) -> Src {
        self.steps.push(Step { prim, inputs });
        Src::Step(self.steps.len() - 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, src: Src, c_in: usize, c_out: usize, k: usize, s: usize, p: usize, groups: usize, bias: bool) -> Src {
        self.push(Prim::Conv { c_in, c_out, k, s, p, groups, bias }, vec![src])
    }

    fn bn(&mut self, src: Src, c: usize) -> Src {
        self.push(Prim::BnAffine { c }, vec![src])
    }

    fn silu(&mut self, src: Src) -> Src {
        self.push(Prim::Silu, vec![src])
    }

    /// Bias-less conv, BN affine, SiLU.
    fn cba(&mut self, src: Src, c_in: usize, c_out: usize, k: usize, s: usize, p: Option<usize>) -> Src {
        let conv = self.conv(src, c_in, c_out, k, s, p.unwrap_or(k / 2), 1, false);
        let bn = self.bn(conv, c_out);
        self.silu(bn)
    }

    /// Bottleneck: 1x1 reduce to `e * c_out`, 3x3 back to `c_out`, optional
    /// residual add when shapes permit.
    fn bottleneck(&mut self, src: Src, c_in: usize, c_out: usize, shortcut: bool, e: f64) -> Result<Src> {
        let hidden = self.frac_channels(c_out, e, "bottleneck hidden")?;
        let a = self.cba(src, c_in, hidden, 1, 1, None);
        let b = self.cba(a, hidden, c_out, 3, 1, None);
        Ok(if shortcut && c_in == c_out { self.push(Prim::Add, vec![b, src]) } else { b })
    }

    /// The dual-branch CSP shell shared by C3, C3Ghost, and C3Faster:
    /// `inner` maps (builder, branch head, hidden channels) to the branch
    /// tail and is applied `n` times.
    fn c3_shell(
        &mut self,
        src: Src,
        c_in: usize,
        c_out: usize,
        n: usize,
        e: f64,
        inner: impl Fn(&mut Builder, Src, usize) -> Result<Src>,
    ) -> Result<Src> {
        let hidden = self.frac_channels(c_out, e, "CSP hidden")?;
        let mut a = self.cba(src, c_in, hidden, 1, 1, None);
        for _ in 0..n {
            a = inner(self, a, hidden)?;
        }
        let b = self.cba(src, c_in, hidden, 1, 1, None);
        let cat = self.push(Prim::Concat, vec![a, b]);
        Ok(self.cba(cat, 2 * hidden, c_out, 1, 1, None))
    }

    /// GhostConv: primary conv to half the outputs, cheap depthwise 5x5 for
    /// the other half, concat. `act` false leaves both halves linear.
    fn ghost_conv(&mut self, src: Src, c_in: usize, c_out: usize, k: usize, s: usize, act: bool) -> Result<Src> {
        let half = self.even_half(c_out, "GhostConv output")?;
        let mut primary = self.conv(src, c_in, half, k, s, k / 2, 1, false);
        primary = self.bn(primary, half);
        if act {
            primary = self.silu(primary);
        }
        let mut cheap = self.conv(primary, half, half, 5, 1, 2, half, false);
        cheap = self.bn(cheap, half);
        if act {
            cheap = self.silu(cheap);
        }
        Ok(self.push(Prim::Concat, vec![primary, cheap]))
    }

    /// GhostBottleneck (stride 1): GhostConv down to `c / 2`, linear
    /// GhostConv back to `c`, residual add.
    fn ghost_bottleneck(&mut self, src: Src, c: usize) -> Result<Src> {
        let half = self.even_half(c, "GhostBottleneck")?;
        let g1 = self.ghost_conv(src, c, half, 1, 1, true)?;
        let g2 = self.ghost_conv(g1, half, c, 1, 1, false)?;
        Ok(self.push(Prim::Add, vec![g2, src]))
    }

    /// PConv: dense conv over the first `r_p * c` channels, untouched
    /// remainder concatenated back.
    fn pconv(&mut self, src: Src, c: usize, k: usize, r_p: f64) -> Result<Src> {
        let c_p = self.frac_channels(c, r_p, "PConv partial slice")?;
        let head = self.push(Prim::Slice { lo: 0, hi: c_p }, vec![src]);
        let conved = self.conv(head, c_p, c_p, k, 1, k / 2, 1, false);
        if c_p == c {
            return Ok(conved);
        }
        let rest = self.push(Prim::Slice { lo: c_p, hi: c }, vec![src]);
        Ok(self.push(Prim::Concat, vec![conved, rest]))
    }

    /// FasterBlock: PConv, pointwise expand to `e * c` with BN and SiLU,
    /// pointwise project back with BN only, residual add.
    fn faster_block(&mut self, src: Src, c: usize, e: f64, r_p: f64) -> Result<Src> {
        let expanded = self.frac_channels(c, e, "FasterBlock expansion")?;
        let pc = self.pconv(src, c, 3, r_p)?;
        let up = self.cba(pc, c, expanded, 1, 1, None);
        let down = self.conv(up, expanded, c, 1, 1, 0, 1, false);
        let bn = self.bn(down, c);
        Ok(self.push(Prim::Add, vec![bn, src]))
    }

    /// `frac * c` when it is a positive integer, else an invariant error.
    fn frac_channels(&self, c: usize, frac: f64, what: &str) -> Result<usize> {
        let exact = c as f64 * frac;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(BlockError::Invariant {
                kind: self.kind,
                constraint: format!("{what} {frac} * {c} is not a positive integer"),
            });
        }
        Ok(rounded as usize)
    }

    fn even_half(&self, c: usize, what: &str) -> Result<usize> {
        if !c.is_multiple_of(2) || c == 0 {
            return Err(BlockError::Invariant {
                kind: self.kind,
                constraint: format!("{what} channels {c} must be even and positive"),
            });
        }
        Ok(c / 2)
    }

    fn finish(self, outputs: Vec<Src>) -> Expansion {
        Expansion { steps: self.steps, outputs }
    }
}

fn require(kind: &'static str, cond: bool, constraint: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(BlockError::Invariant { kind, constraint: constraint() })
    }
}

/// Expands a block into its canonical primitive sequence. Deterministic:
/// the same spec always yields the same steps in the same order.
pub fn expand_block(spec: &BlockSpec) -> Result<Expansion> {
    let kind = spec.kind.name();
    let single_in = |what: &'static str| -> Result<usize> {
        require(what, spec.c_ins.len() == 1, || {
            format!("expects exactly one input, got {}", spec.c_ins.len())
        })?;
        Ok(spec.c_ins[0])
    };
    let mut b = Builder::new(kind);
    let out = match &spec.kind {
        BlockKind::ConvBnAct { k, s, p } => {
            let c_in = single_in(kind)?;
            b.cba(Src::Input(0), c_in, spec.c_out, *k, *s, *p)
        }
        BlockKind::Bottleneck { shortcut, e } => {
            let c_in = single_in(kind)?;
            b.bottleneck(Src::Input(0), c_in, spec.c_out, *shortcut, *e)?
        }
        BlockKind::C3 { n, shortcut, e } => {
            let c_in = single_in(kind)?;
            let shortcut = *shortcut;
            b.c3_shell(Src::Input(0), c_in, spec.c_out, *n, *e, move |b, src, h| {
                b.bottleneck(src, h, h, shortcut, 1.0)
            })?
        }
        BlockKind::C3Ghost { n, e, .. } => {
            let c_in = single_in(kind)?;
            b.c3_shell(Src::Input(0), c_in, spec.c_out, *n, *e, |b, src, h| {
                b.ghost_bottleneck(src, h)
            })?
        }
        BlockKind::C3Faster { n, e, .. } => {
            let c_in = single_in(kind)?;
            b.c3_shell(Src::Input(0), c_in, spec.c_out, *n, *e, |b, src, h| {
                b.faster_block(src, h, 2.0, 0.25)
            })?
        }
        BlockKind::Sppf { k } => {
            let c_in = single_in(kind)?;
            let hidden = b.even_half(c_in, "SPPF input")?;
            let a = b.cba(Src::Input(0), c_in, hidden, 1, 1, None);
            let p1 = b.push(Prim::MaxPool { k: *k, s: 1, p: k / 2 }, vec![a]);
            let p2 = b.push(Prim::MaxPool { k: *k, s: 1, p: k / 2 }, vec![p1]);
            let p3 = b.push(Prim::MaxPool { k: *k, s: 1, p: k / 2 }, vec![p2]);
            let cat = b.push(Prim::Concat, vec![a, p1, p2, p3]);
            b.cba(cat, 4 * hidden, spec.c_out, 1, 1, None)
        }
        BlockKind::GhostConv { k, s, act } => {
            let c_in = single_in(kind)?;
            b.ghost_conv(Src::Input(0), c_in, spec.c_out, *k, *s, *act)?
        }
        BlockKind::GhostBottleneck => {
            let c_in = single_in(kind)?;
            require(kind, c_in == spec.c_out, || {
                format!("residual add needs c_in == c_out, got {c_in} -> {}", spec.c_out)
            })?;
            b.ghost_bottleneck(Src::Input(0), c_in)?
        }
        BlockKind::PConv { k, r_p } => {
            let c_in = single_in(kind)?;
            require(kind, c_in == spec.c_out, || {
                format!("pass-through remainder needs c_in == c_out, got {c_in} -> {}", spec.c_out)
            })?;
            b.pconv(Src::Input(0), c_in, *k, *r_p)?
        }
        BlockKind::FasterBlock { e, r_p } => {
            let c_in = single_in(kind)?;
            require(kind, c_in == spec.c_out, || {
                format!("residual add needs c_in == c_out, got {c_in} -> {}", spec.c_out)
            })?;
            b.faster_block(Src::Input(0), c_in, *e, *r_p)?
        }
        BlockKind::Upsample => {
            single_in(kind)?;
            b.push(Prim::Upsample2x, vec![Src::Input(0)])
        }
        BlockKind::Concat => {
            require(kind, !spec.c_ins.is_empty(), || "expects at least one input".into())?;
            let inputs = (0..spec.c_ins.len()).map(Src::Input).collect();
            b.push(Prim::Concat, inputs)
        }
        BlockKind::Detect { nc, anchors } => {
            require(kind, !spec.c_ins.is_empty(), || "expects at least one scale input".into())?;
            require(kind, anchors.len() == spec.c_ins.len(), || {
                format!("{} anchor scales for {} inputs", anchors.len(), spec.c_ins.len())
            })?;
            let na = anchors.first().map_or(0, |a| a.len() / 2);
            require(kind, na > 0 && anchors.iter().all(|a| a.len() == 2 * na), || {
                "every anchor scale needs the same number of (w, h) pairs".into()
            })?;
            let per_scale = na * (nc + 5);
            require(kind, per_scale == spec.c_out, || {
                format!("c_out {} != na*(nc+5) = {per_scale}", spec.c_out)
            })?;
            let outs: Vec<Src> = spec
                .c_ins
                .iter()
                .enumerate()
                .map(|(i, &c_in)| b.conv(Src::Input(i), c_in, per_scale, 1, 1, 0, 1, true))
                .collect();
            return Ok(b.finish(outs));
        }
    };
    Ok(b.finish(vec![out]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: BlockKind, c_ins: Vec<usize>, c_out: usize) -> BlockSpec {
        BlockSpec { kind, c_ins, c_out }
    }

    #[test]
    fn conv_bn_act_is_three_steps() {
        let e = expand_block(&spec(BlockKind::ConvBnAct { k: 3, s: 1, p: None }, vec![16], 32)).unwrap();
        assert_eq!(e.steps.len(), 3);
        assert_eq!(e.conv_count(), 1);
        assert!(matches!(e.steps[0].prim, Prim::Conv { c_in: 16, c_out: 32, k: 3, s: 1, p: 1, groups: 1, bias: false }));
    }

    #[test]
    fn explicit_padding_overrides_same_padding() {
        let e = expand_block(&spec(BlockKind::ConvBnAct { k: 6, s: 2, p: Some(2) }, vec![3], 32)).unwrap();
        assert!(matches!(e.steps[0].prim, Prim::Conv { k: 6, s: 2, p: 2, .. }));
    }

    #[test]
    fn c3_with_one_unit_has_five_convs() {
        let e = expand_block(&spec(BlockKind::C3 { n: 1, shortcut: true, e: 0.5 }, vec![64], 64)).unwrap();
        assert_eq!(e.conv_count(), 5);
        assert_eq!(e.add_count(), 1);
        let no_shortcut =
            expand_block(&spec(BlockKind::C3 { n: 1, shortcut: false, e: 0.5 }, vec![64], 64)).unwrap();
        assert_eq!(no_shortcut.conv_count(), 5);
        assert_eq!(no_shortcut.add_count(), 0);
    }

    #[test]
    fn bottleneck_skips_add_on_channel_change() {
        let e = expand_block(&spec(BlockKind::Bottleneck { shortcut: true, e: 0.5 }, vec![32], 64)).unwrap();
        assert_eq!(e.add_count(), 0);
        let same = expand_block(&spec(BlockKind::Bottleneck { shortcut: true, e: 0.5 }, vec![64], 64)).unwrap();
        assert_eq!(same.add_count(), 1);
    }

    #[test]
    fn pconv_slices_first_quarter() {
        let e = expand_block(&spec(BlockKind::PConv { k: 3, r_p: 0.25 }, vec![64], 64)).unwrap();
        assert!(matches!(e.steps[0].prim, Prim::Slice { lo: 0, hi: 16 }));
        assert!(matches!(e.steps[1].prim, Prim::Conv { c_in: 16, c_out: 16, k: 3, s: 1, p: 1, groups: 1, bias: false }));
        assert!(matches!(e.steps[2].prim, Prim::Slice { lo: 16, hi: 64 }));
        assert!(matches!(e.steps[3].prim, Prim::Concat));
        assert_eq!(e.conv_count(), 1);
    }

    #[test]
    fn ghost_conv_structure_matches_cheap_operation_split() {
        let e = expand_block(&spec(BlockKind::GhostConv { k: 1, s: 1, act: true }, vec![64], 64)).unwrap();
        assert!(matches!(e.steps[0].prim, Prim::Conv { c_in: 64, c_out: 32, k: 1, groups: 1, .. }));
        let dw = e.steps.iter().find_map(|s| match s.prim {
            Prim::Conv { c_in, c_out, k, groups, .. } if groups > 1 => Some((c_in, c_out, k, groups)),
            _ => None,
        });
        assert_eq!(dw, Some((32, 32, 5, 32)));
        assert!(matches!(e.steps.last().unwrap().prim, Prim::Concat));
    }

    #[test]
    fn ghost_bottleneck_requires_matching_channels() {
        let err = expand_block(&spec(BlockKind::GhostBottleneck, vec![32], 64)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("GhostBottleneck") && msg.contains("c_in == c_out"), "{msg}");
    }

    #[test]
    fn faster_block_rejects_indivisible_partial_slice() {
        let err = expand_block(&spec(BlockKind::FasterBlock { e: 2.0, r_p: 0.25 }, vec![30], 30)).unwrap_err();
        assert!(err.to_string().contains("not a positive integer"), "{err}");
    }

    #[test]
    fn sppf_chains_three_pools_over_one_reduce() {
        let e = expand_block(&spec(BlockKind::Sppf { k: 5 }, vec![512], 512)).unwrap();
        let pools: Vec<_> = e.steps.iter().filter(|s| matches!(s.prim, Prim::MaxPool { .. })).collect();
        assert_eq!(pools.len(), 3);
        assert!(pools.iter().all(|s| matches!(s.prim, Prim::MaxPool { k: 5, s: 1, p: 2 })));
        assert_eq!(e.conv_count(), 2);
    }

    #[test]
    fn detect_emits_one_biased_conv_per_scale() {
        let anchors = vec![vec![10.0, 13.0, 16.0, 30.0, 33.0, 23.0]; 3];
        let e = expand_block(&spec(BlockKind::Detect { nc: 4, anchors }, vec![128, 256, 512], 27)).unwrap();
        assert_eq!(e.outputs.len(), 3);
        assert_eq!(e.conv_count(), 3);
        assert!(e.steps.iter().all(|s| matches!(s.prim, Prim::Conv { c_out: 27, k: 1, bias: true, .. })));
    }

    #[test]
    fn detect_rejects_inconsistent_channel_plan() {
        let anchors = vec![vec![10.0, 13.0]; 3];
        let err = expand_block(&spec(BlockKind::Detect { nc: 4, anchors }, vec![128, 256, 512], 27)).unwrap_err();
        assert!(err.to_string().contains("na*(nc+5)"), "{err}");
    }
}

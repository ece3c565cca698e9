//! Fixtures shared by the criterion benches.

use neuron_core::wire::{PacketKind, StateScript, SynthConfig, Synthesizer, WirePacket};
use neuron_core::ChannelLayout;

/// A relaxed-then-focused script, ten seconds per segment.
pub const FOCUS_RELAX: &str = include_str!("../../../assets/focus_relax.json");

/// `n` synthetic packets of `kind`, with rows cycled or truncated to `channels`.
pub fn packets(kind: PacketKind, channels: usize, n: usize, seed: u64) -> Vec<WirePacket> {
    let script = StateScript::from_json(FOCUS_RELAX).expect("bundled script parses");
    let cfg = SynthConfig {
        seed,
        loop_script: true,
        ..SynthConfig::default()
    };
    let mut synth = Synthesizer::new(script, cfg, ChannelLayout::default()).expect("bundled script is valid");
    (0..n)
        .map(|_| {
            let mut p = synth.next_packets(&[kind]).1.remove(0);
            let rows = std::mem::take(&mut p.payload);
            p.payload = (0..channels).map(|c| rows[c % rows.len()].clone()).collect();
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packets_have_requested_shape() {
        let ps = packets(PacketKind::FftFrame, 4, 3, 1);
        assert_eq!(ps.len(), 3);
        assert!(ps.iter().all(|p| p.channels() == 4 && p.validate().is_ok()));
        assert!(ps.windows(2).all(|w| w[0].seq < w[1].seq));
    }
}

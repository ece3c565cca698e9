//! Script synthesis and packet decoding shared by several subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use neuron_core::dsp::{self, BandSpec, Spectrum};
use neuron_core::wire::{PacketKind, StateScript, SynthConfig, SynthFrame, Synthesizer, WirePacket};
use neuron_core::{ChannelLayout, DataTree};

pub fn load_script(path: &Path) -> Result<StateScript> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    StateScript::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_script_str(text: &str) -> Result<StateScript> {
    Ok(StateScript::from_json(text)?)
}

pub fn synthesizer(script: StateScript, seed: u64, loop_script: bool, start_ms: u64) -> Result<Synthesizer> {
    let cfg = SynthConfig {
        seed,
        loop_script,
        start_ms,
        ..SynthConfig::default()
    };
    Ok(Synthesizer::new(script, cfg, ChannelLayout::default())?)
}

/// Every frame of a finite script with its FFT packet.
pub fn script_frames(script: StateScript, seed: u64) -> Result<Vec<(SynthFrame, WirePacket)>> {
    let mut synth = synthesizer(script, seed, false, 0)?;
    let mut out = Vec::new();
    while !synth.is_finished() {
        let (frame, mut packets) = synth.next_packets(&[PacketKind::FftFrame]);
        out.push((frame, packets.remove(0)));
    }
    Ok(out)
}

/// Channels × bands tree for a packet, computed the way `band_power` does.
pub fn band_tree(p: &WirePacket, fs_hz: f64, bands: &[BandSpec]) -> Result<DataTree> {
    let tree = match p.kind {
        PacketKind::BandPowerFrame => DataTree::from_matrix(&p.payload)?,
        PacketKind::FftFrame => dsp::band_matrix(&Spectrum::from_bins(fs_hz, p.payload.clone())?, bands)?,
        PacketKind::RawWindow => dsp::band_matrix(&dsp::fft_spectrum(&p.payload, fs_hz)?, bands)?,
    };
    Ok(tree)
}

/// Seconds since the start of the frame's segment.
pub fn time_in_segment(script: &StateScript, t: f64) -> f64 {
    let mut start = 0.0;
    for s in &script.segments {
        if t < start + s.duration_s {
            return t - start;
        }
        start += s.duration_s;
    }
    t - start
}

//! Synthetic multi-channel EEG standing in for a headset.
//!
//! Every channel is a sum of sinusoids, one per band at the band's centre
//! frequency, plus white Gaussian noise. A [`StateScript`] sets the per-band
//! amplitudes (µV) of each channel group over consecutive segments.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{quantize, ChannelLayout, PacketKind, UdpSender, WireError, WirePacket};
use crate::dsp::{self, BandSpec, Spectrum};

/// Per-band amplitudes for a set of channels. `"*"` selects every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeGroup {
    pub channels: Vec<String>,
    pub amplitudes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub groups: Vec<AmplitudeGroup>,
}

fn default_noise() -> f64 {
    1.0
}

/// Ordered segments; serialised as a bare JSON list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateScript {
    pub segments: Vec<Segment>,
}

impl StateScript {
    pub fn from_json(text: &str) -> Result<Self, WireError> {
        serde_json::from_str(text).map_err(|e| WireError::Script(e.to_string()))
    }

    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn validate(&self, layout: &ChannelLayout, bands: &[BandSpec]) -> Result<(), WireError> {
        if self.segments.is_empty() {
            return Err(WireError::Script("script has no segments".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(WireError::Script(format!("segment {i}: duration must be > 0")));
            }
            if !(seg.noise_std >= 0.0 && seg.noise_std.is_finite()) {
                return Err(WireError::Script(format!("segment {i}: noise_std must be >= 0")));
            }
            for g in &seg.groups {
                for ch in &g.channels {
                    if ch != "*" && layout.index_of(ch).is_none() {
                        return Err(WireError::Script(format!("segment {i}: unknown channel {ch}")));
                    }
                }
                for (band, &amp) in &g.amplitudes {
                    if !bands.iter().any(|b| &b.name == band) {
                        return Err(WireError::Script(format!("segment {i}: unknown band {band}")));
                    }
                    if !(amp >= 0.0 && amp.is_finite()) {
                        return Err(WireError::Script(format!(
                            "segment {i}: amplitude for {band} must be >= 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fs_hz: f64,
    pub packet_rate_hz: f64,
    pub n_fft: usize,
    pub bands: Vec<BandSpec>,
    pub seed: u64,
    /// Wall-clock epoch ms of frame 0.
    pub start_ms: u64,
    /// Restart the script after its last segment instead of holding it.
    pub loop_script: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fs_hz: 125.0,
            packet_rate_hz: 25.0,
            n_fft: 256,
            bands: dsp::default_bands(),
            seed: 0,
            start_ms: 0,
            loop_script: false,
        }
    }
}

/// One analysis frame and its derived products.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub index: u64,
    pub time_s: f64,
    pub segment: usize,
    pub label: Option<String>,
    /// channels × n_fft window ending at `time_s`.
    pub raw: Vec<Vec<f64>>,
    pub spectrum: Spectrum,
    /// channels × bands.
    pub band_powers: Vec<Vec<f64>>,
}

impl SynthFrame {
    pub fn timestamp_ms(&self, start_ms: u64) -> u64 {
        start_ms + (self.time_s * 1000.0).round() as u64
    }

    /// Wire packet of the requested kind at streaming precision.
    pub fn packet(&self, kind: PacketKind, seq: u64, timestamp_ms: u64) -> WirePacket {
        let rows = match kind {
            PacketKind::RawWindow => &self.raw,
            PacketKind::FftFrame => &self.spectrum.bins,
            PacketKind::BandPowerFrame => &self.band_powers,
        };
        let payload = rows
            .iter()
            .map(|r| r.iter().map(|&v| quantize(v)).collect())
            .collect();
        WirePacket::new(kind, seq, timestamp_ms, payload)
    }
}

pub struct Synthesizer {
    script: StateScript,
    cfg: SynthConfig,
    layout: ChannelLayout,
    /// [segment][channel][band] amplitude in µV.
    amps: Vec<Vec<Vec<f64>>>,
    /// [channel][band] phase offset.
    phases: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    window: Vec<std::collections::VecDeque<f64>>,
    next_sample: i64,
    frame: u64,
    seq: u64,
}

impl Synthesizer {
    pub fn new(
        script: StateScript,
        cfg: SynthConfig,
        layout: ChannelLayout,
    ) -> Result<Self, WireError> {
        if !(cfg.fs_hz > 0.0 && cfg.packet_rate_hz > 0.0) {
            return Err(WireError::Script("fs and packet rate must be > 0".into()));
        }
        if cfg.n_fft < 32 || !cfg.n_fft.is_power_of_two() {
            return Err(WireError::Script(format!("n_fft {} must be a power of two >= 32", cfg.n_fft)));
        }
        script.validate(&layout, &cfg.bands)?;
        let n_ch = layout.len();
        let n_b = cfg.bands.len();
        let amps = script
            .segments
            .iter()
            .map(|seg| {
                let mut m = vec![vec![0.0; n_b]; n_ch];
                for g in &seg.groups {
                    let chans: Vec<usize> = if g.channels.iter().any(|c| c == "*") {
                        (0..n_ch).collect()
                    } else {
                        g.channels.iter().filter_map(|c| layout.index_of(c)).collect()
                    };
                    for (band, &amp) in &g.amplitudes {
                        let bi = cfg.bands.iter().position(|b| &b.name == band).unwrap();
                        for &c in &chans {
                            m[c][bi] = amp;
                        }
                    }
                }
                m
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let phases = (0..n_ch)
            .map(|_| (0..n_b).map(|_| rng.gen_range(0.0..2.0 * PI)).collect())
            .collect();
        let mut synth = Synthesizer {
            window: vec![std::collections::VecDeque::with_capacity(cfg.n_fft); n_ch],
            next_sample: -(cfg.n_fft as i64),
            script,
            cfg,
            layout,
            amps,
            phases,
            rng,
            frame: 0,
            seq: 0,
        };
        for _ in 0..synth.cfg.n_fft {
            synth.push_sample();
        }
        Ok(synth)
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    /// Segment active at `t` seconds; negative times map to the first segment.
    pub fn segment_at(&self, t: f64) -> usize {
        let total = self.script.total_duration_s();
        let mut t = t.max(0.0);
        if self.cfg.loop_script {
            t %= total;
        }
        let mut acc = 0.0;
        for (i, seg) in self.script.segments.iter().enumerate() {
            acc += seg.duration_s;
            if t < acc {
                return i;
            }
        }
        self.script.segments.len() - 1
    }

    pub fn is_finished(&self) -> bool {
        !self.cfg.loop_script && self.frame_time(self.frame) >= self.script.total_duration_s()
    }

    fn frame_time(&self, k: u64) -> f64 {
        k as f64 / self.cfg.packet_rate_hz
    }

    /// Noise-free model value of channel `c` at time `t`.
    pub fn clean_sample(&self, segment: usize, c: usize, t: f64) -> f64 {
        self.cfg
            .bands
            .iter()
            .enumerate()
            .map(|(b, band)| {
                self.amps[segment][c][b]
                    * (2.0 * PI * band.center_hz() * t + self.phases[c][b]).sin()
            })
            .sum()
    }

    fn push_sample(&mut self) {
        let t = self.next_sample as f64 / self.cfg.fs_hz;
        let seg = self.segment_at(t);
        let noise_std = self.script.segments[seg].noise_std;
        let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).unwrap();
        for c in 0..self.layout.len() {
            let mut x = self.clean_sample(seg, c, t);
            if noise_std > 0.0 {
                x += noise.sample(&mut self.rng);
            }
            let w = &mut self.window[c];
            if w.len() == self.cfg.n_fft {
                w.pop_front();
            }
            w.push_back(x);
        }
        self.next_sample += 1;
    }

    pub fn next_frame(&mut self) -> SynthFrame {
        let k = self.frame;
        let time_s = self.frame_time(k);
        let end = (time_s * self.cfg.fs_hz).round() as i64;
        while self.next_sample < end {
            self.push_sample();
        }
        let raw: Vec<Vec<f64>> = self.window.iter().map(|w| w.iter().copied().collect()).collect();
        let spectrum = dsp::fft_spectrum(&raw, self.cfg.fs_hz).expect("validated window length");
        let band_powers = dsp::band_matrix(&spectrum, &self.cfg.bands)
            .expect("bands validated against Nyquist")
            .to_matrix();
        let segment = self.segment_at(time_s);
        self.frame += 1;
        SynthFrame {
            index: k,
            time_s,
            segment,
            label: self.script.segments[segment].label.clone(),
            raw,
            spectrum,
            band_powers,
        }
    }

    /// Next frame as wire packets of the given kinds, with session-wide seq numbers.
    pub fn next_packets(&mut self, kinds: &[PacketKind]) -> (SynthFrame, Vec<WirePacket>) {
        let frame = self.next_frame();
        let ts = frame.timestamp_ms(self.cfg.start_ms);
        let packets = kinds
            .iter()
            .map(|&k| {
                self.seq += 1;
                frame.packet(k, self.seq, ts)
            })
            .collect();
        (frame, packets)
    }
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub kinds: Vec<PacketKind>,
    /// Pace packets at the configured rate; otherwise send as fast as possible.
    pub realtime: bool,
    pub max_duration: Option<Duration>,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            kinds: vec![
                PacketKind::RawWindow,
                PacketKind::FftFrame,
                PacketKind::BandPowerFrame,
            ],
            realtime: true,
            max_duration: None,
        }
    }
}

/// Streams frames until the script ends, `max_duration` passes or `stop` is set.
/// Returns the number of datagrams sent.
pub fn synth_stream(
    synth: &mut Synthesizer,
    sender: &UdpSender,
    opts: &StreamOptions,
    stop: &AtomicBool,
) -> Result<u64, WireError> {
    let start = Instant::now();
    let period = Duration::from_secs_f64(1.0 / synth.config().packet_rate_hz);
    let mut sent = 0;
    let mut k: u32 = 0;
    while !synth.is_finished() && !stop.load(Ordering::Relaxed) {
        let due = period * k;
        if opts.max_duration.is_some_and(|m| due >= m) {
            break;
        }
        if opts.realtime {
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
        let (_, packets) = synth.next_packets(&opts.kinds);
        for p in &packets {
            sender.send(p)?;
            sent += 1;
        }
        k += 1;
    }
    Ok(sent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occipital_alpha(noise: f64) -> StateScript {
        StateScript::from_json(&format!(
            r#"[{{"duration_s":10,"label":"relaxed","noise_std":{noise},"groups":[
                {{"channels":["*"],"amplitudes":{{"delta":1,"theta":1,"alpha":1,"beta":1,"gamma":1}}}},
                {{"channels":["O1","O2"],"amplitudes":{{"alpha":10}}}}]}}]"#
        ))
        .unwrap()
    }

    /// Direct DFT of the windowed noise-free model plus the white-noise floor
    /// spread uniformly over the band's bins.
    fn oracle_share(synth: &Synthesizer, frame: &SynthFrame, c: usize, band: usize, noise: f64) -> f64 {
        let n = synth.cfg.n_fft;
        let fs = synth.cfg.fs_hz;
        let t0 = frame.time_s - n as f64 / fs;
        let x: Vec<f64> = (0..n)
            .map(|i| synth.clean_sample(frame.segment, c, t0 + i as f64 / fs))
            .collect();
        let w = dsp::hann(n);
        let mut bins = vec![0.0; n / 2 + 1];
        for (k, bin) in bins.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x[i] * w[i] * a.cos();
                im += x[i] * w[i] * a.sin();
            }
            let p = (re * re + im * im) / (n * n) as f64;
            *bin = if k == 0 || k == n / 2 { p } else { 2.0 * p };
        }
        // noise: E[total] = σ²·mean(w²), spread evenly across n/2 bins
        let w2 = w.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let per_bin = noise * noise * w2 / (n / 2) as f64;
        let df = fs / n as f64;
        let power = |b: &BandSpec| -> f64 {
            bins.iter()
                .enumerate()
                .filter(|(k, _)| {
                    let f = *k as f64 * df;
                    f >= b.lo_hz && f < b.hi_hz
                })
                .map(|(_, p)| p + per_bin)
                .sum()
        };
        let bands = &synth.cfg.bands;
        power(&bands[band]) / bands.iter().map(power).sum::<f64>()
    }

    #[test]
    fn alpha_dominates_occipital_rows() {
        let layout = ChannelLayout::default();
        let mut s = Synthesizer::new(occipital_alpha(1.0), SynthConfig::default(), layout.clone()).unwrap();
        let o1 = layout.index_of("O1").unwrap();
        let o2 = layout.index_of("O2").unwrap();
        let mut shares = Vec::new();
        let mut oracle = Vec::new();
        for _ in 0..100 {
            let f = s.next_frame();
            for &c in &[o1, o2] {
                let row = &f.band_powers[c];
                let share = row[2] / row.iter().sum::<f64>();
                assert!(row.iter().enumerate().all(|(b, &p)| b == 2 || p < row[2]));
                shares.push(share);
            }
            oracle.push(oracle_share(&s, &f, o1, 2, 1.0));
        }
        let mean_share = shares.iter().sum::<f64>() / shares.len() as f64;
        let mean_oracle = oracle.iter().sum::<f64>() / oracle.len() as f64;
        assert!(mean_share > 0.8, "alpha share {mean_share}");
        assert!((mean_share - mean_oracle).abs() < 0.03, "{mean_share} vs oracle {mean_oracle}");
    }

    #[test]
    fn silence_gives_noise_floor_only() {
        let script = StateScript::from_json(r#"[{"duration_s":2,"noise_std":0.5}]"#).unwrap();
        let mut s = Synthesizer::new(script, SynthConfig::default(), ChannelLayout::default()).unwrap();
        let f = s.next_frame();
        // windowed mean square of σ = 0.5 noise is 0.25 · 3/8
        let total: f64 = f.spectrum.total_power().iter().sum::<f64>() / 16.0;
        assert!(total < 0.2, "{total}");
        assert!(f.band_powers.iter().flatten().all(|&p| p >= 0.0 && p.is_finite()));

        let silent = StateScript::from_json(r#"[{"duration_s":2,"noise_std":0}]"#).unwrap();
        let mut s = Synthesizer::new(silent, SynthConfig::default(), ChannelLayout::default()).unwrap();
        assert!(s.next_frame().band_powers.iter().flatten().all(|&p| p == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let mk = || Synthesizer::new(occipital_alpha(1.0), SynthConfig::default(), ChannelLayout::default()).unwrap();
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..5 {
            assert_eq!(a.next_frame().band_powers, b.next_frame().band_powers);
        }
    }

    #[test]
    fn packets_carry_increasing_seq_and_valid_payloads() {
        let mut s = Synthesizer::new(occipital_alpha(1.0), SynthConfig::default(), ChannelLayout::default()).unwrap();
        let kinds = [PacketKind::RawWindow, PacketKind::FftFrame, PacketKind::BandPowerFrame];
        let mut last = 0;
        for _ in 0..3 {
            let (_, ps) = s.next_packets(&kinds);
            for p in ps {
                assert!(p.seq > last);
                last = p.seq;
                let bytes = crate::wire::encode_packet(&p).unwrap();
                assert!(bytes.len() <= crate::wire::MAX_DATAGRAM);
            }
        }
    }

    #[test]
    fn frames_follow_segments_and_finish() {
        let script = StateScript::from_json(
            r#"[{"duration_s":1,"label":"a"},{"duration_s":1,"label":"b"}]"#,
        )
        .unwrap();
        let mut s = Synthesizer::new(script, SynthConfig::default(), ChannelLayout::default()).unwrap();
        let labels: Vec<_> = (0..50).map(|_| s.next_frame().label.unwrap()).collect();
        assert_eq!(labels.iter().filter(|l| *l == "a").count(), 25);
        assert!(s.is_finished());
    }

    #[test]
    fn script_validation() {
        let layout = ChannelLayout::default();
        let bands = dsp::default_bands();
        let bad = [
            r#"[]"#,
            r#"[{"duration_s":0}]"#,
            r#"[{"duration_s":1,"groups":[{"channels":["Cz"],"amplitudes":{"alpha":1}}]}]"#,
            r#"[{"duration_s":1,"groups":[{"channels":["O1"],"amplitudes":{"mu":1}}]}]"#,
            r#"[{"duration_s":1,"groups":[{"channels":["O1"],"amplitudes":{"alpha":-1}}]}]"#,
        ];
        for text in bad {
            let s = StateScript::from_json(text).unwrap();
            assert!(s.validate(&layout, &bands).is_err(), "{text}");
        }
    }
}

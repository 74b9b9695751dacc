//! Reference latency fixture for exercising calibration end to end.
//!
//! One step-latency pair (cluster-only and accelerated) for each of three
//! compact-transformer tuning presets on a representative dual-engine SoC at
//! 360 MHz. The values sit inside the latency bands published for this model
//! family (cluster-only steps between 143 and 200 ms, accelerated steps
//! between 41 and 87 ms) and anchor the fitted efficiency factors at
//! realistic operating points. The accelerated `ft2` step outrunning `lora2`
//! despite more arithmetic is deliberate: adapters add many small extra
//! GEMMs, and per-offload dispatch overhead prices them in.

/// A named preset with its measured step latency on both engines.
#[derive(Debug, Clone, Copy)]
pub struct AnchorPoint {
    pub strategy: &'static str,
    pub cluster_ms: f64,
    pub accel_ms: f64,
}

/// The calibration fixture, keyed by tuning-strategy name.
pub fn reference_anchors() -> Vec<AnchorPoint> {
    vec![
        AnchorPoint { strategy: "ft1", cluster_ms: 151.6, accel_ms: 45.7 },
        AnchorPoint { strategy: "lora2", cluster_ms: 155.8, accel_ms: 71.0 },
        AnchorPoint { strategy: "ft2", cluster_ms: 197.1, accel_ms: 61.8 },
    ]
}

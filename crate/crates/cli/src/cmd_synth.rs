use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use evseg::feature_stream::{generate_synthetic, write_stream, Regime, SyntheticScenario};
use evseg::io::write_annotations;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Context};
use crate::manifest::{existing, Outcome};
use crate::settings::SynthSettings;

pub const STREAM: &str = "stream.evsg";
pub const ANNOTATIONS: &str = "annotations.csv";
pub const SCENARIO: &str = "scenario.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthInvocation {
    /// The scenario file it was read from, if any.
    pub source: Option<PathBuf>,
    pub scenario: SyntheticScenario,
}

pub fn invocation(s: SynthSettings) -> Result<SynthInvocation, CliError> {
    let (source, mut scenario) = match &s.scenario {
        Some(path) => {
            let path = existing(path)?;
            let text = std::fs::read_to_string(&path).at(&path)?;
            let scenario = SyntheticScenario::from_toml(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            (Some(path), scenario)
        }
        None => {
            let regime = Regime {
                noise: s.noise,
                drift: s.drift,
                mean_scale: s.mean_scale,
                ..Regime::default()
            };
            let scenario = SyntheticScenario::evenly_spaced(
                s.frames,
                s.grid_side,
                s.feature_dim,
                s.boundaries,
                regime,
                s.seed.unwrap_or(0),
            );
            (None, scenario)
        }
    };
    if let Some(seed) = s.seed {
        scenario.seed = seed;
    }
    if let Some(fps) = s.fps {
        scenario.fps = fps;
    }
    scenario
        .validate()
        .map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
    Ok(SynthInvocation { source, scenario })
}

pub fn execute(inv: &SynthInvocation, out: &Path) -> Result<Outcome, CliError> {
    let (frames, truth) = generate_synthetic(&inv.scenario)?;
    let header = frames.header();

    let stream = out.join(STREAM);
    let file = File::create(&stream).at(&stream)?;
    write_stream(header, frames, BufWriter::new(file))
        .and_then(|mut w| std::io::Write::flush(&mut w).map_err(Into::into))
        .at(&stream)?;

    let ann = out.join(ANNOTATIONS);
    write_annotations(File::create(&ann).at(&ann)?, &truth).at(&ann)?;

    let scen = out.join(SCENARIO);
    std::fs::write(&scen, inv.scenario.to_toml()).at(&scen)?;

    Ok(Outcome {
        outputs: vec![STREAM.into(), ANNOTATIONS.into(), SCENARIO.into()],
        report: json!({
            "frames": header.frame_count,
            "grid_side": header.grid_side,
            "feature_dim": header.feature_dim,
            "fps": header.fps,
            "events": truth.len(),
        }),
        failure: None,
    })
}

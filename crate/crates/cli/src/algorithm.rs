//! The inference loop run by `predict`, instrumented so tests can check the
//! exact order of perception, transition and rendering steps.

use serde::{Deserialize, Serialize};

use progvid_core::dynamics::{transition_detailed, ClampEvent};
use progvid_core::perceive::{assemble_trajectory, perceive_frame, PerceiveError};
use progvid_core::pipeline::{PipelineError, Prediction};
use progvid_core::render::{render_state, RenderConfig};
use progvid_core::{DynamicsProgram, Frame, State, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum TraceEvent {
    Perceive { frame: usize },
    Transition { step: usize },
    Render { step: usize },
}

/// Perceives every seen frame, then alternates one transition and one render
/// for each of `steps` future frames, starting from the last perceived state.
pub fn predict_traced(
    prog: &DynamicsProgram,
    seen: &[Frame],
    steps: usize,
    render: &RenderConfig,
    trace: &mut Vec<TraceEvent>,
) -> Result<Prediction, PipelineError> {
    let mut observations = Vec::with_capacity(seen.len());
    for (t, f) in seen.iter().enumerate() {
        trace.push(TraceEvent::Perceive { frame: t });
        observations.push(perceive_frame(f, render).map_err(|e| PerceiveError::AtFrame {
            frame: t,
            source: Box::new(e),
        })?);
    }
    let perceived = assemble_trajectory(&observations, prog.schema())?;
    let last_seen = seen.len() - 1;
    let mut states: Vec<State> = perceived.states().to_vec();
    let mut frames = seen.to_vec();
    let mut clamped = Vec::new();
    for step in 1..=steps {
        trace.push(TraceEvent::Transition { step });
        let next = transition_detailed(prog, &states[states.len() - 1]).map_err(|e| match e {
            progvid_core::dynamics::DynamicsError::Eval { error, .. } => {
                progvid_core::dynamics::DynamicsError::Eval { step, error }
            }
            other => other,
        })?;
        clamped.extend(next.clamped.into_iter().map(|attribute| ClampEvent { step, attribute }));
        trace.push(TraceEvent::Render { step });
        frames.push(render_state(&next.state, render)?);
        states.push(next.state);
    }
    Ok(Prediction {
        states: Trajectory::new(states)?,
        frames,
        last_seen,
        clamped,
    })
}

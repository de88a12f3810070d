//! Counterfactual edits of a symbolic state or of the fitted parameters.

use std::fmt;
use std::str::FromStr;

use progvid_core::{DynamicsProgram, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditOp {
    Set(f64),
    Scale(f64),
    Negate,
}

impl EditOp {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            EditOp::Set(x) => x,
            EditOp::Scale(k) => v * k,
            EditOp::Negate => -v,
        }
    }
}

/// `name:set:value`, `name:scale:factor` or `name:negate`. The name is a
/// state attribute or a program parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpec {
    pub target: String,
    pub op: EditOp,
}

impl FromStr for EditSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let value = |v: Option<&&str>| -> Result<f64, String> {
            let v = v.ok_or_else(|| format!("edit `{s}` needs a value"))?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("edit `{s}`: `{v}` is not a finite number"))
        };
        let (target, op) = match parts.as_slice() {
            [t, "set", ..] => (t, EditOp::Set(value(parts.get(2))?)),
            [t, "scale", ..] => (t, EditOp::Scale(value(parts.get(2))?)),
            [t, "negate"] => (t, EditOp::Negate),
            [_, "negate", ..] => return Err(format!("edit `{s}`: negate takes no value")),
            [_, op, ..] => return Err(format!("edit `{s}`: unknown operation `{op}`, expected set, scale or negate")),
            _ => return Err(format!("edit `{s}` is not of the form name:op[:value]")),
        };
        if parts.len() > 3 {
            return Err(format!("edit `{s}` has too many fields"));
        }
        if target.is_empty() {
            return Err(format!("edit `{s}` names no attribute"));
        }
        Ok(EditSpec {
            target: target.to_string(),
            op,
        })
    }
}

impl fmt::Display for EditSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            EditOp::Set(v) => write!(f, "{}:set:{v}", self.target),
            EditOp::Scale(v) => write!(f, "{}:scale:{v}", self.target),
            EditOp::Negate => write!(f, "{}:negate", self.target),
        }
    }
}

/// Applies edits in order. A name is looked up among the state attributes
/// first, then among the program parameters; results must stay in bounds.
pub fn apply_edits(
    state: &State,
    prog: &DynamicsProgram,
    edits: &[EditSpec],
) -> Result<(State, DynamicsProgram), String> {
    let schema = state.schema().clone();
    let mut values = state.values().to_vec();
    let mut theta = prog.params().values();
    for e in edits {
        if let Some(i) = schema.index_of(&e.target) {
            let a = &schema.attributes()[i];
            let v = e.op.apply(values[i]);
            if !a.contains(v) {
                return Err(format!(
                    "edit `{e}` gives {} = {v}, outside [{}, {}]",
                    a.name, a.lower, a.upper
                ));
            }
            values[i] = v;
        } else if let Some(i) = prog.params().index_of(&e.target) {
            let p = &prog.params().entries()[i];
            let v = e.op.apply(theta[i]);
            if !(v.is_finite() && v >= p.lower && v <= p.upper) {
                return Err(format!(
                    "edit `{e}` gives parameter {} = {v}, outside [{}, {}]",
                    p.name, p.lower, p.upper
                ));
            }
            theta[i] = v;
        } else {
            let known: Vec<&str> = schema
                .names()
                .chain(prog.params().entries().iter().map(|p| p.name.as_str()))
                .collect();
            return Err(format!("unknown attribute `{}`; known names: {}", e.target, known.join(", ")));
        }
    }
    let state = State::new(schema, values).map_err(|e| e.to_string())?;
    let prog = prog.with_values(&theta).map_err(|e| e.to_string())?;
    Ok((state, prog))
}

use std::fmt;

use thiserror::Error;

use super::ast::Program;
use super::eval::{LocatedEvalError, SlotExpr, SlotGuard};
use super::Pos;
use crate::model::{ParamVector, StateSchema};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unresolved variable `{0}`")]
    UnresolvedVariable(String),
    #[error("`{0}` names both a state attribute and a parameter")]
    NamespaceCollision(String),
    #[error("default block does not assign attribute `{0}`")]
    IncompleteDefault(String),
    #[error("`{0}` is not a state attribute and cannot be assigned")]
    UnknownTarget(String),
}

/// Wrapper so a list of validation errors can travel as one error value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

impl std::error::Error for ValidationErrors {}

/// Checks that every variable resolves to exactly one attribute or parameter
/// and that the default block assigns every attribute.
pub fn validate(
    program: &Program,
    schema: &StateSchema,
    params: &ParamVector,
) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    let push = |e: ValidationError, errors: &mut Vec<ValidationError>| {
        if !errors.contains(&e) {
            errors.push(e);
        }
    };

    for p in params.entries() {
        if schema.index_of(&p.name).is_some() {
            push(ValidationError::NamespaceCollision(p.name.clone()), &mut errors);
        }
    }

    let resolves = |name: &str| schema.index_of(name).is_some() || params.index_of(name).is_some();
    let check_vars = |vars: Vec<&str>, errors: &mut Vec<ValidationError>| {
        for v in vars {
            if !resolves(v) {
                push(ValidationError::UnresolvedVariable(v.to_string()), errors);
            }
        }
    };

    for rule in &program.rules {
        check_vars(rule.guard.variables(), &mut errors);
        for u in &rule.updates {
            check_vars(u.expr.variables(), &mut errors);
        }
    }
    for u in &program.defaults {
        check_vars(u.expr.variables(), &mut errors);
    }

    for u in program
        .rules
        .iter()
        .flat_map(|r| r.updates.iter())
        .chain(program.defaults.iter())
    {
        if schema.index_of(&u.target).is_none() {
            let e = ValidationError::UnknownTarget(u.target.clone());
            if !errors.contains(&e) {
                errors.push(e);
            }
        }
    }

    for name in schema.names() {
        if !program.defaults.iter().any(|u| u.target == name) {
            errors.push(ValidationError::IncompleteDefault(name.to_string()));
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone)]
struct CompiledRule {
    guard: SlotGuard,
    pos: Pos,
    /// `(attribute index, expression, position)`
    updates: Vec<(usize, SlotExpr, Pos)>,
}

/// A validated program with variables resolved against a binding vector laid
/// out as `[attributes..., parameters...]`.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    rules: Vec<CompiledRule>,
    defaults: Vec<(SlotExpr, Pos)>,
    n_attrs: usize,
    n_params: usize,
}

impl CompiledProgram {
    pub fn new(
        program: &Program,
        schema: &StateSchema,
        params: &ParamVector,
    ) -> Result<Self, Vec<ValidationError>> {
        validate(program, schema, params)?;
        let n_attrs = schema.len();
        let resolve = |name: &str| {
            schema
                .index_of(name)
                .or_else(|| params.index_of(name).map(|i| n_attrs + i))
        };
        // validation guarantees every name resolves
        let compile_err = |e: super::EvalError| vec![ValidationError::UnresolvedVariable(e.to_string())];

        let mut rules = Vec::with_capacity(program.rules.len());
        for r in &program.rules {
            let updates = r
                .updates
                .iter()
                .map(|u| {
                    let idx = schema.index_of(&u.target).expect("validated target");
                    SlotExpr::compile(&u.expr, &resolve).map(|e| (idx, e, u.pos))
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(compile_err)?;
            rules.push(CompiledRule {
                guard: SlotGuard::compile(&r.guard, &resolve).map_err(compile_err)?,
                pos: r.updates.first().map(|u| u.pos).unwrap_or(Pos { line: 0, col: 0 }),
                updates,
            });
        }

        let mut defaults = Vec::with_capacity(n_attrs);
        for name in schema.names() {
            let u = program
                .defaults
                .iter()
                .find(|u| u.target == name)
                .expect("validated default");
            defaults.push((SlotExpr::compile(&u.expr, &resolve).map_err(compile_err)?, u.pos));
        }

        Ok(CompiledProgram {
            rules,
            defaults,
            n_attrs,
            n_params: params.len(),
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Evaluates one step. `slots` holds attributes then parameters; `out`
    /// receives the new attribute values. Returns the index of the rule that
    /// fired, if any.
    pub fn step(&self, slots: &[f64], out: &mut [f64]) -> Result<Option<usize>, LocatedEvalError> {
        debug_assert_eq!(slots.len(), self.n_attrs + self.n_params);
        debug_assert_eq!(out.len(), self.n_attrs);
        let mut fired = None;
        for (k, r) in self.rules.iter().enumerate() {
            let hit = r
                .guard
                .eval(slots)
                .map_err(|error| LocatedEvalError { pos: r.pos, error })?;
            if hit {
                fired = Some(k);
                break;
            }
        }
        let rule = fired.map(|k| &self.rules[k]);
        for (i, (expr, pos)) in self.defaults.iter().enumerate() {
            let (expr, pos) = match rule.and_then(|r| r.updates.iter().find(|u| u.0 == i)) {
                Some((_, e, p)) => (e, p),
                None => (expr, pos),
            };
            out[i] = expr
                .eval(slots)
                .map_err(|error| LocatedEvalError { pos: *pos, error })?;
        }
        Ok(fired)
    }
}

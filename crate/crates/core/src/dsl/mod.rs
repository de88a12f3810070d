//! The dynamics-program language: guarded simultaneous updates over state
//! attributes and named parameters.
//!
//! ```text
//! when x2 - x1 <= r1 + r2 and vx1 - vx2 > 0:
//!   vx1 <- vx2;
//!   vx2 <- vx1;
//! default:
//!   x1 <- x1 + vx1;
//!   ...
//! ```
//!
//! Rules are tried in order and the first whose guard holds overrides the
//! default updates for the attributes it assigns. All right-hand sides of a
//! step read the values from before the step.

mod ast;
mod eval;
mod lexer;
mod parser;
mod validate;

use std::fmt;

pub use ast::{BinOp, CmpOp, Expr, Func, Guard, Pos, Program, Rule, Update};
pub use eval::{eval, eval_guard, step_map, EvalError, LocatedEvalError, SlotExpr, SlotGuard};
pub use parser::{parse, parse_expr, parse_guard};
pub use validate::{validate, CompiledProgram, ValidationError, ValidationErrors};

/// A syntax error with a 1-based line:column position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            pos,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.message)
    }
}

impl std::error::Error for ParseError {}

pub const KEYWORDS: [&str; 5] = ["when", "default", "and", "or", "not"];

/// Keywords and built-in function names cannot name attributes or parameters.
pub fn is_reserved_word(word: &str) -> bool {
    KEYWORDS.contains(&word) || Func::from_name(word).is_some()
}

/// Short grammar reference, embedded in proposer prompts.
pub const GRAMMAR_REFERENCE: &str = r#"program      := rule* defaultBlock
rule         := "when" guard ":" updates
defaultBlock := "default" ":" updates
updates      := (ident "<-" expr ";")+
expr         := term (("+" | "-") term)*
term         := factor (("*" | "/") factor)*
factor       := "-"? atom
atom         := number | ident | fn "(" expr ("," expr)? ")" | "(" expr ")"
fn           := sin | cos | tan | abs | sqrt | sign | min | max
guard        := clause (("and" | "or") clause)*
clause       := "not"? (comparison | "(" guard ")")
comparison   := expr ("<" | "<=" | ">" | ">=" | "==" | "!=") expr"#;

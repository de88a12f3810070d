//! Recursive-descent parser for dynamics programs.
//!
//! ```text
//! program      := rule* defaultBlock
//! rule         := "when" guard ":" updates
//! defaultBlock := "default" ":" updates
//! updates      := (ident "<-" expr ";")+
//! expr         := term (("+" | "-") term)*
//! term         := factor (("*" | "/") factor)*
//! factor       := "-"? atom
//! atom         := number | ident | fn "(" expr ("," expr)? ")" | "(" expr ")"
//! guard        := conj ("or" conj)*
//! conj         := clause ("and" clause)*
//! clause       := "not"? (comparison | "(" guard ")")
//! comparison   := expr ("<" | "<=" | ">" | ">=" | "==" | "!=") expr
//! ```
//!
//! `and` binds tighter than `or`; binary operators associate to the left.

use super::ast::{BinOp, CmpOp, Expr, Func, Guard, Program, Rule, Update};
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, Pos};

pub fn parse(src: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(src)?;
    let program = p.program()?;
    Ok(program)
}

/// Parses a single expression (the whole input must be consumed).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

/// Parses a single guard (the whole input must be consumed).
pub fn parse_guard(src: &str) -> Result<Guard, ParseError> {
    let mut p = Parser::new(src)?;
    let g = p.guard()?;
    p.expect_eof()?;
    Ok(g)
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: tokenize(src)?,
            i: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::new(
            self.pos(),
            format!("expected {wanted}, found {}", self.peek().describe()),
        )
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.unexpected("end of input"))
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut rules = Vec::new();
        while *self.peek() == Tok::When {
            self.bump();
            let guard = self.guard()?;
            self.expect(Tok::Colon, "`:` after guard")?;
            let updates = self.updates()?;
            rules.push(Rule { guard, updates });
        }
        if *self.peek() != Tok::Default {
            return Err(self.unexpected("`when` or `default`"));
        }
        self.bump();
        self.expect(Tok::Colon, "`:` after `default`")?;
        let defaults = self.updates()?;
        match self.peek() {
            Tok::Eof => Ok(Program { rules, defaults }),
            Tok::Default => Err(ParseError::new(self.pos(), "duplicate default block")),
            Tok::When => Err(ParseError::new(
                self.pos(),
                "rules must precede the default block",
            )),
            _ => Err(self.unexpected("end of program")),
        }
    }

    fn updates(&mut self) -> Result<Vec<Update>, ParseError> {
        let mut out: Vec<Update> = Vec::new();
        loop {
            let pos = self.pos();
            let target = match self.peek() {
                Tok::Ident(name) => name.clone(),
                _ if out.is_empty() => return Err(self.unexpected("an assignment target")),
                _ => break,
            };
            // `min(` etc. are never assignment targets
            if Func::from_name(&target).is_some() {
                return Err(ParseError::new(
                    pos,
                    format!("`{target}` is a function and cannot be assigned"),
                ));
            }
            self.bump();
            self.expect(Tok::Arrow, "`<-`")?;
            let expr = self.expr()?;
            self.expect(Tok::Semi, "`;`")?;
            if out.iter().any(|u| u.target == target) {
                return Err(ParseError::new(
                    pos,
                    format!("`{target}` is assigned twice in one block"),
                ));
            }
            out.push(Update { target, expr, pos });
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let a = self.atom()?;
            return Ok(Expr::Neg(Box::new(a)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr::Num(n))
            }
            Tok::Ident(name) => {
                self.bump();
                match Func::from_name(&name) {
                    Some(func) => {
                        self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                        let mut args = vec![self.expr()?];
                        if *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        self.expect(Tok::RParen, "`)`")?;
                        if args.len() != func.arity() {
                            return Err(ParseError::new(
                                pos,
                                format!(
                                    "`{name}` takes {} argument(s), got {}",
                                    func.arity(),
                                    args.len()
                                ),
                            ));
                        }
                        Ok(Expr::Call(func, args))
                    }
                    None => Ok(Expr::Var(name)),
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => Err(self.unexpected("a number, identifier, or `(`")),
        }
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let mut lhs = self.conj()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.conj()?;
            lhs = Guard::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Guard, ParseError> {
        let mut lhs = self.clause()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.clause()?;
            lhs = Guard::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn clause(&mut self) -> Result<Guard, ParseError> {
        if *self.peek() == Tok::Not {
            self.bump();
            let inner = self.clause_body()?;
            return Ok(Guard::Not(Box::new(inner)));
        }
        self.clause_body()
    }

    fn clause_body(&mut self) -> Result<Guard, ParseError> {
        if *self.peek() == Tok::LParen {
            // `(` opens either a nested guard or a parenthesised expression
            let mark = self.i;
            self.bump();
            let nested = self
                .guard()
                .and_then(|g| self.expect(Tok::RParen, "`)`").map(|_| g));
            match nested {
                Ok(g) => return Ok(g),
                Err(guard_err) => {
                    self.i = mark;
                    return self.comparison().map_err(|cmp_err| {
                        // report whichever reading got further
                        if (guard_err.pos.line, guard_err.pos.col)
                            > (cmp_err.pos.line, cmp_err.pos.col)
                        {
                            guard_err
                        } else {
                            cmp_err
                        }
                    });
                }
            }
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Guard, ParseError> {
        let lhs = self.expr()?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            Tok::EqEq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            _ => return Err(self.unexpected("a comparison operator")),
        };
        self.bump();
        let rhs = self.expr()?;
        Ok(Guard::Cmp(op, lhs, rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Box<Expr> {
        Box::new(Expr::Var(s.into()))
    }

    #[test]
    fn inertia_program() {
        let p = parse("default: x <- x + vx; vx <- vx;").unwrap();
        assert!(p.rules.is_empty());
        assert_eq!(p.defaults.len(), 2);
    }

    #[test]
    fn multiplication_binds_tighter() {
        let e = parse_expr("a + b * c").unwrap();
        assert_eq!(
            e,
            Expr::Binary(
                BinOp::Add,
                var("a"),
                Box::new(Expr::Binary(BinOp::Mul, var("b"), var("c")))
            )
        );
    }

    #[test]
    fn subtraction_is_left_associative() {
        let e = parse_expr("a - b - c").unwrap();
        assert_eq!(
            e,
            Expr::Binary(
                BinOp::Sub,
                Box::new(Expr::Binary(BinOp::Sub, var("a"), var("b"))),
                var("c")
            )
        );
    }

    #[test]
    fn malformed_input_points_at_semicolon() {
        let err = parse("default: x <- (1 +;").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 19 });
    }

    #[test]
    fn duplicate_default_rejected() {
        let err = parse("default: x <- x;\ndefault: x <- x;").unwrap_err();
        assert_eq!(err.pos, Pos { line: 2, col: 1 });
        assert!(err.message.contains("duplicate default"));
    }

    #[test]
    fn double_assignment_rejected() {
        let err = parse("default: x <- 1; x <- 2;").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 18 });
    }

    #[test]
    fn missing_default_rejected() {
        assert!(parse("when x < 1: x <- 0;").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let g = parse_guard("a < 1 or b < 2 and c < 3").unwrap();
        assert!(matches!(g, Guard::Or(_, ref rhs) if matches!(**rhs, Guard::And(..))));
    }

    #[test]
    fn parenthesised_expression_in_comparison() {
        let g = parse_guard("(x + 1) * 2 < y").unwrap();
        assert!(matches!(g, Guard::Cmp(CmpOp::Lt, Expr::Binary(BinOp::Mul, ..), _)));
        let g = parse_guard("not (x < 1 and y > 2)").unwrap();
        assert!(matches!(g, Guard::Not(_)));
    }

    #[test]
    fn function_arity_checked() {
        assert!(parse_expr("min(a)").is_err());
        assert!(parse_expr("sin(a, b)").is_err());
        assert!(parse_expr("max(a, b)").is_ok());
    }

    #[test]
    fn rule_then_default() {
        let p = parse("when x2 - x1 <= r1 + r2 and vx1 - vx2 > 0: vx1 <- vx2; vx2 <- vx1;\ndefault: x1 <- x1 + vx1;")
            .unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(p.rules[0].updates.len(), 2);
    }
}

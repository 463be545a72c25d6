//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := base ('^' unsigned-int)?
//! base   := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers: `x<i>` (state), `u<j>` (input), `u<j>_d<k>` (k-th input
//! derivative), or a purely alphabetic parameter name.

use thiserror::Error;

use super::{Expr, Func, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{name}` at {line}:{column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },
}

/// Parses `text` into an expression tree (no simplification).
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        chars: text.char_indices().collect(),
        text,
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn location(&self, pos: usize) -> (usize, usize) {
        let offset = self.chars.get(pos).map_or(self.text.len(), |c| c.0);
        let before = &self.text[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        (line, column)
    }

    fn syntax(&self, message: &str) -> ParseError {
        let (line, column) = self.location(self.pos);
        ParseError::Syntax {
            line,
            column,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = lhs + self.term()?;
            } else if self.eat('-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat('*') {
                lhs = lhs * self.factor()?;
            } else if self.eat('/') {
                lhs = lhs / self.factor()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(-self.factor()?);
        }
        let base = self.base()?;
        if self.eat('^') {
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.syntax("expected unsigned integer exponent"));
            }
            let digits: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
            let k: i32 = digits
                .parse()
                .map_err(|_| self.syntax("exponent out of range"))?;
            return Ok(base.powi(k));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.syntax(&format!("unexpected character `{c}`"))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
        };
        digits(self);
        if self.peek() == Some('.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let s: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
        s.parse::<f64>().map(Expr::Const).map_err(|_| {
            let (line, column) = self.location(start);
            ParseError::Syntax {
                line,
                column,
                message: format!("malformed number `{s}`"),
            }
        })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
        let unknown = |p: &Self| {
            let (line, column) = p.location(start);
            ParseError::UnknownIdentifier {
                name: name.clone(),
                line,
                column,
            }
        };

        self.skip_ws();
        if self.peek() == Some('(') {
            let func = Func::from_name(&name).ok_or_else(|| unknown(self))?;
            self.pos += 1;
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(self.syntax("expected `)`"));
            }
            return Ok(Expr::call(func, arg));
        }
        if Func::from_name(&name).is_some() {
            return Err(self.syntax(&format!("function `{name}` requires an argument")));
        }
        classify_ident(&name).map(Expr::Var).ok_or_else(|| unknown(self))
    }
}

fn index_after(prefix: char, s: &str) -> Option<usize> {
    let rest = s.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok().filter(|&i| i >= 1)
}

fn classify_ident(name: &str) -> Option<Var> {
    if let Some(i) = index_after('x', name) {
        return Some(Var::State(i));
    }
    if let Some((head, order)) = name.split_once("_d") {
        let channel = index_after('u', head)?;
        if order.is_empty() || !order.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        return Some(Var::Input {
            channel,
            order: order.parse().ok()?,
        });
    }
    if let Some(j) = index_after('u', name) {
        return Some(Var::input(j));
    }
    if name.bytes().all(|b| b.is_ascii_alphabetic()) {
        return Some(Var::Param(name.to_string()));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn sum_with_power() {
        assert_eq!(tree("x1 + u1^2"), Expr::x(1) + Expr::u(1).powi(2));
    }

    #[test]
    fn atan_call() {
        assert_eq!(tree("atan(u1)"), Expr::call(Func::Atan, Expr::u(1)));
    }

    #[test]
    fn precedence_parenthesised_difference() {
        assert_eq!(tree("x1*(x2 - 3)"), Expr::x(1) * (Expr::x(2) - Expr::Const(3.0)));
    }

    #[test]
    fn power_binds_tighter_than_unary_minus() {
        assert_eq!(tree("-x1^2"), -(Expr::x(1).powi(2)));
        assert_eq!(tree("2*-x1"), Expr::Const(2.0) * -Expr::x(1));
    }

    #[test]
    fn left_associative() {
        assert_eq!(
            tree("x1 - x2 - x3"),
            (Expr::x(1) - Expr::x(2)) - Expr::x(3)
        );
        assert_eq!(tree("x1 / x2 * x3"), (Expr::x(1) / Expr::x(2)) * Expr::x(3));
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(tree("1.5e-3"), Expr::Const(1.5e-3));
        assert_eq!(tree("2E2"), Expr::Const(200.0));
        assert_eq!(tree(".25"), Expr::Const(0.25));
    }

    #[test]
    fn identifier_kinds() {
        assert_eq!(tree("u2_d3"), Expr::u_deriv(2, 3));
        assert_eq!(tree("alpha"), Expr::param("alpha"));
        assert_eq!(tree("x12"), Expr::x(12));
    }

    #[test]
    fn unknown_function_is_reported() {
        match parse("log(x1)") {
            Err(ParseError::UnknownIdentifier { name, line, column }) => {
                assert_eq!((name.as_str(), line, column), ("log", 1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("x1a"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x0"), Err(ParseError::UnknownIdentifier { .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("x1 +\n  * x2") {
            Err(ParseError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("(x1").is_err());
        assert!(parse("x1^").is_err());
        assert!(parse("x1^-2").is_err());
        assert!(parse("x1 x2").is_err());
        assert!(parse("sin").is_err());
    }
}

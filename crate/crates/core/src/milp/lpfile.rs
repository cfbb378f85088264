//! CPLEX LP text format writer and a minimal reader for files it produces.

use std::fmt::Write as _;
use std::path::Path;

use super::{MilpError, MilpModel, Relation, Variable};
use crate::graphdata::fmt_real;
use crate::scalar::Scalar;

const TERMS_PER_LINE: usize = 6;

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && name.len() <= 255
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
}

fn real<T: Scalar>(v: T) -> String {
    let v = v.to_f64_lossy();
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        fmt_real(v)
    }
}

fn write_terms<T: Scalar>(out: &mut String, model: &MilpModel<T>, coeffs: &[(usize, T)]) {
    for (k, &(j, a)) in coeffs.iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let a = a.to_f64_lossy();
        let sign = if a.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", fmt_real(a.abs()), model.variables[j].name);
    }
}

/// Renders `model` in LP format with reals at 17 significant digits.
pub fn write_lp<T: Scalar>(model: &MilpModel<T>) -> Result<String, MilpError> {
    model.validate()?;
    for name in model
        .variables
        .iter()
        .map(|v| &v.name)
        .chain(model.constraints.iter().map(|c| &c.name))
    {
        if !valid_name(name) {
            return Err(MilpError::InvalidModel(format!("name {name:?} is not valid in LP format")));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "\\ Problem: {}", model.name);
    out.push_str("Minimize\n obj:");
    write_terms(&mut out, model, &model.objective);
    out.push_str("\nSubject To\n");
    for con in &model.constraints {
        let _ = write!(out, " {}:", con.name);
        write_terms(&mut out, model, &con.coeffs);
        let _ = writeln!(out, " {} {}", con.relation.symbol(), real(con.rhs));
    }
    out.push_str("Bounds\n");
    for v in &model.variables {
        let _ = writeln!(out, " {} <= {} <= {}", real(v.lower), v.name, real(v.upper));
    }
    let generals: Vec<_> = model.variables.iter().filter(|v| v.integer && !v.is_binary()).collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for v in generals {
            let _ = writeln!(out, " {}", v.name);
        }
    }
    let binaries: Vec<_> = model.variables.iter().filter(|v| v.is_binary()).collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for v in binaries {
            let _ = writeln!(out, " {}", v.name);
        }
    }
    out.push_str("End\n");
    Ok(out)
}

/// Writes `model` to `path` in LP format.
pub fn export_lp<T: Scalar>(model: &MilpModel<T>, path: impl AsRef<Path>) -> Result<(), MilpError> {
    std::fs::write(path, write_lp(model)?)?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Head,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Binaries,
    End,
}

fn parse_real(tok: &str, line: usize) -> Result<f64, MilpError> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok.parse().map_err(|_| MilpError::Parse {
            line,
            msg: format!("expected a number, got {tok:?}"),
        }),
    }
}

struct Names {
    order: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl Names {
    fn get(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        self.order.push(name.to_string());
        self.index.insert(name.to_string(), self.order.len() - 1);
        self.order.len() - 1
    }
}

/// A linear statement: `[name:] terms [rel rhs]`.
struct Statement {
    name: Option<String>,
    line: usize,
    tokens: Vec<String>,
}

fn split_statements(lines: &[(usize, String)]) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    for (ln, text) in lines {
        let mut toks = text.split_whitespace().peekable();
        while let Some(tok) = toks.next() {
            if let Some(name) = tok.strip_suffix(':') {
                out.push(Statement {
                    name: Some(name.to_string()),
                    line: *ln,
                    tokens: Vec::new(),
                });
            } else {
                if out.is_empty() {
                    out.push(Statement {
                        name: None,
                        line: *ln,
                        tokens: Vec::new(),
                    });
                }
                out.last_mut().expect("statement").tokens.push(tok.to_string());
            }
        }
    }
    out
}

type Terms = Vec<(String, f64)>;

fn parse_linear(st: &Statement) -> Result<(Terms, Option<(Relation, f64)>), MilpError> {
    let err = |msg: String| MilpError::Parse { line: st.line, msg };
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    let mut it = st.tokens.iter();
    while let Some(tok) = it.next() {
        match tok.as_str() {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            "<=" | "=<" | ">=" | "=>" | "=" | "<" | ">" => {
                let rel = match tok.as_str() {
                    "<=" | "=<" | "<" => Relation::Le,
                    ">=" | "=>" | ">" => Relation::Ge,
                    _ => Relation::Eq,
                };
                let rhs = it.next().ok_or_else(|| err("missing right-hand side".into()))?;
                let rhs = parse_real(rhs, st.line)?;
                if it.next().is_some() {
                    return Err(err("trailing tokens after right-hand side".into()));
                }
                return Ok((terms, Some((rel, rhs))));
            }
            t => {
                if let Ok(v) = t.parse::<f64>() {
                    if coef.is_some() {
                        return Err(err(format!("two coefficients in a row at {t:?}")));
                    }
                    coef = Some(v);
                } else {
                    let a = sign * coef.take().unwrap_or(1.0);
                    terms.push((t.to_string(), a));
                    sign = 1.0;
                }
            }
        }
    }
    if coef.is_some() {
        return Err(err("dangling coefficient".into()));
    }
    Ok((terms, None))
}

/// Parses the subset of LP format that [`write_lp`] emits.
pub fn parse_lp<T: Scalar>(text: &str) -> Result<MilpModel<T>, MilpError> {
    let mut name = String::new();
    let mut section = Section::Head;
    let mut obj_lines = Vec::new();
    let mut con_lines = Vec::new();
    let mut bound_lines = Vec::new();
    let mut generals = Vec::new();
    let mut binaries = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        if let Some(rest) = raw.trim_start().strip_prefix("\\ Problem:") {
            name = rest.trim().to_string();
            continue;
        }
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let header = match line.to_ascii_lowercase().as_str() {
            "minimize" | "minimise" | "min" => Some(Section::Objective),
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" | "bound" => Some(Section::Bounds),
            "generals" | "general" | "gen" => Some(Section::Generals),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "end" => Some(Section::End),
            "maximize" | "maximise" | "max" => {
                return Err(MilpError::Parse {
                    line: ln,
                    msg: "only minimization is supported".into(),
                });
            }
            _ => None,
        };
        if let Some(h) = header {
            section = h;
            continue;
        }
        let entry = (ln, line.to_string());
        match section {
            Section::Objective => obj_lines.push(entry),
            Section::Constraints => con_lines.push(entry),
            Section::Bounds => bound_lines.push(entry),
            Section::Generals => generals.extend(line.split_whitespace().map(str::to_string)),
            Section::Binaries => binaries.extend(line.split_whitespace().map(str::to_string)),
            Section::Head | Section::End => {
                return Err(MilpError::Parse {
                    line: ln,
                    msg: format!("unexpected content {line:?}"),
                });
            }
        }
    }
    if section != Section::End {
        return Err(MilpError::Parse {
            line: text.lines().count(),
            msg: "missing End".into(),
        });
    }

    let mut names = Names {
        order: Vec::new(),
        index: Default::default(),
    };
    let mut lower: Vec<f64> = Vec::new();
    let mut upper: Vec<f64> = Vec::new();
    let mut set_bound = |names: &mut Names, v: &str, lo: Option<f64>, hi: Option<f64>| {
        let j = names.get(v);
        if lower.len() <= j {
            lower.resize(j + 1, 0.0);
            upper.resize(j + 1, f64::INFINITY);
        }
        if let Some(l) = lo {
            lower[j] = l;
        }
        if let Some(h) = hi {
            upper[j] = h;
        }
    };
    for (ln, line) in &bound_lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let perr = || MilpError::Parse {
            line: *ln,
            msg: format!("unsupported bound {line:?}"),
        };
        match toks.as_slice() {
            [l, "<=", v, "<=", u] => {
                let (l, u) = (parse_real(l, *ln)?, parse_real(u, *ln)?);
                set_bound(&mut names, v, Some(l), Some(u));
            }
            [v, "free"] => set_bound(&mut names, v, Some(f64::NEG_INFINITY), Some(f64::INFINITY)),
            [v, ">=", l] => set_bound(&mut names, v, Some(parse_real(l, *ln)?), None),
            [v, "<=", u] => set_bound(&mut names, v, None, Some(parse_real(u, *ln)?)),
            [v, "=", x] => {
                let x = parse_real(x, *ln)?;
                set_bound(&mut names, v, Some(x), Some(x));
            }
            _ => return Err(perr()),
        }
    }

    let convert = |names: &mut Names, terms: Terms| -> Vec<(usize, T)> {
        terms.into_iter().map(|(v, a)| (names.get(&v), T::lit(a))).collect()
    };
    let mut objective = Vec::new();
    for st in split_statements(&obj_lines) {
        let (terms, rel) = parse_linear(&st)?;
        if rel.is_some() {
            return Err(MilpError::Parse {
                line: st.line,
                msg: "relation in objective".into(),
            });
        }
        objective.extend(convert(&mut names, terms));
    }
    let mut constraints = Vec::new();
    for (k, st) in split_statements(&con_lines).into_iter().enumerate() {
        let (terms, rel) = parse_linear(&st)?;
        let (relation, rhs) = rel.ok_or_else(|| MilpError::Parse {
            line: st.line,
            msg: "constraint without relation".into(),
        })?;
        let coeffs = convert(&mut names, terms);
        constraints.push(super::Constraint {
            name: st.name.unwrap_or_else(|| format!("c{k}")),
            coeffs,
            relation,
            rhs: T::lit(rhs),
        });
    }
    for v in generals.iter().chain(binaries.iter()) {
        names.get(v);
    }

    let n = names.order.len();
    lower.resize(n, 0.0);
    upper.resize(n, f64::INFINITY);
    let mut variables: Vec<Variable<T>> = names
        .order
        .iter()
        .enumerate()
        .map(|(j, nm)| Variable {
            name: nm.clone(),
            lower: T::lit(lower[j]),
            upper: T::lit(upper[j]),
            integer: false,
        })
        .collect();
    for v in &generals {
        variables[names.index[v]].integer = true;
    }
    for v in &binaries {
        let var = &mut variables[names.index[v]];
        var.integer = true;
        var.lower = var.lower.max(T::zero());
        var.upper = var.upper.min(T::one());
    }
    Ok(MilpModel {
        name,
        variables,
        constraints,
        objective,
    })
}

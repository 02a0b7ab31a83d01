//! Reader and writer for the matrix-block case format (`mpc.bus = [...]`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{branch_limit, Branch, Bus, BusKind, Generator, NetworkCase, ParseOptions, QuadraticCost};
use crate::error::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

type Rows = Vec<(usize, Vec<f64>)>;

// Unit conversions shared by reader and writer so that write → read is exact.
fn per_unit(v: f64, base: f64) -> f64 {
    v / base
}

fn quad_cost_pu(c2: f64, base: f64) -> f64 {
    c2 * (base * base)
}

fn lin_cost_pu(c1: f64, base: f64) -> f64 {
    c1 * base
}

/// Finds a source value whose forward conversion reproduces `target` exactly.
fn invert_exact(target: f64, guess: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if !target.is_finite() || forward(guess) == target {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..16 {
        up = up.next_up();
        down = down.next_down();
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
    }
    guess
}

pub fn parse_case(text: &str) -> Result<NetworkCase> {
    parse_case_with(text, &ParseOptions::default())
}

struct Blocks {
    name: String,
    base_mva: Option<f64>,
    mats: BTreeMap<String, (usize, Rows)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

fn parse_number(tok: &str, block: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        block: block.to_string(),
        line,
        msg: format!("invalid number `{tok}`"),
    })
}

fn scan(text: &str) -> Result<Blocks> {
    let mut out = Blocks {
        name: "case".to_string(),
        base_mva: None,
        mats: BTreeMap::new(),
    };
    // (block name, start line, rows, closing delimiter)
    let mut open: Option<(String, usize, Rows, char)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim();

        if let Some((name, start, mut rows, close)) = open.take() {
            let (body, done) = match line.find(close) {
                Some(k) => (&line[..k], true),
                None => (line, false),
            };
            if close == ']' {
                push_rows(&name, lineno, body, &mut rows)?;
            }
            if done {
                out.mats.insert(name, (start, rows));
            } else {
                open = Some((name, start, rows, close));
            }
            continue;
        }

        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some(k) = rest.find('=') {
                out.name = rest[k + 1..].trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            return Err(Error::Parse {
                block: "header".into(),
                line: lineno,
                msg: format!("expected assignment, found `{line}`"),
            });
        };
        let name = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        if let Some(body) = value.strip_prefix('[') {
            let mut rows = Vec::new();
            match body.find(']') {
                Some(k) => {
                    push_rows(&name, lineno, &body[..k], &mut rows)?;
                    out.mats.insert(name, (lineno, rows));
                }
                None => {
                    push_rows(&name, lineno, body, &mut rows)?;
                    open = Some((name, lineno, rows, ']'));
                }
            }
        } else if let Some(body) = value.strip_prefix('{') {
            log::warn!("ignoring cell block `mpc.{name}`");
            if !body.contains('}') {
                open = Some((name, lineno, Vec::new(), '}'));
            }
        } else if name == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            out.base_mva = Some(parse_number(v, "baseMVA", lineno)?);
        } else if name != "version" {
            log::warn!("ignoring field `mpc.{name}`");
        }
    }
    if let Some((name, start, _, _)) = open {
        return Err(Error::Parse {
            block: name,
            line: start,
            msg: "block is never closed".into(),
        });
    }
    Ok(out)
}

fn push_rows(block: &str, line: usize, body: &str, rows: &mut Rows) -> Result<()> {
    for seg in body.split(';') {
        let toks: Vec<&str> = seg
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.is_empty() {
            continue;
        }
        let vals = toks
            .iter()
            .map(|t| parse_number(t, block, line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok(())
}

fn take_block(blocks: &mut Blocks, name: &str, min_cols: usize) -> Result<Rows> {
    let Some((start, rows)) = blocks.mats.remove(name) else {
        return Err(Error::Parse {
            block: name.into(),
            line: 0,
            msg: "block missing".into(),
        });
    };
    if rows.is_empty() {
        return Err(Error::Parse {
            block: name.into(),
            line: start,
            msg: "block is empty".into(),
        });
    }
    for (line, r) in &rows {
        if r.len() < min_cols {
            return Err(Error::Parse {
                block: name.into(),
                line: *line,
                msg: format!("expected at least {min_cols} columns, found {}", r.len()),
            });
        }
    }
    Ok(rows)
}

fn as_index(v: f64, block: &str, line: usize) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e12 {
        Ok(v as usize)
    } else {
        Err(Error::Parse {
            block: block.into(),
            line,
            msg: format!("expected a positive integer, found {v}"),
        })
    }
}

pub fn parse_case_with(text: &str, opts: &ParseOptions) -> Result<NetworkCase> {
    let mut blocks = scan(text)?;
    let base = blocks.base_mva.ok_or_else(|| Error::Parse {
        block: "baseMVA".into(),
        line: 0,
        msg: "missing system base".into(),
    })?;
    let bus_rows = take_block(&mut blocks, "bus", BUS_COLS)?;
    let gen_rows = take_block(&mut blocks, "gen", GEN_COLS)?;
    let branch_rows = take_block(&mut blocks, "branch", BRANCH_COLS)?;
    let cost_rows = take_block(&mut blocks, "gencost", 4)?;
    for name in blocks.mats.keys() {
        log::warn!("ignoring block `mpc.{name}`");
    }

    // Buses; isolated buses (type 4) are dropped.
    let mut index_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut buses = Vec::new();
    let mut ref_bus = Vec::new();
    for (line, r) in &bus_rows {
        let id = as_index(r[0], "bus", *line)?;
        let kind = r[1];
        if kind == 4.0 {
            log::warn!("dropping isolated bus {id}");
            continue;
        }
        if !(1.0..=3.0).contains(&kind) || kind.fract() != 0.0 {
            return Err(Error::Parse {
                block: "bus".into(),
                line: *line,
                msg: format!("unknown bus type {kind}"),
            });
        }
        if index_of.insert(id, buses.len()).is_some() {
            return Err(Error::Validation(format!("duplicate bus number {id}")));
        }
        if kind == 3.0 {
            ref_bus.push(buses.len());
        }
        buses.push(Bus {
            id,
            kind: BusKind::Load,
            p_demand: per_unit(r[2], base),
            q_demand: per_unit(r[3], base),
            g_shunt: per_unit(r[4], base),
            b_shunt: per_unit(r[5], base),
            v_min: r[12],
            v_max: r[11],
            theta_min: -opts.theta_limit,
            theta_max: opts.theta_limit,
            base_kv: r[9],
        });
    }
    if ref_bus.len() != 1 {
        return Err(Error::Validation(format!(
            "expected exactly one reference bus, found {}",
            ref_bus.len()
        )));
    }
    let ref_bus = ref_bus[0];
    buses[ref_bus].theta_min = 0.0;
    buses[ref_bus].theta_max = 0.0;

    if cost_rows.len() < gen_rows.len() {
        return Err(Error::Parse {
            block: "gencost".into(),
            line: cost_rows.last().map_or(0, |r| r.0),
            msg: format!("{} cost rows for {} generators", cost_rows.len(), gen_rows.len()),
        });
    }
    if cost_rows.len() > gen_rows.len() {
        log::warn!("ignoring reactive-power cost rows");
    }

    // Generators aggregated per bus, ordered by bus index.
    let mut agg: BTreeMap<usize, (Generator, QuadraticCost)> = BTreeMap::new();
    for (k, (line, r)) in gen_rows.iter().enumerate() {
        let id = as_index(r[0], "gen", *line)?;
        if r[7] <= 0.0 {
            continue;
        }
        let Some(&bus) = index_of.get(&id) else {
            if bus_rows.iter().any(|(_, b)| b[0] == id as f64) {
                log::warn!("dropping generator at isolated bus {id}");
                continue;
            }
            return Err(Error::Validation(format!("generator at undefined bus {id}")));
        };
        let cost = parse_cost(&cost_rows[k], base)?;
        let unit = Generator {
            bus,
            p_min: per_unit(r[9], base),
            p_max: per_unit(r[8], base),
            q_min: per_unit(r[4], base),
            q_max: per_unit(r[3], base),
            v_set: r[5],
            units: 1,
        };
        agg.entry(bus)
            .and_modify(|(g, c)| {
                g.p_min += unit.p_min;
                g.p_max += unit.p_max;
                g.q_min += unit.q_min;
                g.q_max += unit.q_max;
                g.units += 1;
                c.q_ii += cost.q_ii;
                c.q_i += cost.q_i;
                c.q_00 += cost.q_00;
            })
            .or_insert((unit, cost));
    }
    if !agg.contains_key(&ref_bus) {
        return Err(Error::Validation(format!(
            "reference bus {} hosts no in-service generator",
            buses[ref_bus].id
        )));
    }
    let mut generators = Vec::with_capacity(agg.len());
    let mut cost = Vec::with_capacity(agg.len());
    for (bus, (g, c)) in agg {
        buses[bus].kind = BusKind::Generator;
        generators.push(g);
        cost.push(c);
    }
    buses[ref_bus].kind = BusKind::Reference;

    let mut branches = Vec::new();
    for (line, r) in &branch_rows {
        if r[10] <= 0.0 {
            continue;
        }
        let f = as_index(r[0], "branch", *line)?;
        let t = as_index(r[1], "branch", *line)?;
        let (Some(&from), Some(&to)) = (index_of.get(&f), index_of.get(&t)) else {
            let known = |id: usize| bus_rows.iter().any(|(_, b)| b[0] == id as f64);
            if known(f) && known(t) {
                log::warn!("dropping branch {f}-{t} at an isolated bus");
                continue;
            }
            return Err(Error::Validation(format!("branch {f}-{t} references an undefined bus")));
        };
        let mut br = Branch {
            from,
            to,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            rate_a: r[5],
            d_max: None,
        };
        br.d_max = branch_limit(base, &br, opts.limit_rule)?;
        branches.push(br);
    }

    let case = NetworkCase {
        name: blocks.name,
        base_mva: base,
        buses,
        generators,
        branches,
        cost,
        ref_bus,
        limit_rule: opts.limit_rule,
    };
    case.validate()?;
    Ok(case)
}

fn parse_cost(row: &(usize, Vec<f64>), base: f64) -> Result<QuadraticCost> {
    let (line, r) = row;
    let err = |msg: String| Error::Parse {
        block: "gencost".into(),
        line: *line,
        msg,
    };
    if r[0] != 2.0 {
        return Err(err(format!("cost model {} not supported (quadratic polynomial only)", r[0])));
    }
    let n = r[3];
    if n.fract() != 0.0 || n < 0.0 {
        return Err(err(format!("invalid coefficient count {n}")));
    }
    let n = n as usize;
    if n > 3 {
        return Err(err(format!("polynomial cost of degree {} not supported", n - 1)));
    }
    if r.len() < 4 + n {
        return Err(err(format!("expected {n} coefficients")));
    }
    // Coefficients are listed highest degree first.
    let mut c = [0.0; 3];
    for k in 0..n {
        c[n - 1 - k] = r[4 + k];
    }
    Ok(QuadraticCost {
        q_ii: quad_cost_pu(c[2], base),
        q_i: lin_cost_pu(c[1], base),
        q_00: c[0],
    })
}

/// Serializes a case back to the matrix-block format. Reading the output with
/// the same options reproduces `case` exactly.
pub fn write_case(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let src = |pu: f64| invert_exact(pu, pu * base, |m| per_unit(m, base));

    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", case.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {};", base);
    let _ = writeln!(s, "\n%\tbus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(s, "mpc.bus = [");
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::Reference => 3,
            BusKind::Generator => 2,
            BusKind::Load => 1,
        };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t1\t0\t{}\t1\t{}\t{};",
            b.id,
            kind,
            src(b.p_demand),
            src(b.q_demand),
            src(b.g_shunt),
            src(b.b_shunt),
            b.base_kv,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(s, "];\n\n%\tbus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            s,
            "\t{}\t0\t0\t{}\t{}\t{}\t{}\t1\t{}\t{};",
            case.buses[g.bus].id,
            src(g.q_max),
            src(g.q_min),
            g.v_set,
            base,
            src(g.p_max),
            src(g.p_min)
        );
    }
    let _ = writeln!(s, "];\n\n%\tfbus tbus r x b rateA rateB rateC ratio angle status angmin angmax");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &case.branches {
        let shift = invert_exact(br.shift, br.shift.to_degrees(), f64::to_radians);
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t1\t-360\t360;",
            case.buses[br.from].id,
            case.buses[br.to].id,
            br.r,
            br.x,
            br.b_charging,
            br.rate_a,
            br.rate_a,
            br.rate_a,
            br.tap,
            shift
        );
    }
    let _ = writeln!(s, "];\n\n%\t2 startup shutdown n c(n-1) ... c0");
    let _ = writeln!(s, "mpc.gencost = [");
    for c in &case.cost {
        let c2 = invert_exact(c.q_ii, c.q_ii / (base * base), |v| quad_cost_pu(v, base));
        let c1 = invert_exact(c.q_i, c.q_i / base, |v| lin_cost_pu(v, base));
        let _ = writeln!(s, "\t2\t0\t0\t3\t{}\t{}\t{};", c2, c1, c.q_00);
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::builtin;

    const TWO_BUS: &str = "\
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0 0.1 0 250 250 250 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 10 5;
];
";

    #[test]
    fn two_bus_parse() {
        let c = parse_case(TWO_BUS).unwrap();
        assert!((c.branches[0].d_max.unwrap() - 0.25).abs() < 1e-15);
        let opts = ParseOptions {
            limit_rule: crate::netcase::BranchLimitRule::RatingPerUnit,
            ..Default::default()
        };
        let c = parse_case_with(TWO_BUS, &opts).unwrap();
        assert_eq!(c.name, "two");
        assert_eq!(c.n_bus(), 2);
        assert_eq!(c.buses[1].p_demand, 0.5);
        assert_eq!(c.generators[0].p_max, 2.0);
        assert_eq!(c.branches[0].d_max, Some(2.5));
        assert_eq!(c.cost[0], QuadraticCost { q_ii: 100.0, q_i: 1000.0, q_00: 5.0 });
    }

    #[test]
    fn aggregates_units_at_one_bus() {
        let text = TWO_BUS
            .replace("  1 0 0 100 -100 1 100 1 200 0;\n", "  1 0 0 100 -100 1 100 1 200 0;\n  1 0 0 50 -50 1 100 1 100 10;\n")
            .replace("  2 0 0 3 0.01 10 5;\n", "  2 0 0 3 0.01 10 5;\n  2 0 0 2 20 1;\n");
        let c = parse_case(&text).unwrap();
        assert_eq!(c.n_gen(), 1);
        assert_eq!(c.generators[0].units, 2);
        assert_eq!(c.generators[0].p_max, 3.0);
        assert_eq!(c.generators[0].p_min, 0.1);
        assert_eq!(c.cost[0].q_i, 3000.0);
        assert_eq!(c.cost[0].q_00, 6.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let no_ref = TWO_BUS.replace("  1 3 0", "  1 2 0");
        assert!(matches!(parse_case(&no_ref), Err(Error::Validation(_))));
        let two_ref = TWO_BUS.replace("  2 1 50", "  2 3 50");
        assert!(matches!(parse_case(&two_ref), Err(Error::Validation(_))));
        let undefined = TWO_BUS.replace("  1 2 0 0.1", "  1 7 0 0.1");
        assert!(matches!(parse_case(&undefined), Err(Error::Validation(_))));
        let garbage = TWO_BUS.replace("50 10", "50 x10");
        match parse_case(&garbage) {
            Err(Error::Parse { block, line, .. }) => {
                assert_eq!(block, "bus");
                assert_eq!(line, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let cubic = TWO_BUS.replace("2 0 0 3 0.01 10 5", "2 0 0 4 1 0.01 10 5");
        assert!(matches!(parse_case(&cubic), Err(Error::Parse { .. })));
        let pwl = TWO_BUS.replace("2 0 0 3 0.01 10 5", "1 0 0 2 0 0 100 1000");
        assert!(matches!(parse_case(&pwl), Err(Error::Parse { .. })));
        let negative = TWO_BUS.replace("0 0.1 0 250", "0 0.1 0 -250");
        assert!(matches!(parse_case(&negative), Err(Error::Validation(_))));
    }

    #[test]
    fn single_bus_without_branches_rejected() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9];\n\
                    mpc.gen = [1 0 0 10 -10 1 100 1 10 0];\nmpc.branch = [\n];\n\
                    mpc.gencost = [2 0 0 3 0 1 0];\n";
        assert!(parse_case(text).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        for name in ["case9", "case30", "case118", "case300"] {
            let a = parse_case(builtin(name).unwrap()).unwrap();
            let b = parse_case(&write_case(&a)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn table_counts() {
        for (name, n, ng, nline) in [
            ("case9", 9, 3, 9),
            ("case30", 30, 6, 41),
            ("case118", 118, 54, 186),
            ("case300", 300, 69, 411),
        ] {
            let c = parse_case(builtin(name).unwrap()).unwrap();
            assert_eq!((c.n_bus(), c.n_gen(), c.n_load(), c.n_branch()), (n, ng, n - ng, nline), "{name}");
        }
    }
}

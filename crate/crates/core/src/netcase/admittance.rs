use nalgebra::Complex;

use super::NetworkCase;
use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, Triplets};

type C64 = Complex<f64>;

/// Bus admittance matrix Y = G + jB, stored both as sparse matrices and as
/// per-row adjacency lists for fast injection evaluation.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub g: CscMatrix,
    pub b: CscMatrix,
    /// Row i: `(k, G_ik, B_ik)` for every k ≠ i in the pattern, ascending k.
    pub off_diag: Vec<Vec<(usize, f64, f64)>>,
    /// (G_ii, B_ii).
    pub diag: Vec<(f64, f64)>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn entry(&self, i: usize, k: usize) -> (f64, f64) {
        (self.g.get(i, k), self.b.get(i, k))
    }
}

/// Standard bus-admittance construction with off-nominal taps, phase
/// shifters, line charging and bus shunts.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_bus();
    if case.branches.is_empty() {
        return Err(Error::Validation("case has no in-service branches".into()));
    }
    let mut tg = Triplets::with_capacity(n, n, n + 4 * case.n_branch());
    let mut tb = Triplets::with_capacity(n, n, n + 4 * case.n_branch());
    let mut push = |i: usize, k: usize, y: C64| {
        tg.push(i, k, y.re);
        tb.push(i, k, y.im);
    };
    for (i, bus) in case.buses.iter().enumerate() {
        push(i, i, C64::new(bus.g_shunt, bus.b_shunt));
    }
    for br in &case.branches {
        let (gs, bs) = br.series_admittance();
        let ys = C64::new(gs, bs);
        let ytt = ys + C64::new(0.0, br.b_charging / 2.0);
        let t = C64::from_polar(br.tap, br.shift);
        push(br.from, br.from, ytt / (br.tap * br.tap));
        push(br.to, br.to, ytt);
        push(br.from, br.to, -ys / t.conj());
        push(br.to, br.from, -ys / t);
    }
    let g = tg.to_csc();
    let b = tb.to_csc();

    let mut off_diag = vec![Vec::new(); n];
    let mut diag = vec![(0.0, 0.0); n];
    for k in 0..n {
        // Pattern of g and b is identical since both came from the same pushes.
        for ((i, gv), (_, bv)) in g.col(k).zip(b.col(k)) {
            if !gv.is_finite() || !bv.is_finite() {
                return Err(Error::Numerical(format!("admittance overflow at ({i}, {k})")));
            }
            if i == k {
                diag[i] = (gv, bv);
            } else {
                off_diag[i].push((k, gv, bv));
            }
        }
    }
    Ok(AdmittanceMatrix { g, b, off_diag, diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::{builtin, parse_case};

    fn two_bus() -> NetworkCase {
        parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1.1 0.9; 2 1 50 10 0 0 1 1 0 1 1 1.1 0.9];\n\
             mpc.gen = [1 0 0 100 -100 1 100 1 200 0];\nmpc.branch = [1 2 0 0.1 0 250 250 250 0 0 1 -360 360];\n\
             mpc.gencost = [2 0 0 3 0.01 10 5];\n",
        )
        .unwrap()
    }

    #[test]
    fn two_bus_hand_values() {
        let y = build_admittance(&two_bus()).unwrap();
        assert!((y.b.get(0, 1) - 10.0).abs() < 1e-12);
        assert!((y.b.get(1, 0) - 10.0).abs() < 1e-12);
        assert!((y.b.get(0, 0) + 10.0).abs() < 1e-12);
        assert!((y.b.get(1, 1) + 10.0).abs() < 1e-12);
        assert!(y.g.to_dense().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn plain_lines_give_zero_row_sums() {
        let mut case = parse_case(builtin("case30").unwrap()).unwrap();
        for b in &mut case.buses {
            b.g_shunt = 0.0;
            b.b_shunt = 0.0;
        }
        for br in &mut case.branches {
            br.b_charging = 0.0;
            br.tap = 1.0;
            br.shift = 0.0;
        }
        let y = build_admittance(&case).unwrap();
        for br in &case.branches {
            // Parallel branches add up, so compare against the sum over duplicates.
            let (g, b): (f64, f64) = case
                .branches
                .iter()
                .filter(|o| (o.from, o.to) == (br.from, br.to) || (o.from, o.to) == (br.to, br.from))
                .map(|o| o.series_admittance())
                .fold((0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1));
            let (gik, bik) = y.entry(br.from, br.to);
            assert!((gik + g).abs() < 1e-9 && (bik + b).abs() < 1e-9);
        }
        for i in 0..case.n_bus() {
            let (mut sg, mut sb) = y.diag[i];
            for &(_, g, b) in &y.off_diag[i] {
                sg += g;
                sb += b;
            }
            assert!(sg.abs() < 1e-9 && sb.abs() < 1e-9, "row {i}: {sg} {sb}");
        }
    }

    #[test]
    fn pattern_is_symmetric() {
        let case = parse_case(builtin("case118").unwrap()).unwrap();
        let y = build_admittance(&case).unwrap();
        for i in 0..case.n_bus() {
            for &(k, _, _) in &y.off_diag[i] {
                assert!(y.off_diag[k].iter().any(|e| e.0 == i));
            }
        }
    }
}

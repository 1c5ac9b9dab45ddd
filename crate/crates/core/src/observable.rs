//! Observables: weighted Pauli sums and rank-one projectors.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::C64;

/// Largest dimension for which dense matrices are built.
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Debug)]
pub enum ObservableKind {
    PauliSum(Vec<PauliString>),
    Projector(Vec<C64>),
}

#[derive(Clone, Debug)]
pub struct Observable {
    n: usize,
    kind: ObservableKind,
    label: String,
    dense: OnceLock<DMatrix<C64>>,
    spectrum: OnceLock<(f64, f64)>,
    traces: OnceLock<[f64; 4]>,
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("need n >= 2 qubits, got {n}")));
    }
    if n > 30 {
        return Err(Error::InvalidSize(format!("{n} qubits is beyond statevector reach")));
    }
    Ok(())
}

pub fn build_xxz(n: usize, j: f64) -> Result<Observable> {
    check_n(n)?;
    let mut terms = Vec::with_capacity(4 * n);
    for i in 0..n - 1 {
        for (c, w) in [('X', -1.0), ('Y', -1.0), ('Z', -j)] {
            let mut p = PauliString::single(n, i, c).mul(&PauliString::single(n, i + 1, c))?;
            p.coeff = w;
            terms.push(p);
        }
    }
    for i in 0..n {
        let mut p = PauliString::single(n, i, 'Z');
        p.coeff = -j;
        terms.push(p);
    }
    Ok(Observable::from_parts(
        n,
        ObservableKind::PauliSum(terms),
        format!("xxz({n},{j})"),
    ))
}

pub fn build_tfim(n: usize, h: f64) -> Result<Observable> {
    check_n(n)?;
    let mut terms = Vec::with_capacity(2 * n);
    for i in 0..n - 1 {
        let mut p = PauliString::single(n, i, 'Z').mul(&PauliString::single(n, i + 1, 'Z'))?;
        p.coeff = -1.0;
        terms.push(p);
    }
    for i in 0..n {
        let mut p = PauliString::single(n, i, 'X');
        p.coeff = -h;
        terms.push(p);
    }
    Ok(Observable::from_parts(
        n,
        ObservableKind::PauliSum(terms),
        format!("tfim({n},{h})"),
    ))
}

pub fn build_projector(target: Vec<C64>) -> Result<Observable> {
    let d = target.len();
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::InvalidSize(format!(
            "target length {d} is not a power of two >= 2"
        )));
    }
    let norm: f64 = target.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Normalization { norm });
    }
    let n = d.trailing_zeros() as usize;
    Ok(Observable::from_parts(
        n,
        ObservableKind::Projector(target),
        "projector".to_string(),
    ))
}

/// Pauli sum from explicit terms. Every term must be Hermitian and act on
/// the same number of qubits.
pub fn build_pauli_sum(terms: Vec<PauliString>, label: impl Into<String>) -> Result<Observable> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidSize("empty pauli sum".into()))?;
    let n = first.n;
    if let Some(bad) = terms.iter().find(|t| t.n != n) {
        return Err(Error::Shape {
            expected: n,
            got: bad.n,
        });
    }
    if terms.iter().any(|t| !t.is_hermitian()) {
        return Err(Error::Integrity("pauli sum has a non-Hermitian term".into()));
    }
    Ok(Observable::from_parts(
        n,
        ObservableKind::PauliSum(terms),
        label.into(),
    ))
}

impl Observable {
    fn from_parts(n: usize, kind: ObservableKind, label: String) -> Self {
        Observable {
            n,
            kind,
            label,
            dense: OnceLock::new(),
            spectrum: OnceLock::new(),
            traces: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_projector(&self) -> bool {
        matches!(self.kind, ObservableKind::Projector(_))
    }

    /// `out = O psi`.
    pub fn apply(&self, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        match &self.kind {
            ObservableKind::PauliSum(terms) => {
                for t in terms {
                    t.apply_add(psi, out, C64::new(1.0, 0.0));
                }
            }
            ObservableKind::Projector(phi) => {
                let ov: C64 = phi.iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
                for (o, p) in out.iter_mut().zip(phi) {
                    *o = p * ov;
                }
            }
        }
    }

    /// `<psi|O|psi>` after checking the imaginary residue.
    pub fn expectation(&self, psi: &[C64]) -> Result<f64> {
        if psi.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: psi.len(),
            });
        }
        let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
        self.apply(psi, &mut tmp);
        let v: C64 = psi.iter().zip(&tmp).map(|(a, b)| a.conj() * b).sum();
        if v.im.abs() > 1e-6 {
            return Err(Error::Hermiticity { residue: v.im.abs() });
        }
        Ok(v.re)
    }

    /// Dense realization, built once.
    pub fn dense(&self) -> Result<&DMatrix<C64>> {
        let d = self.dim();
        if d > DENSE_CAP {
            return Err(Error::Resource {
                what: "dense dimension",
                value: d,
                limit: DENSE_CAP,
            });
        }
        Ok(self.dense.get_or_init(|| match &self.kind {
            ObservableKind::PauliSum(terms) => {
                let mut m = DMatrix::zeros(d, d);
                for t in terms {
                    let s = t.scalar();
                    for b in 0..d {
                        m[(b ^ t.x_mask as usize, b)] += s * t.basis_factor(b as u64);
                    }
                }
                m
            }
            ObservableKind::Projector(phi) => {
                DMatrix::from_fn(d, d, |i, j| phi[i] * phi[j].conj())
            }
        }))
    }

    /// Largest elementwise `|M - M^dagger|`.
    pub fn hermiticity_residue(&self) -> Result<f64> {
        let m = self.dense()?;
        let d = m.nrows();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        Ok(worst)
    }

    /// `(O_min, O_max)` from a full Hermitian eigensolve.
    pub fn extremal_eigenvalues(&self) -> Result<(f64, f64)> {
        if let Some(s) = self.spectrum.get() {
            return Ok(*s);
        }
        let s = match &self.kind {
            ObservableKind::Projector(_) => (0.0, 1.0),
            ObservableKind::PauliSum(_) => {
                let residue = self.hermiticity_residue()?;
                if residue > 1e-12 {
                    return Err(Error::Integrity(format!(
                        "dense observable not Hermitian (residue {residue:e})"
                    )));
                }
                let eig = SymmetricEigen::new(self.dense()?.clone());
                let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Numeric("eigensolve produced non-finite values".into()));
                }
                (lo, hi)
            }
        };
        Ok(*self.spectrum.get_or_init(|| s))
    }

    /// `tr(O^k)` for `k = 1..4`, cached.
    pub fn trace_powers(&self) -> Result<[f64; 4]> {
        if let Some(t) = self.traces.get() {
            return Ok(*t);
        }
        let t = match &self.kind {
            ObservableKind::Projector(_) => [1.0; 4],
            ObservableKind::PauliSum(_) => trace_powers_dense(self)?,
        };
        Ok(*self.traces.get_or_init(|| t))
    }
}

/// `tr(O^k)`, `k = 1..4`, from the dense matrix. Uses `tr O^2 = |O|_F^2`
/// and `tr O^4 = |O^2|_F^2`, valid for Hermitian `O`.
pub fn trace_powers_dense(obs: &Observable) -> Result<[f64; 4]> {
    let m = obs.dense()?;
    let t1 = m.diagonal().iter().map(|v| v.re).sum::<f64>();
    let t2 = m.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let m2 = m * m;
    let t4 = m2.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let d = m.nrows();
    let mut t3 = 0.0;
    for j in 0..d {
        for i in 0..d {
            t3 += (m2[(i, j)] * m[(j, i)]).re;
        }
    }
    Ok([t1, t2, t3, t4])
}

/// Closed forms of `tr O^2`, `tr O^3`, `tr O^4` for the open-chain XXZ model.
pub fn xxz_trace_powers(n: usize, j: f64) -> [f64; 3] {
    let d = (1u64 << n) as f64;
    let nf = n as f64;
    let j2 = j * j;
    let t2 = ((j2 + 2.0) * (nf - 1.0) + j2 * nf) * d;
    let t3 = 6.0 * j * (1.0 - j2) * (nf - 1.0) * d;
    let t4 = (12.0 * (j2 + 1.0).powi(2) * nf * nf + 4.0 * (2.0 * j2 * j2 - 19.0 * j2 - 9.0) * nf
        - 43.0 * j2 * j2
        + 68.0 * j2
        + 32.0)
        * d;
    [t2, t3, t4]
}

/// Parsed form of an observable spec such as `xxz(6,2)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservableSpec {
    Xxz { n: usize, j: f64 },
    Tfim { n: usize, h: f64 },
    Projector { seed: u64 },
    PauliSum { path: PathBuf },
}

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

/// Parses `xxz(n,J)`, `tfim(n,h)`, `projector(seed)` or `pauli_sum(file)`.
/// Errors carry 1-based columns into `src`.
pub fn parse_observable_spec(src: &str) -> Result<ObservableSpec> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = skip_ws(&chars, 0);
    let start = i;
    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
        i += 1;
    }
    let name: String = chars[start..i].iter().collect();
    if name.is_empty() {
        return Err(Error::parse(1, start + 1, "expected observable name"));
    }
    i = skip_ws(&chars, i);
    if i >= chars.len() || chars[i] != '(' {
        return Err(Error::parse(1, i + 1, "expected '('"));
    }
    let open = i;
    let mut end = chars.len();
    while end > 0 && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if end <= open + 1 || chars[end - 1] != ')' {
        return Err(Error::parse(1, end.max(open + 1) + 1, "expected ')' at end of spec"));
    }
    let body_start = open + 1;
    let body_end = end - 1;
    let body: String = chars[body_start..body_end].iter().collect();

    // comma-separated arguments with their starting columns
    let mut args: Vec<(String, usize)> = Vec::new();
    let mut col = body_start;
    for piece in body.split(',') {
        let lead = piece.len() - piece.trim_start().len();
        args.push((piece.trim().to_string(), col + lead + 1));
        col += piece.chars().count() + 1;
    }
    let arity = |k: usize| -> Result<()> {
        if args.len() != k {
            return Err(Error::parse(
                1,
                body_start + 1,
                format!("{name} takes {k} argument(s), got {}", args.len()),
            ));
        }
        Ok(())
    };
    let uint = |(s, c): &(String, usize)| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|_| Error::parse(1, *c, format!("expected non-negative integer, got {s:?}")))
    };
    let real = |(s, c): &(String, usize)| -> Result<f64> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(1, *c, format!("expected finite real, got {s:?}"))),
        }
    };
    match name.as_str() {
        "xxz" => {
            arity(2)?;
            Ok(ObservableSpec::Xxz {
                n: uint(&args[0])? as usize,
                j: real(&args[1])?,
            })
        }
        "tfim" => {
            arity(2)?;
            Ok(ObservableSpec::Tfim {
                n: uint(&args[0])? as usize,
                h: real(&args[1])?,
            })
        }
        "projector" => {
            arity(1)?;
            Ok(ObservableSpec::Projector {
                seed: uint(&args[0])?,
            })
        }
        "pauli_sum" => {
            let raw = body.trim();
            let path = raw
                .strip_prefix('"')
                .and_then(|r| r.strip_suffix('"'))
                .unwrap_or(raw);
            if path.is_empty() {
                return Err(Error::parse(1, body_start + 1, "pauli_sum needs a file path"));
            }
            Ok(ObservableSpec::PauliSum {
                path: PathBuf::from(path),
            })
        }
        other => Err(Error::parse(
            1,
            start + 1,
            format!("unknown observable {other:?}"),
        )),
    }
}

impl ObservableSpec {
    /// Qubit count implied by the spec itself, when it has one.
    pub fn qubits(&self) -> Option<usize> {
        match self {
            ObservableSpec::Xxz { n, .. } | ObservableSpec::Tfim { n, .. } => Some(*n),
            _ => None,
        }
    }

    /// Builds the observable. `n` supplies the qubit count for projectors;
    /// relative `pauli_sum` paths resolve against `base_dir`.
    pub fn build(&self, n: Option<usize>, base_dir: &Path) -> Result<Observable> {
        match self {
            ObservableSpec::Xxz { n, j } => build_xxz(*n, *j),
            ObservableSpec::Tfim { n, h } => build_tfim(*n, *h),
            ObservableSpec::Projector { seed } => {
                let n = n.ok_or_else(|| {
                    Error::InvalidParameter("projector observable needs a qubit count n".into())
                })?;
                check_n(n)?;
                let mut rng = crate::rng_from_seed(*seed);
                let phi = crate::haar::haar_random_state(1 << n, &mut rng);
                let mut obs = build_projector(phi)?;
                obs.label = format!("projector({seed})");
                Ok(obs)
            }
            ObservableSpec::PauliSum { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let text = std::fs::read_to_string(&full)?;
                let terms = parse_pauli_sum(&text)?;
                if let Some(n) = n {
                    if terms[0].n != n {
                        return Err(Error::Shape {
                            expected: n,
                            got: terms[0].n,
                        });
                    }
                }
                build_pauli_sum(terms, format!("pauli_sum({})", path.display()))
            }
        }
    }
}

/// Parses a Pauli-sum file: one `coeff WORD` per line, `#` comments and
/// blank lines allowed, all words of equal length.
pub fn parse_pauli_sum(text: &str) -> Result<Vec<PauliString>> {
    let mut terms: Vec<PauliString> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut col = 0usize;
        for piece in line.split(|c: char| c.is_whitespace()) {
            if !piece.is_empty() {
                toks.push((piece, col + 1));
            }
            col += piece.chars().count() + 1;
        }
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            let c = toks.get(2).map(|t| t.1).unwrap_or(toks[0].1);
            return Err(Error::parse(line_no, c, "expected `coeff WORD`"));
        }
        let (cs, cc) = toks[0];
        let coeff = match cs.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => return Err(Error::parse(line_no, cc, format!("bad coefficient {cs:?}"))),
        };
        let (ws, wc) = toks[1];
        let term = PauliString::from_word(ws, coeff).map_err(|e| match e {
            Error::Parse { column, msg, .. } => Error::parse(line_no, wc + column - 1, msg),
            other => Error::parse(line_no, wc, other.to_string()),
        })?;
        if let Some(first) = terms.first() {
            if first.n != term.n {
                return Err(Error::parse(
                    line_no,
                    wc,
                    format!("word length {} differs from {}", term.n, first.n),
                ));
            }
        }
        terms.push(term);
    }
    if terms.is_empty() {
        return Err(Error::parse(1, 1, "no terms"));
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn xxz_small_cases() {
        let o = build_xxz(2, 0.0).unwrap();
        assert_eq!(o.trace_powers().unwrap()[0], 0.0);
        let o = build_xxz(3, 2.0).unwrap();
        assert!(rel(o.trace_powers().unwrap()[1], 192.0) < 1e-12);
        assert!(build_xxz(1, 1.0).is_err());
    }

    #[test]
    fn xxz_ground_energy_n6() {
        let o = build_xxz(6, 2.0).unwrap();
        let (lo, _) = o.extremal_eigenvalues().unwrap();
        assert!((lo + 22.0).abs() < 1e-9, "{lo}");
    }

    #[test]
    fn xxz_n2_matches_hand_diagonalization() {
        // basis |00>,|01>,|10>,|11>; the XX+YY block couples 01 and 10 with weight 2
        let j = 2.0;
        let o = build_xxz(2, j).unwrap();
        let (lo, hi) = o.extremal_eigenvalues().unwrap();
        let mut evs = [-j - 2.0 * j, -j + 2.0 * j, j - 2.0, j + 2.0];
        evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((lo - evs[0]).abs() < 1e-12);
        assert!((hi - evs[3]).abs() < 1e-12);
    }

    #[test]
    fn xxz_on_zero_state() {
        let n = 4;
        let j = 1.5;
        let o = build_xxz(n, j).unwrap();
        let mut psi = vec![C64::new(0.0, 0.0); 16];
        psi[0] = C64::new(1.0, 0.0);
        let e = o.expectation(&psi).unwrap();
        assert!((e - (-(n as f64 - 1.0) * j - n as f64 * j)).abs() < 1e-12);
    }

    #[test]
    fn tfim_cases() {
        let o = build_tfim(2, 0.0).unwrap();
        let (lo, hi) = o.extremal_eigenvalues().unwrap();
        assert_eq!((lo, hi), (-1.0, 1.0));
        let o = build_tfim(4, 1.0).unwrap();
        // each term squares to identity and distinct strings are trace-orthogonal
        let counted = (3.0 + 4.0) * 16.0;
        assert!(rel(o.trace_powers().unwrap()[1], counted) < 1e-12);
        assert!(o.hermiticity_residue().unwrap() < 1e-12);
    }

    #[test]
    fn projector_properties() {
        let mut phi = vec![C64::new(0.0, 0.0); 8];
        phi[0] = C64::new(1.0, 0.0);
        let o = build_projector(phi).unwrap();
        let m = o.dense().unwrap();
        assert_eq!(m[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(m.iter().filter(|v| v.norm() > 0.0).count(), 1);
        assert_eq!(trace_powers_dense(&o).unwrap(), [1.0; 4]);
        assert_eq!(o.extremal_eigenvalues().unwrap(), (0.0, 1.0));
        assert!(build_projector(vec![C64::new(1.0, 0.0); 4]).is_err());
    }

    #[test]
    fn random_projector_is_idempotent() {
        let spec = ObservableSpec::Projector { seed: 9 };
        let o = spec.build(Some(3), Path::new(".")).unwrap();
        let m = o.dense().unwrap();
        let sq = m * m;
        assert!((sq - m).iter().all(|v| v.norm() < 1e-10));
        assert!((trace_powers_dense(&o).unwrap()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_identities_match_dense() {
        for n in 2..=5 {
            for j in [0.5, 1.0, 2.0] {
                let o = build_xxz(n, j).unwrap();
                let t = trace_powers_dense(&o).unwrap();
                let c = xxz_trace_powers(n, j);
                assert!(t[0].abs() < 1e-9);
                assert!(rel(t[1], c[0]) < 1e-9);
                if j == 1.0 {
                    assert_eq!(c[1], 0.0);
                    assert!(t[2].abs() < 1e-9);
                } else {
                    assert!(rel(t[2], c[1]) < 1e-9);
                }
                assert!(rel(t[3], c[2]) < 1e-9);
            }
        }
    }

    #[test]
    fn spec_parser_accepts_forms() {
        assert_eq!(
            parse_observable_spec("xxz(6, 2)").unwrap(),
            ObservableSpec::Xxz { n: 6, j: 2.0 }
        );
        assert_eq!(
            parse_observable_spec(" tfim(8,2.5) ").unwrap(),
            ObservableSpec::Tfim { n: 8, h: 2.5 }
        );
        assert_eq!(
            parse_observable_spec("projector(17)").unwrap(),
            ObservableSpec::Projector { seed: 17 }
        );
        assert_eq!(
            parse_observable_spec("pauli_sum(\"h.txt\")").unwrap(),
            ObservableSpec::PauliSum {
                path: PathBuf::from("h.txt")
            }
        );
    }

    #[test]
    fn spec_parser_reports_columns() {
        match parse_observable_spec("xxz(6,abc)") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (1, 7)),
            other => panic!("{other:?}"),
        }
        match parse_observable_spec("heisenberg(3)") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 1),
            other => panic!("{other:?}"),
        }
        assert!(parse_observable_spec("xxz(6,2").is_err());
        assert!(parse_observable_spec("xxz(6)").is_err());
        assert!(parse_observable_spec("").is_err());
    }

    #[test]
    fn pauli_sum_file() {
        let text = "# two-qubit test\n-2.0 ZZ\n0.5 XI # field\n\n";
        let terms = parse_pauli_sum(text).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[1].to_word(), "XI");
        match parse_pauli_sum("1.0 ZZ\n1.0 ZQ\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 6)),
            other => panic!("{other:?}"),
        }
        assert!(parse_pauli_sum("1.0 ZZ\n1.0 Z\n").is_err());
        assert!(parse_pauli_sum("nan ZZ").is_err());
        assert!(parse_pauli_sum("# nothing\n").is_err());
    }
}

//! Global-descriptor database: exact KNN search plus the retrieval
//! evaluation suite (recall@1, PR curve, average precision).
//!
//! Search is an exact brute-force scan; at the scales this toolkit targets
//! (thousands of frames, 384-dim descriptors) that is faster than building
//! any approximate structure, and it doubles as the correctness baseline any
//! future accelerated index must match.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::covis::{CovisLabel, Label};
use crate::features::GlobalDescriptor;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate cloud id {0:?}")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    BadK,
    #[error("no labeled positive pairs between queries and database")]
    NoPositives,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("index file {path}: line {line}: {msg}")]
    Format { path: std::path::PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An ordered, searchable set of (cloud id, descriptor) entries.
#[derive(Debug, Clone, Default)]
pub struct DescriptorIndex {
    entries: Vec<(String, GlobalDescriptor)>,
}

impl DescriptorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: impl Into<String>, d: GlobalDescriptor) -> Result<(), RetrievalError> {
        let id = id.into();
        if self.entries.iter().any(|(existing, _)| *existing == id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.entries.push((id, d));
        Ok(())
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, GlobalDescriptor)>,
    ) -> Result<Self, RetrievalError> {
        let mut index = Self::new();
        for (id, d) in entries {
            index.push(id, d)?;
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn descriptor(&self, i: usize) -> &GlobalDescriptor {
        &self.entries[i].1
    }
}

/// Exact top-k by Euclidean distance; ties broken by lexicographically
/// smaller id. `k` larger than the index returns everything.
pub fn query(
    index: &DescriptorIndex,
    q: &GlobalDescriptor,
    k: usize,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if k == 0 {
        return Err(RetrievalError::BadK);
    }
    let mut scored: Vec<(usize, f64)> =
        index.entries.iter().enumerate().map(|(i, (_, d))| (i, q.distance(d))).collect();
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1).unwrap().then_with(|| index.id(a.0).cmp(index.id(b.0)))
    });
    scored.truncate(k.min(index.len()));
    Ok(scored.into_iter().map(|(i, d)| (index.id(i).to_string(), d)).collect())
}

/// Writes the index as a text snapshot: a `dim D` header line, then one
/// entry per line as the id, a tab, and the descriptor values separated by
/// single spaces. Values print in shortest round-trip form, so reading the
/// file back reproduces every descriptor bit for bit.
pub fn write_index(path: impl AsRef<Path>, index: &DescriptorIndex) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let bad = |msg: String| RetrievalError::Format { path: path.into(), line: 0, msg };
    let dim = if index.is_empty() { 0 } else { index.descriptor(0).dim() };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "dim {dim}")?;
    for (id, d) in &index.entries {
        if id.contains(['\t', '\n']) {
            return Err(bad(format!("id {id:?} contains a tab or newline")));
        }
        if d.dim() != dim {
            return Err(bad(format!("entry {id:?} has dimension {}, expected {dim}", d.dim())));
        }
        write!(w, "{id}\t")?;
        for (i, v) in d.values().iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a [`write_index`] snapshot. Blank lines and `#` comments are
/// skipped; everything else is validated, including descriptor norms.
pub fn read_index(path: impl AsRef<Path>) -> Result<DescriptorIndex, RetrievalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, msg: String| RetrievalError::Format { path: path.into(), line, msg };
    let mut dim: Option<usize> = None;
    let mut index = DescriptorIndex::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(d) = dim else {
            let rest = line
                .strip_prefix("dim ")
                .ok_or_else(|| err(line_no, "expected a `dim <n>` header".into()))?;
            dim = Some(rest.trim().parse::<usize>().map_err(|e| {
                err(line_no, format!("bad dimension {rest:?}: {e}"))
            })?);
            continue;
        };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| err(line_no, "expected id<TAB>values".into()))?;
        if id.is_empty() {
            return Err(err(line_no, "empty id".into()));
        }
        let mut parsed = Vec::with_capacity(d);
        for tok in values.split_whitespace() {
            parsed.push(
                tok.parse::<f64>()
                    .map_err(|e| err(line_no, format!("bad value {tok:?}: {e}")))?,
            );
        }
        if parsed.len() != d {
            return Err(err(line_no, format!("expected {d} values, got {}", parsed.len())));
        }
        let descriptor = GlobalDescriptor::from_values(DVector::from_vec(parsed), id)
            .map_err(|e| err(line_no, e.to_string()))?;
        index.push(id, descriptor)?;
    }
    if dim.is_none() {
        return Err(err(0, "missing `dim <n>` header".into()));
    }
    Ok(index)
}

/// One point of the precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrSample {
    /// Descriptor-distance acceptance threshold.
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Top-1 outcome for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    pub retrieved_id: String,
    pub distance: f64,
    /// Label of the retrieved pair, if the pair was labeled at all.
    pub label: Option<Label>,
    /// Whether this query has any labeled positive in the database.
    pub has_positive: bool,
}

/// Retrieval evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub outcomes: Vec<QueryOutcome>,
    /// Fraction of queries (with at least one positive) whose top-1 is a
    /// positive pair, with no distance threshold applied.
    pub recall_at_1: f64,
    /// Trapezoidal area under the precision/recall sweep.
    pub average_precision: f64,
    pub pr: Vec<PrSample>,
    /// Queries excluded from all counts because the database holds no
    /// positive for them.
    pub queries_without_positives: usize,
}

/// Evaluates top-1 retrieval over a threshold sweep.
///
/// `labels` is keyed by `(query position, database position)`, as produced
/// by pair labeling between the query set and the indexed set. Queries with
/// no labeled positive anywhere are excluded from every count and reported
/// separately. At a threshold t a query's top-1 at distance d counts as: TP
/// if `d <= t` and the pair is labeled positive, FP if `d <= t` otherwise
/// (including unlabeled and ignore-band pairs), and each query with a
/// positive that is not a TP counts as FN. Precision of an empty prediction
/// set is 1.
pub fn evaluate(
    index: &DescriptorIndex,
    queries: &[(String, GlobalDescriptor)],
    labels: &BTreeMap<(usize, usize), CovisLabel>,
    thresholds: Option<&[f64]>,
) -> Result<RetrievalReport, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if queries.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    let any_positive =
        labels.values().any(|l| l.label == Label::Positive);
    if !any_positive {
        return Err(RetrievalError::NoPositives);
    }

    let mut outcomes = Vec::with_capacity(queries.len());
    for (qi, (query_id, q)) in queries.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (di, (_, d)) in index.entries.iter().enumerate() {
            let dist = q.distance(d);
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    dist < bd || (dist == bd && index.id(di) < index.id(bi))
                }
            };
            if better {
                best = Some((di, dist));
            }
        }
        let (di, distance) = best.expect("index checked non-empty");
        let has_positive = (0..index.len())
            .any(|j| labels.get(&(qi, j)).is_some_and(|l| l.label == Label::Positive));
        outcomes.push(QueryOutcome {
            query_id: query_id.clone(),
            retrieved_id: index.id(di).to_string(),
            distance,
            label: labels.get(&(qi, di)).map(|l| l.label),
            has_positive,
        });
    }

    let scored: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.has_positive).collect();
    let queries_without_positives = outcomes.len() - scored.len();
    let with_pos = scored.len();
    if with_pos == 0 {
        return Err(RetrievalError::NoPositives);
    }

    let default_sweep: Vec<f64> = {
        let mut d: Vec<f64> = scored.iter().map(|o| o.distance).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d.dedup();
        d
    };
    let sweep: &[f64] = match thresholds {
        Some(t) => t,
        None => &default_sweep,
    };

    let mut pr = Vec::with_capacity(sweep.len());
    for &threshold in sweep {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for o in &scored {
            if o.distance <= threshold {
                if o.label == Some(Label::Positive) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let fn_ = with_pos - tp;
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / with_pos as f64;
        pr.push(PrSample { threshold, tp, fp, fn_, precision, recall });
    }

    let recall_at_1 = scored.iter().filter(|o| o.label == Some(Label::Positive)).count() as f64
        / with_pos as f64;

    // Trapezoid over the recall axis, anchored at recall 0 with the
    // precision of the tightest sample.
    let mut curve: Vec<(f64, f64)> = pr.iter().map(|s| (s.recall, s.precision)).collect();
    curve.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut average_precision = 0.0;
    if let Some(&(first_r, first_p)) = curve.first() {
        average_precision += first_r * first_p;
        for w in curve.windows(2) {
            let (r0, p0) = w[0];
            let (r1, p1) = w[1];
            average_precision += (r1 - r0) * (p0 + p1) / 2.0;
        }
    }

    Ok(RetrievalReport {
        outcomes,
        recall_at_1,
        average_precision,
        pr,
        queries_without_positives,
    })
}

/// Writes the PR sweep as CSV.
pub fn write_pr_csv(path: impl AsRef<Path>, report: &RetrievalReport) -> Result<(), RetrievalError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "threshold,tp,fp,fn,precision,recall")?;
    for s in &report.pr {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.threshold, s.tp, s.fp, s.fn_, s.precision, s.recall
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the report as a human-readable block.
pub fn summary(report: &RetrievalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("queries evaluated:  {}\n", report.outcomes.len()));
    out.push_str(&format!(
        "without positives:  {} (excluded from scoring)\n",
        report.queries_without_positives
    ));
    out.push_str(&format!("recall@1:           {:.4}\n", report.recall_at_1));
    out.push_str(&format!("average precision:  {:.4}\n", report.average_precision));
    out.push_str(&format!("pr samples:         {}\n", report.pr.len()));
    out
}

/// Writes a minimal standalone SVG plot of the PR curve.
pub fn write_pr_svg(path: impl AsRef<Path>, report: &RetrievalReport) -> Result<(), RetrievalError> {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let sx = |r: f64| m + r * (w - 2.0 * m);
    let sy = |p: f64| h - m - p * (h - 2.0 * m);
    let mut pts: Vec<(f64, f64)> = report.pr.iter().map(|s| (s.recall, s.precision)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let poly: Vec<String> =
        pts.iter().map(|&(r, p)| format!("{:.2},{:.2}", sx(r), sy(p))).collect();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        w - 2.0 * m,
        h - 2.0 * m
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n",
        w / 2.0,
        h - m / 3.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">precision</text>\n",
        m / 3.0,
        h / 2.0,
        m / 3.0,
        h / 2.0
    ));
    if !poly.is_empty() {
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"#1565c0\" stroke-width=\"1.5\"/>\n",
            poly.join(" ")
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"11\">recall@1 {:.3}, AP {:.3}</text>\n",
        m,
        m - 8.0,
        report.recall_at_1,
        report.average_precision
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit(dim: usize, rng: &mut StdRng) -> GlobalDescriptor {
        let v = DVector::from_fn(dim, |_, _| rng.random::<f64>() - 0.5);
        GlobalDescriptor::from_unnormalized(v, "test").unwrap()
    }

    fn basis(dim: usize, axis: usize) -> GlobalDescriptor {
        let mut v = DVector::zeros(dim);
        v[axis] = 1.0;
        GlobalDescriptor::from_values(v, "test").unwrap()
    }

    #[test]
    fn self_match_comes_back_first_with_zero_distance() {
        let mut rng = StdRng::seed_from_u64(71);
        let ds: Vec<GlobalDescriptor> = (0..10).map(|_| unit(16, &mut rng)).collect();
        let index = DescriptorIndex::from_entries(
            ds.iter().enumerate().map(|(i, d)| (format!("e{i}"), d.clone())),
        )
        .unwrap();
        let got = query(&index, &ds[4], 3).unwrap();
        assert_eq!(got[0].0, "e4");
        assert_eq!(got[0].1, 0.0);
        assert!(got[1].1 <= got[2].1);
    }

    #[test]
    fn oversized_k_returns_the_whole_index_sorted() {
        let mut rng = StdRng::seed_from_u64(72);
        let index = DescriptorIndex::from_entries(
            (0..5).map(|i| (format!("e{i}"), unit(8, &mut rng))),
        )
        .unwrap();
        let q = unit(8, &mut rng);
        let got = query(&index, &q, 100).unwrap();
        assert_eq!(got.len(), 5);
        for w in got.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = StdRng::seed_from_u64(73);
        let dim = 32;
        let index_entries: Vec<(String, GlobalDescriptor)> =
            (0..100).map(|i| (format!("db-{i:03}"), unit(dim, &mut rng))).collect();
        let index = DescriptorIndex::from_entries(index_entries.clone()).unwrap();
        for _ in 0..100 {
            let q = unit(dim, &mut rng);
            let got = query(&index, &q, 7).unwrap();
            // Independent oracle: full scan, stable sort, truncate.
            let mut oracle: Vec<(String, f64)> = index_entries
                .iter()
                .map(|(id, d)| (id.clone(), q.distance(d)))
                .collect();
            oracle.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            oracle.truncate(7);
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn ties_break_toward_smaller_id() {
        let d = basis(4, 0);
        let index = DescriptorIndex::from_entries(vec![
            ("zz".to_string(), d.clone()),
            ("aa".to_string(), d.clone()),
        ])
        .unwrap();
        let got = query(&index, &d, 2).unwrap();
        assert_eq!(got[0].0, "aa");
        assert_eq!(got[1].0, "zz");
    }

    #[test]
    fn input_validation() {
        let empty = DescriptorIndex::new();
        assert!(matches!(query(&empty, &basis(4, 0), 1), Err(RetrievalError::EmptyIndex)));
        let mut index = DescriptorIndex::new();
        index.push("a", basis(4, 0)).unwrap();
        assert!(matches!(query(&index, &basis(4, 0), 0), Err(RetrievalError::BadK)));
        assert!(matches!(
            index.push("a", basis(4, 1)),
            Err(RetrievalError::DuplicateId(_))
        ));
    }

    /// Four database axes; queries sit close to their intended match.
    fn fixture() -> (DescriptorIndex, Vec<(String, GlobalDescriptor)>) {
        let dim = 8;
        let index = DescriptorIndex::from_entries(
            (0..4).map(|i| (format!("db{i}"), basis(dim, i))),
        )
        .unwrap();
        let mk = |axis: usize, off_axis: usize, d: f64| {
            let theta = 2.0 * (d / 2.0f64).asin();
            let mut v = DVector::zeros(dim);
            v[axis] = theta.cos();
            v[off_axis] = theta.sin();
            GlobalDescriptor::from_values(v, "q").unwrap()
        };
        let queries = vec![
            ("q0".to_string(), mk(0, 4, 0.1)),
            ("q1".to_string(), mk(1, 4, 0.2)),
            ("q2".to_string(), mk(2, 4, 0.3)),
            ("q3".to_string(), mk(3, 4, 0.4)),
        ];
        (index, queries)
    }

    fn label_map(pairs: &[((usize, usize), Label)]) -> BTreeMap<(usize, usize), CovisLabel> {
        pairs
            .iter()
            .map(|&((i, j), label)| {
                let score = match label {
                    Label::Positive => 0.5,
                    Label::Negative => 0.0,
                    Label::Ignore => 0.22,
                };
                ((i, j), CovisLabel { score, label })
            })
            .collect()
    }

    #[test]
    fn recall_counts_misses_in_the_denominator() {
        let (index, queries) = fixture();
        // q3's only positive is db0, but its nearest neighbor is db3: a miss.
        let labels = label_map(&[
            ((0, 0), Label::Positive),
            ((1, 1), Label::Positive),
            ((2, 2), Label::Positive),
            ((3, 0), Label::Positive),
            ((3, 3), Label::Negative),
        ]);
        let report = evaluate(&index, &queries, &labels, None).unwrap();
        // TP=3 of 4 queries with positives.
        assert!((report.recall_at_1 - 0.75).abs() < 1e-12);
        let last = report.pr.last().unwrap();
        assert_eq!(last.tp, 3);
        assert_eq!(last.fn_, 1);
    }

    #[test]
    fn precision_counts_wrong_retrievals() {
        let (index, queries) = fixture();
        // q3 retrieves db3 which is labeled negative for it.
        let labels = label_map(&[
            ((0, 0), Label::Positive),
            ((1, 1), Label::Positive),
            ((2, 2), Label::Positive),
            ((3, 0), Label::Positive),
            ((3, 3), Label::Negative),
        ]);
        let report = evaluate(&index, &queries, &labels, Some(&[10.0])).unwrap();
        let s = &report.pr[0];
        assert_eq!((s.tp, s.fp), (3, 1));
        assert!((s.precision - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_retrieval_has_unit_average_precision() {
        let (index, queries) = fixture();
        let labels = label_map(&[
            ((0, 0), Label::Positive),
            ((1, 1), Label::Positive),
            ((2, 2), Label::Positive),
            ((3, 3), Label::Positive),
        ]);
        let report = evaluate(&index, &queries, &labels, None).unwrap();
        assert!((report.recall_at_1 - 1.0).abs() < 1e-12);
        assert!((report.average_precision - 1.0).abs() < 1e-12);
        assert!(report.pr.iter().all(|s| s.precision == 1.0));
    }

    #[test]
    fn queries_without_positives_are_excluded_and_reported() {
        let (index, queries) = fixture();
        let labels = label_map(&[
            ((0, 0), Label::Positive),
            ((1, 1), Label::Positive),
            // q2 and q3 have no positives at all.
        ]);
        let report = evaluate(&index, &queries, &labels, None).unwrap();
        assert_eq!(report.queries_without_positives, 2);
        assert!((report.recall_at_1 - 1.0).abs() < 1e-12);
        let last = report.pr.last().unwrap();
        assert_eq!(last.tp + last.fp + last.fn_, 2);
    }

    #[test]
    fn ignore_band_retrieval_counts_against_precision() {
        let (index, queries) = fixture();
        let labels = label_map(&[
            ((0, 0), Label::Ignore),
            ((0, 1), Label::Positive),
            ((1, 1), Label::Positive),
        ]);
        let report = evaluate(&index, &queries, &labels, Some(&[10.0])).unwrap();
        // q0 retrieves db0 (ignore) though db1 is its positive: FP.
        let s = &report.pr[0];
        assert_eq!((s.tp, s.fp), (1, 1));
    }

    #[test]
    fn recall_is_monotone_in_the_threshold_and_reports_are_deterministic() {
        let mut rng = StdRng::seed_from_u64(74);
        for _ in 0..20 {
            let dim = 12;
            let index = DescriptorIndex::from_entries(
                (0..15).map(|i| (format!("db{i:02}"), unit(dim, &mut rng))),
            )
            .unwrap();
            let queries: Vec<(String, GlobalDescriptor)> =
                (0..10).map(|i| (format!("q{i}"), unit(dim, &mut rng))).collect();
            let mut labels = BTreeMap::new();
            for qi in 0..10 {
                for di in 0..15 {
                    let label = match (qi + di) % 3 {
                        0 => Label::Positive,
                        1 => Label::Negative,
                        _ => Label::Ignore,
                    };
                    labels.insert((qi, di), CovisLabel { score: 0.0, label });
                }
            }
            let a = evaluate(&index, &queries, &labels, None).unwrap();
            let b = evaluate(&index, &queries, &labels, None).unwrap();
            assert_eq!(a, b);
            for w in a.pr.windows(2) {
                assert!(w[0].threshold <= w[1].threshold);
                assert!(w[0].recall <= w[1].recall);
            }
            assert!(a.pr.iter().all(|s| (0.0..=1.0).contains(&s.precision)));
            assert!(a.pr.iter().all(|s| (0.0..=1.0).contains(&s.recall)));
        }
    }

    #[test]
    fn no_positive_labels_is_an_error() {
        let (index, queries) = fixture();
        let labels = label_map(&[((0, 0), Label::Negative)]);
        assert!(matches!(
            evaluate(&index, &queries, &labels, None),
            Err(RetrievalError::NoPositives)
        ));
    }

    #[test]
    fn report_files_are_written() {
        let (index, queries) = fixture();
        let labels = label_map(&[
            ((0, 0), Label::Positive),
            ((1, 1), Label::Positive),
            ((2, 2), Label::Positive),
            ((3, 3), Label::Positive),
        ]);
        let report = evaluate(&index, &queries, &labels, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("pr.csv");
        write_pr_csv(&csv, &report).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("threshold,tp,fp,fn,precision,recall\n"));
        assert_eq!(text.lines().count(), report.pr.len() + 1);

        let svg = dir.path().join("pr.svg");
        write_pr_svg(&svg, &report).unwrap();
        let svg_text = std::fs::read_to_string(&svg).unwrap();
        assert!(svg_text.starts_with("<svg"));
        assert!(svg_text.contains("polyline"));

        let s = summary(&report);
        assert!(s.contains("recall@1"));
        assert!(s.contains("1.0000"));
    }

    #[test]
    fn index_snapshot_round_trips_bit_exactly() {
        let mut rng = StdRng::seed_from_u64(91);
        let index = DescriptorIndex::from_entries(
            (0..20).map(|i| (format!("cloud/{i:04}.bin"), unit(48, &mut rng))),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.txt");
        write_index(&path, &index).unwrap();
        let back = read_index(&path).unwrap();
        assert_eq!(back.len(), index.len());
        for i in 0..index.len() {
            assert_eq!(back.id(i), index.id(i));
            assert_eq!(back.descriptor(i).values(), index.descriptor(i).values());
        }
        // Writing the reread index reproduces the file byte for byte.
        let path2 = dir.path().join("again.txt");
        write_index(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn index_snapshot_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.txt");
        let cases = [
            ("a\t1 0\n", 1, "header"),
            ("dim 2\nnovalues\n", 2, "id<TAB>values"),
            ("dim 2\na\t1 0 0\n", 2, "expected 2 values"),
            ("dim 2\na\t1 bogus\n", 2, "bad value"),
            ("dim 2\na\t3 4\n", 2, "norm"),
            ("# only a comment\n", 0, "missing"),
        ];
        for (text, line, needle) in cases {
            std::fs::write(&path, text).unwrap();
            match read_index(&path) {
                Err(RetrievalError::Format { line: l, msg, .. }) => {
                    assert_eq!(l, line, "wrong line for {text:?}");
                    assert!(msg.contains(needle), "message {msg:?} for {text:?}");
                }
                other => panic!("expected a format error for {text:?}, got {other:?}"),
            }
        }
        std::fs::write(&path, "dim 2\na\t1 0\na\t0 1\n").unwrap();
        assert!(matches!(read_index(&path), Err(RetrievalError::DuplicateId(_))));
    }
}

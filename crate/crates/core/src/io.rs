//! CSV ingestion and report emission.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::report::TestReport;

/// Which CSV columns play which part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub selection: String,
    pub x: Vec<String>,
    pub zc: Vec<String>,
    pub zd: Vec<String>,
    pub oracle_p: Option<String>,
}

fn role_clash(col: &str, a: &str, b: &str) -> Error {
    Error::config(Stage::Input, format!("column `{col}` is assigned to both {a} and {b}"))
}

impl ColumnRoles {
    /// Roles are disjoint except that `x` columns may reappear among the
    /// instruments.
    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() || self.selection.is_empty() {
            return Err(Error::config(Stage::Input, "outcome and selection columns are required"));
        }
        if self.x.is_empty() {
            return Err(Error::config(Stage::Input, "at least one x column is required"));
        }
        if self.zc.is_empty() && self.zd.is_empty() && self.oracle_p.is_none() {
            return Err(Error::config(
                Stage::Input,
                "give instrument columns (zc/zd) or an oracle propensity column",
            ));
        }
        let mut owner: HashMap<&str, &str> = HashMap::new();
        let singles = [
            ("outcome", Some(self.outcome.as_str())),
            ("selection", Some(self.selection.as_str())),
            ("oracle-p", self.oracle_p.as_deref()),
        ];
        for (role, col) in singles {
            if let Some(col) = col {
                if let Some(prev) = owner.insert(col, role) {
                    return Err(role_clash(col, prev, role));
                }
            }
        }
        for (role, cols) in [("x", &self.x), ("zc", &self.zc), ("zd", &self.zd)] {
            for (k, col) in cols.iter().enumerate() {
                if cols[..k].contains(col) {
                    return Err(role_clash(col, role, role));
                }
                match owner.get(col.as_str()) {
                    Some(&"x") if role != "x" => {}
                    Some(&prev) => return Err(role_clash(col, prev, role)),
                    None => {
                        owner.insert(col, role);
                    }
                }
            }
        }
        Ok(())
    }
}

/// A loaded sample plus the oracle propensity column when one was named.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub data: Dataset,
    pub oracle_p: Option<Vec<f64>>,
    /// Category labels per discrete instrument, indexed by code.
    pub categories: Vec<Vec<String>>,
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

fn cell_error(line: u64, col: &str, msg: impl std::fmt::Display) -> Error {
    Error::data(format!("line {line}, column `{col}`: {msg}"))
}

fn parse_number(field: &str, line: u64, col: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| cell_error(line, col, format!("expected a finite number, found {field:?}")))
}

pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Loaded> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, roles)
}

/// Header row required. Rows with `s = 0` may leave the outcome empty;
/// discrete instruments are coded by order of first appearance.
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Loaded> {
    roles.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read the header row: {e}")))?
        .clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("column `{name}` not found in the header")))
    };
    let iy = index(&roles.outcome)?;
    let is = index(&roles.selection)?;
    let ix = roles.x.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let izc = roles.zc.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let izd = roles.zd.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let ip = roles.oracle_p.as_deref().map(index).transpose()?;

    let (mut y, mut s, mut x, mut zc, mut zd, mut p) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut codes: Vec<HashMap<String, i64>> = vec![HashMap::new(); izd.len()];
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); izd.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("");
        let sel = match get(is) {
            "1" => true,
            "0" => false,
            other => {
                return Err(cell_error(line, &roles.selection, format!("selection must be 0 or 1, found {other:?}")));
            }
        };
        let yv = get(iy);
        y.push(if is_missing(yv) {
            if sel {
                return Err(cell_error(line, &roles.outcome, "selected row has no outcome"));
            }
            f64::NAN
        } else {
            parse_number(yv, line, &roles.outcome)?
        });
        s.push(sel);
        for (&i, col) in ix.iter().zip(&roles.x) {
            x.push(parse_number(get(i), line, col)?);
        }
        for (&i, col) in izc.iter().zip(&roles.zc) {
            zc.push(parse_number(get(i), line, col)?);
        }
        for (k, &i) in izd.iter().enumerate() {
            let label = get(i);
            if is_missing(label) {
                return Err(cell_error(line, &roles.zd[k], "missing category"));
            }
            let next = codes[k].len() as i64;
            let code = *codes[k].entry(label.to_string()).or_insert_with(|| {
                categories[k].push(label.to_string());
                next
            });
            zd.push(code);
        }
        if let (Some(i), Some(col)) = (ip, roles.oracle_p.as_deref()) {
            let v = parse_number(get(i), line, col)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(cell_error(line, col, format!("propensity {v} outside [0, 1]")));
            }
            p.push(v);
        }
    }
    if s.is_empty() {
        return Err(Error::data("the file has a header but no data rows"));
    }
    let data = if izc.is_empty() && izd.is_empty() {
        Dataset::with_external_propensity(y, x, ix.len(), s)?
    } else {
        Dataset::new(y, x, ix.len(), zc, izc.len(), zd, izd.len(), s)?
    };
    Ok(Loaded {
        data,
        oracle_p: ip.map(|_| p),
        categories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Text,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "text" | "txt" => Ok(Self::Text),
            other => Err(Error::config(Stage::Output, format!("unknown output format {other:?}"))),
        }
    }
}

/// `0.9 -> "90%"`, trimming a trailing `.0`.
fn percent(v: f64) -> String {
    let s = format!("{:.4}", v * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

/// Observations behind the statistic: the window count for the second
/// test, the full sample otherwise.
pub fn n_obs(report: &TestReport) -> usize {
    report.diagnostics.n_window.unwrap_or(report.diagnostics.n)
}

/// Table-style text: statistic, one row per τ, CV rows, p-value, `# obs`.
pub fn report_text(report: &TestReport) -> String {
    let mut rows: Vec<(String, String)> = vec![("Statistic".into(), format!("{:.3}", report.statistic))];
    for tv in &report.per_tau {
        rows.push((percent(tv.tau), format!("{:.3}", tv.value.abs())));
    }
    let mut cvs: Vec<(f64, f64)> = report
        .critical_values
        .iter()
        .filter_map(|(k, &v)| k.parse::<f64>().ok().map(|a| (a, v)))
        .collect();
    cvs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (alpha, cv) in cvs {
        rows.push((format!("{}-CV", percent(1.0 - alpha)), format!("{cv:.3}")));
    }
    rows.push(("P-Value".into(), format!("{:.2}", report.p_value)));
    rows.push(("# obs".into(), n_obs(report).to_string()));
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{}", report.test);
    for (label, value) in rows {
        let _ = writeln!(out, "{label:<width$}  {value}");
    }
    out
}

/// Bootstrap draws, one row per replication.
pub fn report_csv(report: &TestReport) -> String {
    let mut out = String::from("replication,draw\n");
    for (r, d) in report.boot_draws.iter().enumerate() {
        let _ = writeln!(out, "{},{d}", r + 1);
    }
    out
}

pub fn render_report(report: &TestReport, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
        OutputFormat::Csv => report_csv(report),
        OutputFormat::Text => report_text(report),
    })
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: &TestReport, format: OutputFormat, path: Option<&Path>) -> Result<()> {
    write_output(&render_report(report, format)?, path)
}

pub fn write_output(body: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body)
            .map_err(|e| Error::config(Stage::Output, format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Diagnostics, TauValue};

    fn roles() -> ColumnRoles {
        ColumnRoles {
            outcome: "y".into(),
            selection: "s".into(),
            x: vec!["x".into()],
            zc: vec!["z".into()],
            ..Default::default()
        }
    }

    #[test]
    fn three_rows_with_one_unselected() {
        let csv = "y,s,x,z\n1.5,1,0.1,2\n,0,0.2,3\n-2,1,0.3,4\n";
        let l = read_csv(csv.as_bytes(), &roles()).unwrap();
        assert_eq!(l.data.n(), 3);
        assert_eq!(l.data.selected(), vec![0, 2]);
        assert!(l.data.y[1].is_nan());
        assert_eq!(l.data.y[2], -2.0);
    }

    #[test]
    fn selection_outside_zero_one_names_the_cell() {
        let csv = "y,s,x,z\n1,1,0.1,2\n1,2,0.2,3\n";
        let msg = read_csv(csv.as_bytes(), &roles()).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("`s`"), "{msg}");
    }

    #[test]
    fn quoted_decimals_parse_exactly() {
        let csv = "y,s,x,z\n\"0.1\",1,\" 2.5e-3 \",\"-7.25\"\n";
        let l = read_csv(csv.as_bytes(), &roles()).unwrap();
        assert_eq!(l.data.y[0], 0.1);
        assert_eq!(l.data.x[0], 0.0025);
        assert_eq!(l.data.zc[0], -7.25);
    }

    #[test]
    fn non_numeric_covariate_rejected() {
        let csv = "y,s,x,z\n1,1,abc,2\n";
        let msg = read_csv(csv.as_bytes(), &roles()).unwrap_err().to_string();
        assert!(msg.contains("`x`") && msg.contains("abc"), "{msg}");
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "y,s,x\n1,1,0.5\n";
        assert!(read_csv(csv.as_bytes(), &roles()).unwrap_err().to_string().contains("`z`"));
    }

    #[test]
    fn categories_coded_by_first_appearance() {
        let r = ColumnRoles {
            zc: vec![],
            zd: vec!["g".into()],
            ..roles()
        };
        let csv = "y,s,x,g\n1,1,0.1,b\n2,0,0.2,a\n3,1,0.3,b\n";
        let l = read_csv(csv.as_bytes(), &r).unwrap();
        assert_eq!(l.data.zd, vec![0, 1, 0]);
        assert_eq!(l.categories[0], vec!["b", "a"]);
    }

    #[test]
    fn x_may_double_as_instrument_but_roles_otherwise_disjoint() {
        let mut r = roles();
        r.zc.push("x".into());
        assert!(r.validate().is_ok());
        r.zd.push("z".into());
        assert!(r.validate().is_err());
        let r = ColumnRoles {
            oracle_p: Some("y".into()),
            ..roles()
        };
        assert!(r.validate().is_err());
    }

    fn sample_report() -> TestReport {
        TestReport {
            test: "test1".into(),
            statistic: 0.05,
            per_tau: vec![TauValue { tau: 0.1, value: 0.05 }, TauValue { tau: 0.9, value: 0.02 }],
            argmax: None,
            boot_draws: vec![0.01, 0.03, 0.02, 0.07],
            critical_values: [("0.1".to_string(), 0.049), ("0.05".to_string(), 0.053)].into_iter().collect(),
            p_value: 0.1,
            diagnostics: Diagnostics {
                n: 7623,
                ..Default::default()
            },
            config_echo: serde_json::json!({"taus": [0.1, 0.9]}),
            seed: 7,
        }
    }

    #[test]
    fn text_layout_rows() {
        let t = report_text(&sample_report());
        for label in ["Statistic", "10%", "90%", "90%-CV", "95%-CV", "P-Value", "# obs"] {
            assert!(t.lines().any(|l| l.starts_with(label)), "missing {label} in\n{t}");
        }
        assert!(t.contains("7623"));
        let cv90 = t.lines().position(|l| l.starts_with("90%-CV")).unwrap();
        let cv95 = t.lines().position(|l| l.starts_with("95%-CV")).unwrap();
        assert!(cv90 < cv95);
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        let s = render_report(&r, OutputFormat::Json).unwrap();
        let back: TestReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_one_row_per_draw() {
        let s = report_csv(&sample_report());
        assert_eq!(s.lines().count(), 1 + 4);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let r = sample_report();
        let bad = Path::new("/nonexistent-dir/for/report.json");
        assert!(emit_report(&r, OutputFormat::Json, Some(bad)).is_err());
    }
}

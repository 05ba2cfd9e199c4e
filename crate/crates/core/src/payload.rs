//! Closed-form uplink and downlink payloads for FL, FTL (full and head-only)
//! and FbFTL, plus table rendering with decimal SI units.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamCounts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// FedAvg from scratch, every layer trained.
    #[serde(rename = "fl")]
    Fl,
    /// FedAvg with the extractor pre-loaded, every layer trained.
    #[serde(rename = "ftl_f")]
    FtlFull,
    /// FedAvg with the extractor frozen, only the head trained.
    #[serde(rename = "ftl_c")]
    FtlHead,
    /// One-shot feature upload, head trained at the server.
    #[serde(rename = "fbftl")]
    Fbftl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fl, Method::FtlFull, Method::FtlHead, Method::Fbftl];

    pub fn is_fedavg(self) -> bool {
        !matches!(self, Method::Fbftl)
    }

    pub fn key(self) -> &'static str {
        match self {
            Method::Fl => "fl",
            Method::FtlFull => "ftl_f",
            Method::FtlHead => "ftl_c",
            Method::Fbftl => "fbftl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fl => "FL",
            Method::FtlFull => "FTL_f",
            Method::FtlHead => "FTL_c",
            Method::Fbftl => "FbFTL",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fl" => Ok(Method::Fl),
            "ftl_f" | "ftlf" => Ok(Method::FtlFull),
            "ftl_c" | "ftlc" => Ok(Method::FtlHead),
            "fbftl" => Ok(Method::Fbftl),
            _ => Err(Error::invalid(format!(
                "unknown method {s:?}; expected one of fl, ftl_f, ftl_c, fbftl"
            ))),
        }
    }
}

/// Batch counts for the three FedAvg methods (`I * U * C` each).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgBatches {
    pub fl: u64,
    pub ftl_f: u64,
    pub ftl_c: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PayloadInputs {
    /// Bits per transmitted number.
    pub bit_width: u64,
    /// Clients selected per FedAvg round, `round(U * C)`.
    pub clients_per_round: u64,
    pub batches: FedAvgBatches,
    /// Samples uploaded once each under FbFTL.
    pub total_samples: u64,
    pub counts: ParamCounts,
    /// Extra uplink bits per FedAvg upload for the sample count `K_u`.
    pub sample_count_bits: u64,
    /// Extra uplink bits per FbFTL sample for its label.
    pub label_bits: u64,
}

impl PayloadInputs {
    pub fn new(
        bit_width: u64,
        clients_per_round: u64,
        batches: FedAvgBatches,
        total_samples: u64,
        counts: ParamCounts,
    ) -> Result<Self> {
        if bit_width == 0 {
            return Err(Error::config("bit width must be positive"));
        }
        if clients_per_round == 0 {
            return Err(Error::config("at least one client must be selected per round"));
        }
        if counts.head > counts.full {
            return Err(Error::config("head parameters exceed the model total"));
        }
        Ok(Self {
            bit_width,
            clients_per_round,
            batches,
            total_samples,
            counts,
            sample_count_bits: 0,
            label_bits: 0,
        })
    }

    pub fn upload_batches(&self, method: Method) -> u64 {
        match method {
            Method::Fl => self.batches.fl,
            Method::FtlFull => self.batches.ftl_f,
            Method::FtlHead => self.batches.ftl_c,
            Method::Fbftl => self.total_samples,
        }
    }

    pub fn params_per_batch(&self, method: Method) -> u64 {
        match method {
            Method::Fl | Method::FtlFull => self.counts.full,
            Method::FtlHead => self.counts.head,
            Method::Fbftl => self.counts.cut_input,
        }
    }

    pub fn bits_per_batch(&self, method: Method) -> u128 {
        let extra = if method.is_fedavg() {
            self.sample_count_bits
        } else {
            self.label_bits
        };
        u128::from(self.bit_width) * u128::from(self.params_per_batch(method)) + u128::from(extra)
    }

    /// `I`, the number of FedAvg rounds, as an exact fraction of
    /// batches over clients per round.
    pub fn iterations(&self, method: Method) -> f64 {
        self.upload_batches(method) as f64 / self.clients_per_round as f64
    }
}

/// Total uplink bits.
///
/// FL and FTL_f: `d * IUC * sum T_m`; FTL_c: `d * IUC * sum_{m >= m_c} T_m`;
/// FbFTL: `d * sum K_u * N-_{m_c}`.
pub fn uplink_total(method: Method, inputs: &PayloadInputs) -> u128 {
    u128::from(inputs.upload_batches(method)) * inputs.bits_per_batch(method)
}

/// Total downlink broadcast bits.
///
/// Every FedAvg variant broadcasts the whole trainable vector once per
/// round, `d * I * sum T_m`; FbFTL broadcasts the extractor once,
/// `d * sum_{m < m_c} T_m`. A fractional round count (batches not a
/// multiple of clients per round) is rounded to the nearest bit.
pub fn downlink_total(method: Method, inputs: &PayloadInputs) -> u128 {
    let d = u128::from(inputs.bit_width);
    match method {
        Method::Fbftl => d * u128::from(inputs.counts.extractor),
        _ => {
            let num = d * u128::from(inputs.upload_batches(method)) * u128::from(inputs.counts.full);
            let den = u128::from(inputs.clients_per_round);
            (num + den / 2) / den
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioBounds {
    /// `sum_{m >= m_c} T_m / N-_{m_c}`.
    pub per_sample_ratio: f64,
    /// `N+_{m_c}`, the bound it must exceed.
    pub per_sample_bound: u64,
    pub per_sample_holds: bool,
    /// `P^FTL_c / P^FbFTL`.
    pub total_ratio: f64,
    /// `(IUC / sum K_u) N+_{m_c}`.
    pub total_bound: f64,
    pub total_holds: bool,
}

impl RatioBounds {
    pub fn holds(&self) -> bool {
        self.per_sample_holds && self.total_holds
    }
}

/// Evaluates the per-sample ratio bound between FTL_c and FbFTL uploads and
/// the implied bound on their totals. Comparisons use exact integers.
pub fn ratio_bound_check(inputs: &PayloadInputs) -> Result<RatioBounds> {
    let c = inputs.counts;
    if c.cut_input == 0 || inputs.total_samples == 0 {
        return Err(Error::invalid(
            "ratio bounds need a non-empty feature vector and samples",
        ));
    }
    let head_bits = uplink_total(Method::FtlHead, inputs);
    let fb_bits = uplink_total(Method::Fbftl, inputs);
    let batches = u128::from(inputs.batches.ftl_c);
    let k_total = u128::from(inputs.total_samples);
    let n_plus = u128::from(c.cut_output);
    Ok(RatioBounds {
        per_sample_ratio: c.head as f64 / c.cut_input as f64,
        per_sample_bound: c.cut_output,
        per_sample_holds: u128::from(c.head) > n_plus * u128::from(c.cut_input),
        total_ratio: head_bits as f64 / fb_bits as f64,
        total_bound: inputs.batches.ftl_c as f64 / inputs.total_samples as f64 * c.cut_output as f64,
        total_holds: fb_bits > 0 && head_bits * k_total > batches * n_plus * fb_bits,
    })
}

/// FbFTL must sit at least this factor below FTL_c to count as "much less".
pub const MUCH_LESS_FACTOR: u128 = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OrderingReport {
    /// `P^FbFTL * MUCH_LESS_FACTOR < P^FTL_c`.
    pub fbftl_far_below_head: bool,
    /// `P^FTL_c < P^FTL_f`.
    pub head_below_full: bool,
    /// `P^FTL_f < P^FL`.
    pub full_below_scratch: bool,
    /// `P^FbFTL * MUCH_LESS_FACTOR` below every other method.
    pub fbftl_far_below_all: bool,
}

impl OrderingReport {
    pub fn holds(&self) -> bool {
        self.fbftl_far_below_head && self.head_below_full && self.full_below_scratch
    }
}

pub fn ordering_check(inputs: &PayloadInputs) -> OrderingReport {
    let p = |m| uplink_total(m, inputs);
    let fb = p(Method::Fbftl) * MUCH_LESS_FACTOR;
    OrderingReport {
        fbftl_far_below_head: fb < p(Method::FtlHead),
        head_below_full: p(Method::FtlHead) < p(Method::FtlFull),
        full_below_scratch: p(Method::FtlFull) < p(Method::Fl),
        fbftl_far_below_all: [Method::Fl, Method::FtlFull, Method::FtlHead]
            .iter()
            .all(|&m| fb < p(m)),
    }
}

const UNITS: [(u128, &str); 4] = [
    (1_000_000_000_000, "Tb"),
    (1_000_000_000, "Gb"),
    (1_000_000, "Mb"),
    (1_000, "Kb"),
];

/// Decimal SI rendering with one decimal place in the largest unit (up to
/// Tb) whose mantissa is at least 1. Below 1 Kb the exact count is shown.
pub fn format_bits(bits: u128) -> String {
    format_bits_with(bits, 1)
}

pub fn format_bits_with(bits: u128, decimals: usize) -> String {
    if bits < 1000 {
        return format!("{bits} b");
    }
    for (i, &(scale, unit)) in UNITS.iter().enumerate() {
        if bits >= scale {
            let mantissa = bits as f64 / scale as f64;
            let shown = format!("{mantissa:.decimals$}");
            // 999.96 Kb must not render as "1000.0 Kb"
            if i > 0 && shown.parse::<f64>().unwrap_or(0.0) >= 1000.0 {
                let (up, up_unit) = UNITS[i - 1];
                return format!("{:.decimals$} {up_unit}", bits as f64 / up as f64);
            }
            return format!("{shown} {unit}");
        }
    }
    unreachable!("bits >= 1000 always matches Kb")
}

/// A parsed table cell such as `"336.1 Kb"` or `"41160"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplayValue {
    pub mantissa: f64,
    pub scale: u128,
    pub decimals: usize,
}

impl DisplayValue {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (num, unit) = match text.split_once(' ') {
            Some((n, u)) => (n.trim(), u.trim()),
            None => (text, ""),
        };
        let scale = match unit {
            "" | "b" => 1,
            u => UNITS
                .iter()
                .find(|(_, name)| *name == u)
                .map(|(s, _)| *s)
                .ok_or_else(|| Error::invalid(format!("unknown unit {u:?} in {text:?}")))?,
        };
        let mantissa: f64 = num
            .parse()
            .map_err(|_| Error::invalid(format!("cannot parse {text:?}")))?;
        let decimals = num.split_once('.').map_or(0, |(_, frac)| frac.len());
        Ok(Self {
            mantissa,
            scale,
            decimals,
        })
    }

    pub fn value(&self) -> f64 {
        self.mantissa * self.scale as f64
    }

    /// True when `bits`, expressed in this cell's unit, lies within half a
    /// unit of the cell's last displayed digit.
    pub fn matches(&self, bits: u128) -> bool {
        let computed = bits as f64 / self.scale as f64;
        let half_ulp = 0.5 * 10f64.powi(-(self.decimals as i32));
        (computed - self.mantissa).abs() <= half_ulp * (1.0 + 1e-12)
    }

    /// `bits` rendered in this cell's unit and precision.
    pub fn render(&self, bits: u128) -> String {
        let computed = bits as f64 / self.scale as f64;
        let unit = UNITS.iter().find(|(s, _)| *s == self.scale).map_or("", |(_, u)| u);
        let decimals = self.decimals;
        if unit.is_empty() {
            format!("{computed:.decimals$}")
        } else {
            format!("{computed:.decimals$} {unit}")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportCell {
    UploadBatches,
    ParamsPerBatch,
    BitsPerBatch,
    TotalUplink,
    TotalDownlink,
}

impl fmt::Display for ReportCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportCell::UploadBatches => "upload batches",
            ReportCell::ParamsPerBatch => "upload parameters per batch",
            ReportCell::BitsPerBatch => "uplink payload per batch",
            ReportCell::TotalUplink => "total uplink payload P",
            ReportCell::TotalDownlink => "total downlink payload D",
        })
    }
}

/// A reference value to compare a computed cell against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishedCell {
    pub method: Method,
    pub cell: ReportCell,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayloadRow {
    pub method: Method,
    pub upload_batches: u64,
    pub params_per_batch: u64,
    pub bits_per_batch: u128,
    pub total_uplink: u128,
    pub total_downlink: u128,
}

impl PayloadRow {
    pub fn cell(&self, cell: ReportCell) -> u128 {
        match cell {
            ReportCell::UploadBatches => u128::from(self.upload_batches),
            ReportCell::ParamsPerBatch => u128::from(self.params_per_batch),
            ReportCell::BitsPerBatch => self.bits_per_batch,
            ReportCell::TotalUplink => self.total_uplink,
            ReportCell::TotalDownlink => self.total_downlink,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellCheck {
    pub method: Method,
    pub cell: ReportCell,
    pub published: String,
    pub computed: String,
    pub matches: bool,
    /// For mismatches: an alternative formula that reproduces the
    /// published value, if one of the known variants does.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayloadReport {
    pub inputs: PayloadInputs,
    pub rows: Vec<PayloadRow>,
    pub checks: Vec<CellCheck>,
    /// Free-form notes about the inputs themselves.
    pub notes: Vec<String>,
}

impl PayloadReport {
    pub fn build(inputs: PayloadInputs, published: &[PublishedCell]) -> Result<Self> {
        let rows: Vec<PayloadRow> = Method::ALL
            .iter()
            .map(|&method| PayloadRow {
                method,
                upload_batches: inputs.upload_batches(method),
                params_per_batch: inputs.params_per_batch(method),
                bits_per_batch: inputs.bits_per_batch(method),
                total_uplink: uplink_total(method, &inputs),
                total_downlink: downlink_total(method, &inputs),
            })
            .collect();
        let mut checks = Vec::with_capacity(published.len());
        for p in published {
            let shown = DisplayValue::parse(&p.value)?;
            let row = rows.iter().find(|r| r.method == p.method).expect("all methods present");
            let computed = row.cell(p.cell);
            let matches = shown.matches(computed);
            let note = if matches {
                None
            } else {
                Some(explain_mismatch(&inputs, p.method, p.cell, &shown))
            };
            checks.push(CellCheck {
                method: p.method,
                cell: p.cell,
                published: p.value.clone(),
                computed: shown.render(computed),
                matches,
                note,
            });
        }
        Ok(Self {
            inputs,
            rows,
            checks,
            notes: Vec::new(),
        })
    }

    pub fn row(&self, method: Method) -> &PayloadRow {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .expect("all methods present")
    }

    pub fn discrepancies(&self) -> impl Iterator<Item = &CellCheck> {
        self.checks.iter().filter(|c| !c.matches)
    }

    /// CSV with one row per method. Bit totals are exact integers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,upload_batches,params_per_batch,bits_per_batch,total_uplink_bits,total_downlink_bits\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.upload_batches, r.params_per_batch, r.bits_per_batch, r.total_uplink, r.total_downlink
            ));
        }
        out
    }

    /// Aligned text table shaped like the published comparison tables,
    /// followed by any discrepancy notes.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = std::iter::once(String::new())
            .chain(self.rows.iter().map(|r| r.method.to_string()))
            .collect();
        let body: Vec<Vec<String>> = vec![
            row_strings("upload batches", &self.rows, |r| r.upload_batches.to_string()),
            row_strings("upload parameters per batch", &self.rows, |r| {
                r.params_per_batch.to_string()
            }),
            row_strings("uplink payload per batch", &self.rows, |r| {
                format_bits(r.bits_per_batch)
            }),
            row_strings("total uplink payload P", &self.rows, |r| format_bits(r.total_uplink)),
            row_strings("total downlink payload D", &self.rows, |r| {
                format_bits(r.total_downlink)
            }),
        ];
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for line in &body {
            for (w, cell) in widths.iter_mut().zip(line) {
                *w = (*w).max(cell.len());
            }
        }
        let render = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            format!("{}\n", parts.join(" | ").trim_end())
        };
        let mut out = render(&header);
        out.push_str(&format!(
            "{}\n",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
        ));
        for line in &body {
            out.push_str(&render(line));
        }
        let discrepancies: Vec<&CellCheck> = self.discrepancies().collect();
        if !discrepancies.is_empty() || !self.notes.is_empty() {
            out.push_str("\nnotes:\n");
        }
        for d in discrepancies {
            out.push_str(&format!(
                "  {} {}: published {}, formula gives {}",
                d.method, d.cell, d.published, d.computed
            ));
            if let Some(n) = &d.note {
                out.push_str(&format!("; {n}"));
            }
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str(&format!("  {n}\n"));
        }
        out
    }
}

fn row_strings(label: &str, rows: &[PayloadRow], f: impl Fn(&PayloadRow) -> String) -> Vec<String> {
    std::iter::once(label.to_string()).chain(rows.iter().map(f)).collect()
}

/// Looks for a simple formula variant that reproduces a mismatching cell.
fn explain_mismatch(inputs: &PayloadInputs, method: Method, cell: ReportCell, shown: &DisplayValue) -> String {
    let d = u128::from(inputs.bit_width);
    let c = inputs.counts;
    let batches = u128::from(inputs.upload_batches(method));
    let uc = u128::from(inputs.clients_per_round);
    let rounds = |n: u128| (n + uc / 2) / uc;
    let candidates: Vec<(String, u128)> = match cell {
        ReportCell::TotalUplink => vec![
            (
                format!("{batches} batches x d x full model ({})", c.full),
                batches * d * u128::from(c.full),
            ),
            (
                format!("{batches} batches x d x head ({})", c.head),
                batches * d * u128::from(c.head),
            ),
            (
                format!("{batches} batches x d x features ({})", c.cut_input),
                batches * d * u128::from(c.cut_input),
            ),
        ],
        ReportCell::TotalDownlink => vec![
            (
                format!("d x I x full model ({})", c.full),
                rounds(d * batches * u128::from(c.full)),
            ),
            (
                format!("d x I x head ({})", c.head),
                rounds(d * batches * u128::from(c.head)),
            ),
            (
                format!("one broadcast of the head, d x {}", c.head),
                d * u128::from(c.head),
            ),
            (
                format!("one broadcast of the full model, d x {}", c.full),
                d * u128::from(c.full),
            ),
            (
                format!("one broadcast of the extractor, d x {}", c.extractor),
                d * u128::from(c.extractor),
            ),
        ],
        ReportCell::BitsPerBatch => vec![
            (format!("d x full model ({})", c.full), d * u128::from(c.full)),
            (format!("d x head ({})", c.head), d * u128::from(c.head)),
        ],
        ReportCell::UploadBatches | ReportCell::ParamsPerBatch => Vec::new(),
    };
    candidates
        .into_iter()
        .find(|(_, bits)| shown.matches(*bits))
        .map_or_else(
            || "no simple formula variant reproduces the published value".to_string(),
            |(what, _)| format!("published value is consistent with {what}"),
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vgg_inputs() -> PayloadInputs {
        PayloadInputs::new(
            32,
            8,
            FedAvgBatches {
                fl: 656_250,
                ftl_f: 193_750,
                ftl_c: 525_000,
            },
            50_000,
            ParamCounts {
                full: 153_144_650,
                head: 35_665_418,
                extractor: 153_144_650 - 35_665_418,
                cut_input: 4096,
                cut_output: 4096,
            },
        )
        .unwrap()
    }

    fn bean_inputs() -> PayloadInputs {
        PayloadInputs::new(
            32,
            8,
            FedAvgBatches {
                fl: 41_160,
                ftl_f: 31_752,
                ftl_c: 38_808,
            },
            4703,
            ParamCounts {
                full: 12_204,
                head: 10_504,
                extractor: 1700,
                cut_input: 100,
                cut_output: 100,
            },
        )
        .unwrap()
    }

    #[test]
    fn uplink_totals_match_formulas() {
        let v = vgg_inputs();
        assert_eq!(uplink_total(Method::Fl, &v), 656_250 * 153_144_650 * 32);
        assert_eq!(format_bits_with(uplink_total(Method::Fl, &v), 0), "3216 Tb");
        assert_eq!(format_bits_with(uplink_total(Method::FtlHead, &v), 0), "599 Tb");
        let mut empty = v;
        empty.total_samples = 0;
        assert_eq!(uplink_total(Method::Fbftl, &empty), 0);
        assert_eq!(uplink_total(Method::Fbftl, &v), 6_553_600_000);
    }

    #[test]
    fn downlink_totals_match_formulas() {
        let v = vgg_inputs();
        assert_eq!(downlink_total(Method::Fbftl, &v), (153_144_650 - 35_665_418) * 32);
        assert_eq!(format_bits(downlink_total(Method::Fbftl, &v)), "3.8 Gb");
        // 656250 / 8 rounds is fractional, the product is still integral
        assert_eq!(downlink_total(Method::Fl, &v), 656_250 * 153_144_650 * 32 / 8);
        assert_eq!(format_bits_with(downlink_total(Method::Fl, &v), 0), "402 Tb");
        assert_eq!(downlink_total(Method::Fbftl, &bean_inputs()), 54_400);
    }

    #[test]
    fn ratio_bounds_hold_for_both_experiments() {
        assert!(ratio_bound_check(&vgg_inputs()).unwrap().holds());
        let b = ratio_bound_check(&bean_inputs()).unwrap();
        assert!(b.holds());
        assert!((b.per_sample_ratio - 105.04).abs() < 1e-12);
    }

    #[test]
    fn single_output_layer_head_is_still_strict() {
        // the +1 bias term keeps T/N- strictly above N+
        let mut v = bean_inputs();
        v.counts.head = 4 * 101;
        v.counts.cut_output = 4;
        let b = ratio_bound_check(&v).unwrap();
        assert!(b.per_sample_holds);
        assert!(b.per_sample_ratio > 4.0);
    }

    #[test]
    fn ordering_checks() {
        assert!(ordering_check(&vgg_inputs()).holds());
        let bean = ordering_check(&bean_inputs());
        assert!(bean.fbftl_far_below_all);
        assert!(bean.full_below_scratch);
        // 38808 head-only batches outweigh 31752 full-model ones
        assert!(!bean.head_below_full);

        let mut equal = bean_inputs();
        equal.batches = FedAvgBatches {
            fl: 10_000,
            ftl_f: 5_000,
            ftl_c: 5_000,
        };
        assert!(ordering_check(&equal).holds());
    }

    #[test]
    fn bit_formatting() {
        assert_eq!(format_bits(131_072), "131.1 Kb");
        assert_eq!(format_bits_with(131_072, 0), "131 Kb");
        assert_eq!(format_bits(3200), "3.2 Kb");
        assert_eq!(format_bits(0), "0 b");
        assert_eq!(format_bits(999), "999 b");
        assert_eq!(format_bits(999_960), "1.0 Mb");
        assert_eq!(format_bits(390_528), "390.5 Kb");
        assert_eq!(format_bits(15_049_600), "15.0 Mb");
    }

    #[test]
    fn display_value_tolerance_is_half_a_digit() {
        let v = DisplayValue::parse("949 Tb").unwrap();
        assert!(v.matches(949_496_830_000_000));
        assert!(!v.matches(949_500_000_000_001));
        let v = DisplayValue::parse("6.6 Gb").unwrap();
        assert!(v.matches(6_553_600_000));
        assert!(!v.matches(6_540_000_000));
        assert_eq!(DisplayValue::parse("4703").unwrap().scale, 1);
        assert!(DisplayValue::parse("3 Pb").is_err());
    }

    #[test]
    fn mismatches_get_explained() {
        let cells = vec![
            PublishedCell {
                method: Method::FtlHead,
                cell: ReportCell::TotalUplink,
                value: "15.2 Gb".into(),
            },
            PublishedCell {
                method: Method::Fbftl,
                cell: ReportCell::TotalDownlink,
                value: "336 Kb".into(),
            },
            PublishedCell {
                method: Method::Fl,
                cell: ReportCell::TotalUplink,
                value: "16.1 Gb".into(),
            },
        ];
        let report = PayloadReport::build(bean_inputs(), &cells).unwrap();
        let bad: Vec<&CellCheck> = report.discrepancies().collect();
        assert_eq!(bad.len(), 2);
        assert!(bad[0].note.as_deref().unwrap().contains("full model (12204)"));
        assert!(bad[1].note.as_deref().unwrap().contains("broadcast of the head"));
        let text = report.to_text();
        assert!(text.contains("FTL_c total uplink payload P: published 15.2 Gb, formula gives 13.0 Gb"));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("FbFTL".parse::<Method>().unwrap(), Method::Fbftl);
        assert_eq!("ftl_c".parse::<Method>().unwrap(), Method::FtlHead);
        assert!("fedprox".parse::<Method>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn formatting_preserves_order(a in 0u128..10_000_000_000_000_000, b in 0u128..10_000_000_000_000_000) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let shown = |x| DisplayValue::parse(&format_bits(x)).unwrap().value();
                prop_assert!(shown(lo) <= shown(hi));
            }

            #[test]
            fn uplink_is_strictly_monotone(d in 1u64..64, batches in 1u64..1_000_000, params in 1u64..1_000_000_000) {
                let counts = ParamCounts { full: params, head: params, extractor: 0, cut_input: params, cut_output: 1 };
                let base = PayloadInputs::new(d, 1, FedAvgBatches { fl: batches, ftl_f: batches, ftl_c: batches }, batches, counts).unwrap();
                let p0 = uplink_total(Method::Fl, &base);
                let mut more_d = base; more_d.bit_width += 1;
                let mut more_b = base; more_b.batches.fl += 1;
                let mut more_p = base; more_p.counts.full += 1;
                prop_assert!(uplink_total(Method::Fl, &more_d) > p0);
                prop_assert!(uplink_total(Method::Fl, &more_b) > p0);
                prop_assert!(uplink_total(Method::Fl, &more_p) > p0);
            }
        }
    }
}

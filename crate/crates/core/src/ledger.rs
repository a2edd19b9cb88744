//! Token accounting and dollar costs.
//!
//! Amounts are exact integers in pico-dollars. Prices are per million
//! tokens and rounded to the micro-dollar on input, so every per-entry cost
//! is an exact integer and totals are additive.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Producing or refining definitions, including validation-set classification.
    Generation,
    /// Annotating the evaluation split.
    Inference,
    /// Training tokens of a fine-tuning job.
    Finetune,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Generation, Phase::Inference, Phase::Finetune];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub phase: Phase,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub model_id: String,
    #[serde(default)]
    pub estimated: bool,
    pub run_id: String,
    /// Free-form grouping, e.g. `temperature=0.5` or a label id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dollars {
    pico: i128,
}

const PICO: i128 = 1_000_000_000_000;

impl Dollars {
    pub const ZERO: Dollars = Dollars { pico: 0 };

    pub fn from_pico(pico: i128) -> Self {
        Self { pico }
    }

    pub fn from_micro(micro: i64) -> Self {
        Self {
            pico: micro as i128 * 1_000_000,
        }
    }

    /// Rounds to the nearest micro-dollar.
    pub fn from_f64(dollars: f64) -> Self {
        Self::from_micro((dollars * 1e6).round() as i64)
    }

    pub fn pico(self) -> i128 {
        self.pico
    }

    pub fn to_f64(self) -> f64 {
        self.pico as f64 / PICO as f64
    }

    /// Cost of `tokens` at `self` per million tokens.
    pub fn per_million(self, tokens: u64) -> Dollars {
        Dollars {
            pico: self.pico * tokens as i128 / 1_000_000,
        }
    }

    /// Divides, rounding half away from zero to the pico-dollar.
    pub fn div_round(self, n: u64) -> Dollars {
        let n = n as i128;
        let half = n / 2;
        let pico = if self.pico >= 0 {
            (self.pico + half) / n
        } else {
            (self.pico - half) / n
        };
        Dollars { pico }
    }

    pub fn is_negative(self) -> bool {
        self.pico < 0
    }
}

impl Add for Dollars {
    type Output = Dollars;
    fn add(self, rhs: Dollars) -> Dollars {
        Dollars {
            pico: self.pico + rhs.pico,
        }
    }
}

impl AddAssign for Dollars {
    fn add_assign(&mut self, rhs: Dollars) {
        self.pico += rhs.pico;
    }
}

impl Sub for Dollars {
    type Output = Dollars;
    fn sub(self, rhs: Dollars) -> Dollars {
        Dollars {
            pico: self.pico - rhs.pico,
        }
    }
}

impl Sum for Dollars {
    fn sum<I: Iterator<Item = Dollars>>(iter: I) -> Dollars {
        iter.fold(Dollars::ZERO, Add::add)
    }
}

impl fmt::Display for Dollars {
    /// Six decimals, e.g. `$3.497500`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let micro = if self.pico >= 0 {
            (self.pico + 500_000) / 1_000_000
        } else {
            (self.pico - 500_000) / 1_000_000
        };
        let sign = if micro < 0 { "-" } else { "" };
        let micro = micro.abs();
        write!(f, "{sign}${}.{:06}", micro / 1_000_000, micro % 1_000_000)
    }
}

impl Serialize for Dollars {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Dollars {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Dollars::from_f64)
    }
}

/// Dollar prices per million tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSheet {
    #[serde(default)]
    pub name: String,
    /// Date the prices were taken from the provider's price list.
    #[serde(default)]
    pub effective_date: String,
    pub input_per_million: Dollars,
    pub output_per_million: Dollars,
    pub training_per_million: Dollars,
    pub finetuned_input_per_million: Dollars,
    /// Falls back to `output_per_million` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetuned_output_per_million: Option<Dollars>,
    /// Model ids billed at fine-tuned rates in addition to any id starting with `ft:`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finetuned_models: Vec<String>,
}

impl PriceSheet {
    /// gpt-4o list prices as of January 2025; the output rates are the
    /// provider's, not taken from any experiment.
    pub fn gpt4o_2025_01() -> Self {
        Self {
            name: "gpt-4o".into(),
            effective_date: "2025-01".into(),
            input_per_million: Dollars::from_f64(2.5),
            output_per_million: Dollars::from_f64(10.0),
            training_per_million: Dollars::from_f64(25.0),
            finetuned_input_per_million: Dollars::from_f64(3.75),
            finetuned_output_per_million: Some(Dollars::from_f64(15.0)),
            finetuned_models: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sheet: PriceSheet = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        sheet.validate()?;
        Ok(sheet)
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [
            self.input_per_million,
            self.output_per_million,
            self.training_per_million,
            self.finetuned_input_per_million,
            self.finetuned_output_per_million.unwrap_or_default(),
        ];
        if prices.iter().any(|p| p.is_negative()) {
            return Err(Error::invalid("prices must be non-negative"));
        }
        Ok(())
    }

    pub fn is_finetuned(&self, model_id: &str) -> bool {
        model_id.starts_with("ft:") || self.finetuned_models.iter().any(|m| m == model_id)
    }

    pub fn entry_cost(&self, e: &UsageEntry) -> Dollars {
        match e.phase {
            Phase::Finetune => self.training_per_million.per_million(e.input_tokens + e.output_tokens),
            _ if self.is_finetuned(&e.model_id) => {
                self.finetuned_input_per_million.per_million(e.input_tokens)
                    + self
                        .finetuned_output_per_million
                        .unwrap_or(self.output_per_million)
                        .per_million(e.output_tokens)
            }
            _ => {
                self.input_per_million.per_million(e.input_tokens)
                    + self.output_per_million.per_million(e.output_tokens)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
    pub estimated_calls: u64,
}

impl AddAssign<&UsageEntry> for TokenTotals {
    fn add_assign(&mut self, e: &UsageEntry) {
        self.input_tokens += e.input_tokens;
        self.output_tokens += e.output_tokens;
        self.calls += 1;
        self.estimated_calls += u64::from(e.estimated);
    }
}

pub fn token_totals<'a>(entries: impl IntoIterator<Item = &'a UsageEntry>) -> BTreeMap<Phase, TokenTotals> {
    let mut out = BTreeMap::new();
    for e in entries {
        *out.entry(e.phase).or_insert_with(TokenTotals::default) += e;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub generation: Dollars,
    pub inference: Dollars,
    pub finetune: Dollars,
    pub total: Dollars,
}

impl CostBreakdown {
    pub fn phase(&self, phase: Phase) -> Dollars {
        match phase {
            Phase::Generation => self.generation,
            Phase::Inference => self.inference,
            Phase::Finetune => self.finetune,
        }
    }
}

impl Add for CostBreakdown {
    type Output = CostBreakdown;
    fn add(self, o: CostBreakdown) -> CostBreakdown {
        CostBreakdown {
            generation: self.generation + o.generation,
            inference: self.inference + o.inference,
            finetune: self.finetune + o.finetune,
            total: self.total + o.total,
        }
    }
}

pub fn total_cost<'a>(entries: impl IntoIterator<Item = &'a UsageEntry>, prices: &PriceSheet) -> CostBreakdown {
    let mut out = CostBreakdown::default();
    for e in entries {
        let c = prices.entry_cost(e);
        match e.phase {
            Phase::Generation => out.generation += c,
            Phase::Inference => out.inference += c,
            Phase::Finetune => out.finetune += c,
        }
        out.total += c;
    }
    out
}

/// Cost of `phase` divided by the number of annotated columns.
pub fn cost_per_column<'a>(
    entries: impl IntoIterator<Item = &'a UsageEntry>,
    prices: &PriceSheet,
    n_columns: u64,
    phase: Phase,
) -> Result<Dollars> {
    if n_columns == 0 {
        return Err(Error::invalid("cost per column needs at least one column"));
    }
    Ok(total_cost(entries, prices).phase(phase).div_round(n_columns))
}

/// The same usage priced two ways: input tokens only (how published token
/// tables are usually costed) and input plus output.
#[derive(Debug, Clone, Serialize)]
pub struct Reconciliation {
    pub input_only: CostBreakdown,
    pub with_output: CostBreakdown,
    pub output_share: Dollars,
    pub estimated_calls: u64,
}

pub fn reconcile(entries: &[UsageEntry], prices: &PriceSheet) -> Reconciliation {
    let input_only: Vec<UsageEntry> = entries
        .iter()
        .map(|e| UsageEntry {
            output_tokens: if e.phase == Phase::Finetune { e.output_tokens } else { 0 },
            ..e.clone()
        })
        .collect();
    let a = total_cost(&input_only, prices);
    let b = total_cost(entries, prices);
    Reconciliation {
        input_only: a,
        with_output: b,
        output_share: b.total - a.total,
        estimated_calls: entries.iter().filter(|e| e.estimated).count() as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

/// Where option A (fixed cost plus per-column cost) stops being the cheaper choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Breakeven {
    /// From this many columns on, A costs at least as much as B.
    At(u64),
    /// The cost lines never cross for a positive column count.
    Never {
        /// Side that is strictly cheaper for every positive column count.
        cheaper_everywhere: Option<Side>,
        /// Side with the lower per-column cost, if they differ.
        cheaper_per_column: Option<Side>,
    },
}

impl Breakeven {
    pub fn columns(self) -> Option<u64> {
        match self {
            Breakeven::At(n) => Some(n),
            Breakeven::Never { .. } => None,
        }
    }
}

/// Smallest column count `N` with `fixed_a + N * per_col_a >= fixed_b + N * per_col_b`,
/// defined when A has the higher per-column cost and the lower fixed cost.
pub fn breakeven_columns(fixed_a: Dollars, per_col_a: Dollars, fixed_b: Dollars, per_col_b: Dollars) -> Breakeven {
    use std::cmp::Ordering;
    let slope = per_col_a.pico - per_col_b.pico;
    let gap = fixed_b.pico - fixed_a.pico;
    match slope.cmp(&0) {
        Ordering::Greater if gap > 0 => Breakeven::At((gap + slope - 1) as u64 / slope as u64),
        Ordering::Greater => Breakeven::Never {
            cheaper_everywhere: Some(Side::B),
            cheaper_per_column: Some(Side::B),
        },
        Ordering::Equal => Breakeven::Never {
            cheaper_everywhere: match gap.cmp(&0) {
                Ordering::Greater => Some(Side::A),
                Ordering::Less => Some(Side::B),
                Ordering::Equal => None,
            },
            cheaper_per_column: None,
        },
        Ordering::Less => Breakeven::Never {
            cheaper_everywhere: (gap >= 0).then_some(Side::A),
            cheaper_per_column: Some(Side::A),
        },
    }
}

pub fn write_usage(path: &Path, entries: &[UsageEntry]) -> Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).expect("usage entry serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_usage(path: &Path) -> Result<Vec<UsageEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

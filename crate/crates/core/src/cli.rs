//! Command-line front end. Every command writes one JSON artifact (stdout or
//! `--out`) carrying `"format": 1`; commands that check identities also write
//! their report to `--report` when given. Exit codes: 0 success, 1 identity
//! failure, 2 unreadable or invalid input.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::derham::tau_kernel_dimension;
use crate::fedosov::{find_gauge, leading_term, ConnectionSpec, FedosovError, NCConnection};
use crate::koszul::{relation_ideal, AInfinitySpec, BarDual, MinimalAInfinity};
use crate::lyndon::{LyndonWord, Word};
use crate::ncmodule::{ModuleConnectionSpec, ModuleNCConnection};
use crate::ncseries::{PBWSeries, TensorPoly};
use crate::ring::{ratio, Poly};

pub const FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("identity check failed: {0}")]
    Identity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Identity(_) => 1,
            _ => 2,
        }
    }
}

impl From<FedosovError> for CliError {
    fn from(e: FedosovError) -> Self {
        match e {
            FedosovError::NotClosed { .. } | FedosovError::LetterPart => CliError::Identity(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ncthick", version, about = "Truncated NC-smooth thickenings of affine charts")]
pub struct Cli {
    /// Chart spec JSON file.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Truncation degree, overriding the spec file.
    #[arg(long, global = true)]
    pub truncation: Option<usize>,
    /// Write the artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write the verification report here.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Worker threads for the internal pool.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the NC-connection and print its generator images.
    Thicken,
    /// Check that D squares to zero through degree d-1.
    Verify,
    /// Flat lift sigma(f) of a polynomial.
    Lift { f: String },
    /// Product of two flat lifts, with the degree-2 commutator law.
    Mul { f: String, g: String },
    /// Leading term of the commutator of two flat lifts.
    Bracket { f: String, g: String },
    /// Dimensions of the leading-term spaces of flat sections.
    Dims {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 5)]
        max: usize,
    },
    /// Module NC-connection from the spec's "module" entry.
    Module,
    /// Gauge transform to the connection of another spec file.
    Gauge {
        #[arg(long)]
        other: PathBuf,
    },
    /// Koszul dual of the spec's "ainfinity" entry.
    Koszul {
        /// Highest arity of A-infinity identities to check.
        #[arg(long)]
        n_max: Option<usize>,
    },
}

/// Chart spec file: `{"n":2,"truncation":4,"christoffel":{"1":{"2,2":"x1"}}}`
/// with optional `"module"` and `"ainfinity"` entries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpecFile {
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub christoffel: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub module: Option<ModuleConnectionSpec>,
    #[serde(default)]
    pub ainfinity: Option<AInfinitySpec>,
}

pub fn load_spec(path: &Path) -> Result<ChartSpecFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

struct Context {
    spec: Option<ChartSpecFile>,
    truncation: Option<usize>,
}

impl Context {
    fn spec(&self) -> Result<&ChartSpecFile, CliError> {
        self.spec
            .as_ref()
            .ok_or_else(|| CliError::Invalid("this command needs --spec".into()))
    }

    fn truncation(&self) -> Result<usize, CliError> {
        self.truncation
            .or(self.spec.as_ref().and_then(|s| s.truncation))
            .ok_or_else(|| CliError::Invalid("no truncation in spec or flags".into()))
    }

    fn chart(&self, file: &ChartSpecFile) -> Result<NCConnection, CliError> {
        if file.n == 0 || file.n > 8 {
            return Err(CliError::Invalid(format!("chart dimension n = {} must be in 1..=8", file.n)));
        }
        let d = self.truncation()?;
        if d < 2 {
            return Err(CliError::Invalid("truncation must be at least 2".into()));
        }
        let spec = ConnectionSpec::from_table(file.n, &file.christoffel)?;
        Ok(NCConnection::build(&spec, d)?)
    }

    fn connection(&self) -> Result<NCConnection, CliError> {
        self.chart(self.spec()?)
    }

    fn poly(&self, s: &str, n: usize) -> Result<Poly, CliError> {
        Poly::parse(s, n).map_err(|e| CliError::Parse {
            path: "argument".into(),
            msg: format!("{s:?}: {e}"),
        })
    }
}

struct Output {
    artifact: Value,
    report: Option<Value>,
    ok: bool,
}

fn with_format(v: Value) -> Value {
    let mut map = Map::new();
    map.insert("format".into(), json!(FORMAT));
    if let Value::Object(m) = v {
        map.extend(m);
    }
    Value::Object(map)
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("artifact serializes")
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let spec = cli.spec.as_deref().map(load_spec).transpose()?;
    let ctx = Context {
        spec,
        truncation: cli.truncation,
    };
    let out = pool.install(|| dispatch(&ctx, &cli.command))?;
    let text = serde_json::to_string_pretty(&with_format(out.artifact))? + "\n";
    match &cli.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    if let (Some(p), Some(r)) = (&cli.report, out.report) {
        fs::write(p, serde_json::to_string_pretty(&with_format(r))? + "\n")?;
    }
    if out.ok {
        Ok(0)
    } else {
        eprintln!("error: identity check failed; see report");
        Ok(1)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn dispatch(ctx: &Context, cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Thicken => thicken(ctx),
        Command::Verify => verify(ctx),
        Command::Lift { f } => lift(ctx, f),
        Command::Mul { f, g } => mul(ctx, f, g),
        Command::Bracket { f, g } => bracket(ctx, f, g),
        Command::Dims { n, max } => dims(ctx, *n, *max),
        Command::Module => module(ctx),
        Command::Gauge { other } => gauge(ctx, other),
        Command::Koszul { n_max } => koszul(ctx, *n_max),
    }
}

fn square_zero(nc: &NCConnection) -> (Value, bool) {
    let report = nc.verify_square_zero();
    let ok = report.all_zero();
    let mut v = to_value(&report);
    v["ok"] = json!(ok);
    v["kind"] = json!("square_zero");
    (v, ok)
}

fn thicken(ctx: &Context) -> Result<Output, CliError> {
    let nc = ctx.connection()?;
    let (report, ok) = square_zero(&nc);
    let mut artifact = to_value(&nc);
    artifact["report"] = report.clone();
    Ok(Output {
        artifact,
        report: Some(report),
        ok,
    })
}

fn verify(ctx: &Context) -> Result<Output, CliError> {
    let nc = ctx.connection()?;
    let (report, ok) = square_zero(&nc);
    Ok(Output {
        artifact: report.clone(),
        report: Some(report),
        ok,
    })
}

fn lift(ctx: &Context, f: &str) -> Result<Output, CliError> {
    let nc = ctx.connection()?;
    let p = ctx.poly(f, nc.n())?;
    let section = nc.sigma(&p);
    let ok = nc.flat_section(section.value().clone()).is_ok();
    let report = json!({"kind": "flat_section", "ok": ok});
    Ok(Output {
        artifact: json!({"f": p.to_string(), "section": to_value(&section), "report": report}),
        report: Some(report),
        ok,
    })
}

/// `df (x) dg` as a degree-2 tensor.
fn gradient_tensor(f: &Poly, g: &Poly, n: usize, d: usize) -> Result<TensorPoly, CliError> {
    let mut out = TensorPoly::zero(n, d);
    for i in 1..=n {
        for j in 1..=n {
            let c = f
                .partial(i)
                .and_then(|a| g.partial(j).and_then(|b| a.checked_mul(&b)))
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            out.add_term(Word(vec![i as u8, j as u8]), c);
        }
    }
    Ok(out)
}

fn mul(ctx: &Context, f: &str, g: &str) -> Result<Output, CliError> {
    let nc = ctx.connection()?;
    let (n, d) = (nc.n(), nc.d());
    let (pf, pg) = (ctx.poly(f, n)?, ctx.poly(g, n)?);
    let (a, b) = (nc.sigma(&pf), nc.sigma(&pg));
    let product = nc.mul_flat(&a, &b)?;
    let half = ratio(1, 2);
    let anti = gradient_tensor(&pf, &pg, n, d)?.sub(&gradient_tensor(&pg, &pf, n, d)?);
    let law = product
        .value()
        .sub(nc.sigma(&(&pf * &pg)).value())
        .sub(&anti.scale(&half))
        .truncate_above(2)
        .is_zero();
    let report = json!({"kind": "product", "closed": true, "degree2_law": law, "ok": law});
    Ok(Output {
        artifact: json!({"f": pf.to_string(), "g": pg.to_string(), "product": to_value(&product), "report": report}),
        report: Some(report),
        ok: law,
    })
}

fn lie_string(l: &LyndonWord) -> String {
    match l.standard_factorization() {
        None => format!("e{}", l.word().letters()[0]),
        Some((u, v)) => format!("[{},{}]", lie_string(&u), lie_string(&v)),
    }
}

fn pbw_key(brackets: &[LyndonWord]) -> String {
    if brackets.is_empty() {
        return "1".into();
    }
    brackets.iter().map(|l| format!("[{l}]")).collect()
}

fn leading_string(pbw: &PBWSeries) -> String {
    let parts: Vec<String> = pbw
        .entries()
        .map(|(brackets, coeff)| {
            let mono = if brackets.is_empty() {
                "1".to_string()
            } else {
                brackets.iter().map(lie_string).collect::<Vec<_>>().join("*")
            };
            match coeff_string(coeff).as_str() {
                "1" => mono,
                "-1" => format!("-{mono}"),
                c => format!("({c})*{mono}"),
            }
        })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

fn coeff_string(y: &crate::ncseries::YPoly) -> String {
    let terms: Vec<_> = y.terms().collect();
    match terms.as_slice() {
        [(e, p)] if e.iter().all(|&a| a == 0) => p.to_string(),
        _ => y.to_string(),
    }
}

fn bracket(ctx: &Context, f: &str, g: &str) -> Result<Output, CliError> {
    let nc = ctx.connection()?;
    let n = nc.n();
    let (a, b) = (nc.sigma(&ctx.poly(f, n)?), nc.sigma(&ctx.poly(g, n)?));
    let c = nc.commutator_flat(&a, &b)?;
    if c.value().is_zero() {
        return Ok(Output {
            artifact: json!({"degree": null, "leading": "0", "pbw": {}}),
            report: None,
            ok: true,
        });
    }
    let lt = leading_term(&c)?;
    let pbw: BTreeMap<String, String> = lt
        .pbw
        .entries()
        .map(|(k, v)| (pbw_key(k), coeff_string(v)))
        .collect();
    Ok(Output {
        artifact: json!({"degree": lt.degree, "leading": leading_string(&lt.pbw), "pbw": pbw}),
        report: None,
        ok: true,
    })
}

fn dims(ctx: &Context, n: Option<usize>, max: usize) -> Result<Output, CliError> {
    let nc = match n {
        Some(n) => {
            if n == 0 || n > 8 {
                return Err(CliError::Invalid(format!("n = {n} must be in 1..=8")));
            }
            NCConnection::build(&ConnectionSpec::flat(n), max.max(2))?
        }
        None => {
            let file = ctx.spec()?;
            let d = ctx.truncation.unwrap_or(max).max(2);
            let spec = ConnectionSpec::from_table(file.n, &file.christoffel)?;
            NCConnection::build(&spec, d)?
        }
    };
    let n = nc.n();
    let dims = nc.leading_term_dimensions(max)?;
    let oracle: Vec<usize> = (0..dims.len()).map(|m| tau_kernel_dimension(n, m)).collect();
    let ok = dims == oracle;
    let report = json!({"kind": "dims", "oracle": oracle, "ok": ok});
    Ok(Output {
        artifact: json!({"n": n, "max": dims.len() - 1, "dims": dims, "report": report}),
        report: Some(report),
        ok,
    })
}

fn module(ctx: &Context) -> Result<Output, CliError> {
    let file = ctx.spec()?;
    let nc = ctx.chart(file)?;
    let spec = file
        .module
        .as_ref()
        .ok_or_else(|| CliError::Invalid("spec has no \"module\" entry".into()))?;
    if spec.omega.iter().flatten().any(|x| x.n() != nc.n()) {
        return Err(CliError::Invalid("module entries use a different n".into()));
    }
    let spec = spec.with_truncation(nc.d());
    if spec.rank != spec.omega.len() {
        return Err(CliError::Invalid("rank does not match omega".into()));
    }
    let mc = ModuleNCConnection::build(&nc, &spec).map_err(|e| CliError::Invalid(e.to_string()))?;
    let sq = mc.verify_square_zero();
    let basis = mc.flat_basis();
    let flat_ok = basis.iter().all(|col| {
        let v: Vec<_> = col.iter().map(crate::derham::DgElement::from_tensor).collect();
        mc.apply(&v).iter().all(|x| x.truncate_above(nc.d() - 1).is_zero())
    });
    let ok = sq.all_zero() && flat_ok;
    let mut report = to_value(&sq);
    report["kind"] = json!("module_square_zero");
    report["flat_basis_closed"] = json!(flat_ok);
    report["ok"] = json!(ok);
    Ok(Output {
        artifact: json!({
            "module": to_value(&mc),
            "corrections_vanish": mc.corrections_vanish(),
            "flat_basis": to_value(&basis),
            "report": report,
        }),
        report: Some(report),
        ok,
    })
}

fn gauge(ctx: &Context, other: &Path) -> Result<Output, CliError> {
    let a = ctx.connection()?;
    let other_file = load_spec(other)?;
    if other_file.n != a.n() {
        return Err(CliError::Invalid("the two specs have different n".into()));
    }
    let b = ctx.chart(&other_file)?;
    let phi = find_gauge(&a, &b)?;
    let conj = a.conjugate(&phi)?;
    let d = a.d();
    let entries: Vec<Value> = conj
        .generator_difference(&b)
        .iter()
        .enumerate()
        .map(|(k, x)| json!({"generator": k + 1, "agree": x.truncate_above(d - 1).is_zero()}))
        .collect();
    let ok = entries.iter().all(|e| e["agree"] == json!(true));
    let report = json!({"kind": "gauge", "through_degree": d - 1, "entries": entries, "ok": ok});
    Ok(Output {
        artifact: json!({"gauge": to_value(&phi), "report": report}),
        report: Some(report),
        ok,
    })
}

fn koszul(ctx: &Context, n_max: Option<usize>) -> Result<Output, CliError> {
    let file = ctx.spec()?;
    let spec = file
        .ainfinity
        .as_ref()
        .ok_or_else(|| CliError::Invalid("spec has no \"ainfinity\" entry".into()))?;
    let alg = MinimalAInfinity::from_spec(spec).map_err(|e| CliError::Invalid(e.to_string()))?;
    let n_max = n_max.unwrap_or_else(|| alg.default_n_max());
    let validation = alg.validate(n_max);
    if !validation.valid() {
        let report = json!({"kind": "ainfinity", "validation": to_value(&validation), "ok": false});
        return Ok(Output {
            artifact: json!({"report": report}),
            report: Some(report),
            ok: false,
        });
    }
    let d = ctx.truncation()?;
    let valid = alg.validated(n_max).map_err(|e| CliError::Invalid(e.to_string()))?;
    let dual = BarDual::new(&valid, d);
    let images: BTreeMap<String, String> = dual
        .letters()
        .iter()
        .map(|b| (format!("{},{}", b.degree, b.index), dual.image(*b).to_string()))
        .collect();
    let square_zero = dual.square_zero();
    let presentation = relation_ideal(&valid, d);
    let report = json!({
        "kind": "ainfinity",
        "validation": to_value(&validation),
        "dual_square_zero": square_zero,
        "relations_injective": presentation.injective,
        "ok": square_zero,
    });
    Ok(Output {
        artifact: json!({
            "letters": to_value(&dual.letters()),
            "differential": images,
            "presentation": to_value(&presentation),
            "report": report,
        }),
        report: Some(report),
        ok: square_zero,
    })
}

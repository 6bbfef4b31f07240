//! Search trace: a header line, a column line, then one record per evaluation.
//!
//! ```text
//! # edgenas-trace v1 tool=0.1.0 config_hash=9f2c... init_random=10 space=stage2 depth=8
//! iter,config,f,g,ehvi,seed,wallclock_ms
//! 0,R:0000|S:01230123,0.31,1.2e-2,-,1234,17
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use edgenas_core::mobo::Observation;
use edgenas_core::space::{ArchConfig, SearchMode};

use crate::error::{CliError, CliResult};

pub const COLUMNS: &str = "iter,config,f,g,ehvi,seed,wallclock_ms";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub tool: String,
    pub config_hash: String,
    pub init_random: usize,
    pub mode: SearchMode,
    pub depth: usize,
}

impl TraceHeader {
    fn line(&self) -> String {
        let space = match self.mode {
            SearchMode::Stage2 => "stage2",
            SearchMode::Joint => "joint",
        };
        format!(
            "# edgenas-trace v1 tool={} config_hash={} init_random={} space={space} depth={}",
            self.tool, self.config_hash, self.init_random, self.depth
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let rest = line
            .strip_prefix("# edgenas-trace v1")
            .ok_or("missing `# edgenas-trace v1` header")?;
        let mut h = TraceHeader {
            tool: String::new(),
            config_hash: String::new(),
            init_random: 0,
            mode: SearchMode::Stage2,
            depth: 0,
        };
        let mut seen = 0;
        for kv in rest.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field `{kv}`"))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| format!("header {k}=`{v}` not an integer"));
            match k {
                "tool" => h.tool = v.into(),
                "config_hash" => h.config_hash = v.into(),
                "init_random" => h.init_random = num(v)?,
                "space" => h.mode = v.parse().map_err(|e| format!("{e}"))?,
                "depth" => h.depth = num(v)?,
                _ => return Err(format!("unknown header field `{k}`")),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err("header needs tool, config_hash, init_random, space, depth".into());
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub config: ArchConfig,
    pub f: f64,
    pub g: f64,
    pub ehvi: Option<f64>,
    pub seed: u64,
    pub wallclock_ms: u64,
}

impl TraceRecord {
    pub fn objectives(&self) -> [f64; 2] {
        [self.f, self.g]
    }

    /// Equality on everything but timing.
    pub fn same_outcome(&self, o: &TraceRecord) -> bool {
        self.iter == o.iter
            && self.config == o.config
            && self.f.to_bits() == o.f.to_bits()
            && self.g.to_bits() == o.g.to_bits()
            && self.ehvi.map(f64::to_bits) == o.ehvi.map(f64::to_bits)
            && self.seed == o.seed
    }

    fn line(&self) -> String {
        // `{:?}` on f64 prints the shortest text that round-trips exactly
        let ehvi = self.ehvi.map_or("-".to_string(), |v| format!("{v:?}"));
        format!(
            "{},{},{:?},{:?},{},{},{}",
            self.iter, self.config, self.f, self.g, ehvi, self.seed, self.wallclock_ms
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(format!("expected 7 fields, got {}", f.len()));
        }
        let float = |s: &str, what: &str| -> Result<f64, String> {
            let v: f64 = s.parse().map_err(|_| format!("{what} `{s}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("{what} is not finite"))
            }
        };
        Ok(TraceRecord {
            iter: f[0].parse().map_err(|_| format!("iter `{}` is not an integer", f[0]))?,
            config: f[1].parse().map_err(|e| format!("{e}"))?,
            f: float(f[2], "f")?,
            g: float(f[3], "g")?,
            ehvi: if f[4] == "-" { None } else { Some(float(f[4], "ehvi")?) },
            seed: f[5].parse().map_err(|_| format!("seed `{}` is not an integer", f[5]))?,
            wallclock_ms: f[6].parse().map_err(|_| format!("wallclock `{}` is not an integer", f[6]))?,
        })
    }
}

impl From<&Observation> for TraceRecord {
    fn from(o: &Observation) -> Self {
        Self {
            iter: o.iter,
            config: o.config.clone(),
            f: o.f,
            g: o.g,
            ehvi: o.ehvi,
            seed: o.seed,
            wallclock_ms: o.wallclock_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// Record-by-record equality ignoring wallclock.
    pub fn same_outcome(&self, other: &Trace) -> bool {
        self.header == other.header
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_outcome(b))
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.records.iter().map(TraceRecord::objectives).collect()
    }

    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (no, first) = lines.next().ok_or((1, "empty trace".to_string()))?;
        let header = TraceHeader::parse(first).map_err(|m| (no, m))?;
        match lines.next() {
            Some((_, l)) if l.trim() == COLUMNS => {}
            Some((no, _)) => return Err((no, format!("expected column line `{COLUMNS}`"))),
            None => return Err((2, "missing column line".into())),
        }
        let mut records: Vec<TraceRecord> = Vec::new();
        for (no, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let r = TraceRecord::parse(l).map_err(|m| (no, m))?;
            if let Some(prev) = records.last() {
                if r.iter <= prev.iter {
                    return Err((no, format!("iter {} does not increase (previous {})", r.iter, prev.iter)));
                }
            }
            if r.config.depth() != header.depth {
                return Err((
                    no,
                    format!("config depth {} but header depth {}", r.config.depth(), header.depth),
                ));
            }
            records.push(r);
        }
        Ok(Trace { header, records })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|(no, m)| CliError::format(path, format!("line {no}: {m}")))
    }
}

/// Appends records as they arrive, flushing after each one.
pub struct TraceWriter {
    path: PathBuf,
    file: File,
    last_iter: Option<usize>,
}

impl TraceWriter {
    pub fn create(path: &Path, header: &TraceHeader) -> CliResult<Self> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "{}\n{COLUMNS}", header.line()).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_iter: None,
        })
    }

    /// Reopens an existing trace for appending after validating it.
    pub fn append_to(path: &Path) -> CliResult<(Self, Trace)> {
        let trace = Trace::read(path)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        let w = Self {
            path: path.to_path_buf(),
            file,
            last_iter: trace.records.last().map(|r| r.iter),
        };
        Ok((w, trace))
    }

    pub fn push(&mut self, r: &TraceRecord) -> CliResult<()> {
        if self.last_iter.is_some_and(|l| r.iter <= l) {
            return Err(CliError::format(
                &self.path,
                format!("append of non-increasing iter {}", r.iter),
            ));
        }
        writeln!(self.file, "{}", r.line()).map_err(|e| CliError::io(&self.path, e))?;
        self.file.flush().map_err(|e| CliError::io(&self.path, e))?;
        self.last_iter = Some(r.iter);
        Ok(())
    }
}

//! The real-valued uplink model `y = Hx + n`.
//!
//! `H` is `M × K` with i.i.d. `N(0, 1)` entries, user `k` sends
//! `x_k ~ N(0, σ²_{x_k})` and every antenna sees independent `N(0, σn²)` noise.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{NormalStream, RngSeed, Stream};

/// Number of users `K` and base-station antennas `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimensions {
    pub users: usize,
    pub antennas: usize,
}

impl Dimensions {
    pub fn new(users: usize, antennas: usize) -> Result<Self> {
        let d = Dimensions { users, antennas };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.antennas == 0 {
            return Err(Error::InvalidDimensions {
                users: self.users,
                antennas: self.antennas,
            });
        }
        Ok(())
    }

    /// Load factor `β = K/M`.
    pub fn load(&self) -> f64 {
        self.users as f64 / self.antennas as f64
    }
}

fn check_variance(what: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveVariance { what, value: v })
    }
}

/// Draws an `M × K` channel with i.i.d. standard-normal entries, filled in
/// column-major order (antenna index fastest).
pub fn generate_channel(dims: Dimensions, seed: RngSeed) -> Result<DMatrix<f64>> {
    dims.validate()?;
    let mut stream = NormalStream::new(seed, Stream::Channel);
    let mut h = DMatrix::zeros(dims.antennas, dims.users);
    stream.fill(h.as_mut_slice());
    Ok(h)
}

/// Draws `x_k ~ N(0, source_vars[k])` independently.
pub fn sample_sources(dims: Dimensions, source_vars: &[f64], seed: RngSeed) -> Result<DVector<f64>> {
    dims.validate()?;
    if source_vars.len() != dims.users {
        return Err(Error::ShapeMismatch(format!(
            "{} source variances for K={}",
            source_vars.len(),
            dims.users
        )));
    }
    for &v in source_vars {
        check_variance("source variance", v)?;
    }
    let mut stream = NormalStream::new(seed, Stream::Sources);
    Ok(DVector::from_iterator(
        dims.users,
        source_vars.iter().map(|v| v.sqrt() * stream.next_normal()),
    ))
}

/// Returns `y = Hx + n` with `n ~ N(0, noise_var I_M)`.
///
/// A zero noise variance is allowed and still consumes `M` draws (scaled by
/// zero), so `y` equals `Hx` exactly.
pub fn transmit(h: &DMatrix<f64>, x: &DVector<f64>, noise_var: f64, seed: RngSeed) -> Result<DVector<f64>> {
    if h.ncols() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "H is {}x{} but x has length {}",
            h.nrows(),
            h.ncols(),
            x.len()
        )));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::NonPositiveVariance {
            what: "noise variance",
            value: noise_var,
        });
    }
    let sd = noise_var.sqrt();
    let mut stream = NormalStream::new(seed, Stream::Noise);
    let mut y = h * x;
    for v in y.iter_mut() {
        *v += sd * stream.next_normal();
    }
    Ok(y)
}

/// One realization of the uplink: channel, sent symbols, received vector and
/// the noise/source statistics the detectors are told about.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    h: DMatrix<f64>,
    x: DVector<f64>,
    y: DVector<f64>,
    noise_var: f64,
    source_vars: Vec<f64>,
}

impl SystemInstance {
    pub fn new(
        h: DMatrix<f64>,
        x: DVector<f64>,
        y: DVector<f64>,
        noise_var: f64,
        source_vars: Vec<f64>,
    ) -> Result<Self> {
        let dims = Dimensions::new(h.ncols(), h.nrows())?;
        if x.len() != dims.users || y.len() != dims.antennas || source_vars.len() != dims.users {
            return Err(Error::ShapeMismatch(format!(
                "H {}x{}, x {}, y {}, source_vars {}",
                h.nrows(),
                h.ncols(),
                x.len(),
                y.len(),
                source_vars.len()
            )));
        }
        check_variance("noise variance", noise_var)?;
        for &v in &source_vars {
            check_variance("source variance", v)?;
        }
        Ok(SystemInstance {
            h,
            x,
            y,
            noise_var,
            source_vars,
        })
    }

    /// Generates channel, sources and noise from one seed.
    pub fn generate(dims: Dimensions, source_vars: &[f64], noise_var: f64, seed: RngSeed) -> Result<Self> {
        check_variance("noise variance", noise_var)?;
        let h = generate_channel(dims, seed)?;
        let x = sample_sources(dims, source_vars, seed)?;
        let y = transmit(&h, &x, noise_var, seed)?;
        Self::new(h, x, y, noise_var, source_vars.to_vec())
    }

    /// Same as [`generate`](Self::generate) with `σ²_{x_k} = source_var` for all users.
    pub fn generate_uniform(dims: Dimensions, source_var: f64, noise_var: f64, seed: RngSeed) -> Result<Self> {
        Self::generate(dims, &vec![source_var; dims.users], noise_var, seed)
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            users: self.h.ncols(),
            antennas: self.h.nrows(),
        }
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn source_vars(&self) -> &[f64] {
        &self.source_vars
    }

    /// The common source variance, if every user has the same one.
    pub fn uniform_source_var(&self) -> Option<f64> {
        let first = self.source_vars[0];
        self.source_vars.iter().all(|&v| v == first).then_some(first)
    }

    /// Plain-text serialization.
    ///
    /// ```text
    /// gmpid-instance 1
    /// K <users>
    /// M <antennas>
    /// noise_var <σn²>
    /// source_vars <σ²_1> ... <σ²_K>
    /// H
    /// <M lines of K values, row-major>
    /// x
    /// <K values>
    /// y
    /// <M values>
    /// ```
    ///
    /// Numbers use Rust's shortest round-trip formatting, so parsing the text
    /// back reproduces every value bit for bit.
    pub fn to_text(&self) -> String {
        let dims = self.dims();
        let mut out = String::new();
        let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "gmpid-instance 1").unwrap();
        writeln!(out, "K {}", dims.users).unwrap();
        writeln!(out, "M {}", dims.antennas).unwrap();
        writeln!(out, "noise_var {:?}", self.noise_var).unwrap();
        writeln!(out, "source_vars {}", join(&mut self.source_vars.iter().copied())).unwrap();
        writeln!(out, "H").unwrap();
        for row in self.h.row_iter() {
            writeln!(out, "{}", join(&mut row.iter().copied())).unwrap();
        }
        writeln!(out, "x").unwrap();
        writeln!(out, "{}", join(&mut self.x.iter().copied())).unwrap();
        writeln!(out, "y").unwrap();
        writeln!(out, "{}", join(&mut self.y.iter().copied())).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |expect: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of input, expected {expect}"),
            })
        };
        let parse_f = |line: usize, tok: &str| -> Result<f64> {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad number {tok:?}: {e}"),
            })
        };
        let floats = |line: usize, s: &str, n: usize| -> Result<Vec<f64>> {
            let v = s
                .split_whitespace()
                .map(|t| parse_f(line, t))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != n {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {n} values, found {}", v.len()),
                });
            }
            Ok(v)
        };
        let keyed = |line: usize, s: &'_ str, key: &str| -> Result<String> {
            s.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("expected `{key}`"),
                })
        };
        let usize_of = |line: usize, s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad integer {s:?}: {e}"),
            })
        };

        let (l, s) = next("header")?;
        if s != "gmpid-instance 1" {
            return Err(Error::Parse {
                line: l,
                msg: "missing `gmpid-instance 1` header".into(),
            });
        }
        let (l, s) = next("K")?;
        let k = usize_of(l, &keyed(l, s, "K")?)?;
        let (l, s) = next("M")?;
        let m = usize_of(l, &keyed(l, s, "M")?)?;
        Dimensions::new(k, m)?;
        let (l, s) = next("noise_var")?;
        let noise_var = parse_f(l, &keyed(l, s, "noise_var")?)?;
        let (l, s) = next("source_vars")?;
        let source_vars = floats(l, &keyed(l, s, "source_vars")?, k)?;
        let (l, s) = next("H")?;
        keyed(l, s, "H")?;
        let mut h = DMatrix::zeros(m, k);
        for r in 0..m {
            let (l, s) = next("H row")?;
            for (c, v) in floats(l, s, k)?.into_iter().enumerate() {
                h[(r, c)] = v;
            }
        }
        let (l, s) = next("x")?;
        keyed(l, s, "x")?;
        let (l, s) = next("x values")?;
        let x = DVector::from_vec(floats(l, s, k)?);
        let (l, s) = next("y")?;
        keyed(l, s, "y")?;
        let (l, s) = next("y values")?;
        let y = DVector::from_vec(floats(l, s, m)?);
        SystemInstance::new(h, x, y, noise_var, source_vars)
    }
}

//! Binary tensor files, binary PPM images and key=value run configs.
//!
//! Tensor file layout (little-endian):
//!
//! ```text
//! b"DTEN1" | u32 N | u32 dims[N] | f64 values[prod dims] (colexicographic)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};
use crate::tt::RankChain;
use crate::wopt::{InitScheme, Method, OptimizerConfig};

pub const TENSOR_MAGIC: &[u8; 5] = b"DTEN1";

pub fn encode_tensor(t: &DenseTensor) -> Result<Vec<u8>> {
    if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let mut out = Vec::with_capacity(5 + 4 * (t.order() + 1) + 8 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    for &d in t.dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidShape(format!("dim {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < TENSOR_MAGIC.len() || &bytes[..5] != TENSOR_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let read_u32 = |pos: usize| -> Result<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| truncated(pos + 4))
    };
    let order = read_u32(5)? as usize;
    let dims = (0..order)
        .map(|k| read_u32(9 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims)?;
    let header = 9 + 4 * order;
    let expected = shape
        .numel()
        .checked_mul(8)
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::InvalidShape("payload size overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected - header,
            found: bytes.len() - header,
        });
    }
    if bytes.len() > expected {
        return Err(Error::InvalidShape(format!(
            "{} trailing bytes in {}",
            bytes.len() - expected,
            path.display()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseTensor::new(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    decode_tensor(&fs::read(path)?, path)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t)?)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Binary PPM (P6, maxval 255) as an `(H, W, 3)` tensor indexed `(row, col, channel)`.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedPpm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(Error::UnsupportedPpm(format!(
            "magic {magic:?}, expected P6"
        )));
    }
    let mut number = |what: &str| -> Result<usize> {
        let tok = token()?;
        tok.parse()
            .map_err(|_| Error::UnsupportedPpm(format!("bad {what} {tok:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedPpm(format!(
            "maxval {maxval}, expected 255"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster_start = pos + 1;
    let shape = Shape::new(vec![height, width, 3])?;
    let needed = shape.numel();
    let available = bytes.len().saturating_sub(raster_start);
    if available < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: needed,
            found: available,
        });
    }
    let raster = &bytes[raster_start..raster_start + needed];
    let mut data = vec![0.0; needed];
    for r in 0..height {
        for c in 0..width {
            for ch in 0..3 {
                data[r + height * (c + width * ch)] = raster[3 * (r * width + c) + ch] as f64;
            }
        }
    }
    DenseTensor::new(shape, data)
}

/// Encodes an `(H, W, 3)` tensor, clamping to `[0, 255]` and rounding half away from zero.
pub fn encode_ppm(t: &DenseTensor) -> Result<Vec<u8>> {
    let dims = t.dims();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(Error::InvalidShape(format!(
            "PPM needs an HxWx3 tensor, got {}",
            t.shape()
        )));
    }
    if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let (height, width) = (dims[0], dims[1]);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(t.numel());
    let data = t.data();
    for r in 0..height {
        for c in 0..width {
            for ch in 0..3 {
                let v = data[r + height * (c + width * ch)];
                out.push(v.clamp(0.0, 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path)?, path)
}

pub fn write_ppm(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(t)?)
}

/// TT-ranks given either as a full chain or as one interior value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RankSpec {
    Chain(Vec<usize>),
    Uniform(usize),
}

impl RankSpec {
    pub fn resolve(&self, order: usize) -> Result<RankChain> {
        match self {
            RankSpec::Chain(r) => {
                let chain = RankChain::new(r.clone())?;
                if chain.order() != order {
                    return Err(Error::InvalidRanks(format!(
                        "{} ranks given for a {order}-way tensor",
                        r.len()
                    )));
                }
                Ok(chain)
            }
            RankSpec::Uniform(r) => RankChain::uniform(order, *r),
        }
    }
}

impl FromStr for RankSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = parse_list(s)?;
        match values.as_slice() {
            [] => Err(Error::InvalidRanks("empty rank list".into())),
            [r] => Ok(RankSpec::Uniform(*r)),
            _ => Ok(RankSpec::Chain(values)),
        }
    }
}

/// Comma-separated list of positive integers.
pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad integer {t:?} in {s:?}")))
        })
        .collect()
}

/// `scaled`, `gaussian:<sigma>` or `uniform:<low>:<high>`.
pub fn parse_init(s: &str) -> Result<InitScheme> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("bad number {t:?} in init {s:?}")))
    };
    match parts.as_slice() {
        ["scaled"] => Ok(InitScheme::Scaled),
        ["gaussian", sigma] => Ok(InitScheme::Gaussian { sigma: num(sigma)? }),
        ["uniform", low, high] => Ok(InitScheme::Uniform {
            low: num(low)?,
            high: num(high)?,
        }),
        _ => Err(Error::InvalidConfig(format!("unknown init scheme {s:?}"))),
    }
}

/// Settings for a completion run; unset fields fall back to defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub ranks: Option<RankSpec>,
    pub method: Option<Method>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub seed: Option<u64>,
    pub init: Option<InitScheme>,
    pub psnr: Option<bool>,
    pub psnr_missing_only: Option<bool>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ConfigParse { line: k + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let wrap = |e: Error| err(e.to_string());
            match key {
                "ranks" => cfg.ranks = Some(value.parse().map_err(wrap)?),
                "method" => cfg.method = Some(value.parse().map_err(wrap)?),
                "max_iters" => cfg.max_iters = Some(parse_num(value).map_err(wrap)?),
                "rel_tol" => cfg.rel_tol = Some(parse_num(value).map_err(wrap)?),
                "grad_tol" => cfg.grad_tol = Some(parse_num(value).map_err(wrap)?),
                "seed" => cfg.seed = Some(parse_num(value).map_err(wrap)?),
                "init" => cfg.init = Some(parse_init(value).map_err(wrap)?),
                "psnr" => cfg.psnr = Some(parse_num(value).map_err(wrap)?),
                "psnr_missing_only" => {
                    cfg.psnr_missing_only = Some(parse_num(value).map_err(wrap)?)
                }
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Fields set in `overrides` win.
    pub fn merged(self, overrides: RunConfig) -> RunConfig {
        RunConfig {
            ranks: overrides.ranks.or(self.ranks),
            method: overrides.method.or(self.method),
            max_iters: overrides.max_iters.or(self.max_iters),
            rel_tol: overrides.rel_tol.or(self.rel_tol),
            grad_tol: overrides.grad_tol.or(self.grad_tol),
            seed: overrides.seed.or(self.seed),
            init: overrides.init.or(self.init),
            psnr: overrides.psnr.or(self.psnr),
            psnr_missing_only: overrides.psnr_missing_only.or(self.psnr_missing_only),
        }
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let d = OptimizerConfig::default();
        let cfg = OptimizerConfig {
            method: self.method.unwrap_or(d.method),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            init: self.init.unwrap_or(d.init),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(dims: &[usize]) -> DenseTensor {
        let shape = Shape::new(dims.to_vec()).unwrap();
        DenseTensor::from_fn(shape, |i| {
            i.iter()
                .enumerate()
                .map(|(k, &v)| (v as f64 + 0.37) * (k as f64 - 1.3))
                .sum::<f64>()
                .exp()
        })
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = random_tensor(&[2, 3, 4]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dten");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.dims(), t.dims());
        let a: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_decode_errors() {
        let p = Path::new("x.dten");
        assert!(matches!(decode_tensor(b"XXXX", p), Err(Error::BadMagic(_))));
        let mut bytes = TENSOR_MAGIC.to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 40]);
        match decode_tensor(&bytes, p) {
            Err(Error::Truncated {
                expected, found, ..
            }) => assert_eq!((expected, found), (48, 40)),
            other => panic!("{other:?}"),
        }
        bytes.extend_from_slice(&[0u8; 8]);
        assert_eq!(decode_tensor(&bytes, p).unwrap().dims(), &[2, 3]);
        bytes.push(0);
        assert!(decode_tensor(&bytes, p).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = random_tensor(&[2, 2]);
        t.data_mut()[3] = f64::NAN;
        assert!(matches!(encode_tensor(&t), Err(Error::NonFinite(3))));
    }

    #[test]
    fn ppm_white_pixel() {
        let bytes = b"P6\n1 1\n255\n\xff\xff\xff";
        let t = decode_ppm(bytes, Path::new("w.ppm")).unwrap();
        assert_eq!(t.dims(), &[1, 1, 3]);
        assert_eq!(t.data(), &[255.0, 255.0, 255.0]);
    }

    #[test]
    fn ppm_layout_and_comments() {
        // 2 rows x 3 cols; pixel (r, c) = (10r + c, 100 + c, 200).
        let mut bytes = b"P6 # comment\n3 2\n# another\n255\n".to_vec();
        for r in 0..2u8 {
            for c in 0..3u8 {
                bytes.extend_from_slice(&[10 * r + c, 100 + c, 200]);
            }
        }
        let t = decode_ppm(&bytes, Path::new("a.ppm")).unwrap();
        assert_eq!(t.dims(), &[2, 3, 3]);
        assert_eq!(t.get(&[2, 3, 1]).unwrap(), 12.0);
        assert_eq!(t.get(&[1, 2, 2]).unwrap(), 101.0);
        let again = encode_ppm(&t).unwrap();
        assert_eq!(decode_ppm(&again, Path::new("b.ppm")).unwrap(), t);
    }

    #[test]
    fn ppm_errors() {
        let p = Path::new("e.ppm");
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n", p),
            Err(Error::UnsupportedPpm(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n", p),
            Err(Error::UnsupportedPpm(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\0\0\0", p),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn ppm_write_clamps_and_rounds() {
        let t = DenseTensor::new(
            Shape::new(vec![1, 2, 3]).unwrap(),
            vec![255.6, -3.0, 127.5, 0.49, 12.5, 300.0],
        )
        .unwrap();
        let bytes = encode_ppm(&t).unwrap();
        let raster = &bytes[bytes.len() - 6..];
        // Raster is row-major, channel-interleaved: (c0: ch0 ch1 ch2) (c1: ...).
        assert_eq!(raster, &[255, 128, 13, 0, 0, 255]);
    }

    #[test]
    fn config_parsing_and_override() {
        let file = RunConfig::parse(
            "# run\nranks = 1,20,20,1\nmethod=gd\nmax_iters = 50\nseed=3\ninit = gaussian:0.5\n",
        )
        .unwrap();
        assert_eq!(file.ranks, Some(RankSpec::Chain(vec![1, 20, 20, 1])));
        assert_eq!(file.init, Some(InitScheme::Gaussian { sigma: 0.5 }));
        let flags = RunConfig {
            seed: Some(9),
            ranks: Some(RankSpec::Uniform(4)),
            ..Default::default()
        };
        let merged = file.merged(flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.max_iters, Some(50));
        assert_eq!(
            merged.ranks.unwrap().resolve(3).unwrap().ranks(),
            &[1, 4, 4, 1]
        );
        let cfg = RunConfig::parse("method = ncg")
            .unwrap()
            .optimizer_config()
            .unwrap();
        assert_eq!(cfg.method, Method::NonlinearCg);
        assert_eq!(cfg.max_iters, 1000);

        assert!(matches!(
            RunConfig::parse("ranks 1,2"),
            Err(Error::ConfigParse { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("\nbogus = 1"),
            Err(Error::ConfigParse { line: 2, .. })
        ));
        assert!(RankSpec::Chain(vec![1, 2, 1]).resolve(3).is_err());
        assert_eq!(
            parse_init("uniform:-1:1").unwrap(),
            InitScheme::Uniform {
                low: -1.0,
                high: 1.0
            }
        );
        assert!(parse_init("laplace").is_err());
    }
}

//! File formats and the JSON configuration surface.
//!
//! - config: JSON mirroring the link configuration (schema below)
//! - refinement parameters / preprocessing weights / surrogates: JSON with
//!   shapes plus flat re/im or real arrays
//! - CSI ensembles: binary, 16-byte header (magic "CSI1", u32 n_r, u32 n_t,
//!   u32 count, little endian) then row-major (re, im) f64 pairs per matrix
//! - images: 8-bit binary PPM (P6)
//! - reports: CSV (fixed versioned header) or JSON
//!
//! All writes go through a temp file and a rename.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::chancode::{Code, LdpcRate};
use crate::core::config::{
    ChannelModel, CodeRate, CsiMode, DetectorKind, LinkConfig, ModScheme, PcenMode,
};
use crate::core::numerics::{CMatrix, C64};
use crate::core::pcen::PcenParams;
use crate::core::ppen::{ConvKernel, OffsetField, PpenWeights, QaMlp};
use crate::core::proxy::{LinearPreprocessor, Surrogate};
use crate::metrics::Image;
use crate::report::{RatePoint, SimReport};
use crate::{HarnessError, Result};

/// Write via a sibling temp file, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => return Err(HarnessError::Format(format!("bad path {path:?}"))),
    };
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// link configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CsiConfig {
    Perfect,
    Noisy {
        err_var: f64,
        #[serde(default = "default_true")]
        at_tx: bool,
        #[serde(default = "default_true")]
        at_rx: bool,
    },
    File {
        path: PathBuf,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PcenConfig {
    Off,
    /// One-shot alphabet projection of the precoded block (refinement
    /// disabled); the ablation baseline.
    Projection,
    On { params_path: PathBuf },
}

/// JSON mirror of the link configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default = "d_nt")]
    pub n_t: usize,
    #[serde(default = "d_nt")]
    pub n_r: usize,
    #[serde(default = "d_nt")]
    pub n_s: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_mod")]
    pub modulation: String,
    #[serde(default = "d_rate")]
    pub code_rate: String,
    #[serde(default = "d_one")]
    pub p_z: f64,
    #[serde(default = "d_snr")]
    pub snr_db: f64,
    #[serde(default = "d_channel")]
    pub channel: String,
    #[serde(default = "d_csi")]
    pub csi: CsiConfig,
    #[serde(default = "d_pcen")]
    pub pcen: PcenConfig,
    #[serde(default = "d_detector")]
    pub detector: String,
    #[serde(default = "d_ldpc_block")]
    pub ldpc_block: usize,
    #[serde(default = "d_iters")]
    pub decoder_iters: usize,
    #[serde(default = "d_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_nt() -> usize {
    2
}
fn d_k() -> usize {
    16
}
fn d_mod() -> String {
    "qpsk".into()
}
fn d_rate() -> String {
    "1/2".into()
}
fn d_one() -> f64 {
    1.0
}
fn d_snr() -> f64 {
    6.0
}
fn d_channel() -> String {
    "rayleigh".into()
}
fn d_csi() -> CsiConfig {
    CsiConfig::Perfect
}
fn d_pcen() -> PcenConfig {
    PcenConfig::Off
}
fn d_detector() -> String {
    "zf".into()
}
fn d_ldpc_block() -> usize {
    1024
}
fn d_iters() -> usize {
    50
}
fn d_reps() -> usize {
    1
}

impl Default for HarnessConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl HarnessConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the canonical JSON form; recorded in every report.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolve file references and build the core configuration plus the
    /// optional replayed CSI ensemble.
    pub fn resolve(&self) -> Result<(LinkConfig, Option<Vec<CMatrix>>)> {
        let modulation = match self.modulation.as_str() {
            "bpsk" => ModScheme::Bpsk,
            "qpsk" => ModScheme::Qpsk,
            "qam16" => ModScheme::Qam16,
            other => {
                return Err(HarnessError::Format(format!(
                    "unknown modulation {other:?} (bpsk, qpsk, qam16)"
                )))
            }
        };
        let code_rate = match self.code_rate.as_str() {
            "1/2" => CodeRate::Half,
            "3/4" => CodeRate::ThreeQuarter,
            "passthrough" => CodeRate::Passthrough,
            other => {
                return Err(HarnessError::Format(format!(
                    "unknown code rate {other:?} (1/2, 3/4, passthrough)"
                )))
            }
        };
        let channel = match self.channel.as_str() {
            "rayleigh" => ChannelModel::Rayleigh,
            "identity" => ChannelModel::Identity,
            other => {
                return Err(HarnessError::Format(format!(
                    "unknown channel {other:?} (rayleigh, identity)"
                )))
            }
        };
        let detector = match self.detector.as_str() {
            "zf" => DetectorKind::Zf,
            "mmse" => DetectorKind::Mmse,
            "ml" => DetectorKind::Ml,
            "mf" => DetectorKind::Mf,
            other => {
                return Err(HarnessError::Format(format!(
                    "unknown detector {other:?} (zf, mmse, ml, mf)"
                )))
            }
        };
        let (csi, ensemble) = match &self.csi {
            CsiConfig::Perfect => (CsiMode::Perfect, None),
            CsiConfig::Noisy {
                err_var,
                at_tx,
                at_rx,
            } => (
                CsiMode::Noisy {
                    err_var: *err_var,
                    at_tx: *at_tx,
                    at_rx: *at_rx,
                },
                None,
            ),
            CsiConfig::File { path } => {
                let mats = read_csi(path)?;
                if mats.is_empty() {
                    return Err(HarnessError::Format("CSI ensemble file is empty".into()));
                }
                if mats[0].rows() != self.n_r || mats[0].cols() != self.n_t {
                    return Err(HarnessError::Format(format!(
                        "CSI matrices are {}x{}, config says {}x{}",
                        mats[0].rows(),
                        mats[0].cols(),
                        self.n_r,
                        self.n_t
                    )));
                }
                (CsiMode::Perfect, Some(mats))
            }
        };
        let pcen = match &self.pcen {
            PcenConfig::Off => PcenMode::Off,
            PcenConfig::Projection => PcenMode::Projection,
            PcenConfig::On { params_path } => PcenMode::On(read_pcen_params(params_path)?),
        };
        let cfg = LinkConfig {
            n_t: self.n_t,
            n_r: self.n_r,
            n_s: self.n_s,
            k: self.k,
            modulation,
            code_rate,
            p_z: self.p_z,
            snr_db: self.snr_db,
            channel,
            csi,
            pcen,
            detector,
            ldpc_block: self.ldpc_block,
            decoder_iters: self.decoder_iters,
            reps: self.reps,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok((cfg, ensemble))
    }
}

/// Salt so the code construction stream differs from the link streams.
const CODE_SEED_SALT: u64 = 0x1d9c_c0de;

/// Build the channel code a configuration asks for.
pub fn build_code(cfg: &LinkConfig) -> Result<Code> {
    Ok(match cfg.code_rate {
        CodeRate::Half => Code::Ldpc(crate::core::chancode::build_ldpc(
            LdpcRate::Half,
            cfg.ldpc_block,
            cfg.seed ^ CODE_SEED_SALT,
        )?),
        CodeRate::ThreeQuarter => Code::Ldpc(crate::core::chancode::build_ldpc(
            LdpcRate::ThreeQuarter,
            cfg.ldpc_block,
            cfg.seed ^ CODE_SEED_SALT,
        )?),
        CodeRate::Passthrough => Code::passthrough(cfg.ldpc_block),
    })
}

// ---------------------------------------------------------------------------
// refinement parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &CMatrix) -> Self {
        MatrixJson {
            rows: m.rows(),
            cols: m.cols(),
            re: m.data().iter().map(|z| z.re).collect(),
            im: m.data().iter().map(|z| z.im).collect(),
        }
    }

    fn to_matrix(&self) -> Result<CMatrix> {
        if self.re.len() != self.rows * self.cols || self.im.len() != self.re.len() {
            return Err(HarnessError::Format("matrix entry count mismatch".into()));
        }
        let entries: Vec<C64> = self
            .re
            .iter()
            .zip(self.im.iter())
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        Ok(CMatrix::from_slice(self.rows, self.cols, &entries)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PcenParamsJson {
    t_iters: usize,
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    u2: MatrixJson,
}

pub fn write_pcen_params(path: &Path, params: &PcenParams) -> Result<()> {
    let j = PcenParamsJson {
        t_iters: params.t_iters,
        gamma: params.gamma.clone(),
        alpha: params.alpha.clone(),
        u2: MatrixJson::from_matrix(&params.u2),
    };
    atomic_write(path, serde_json::to_string_pretty(&j).unwrap().as_bytes())
}

pub fn read_pcen_params(path: &Path) -> Result<PcenParams> {
    let j: PcenParamsJson = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| HarnessError::Format(format!("refinement params: {e}")))?;
    let params = PcenParams {
        t_iters: j.t_iters,
        gamma: j.gamma,
        alpha: j.alpha,
        u2: j.u2.to_matrix()?,
    };
    params.validate()?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// preprocessing weights
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelJson {
    out_ch: usize,
    in_ch: usize,
    kh: usize,
    kw: usize,
    w: Vec<f64>,
}

impl KernelJson {
    fn from_kernel(k: &ConvKernel) -> Self {
        KernelJson {
            out_ch: k.out_ch,
            in_ch: k.in_ch,
            kh: k.kh,
            kw: k.kw,
            w: k.weights().to_vec(),
        }
    }

    fn to_kernel(&self) -> Result<ConvKernel> {
        Ok(ConvKernel::new(
            self.out_ch,
            self.in_ch,
            self.kh,
            self.kw,
            self.w.clone(),
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QaJson {
    hidden: usize,
    out: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OffsetsJson {
    height: usize,
    width: usize,
    taps: usize,
    d_row: Vec<f64>,
    d_col: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PpenWeightsJson {
    upper_in: KernelJson,
    qa: QaJson,
    upper_out: KernelJson,
    lower_in: KernelJson,
    deform: KernelJson,
    offsets: OffsetsJson,
    lower_out: KernelJson,
}

pub fn write_ppen_weights(path: &Path, w: &PpenWeights) -> Result<()> {
    let offsets = OffsetsJson {
        height: w.offsets.height,
        width: w.offsets.width,
        taps: w.offsets.taps,
        d_row: w.offsets.data().iter().map(|o| o.0).collect(),
        d_col: w.offsets.data().iter().map(|o| o.1).collect(),
    };
    let j = PpenWeightsJson {
        upper_in: KernelJson::from_kernel(&w.upper_in),
        qa: QaJson {
            hidden: w.qa.hidden,
            out: w.qa.out,
            w1: w.qa.w1.clone(),
            b1: w.qa.b1.clone(),
            w2: w.qa.w2.clone(),
            b2: w.qa.b2.clone(),
        },
        upper_out: KernelJson::from_kernel(&w.upper_out),
        lower_in: KernelJson::from_kernel(&w.lower_in),
        deform: KernelJson::from_kernel(&w.deform),
        offsets,
        lower_out: KernelJson::from_kernel(&w.lower_out),
    };
    atomic_write(path, serde_json::to_string_pretty(&j).unwrap().as_bytes())
}

pub fn read_ppen_weights(path: &Path) -> Result<PpenWeights> {
    let j: PpenWeightsJson = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| HarnessError::Format(format!("preprocessing weights: {e}")))?;
    if j.offsets.d_row.len() != j.offsets.height * j.offsets.width * j.offsets.taps
        || j.offsets.d_col.len() != j.offsets.d_row.len()
    {
        return Err(HarnessError::Format("offset array length mismatch".into()));
    }
    let offsets = OffsetField::from_fn(j.offsets.height, j.offsets.width, j.offsets.taps, |i, jj, t| {
        let idx = (i * j.offsets.width + jj) * j.offsets.taps + t;
        (j.offsets.d_row[idx], j.offsets.d_col[idx])
    });
    Ok(PpenWeights {
        upper_in: j.upper_in.to_kernel()?,
        qa: QaMlp::new(j.qa.hidden, j.qa.out, j.qa.w1, j.qa.b1, j.qa.w2, j.qa.b2)?,
        upper_out: j.upper_out.to_kernel()?,
        lower_in: j.lower_in.to_kernel()?,
        deform: j.deform.to_kernel()?,
        offsets,
        lower_out: j.lower_out.to_kernel()?,
    })
}

// ---------------------------------------------------------------------------
// surrogate / preprocessor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateJson {
    d_in: usize,
    d_out: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    skip: Vec<f64>,
}

pub fn write_surrogate(path: &Path, s: &Surrogate) -> Result<()> {
    let j = SurrogateJson {
        d_in: s.d_in,
        d_out: s.d_out,
        hidden: s.hidden,
        w1: s.w1.clone(),
        b1: s.b1.clone(),
        w2: s.w2.clone(),
        b2: s.b2.clone(),
        w3: s.w3.clone(),
        b3: s.b3.clone(),
        skip: s.skip.clone(),
    };
    atomic_write(path, serde_json::to_string_pretty(&j).unwrap().as_bytes())
}

pub fn read_surrogate(path: &Path) -> Result<Surrogate> {
    let j: SurrogateJson = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| HarnessError::Format(format!("surrogate: {e}")))?;
    let lens_ok = j.w1.len() == j.hidden * j.d_in
        && j.b1.len() == j.hidden
        && j.w2.len() == j.hidden * j.hidden
        && j.b2.len() == j.hidden
        && j.w3.len() == j.d_out * j.hidden
        && j.b3.len() == j.d_out
        && j.skip.len() == j.d_out * j.d_in;
    if !lens_ok {
        return Err(HarnessError::Format("surrogate weight lengths mismatch".into()));
    }
    Ok(Surrogate {
        d_in: j.d_in,
        d_out: j.d_out,
        hidden: j.hidden,
        w1: j.w1,
        b1: j.b1,
        w2: j.w2,
        b2: j.b2,
        w3: j.w3,
        b3: j.b3,
        skip: j.skip,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PreprocessorJson {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

pub fn write_preprocessor(path: &Path, p: &LinearPreprocessor) -> Result<()> {
    let j = PreprocessorJson {
        dim: p.dim,
        a: p.a.clone(),
        b: p.b.clone(),
    };
    atomic_write(path, serde_json::to_string_pretty(&j).unwrap().as_bytes())
}

pub fn read_preprocessor(path: &Path) -> Result<LinearPreprocessor> {
    let j: PreprocessorJson = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| HarnessError::Format(format!("preprocessor: {e}")))?;
    if j.a.len() != j.dim * j.dim || j.b.len() != j.dim {
        return Err(HarnessError::Format("preprocessor weight lengths mismatch".into()));
    }
    Ok(LinearPreprocessor {
        dim: j.dim,
        a: j.a,
        b: j.b,
    })
}

// ---------------------------------------------------------------------------
// CSI ensemble (binary)
// ---------------------------------------------------------------------------

const CSI_MAGIC: &[u8; 4] = b"CSI1";

pub fn write_csi(path: &Path, matrices: &[CMatrix]) -> Result<()> {
    if matrices.is_empty() {
        return Err(HarnessError::Format("refusing to write an empty CSI file".into()));
    }
    let (n_r, n_t) = (matrices[0].rows(), matrices[0].cols());
    if matrices.iter().any(|m| m.rows() != n_r || m.cols() != n_t) {
        return Err(HarnessError::Format("CSI matrices must share one shape".into()));
    }
    let mut bytes = Vec::with_capacity(16 + matrices.len() * n_r * n_t * 16);
    bytes.extend_from_slice(CSI_MAGIC);
    bytes.extend_from_slice(&(n_r as u32).to_le_bytes());
    bytes.extend_from_slice(&(n_t as u32).to_le_bytes());
    bytes.extend_from_slice(&(matrices.len() as u32).to_le_bytes());
    for m in matrices {
        for z in m.data() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn read_csi(path: &Path) -> Result<Vec<CMatrix>> {
    let mut f = fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)?;
    if &header[0..4] != CSI_MAGIC {
        return Err(HarnessError::Format("bad CSI magic".into()));
    }
    let n_r = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let n_t = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if n_r == 0 || n_t == 0 || n_r > 64 || n_t > 64 {
        return Err(HarnessError::Format(format!("implausible CSI shape {n_r}x{n_t}")));
    }
    let mut body = Vec::new();
    f.read_to_end(&mut body)?;
    let want = count * n_r * n_t * 16;
    if body.len() != want {
        return Err(HarnessError::Format(format!(
            "CSI body has {} bytes, expected {want}",
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut at = 0usize;
    for _ in 0..count {
        let mut entries = Vec::with_capacity(n_r * n_t);
        for _ in 0..n_r * n_t {
            let re = f64::from_le_bytes(body[at..at + 8].try_into().unwrap());
            let im = f64::from_le_bytes(body[at + 8..at + 16].try_into().unwrap());
            entries.push(C64::new(re, im));
            at += 16;
        }
        out.push(CMatrix::from_slice(n_r, n_t, &entries)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PPM images (P6, 8-bit)
// ---------------------------------------------------------------------------

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    parse_ppm(&bytes)
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    fn token(bytes: &[u8], at: &mut usize) -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
                *at += 1;
            }
            if *at < bytes.len() && bytes[*at] == b'#' {
                while *at < bytes.len() && bytes[*at] != b'\n' {
                    *at += 1;
                }
                continue;
            }
            break;
        }
        let start = *at;
        while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if start == *at {
            return Err(HarnessError::Format("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*at]).into_owned())
    }
    let mut at = 0usize;
    if token(bytes, &mut at)? != "P6" {
        return Err(HarnessError::Format("not a binary PPM (P6)".into()));
    }
    let parse = |t: String| -> Result<usize> {
        t.parse()
            .map_err(|_| HarnessError::Format(format!("bad PPM number {t:?}")))
    };
    let width = parse(token(bytes, &mut at)?)?;
    let height = parse(token(bytes, &mut at)?)?;
    let maxval = parse(token(bytes, &mut at)?)?;
    if maxval != 255 {
        return Err(HarnessError::Format(format!(
            "only 8-bit PPM supported (maxval 255), got {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    at += 1;
    let need = 3 * width * height;
    if bytes.len() < at + need {
        return Err(HarnessError::Format("PPM raster truncated".into()));
    }
    Image::new(width, height, bytes[at..at + need].to_vec())
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.data);
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// reports and curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn render_reports(reports: &[SimReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut s = String::from(SimReport::CSV_HEADER);
            s.push('\n');
            for r in reports {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            s
        }
        ReportFormat::Json => serde_json::to_string_pretty(reports).expect("reports serialize"),
    }
}

pub fn write_reports(path: &Path, reports: &[SimReport], format: ReportFormat) -> Result<()> {
    atomic_write(path, render_reports(reports, format).as_bytes())
}

/// Rate-quality curve from CSV with a `rate,quality` header (or bare rows).
pub fn read_curve(path: &Path) -> Result<Vec<RatePoint>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue; // header row
        }
        if fields.len() < 2 {
            return Err(HarnessError::Format(format!("curve line {}: need rate,quality", i + 1)));
        }
        let rate = fields[0]
            .parse()
            .map_err(|_| HarnessError::Format(format!("bad rate {:?}", fields[0])))?;
        let quality = fields[1]
            .parse()
            .map_err(|_| HarnessError::Format(format!("bad quality {:?}", fields[1])))?;
        out.push(RatePoint { rate, quality });
    }
    Ok(out)
}

/// Payload bytes from disk.
pub fn read_payload(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, bytes)
}

/// Convenience used by CLI output paths.
pub fn stdout_or_file(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => atomic_write(p, content.as_bytes()),
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::numerics::sample_cgauss;
    use crate::core::rng::SeededRng;

    #[test]
    fn config_defaults_parse_and_hash() {
        let cfg = HarnessConfig::from_json("{}").unwrap();
        assert_eq!(cfg.n_t, 2);
        assert_eq!(cfg.modulation, "qpsk");
        let h1 = cfg.hash();
        let mut cfg2 = cfg.clone();
        cfg2.snr_db = 7.0;
        assert_ne!(h1, cfg2.hash());
        assert_eq!(h1.len(), 16);
        let (link, ensemble) = cfg.resolve().unwrap();
        assert!(ensemble.is_none());
        link.validate().unwrap();
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(HarnessConfig::from_json(r#"{"mystery": 1}"#).is_err());
        assert!(HarnessConfig::from_json(r#"{"modulation": "qam512"}"#)
            .unwrap()
            .resolve()
            .is_err());
    }

    #[test]
    fn csi_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.csi");
        let mut rng = SeededRng::new(5);
        let mats: Vec<CMatrix> = (0..7)
            .map(|_| sample_cgauss(&mut rng, 2, 2, 1.0).unwrap())
            .collect();
        write_csi(&path, &mats).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 7 * 4 * 16);
        let back = read_csi(&path).unwrap();
        assert_eq!(mats, back);
    }

    #[test]
    fn csi_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csi");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(read_csi(&path).is_err());
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = Image::new(3, 2, (0u8..18).collect()).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img, back);
        // hand-written header with a comment line
        let mut bytes = b"P6\n# test comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img2 = parse_ppm(&bytes).unwrap();
        assert_eq!((img2.width, img2.height), (2, 1));
        assert_eq!(img2.data, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn pcen_params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut rng = SeededRng::new(9);
        let params = PcenParams {
            t_iters: 3,
            gamma: vec![1.0, 0.8, 1.2],
            alpha: vec![0.95, 0.9, 0.85],
            u2: sample_cgauss(&mut rng, 2, 2, 1.0).unwrap(),
        };
        write_pcen_params(&path, &params).unwrap();
        let back = read_pcen_params(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn ppen_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        let mut rng = SeededRng::new(10);
        let w = PpenWeights::seeded(&mut rng, 4, 4, 3, 2);
        write_ppen_weights(&path, &w).unwrap();
        let back = read_ppen_weights(&path).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn surrogate_and_preprocessor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(11);
        let s = Surrogate::seeded(4, 4, &mut rng);
        let sp = dir.path().join("s.json");
        write_surrogate(&sp, &s).unwrap();
        assert_eq!(read_surrogate(&sp).unwrap(), s);
        let p = LinearPreprocessor::init(4, &mut rng);
        let pp = dir.path().join("p.json");
        write_preprocessor(&pp, &p).unwrap();
        assert_eq!(read_preprocessor(&pp).unwrap(), p);
    }

    #[test]
    fn curve_csv_parses_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "rate,quality\n0.1,30\n0.2,33\n").unwrap();
        let c = read_curve(&path).unwrap();
        assert_eq!(c.len(), 2);
        std::fs::write(&path, "0.1,30\n0.2,33\n0.4,36\n").unwrap();
        assert_eq!(read_curve(&path).unwrap().len(), 3);
    }
}

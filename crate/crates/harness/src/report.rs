//! Per-run simulation report and its serialized forms.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

/// PSNR with an explicit lossless state. Lossless serializes as the string
/// "inf" (not a capped number) so downstream rate-quality fits stay honest;
/// non-image runs carry no PSNR at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrValue {
    NotApplicable,
    Lossless,
    Db(f64),
}

impl PsnrValue {
    pub fn csv_field(&self) -> String {
        match self {
            PsnrValue::NotApplicable => String::new(),
            PsnrValue::Lossless => "inf".into(),
            PsnrValue::Db(v) => format!("{v}"),
        }
    }
}

impl Serialize for PsnrValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PsnrValue::NotApplicable => s.serialize_none(),
            PsnrValue::Lossless => s.serialize_str("inf"),
            PsnrValue::Db(v) => s.serialize_f64(*v),
        }
    }
}

/// Everything one link run reports. `throughput` is wall-clock derived and
/// is the only field excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub snr_db: f64,
    pub ber: f64,
    pub ser: f64,
    pub symbol_mse: f64,
    pub psnr_db: PsnrValue,
    /// Channel uses per source symbol, as a float of the exact ratio below.
    pub cbr: f64,
    pub k_total: u64,
    pub n_source: u64,
    /// Payload transmissions per second (wall clock).
    pub throughput: f64,
    /// Fading blocks processed.
    pub trials: u64,
    pub config_hash: String,
    pub seed: u64,
}

impl SimReport {
    /// Equality with the wall-clock field masked out.
    pub fn same_outcome(&self, other: &SimReport) -> bool {
        let mask = |r: &SimReport| SimReport {
            throughput: 0.0,
            ..r.clone()
        };
        mask(self) == mask(other)
    }

    pub const CSV_HEADER: &'static str = "report_version,snr_db,ber,ser,symbol_mse,psnr_db,cbr,k_total,n_source,throughput,trials,config_hash,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "1,{},{},{},{},{},{},{},{},{},{},{},{}",
            self.snr_db,
            self.ber,
            self.ser,
            self.symbol_mse,
            self.psnr_db.csv_field(),
            self.cbr,
            self.k_total,
            self.n_source,
            self.throughput,
            self.trials,
            self.config_hash,
            self.seed
        )
    }
}

impl Serialize for SimReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("SimReport", 13)?;
        st.serialize_field("report_version", &1u32)?;
        st.serialize_field("snr_db", &self.snr_db)?;
        st.serialize_field("ber", &self.ber)?;
        st.serialize_field("ser", &self.ser)?;
        st.serialize_field("symbol_mse", &self.symbol_mse)?;
        st.serialize_field("psnr_db", &self.psnr_db)?;
        st.serialize_field("cbr", &self.cbr)?;
        st.serialize_field("k_total", &self.k_total)?;
        st.serialize_field("n_source", &self.n_source)?;
        st.serialize_field("throughput", &self.throughput)?;
        st.serialize_field("trials", &self.trials)?;
        st.serialize_field("config_hash", &self.config_hash)?;
        st.serialize_field("seed", &self.seed)?;
        st.end()
    }
}

/// Rate-quality point for the Bjontegaard metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub rate: f64,
    pub quality: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> SimReport {
        SimReport {
            snr_db: 6.0,
            ber: 0.01,
            ser: 0.02,
            symbol_mse: 0.1,
            psnr_db: PsnrValue::Lossless,
            cbr: 1.0 / 12.0,
            k_total: 16384,
            n_source: 196_608,
            throughput: 12.5,
            trials: 64,
            config_hash: "abc".into(),
            seed: 7,
        }
    }

    #[test]
    fn lossless_serializes_as_inf_string() {
        let j = serde_json::to_value(report()).unwrap();
        assert_eq!(j["psnr_db"], serde_json::json!("inf"));
        let mut r = report();
        r.psnr_db = PsnrValue::NotApplicable;
        let j = serde_json::to_value(r).unwrap();
        assert!(j["psnr_db"].is_null());
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let header_fields = SimReport::CSV_HEADER.split(',').count();
        let row_fields = report().csv_row().split(',').count();
        assert_eq!(header_fields, row_fields);
    }

    #[test]
    fn outcome_comparison_ignores_throughput() {
        let a = report();
        let mut b = report();
        b.throughput = 99.0;
        assert!(a.same_outcome(&b));
        b.ber = 0.5;
        assert!(!a.same_outcome(&b));
    }
}

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::TrafficError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassName {
    #[serde(rename = "CBR")]
    Cbr,
    #[serde(rename = "rtVBR")]
    RtVbr,
    #[serde(rename = "nrtVBR")]
    NrtVbr,
    #[serde(rename = "ABR")]
    Abr,
    #[serde(rename = "UBR")]
    Ubr,
}

impl ClassName {
    pub const ALL: [ClassName; 5] = [Self::Cbr, Self::RtVbr, Self::NrtVbr, Self::Abr, Self::Ubr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cbr => "CBR",
            Self::RtVbr => "rtVBR",
            Self::NrtVbr => "nrtVBR",
            Self::Abr => "ABR",
            Self::Ubr => "UBR",
        }
    }

    /// Constant and real-time variable bit rate carry deadlines; the rest is
    /// datagram traffic.
    pub fn is_real_time(&self) -> bool {
        matches!(self, Self::Cbr | Self::RtVbr)
    }
}

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassName {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| TrafficError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayBound {
    /// Acceptable end-to-end delay range in milliseconds.
    Bounded { min_ms: u32, max_ms: u32 },
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceClass {
    pub name: ClassName,
    pub application: &'static str,
    pub bandwidth_min: u64,
    pub bandwidth_max: u64,
    pub delay_bound: DelayBound,
    pub loss_rate_target: f64,
}

impl ServiceClass {
    pub fn rate_in_bounds(&self, rate: u64) -> bool {
        (self.bandwidth_min..=self.bandwidth_max).contains(&rate)
    }

    /// Deadline budget stamped on packets, the top of the class range.
    pub fn default_delay_ms(&self) -> Option<u32> {
        match self.delay_bound {
            DelayBound::Bounded { max_ms, .. } => Some(max_ms),
            DelayBound::Unbounded => None,
        }
    }
}

const K: u64 = 1_000;
const M: u64 = 1_000_000;

/// Typical requirements of the five service classes.
pub fn standard_class(name: ClassName) -> ServiceClass {
    let (application, bandwidth_min, bandwidth_max, delay_bound, loss_rate_target) = match name {
        ClassName::NrtVbr => ("Digital Video", M, 10 * M, DelayBound::Unbounded, 1e-6),
        ClassName::Abr => ("Web Browsing", M, 10 * M, DelayBound::Unbounded, 1e-8),
        ClassName::Ubr => ("File Transfer", M, 10 * M, DelayBound::Unbounded, 1e-8),
        ClassName::Cbr => ("Voice", 32 * K, 2 * M, DelayBound::Bounded { min_ms: 30, max_ms: 60 }, 1e-2),
        ClassName::RtVbr => (
            "Video Conference",
            128 * K,
            6 * M,
            DelayBound::Bounded { min_ms: 40, max_ms: 90 },
            1e-3,
        ),
    };
    ServiceClass {
        name,
        application,
        bandwidth_min,
        bandwidth_max,
        delay_bound,
        loss_rate_target,
    }
}

/// Looks a class up by its short name.
pub fn standard_class_by_name(name: &str) -> Result<ServiceClass, TrafficError> {
    Ok(standard_class(name.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voice_row() {
        let c = standard_class_by_name("CBR").unwrap();
        assert_eq!((c.bandwidth_min, c.bandwidth_max), (32_000, 2_000_000));
        assert_eq!(c.delay_bound, DelayBound::Bounded { min_ms: 30, max_ms: 60 });
        assert_eq!(c.loss_rate_target, 1e-2);
        assert_eq!(c.default_delay_ms(), Some(60));
    }

    #[test]
    fn video_conference_row() {
        let c = standard_class_by_name("rtVBR").unwrap();
        assert_eq!((c.bandwidth_min, c.bandwidth_max), (128_000, 6_000_000));
        assert_eq!(c.delay_bound, DelayBound::Bounded { min_ms: 40, max_ms: 90 });
        assert_eq!(c.loss_rate_target, 1e-3);
    }

    #[test]
    fn digital_video_row() {
        let c = standard_class_by_name("nrtVBR").unwrap();
        assert_eq!((c.bandwidth_min, c.bandwidth_max), (1_000_000, 10_000_000));
        assert_eq!(c.delay_bound, DelayBound::Unbounded);
        assert_eq!(c.loss_rate_target, 1e-6);
    }

    #[test]
    fn datagram_rows_and_unknown() {
        for n in ["ABR", "UBR"] {
            let c = standard_class_by_name(n).unwrap();
            assert_eq!(c.loss_rate_target, 1e-8);
            assert!(!c.name.is_real_time());
        }
        assert_eq!(standard_class_by_name("GBR"), Err(TrafficError::UnknownClass("GBR".into())));
    }
}

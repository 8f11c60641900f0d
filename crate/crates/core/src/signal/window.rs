use super::{EcgRecord, Result, SignalError};

/// Number of samples in `window_ms` at `sample_rate_hz`, rounded down.
pub fn window_samples(window_ms: f64, sample_rate_hz: u32) -> usize {
    // Guard against representation error in products like 0.1 * 1000.
    (window_ms * f64::from(sample_rate_hz) / 1000.0 + 1e-9).floor() as usize
}

/// Keeps the first `window_ms` of every lead.
pub fn truncate_window(record: &EcgRecord, window_ms: f64) -> Result<EcgRecord> {
    truncate_window_at(record, window_ms, 0)
}

/// Keeps `window_ms` of every lead starting at sample `offset`.
pub fn truncate_window_at(record: &EcgRecord, window_ms: f64, offset: usize) -> Result<EcgRecord> {
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(SignalError::InvalidConfig(format!(
            "window_ms must be positive, got {window_ms}"
        )));
    }
    record.validate()?;
    let needed = window_samples(window_ms, record.sample_rate_hz);
    let available = record.len().saturating_sub(offset);
    if available < needed || needed == 0 {
        return Err(SignalError::SeriesTooShort {
            needed: needed + offset,
            available: record.len(),
        });
    }
    Ok(EcgRecord {
        leads: record
            .leads
            .iter()
            .map(|row| row[offset..offset + needed].to_vec())
            .collect(),
        ..record.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Label;
    use proptest::prelude::*;

    fn record(rate: u32, len: usize) -> EcgRecord {
        let leads = (0..12)
            .map(|l| (0..len).map(|t| (l * 1000 + t) as f64).collect())
            .collect();
        EcgRecord::new("c", "p", Label::Normal, rate, leads).unwrap()
    }

    #[test]
    fn long_series_is_cut_to_window() {
        let out = truncate_window(&record(500, 5000), 400.0).unwrap();
        assert_eq!(out.len(), 200);
        assert_eq!(out.leads[2][0], 2000.0);
        assert_eq!(out.leads[2][199], 2199.0);
    }

    #[test]
    fn exact_length_is_unchanged() {
        let rec = record(500, 200);
        assert_eq!(truncate_window(&rec, 400.0).unwrap(), rec);
    }

    #[test]
    fn short_series_is_rejected() {
        let err = truncate_window(&record(250, 90), 400.0).unwrap_err();
        assert_eq!(
            err,
            SignalError::SeriesTooShort {
                needed: 100,
                available: 90
            }
        );
    }

    #[test]
    fn offset_shifts_the_window() {
        let out = truncate_window_at(&record(500, 300), 400.0, 50).unwrap();
        assert_eq!(out.leads[0][0], 50.0);
        assert!(truncate_window_at(&record(500, 240), 400.0, 50).is_err());
    }

    proptest! {
        #[test]
        fn output_length_is_floor_of_window(rate in 50u32..2000, window in 1.0f64..1000.0, extra in 0usize..50) {
            let needed = (window * rate as f64 / 1000.0).floor() as usize;
            prop_assume!(needed > 0);
            let out = truncate_window(&record(rate, needed + extra), window).unwrap();
            prop_assert_eq!(out.len(), needed);
        }
    }
}

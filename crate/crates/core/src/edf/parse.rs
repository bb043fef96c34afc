use super::{
    Annotation, EdfError, EdfHeader, Recording, SignalHeader, ANNOTATION_LABEL, HEADER_BLOCK,
};

/// Sequential reader over the ASCII header fields.
struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn text(&mut self, len: usize) -> String {
        let raw = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        String::from_utf8_lossy(raw).trim().to_string()
    }

    fn number<T: std::str::FromStr>(
        &mut self,
        field: &'static str,
        len: usize,
    ) -> Result<T, EdfError> {
        let value = self.text(len);
        value
            .parse()
            .map_err(|_| EdfError::NonNumeric { field, value })
    }

    fn texts(&mut self, n: usize, len: usize) -> Vec<String> {
        (0..n).map(|_| self.text(len)).collect()
    }

    fn numbers<T: std::str::FromStr>(
        &mut self,
        n: usize,
        field: &'static str,
        len: usize,
    ) -> Result<Vec<T>, EdfError> {
        (0..n).map(|_| self.number(field, len)).collect()
    }
}

fn need(bytes: &[u8], needed: usize) -> Result<(), EdfError> {
    if bytes.len() < needed {
        Err(EdfError::Truncated {
            needed,
            available: bytes.len(),
        })
    } else {
        Ok(())
    }
}

/// Decodes an EDF or EDF+ (continuous) file. Annotation signals are turned
/// into [`Annotation`]s and do not appear among the channels.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording, EdfError> {
    need(bytes, HEADER_BLOCK)?;
    if bytes[0] == 0xFF {
        return Err(EdfError::UnsupportedSampleWidth("24-bit BDF".into()));
    }
    let mut f = Fields::new(bytes, 0);
    let version = f.text(8);
    if version != "0" {
        return Err(EdfError::Inconsistent(format!(
            "version field {version:?}, expected \"0\""
        )));
    }
    let patient = f.text(80);
    let recording = f.text(80);
    let start_date = f.text(8);
    let start_time = f.text(8);
    let header_bytes: usize = f.number("header bytes", 8)?;
    let reserved = f.text(44);
    let declared_records: i64 = f.number("number of data records", 8)?;
    let record_duration: f64 = f.number("record duration", 8)?;
    let ns: usize = f.number("number of signals", 4)?;

    if reserved.starts_with("EDF+D") {
        return Err(EdfError::UnsupportedLayout(
            "discontinuous EDF+D recording".into(),
        ));
    }
    let expected_header = HEADER_BLOCK * (ns + 1);
    if header_bytes != expected_header {
        return Err(EdfError::Inconsistent(format!(
            "header declares {header_bytes} bytes but {ns} signals need {expected_header}"
        )));
    }
    need(bytes, expected_header)?;
    if !(record_duration >= 0.0) || !record_duration.is_finite() {
        return Err(EdfError::Inconsistent(format!(
            "record duration {record_duration}"
        )));
    }

    let labels = f.texts(ns, 16);
    let transducers = f.texts(ns, 80);
    let dims = f.texts(ns, 8);
    let pmins: Vec<f64> = f.numbers(ns, "physical minimum", 8)?;
    let pmaxs: Vec<f64> = f.numbers(ns, "physical maximum", 8)?;
    let dmins: Vec<i32> = f.numbers(ns, "digital minimum", 8)?;
    let dmaxs: Vec<i32> = f.numbers(ns, "digital maximum", 8)?;
    let prefilters = f.texts(ns, 80);
    let sprs: Vec<usize> = f.numbers(ns, "samples per record", 8)?;

    let record_samples: usize = sprs.iter().sum();
    let record_bytes = record_samples * 2;
    let data_len = bytes.len() - expected_header;
    let n_records = if declared_records < 0 {
        // -1 marks an unfinished recording; infer from the payload.
        data_len.checked_div(record_bytes).unwrap_or(0)
    } else {
        declared_records as usize
    };
    let needed = expected_header + n_records * record_bytes;
    need(bytes, needed)?;
    if bytes.len() != needed {
        return Err(EdfError::Inconsistent(format!(
            "declared size {needed} bytes, file has {}",
            bytes.len()
        )));
    }

    let mut signals = Vec::new();
    let mut data_idx = Vec::new();
    let mut annot_idx = Vec::new();
    for i in 0..ns {
        if labels[i] == ANNOTATION_LABEL {
            annot_idx.push(i);
            continue;
        }
        if dmaxs[i] <= dmins[i] {
            return Err(EdfError::Inconsistent(format!(
                "signal {:?}: digital max {} not above digital min {}",
                labels[i], dmaxs[i], dmins[i]
            )));
        }
        if pmaxs[i] == pmins[i] {
            return Err(EdfError::Inconsistent(format!(
                "signal {:?}: zero physical range",
                labels[i]
            )));
        }
        signals.push(SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmins[i],
            physical_max: pmaxs[i],
            digital_min: dmins[i],
            digital_max: dmaxs[i],
            prefilter: prefilters[i].clone(),
            samples_per_record: sprs[i],
        });
        data_idx.push(i);
    }
    if annot_idx.len() > 1 {
        return Err(EdfError::UnsupportedLayout(
            "more than one annotation signal".into(),
        ));
    }

    let spr = signals.first().map_or(0, |s| s.samples_per_record);
    if signals.iter().any(|s| s.samples_per_record != spr) {
        return Err(EdfError::UnsupportedLayout(
            "signals with different sampling rates".into(),
        ));
    }
    let sampling_rate = if spr > 0 && record_duration > 0.0 {
        spr as f64 / record_duration
    } else {
        0.0
    };

    let offsets: Vec<usize> = sprs
        .iter()
        .scan(0usize, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o * 2)
        })
        .collect();

    let mut samples: Vec<Vec<f64>> = signals
        .iter()
        .map(|_| Vec::with_capacity(n_records * spr))
        .collect();
    let mut annotations = Vec::new();
    let data = &bytes[expected_header..];
    for r in 0..n_records {
        let rec = &data[r * record_bytes..(r + 1) * record_bytes];
        for (out, (&i, sig)) in samples.iter_mut().zip(data_idx.iter().zip(&signals)) {
            let raw = &rec[offsets[i]..offsets[i] + sprs[i] * 2];
            out.extend(
                raw.chunks_exact(2)
                    .map(|b| sig.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
        }
        if let Some(&i) = annot_idx.first() {
            parse_tals(&rec[offsets[i]..offsets[i] + sprs[i] * 2], &mut annotations)?;
        }
    }
    annotations.sort_by(|a: &Annotation, b| a.onset.total_cmp(&b.onset));

    let header = EdfHeader {
        patient,
        recording,
        start_date,
        start_time,
        reserved,
        n_records,
        record_duration,
        signals,
        annotation_samples_per_record: annot_idx.first().map(|&i| sprs[i]),
    };
    Ok(Recording {
        subject_id: 0,
        run_id: 0,
        sampling_rate,
        channel_labels: header.signals.iter().map(|s| s.label.clone()).collect(),
        samples,
        annotations,
        header: Some(header),
    })
}

fn parse_time(s: &str, what: &str) -> Result<f64, EdfError> {
    let v: f64 = s
        .parse()
        .map_err(|_| EdfError::Annotation(format!("{what} {s:?} is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EdfError::Annotation(format!("{what} {s:?} is not finite")))
    }
}

/// Decodes the time-stamped annotation lists of one record. Timekeeping
/// entries (empty text) are skipped.
fn parse_tals(raw: &[u8], out: &mut Vec<Annotation>) -> Result<(), EdfError> {
    for tal in raw.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == 0x14);
        let stamp = parts.next().unwrap_or_default();
        let stamp = std::str::from_utf8(stamp)
            .map_err(|_| EdfError::Annotation("time stamp is not ASCII".into()))?;
        if !stamp.starts_with(['+', '-']) {
            return Err(EdfError::Annotation(format!(
                "onset {stamp:?} lacks a sign"
            )));
        }
        let (onset, duration) = match stamp.split_once('\x15') {
            Some((o, d)) => (parse_time(o, "onset")?, parse_time(d, "duration")?),
            None => (parse_time(stamp, "onset")?, 0.0),
        };
        for text in parts.filter(|t| !t.is_empty()) {
            out.push(Annotation {
                onset,
                duration,
                label: String::from_utf8_lossy(text).trim().to_string(),
            });
        }
    }
    Ok(())
}

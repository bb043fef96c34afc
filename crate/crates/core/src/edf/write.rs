use super::{
    Annotation, EdfError, EdfHeader, Recording, SignalHeader, ANNOTATION_LABEL, HEADER_BLOCK,
};

const DIGITAL_MIN: i32 = -32768;
const DIGITAL_MAX: i32 = 32767;

/// Shortest representation of `v` that fits `width` bytes and does not lie
/// on the wrong side of `v` (`round_up` selects ≥, otherwise ≤).
fn fit_number(v: f64, width: usize, round_up: bool) -> Option<String> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Some(plain);
    }
    for decimals in (0..width).rev() {
        let scale = 10f64.powi(decimals as i32);
        let r = if round_up {
            (v * scale).ceil()
        } else {
            (v * scale).floor()
        } / scale;
        let s = format!("{r:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s.len() <= width {
            let back: f64 = s.parse().ok()?;
            if (round_up && back >= v) || (!round_up && back <= v) {
                return Some(s);
            }
        }
    }
    None
}

fn put(buf: &mut Vec<u8>, field: &'static str, value: &str, width: usize) -> Result<(), EdfError> {
    if value.len() > width || !value.is_ascii() {
        return Err(EdfError::FieldTooLong {
            field,
            value: value.to_string(),
            limit: width,
        });
    }
    buf.extend_from_slice(value.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

fn put_number(
    buf: &mut Vec<u8>,
    field: &'static str,
    v: f64,
    width: usize,
) -> Result<(), EdfError> {
    let s = fit_number(v, width, false).ok_or_else(|| EdfError::FieldTooLong {
        field,
        value: v.to_string(),
        limit: width,
    })?;
    put(buf, field, &s, width)
}

/// Picks samples per record and record duration. A layout carried over from
/// a parsed header is reused when it still divides the data.
fn record_layout(rec: &Recording) -> Result<(usize, f64), EdfError> {
    let n = rec.n_samples();
    if let Some(h) = &rec.header {
        if let Some(spr) = h.signals.first().map(|s| s.samples_per_record) {
            if spr > 0
                && n.is_multiple_of(spr)
                && (spr as f64 / h.record_duration) == rec.sampling_rate
            {
                return Ok((spr, h.record_duration));
            }
        }
    }
    if rec.channel_labels.is_empty() || n == 0 {
        let d = rec.header.as_ref().map_or(1.0, |h| h.record_duration);
        return Ok((0, d));
    }
    if !(rec.sampling_rate > 0.0) || !rec.sampling_rate.is_finite() {
        return Err(EdfError::Inconsistent(format!(
            "sampling rate {}",
            rec.sampling_rate
        )));
    }
    // Largest record of at most one second whose duration prints exactly.
    let max_spr = (rec.sampling_rate.floor() as usize).clamp(1, n);
    for spr in (1..=max_spr).rev() {
        if !n.is_multiple_of(spr) {
            continue;
        }
        let dur = spr as f64 / rec.sampling_rate;
        let text = format!("{dur}");
        if text.len() <= 8
            && text
                .parse::<f64>()
                .is_ok_and(|d| spr as f64 / d == rec.sampling_rate)
        {
            return Ok((spr, dur));
        }
    }
    Err(EdfError::UnsupportedLayout(format!(
        "cannot split {n} samples at {} Hz into records with a representable duration",
        rec.sampling_rate
    )))
}

fn signal_range(
    label: &str,
    row: &[f64],
    prior: Option<&SignalHeader>,
) -> Result<SignalHeader, EdfError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in row {
        if !v.is_finite() {
            return Err(EdfError::OutOfRange {
                channel: label.to_string(),
                value: v,
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if let Some(p) = prior {
        if p.digital_min >= DIGITAL_MIN
            && p.digital_max <= DIGITAL_MAX
            && p.digital_max > p.digital_min
        {
            let (pmin, pmax) = (
                p.physical_min.min(p.physical_max),
                p.physical_min.max(p.physical_max),
            );
            let slack = p.quantization_step().abs() * 0.5;
            if let Some(&bad) = row.iter().find(|&&v| v < pmin - slack || v > pmax + slack) {
                return Err(EdfError::OutOfRange {
                    channel: label.to_string(),
                    value: bad,
                    min: pmin,
                    max: pmax,
                });
            }
            return Ok(SignalHeader {
                label: label.to_string(),
                ..p.clone()
            });
        }
    }
    if row.is_empty() {
        lo = -1.0;
        hi = 1.0;
    }
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let out_of_range = |value| EdfError::OutOfRange {
        channel: label.to_string(),
        value,
        min: -9_999_999.0,
        max: 99_999_999.0,
    };
    let pmin: f64 = fit_number(lo, 8, false)
        .ok_or_else(|| out_of_range(lo))?
        .parse()
        .unwrap_or(lo);
    let pmax: f64 = fit_number(hi, 8, true)
        .ok_or_else(|| out_of_range(hi))?
        .parse()
        .unwrap_or(hi);
    Ok(SignalHeader {
        label: label.to_string(),
        transducer: String::new(),
        physical_dimension: "uV".into(),
        physical_min: pmin,
        physical_max: pmax,
        digital_min: DIGITAL_MIN,
        digital_max: DIGITAL_MAX,
        prefilter: String::new(),
        samples_per_record: 0,
    })
}

fn to_digital(v: f64, sig: &SignalHeader) -> i16 {
    let d = (v - sig.physical_min) / sig.quantization_step() + f64::from(sig.digital_min);
    d.round()
        .clamp(f64::from(sig.digital_min), f64::from(sig.digital_max)) as i16
}

fn tal(onset: f64, duration: f64, text: &str) -> Result<Vec<u8>, EdfError> {
    if text.bytes().any(|b| matches!(b, 0 | 0x14 | 0x15)) {
        return Err(EdfError::Annotation(format!(
            "label {text:?} contains a TAL delimiter"
        )));
    }
    if !onset.is_finite() || !(duration >= 0.0) || !duration.is_finite() {
        return Err(EdfError::Annotation(format!(
            "onset {onset} / duration {duration}"
        )));
    }
    let mut s = if onset < 0.0 {
        format!("{onset}")
    } else {
        format!("+{onset}")
    };
    if duration > 0.0 {
        s.push('\x15');
        s.push_str(&duration.to_string());
    }
    s.push('\x14');
    s.push_str(text);
    s.push('\x14');
    let mut b = s.into_bytes();
    b.push(0);
    Ok(b)
}

/// Groups annotations into per-record TAL blocks (timekeeping entry first).
fn annotation_blocks(
    anns: &[Annotation],
    n_records: usize,
    dur: f64,
) -> Result<Vec<Vec<u8>>, EdfError> {
    let mut blocks = Vec::with_capacity(n_records);
    for r in 0..n_records {
        blocks.push(tal(r as f64 * dur, 0.0, "")?);
    }
    if n_records == 0 {
        return Ok(blocks);
    }
    for a in anns {
        let r = if dur > 0.0 {
            ((a.onset / dur).floor().max(0.0) as usize).min(n_records - 1)
        } else {
            0
        };
        blocks[r].extend(tal(a.onset, a.duration, &a.label)?);
    }
    Ok(blocks)
}

/// Writes a recording as EDF (no annotations) or EDF+C (with annotations, or
/// when the source header was EDF+). Samples are quantized to 16 bits.
pub fn serialize_edf(rec: &Recording) -> Result<Vec<u8>, EdfError> {
    let n_ch = rec.n_channels();
    if rec.samples.len() != n_ch {
        return Err(EdfError::Inconsistent(format!(
            "{n_ch} labels but {} sample rows",
            rec.samples.len()
        )));
    }
    let n = rec.n_samples();
    if rec.samples.iter().any(|r| r.len() != n) {
        return Err(EdfError::Inconsistent(
            "sample rows differ in length".into(),
        ));
    }
    for label in &rec.channel_labels {
        if label.len() > 16 {
            return Err(EdfError::FieldTooLong {
                field: "label",
                value: label.clone(),
                limit: 16,
            });
        }
    }
    let (spr, dur) = record_layout(rec)?;
    let n_records = n.checked_div(spr).unwrap_or(0);

    let prior = rec.header.as_ref().filter(|h| h.signals.len() == n_ch);
    let mut signals = Vec::with_capacity(n_ch);
    for (i, (label, row)) in rec.channel_labels.iter().zip(&rec.samples).enumerate() {
        let mut s = signal_range(label, row, prior.map(|h| &h.signals[i]))?;
        s.samples_per_record = spr;
        signals.push(s);
    }

    let plus =
        !rec.annotations.is_empty() || rec.header.as_ref().is_some_and(EdfHeader::is_edf_plus);
    let blocks = if plus {
        annotation_blocks(&rec.annotations, n_records, dur)?
    } else {
        Vec::new()
    };
    let annot_spr = plus.then(|| {
        let needed = blocks
            .iter()
            .map(|b| b.len().div_ceil(2))
            .max()
            .unwrap_or(0);
        let prior = rec
            .header
            .as_ref()
            .and_then(|h| h.annotation_samples_per_record)
            .unwrap_or(0);
        needed.max(prior).max(1)
    });

    let ns = n_ch + usize::from(plus);
    let (patient, recording, date, time) = match &rec.header {
        Some(h) => (
            h.patient.as_str(),
            h.recording.as_str(),
            h.start_date.as_str(),
            h.start_time.as_str(),
        ),
        None if plus => ("X X X X", "Startdate X X X X", "01.01.85", "00.00.00"),
        None => ("", "", "01.01.85", "00.00.00"),
    };
    let mut buf = Vec::with_capacity(
        HEADER_BLOCK * (ns + 1) + n_records * (n_ch * spr + annot_spr.unwrap_or(0)) * 2,
    );
    put(&mut buf, "version", "0", 8)?;
    put(&mut buf, "patient", patient, 80)?;
    put(&mut buf, "recording", recording, 80)?;
    put(&mut buf, "start date", date, 8)?;
    put(&mut buf, "start time", time, 8)?;
    put(
        &mut buf,
        "header bytes",
        &(HEADER_BLOCK * (ns + 1)).to_string(),
        8,
    )?;
    put(&mut buf, "reserved", if plus { "EDF+C" } else { "" }, 44)?;
    put(
        &mut buf,
        "number of data records",
        &n_records.to_string(),
        8,
    )?;
    put_number(&mut buf, "record duration", dur, 8)?;
    put(&mut buf, "number of signals", &ns.to_string(), 4)?;

    let annot_header = annot_spr.map(|spr| SignalHeader {
        label: ANNOTATION_LABEL.into(),
        transducer: String::new(),
        physical_dimension: String::new(),
        physical_min: -1.0,
        physical_max: 1.0,
        digital_min: DIGITAL_MIN,
        digital_max: DIGITAL_MAX,
        prefilter: String::new(),
        samples_per_record: spr,
    });
    let all: Vec<&SignalHeader> = signals.iter().chain(annot_header.as_ref()).collect();
    for s in &all {
        put(&mut buf, "label", &s.label, 16)?;
    }
    for s in &all {
        put(&mut buf, "transducer", &s.transducer, 80)?;
    }
    for s in &all {
        put(&mut buf, "physical dimension", &s.physical_dimension, 8)?;
    }
    for s in &all {
        put_number(&mut buf, "physical minimum", s.physical_min, 8)?;
    }
    for s in &all {
        put_number(&mut buf, "physical maximum", s.physical_max, 8)?;
    }
    for s in &all {
        put(&mut buf, "digital minimum", &s.digital_min.to_string(), 8)?;
    }
    for s in &all {
        put(&mut buf, "digital maximum", &s.digital_max.to_string(), 8)?;
    }
    for s in &all {
        put(&mut buf, "prefilter", &s.prefilter, 80)?;
    }
    for s in &all {
        put(
            &mut buf,
            "samples per record",
            &s.samples_per_record.to_string(),
            8,
        )?;
    }
    for _ in &all {
        put(&mut buf, "reserved", "", 32)?;
    }
    debug_assert_eq!(buf.len(), HEADER_BLOCK * (ns + 1));

    for r in 0..n_records {
        for (row, sig) in rec.samples.iter().zip(&signals) {
            for &v in &row[r * spr..(r + 1) * spr] {
                buf.extend_from_slice(&to_digital(v, sig).to_le_bytes());
            }
        }
        if let Some(aspr) = annot_spr {
            let block = &blocks[r];
            buf.extend_from_slice(block);
            buf.extend(std::iter::repeat_n(0u8, aspr * 2 - block.len()));
        }
    }
    Ok(buf)
}

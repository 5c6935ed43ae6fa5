//! Independent readers and oracles shared by the integration tests.
#![allow(dead_code)]

/// Parsed point records, one `Vec<f32>` per point, plus property names.
pub struct CloudFile {
    pub properties: Vec<String>,
    pub records: Vec<Vec<f32>>,
}

fn split_header<'a>(bytes: &'a [u8], terminator: &str) -> (String, &'a [u8]) {
    let needle = terminator.as_bytes();
    let end = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .expect("header terminator present")
        + needle.len();
    (String::from_utf8(bytes[..end].to_vec()).expect("ascii header"), &bytes[end..])
}

fn records(body: &[u8], n: usize, props: usize) -> Vec<Vec<f32>> {
    assert_eq!(body.len(), n * props * 4, "body length");
    body.chunks_exact(props * 4)
        .map(|r| r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        .collect()
}

pub fn read_ply(bytes: &[u8]) -> CloudFile {
    let (header, body) = split_header(bytes, "end_header\n");
    let mut lines = header.lines();
    assert_eq!(lines.next(), Some("ply"));
    assert_eq!(lines.next(), Some("format binary_little_endian 1.0"));
    let mut n = 0;
    let mut properties = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split(' ').collect();
        match parts[..] {
            ["element", "vertex", count] => n = count.parse().unwrap(),
            ["property", "float", name] => properties.push(name.to_string()),
            ["end_header"] => {}
            _ => panic!("unexpected header line {line}"),
        }
    }
    let records = records(body, n, properties.len());
    CloudFile { properties, records }
}

pub fn read_pcd(bytes: &[u8]) -> CloudFile {
    let (header, body) = split_header(bytes, "DATA binary\n");
    let mut n = 0;
    let mut properties = Vec::new();
    for line in header.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("FIELDS") => properties = parts.map(str::to_string).collect(),
            Some("POINTS") => n = parts.next().unwrap().parse().unwrap(),
            _ => {}
        }
    }
    let records = records(body, n, properties.len());
    CloudFile { properties, records }
}

/// Depth metrics by direct scalar loops over rows and columns.
pub struct OracleMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub deltas: [f64; 3],
    pub n: usize,
}

pub fn metrics_oracle(pred: &[Vec<f64>], gt: &[Vec<Option<f64>>], min_d: f64, max_d: f64) -> OracleMetrics {
    let mut sums = [0.0f64; 4];
    let mut hits = [0usize; 3];
    let mut n = 0;
    for (prow, grow) in pred.iter().zip(gt) {
        for (&p, g) in prow.iter().zip(grow) {
            let Some(g) = *g else { continue };
            if g < min_d || g > max_d {
                continue;
            }
            let p = p.max(min_d).min(max_d);
            sums[0] += (p - g).abs() / g;
            sums[1] += (p - g) * (p - g) / g;
            sums[2] += (p - g) * (p - g);
            sums[3] += (p.ln() - g.ln()) * (p.ln() - g.ln());
            let r = if p / g > g / p { p / g } else { g / p };
            for (k, h) in hits.iter_mut().enumerate() {
                if r < 1.25f64.powi(k as i32 + 1) {
                    *h += 1;
                }
            }
            n += 1;
        }
    }
    let nf = n as f64;
    OracleMetrics {
        abs_rel: sums[0] / nf,
        sq_rel: sums[1] / nf,
        rmse: (sums[2] / nf).sqrt(),
        rmse_log: (sums[3] / nf).sqrt(),
        deltas: [hits[0] as f64 / nf, hits[1] as f64 / nf, hits[2] as f64 / nf],
        n,
    }
}

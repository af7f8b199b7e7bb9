//! Click-log, labeled-output, test-set and document-pool TSV formats.
//!
//! All readers work line by line over a [`BufRead`] and reject invalid UTF-8
//! instead of replacing it, so queries with diacritics pass through unchanged.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Maximum length of the body text extract, in characters.
pub const BTE_MAX_CHARS: usize = 230;

/// One row of the click log.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImpressionRecord {
    pub request_id: String,
    pub query: String,
    pub url: String,
    pub title: String,
    pub bte: String,
    /// 0-based position on the results page; `None` when the document was no
    /// longer indexed.
    pub rank: Option<u32>,
    pub clicks: u32,
    /// Seconds spent on the document after the click.
    pub dwell_time: Option<u32>,
}

impl ImpressionRecord {
    pub fn check(&self) -> std::result::Result<(), String> {
        let bte_chars = self.bte.chars().count();
        if bte_chars > BTE_MAX_CHARS {
            return Err(format!(
                "bte has {bte_chars} characters, at most {BTE_MAX_CHARS} allowed"
            ));
        }
        if self.dwell_time.is_some() && self.clicks == 0 {
            return Err("dwell time present on an impression without clicks".into());
        }
        for (name, value) in [
            ("requestId", &self.request_id),
            ("query", &self.query),
            ("url", &self.url),
            ("title", &self.title),
            ("bte", &self.bte),
        ] {
            if value.contains(['\t', '\n', '\r']) {
                return Err(format!("{name} contains a tab or line break"));
            }
        }
        Ok(())
    }
}

/// All impressions served for one request, i.e. one user query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub request_id: String,
    pub query: String,
    pub impressions: Vec<ImpressionRecord>,
}

impl Request {
    /// Builds a request, ordering ranked impressions ascending and keeping
    /// unranked ones at the tail in their input order.
    pub fn new(request_id: String, query: String, mut impressions: Vec<ImpressionRecord>) -> Self {
        impressions.sort_by_key(|r| (r.rank.is_none(), r.rank));
        Request {
            request_id,
            query,
            impressions,
        }
    }

    pub fn from_records(records: Vec<ImpressionRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::InvariantViolation {
            line: 0,
            message: "request without impressions".into(),
        })?;
        let (request_id, query) = (first.request_id.clone(), first.query.clone());
        if let Some(bad) = records.iter().find(|r| r.query != query || r.request_id != request_id) {
            return Err(Error::InvariantViolation {
                line: 0,
                message: format!(
                    "request `{}` mixes queries {:?} and {:?}",
                    request_id, query, bad.query
                ),
            });
        }
        Ok(Request::new(request_id, query, records))
    }

    pub fn total_clicks(&self) -> u64 {
        self.impressions.iter().map(|r| r.clicks as u64).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Column {
    RequestId,
    Query,
    Url,
    Title,
    Bte,
    Rank,
    Clicks,
    DwellTime,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Column::RequestId,
        Column::Query,
        Column::Url,
        Column::Title,
        Column::Bte,
        Column::Rank,
        Column::Clicks,
        Column::DwellTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::RequestId => "requestId",
            Column::Query => "query",
            Column::Url => "url",
            Column::Title => "title",
            Column::Bte => "bte",
            Column::Rank => "rank",
            Column::Clicks => "clicks",
            Column::DwellTime => "dwellTime",
        }
    }

    pub fn from_name(name: &str) -> Option<Column> {
        Column::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Column order of a click-log file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    columns: [Column; 8],
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            columns: Column::ALL,
        }
    }
}

impl Schema {
    pub fn columns(&self) -> &[Column; 8] {
        &self.columns
    }

    /// Parses a list of the eight column names separated by commas or tabs.
    pub fn parse(spec: &str) -> Result<Schema> {
        let names: Vec<&str> = spec.split([',', '\t']).map(str::trim).collect();
        if names.len() != 8 {
            return Err(Error::InvalidConfig(format!(
                "schema needs 8 columns, got {}",
                names.len()
            )));
        }
        let mut columns = Column::ALL;
        for (slot, name) in columns.iter_mut().zip(&names) {
            *slot = Column::from_name(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown column `{name}`")))?;
        }
        for c in Column::ALL {
            if !columns.contains(&c) {
                return Err(Error::InvalidConfig(format!("schema lacks column `{}`", c.name())));
            }
        }
        Ok(Schema { columns })
    }

    fn position(&self, column: Column) -> usize {
        self.columns.iter().position(|&c| c == column).unwrap()
    }

    pub fn header(&self) -> String {
        self.columns.iter().map(|c| c.name()).collect::<Vec<_>>().join("\t")
    }
}

fn is_absent(field: &str) -> bool {
    field.is_empty() || field == "N/A"
}

fn parse_count(field: &str, column: &'static str, line: u64) -> Result<u32> {
    field.parse::<u32>().map_err(|_| Error::FieldParse {
        line,
        column,
        value: field.to_owned(),
    })
}

fn parse_optional_count(field: &str, column: &'static str, line: u64) -> Result<Option<u32>> {
    if is_absent(field) {
        Ok(None)
    } else {
        parse_count(field, column, line).map(Some)
    }
}

/// Parses one tab-separated click-log line. `line_no` is used for error
/// reporting only.
pub fn parse_log_line(line: &str, schema: &Schema, line_no: u64) -> Result<ImpressionRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(Error::MalformedLine {
            line: line_no,
            expected: 8,
            found: fields.len(),
        });
    }
    let get = |c: Column| fields[schema.position(c)];
    let record = ImpressionRecord {
        request_id: get(Column::RequestId).to_owned(),
        query: get(Column::Query).to_owned(),
        url: get(Column::Url).to_owned(),
        title: get(Column::Title).to_owned(),
        bte: get(Column::Bte).to_owned(),
        rank: parse_optional_count(get(Column::Rank), "rank", line_no)?,
        clicks: parse_count(get(Column::Clicks), "clicks", line_no)?,
        dwell_time: parse_optional_count(get(Column::DwellTime), "dwellTime", line_no)?,
    };
    record
        .check()
        .map_err(|message| Error::InvariantViolation {
            line: line_no,
            message,
        })?;
    Ok(record)
}

/// Formats a record as a log line (without the trailing newline). Absent
/// optionals are written as empty fields.
pub fn format_log_line(record: &ImpressionRecord, schema: &Schema) -> String {
    let opt = |v: Option<u32>| v.map(|v| v.to_string()).unwrap_or_default();
    schema
        .columns
        .iter()
        .map(|c| match c {
            Column::RequestId => record.request_id.clone(),
            Column::Query => record.query.clone(),
            Column::Url => record.url.clone(),
            Column::Title => record.title.clone(),
            Column::Bte => record.bte.clone(),
            Column::Rank => opt(record.rank),
            Column::Clicks => record.clicks.to_string(),
            Column::DwellTime => opt(record.dwell_time),
        })
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn write_request<W: Write>(sink: &mut W, request: &Request, schema: &Schema) -> std::io::Result<()> {
    for record in &request.impressions {
        sink.write_all(format_log_line(record, schema).as_bytes())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Iterator over the non-empty lines of a UTF-8 text stream, with 1-based
/// line numbers.
pub struct TsvLines<R> {
    source: R,
    line_no: u64,
    buf: Vec<u8>,
}

impl<R: BufRead> TsvLines<R> {
    pub fn new(source: R) -> Self {
        TsvLines {
            source,
            line_no: 0,
            buf: Vec::new(),
        }
    }

    pub fn line_no(&self) -> u64 {
        self.line_no
    }
}

impl<R: BufRead> Iterator for TsvLines<R> {
    type Item = Result<(u64, String)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.source.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(Error::Io {
                        rows: self.line_no,
                        source: e,
                    }))
                }
            }
            self.line_no += 1;
            if self.buf.last() == Some(&b'\n') {
                self.buf.pop();
                if self.buf.last() == Some(&b'\r') {
                    self.buf.pop();
                }
            }
            if self.buf.is_empty() {
                continue;
            }
            let line = std::mem::take(&mut self.buf);
            return Some(match String::from_utf8(line) {
                Ok(s) => Ok((self.line_no, s)),
                Err(_) => Err(Error::InvalidUtf8 { line: self.line_no }),
            });
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReadOptions {
    /// Rows of each request are contiguous. When false the whole input is
    /// grouped in memory.
    pub pre_grouped: bool,
    /// Column order used when the input has no header row.
    pub schema: Schema,
    /// Remember closed request ids to detect a request that reappears later
    /// in pre-grouped input. Costs 8 bytes per request.
    pub verify_grouping: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            pre_grouped: true,
            schema: Schema::default(),
            verify_grouping: true,
        }
    }
}

/// Streaming reader of a click log, yielding one [`Request`] at a time.
pub struct LogReader<R> {
    lines: TsvLines<R>,
    options: ReadOptions,
    schema: Schema,
    started: bool,
    pending: Option<ImpressionRecord>,
    closed: std::collections::HashSet<u64>,
    buffered: Option<std::vec::IntoIter<Request>>,
    failed: bool,
}

pub fn read_log<R: BufRead>(source: R, options: ReadOptions) -> LogReader<R> {
    LogReader {
        lines: TsvLines::new(source),
        schema: options.schema,
        options,
        started: false,
        pending: None,
        closed: Default::default(),
        buffered: None,
        failed: false,
    }
}

impl<R: BufRead> LogReader<R> {
    fn next_record(&mut self) -> Option<Result<(u64, ImpressionRecord)>> {
        let (line_no, line) = match self.lines.next()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if !self.started {
            self.started = true;
            if line.split('\t').next() == Some(Column::RequestId.name()) {
                match Schema::parse(&line) {
                    Ok(schema) => self.schema = schema,
                    Err(e) => return Some(Err(e)),
                }
                return self.next_record();
            }
        }
        Some(parse_log_line(&line, &self.schema, line_no).map(|r| (line_no, r)))
    }

    fn next_grouped(&mut self) -> Option<Result<Request>> {
        let first = match self.pending.take() {
            Some(r) => r,
            None => match self.next_record()? {
                Ok((_, r)) => r,
                Err(e) => return Some(Err(e)),
            },
        };
        let mut group = vec![first];
        loop {
            match self.next_record() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok((line_no, r))) => {
                    if r.request_id == group[0].request_id {
                        if r.query != group[0].query {
                            return Some(Err(Error::InvariantViolation {
                                line: line_no,
                                message: format!(
                                    "request `{}` mixes queries {:?} and {:?}",
                                    r.request_id, group[0].query, r.query
                                ),
                            }));
                        }
                        group.push(r);
                    } else {
                        if self.options.verify_grouping
                            && self.closed.contains(&crate::seed::fnv1a(r.request_id.as_bytes()))
                        {
                            return Some(Err(Error::GroupingViolation {
                                line: line_no,
                                request_id: r.request_id,
                            }));
                        }
                        self.pending = Some(r);
                        break;
                    }
                }
            }
        }
        if self.options.verify_grouping {
            self.closed
                .insert(crate::seed::fnv1a(group[0].request_id.as_bytes()));
        }
        Some(Request::from_records(group))
    }

    fn load_ungrouped(&mut self) -> Result<Vec<Request>> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut groups: Vec<Vec<ImpressionRecord>> = Vec::new();
        while let Some(item) = self.next_record() {
            let (line_no, r) = item?;
            match index.get(&r.request_id) {
                Some(&i) => {
                    if groups[i][0].query != r.query {
                        return Err(Error::InvariantViolation {
                            line: line_no,
                            message: format!("request `{}` mixes queries", r.request_id),
                        });
                    }
                    groups[i].push(r)
                }
                None => {
                    index.insert(r.request_id.clone(), groups.len());
                    groups.push(vec![r]);
                }
            }
        }
        groups.into_iter().map(Request::from_records).collect()
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<Request>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = if self.options.pre_grouped {
            self.next_grouped()
        } else {
            if self.buffered.is_none() {
                match self.load_ungrouped() {
                    Ok(all) => self.buffered = Some(all.into_iter()),
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
            }
            self.buffered.as_mut().and_then(Iterator::next).map(Ok)
        };
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Formats `x` as a plain decimal with nine significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    let rounded: f64 = s.parse().unwrap();
    if decimals > 0 && rounded.abs().log10().floor() as i32 > magnitude {
        format!("{:.*}", decimals - 1, x)
    } else {
        s
    }
}

/// A training row: a query-document pair with its pseudo-label and loss
/// weight.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRow {
    pub query: String,
    pub url: String,
    pub title: String,
    pub bte: String,
    pub label: f64,
    pub weight: f64,
}

impl LabeledRow {
    pub fn doc_text(&self) -> String {
        if self.bte.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.bte)
        }
    }
}

/// Writes labeled rows as `query url title bte label weight`.
pub struct LabeledWriter<W> {
    sink: W,
    rows: u64,
}

impl<W: Write> LabeledWriter<W> {
    pub fn new(sink: W) -> Self {
        LabeledWriter { sink, rows: 0 }
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn write(&mut self, row: &LabeledRow) -> Result<()> {
        if !(0.0..=1.0).contains(&row.label) {
            return Err(Error::InvariantViolation {
                line: self.rows + 1,
                message: format!("label {} outside [0, 1]", row.label),
            });
        }
        if !(row.weight > 0.0 && row.weight.is_finite()) {
            return Err(Error::InvariantViolation {
                line: self.rows + 1,
                message: format!("loss weight {} is not positive", row.weight),
            });
        }
        let line = format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            row.query,
            row.url,
            row.title,
            row.bte,
            format_sig9(row.label),
            format_sig9(row.weight)
        );
        self.sink
            .write_all(line.as_bytes())
            .map_err(|source| Error::Io {
                rows: self.rows,
                source,
            })?;
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(W, u64)> {
        self.sink.flush().map_err(|source| Error::Io {
            rows: self.rows,
            source,
        })?;
        Ok((self.sink, self.rows))
    }
}

/// Writes all rows and returns how many were written.
pub fn write_labeled<W: Write, I>(sink: W, rows: I) -> Result<u64>
where
    I: IntoIterator<Item = LabeledRow>,
{
    let mut writer = LabeledWriter::new(sink);
    for row in rows {
        writer.write(&row)?;
    }
    writer.finish().map(|(_, n)| n)
}

fn parse_real(field: &str, column: &'static str, line: u64) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::FieldParse {
            line,
            column,
            value: field.to_owned(),
        }),
    }
}

fn split_exact(line: &str, n: usize, line_no: u64) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(Error::MalformedLine {
            line: line_no,
            expected: n,
            found: fields.len(),
        });
    }
    Ok(fields)
}

pub fn read_labeled<R: BufRead>(source: R) -> Result<Vec<LabeledRow>> {
    let mut rows = Vec::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        let f = split_exact(&line, 6, line_no)?;
        let label = parse_real(f[4], "label", line_no)?;
        let weight = parse_real(f[5], "weight", line_no)?;
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::FieldParse {
                line: line_no,
                column: "label",
                value: f[4].to_owned(),
            });
        }
        if weight <= 0.0 {
            return Err(Error::FieldParse {
                line: line_no,
                column: "weight",
                value: f[5].to_owned(),
            });
        }
        rows.push(LabeledRow {
            query: f[0].to_owned(),
            url: f[1].to_owned(),
            title: f[2].to_owned(),
            bte: f[3].to_owned(),
            label,
            weight,
        });
    }
    Ok(rows)
}

/// A manually annotated query-document pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedPair {
    pub query: String,
    pub url: String,
    pub doc_text: String,
    /// Median of the annotator grades, in [0, 1].
    pub label: f64,
}

/// All annotated pairs of one query, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct TestQuery {
    pub query: String,
    pub pairs: Vec<AnnotatedPair>,
}

pub fn parse_test_line(line: &str, line_no: u64) -> Result<AnnotatedPair> {
    let f = split_exact(line, 4, line_no)?;
    let label = parse_real(f[3], "label", line_no)?;
    if !(0.0..=1.0).contains(&label) {
        return Err(Error::FieldParse {
            line: line_no,
            column: "label",
            value: f[3].to_owned(),
        });
    }
    if f[2].chars().count() > BTE_MAX_CHARS {
        return Err(Error::InvariantViolation {
            line: line_no,
            message: format!("document text longer than {BTE_MAX_CHARS} characters"),
        });
    }
    Ok(AnnotatedPair {
        query: f[0].to_owned(),
        url: f[1].to_owned(),
        doc_text: f[2].to_owned(),
        label,
    })
}

/// Reads a `query url doc label` test set, grouping rows by query in order of
/// first appearance. A header row `query url doc label` is skipped.
pub fn read_test_set<R: BufRead>(source: R) -> Result<Vec<TestQuery>> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<TestQuery> = Vec::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        if line_no == 1 && line == "query\turl\tdoc\tlabel" {
            continue;
        }
        let pair = parse_test_line(&line, line_no)?;
        let slot = *index.entry(pair.query.clone()).or_insert_with(|| {
            groups.push(TestQuery {
                query: pair.query.clone(),
                pairs: Vec::new(),
            });
            groups.len() - 1
        });
        groups[slot].pairs.push(pair);
    }
    Ok(groups)
}

pub fn write_test_set<W: Write>(mut sink: W, queries: &[TestQuery]) -> std::io::Result<()> {
    for q in queries {
        for p in &q.pairs {
            writeln!(sink, "{}\t{}\t{}\t{}", p.query, p.url, p.doc_text, format_sig9(p.label))?;
        }
    }
    sink.flush()
}

/// A document of the negative-sampling pool or the BM25 corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Document {
    pub url: String,
    pub title: String,
    pub bte: String,
}

impl Document {
    pub fn text(&self) -> String {
        if self.bte.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.bte)
        }
    }
}

/// Reads `url [title [bte]]` rows. Duplicate urls keep their first row.
pub fn read_documents<R: BufRead>(source: R) -> Result<Vec<Document>> {
    let mut seen = std::collections::HashSet::new();
    let mut docs = Vec::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() > 3 {
            return Err(Error::MalformedLine {
                line: line_no,
                expected: 3,
                found: f.len(),
            });
        }
        if seen.insert(f[0].to_owned()) {
            docs.push(Document {
                url: f[0].to_owned(),
                title: f.get(1).copied().unwrap_or("").to_owned(),
                bte: f.get(2).copied().unwrap_or("").to_owned(),
            });
        }
    }
    Ok(docs)
}

pub fn write_documents<W: Write>(mut sink: W, docs: &[Document]) -> std::io::Result<()> {
    for d in docs {
        writeln!(sink, "{}\t{}\t{}", d.url, d.title, d.bte)?;
    }
    sink.flush()
}

/// `query url score` rows produced by a scorer.
pub fn read_scores<R: BufRead>(source: R) -> Result<HashMap<(String, String), f64>> {
    let mut scores = HashMap::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        let f = split_exact(&line, 3, line_no)?;
        let score = parse_real(f[2], "score", line_no)?;
        scores.insert((f[0].to_owned(), f[1].to_owned()), score);
    }
    Ok(scores)
}

/// Reads the first two columns (query, url) of any pair-oriented TSV,
/// skipping a leading header row that starts with `query<TAB>url`.
pub fn read_query_url_pairs<R: BufRead>(source: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        if line_no == 1 && line.starts_with("query\turl") {
            continue;
        }
        let mut f = line.split('\t');
        match (f.next(), f.next()) {
            (Some(q), Some(u)) => pairs.push((q.to_owned(), u.to_owned())),
            _ => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    expected: 2,
                    found: 1,
                })
            }
        }
    }
    Ok(pairs)
}

/// `key value` rows, e.g. per-query metric values.
pub fn read_keyed_values<R: BufRead>(source: R) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for item in TsvLines::new(source) {
        let (line_no, line) = item?;
        let f = split_exact(&line, 2, line_no)?;
        out.push((f[0].to_owned(), parse_real(f[1], "value", line_no)?));
    }
    Ok(out)
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header())
    }
}

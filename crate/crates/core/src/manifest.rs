//! Line-delimited detection manifests.
//!
//! The first line is a header object `{"version":1,"embedding_dim":D}`; every
//! following non-blank line is one detection:
//!
//! ```text
//! {"video_id":"v1","frame":0,"face":0,"bbox":[x0,y0,x1,y1],"conf":0.97,"embedding":[...],"score":0.83,"label":1}
//! ```
//!
//! `embedding`, `score` and `label` are optional. Cleaned manifests carry two
//! more fields per row, `component` and `kept`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Embedding, FaceRecord, Label, VideoGroup};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub version: u32,
    pub embedding_dim: usize,
}

impl ManifestHeader {
    pub fn new(embedding_dim: usize) -> Self {
        ManifestHeader {
            version: MANIFEST_VERSION,
            embedding_dim,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.version != MANIFEST_VERSION {
            return Err(format!("unsupported manifest version {}", self.version));
        }
        if self.embedding_dim == 0 {
            return Err("embedding_dim must be at least 1".into());
        }
        Ok(())
    }
}

/// Component membership written by the cleaning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    /// Index of the component within its video's component list.
    pub component: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecord {
    pub record: FaceRecord,
    pub annotation: Option<Annotation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RowIn {
    video_id: String,
    frame: u64,
    face: u32,
    bbox: [f64; 4],
    conf: f64,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    component: Option<usize>,
    #[serde(default)]
    kept: Option<bool>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    video_id: &'a str,
    frame: u64,
    face: u32,
    bbox: [f64; 4],
    conf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    component: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kept: Option<bool>,
}

impl RowIn {
    fn into_record(self, line: usize, dim: usize) -> Result<AnnotatedRecord> {
        let parse = |reason: String| Error::Parse { line, reason };
        let [x0, y0, x1, y1] = self.bbox;
        let bbox = BBox::new(x0, y0, x1, y1).map_err(parse)?;
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(parse(format!("conf {} outside [0, 1]", self.conf)));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(parse(format!("score {s} outside [0, 1]")));
            }
        }
        let video_label = match self.label {
            None => None,
            Some(v) => {
                Some(Label::from_u8(v).ok_or_else(|| parse(format!("label {v} is not 0 or 1")))?)
            }
        };
        let embedding = match self.embedding {
            None => None,
            Some(values) => {
                if values.len() != dim {
                    return Err(Error::DimensionMismatch {
                        line,
                        expected: dim,
                        found: values.len(),
                    });
                }
                Some(Embedding::new(values))
            }
        };
        let annotation = match (self.component, self.kept) {
            (None, None) => None,
            (Some(component), Some(kept)) => Some(Annotation { component, kept }),
            _ => return Err(parse("`component` and `kept` must appear together".into())),
        };
        Ok(AnnotatedRecord {
            record: FaceRecord {
                video_id: self.video_id,
                frame_index: self.frame,
                face_index: self.face,
                bbox,
                detector_confidence: self.conf,
                embedding,
                score: self.score,
                video_label,
            },
            annotation,
        })
    }
}

/// Streaming manifest reader. Holds one line in memory at a time.
pub struct ManifestReader<R> {
    input: R,
    header: ManifestHeader,
    line_no: usize,
    buf: String,
    done: bool,
}

impl<R: BufRead> ManifestReader<R> {
    /// Reads and validates the header line.
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            line_no += 1;
            if input.read_line(&mut buf)? == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "missing manifest header".into(),
                });
            }
            if !buf.trim().is_empty() {
                break;
            }
        }
        let header: ManifestHeader =
            serde_json::from_str(buf.trim()).map_err(|e| Error::Parse {
                line: line_no,
                reason: format!("bad header: {e}"),
            })?;
        header.validate().map_err(|reason| Error::Parse {
            line: line_no,
            reason,
        })?;
        Ok(ManifestReader {
            input,
            header,
            line_no,
            buf,
            done: false,
        })
    }

    pub fn header(&self) -> ManifestHeader {
        self.header
    }

    /// Drops component annotations and yields plain records.
    pub fn records(self) -> impl Iterator<Item = Result<FaceRecord>> {
        self.map(|r| r.map(|a| a.record))
    }

    fn next_row(&mut self) -> Result<Option<AnnotatedRecord>> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            if self.input.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let line = self.line_no;
            let row: RowIn = serde_json::from_str(text).map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
            return row.into_record(line, self.header.embedding_dim).map(Some);
        }
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<AnnotatedRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_row() {
            Ok(Some(row)) => Some(Ok(row)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a manifest stream: the header plus a lazy iterator over its records.
pub fn read_manifest<R: BufRead>(
    input: R,
) -> Result<(ManifestHeader, impl Iterator<Item = Result<FaceRecord>>)> {
    let reader = ManifestReader::new(input)?;
    Ok((reader.header(), reader.records()))
}

/// Writes one manifest row. Floats use shortest round-trip formatting.
pub fn write_row<W: Write>(
    out: &mut W,
    record: &FaceRecord,
    annotation: Option<Annotation>,
) -> Result<()> {
    let b = record.bbox;
    let row = RowOut {
        video_id: &record.video_id,
        frame: record.frame_index,
        face: record.face_index,
        bbox: [b.x0, b.y0, b.x1, b.y1],
        conf: record.detector_confidence,
        embedding: record.embedding.as_ref().map(Embedding::as_slice),
        score: record.score,
        label: record.video_label.map(Label::as_u8),
        component: annotation.map(|a| a.component),
        kept: annotation.map(|a| a.kept),
    };
    serde_json::to_writer(&mut *out, &row).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_header<W: Write>(out: &mut W, header: ManifestHeader) -> Result<()> {
    serde_json::to_writer(&mut *out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes the header then every record. Returns the number of rows written.
pub fn write_manifest<'a, W: Write>(
    header: ManifestHeader,
    records: impl IntoIterator<Item = &'a FaceRecord>,
    out: &mut W,
) -> Result<usize> {
    write_header(out, header)?;
    let mut n = 0;
    for r in records {
        write_row(out, r, None)?;
        n += 1;
    }
    Ok(n)
}

/// Buckets records by video. Accepts any input order; buffers everything and
/// returns groups sorted by `video_id`.
pub fn group_by_video(
    records: impl IntoIterator<Item = Result<FaceRecord>>,
) -> Result<Vec<VideoGroup>> {
    let mut buckets: BTreeMap<String, Vec<FaceRecord>> = BTreeMap::new();
    for r in records {
        let r = r?;
        buckets.entry(r.video_id.clone()).or_default().push(r);
    }
    buckets
        .into_iter()
        .map(|(id, records)| VideoGroup::new(id, records))
        .collect()
}

/// Streaming grouping for input already sorted by `video_id`. Holds one video
/// in memory; fails if a video's rows are not contiguous.
pub struct SortedGroups<I: Iterator> {
    inner: std::iter::Peekable<I>,
    last: Option<String>,
}

impl<I: Iterator<Item = Result<FaceRecord>>> SortedGroups<I> {
    pub fn new(records: I) -> Self {
        SortedGroups {
            inner: records.peekable(),
            last: None,
        }
    }
}

impl<I: Iterator<Item = Result<FaceRecord>>> Iterator for SortedGroups<I> {
    type Item = Result<VideoGroup>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        let video_id = first.video_id.clone();
        if let Some(last) = self.last.as_ref().filter(|last| **last >= video_id) {
            return Some(Err(Error::ForeignRecord {
                expected: last.clone(),
                id: first.id(),
            }));
        }
        let mut records = vec![first];
        loop {
            match self.inner.peek() {
                Some(Ok(r)) if r.video_id == video_id => {}
                _ => break,
            }
            if let Some(Ok(r)) = self.inner.next() {
                records.push(r);
            }
        }
        self.last = Some(video_id.clone());
        Some(VideoGroup::new(video_id, records))
    }
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;
    use crate::model::RecordId;

    fn rec(video: &str, frame: u64, face: u32, dim: usize) -> FaceRecord {
        FaceRecord {
            video_id: video.into(),
            frame_index: frame,
            face_index: face,
            bbox: BBox::new(1.5, 2.0, 30.25, 41.0).unwrap(),
            detector_confidence: 0.97,
            embedding: Some(Embedding::new(
                (0..dim).map(|i| (i as f64 + 0.1) / 7.0).collect(),
            )),
            score: Some(0.83),
            video_label: Some(Label::Fake),
        }
    }

    fn read_all(text: &str) -> Result<(ManifestHeader, Vec<FaceRecord>)> {
        let (h, rows) = read_manifest(Cursor::new(text.as_bytes()))?;
        Ok((h, rows.collect::<Result<Vec<_>>>()?))
    }

    #[test]
    fn reads_three_rows() {
        let text = "{\"version\":1,\"embedding_dim\":2}\n\
            {\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,10,10],\"conf\":0.9,\"embedding\":[1,0]}\n\
            {\"video_id\":\"a\",\"frame\":1,\"face\":0,\"bbox\":[0,0,10,10],\"conf\":0.9,\"score\":0.2}\n\
            \n\
            {\"video_id\":\"b\",\"frame\":0,\"face\":3,\"bbox\":[0,0,10,10],\"conf\":1,\"label\":0}\n";
        let (h, rows) = read_all(text).unwrap();
        assert_eq!(h, ManifestHeader::new(2));
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].score, Some(0.2));
        assert!(rows[1].embedding.is_none());
        assert_eq!(rows[2].video_label, Some(Label::Real));
        assert_eq!(rows[2].id(), RecordId::new("b", 0, 3));
    }

    #[test]
    fn short_embedding_is_dimension_mismatch() {
        let emb: Vec<String> = (0..511).map(|_| "0.1".to_string()).collect();
        let text = format!(
            "{{\"version\":1,\"embedding_dim\":512}}\n{{\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":0.5,\"embedding\":[{}]}}\n",
            emb.join(",")
        );
        let err = read_all(&text).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                line: 2,
                expected: 512,
                found: 511
            }
        ));
    }

    #[test]
    fn out_of_range_score_is_parse_error() {
        let text = "{\"version\":1,\"embedding_dim\":2}\n\
            {\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":0.5,\"score\":1.3}\n";
        assert!(matches!(read_all(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rejects_bad_rows_and_headers() {
        let header = "{\"version\":1,\"embedding_dim\":2}\n";
        for row in [
            "{\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[5,0,1,1],\"conf\":0.5}",
            "{\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":1.5}",
            "{\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":0.5,\"label\":2}",
            "{\"video_id\":\"a\",\"frame\":0,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":0.5,\"kept\":true}",
            "{\"video_id\":\"a\",\"frame\":-1,\"face\":0,\"bbox\":[0,0,1,1],\"conf\":0.5}",
            "not json",
        ] {
            let err = read_all(&format!("{header}{row}\n")).unwrap_err();
            assert!(matches!(err, Error::Parse { line: 2, .. }), "{row}: {err}");
        }
        assert!(matches!(read_all(""), Err(Error::Parse { line: 1, .. })));
        assert!(read_all("{\"version\":2,\"embedding_dim\":2}\n").is_err());
        assert!(read_all("{\"version\":1,\"embedding_dim\":0}\n").is_err());
    }

    #[test]
    fn write_empty_is_header_only() {
        let mut out = Vec::new();
        let n = write_manifest(ManifestHeader::new(512), [], &mut out).unwrap();
        assert_eq!(n, 0);
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"version\":1,\"embedding_dim\":512}\n"
        );
    }

    #[test]
    fn write_then_read_two_records() {
        let mut b = rec("v", 4, 1, 3);
        b.score = None;
        b.embedding = None;
        b.video_label = None;
        let records = vec![rec("v", 0, 0, 3), b];
        let mut out = Vec::new();
        assert_eq!(
            write_manifest(ManifestHeader::new(3), &records, &mut out).unwrap(),
            2
        );
        let text = String::from_utf8(out).unwrap();
        assert!(!text.lines().nth(2).unwrap().contains("score"));
        let (_, back) = read_all(&text).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn annotations_round_trip() {
        let r = rec("v", 0, 0, 2);
        let mut out = Vec::new();
        write_header(&mut out, ManifestHeader::new(2)).unwrap();
        write_row(
            &mut out,
            &r,
            Some(Annotation {
                component: 3,
                kept: false,
            }),
        )
        .unwrap();
        let rows: Vec<_> = ManifestReader::new(Cursor::new(out))
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(
            rows[0].annotation,
            Some(Annotation {
                component: 3,
                kept: false
            })
        );
        assert_eq!(rows[0].record, r);
    }

    #[test]
    fn groups_interleaved_videos() {
        let input = vec![
            rec("b", 1, 0, 1),
            rec("a", 0, 0, 1),
            rec("b", 0, 0, 1),
            rec("a", 2, 1, 1),
        ];
        let groups = group_by_video(input.into_iter().map(Ok)).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].video_id(), "a");
        assert_eq!(groups[0].len(), 2);
        assert_eq!(groups[1].records()[0].frame_index, 0);
    }

    #[test]
    fn grouping_counts_frames() {
        let input: Vec<_> = [(0, 0), (0, 1), (1, 0), (3, 0), (3, 1), (3, 2)]
            .iter()
            .map(|&(f, i)| Ok(rec("v", f, i, 1)))
            .collect();
        assert_eq!(group_by_video(input).unwrap()[0].n_f(), 3);
    }

    #[test]
    fn grouping_rejects_duplicates() {
        let input = vec![Ok(rec("v", 1, 0, 1)), Ok(rec("v", 1, 0, 1))];
        assert!(matches!(
            group_by_video(input),
            Err(Error::DuplicateRecord(_))
        ));
    }

    #[test]
    fn sorted_groups_stream() {
        let input = vec![rec("a", 1, 0, 1), rec("a", 0, 0, 1), rec("b", 0, 0, 1)];
        let groups: Vec<_> = SortedGroups::new(input.into_iter().map(Ok))
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].n_f(), 2);

        let unsorted = vec![rec("b", 0, 0, 1), rec("a", 0, 0, 1)];
        let res: Result<Vec<_>> = SortedGroups::new(unsorted.into_iter().map(Ok)).collect();
        assert!(res.is_err());
    }

    fn arb_record() -> impl Strategy<Value = FaceRecord> {
        (
            "[a-c]",
            0u64..50,
            0u32..4,
            (-1e3f64..1e3, -1e3f64..1e3, 0.001f64..500.0, 0.001f64..500.0),
            0.0f64..=1.0,
            prop::option::of(prop::collection::vec(
                any::<f64>().prop_filter("finite", |v| v.is_finite()),
                4,
            )),
            prop::option::of(0.0f64..=1.0),
            prop::option::of(prop::bool::ANY),
        )
            .prop_map(
                |(video_id, frame, face, (x, y, w, h), conf, emb, score, fake)| FaceRecord {
                    video_id,
                    frame_index: frame,
                    face_index: face,
                    bbox: BBox {
                        x0: x,
                        y0: y,
                        x1: x + w,
                        y1: y + h,
                    },
                    detector_confidence: conf,
                    embedding: emb.map(Embedding::new),
                    score,
                    video_label: fake.map(|f| if f { Label::Fake } else { Label::Real }),
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(records in prop::collection::vec(arb_record(), 0..20)) {
            let records: Vec<_> = records.into_iter().filter(|r| r.bbox.validate().is_ok()).collect();
            let mut out = Vec::new();
            write_manifest(ManifestHeader::new(4), &records, &mut out).unwrap();
            let (_, back) = read_all(std::str::from_utf8(&out).unwrap()).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn grouping_ignores_order(records in prop::collection::vec(arb_record(), 0..30), seed in any::<u64>()) {
            let mut seen = std::collections::HashSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert(r.id())).collect();
            let mut shuffled = records.clone();
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let a = group_by_video(records.into_iter().map(Ok)).unwrap();
            let b = group_by_video(shuffled.into_iter().map(Ok)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

//! Consecutive equal chunks and the per-chunk scalogram tensor sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::records::{AlarmType, ChannelKind, Record};
use crate::scalogram::{Scalogram, ScalogramBuilder};
use crate::{Error, Result};

/// Ordered per-chunk `C × rows × cols` tensors for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSequence {
    pub record_id: String,
    pub alarm_type: AlarmType,
    pub label: bool,
    pub channels: Vec<ChannelKind>,
    pub rows: usize,
    pub cols: usize,
    /// One flat `channels × rows × cols` tensor per chunk, channel-major.
    pub tensors: Vec<Vec<f64>>,
}

impl ChunkSequence {
    pub fn n_chunks(&self) -> usize {
        self.tensors.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn tensor_len(&self) -> usize {
        self.channels.len() * self.rows * self.cols
    }

    /// `rows × cols` plane of channel `c` in chunk `i`.
    pub fn plane(&self, chunk: usize, c: usize) -> &[f64] {
        let plane = self.rows * self.cols;
        &self.tensors[chunk][c * plane..(c + 1) * plane]
    }

    /// Sequence restricted to channel positions `keep` (in that order).
    pub fn select_channels(&self, keep: &[usize]) -> ChunkSequence {
        let plane = self.rows * self.cols;
        ChunkSequence {
            channels: keep.iter().map(|&c| self.channels[c]).collect(),
            tensors: self
                .tensors
                .iter()
                .map(|t| {
                    keep.iter()
                        .flat_map(|&c| t[c * plane..(c + 1) * plane].iter().copied())
                        .collect()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn with_label(&self, label: bool) -> ChunkSequence {
        ChunkSequence {
            label,
            ..self.clone()
        }
    }
}

/// Splits into `n_chunks` consecutive non-overlapping fragments.
pub fn split_chunks(record: &Record, n_chunks: usize) -> Result<Vec<Record>> {
    let n = record.len();
    if n_chunks == 0 || !n.is_multiple_of(n_chunks) {
        return Err(Error::NotDivisible {
            n,
            chunks: n_chunks,
        });
    }
    let len = n / n_chunks;
    Ok((0..n_chunks)
        .map(|i| record.slice(i * len, (i + 1) * len))
        .collect())
}

/// Scalogram for every (chunk, channel) in subset order.
pub fn build_sequence(
    record: &Record,
    n_chunks: usize,
    channels: &[ChannelKind],
    builder: &ScalogramBuilder,
) -> Result<ChunkSequence> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("empty channel subset".into()));
    }
    let rows: Vec<Vec<f64>> = channels
        .iter()
        .map(|&c| {
            record
                .channel_f64(c)
                .ok_or_else(|| Error::MissingChannel(c.to_string()))
        })
        .collect::<Result<_>>()?;
    let n = record.len();
    if n_chunks == 0 || !n.is_multiple_of(n_chunks) {
        return Err(Error::NotDivisible {
            n,
            chunks: n_chunks,
        });
    }
    let len = n / n_chunks;
    let jobs: Vec<(usize, usize)> = (0..n_chunks)
        .flat_map(|i| (0..channels.len()).map(move |c| (i, c)))
        .collect();
    let planes: Vec<Scalogram> = jobs
        .par_iter()
        .map(|&(i, c)| {
            let mut s = builder.build(&rows[c][i * len..(i + 1) * len])?;
            s.chunk = i;
            s.channel = Some(channels[c]);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut tensors = vec![Vec::with_capacity(channels.len() * builder.rows() * builder.cols()); n_chunks];
    for ((i, _), s) in jobs.iter().zip(planes) {
        tensors[*i].extend_from_slice(&s.values);
    }
    Ok(ChunkSequence {
        record_id: record.record_id().to_owned(),
        alarm_type: record.alarm_type(),
        label: record.label(),
        channels: channels.to_vec(),
        rows: builder.rows(),
        cols: builder.cols(),
        tensors,
    })
}

/// Scalograms of one chunk, one per channel, in subset order.
pub fn chunk_scalograms(
    fragment: &Record,
    chunk: usize,
    channels: &[ChannelKind],
    builder: &ScalogramBuilder,
) -> Result<Vec<Scalogram>> {
    channels
        .iter()
        .map(|&c| {
            let signal = fragment
                .channel_f64(c)
                .ok_or_else(|| Error::MissingChannel(c.to_string()))?;
            let mut s = builder.build(&signal)?;
            s.chunk = chunk;
            s.channel = Some(c);
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{synth_dataset, SynthSpec};

    fn sample_record() -> Record {
        synth_dataset(&SynthSpec::new(1, 1.0), 3).unwrap().remove(0)
    }

    #[test]
    fn six_chunks_of_2500() {
        let r = sample_record();
        let parts = split_chunks(&r, 6).unwrap();
        assert_eq!(parts.len(), 6);
        assert!(parts.iter().all(|p| p.len() == 2500));
        for c in 0..4 {
            let joined: Vec<f32> = parts.iter().flat_map(|p| p.samples()[c].clone()).collect();
            assert_eq!(joined, r.samples()[c]);
        }
        assert_eq!(split_chunks(&r, 1).unwrap(), vec![r.clone()]);
        assert_eq!(split_chunks(&r, 4).map(|p| p.len()).ok(), Some(4));
        let err = split_chunks(&r, 7).expect_err("7 does not divide 15000");
        assert_eq!(err.to_string(), "15000 not divisible by 7");
        assert!(split_chunks(&r, 0).is_err());
    }

    #[test]
    fn sequence_shapes() {
        let r = sample_record();
        let b = ScalogramBuilder::default();
        let seq = build_sequence(&r, 6, &ChannelKind::CANONICAL, &b).unwrap();
        assert_eq!(seq.n_chunks(), 6);
        assert!(seq.tensors.iter().all(|t| t.len() == 4 * 64 * 64));
        assert!(seq.tensors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));

        let ecg = build_sequence(&r, 6, &[ChannelKind::EcgII], &b).unwrap();
        assert!(ecg.tensors.iter().all(|t| t.len() == 64 * 64));
        assert_eq!(ecg, seq.select_channels(&[0]));
        for i in 0..6 {
            assert_eq!(ecg.plane(i, 0), seq.plane(i, 0));
        }

        let whole = build_sequence(&r, 1, &ChannelKind::CANONICAL, &b).unwrap();
        assert_eq!(whole.n_chunks(), 1);
        assert_eq!(whole.tensors[0].len(), 4 * 64 * 64);
    }

    #[test]
    fn compositional_and_chunk_independent() {
        let r = sample_record();
        let b = ScalogramBuilder::default();
        let seq = build_sequence(&r, 6, &ChannelKind::CANONICAL, &b).unwrap();
        let parts = split_chunks(&r, 6).unwrap();
        for (i, p) in parts.iter().enumerate() {
            let planes = chunk_scalograms(p, i, &ChannelKind::CANONICAL, &b).unwrap();
            let flat: Vec<f64> = planes.iter().flat_map(|s| s.values.clone()).collect();
            assert_eq!(flat, seq.tensors[i]);
        }

        // Perturb only chunk 2.
        let mut samples = r.samples().to_vec();
        for row in &mut samples {
            for v in &mut row[5000..7500] {
                *v = -*v * 1.5 + 0.1;
            }
        }
        let r2 = Record::new(r.record_id(), r.alarm_type(), r.label(), r.fs(), r.channels().to_vec(), samples).unwrap();
        let seq2 = build_sequence(&r2, 6, &ChannelKind::CANONICAL, &b).unwrap();
        for i in 0..6 {
            if i == 2 {
                assert_ne!(seq.tensors[i], seq2.tensors[i]);
            } else {
                assert_eq!(seq.tensors[i], seq2.tensors[i]);
            }
        }
    }

    #[test]
    fn missing_channel_is_an_error() {
        let r = sample_record();
        let partial = Record::new(
            "p",
            r.alarm_type(),
            true,
            250.0,
            vec![ChannelKind::EcgII],
            vec![r.samples()[0].clone()],
        )
        .unwrap();
        let err = build_sequence(&partial, 6, &[ChannelKind::Pleth], &ScalogramBuilder::default());
        assert!(matches!(err, Err(Error::MissingChannel(_))));
        assert!(build_sequence(&partial, 6, &[], &ScalogramBuilder::default()).is_err());
    }
}

use super::examples::Example;
use super::vocab::PAD;

/// Padded, masked group of examples. Rows are examples; `source[r][t]` is the
/// t-th source id of row r or PAD past its length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Vec<Vec<u32>>,
    pub target: Vec<Vec<u32>>,
    pub source_mask: Vec<Vec<bool>>,
    pub target_mask: Vec<Vec<bool>>,
    pub source_lens: Vec<usize>,
    pub target_lens: Vec<usize>,
}

fn pad(rows: &[&[u32]]) -> (Vec<Vec<u32>>, Vec<Vec<bool>>, Vec<usize>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(rows.len());
    let mut mask = Vec::with_capacity(rows.len());
    for r in rows {
        let mut row = r.to_vec();
        row.resize(width, PAD);
        ids.push(row);
        mask.push((0..width).map(|t| t < r.len()).collect());
    }
    (ids, mask, rows.iter().map(|r| r.len()).collect())
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Batch {
        let src: Vec<&[u32]> = examples.iter().map(|e| e.source_ids.as_slice()).collect();
        let tgt: Vec<&[u32]> = examples.iter().map(|e| e.target_ids.as_slice()).collect();
        let (source, source_mask, source_lens) = pad(&src);
        let (target, target_mask, target_lens) = pad(&tgt);
        Batch {
            source,
            target,
            source_mask,
            target_mask,
            source_lens,
            target_lens,
        }
    }

    pub fn size(&self) -> usize {
        self.source.len()
    }

    pub fn source_width(&self) -> usize {
        self.source.first().map_or(0, Vec::len)
    }

    pub fn target_width(&self) -> usize {
        self.target.first().map_or(0, Vec::len)
    }

    pub fn source_column(&self, t: usize) -> Vec<u32> {
        self.source.iter().map(|r| r[t]).collect()
    }

    pub fn target_column(&self, t: usize) -> Vec<u32> {
        self.target.iter().map(|r| r[t]).collect()
    }

    pub fn source_mask_column(&self, t: usize) -> Vec<bool> {
        self.source_mask.iter().map(|r| r[t]).collect()
    }

    pub fn target_mask_column(&self, t: usize) -> Vec<bool> {
        self.target_mask.iter().map(|r| r[t]).collect()
    }

    /// Row `r` without padding, as (source, target).
    pub fn unpadded(&self, r: usize) -> (&[u32], &[u32]) {
        (&self.source[r][..self.source_lens[r]], &self.target[r][..self.target_lens[r]])
    }
}

/// Consecutive batches of `batch_size` in input order; the last may be short.
pub fn batch_pad(examples: &[Example], batch_size: usize) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    examples
        .chunks(batch_size)
        .map(|chunk| Batch::new(&chunk.iter().collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::Meta;
    use crate::data::entities::RecoveryMap;
    use proptest::prelude::*;

    fn ex(src: Vec<u32>, tgt: Vec<u32>) -> Example {
        Example {
            source_ids: src,
            target_ids: tgt,
            source_tokens: vec![],
            target_tokens: vec![],
            meta: Meta::None,
            entities: RecoveryMap::new(),
        }
    }

    #[test]
    fn pads_to_longest() {
        let b = &batch_pad(&[ex(vec![5, 6, 7], vec![2, 3]), ex(vec![5, 6, 7, 8, 9], vec![2, 4, 3])], 8)[0];
        assert_eq!(b.source_width(), 5);
        let sums: Vec<usize> = b.source_mask.iter().map(|r| r.iter().filter(|&&m| m).count()).collect();
        assert_eq!(sums, vec![3, 5]);
        assert_eq!(b.source[0], vec![5, 6, 7, PAD, PAD]);
    }

    #[test]
    fn batch_sizes() {
        let exs: Vec<Example> = (0..10).map(|i| ex(vec![4 + i], vec![2, 3])).collect();
        let sizes: Vec<usize> = batch_pad(&exs, 4).iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    proptest! {
        #[test]
        fn mask_matches_non_pad_and_rows_round_trip(
            rows in proptest::collection::vec(
                (proptest::collection::vec(4u32..50, 1..9), proptest::collection::vec(4u32..50, 0..7)),
                1..12),
            bs in 1usize..6,
        ) {
            let exs: Vec<Example> = rows
                .iter()
                .map(|(s, t)| {
                    let mut tgt = vec![2];
                    tgt.extend(t);
                    tgt.push(3);
                    ex(s.clone(), tgt)
                })
                .collect();
            let batches = batch_pad(&exs, bs);
            let mut rebuilt = Vec::new();
            for b in &batches {
                for r in 0..b.size() {
                    for t in 0..b.source_width() {
                        prop_assert_eq!(b.source_mask[r][t], b.source[r][t] != PAD);
                    }
                    for t in 0..b.target_width() {
                        prop_assert_eq!(b.target_mask[r][t], b.target[r][t] != PAD);
                    }
                    let (s, t) = b.unpadded(r);
                    rebuilt.push((s.to_vec(), t.to_vec()));
                }
                let longest = (0..b.size()).map(|r| b.source_lens[r]).max().unwrap();
                prop_assert_eq!(b.source_width(), longest);
            }
            let expect: Vec<_> = exs.iter().map(|e| (e.source_ids.clone(), e.target_ids.clone())).collect();
            prop_assert_eq!(rebuilt, expect);
        }
    }
}

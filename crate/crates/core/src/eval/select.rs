use crate::data::{SampleRecord, N_STYLES};

/// Inputs chosen for explanation, with notes on slots that could not be filled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSelection {
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// For each style, pick `per_slot` records for each of four slots: correctly
/// classified near 0.9 and near 0.1, and misclassified near 0.9 and near 0.1.
///
/// `candidates` pairs a dataset index with its record; `probs` holds the
/// classifier output for each candidate.
pub fn select_eval_set(candidates: &[(usize, &SampleRecord)], probs: &[f64], per_slot: usize) -> EvalSelection {
    let mut sel = EvalSelection::default();
    // (label, anchor): predicted positive slots anchor at 0.9
    let slots = [
        ("correct", 1u8, 0.9),
        ("correct", 0u8, 0.1),
        ("misclassified", 0u8, 0.9),
        ("misclassified", 1u8, 0.1),
    ];
    for style in 0..N_STYLES as u8 {
        for &(kind, label, anchor) in &slots {
            let mut pool: Vec<(f64, usize)> = candidates
                .iter()
                .zip(probs)
                .filter(|((_, r), &p)| r.factors.style_id == style && r.label == label && (p >= 0.5) == (anchor > 0.5))
                .map(|((i, _), &p)| ((p - anchor).abs(), *i))
                .collect();
            pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if pool.len() < per_slot {
                sel.warnings.push(format!(
                    "style {style}: only {} of {per_slot} {kind} records near {anchor}",
                    pool.len()
                ));
            }
            sel.indices.extend(pool.iter().take(per_slot).map(|&(_, i)| i));
        }
    }
    sel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorVector;

    fn rec(style: u8, label: u8) -> SampleRecord {
        SampleRecord {
            image: vec![],
            factors: FactorVector {
                shape_id: if label == 1 { 0 } else { 8 },
                style_id: style,
                rotation: 0.0,
                scale: 1.0,
                dx: 0.0,
                dy: 0.0,
            },
            label,
        }
    }

    #[test]
    fn picks_four_slots_per_style() {
        let recs = [rec(0, 1), rec(0, 1), rec(0, 0), rec(0, 0), rec(0, 1), rec(0, 0)];
        let probs = [0.95, 0.88, 0.3, 0.12, 0.2, 0.7];
        let cands: Vec<(usize, &SampleRecord)> = recs.iter().enumerate().map(|(i, r)| (i + 10, r)).collect();
        let sel = select_eval_set(&cands, &probs, 1);
        assert_eq!(sel.indices, vec![11, 13, 15, 14]);
        // the other seven styles have nothing
        assert_eq!(sel.warnings.len(), 28);
    }

    #[test]
    fn warns_when_misclassifications_are_missing() {
        let recs = [rec(2, 1), rec(2, 0)];
        let cands: Vec<(usize, &SampleRecord)> = recs.iter().enumerate().collect();
        let sel = select_eval_set(&cands, &[0.9, 0.1], 1);
        assert_eq!(sel.indices, vec![0, 1]);
        assert!(sel.warnings.iter().any(|w| w.starts_with("style 2: only 0 of 1 misclassified")));
    }
}

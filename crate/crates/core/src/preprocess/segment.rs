use rand::Rng;

use super::PreprocessError;

/// Splits newline-terminated text into header lines (through the first `K:`
/// line) and body lines. Each returned line keeps its trailing newline.
pub fn split_header_body(text: &str) -> (Vec<&str>, Vec<&str>) {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    match lines.iter().position(|l| l.starts_with("K:")) {
        Some(k) => (lines[..=k].to_vec(), lines[k + 1..].to_vec()),
        None => (lines, Vec::new()),
    }
}

/// Picks a contiguous window of body lines whose cost plus `header_cost` fits
/// `budget`. The start is uniform over the starts whose window is not cut
/// short by the end of the body (the last such start takes the whole suffix).
/// Returns the half-open line range.
pub fn make_line_segment<R: Rng + ?Sized>(
    header_cost: usize,
    line_costs: &[usize],
    budget: usize,
    rng: &mut R,
) -> Result<(usize, usize), PreprocessError> {
    let n = line_costs.len();
    if n == 0 {
        return if header_cost <= budget {
            Ok((0, 0))
        } else {
            Err(PreprocessError::SegmentTooSmall {
                budget,
                needed: header_cost,
            })
        };
    }
    let longest = line_costs.iter().copied().max().unwrap_or(0);
    if header_cost + longest > budget {
        return Err(PreprocessError::SegmentTooSmall {
            budget,
            needed: header_cost + longest,
        });
    }
    let room = budget - header_cost;
    let mut suffix = 0usize;
    let mut last_start = n;
    for s in (0..n).rev() {
        suffix += line_costs[s];
        if suffix > room {
            break;
        }
        last_start = s;
    }
    let start = rng.gen_range(0..=last_start.min(n - 1));
    let mut end = start;
    let mut used = 0;
    while end < n && used + line_costs[end] <= room {
        used += line_costs[end];
        end += 1;
    }
    Ok((start, end))
}

/// A training window and where it sits in its piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSegment {
    pub text: String,
    pub starts_piece: bool,
    pub ends_piece: bool,
}

/// Header plus a random line-aligned body window of at most `max_chars` bytes.
/// Text that already fits is returned whole.
pub fn make_segment<R: Rng + ?Sized>(
    text: &str,
    max_chars: usize,
    rng: &mut R,
) -> Result<TrainingSegment, PreprocessError> {
    if text.len() <= max_chars {
        return Ok(TrainingSegment {
            text: text.to_string(),
            starts_piece: true,
            ends_piece: true,
        });
    }
    let (header, body) = split_header_body(text);
    let header_cost: usize = header.iter().map(|l| l.len()).sum();
    let costs: Vec<usize> = body.iter().map(|l| l.len()).collect();
    let (start, end) = make_line_segment(header_cost, &costs, max_chars, rng)?;
    let mut out: String = header.concat();
    out.push_str(&body[start..end].concat());
    Ok(TrainingSegment {
        text: out,
        starts_piece: start == 0,
        ends_piece: end == body.len(),
    })
}

pub fn make_training_segment<R: Rng + ?Sized>(
    text: &str,
    max_chars: usize,
    rng: &mut R,
) -> Result<String, PreprocessError> {
    make_segment(text, max_chars, rng).map(|s| s.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn piece(lines: usize) -> String {
        let mut t = String::from("X:1\nK:C\n");
        for k in 1..=lines {
            t.push_str(&format!("[r:{:03}/{:03}][V:1]CDEF|\n", k, lines - k));
        }
        t
    }

    #[test]
    fn short_text_unchanged() {
        let t = piece(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(make_training_segment(&t, 10_000, &mut rng).unwrap(), t);
    }

    #[test]
    fn starts_uniform_over_full_windows() {
        let t = piece(100);
        let header = "X:1\nK:C\n".len();
        let line = "[r:001/099][V:1]CDEF|\n".len();
        let budget = header + 40 * line;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0usize; 101];
        let draws = 61 * 400;
        for _ in 0..draws {
            let seg = make_training_segment(&t, budget, &mut rng).unwrap();
            assert!(seg.len() <= budget);
            let (_, body) = split_header_body(&seg);
            assert_eq!(body.len(), 40);
            assert!(body.iter().all(|l| l.ends_with("|\n")));
            let first: usize = body[0][3..6].parse().unwrap();
            counts[first] += 1;
        }
        assert!(counts[1..=61].iter().all(|&c| c > 0));
        assert!(counts[62..].iter().all(|&c| c == 0));
        let expected = draws as f64 / 61.0;
        let chi2: f64 = counts[1..=61]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 60 degrees of freedom, p = 0.001.
        assert!(chi2 < 99.607, "chi2 = {chi2}");
    }

    #[test]
    fn labels_keep_absolute_indices() {
        let t = piece(30);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seg = make_training_segment(&t, 200, &mut rng).unwrap();
        for l in split_header_body(&seg).1 {
            assert!(t.contains(l));
        }
    }

    #[test]
    fn too_small_budget() {
        let t = piece(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_training_segment(&t, 12, &mut rng),
            Err(PreprocessError::SegmentTooSmall { .. })
        ));
    }

    #[test]
    fn segment_flags_follow_the_window() {
        let t = piece(30);
        let line = "[r:001/029][V:1]CDEF|\n".len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut first, mut last) = (false, false);
        for _ in 0..400 {
            let seg = make_segment(&t, 8 + 10 * line, &mut rng).unwrap();
            let body = split_header_body(&seg.text).1;
            assert_eq!(seg.starts_piece, body[0].starts_with("[r:001/"));
            assert_eq!(seg.ends_piece, body[body.len() - 1].starts_with("[r:030/"));
            first |= seg.starts_piece;
            last |= seg.ends_piece;
        }
        assert!(first && last);
        let whole = make_segment(&t, 10_000, &mut rng).unwrap();
        assert!(whole.starts_piece && whole.ends_piece);
    }
}

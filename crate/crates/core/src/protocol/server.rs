use std::io::{BufRead, Write};

use super::wire::{parse_line, to_line, DetectorDescriptor, Message, ScoreValue, WireItem, WireScore};
use super::PROTOCOL_VERSION;

/// Detector-side scoring callback: one score per item, in item order.
pub trait BatchScorer {
    fn score(&mut self, items: &[WireItem], preprocessed: bool) -> Result<Vec<f64>, String>;
}

impl<F> BatchScorer for F
where
    F: FnMut(&[WireItem], bool) -> Result<Vec<f64>, String>,
{
    fn score(&mut self, items: &[WireItem], preprocessed: bool) -> Result<Vec<f64>, String> {
        self(items, preprocessed)
    }
}

/// Detector-side request loop. Returns after `shutdown` or end of input.
/// Malformed or failing requests are answered with an `error` line and the
/// loop keeps serving.
pub fn serve<R: BufRead, W: Write>(
    descriptor: &DetectorDescriptor,
    scorer: &mut dyn BatchScorer,
    input: R,
    output: W,
) -> std::io::Result<()> {
    serve_with_hook(descriptor, scorer, input, output, &mut |_| {})
}

/// [`serve`], with `hook` applied to each reply just before it is written.
/// Used for fault injection.
pub fn serve_with_hook<R: BufRead, W: Write>(
    descriptor: &DetectorDescriptor,
    scorer: &mut dyn BatchScorer,
    input: R,
    mut output: W,
    hook: &mut dyn FnMut(&mut Message),
) -> std::io::Result<()> {
    let mut greeted = false;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = match parse_line(&line) {
            Err(e) => Message::Error {
                message: format!("malformed request: {e}"),
            },
            Ok(Message::Hello { protocol_version }) if protocol_version != PROTOCOL_VERSION => Message::Error {
                message: format!("unsupported protocol version {protocol_version}"),
            },
            Ok(Message::Hello { .. }) => {
                greeted = true;
                Message::HelloAck(descriptor.clone())
            }
            Ok(Message::Score { batch_id, .. }) if !greeted => Message::Error {
                message: format!("batch {batch_id}: hello required before score"),
            },
            Ok(Message::Score {
                batch_id,
                items,
                preprocessed,
            }) => match scorer.score(&items, preprocessed) {
                Ok(scores) if scores.len() == items.len() => Message::Scores {
                    batch_id,
                    scores: items
                        .into_iter()
                        .zip(scores)
                        .map(|(item, score)| WireScore {
                            id: item.id,
                            score: ScoreValue(score),
                        })
                        .collect(),
                },
                Ok(scores) => Message::Error {
                    message: format!("batch {batch_id}: scorer returned {} scores for {} items", scores.len(), items.len()),
                },
                Err(e) => Message::Error {
                    message: format!("batch {batch_id}: {e}"),
                },
            },
            Ok(Message::Shutdown) => {
                output.flush()?;
                return Ok(());
            }
            Ok(other) => Message::Error {
                message: format!("unexpected message type `{}`", other.type_name()),
            },
        };
        hook(&mut reply);
        output.write_all(to_line(&reply).as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

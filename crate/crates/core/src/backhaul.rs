//! Bulk-synchronous scalar exchange between BS agents, with a message log
//! and the closed-form signaling loads it is checked against.

use std::fmt;
use std::io::{self, Write};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    DualLambda,
    DualMu,
    LocalCopy,
    RankBit,
    GrPower,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::DualLambda => "dual-lambda",
            Tag::DualMu => "dual-mu",
            Tag::LocalCopy => "local-copy",
            Tag::RankBit => "rank-bit",
            Tag::GrPower => "gr-power",
        }
    }

    /// Tags of the iterative exchange (dual variables or local copies).
    pub fn is_iterative(self) -> bool {
        matches!(self, Tag::DualLambda | Tag::DualMu | Tag::LocalCopy)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalars sent from one BS to another. `payload` holds `(key, value)`
/// pairs; the key is an ICI pair index or a candidate index depending on the tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub tag: Tag,
    pub payload: Vec<(usize, f64)>,
}

impl Message {
    pub fn new(from: usize, to: usize, tag: Tag, payload: Vec<(usize, f64)>) -> Self {
        Self { from, to, tag, payload }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub tag: Tag,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLog {
    records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    /// Appends a record; rounds must not go backwards.
    pub fn push(&mut self, record: MessageRecord) -> Result<(), CoreError> {
        if let Some(last) = self.records.last() {
            if record.round < last.round {
                return Err(CoreError::State(format!(
                    "round {} logged after round {}",
                    record.round, last.round
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Every record of `other` shifted to start after this log's last round.
    pub fn append(&mut self, other: &MessageLog) {
        let base = self.records.last().map_or(0, |r| r.round + 1);
        self.records
            .extend(other.records.iter().map(|r| MessageRecord { round: r.round + base, ..*r }));
    }

    /// Total scalars logged in `round`.
    pub fn round_total(&self, round: usize) -> usize {
        self.records.iter().filter(|r| r.round == round).map(|r| r.count).sum()
    }

    /// Scalars with the given tag over the whole log.
    pub fn tag_total(&self, tag: Tag) -> usize {
        self.records.iter().filter(|r| r.tag == tag).map(|r| r.count).sum()
    }

    pub fn total(&self) -> usize {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Distinct rounds that carried at least one message, ascending.
    pub fn rounds(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.records.iter().map(|r| r.round).collect();
        v.dedup();
        v
    }

    /// CSV with columns `round,sender,receiver,tag,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "round,sender,receiver,tag,count")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.round, r.sender, r.receiver, r.tag, r.count)?;
        }
        Ok(())
    }
}

/// Synchronous message bus between `num_bs` agents.
#[derive(Debug, Clone)]
pub struct Backhaul {
    num_bs: usize,
    round: usize,
    log: MessageLog,
}

impl Backhaul {
    pub fn new(num_bs: usize) -> Self {
        Self {
            num_bs,
            round: 0,
            log: MessageLog::new(),
        }
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    /// Index the next round will get.
    pub fn next_round(&self) -> usize {
        self.round
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }

    /// Delivers every message in `plan` and returns the inbox of each BS,
    /// sorted by sender then tag. The whole plan is validated before anything
    /// is delivered; messages are logged in (sender, receiver, tag) order
    /// whatever order the plan lists them in.
    pub fn run_round(&mut self, mut plan: Vec<Message>) -> Result<Vec<Vec<Message>>, CoreError> {
        for m in &plan {
            if m.from >= self.num_bs || m.to >= self.num_bs {
                return Err(CoreError::Config(format!(
                    "message {} -> {} references a BS outside 0..{}",
                    m.from, m.to, self.num_bs
                )));
            }
            if m.from == m.to {
                return Err(CoreError::Config(format!("BS {} sends to itself", m.from)));
            }
        }
        plan.sort_by_key(|m| (m.from, m.to, m.tag));
        let round = self.round;
        self.round += 1;
        let mut inbox = vec![Vec::new(); self.num_bs];
        for m in plan {
            self.log.push(MessageRecord {
                round,
                sender: m.from,
                receiver: m.to,
                tag: m.tag,
                count: m.payload.len(),
            })?;
            inbox[m.to].push(m);
        }
        for msgs in &mut inbox {
            msgs.sort_by_key(|m| (m.from, m.tag));
        }
        Ok(inbox)
    }
}

/// Scalars needed to gather all channels centrally: `2AU(B−1)B`.
pub fn centralized_signaling_load(bs: u64, users: u64, antennas: u64) -> u64 {
    2 * antennas * users * bs.saturating_sub(1) * bs
}

/// Scalars exchanged per distributed iteration: `2B(B−1)(U/B)`.
pub fn periter_signaling_load(bs: u64, users: u64) -> Result<u64, CoreError> {
    if bs == 0 || users % bs != 0 {
        return Err(CoreError::Config(format!("{users} users cannot be split evenly over {bs} BSs")));
    }
    Ok(2 * bs * (bs - 1) * (users / bs))
}

/// Whether the scalars logged in `round` add up to `expected`.
pub fn verify_exchange_count(log: &MessageLog, round: usize, expected: usize) -> bool {
    log.round_total(round) == expected
}

/// Whether every replica agrees bit-for-bit with the first one.
pub fn replicas_identical(replicas: &[Vec<f64>]) -> bool {
    replicas
        .windows(2)
        .all(|w| w[0].len() == w[1].len() && w[0].iter().zip(&w[1]).all(|(a, b)| a.to_bits() == b.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_loads() {
        assert_eq!(centralized_signaling_load(2, 8, 8), 256);
        assert_eq!(centralized_signaling_load(3, 12, 12), 1728);
        assert_eq!(centralized_signaling_load(4, 16, 16), 6144);
        assert_eq!(centralized_signaling_load(1, 5, 7), 0);
        assert_eq!(periter_signaling_load(2, 8).unwrap(), 16);
        assert_eq!(periter_signaling_load(3, 12).unwrap(), 48);
        assert_eq!(periter_signaling_load(4, 16).unwrap(), 96);
        assert_eq!(periter_signaling_load(1, 9).unwrap(), 0);
        assert!(periter_signaling_load(3, 8).is_err());
    }

    #[test]
    fn empty_plan_logs_nothing() {
        let mut bus = Backhaul::new(3);
        let inbox = bus.run_round(Vec::new()).unwrap();
        assert!(inbox.iter().all(Vec::is_empty));
        assert_eq!(bus.log().total(), 0);
        assert_eq!(bus.next_round(), 1);
    }

    #[test]
    fn unknown_bs_is_rejected() {
        let mut bus = Backhaul::new(2);
        let plan = vec![Message::new(0, 2, Tag::DualMu, vec![(0, 1.0)])];
        assert!(matches!(bus.run_round(plan), Err(CoreError::Config(_))));
        assert_eq!(bus.log().total(), 0);
    }

    #[test]
    fn delivery_and_tampering() {
        let mut bus = Backhaul::new(2);
        let plan = vec![
            Message::new(1, 0, Tag::DualLambda, vec![(0, 0.5), (1, 0.25)]),
            Message::new(0, 1, Tag::DualMu, vec![(2, 1.5)]),
        ];
        let inbox = bus.run_round(plan).unwrap();
        assert_eq!(inbox[0][0].payload, vec![(0, 0.5), (1, 0.25)]);
        assert_eq!(inbox[1][0].tag, Tag::DualMu);
        assert!(verify_exchange_count(bus.log(), 0, 3));

        let mut log = bus.log().clone();
        log.records[0].count += 1;
        assert!(!verify_exchange_count(&log, 0, 3));
    }

    #[test]
    fn csv_and_append() {
        let mut a = MessageLog::new();
        a.push(MessageRecord { round: 0, sender: 0, receiver: 1, tag: Tag::RankBit, count: 1 }).unwrap();
        let mut b = MessageLog::new();
        b.push(MessageRecord { round: 0, sender: 1, receiver: 0, tag: Tag::GrPower, count: 4 }).unwrap();
        a.append(&b);
        assert_eq!(a.rounds(), vec![0, 1]);
        assert!(a.push(MessageRecord { round: 0, sender: 0, receiver: 1, tag: Tag::RankBit, count: 1 }).is_err());
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "round,sender,receiver,tag,count\n0,0,1,rank-bit,1\n1,1,0,gr-power,4\n");
    }

    #[test]
    fn replica_check_is_bitwise() {
        assert!(replicas_identical(&[vec![1.0, 2.0], vec![1.0, 2.0]]));
        assert!(!replicas_identical(&[vec![0.0], vec![-0.0]]));
    }
}

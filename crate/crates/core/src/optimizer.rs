//! The sequential loop: a Latin-hypercube ladder to seed the dataset, then
//! fit / acquire / ask / update until the budget runs out.
//!
//! A [`Session`] is a state machine driven one answer at a time, so the same
//! code serves batch runs against an oracle and an HTTP client answering at
//! human pace. Every random draw is keyed by `(seed, iteration)`, so replaying
//! the recorded answers rebuilds the session exactly.

use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_acquisition, AcquisitionConfig};
use crate::dataset::PreferenceDataset;
use crate::domain::{Domain, PreferenceOutcome, PreferenceRecord};
use crate::error::{Error, Result};
use crate::lhs::{initial_design_size, latin_hypercube};
use crate::likelihood::PreferenceModel;
use crate::oracles::ToleranceOracle;
use crate::rng::RandomStream;
use crate::vinfer::{fit, FitConfig, VariationalState};

// Substream ids; per-iteration streams add the iteration number.
const LADDER_STREAM: u64 = 1;
const FIT_STREAM: u64 = 1 << 32;
const ACQUIRE_STREAM: u64 = 2 << 32;
const RANDOM_STREAM: u64 = 3 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Preference,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preference" => Ok(Strategy::Preference),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Preference => "preference",
            Strategy::Random => "random",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initializing,
    Running,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionReason {
    Budget,
    UserStop,
}

/// What a provider says about `(incumbent, challenger)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Judgment {
    Outcome(PreferenceOutcome),
    /// Stop early; honoured only once the ladder is done.
    Stop,
}

/// Answers comparisons of the incumbent (first) against a challenger (second).
pub trait PreferenceProvider {
    fn judge(&mut self, incumbent: &[f64], challenger: &[f64]) -> Result<Judgment>;
}

impl PreferenceProvider for ToleranceOracle {
    fn judge(&mut self, incumbent: &[f64], challenger: &[f64]) -> Result<Judgment> {
        Ok(Judgment::Outcome(self.compare(incumbent, challenger)))
    }
}

impl<F> PreferenceProvider for F
where
    F: FnMut(&[f64], &[f64]) -> Result<Judgment>,
{
    fn judge(&mut self, incumbent: &[f64], challenger: &[f64]) -> Result<Judgment> {
        self(incumbent, challenger)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
}

/// Everything needed to recreate a session before any answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub domain: Domain,
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: OptimizerConfig,
}

/// One answered comparison as written to the transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// 1-based count of answered comparisons, ladder included.
    pub iteration: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub outcome: PreferenceOutcome,
    pub timestamp_ms: u64,
}

/// Marks how a session ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionEntry {
    pub finished: CompletionReason,
    pub iteration: usize,
    pub timestamp_ms: u64,
}

/// A transcript line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscriptLine {
    Answer(TranscriptEntry),
    Completion(CompletionEntry),
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One line of JSON per transcript entry.
pub fn write_transcript_line<W: Write>(mut out: W, line: &TranscriptLine) -> Result<()> {
    serde_json::to_writer(&mut out, line)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_transcript<R: BufRead>(input: R) -> Result<Vec<TranscriptLine>> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line)?);
    }
    Ok(lines)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub header: SessionHeader,
    model: PreferenceModel,
    ladder: Vec<Vec<f64>>,
    dataset: PreferenceDataset,
    incumbent: Vec<f64>,
    /// Loop comparisons answered (ladder excluded).
    iteration: usize,
    phase: Phase,
    completion: Option<CompletionReason>,
    vstate: Option<VariationalState>,
    pending: Option<Vec<f64>>,
    transcript: Vec<TranscriptLine>,
}

impl Session {
    pub fn new(header: SessionHeader) -> Result<Self> {
        let domain = &header.domain;
        let mut rng = RandomStream::substream(header.seed, LADDER_STREAM);
        let ladder = latin_hypercube(domain, initial_design_size(domain.dims()), &mut rng)?;
        let incumbent = ladder[0].clone();
        Ok(Session {
            model: PreferenceModel::for_domain(domain),
            ladder,
            dataset: PreferenceDataset::new(),
            incumbent,
            iteration: 0,
            phase: Phase::Initializing,
            completion: None,
            vstate: None,
            pending: None,
            transcript: Vec::new(),
            header,
        })
    }

    /// Rebuild a session by re-answering every recorded comparison. The
    /// recomputed queries must match the recorded ones bit for bit.
    pub fn replay(header: SessionHeader, lines: &[TranscriptLine]) -> Result<Self> {
        let mut s = Session::new(header)?;
        for line in lines {
            match line {
                TranscriptLine::Answer(e) => {
                    let (x1, x2) = s.pending_pair()?.ok_or_else(|| {
                        Error::Session(format!("transcript entry {} after the session finished", e.iteration))
                    })?;
                    if x1 != e.x1 || x2 != e.x2 || e.iteration != s.answered() + 1 {
                        return Err(Error::Session(format!(
                            "transcript entry {} does not match the replayed query",
                            e.iteration
                        )));
                    }
                    s.answer_at(e.outcome, e.timestamp_ms)?;
                }
                TranscriptLine::Completion(c) => {
                    if c.finished == CompletionReason::UserStop {
                        s.finish_at(c.timestamp_ms)?;
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn domain(&self) -> &Domain {
        &self.header.domain
    }

    pub fn strategy(&self) -> Strategy {
        self.header.strategy
    }

    pub fn model(&self) -> &PreferenceModel {
        &self.model
    }

    pub fn dataset(&self) -> &PreferenceDataset {
        &self.dataset
    }

    pub fn incumbent(&self) -> &[f64] {
        &self.incumbent
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn budget(&self) -> usize {
        self.header.budget
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn completion(&self) -> Option<CompletionReason> {
        self.completion
    }

    pub fn vstate(&self) -> Option<&VariationalState> {
        self.vstate.as_ref()
    }

    pub fn ladder(&self) -> &[Vec<f64>] {
        &self.ladder
    }

    pub fn transcript(&self) -> &[TranscriptLine] {
        &self.transcript
    }

    /// Answered comparisons, ladder included.
    pub fn answered(&self) -> usize {
        self.dataset.num_records()
    }

    /// Incumbent after each answered comparison.
    pub fn incumbent_history(&self) -> Vec<Vec<f64>> {
        self.dataset
            .records()
            .iter()
            .map(|r| match r.outcome {
                PreferenceOutcome::FirstLess => r.second.clone(),
                _ => r.first.clone(),
            })
            .collect()
    }

    /// The comparison awaiting an answer, computing it if needed. In the
    /// running phase of a preference session this refits the model and
    /// maximizes the acquisition; on error the session is left unchanged.
    pub fn pending_pair(&mut self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if self.phase == Phase::Finished {
            return Ok(None);
        }
        if self.pending.is_none() {
            let next = match self.phase {
                Phase::Initializing => self.ladder[self.dataset.num_records() + 1].clone(),
                _ => self.propose()?,
            };
            self.pending = Some(next);
        }
        Ok(self.pending.clone().map(|c| (self.incumbent.clone(), c)))
    }

    /// The pending pair if it has already been computed.
    pub fn peek_pair(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.pending.clone().map(|c| (self.incumbent.clone(), c))
    }

    fn propose(&mut self) -> Result<Vec<f64>> {
        let i = self.iteration as u64;
        let domain = &self.header.domain;
        match self.header.strategy {
            Strategy::Random => {
                let mut rng = RandomStream::substream(self.header.seed, RANDOM_STREAM + i);
                Ok((0..domain.dims())
                    .map(|d| rng.uniform_in(domain.lower()[d], domain.upper()[d]))
                    .collect())
            }
            Strategy::Preference => {
                let cfg = &self.header.config;
                let fit_cfg = FitConfig {
                    seed: RandomStream::substream(self.header.seed, FIT_STREAM + i).next_u64(),
                    ..cfg.fit.clone()
                };
                let report = fit(&self.dataset, &self.model, &fit_cfg, self.vstate.as_ref())?;
                let best = self
                    .dataset
                    .index_of(&self.incumbent)
                    .ok_or_else(|| Error::Session("incumbent missing from dataset".into()))?;
                let mut rng = RandomStream::substream(self.header.seed, ACQUIRE_STREAM + i);
                let x = maximize_acquisition(domain, &self.dataset, &self.model, &report.state, best, &cfg.acquisition, &mut rng)?;
                self.vstate = Some(report.state);
                Ok(x)
            }
        }
    }

    /// Record the answer to the pending pair.
    pub fn answer(&mut self, outcome: PreferenceOutcome) -> Result<()> {
        self.answer_at(outcome, now_ms())
    }

    fn answer_at(&mut self, outcome: PreferenceOutcome, timestamp_ms: u64) -> Result<()> {
        let challenger = self
            .pending
            .take()
            .ok_or_else(|| Error::Session("no pending comparison to answer".into()))?;
        let record = PreferenceRecord::new(self.incumbent.clone(), challenger.clone(), outcome);
        if let Err(e) = self.dataset.push(&self.header.domain, record) {
            self.pending = Some(challenger);
            return Err(e);
        }
        self.transcript.push(TranscriptLine::Answer(TranscriptEntry {
            iteration: self.answered(),
            x1: self.incumbent.clone(),
            x2: challenger.clone(),
            outcome,
            timestamp_ms,
        }));
        if outcome == PreferenceOutcome::FirstLess {
            self.incumbent = challenger;
        }
        match self.phase {
            Phase::Initializing => {
                if self.dataset.num_records() + 1 == self.ladder.len() {
                    self.phase = Phase::Running;
                }
            }
            _ => self.iteration += 1,
        }
        if self.phase == Phase::Running && self.iteration >= self.header.budget {
            self.complete(CompletionReason::Budget, timestamp_ms);
        }
        Ok(())
    }

    fn complete(&mut self, reason: CompletionReason, timestamp_ms: u64) {
        self.phase = Phase::Finished;
        self.completion = Some(reason);
        self.pending = None;
        self.transcript.push(TranscriptLine::Completion(CompletionEntry {
            finished: reason,
            iteration: self.iteration,
            timestamp_ms,
        }));
    }

    /// Stop early. Rejected during the ladder; a no-op once finished.
    pub fn finish(&mut self) -> Result<()> {
        self.finish_at(now_ms())
    }

    fn finish_at(&mut self, timestamp_ms: u64) -> Result<()> {
        match self.phase {
            Phase::Initializing => Err(Error::Session("cannot finish before the initial comparisons are done".into())),
            Phase::Finished => Ok(()),
            Phase::Running => {
                self.complete(CompletionReason::UserStop, timestamp_ms);
                Ok(())
            }
        }
    }

    /// Ask, answer and update once.
    pub fn step<P: PreferenceProvider + ?Sized>(&mut self, provider: &mut P) -> Result<()> {
        let (x1, x2) = self
            .pending_pair()?
            .ok_or_else(|| Error::Session("session already finished".into()))?;
        match provider.judge(&x1, &x2)? {
            Judgment::Outcome(o) => self.answer(o),
            Judgment::Stop if self.phase == Phase::Running => self.finish(),
            Judgment::Stop => Err(Error::Provider("stop requested during initialization".into())),
        }
    }

    /// Drive the session to completion.
    pub fn run_to_end<P: PreferenceProvider + ?Sized>(&mut self, provider: &mut P) -> Result<()> {
        while self.phase != Phase::Finished {
            self.step(provider)?;
        }
        Ok(())
    }
}

/// Full preference-guided run: ladder, then `budget` acquisition steps.
pub fn run<P: PreferenceProvider + ?Sized>(
    domain: &Domain,
    provider: &mut P,
    budget: usize,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<Session> {
    run_strategy(domain, provider, budget, config, seed, Strategy::Preference)
}

/// Same ladder and update rule, challengers drawn uniformly at random.
pub fn random_search_run<P: PreferenceProvider + ?Sized>(
    domain: &Domain,
    provider: &mut P,
    budget: usize,
    seed: u64,
) -> Result<Session> {
    run_strategy(domain, provider, budget, &OptimizerConfig::default(), seed, Strategy::Random)
}

pub fn run_strategy<P: PreferenceProvider + ?Sized>(
    domain: &Domain,
    provider: &mut P,
    budget: usize,
    config: &OptimizerConfig,
    seed: u64,
    strategy: Strategy,
) -> Result<Session> {
    let mut s = Session::new(SessionHeader {
        domain: domain.clone(),
        strategy,
        budget,
        seed,
        config: config.clone(),
    })?;
    s.run_to_end(provider)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::test_function;
    use PreferenceOutcome::*;

    fn header(dims: usize, strategy: Strategy, budget: usize) -> SessionHeader {
        SessionHeader {
            domain: Domain::unit(dims).unwrap(),
            strategy,
            budget,
            seed: 11,
            config: OptimizerConfig::default(),
        }
    }

    fn always(o: PreferenceOutcome) -> impl FnMut(&[f64], &[f64]) -> Result<Judgment> {
        move |_: &[f64], _: &[f64]| Ok(Judgment::Outcome(o))
    }

    #[test]
    fn ladder_length_and_winner() {
        let mut s = Session::new(header(4, Strategy::Random, 0)).unwrap();
        assert_eq!(s.ladder().len(), 9);
        s.run_to_end(&mut always(FirstGreater)).unwrap();
        assert_eq!(s.answered(), 8);
        assert_eq!(s.incumbent(), &s.ladder()[0][..]);

        let mut s = Session::new(header(4, Strategy::Random, 0)).unwrap();
        s.run_to_end(&mut always(FirstLess)).unwrap();
        assert_eq!(s.incumbent(), &s.ladder()[8][..]);
    }

    #[test]
    fn tie_keeps_and_less_swaps_incumbent() {
        let mut s = Session::new(header(1, Strategy::Random, 3)).unwrap();
        s.run_to_end(&mut always(Equivalent)).unwrap();
        assert_eq!(s.incumbent(), &s.ladder()[0][..]);
        assert_eq!(s.answered(), 2 + 3);

        let mut s = Session::new(header(1, Strategy::Random, 3)).unwrap();
        s.step(&mut always(FirstGreater)).unwrap();
        s.step(&mut always(FirstGreater)).unwrap();
        let (_, challenger) = s.pending_pair().unwrap().unwrap();
        s.answer(FirstLess).unwrap();
        assert_eq!(s.incumbent(), &challenger[..]);
    }

    #[test]
    fn finished_session_refuses_steps() {
        let mut s = Session::new(header(1, Strategy::Random, 1)).unwrap();
        s.run_to_end(&mut always(FirstGreater)).unwrap();
        assert_eq!(s.phase(), Phase::Finished);
        assert_eq!(s.completion(), Some(CompletionReason::Budget));
        assert!(s.step(&mut always(FirstGreater)).is_err());
        assert!(s.pending_pair().unwrap().is_none());
    }

    #[test]
    fn finish_rules() {
        let mut s = Session::new(header(1, Strategy::Random, 5)).unwrap();
        s.pending_pair().unwrap();
        assert!(s.finish().is_err());
        s.run_to_end(&mut |_: &[f64], _: &[f64]| Ok(Judgment::Stop)).unwrap_err();
        s.answer(FirstGreater).unwrap();
        s.answer(FirstGreater).unwrap_err(); // nothing pending yet
        s.pending_pair().unwrap();
        s.answer(FirstGreater).unwrap();
        s.finish().unwrap();
        s.finish().unwrap();
        assert_eq!(s.completion(), Some(CompletionReason::UserStop));
        assert_eq!(s.iteration(), 0);
    }

    #[test]
    fn records_lead_with_the_incumbent() {
        let mut oracle = ToleranceOracle::new(test_function("sphere").unwrap(), 0.0).unwrap();
        let domain = oracle.function.domain.clone();
        let s = random_search_run(&domain, &mut oracle, 30, 4).unwrap();
        let mut inc = s.ladder()[0].clone();
        let mut last = f64::INFINITY;
        for r in s.dataset().records() {
            assert_eq!(r.first, inc);
            if r.outcome == FirstLess {
                inc = r.second.clone();
            }
            let norm = crate::oracles::sphere(&inc);
            assert!(norm <= last);
            last = norm;
        }
        assert_eq!(s.answered(), 2 * 2 + 30);
    }

    #[test]
    fn transcript_round_trip() {
        let mut oracle = ToleranceOracle::new(test_function("sphere").unwrap(), 0.05).unwrap();
        let mut s = Session::new(SessionHeader {
            domain: oracle.function.domain.clone(),
            ..header(2, Strategy::Random, 6)
        })
        .unwrap();
        for _ in 0..7 {
            s.step(&mut oracle).unwrap();
        }
        s.finish().unwrap();
        let mut buf = Vec::new();
        for line in s.transcript() {
            write_transcript_line(&mut buf, line).unwrap();
        }
        let lines = read_transcript(&buf[..]).unwrap();
        assert_eq!(lines, s.transcript());
        let again = Session::replay(s.header.clone(), &lines).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn replay_rejects_tampered_transcripts() {
        let mut s = Session::new(header(1, Strategy::Random, 2)).unwrap();
        s.run_to_end(&mut always(Equivalent)).unwrap();
        let mut lines = s.transcript().to_vec();
        if let TranscriptLine::Answer(e) = &mut lines[1] {
            e.x2[0] += 1e-3;
        }
        assert!(Session::replay(s.header.clone(), &lines).is_err());
    }

    #[test]
    fn strategy_names() {
        assert_eq!("random".parse::<Strategy>().unwrap(), Strategy::Random);
        assert_eq!(Strategy::Preference.to_string(), "preference");
        assert!("blinded".parse::<Strategy>().is_err());
    }
}

//! Request and response bodies.

use prefopt::optimizer::{CompletionReason, Strategy};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyRequest {
    Preference,
    Random,
    /// Picked by the server and hidden until reveal.
    #[default]
    Blinded,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CreateSession {
    pub budget: usize,
    #[serde(default)]
    pub strategy: StrategyRequest,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Put the incumbent on a random side instead of always on the right.
    #[serde(default)]
    pub randomize_slots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub session: String,
    /// 1-based index of the comparison being asked.
    pub iteration: usize,
    pub budget: usize,
    /// Comparisons in the initial ladder, which precede the budget.
    pub initial: usize,
    pub left: String,
    pub right: String,
    pub can_finish: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub pair: PairView,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// The left image is preferred.
    Left,
    Right,
    Tie,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SubmitPreference {
    /// The `iteration` of the pair being answered; a stale value is rejected.
    pub iteration: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub phase: String,
    /// Budgeted comparisons answered.
    pub iteration: usize,
    pub budget: usize,
    /// All comparisons answered, ladder included.
    pub answered: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<CompletionReason>,
    pub incumbent: Vec<f64>,
    pub incumbent_image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SessionSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GalleryView {
    pub images: Vec<String>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CreatePlan {
    pub budget: usize,
    #[serde(default = "one")]
    pub sessions_per_strategy: usize,
    #[serde(default = "yes")]
    pub blinded: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanView {
    pub id: String,
    pub budget: usize,
    pub blinded: bool,
    /// Session ids, in an order that does not reveal their strategies.
    pub sessions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<Strategy>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub left: Strategy,
    pub right: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalView {
    pub plan: String,
    pub left: String,
    pub right: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal: Option<Reveal>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct FinalVerdict {
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

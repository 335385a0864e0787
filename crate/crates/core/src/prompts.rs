//! The five prompt templates and their renderers.
//!
//! Template text is kept as printed, with slot markers like `{dialog_context}`
//! substituted at render time. Sections that an ablation turns off are left
//! out of the rendered prompt entirely.

use crate::model::{Attribute, AttributeVector, Feedback, NormCategory};
use crate::providers::{CallOptions, ChatRequest, PromptKind};

pub const ATTRIBUTE_EXTRACTION_SYSTEM: &str = r#"You are a social interaction analyst specializing in pragmatics and social norm recognition in conversation.

Given the dialogue below, extract a structured representation of the **speaker's behavior in the final utterance**, focusing on how it performs or aligns with one or more socially recognizable norms such as persuasion, request, refusal, apology, etc.

The extracted structure will be used to retrieve similar conversational behaviors, so it must **accurately reflect the speech act's social function, nuance, and framing**, in a way that can **disambiguate between multiple norm categories**.

=> If the utterance aligns with **more than one norm** (e.g., 'doing request' + 'doing thanks'), your attributes should reflect that layered action.

Return the following 4 **pragmatic attributes**:

```json
{
  "CommunicativeIntent": "<Describe *all communicative goals* the speaker is pursuing -- both primary and secondary. Use norm language if applicable (e.g., persuading, requesting info, refusing, finalizing). Prioritize intent differentiation across norms.>",
  "InterpersonalFraming": "<How the speaker *relates to the listener*: formality, power dynamics, face-work (saving/threatening), emotional stance, or alignment. Make distinctions like deferential vs. assertive, affiliative vs. distancing -- as they cue norm categories.>",
  "LinguisticFeatures": "<Detail rhetorical strategies used to *signal or mitigate norm performance*: hedges, indirectness, modality (e.g., 'might', 'should'), discourse markers, politeness formulas, etc. Capture evidence that helps distinguish one norm from another.>",
  "ContextualTriggersAndConstraints": "<What about the broader dialogue or situation shapes how this norm is performed? Include role relations, timing, known stakes, prior acts, social rules or expectations that constrain the speaker's behavior.>"
}
```"#;

pub const ATTRIBUTE_EXTRACTION_USER: &str = "### Dialogue Context:\n{dialog_context}";

pub const WINDOW_DESIGN_SYSTEM: &str = r#"You are an expert in pragmatics and social norms.
Given the dialogue history below, analyze the communicative function and social dynamic of the most recent turn.
Please return your response in the following JSON format:
```
{
    "CommunicativeIntent": "<short summary of what the speaker is trying to achieve>",
    "InterpersonalTension": "<comment on any social tension, repair, dominance, submission, etc.>",
    "LikelyNormCategory": "<the most likely norm involved, e.g., 'doing apology', 'doing greeting', etc.>",
    "ContextDependenceScore": <float between 0.0 and 1.0, where higher means more dependent on prior context>
}
```"#;

pub const WINDOW_DESIGN_USER: &str = "### Dialogue History:\n{dialog_history}";

pub const RERANK_SYSTEM: &str = r#"You are a pragmatics and discourse analysis expert.
You are given:
-- A brief snippet of dialogue (usually the last 1-2 turns of a conversation),
-- A structured interpretation of that snippet, for attribute {attribute_name},
-- A list of candidate norm definitions retrieved from a semantic search system.
Your task is to rerank the candidates from most to least relevant, based on how well each one aligns with the communicative behavior expressed in the dialogue as represented by the extracted attributes."#;

pub const RERANK_USER: &str = r#"### Dialogue Context:
"{dialog_context}"

### Extracted Norm Attributes:
{attributes}

### Retrieved Candidate Norm Descriptions:
{doc_entries}

### Instructions:
-- Compare the overall meaning and function of each candidate to the extracted attributes.
-- Pay special attention to the Communicative Intent, but also consider whether the interpersonal stance, language choices, and situational framing match.
-- Your goal is to rank which candidate best captures the type of norm being enacted in the given dialogue.

### Output Format:
{
  "Ranking": [3, 1, 2, 4, 5],
  "TopJustification": "..."
}
Only return the JSON object."#;

pub const FEEDBACK_SYSTEM: &str = r#"You are a pragmatic analyst helping to generate interpretive context for understanding turn-by-turn norms in conversation.
Given the most recent utterance in a dialogue, along with its predicted norm(s) and surrounding dialogue context, your task is to produce **feedback that captures the communicative force and social trajectory** of the current moment.
This feedback will be used to inform the interpretation of the *next* utterance -- by helping identify what norms or responses are socially relevant or expected, and what social constraints are already in play.

### INPUT:
- `DialogueHistory`: The full dialogue history leading up to the latest utterance (short or long).
- `LastUtterance`: The final utterance by the most recent speaker.
- `PredictedNorms`: One or more social norms inferred from the last utterance. One or more of:
  ['Doing persuasion', 'Doing request', 'Doing requesting information', 'Doing criticism', 'Doing thanks', 'Doing greeting', 'Doing admiration', 'Doing disagreement', 'Doing refusing a request', 'Doing apology', 'Doing taking leave', 'Doing granting a request', 'Doing finalizing negotiation/deal', 'No Norm']

### OUTPUT FORMAT:
{
  "SituatedSummary": "<Explain what is being socially performed in the last utterance, and how it connects to the unfolding dialogue -- including tone, intentions, relational shifts, or embedded expectations.>",
  "NormImplications": "<What social norm(s) are being enacted or invoked? Why? Include cues from wording, context, or sequencing.>",
  "NextTurnExpectation": "<What types of responses -- in terms of social action or stance -- are made relevant by this utterance? What does it *invite*, *pressure*, or *allow* the next speaker to do (or not do)? Mention if there's a power dynamic, politeness constraint, emotional charge, etc.>"
}"#;

pub const FEEDBACK_USER: &str = "### Dialogue History\n{dialoghistory}\n\n### Last Utterance\n{lastutterance}\n\n### Predicted Norms\n{predictednorms}";

pub const DETECTION_SYSTEM: &str = r#"You are an expert in analyzing conversations to identify underlying social norms. Your task is to classify all applicable social norm categories (minimum 2, maximum upto 5) reflected in the **latest utterance** of a given dialogue using both **explicit and implicit cues** of social interaction.
### Norm Categories:
{norm_categories}
### Task Instructions:
1. Use the **entire dialogue history** and the **retrieved context from RAG** to interpret the **social intent** behind the **latest utterance**.
   - Consider both **explicit speech acts** (e.g., asking, refusing) and **implicit or indirect signals** (e.g., persuading by justification, criticizing through description).
   - Understand the progression and structure of the dialogue to reveal the **pragmatic function** of the utterance.
2. Identify **all relevant norm categories** the latest utterance satisfies from the list (maximum 3).
   - Choose norms based on **intent**, **emotion**, **relational context**, **dialogue progression**, and **linguistic cues**, even when **indirectly expressed**.
   - Include **weak or moderate instances** of norms (e.g., subtle persuasion or soft disagreement), not just overt ones.
3. For each norm category:
   - Assess whether the utterance reflects **Adherence** or **Violation** of that norm.
4. Evaluate whether the **retriever context** is relevant to the **overall set of predicted norms**:
   - If **Relevant**, use it to support a more confident classification.
   - If **Not Relevant**, ignore the retriever context and use your own reasoning about social norms.
5. If **no identifiable norm** is present in the utterance:
   - Return only one entry:
     - Norm Category: `No Norm`
     - Status: `Violation`
6. Provide a **natural language confidence level** for your prediction:
   - Choose from: `High`, `Medium`, or `Low`
   - Justify your confidence based on clarity of social intent, surface and hidden patterns, and context fit.

### Output Format in JSON:
```json
{
  "latest_utterance": "<copy of the utterance>",
  "predicted_norms": [
    {"norm_category": "<norm category 1>", "status": "<Adherence or Violation>"},
    {"norm_category": "<norm category 2>", "status": "<Adherence or Violation>"},
    {"norm_category": "<norm category 3>", "status": "<Adherence or Violation>"}
  ],
  "retriever_context_relevance": "<Relevant / Not Relevant>",
  "confidence_level": "<High / Medium / Low>",
  "explanation": "<Justify the norm predictions, referencing how context and implicit cues shaped the interpretation>"
}
```"#;

/// Heading of the retrieved-context section of the detection prompt.
pub const CONTEXT_HEADING: &str =
    "### Relevant Context from RAG on 4 key attributes that are used to capture the underlying norm:";
/// Heading of the dialogue-attribute section of the detection prompt.
pub const ATTRIBUTES_HEADING: &str = "### Dialogue Attributes:";
/// Heading of the prior-feedback section of the detection prompt.
pub const FEEDBACK_HEADING: &str = "### Prior Feedback:";
pub const DIALOG_HEADING: &str = "### Dialog:";

/// A rendered system/user prompt pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub kind: PromptKind,
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn request(&self, opts: &CallOptions) -> ChatRequest {
        opts.request(self.kind, self.system.clone(), self.user.clone())
    }
}

pub fn norm_category_list() -> String {
    NormCategory::ALL
        .iter()
        .map(|c| format!("- {}", c.label()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Attribute-extraction prompt; the same template serves chunks and dialogue
/// windows, only the content slot differs.
pub fn attribute_extraction(content: &str) -> Prompt {
    Prompt {
        kind: PromptKind::AttributeExtraction,
        system: ATTRIBUTE_EXTRACTION_SYSTEM.to_string(),
        user: ATTRIBUTE_EXTRACTION_USER.replace("{dialog_context}", content),
    }
}

pub fn window_design(history: &str) -> Prompt {
    Prompt {
        kind: PromptKind::WindowDesign,
        system: WINDOW_DESIGN_SYSTEM.to_string(),
        user: WINDOW_DESIGN_USER.replace("{dialog_history}", history),
    }
}

/// One `Key: value` line per attribute, the focused one marked.
pub fn attribute_block(attrs: &AttributeVector, focus: Option<Attribute>) -> String {
    Attribute::ALL
        .iter()
        .map(|a| {
            let mark = if Some(*a) == focus { " [FOCUS]" } else { "" };
            format!("{}{}: {}", a.key(), mark, attrs.text(*a))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Numbered candidate list, 1-based.
pub fn doc_entries<S: AsRef<str>>(candidates: &[S]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {}", i + 1, c.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn rerank<S: AsRef<str>>(attribute: Attribute, dialog_context: &str, attrs: &AttributeVector, candidates: &[S]) -> Prompt {
    let user = RERANK_USER
        .replace("{dialog_context}", dialog_context)
        .replace("{attributes}", &attribute_block(attrs, Some(attribute)))
        .replace("{doc_entries}", &doc_entries(candidates));
    Prompt {
        kind: PromptKind::Rerank,
        system: RERANK_SYSTEM.replace("{attribute_name}", attribute.key()),
        user,
    }
}

pub fn feedback(history: &str, last_utterance: &str, predicted: &[NormCategory]) -> Prompt {
    let history = if history.trim().is_empty() {
        "(no earlier turns)"
    } else {
        history
    };
    let norms = predicted
        .iter()
        .map(|c| c.label())
        .collect::<Vec<_>>()
        .join("\n");
    Prompt {
        kind: PromptKind::Feedback,
        system: FEEDBACK_SYSTEM.to_string(),
        user: FEEDBACK_USER
            .replace("{dialoghistory}", history)
            .replace("{lastutterance}", last_utterance)
            .replace("{predictednorms}", &norms),
    }
}

pub fn feedback_block(fb: &Feedback) -> String {
    format!(
        "SituatedSummary: {}\nNormImplications: {}\nNextTurnExpectation: {}",
        fb.situated_summary, fb.norm_implications, fb.next_turn_expectation
    )
}

/// Inputs of the detection prompt. `None` sections are omitted.
#[derive(Debug, Clone, Copy)]
pub struct DetectionInputs<'a> {
    pub context: Option<&'a str>,
    pub attributes: Option<&'a AttributeVector>,
    pub prior_feedback: Option<&'a Feedback>,
    pub dialog: &'a str,
}

pub fn detection(inputs: DetectionInputs<'_>) -> Prompt {
    let mut sections = Vec::new();
    if let Some(ctx) = inputs.context {
        sections.push(format!("{CONTEXT_HEADING}\n{ctx}"));
    }
    if let Some(attrs) = inputs.attributes {
        sections.push(format!("{ATTRIBUTES_HEADING}\n{}", attribute_block(attrs, None)));
    }
    if let Some(fb) = inputs.prior_feedback {
        sections.push(format!("{FEEDBACK_HEADING}\n{}", feedback_block(fb)));
    }
    sections.push(format!("{DIALOG_HEADING}\n{}", inputs.dialog));
    Prompt {
        kind: PromptKind::NormDetection,
        system: DETECTION_SYSTEM.replace("{norm_categories}", &norm_category_list()),
        user: sections.join("\n\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs() -> AttributeVector {
        AttributeVector::from_texts(["ci".into(), "if".into(), "lf".into(), "ctc".into()]).unwrap()
    }

    #[test]
    fn no_unfilled_slots_after_rendering() {
        let fb = Feedback::new("s", "n", "e").unwrap();
        let prompts = [
            attribute_extraction("x"),
            window_design("x"),
            rerank(Attribute::LinguisticFeatures, "x", &attrs(), &["a", "b"]),
            feedback("h", "l", &[NormCategory::Thanks]),
            detection(DetectionInputs {
                context: Some("c"),
                attributes: Some(&attrs()),
                prior_feedback: Some(&fb),
                dialog: "d",
            }),
        ];
        for p in prompts {
            for slot in [
                "{dialog_context}",
                "{dialog_history}",
                "{attribute_name}",
                "{attributes}",
                "{doc_entries}",
                "{dialoghistory}",
                "{lastutterance}",
                "{predictednorms}",
                "{norm_categories}",
            ] {
                assert!(!p.system.contains(slot) && !p.user.contains(slot), "{slot} left in {:?}", p.kind);
            }
        }
    }

    #[test]
    fn detection_lists_all_categories() {
        let p = detection(DetectionInputs {
            context: None,
            attributes: None,
            prior_feedback: None,
            dialog: "d",
        });
        for c in NormCategory::ALL {
            assert!(p.system.contains(c.label()));
        }
        assert!(!p.user.contains(CONTEXT_HEADING));
        assert!(!p.user.contains(FEEDBACK_HEADING));
        assert!(p.user.ends_with("### Dialog:\nd"));
    }

    #[test]
    fn rerank_names_the_attribute() {
        let p = rerank(Attribute::InterpersonalFraming, "ctx", &attrs(), &["first", "second"]);
        assert!(p.system.contains("for attribute InterpersonalFraming,"));
        assert!(p.user.contains("InterpersonalFraming [FOCUS]: if"));
        assert!(p.user.contains("[1] first\n[2] second"));
    }
}

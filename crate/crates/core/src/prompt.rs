//! Prompt templates and rendering.
//!
//! Templates are plain text with `{placeholder}` slots; rendering is literal
//! substitution, no escaping. The wording is pinned down to punctuation:
//! golden-file tests compare full rendered prompts, so any edit here is a
//! deliberate, visible change.

use std::fmt;

use crate::error::{Error, Result};

/// Placeholder names a template may use.
pub const PLACEHOLDERS: [&str; 5] = ["ptkb", "ctx", "utterance", "phi", "response"];

/// The seven prompt templates used across pipeline variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    /// Rewrite the last user question into one self-contained query.
    Qr,
    /// Answer the last user question (used standalone by answer-as-query).
    AqAnswer,
    /// Generate up to phi search queries from the dialogue directly.
    Mq4cs,
    /// First message of the answer-first variant; same text as `AqAnswer`.
    Mq4csAnsStage1,
    /// Follow-up asking for queries that would retrieve the model's answer.
    Mq4csAnsStage2,
    /// One-shot variant of `Mq4cs` for models that need an example.
    Mq4csFewshot,
    /// Two-shot variant of the answer-first query generation.
    Mq4csAnsFewshot,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Qr,
        TemplateName::AqAnswer,
        TemplateName::Mq4cs,
        TemplateName::Mq4csAnsStage1,
        TemplateName::Mq4csAnsStage2,
        TemplateName::Mq4csFewshot,
        TemplateName::Mq4csAnsFewshot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::Qr => "qr",
            TemplateName::AqAnswer => "aq_answer",
            TemplateName::Mq4cs => "mq4cs",
            TemplateName::Mq4csAnsStage1 => "mq4cs_ans_stage1",
            TemplateName::Mq4csAnsStage2 => "mq4cs_ans_stage2",
            TemplateName::Mq4csFewshot => "mq4cs_fewshot",
            TemplateName::Mq4csAnsFewshot => "mq4cs_ans_fewshot",
        }
    }

    pub fn body(&self) -> &'static str {
        match self {
            TemplateName::Qr => QR_BODY,
            TemplateName::AqAnswer | TemplateName::Mq4csAnsStage1 => ANSWER_BODY,
            TemplateName::Mq4cs => MQ4CS_BODY,
            TemplateName::Mq4csAnsStage2 => ANS_STAGE2_BODY,
            TemplateName::Mq4csFewshot => MQ4CS_FEWSHOT_BODY,
            TemplateName::Mq4csAnsFewshot => ANS_FEWSHOT_BODY,
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const QR_BODY: &str = "\
# Instruction:
I will give you a conversation between a user and a system. Also, I will give you some background information about the user. You should rewrite the last question of the user into a self-contained query.

# Background knowledge: {ptkb}
# Context: {ctx}
# Please rewrite the following user question: {utterance}

# Re-written query:";

const ANSWER_BODY: &str = "\
# Instruction:
I will give you a conversation between a user and a system. Also, I will give you some background information about the user. You should answer the last question of the user. Please remember that your answer to the last question of the user shouldn't be more than 200 words.

# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}

# Response:";

const MQ4CS_BODY: &str = "\
# Instruction:
I will give you a conversation between a user and a system and some background information about the user. Imagine you want to find the answer to the last user question by searching Google. You should generate the unique search queries that you need to search in Google. Please don't generate more than {phi} queries and write each query in one line.

# Background knowledge: {ptkb}

# Context: {ctx}
# User question: {utterance}

# Generated queries:";

const ANS_STAGE2_BODY: &str = "\
# Can you generate the unique queries that can be used for retrieving your previous answer to the user? (Please write each query in one line and don't generate more than {phi} queries)

# Generated queries:";

const MQ4CS_FEWSHOT_BODY: &str = "\
# Instruction:
Please generate self-contained unique questions that should be searched in a search engine to answer the user's LAST utterance. (Please write each query in one line and don't generate more than {phi} queries)

# Example 1
# Background knowledge: 1: My sister is following the `West Worl', but I don't like it, 2: Johnny Depp made the Pirates of the Caribbean excellent, 3: My friend suggested to me the `Now you see me' movie, it was fantastic, 4: I went on a biking trip last year, 5: I usually like to drink coffee in the morning, 6: I watched the proposal and enjoyed it. Ryan Reynolds is my favorite!, 7: The `Friends' series was terrific, Jennifer Aniston and Lisa Kudrow were the best stars!
# Context:
user: Can you tell me what the Golden Globe Awards is?
user: What is it?
user: Is it different from the Oscars?
user: What is the difference between them?
user: No, I mean Academy Awards and Golden Globe Awards.
user: What else?
system: The Hollywood Foreign Press Association, a group of 93 journalists from around 55 countries, are the committee for the Globes. On the contrary, the voting body of the Academy Awards; the Academy of Motion Picture Arts and Sciences (AMPAS) consists of 6,000 voting members. The Golden Globes Award recognizes the excellence of artists in both the film and television industry in the United States as well as in other countries. However, Academy Awards only recognize the excellence of artists in their cinematic achievements, primarily in Hollywood or the American film industry. There are 25 categories for Golden Globes; 14 in motion pictures and 11 in television. At present, the Academy Awards has 24 categories. Usually, the Golden Globes ceremony is held in January of each year while the Academy Awards ceremony is held in February of each year.
# User question: Did any of my favorite actresses win any of them?
# Generated queries:
1. Has Jennifer Aniston ever won a Golden Globe or an Academy Award?
2. Has Lisa Kudrow ever won a Golden Globe or an Academy Award?
3. Did Jennifer Aniston win any awards for 'The Morning Show'?
4. List of Golden Globe winners in Best Actress in a Television Series – Musical or Comedy category for 1998 and 2003.

# Example 2
# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}
# Generated queries:";

const ANS_FEWSHOT_BODY: &str = "\
# Instruction:
Generate the unique queries to search them in a search engine to retrieving the last response of the system to the user. (Please write each query in one line and don't generate more than {phi} queries)

# Example 1
# Background knowledge: 1: My sister is following the `West Worl', but I don't like it, 2: Johnny Depp made the Pirates of the Caribbean excellent, 3: My friend suggested to me the `Now you see me' movie, ...
# Context:
user: Can you tell me what the Golden Globe Awards is?
user: What is it?
user: Is it different from the Oscars?
user: What is the difference between them?
user: No, I mean Academy Awards and Golden Globe Awards.
user: What else?
system: The Hollywood Foreign Press Association, a group of 93 journalists from around 55 countries, ....
# User question: Did any of my favorite actresses win any of them?
# System response: Yes, both Jennifer Aniston and Lisa Kudrow, who you enjoyed in the Friends series, have won Golden Globe Awards. Jennifer Aniston won the Golden Globe in 2003 for Best Actress in a Television Series – Musical or Comedy for Friends. Lisa Kudrow also won this category in 1998 for the same series. Aniston's performance in The Morning Show also earned her another nomination in 2020. On the other hand, neither of the actresses have won an Academy Award as of yet.
# Generated queries:
1. Has Jennifer Aniston ever won a Golden Globe or an Academy Award?
2. Has Lisa Kudrow ever won a Golden Globe or an Academy Award?
3. List of Golden Globe winners in Best Actress in a Television Series – Musical or Comedy category for 1998 and 2003.
4. Did Jennifer Aniston win any awards for `The Morning Show'?

# Example 2
# Background knowledge: 1: I am diagnosed with diabetes type 2, 2: My husband is a light drinker, 3: We have pasta twice a week! It is my favorite dish,....
# Context:
user: Can you tell me about different types of alcoholic drinks?
user: What is the difference between them?
user: No, the other category.
user: Ok. Can you compare base liquors and the third one?
user: Interesting, but I was mainly looking for ingredients and flavor! FYI, I don't drink myself.
user: How is it different from Liqueurs?
user: Why are their names so similar?
user: How about the percentage of alcohol?
system: Liquor is hard (the hardest) alcohol product made by distillation, often clocking ....
# User question: Which types are suitable for my husband?
# System response: Considering your husband is a light drinker, he might enjoy lower-alcohol content beverages such as wine, beer, or certain liqueurs. Specifically, since he enjoys seafood like salmon, white wine such as chardonnay, pinot grigio, or a light-bodied beer might be a good match. However, always remember to consume alcohol in moderation, and if there are any health concerns, consult with a physician.
# Generated queries:
1. Which alcoholic beverages are suitable for a light drinker who likes salmon?
2. What types of alcohol go well with seafood?
3. What types of alcohol are preferred for people who drink lightly?
4. What alcoholic drinks have lower alcohol content?
5. Recommendations for alcoholic beverages for light drinkers.

# Example 3
# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}
# System response: {response}
# Generated queries:";

/// Substitutes `{name}` slots in `template` from `values`.
///
/// Every placeholder that occurs in the template must have a value (empty
/// values are fine); a missing one fails with its name. Extra values are
/// ignored. Substitution is literal, so value text is never re-scanned.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = template.to_string();
    for name in PLACEHOLDERS {
        let slot = format!("{{{name}}}");
        if !out.contains(&slot) {
            continue;
        }
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no value for template placeholder {slot}"))
            })?;
        out = out.replace(&slot, value);
    }
    Ok(out)
}

/// Renders a named template; see [`render_template`].
pub fn render_prompt(name: TemplateName, values: &[(&str, &str)]) -> Result<String> {
    render_template(name.body(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_values() -> Vec<(&'static str, &'static str)> {
        vec![
            ("ptkb", "1: likes tea"),
            ("ctx", "user: earlier question"),
            ("utterance", "current question?"),
            ("phi", "3"),
            ("response", "an earlier answer"),
        ]
    }

    #[test]
    fn every_template_renders_without_leftover_slots() {
        for name in TemplateName::ALL {
            let text = render_prompt(name, &full_values()).unwrap();
            for p in PLACEHOLDERS {
                assert!(
                    !text.contains(&format!("{{{p}}}")),
                    "{name} left {{{p}}} unrendered"
                );
            }
        }
    }

    #[test]
    fn substitution_is_literal() {
        let text = render_prompt(TemplateName::Qr, &full_values()).unwrap();
        assert!(text.contains("# Background knowledge: 1: likes tea"));
        assert!(text.contains("# Please rewrite the following user question: current question?"));
        assert!(text.ends_with("# Re-written query:"));
    }

    #[test]
    fn empty_value_keeps_the_header() {
        let values = vec![("ptkb", ""), ("ctx", ""), ("utterance", "q?")];
        let text = render_prompt(TemplateName::Qr, &values).unwrap();
        assert!(text.contains("# Background knowledge: \n"));
    }

    #[test]
    fn missing_placeholder_is_named_in_the_error() {
        let values = vec![("ptkb", "x"), ("ctx", "y"), ("utterance", "z")];
        let err = render_prompt(TemplateName::Mq4cs, &values).unwrap_err();
        assert!(err.to_string().contains("{phi}"), "got: {err}");
    }

    #[test]
    fn extra_values_are_ignored() {
        let mut values = full_values();
        values.push(("unused", "whatever"));
        assert!(render_prompt(TemplateName::Mq4csAnsStage2, &values).is_ok());
    }

    #[test]
    fn answer_stage_shares_the_answer_template() {
        assert_eq!(
            TemplateName::AqAnswer.body(),
            TemplateName::Mq4csAnsStage1.body()
        );
        assert_ne!(TemplateName::AqAnswer.as_str(), TemplateName::Mq4csAnsStage1.as_str());
    }

    #[test]
    fn query_budget_appears_verbatim() {
        for name in [
            TemplateName::Mq4cs,
            TemplateName::Mq4csAnsStage2,
            TemplateName::Mq4csFewshot,
            TemplateName::Mq4csAnsFewshot,
        ] {
            let text = render_prompt(name, &[("ptkb", ""), ("ctx", ""), ("utterance", ""), ("phi", "5"), ("response", "")]).unwrap();
            assert!(
                text.contains("don't generate more than 5 queries"),
                "{name} does not pin the query budget"
            );
        }
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<&str> = TemplateName::ALL.iter().map(|n| n.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), TemplateName::ALL.len());
    }
}

pub const RELATIONSHIP_TEMPLATE: &str = "Two people want to have a conversation about the topic below. Please choose from the options below the most appropriate relationship between the two speakers in the conversation. Don't recommend other options. You are responding without comment. Also, your answer is limited to the options below.\n\nTopic: {Episode Event Description}\n\nOption:\n1. Husband and Wife\n2. Child and Parent\n3. Co-workers\n4. Classmates\n5. Student and Teacher\n6. Patient and Doctor\n7. Employee and Boss\n8. Athlete and Coach\n9. Neighbors\n10. Mentee and Mentor";

pub const CONVERSATION_TEMPLATE: &str = "The following is a next conversation between {Relationship}.\n\nThe {Relationship} took turns talking about the below topics:\n{Session N-1 Event Description}\n\n{Time Intervals Between Session N-1 and N} the last topic, this is the topic {Relationship} are talking about today:\n{Session N Event Description}\n\n{Speaker A}'s statements start with [{Speaker A}] and {Speaker B}'s statements start with [{Speaker B}]. {Speaker A} and {Speaker B} talk about today's topic, and if necessary, continue the conversation by linking it to the conversation topic of the past. Complete the conversation in exactly that format.";

/// Opening session: same header and speaker instructions, no earlier topic.
pub const CONVERSATION_FIRST_SESSION_TEMPLATE: &str = "The following is a next conversation between {Relationship}.\n\nThis is the topic {Relationship} are talking about today:\n{Session N Event Description}\n\n{Speaker A}'s statements start with [{Speaker A}] and {Speaker B}'s statements start with [{Speaker B}]. {Speaker A} and {Speaker B} talk about today's topic. Complete the conversation in exactly that format.";

pub const SUMMARY_TEMPLATE: &str = "You're a summarizer. Choose the most important events from a given conversation and summarize them in two sentences.\n\n[Conversation]\n\n{Session Dialogues}\n[Summary]";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_list_has_ten_numbered_lines() {
        let options = RELATIONSHIP_TEMPLATE.split("Option:\n").nth(1).unwrap();
        let lines: Vec<&str> = options.lines().collect();
        assert_eq!(lines.len(), 10);
        for (i, line) in lines.iter().enumerate() {
            assert!(line.starts_with(&format!("{}. ", i + 1)));
        }
    }
}

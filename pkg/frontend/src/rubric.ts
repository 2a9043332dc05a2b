// Rubric definitions bundled with the UI.
//
// The service deliberately never ships codebook text with packet items, so
// the reviewer-facing definitions live here as static data. Lookup is
// case-insensitive; labels outside the rubric render without a definition.

const DEFINITIONS: Record<string, string> = {
  "EMOTIONAL SUPPORT":
    "Affirming affect, normalizing struggle, conveying empathy or " +
    "encouragement that supports motivation/engagement (e.g., reassurance, " +
    "acknowledgement of effort).",
  "GIVING PRAISE":
    "Positive evaluative feedback on performance or effort (e.g., \"Great " +
    "job,\" \"Nice approach\"), typically tied to the student's recent action.",
  "ERROR CORRECTION":
    "Directly identifies an error and supplies the correct form/answer or " +
    "explicitly negates an incorrect claim.",
  "PROVIDING EXPLANATION":
    "Explains a concept, step, or rationale; may include brief " +
    "worked-example style demonstrations or step-by-step reasoning.",
  "EXEMPLIFYING":
    "Introduces a concrete example or counterexample to illustrate a " +
    "concept or procedure; focuses on the illustrative instance.",
  "GIVING HINT":
    "A minimal cue or nudge (keyword, next-step pointer) intended to move " +
    "the solution forward without full rationale.",
  "PROMPTING":
    "An open or leading question that advances the problem-solving process " +
    "(e.g., \"What's your next step?\" \"How could you isolate x?\").",
  "PROBING STUDENT THINKING":
    "Asks the student to articulate reasoning, justify steps, or compare " +
    "alternatives (e.g., \"Why does that rule apply here?\").",
  "REVOICING":
    "Restates or summarizes the student's idea to check understanding or " +
    "highlight key elements of the contribution.",
  "SCAFFOLDING":
    "Provides structured support that breaks the task into subgoals, offers " +
    "ordered guidance, or fades support across turns.",
  "USING VISUAL CUES":
    "Directs attention to or introduces diagrams/notations/highlighting or " +
    "other layout cues to support understanding.",
};

export function definitionFor(label: string): string | null {
  return DEFINITIONS[label.trim().toUpperCase()] ?? null;
}
